"""Score encoding circuits on a dataset and derive ground-truth label sets.

Each circuit's fidelity kernel is handed to three kernel classifiers
(SVC, GPC, KRC); the circuit's score is the best of the three test
accuracies. Label sets are then built from the nine scores, either as a
single best circuit or as every circuit within ``epsilon`` of the best.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg
from sklearn.exceptions import ConvergenceWarning
from sklearn.svm import SVC

from . import qsim
from .datagen import PreprocessedDataset

log = logging.getLogger(__name__)

CLASSIFIERS = ("SVC", "GPC", "KRC")
SINGLE = "SINGLE-BEST-OUT"
TIED = "TIED-BEST-OUT"
LABEL_MODES = (SINGLE, TIED)
DEFAULT_EPSILON = 0.01

SVC_C = 1.0
SVC_TOL = 1e-6
SVC_MAX_ITER = 1_000_000
KRC_ALPHA = 1.0
GPC_TOL = 1e-6
GPC_MAX_ITER = 100
JITTER = 1e-8
JITTER_TRIES = 3
# slack on the epsilon comparison so accuracies exactly epsilon apart are kept
TIE_SLACK = 1e-12


class ClassifierError(RuntimeError):
    """A kernel classifier could not produce predictions."""


def _pm(y: np.ndarray) -> np.ndarray:
    """Map {0,1} labels to {-1,+1}."""
    y = np.asarray(y)
    if not set(np.unique(y)) <= {0, 1}:
        raise ValueError("labels must be 0/1")
    return np.where(y == 1, 1.0, -1.0)


def _from_sign(f: np.ndarray) -> np.ndarray:
    # sign(0) resolves to the positive class
    return (np.asarray(f) >= 0).astype(int)


def accuracy(pred: np.ndarray, y: np.ndarray) -> float:
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty test set")
    return float(np.mean(np.asarray(pred) == y))


def majority_accuracy(y_train: np.ndarray, y_test: np.ndarray) -> float:
    """Accuracy of predicting the training majority class (0 on a tie)."""
    majority = int(np.argmax(np.bincount(np.asarray(y_train, int), minlength=2)))
    return accuracy(np.full(len(y_test), majority), y_test)


# ---------------------------------------------------------------------------
# SVC


@dataclass
class SVCResult:
    predictions: np.ndarray
    alpha: np.ndarray  # dual variables, one per training point
    bias: float
    converged: bool


def svc_fit_predict(K_train: np.ndarray, y: np.ndarray, K_test: np.ndarray, C: float = SVC_C) -> SVCResult:
    """Soft-margin SVM dual on a precomputed kernel (libsvm via scikit-learn)."""
    y = np.asarray(y, int)
    clf = SVC(kernel="precomputed", C=C, tol=SVC_TOL, max_iter=SVC_MAX_ITER)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        clf.fit(K_train, y)
    converged = not any(issubclass(w.category, ConvergenceWarning) for w in caught)
    alpha = np.zeros(len(y))
    alpha[clf.support_] = np.abs(clf.dual_coef_[0])
    pred = clf.predict(np.atleast_2d(K_test)).astype(int)
    return SVCResult(pred, alpha, float(clf.intercept_[0]), converged)


def svc_dual_objective(alpha: np.ndarray, K: np.ndarray, y: np.ndarray) -> float:
    """W(alpha) = sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij (to be maximized)."""
    s = _pm(y)
    v = alpha * s
    return float(alpha.sum() - 0.5 * v @ K @ v)


def svc_train_predict(K_train: np.ndarray, y: np.ndarray, K_test: np.ndarray, y_test: np.ndarray | None = None):
    """Test accuracy when ``y_test`` is given, otherwise predicted labels.

    Non-convergence scores as majority-class accuracy.
    """
    res = svc_fit_predict(K_train, y, K_test)
    if not res.converged:
        raise ClassifierError("SVC did not converge within the iteration cap")
    return res.predictions if y_test is None else accuracy(res.predictions, y_test)


# ---------------------------------------------------------------------------
# GPC (Laplace approximation, logistic likelihood)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _cholesky_with_jitter(M: np.ndarray) -> np.ndarray:
    for attempt in range(JITTER_TRIES + 1):
        try:
            return linalg.cholesky(M + attempt * JITTER * np.eye(len(M)), lower=True)
        except linalg.LinAlgError:
            continue
    raise ClassifierError(f"Cholesky failed after {JITTER_TRIES} jitter attempts")


@dataclass
class LaplaceMode:
    f: np.ndarray  # posterior mode of the latent function
    grad_log_lik: np.ndarray
    iterations: int
    converged: bool


def gpc_laplace_mode(K: np.ndarray, y: np.ndarray, tol: float = GPC_TOL, max_iter: int = GPC_MAX_ITER) -> LaplaceMode:
    """Newton iterations for the latent mode, in the numerically stable B = I + W^1/2 K W^1/2 form.

    Stops when the gradient of the log posterior, grad log p(y|f) - K^-1 f,
    has norm <= ``tol``.
    """
    K = np.asarray(K, float)
    s = _pm(y)
    t = (s + 1.0) / 2.0
    n = len(s)
    f = np.zeros(n)
    a = np.zeros(n)
    grad = t - _sigmoid(f)
    for it in range(1, max_iter + 1):
        pi = _sigmoid(f)
        W = pi * (1.0 - pi)
        sW = np.sqrt(W)
        B = np.eye(n) + sW[:, None] * K * sW[None, :]
        L = _cholesky_with_jitter(B)
        grad = t - pi
        b = W * f + grad
        c = linalg.solve_triangular(L, sW * (K @ b), lower=True)
        a = b - sW * linalg.solve_triangular(L.T, c, lower=False)
        f = K @ a
        grad = t - _sigmoid(f)
        if np.linalg.norm(grad - a) <= tol:
            return LaplaceMode(f, grad, it, True)
    return LaplaceMode(f, grad, max_iter, False)


def gpc_log_posterior(f: np.ndarray, K: np.ndarray, y: np.ndarray) -> float:
    """Unnormalized log posterior log p(y|f) - 1/2 f^T K^-1 f."""
    s = _pm(y)
    return float(-np.sum(np.logaddexp(0.0, -s * f)) - 0.5 * f @ np.linalg.solve(K, f))


def gpc_train_predict(K_train: np.ndarray, y: np.ndarray, K_test: np.ndarray, y_test: np.ndarray | None = None):
    mode = gpc_laplace_mode(K_train, y)
    if not mode.converged:
        log.debug("GPC Newton iterations hit the cap (%d)", GPC_MAX_ITER)
    latent = np.atleast_2d(K_test) @ mode.grad_log_lik
    pred = _from_sign(latent)
    return pred if y_test is None else accuracy(pred, y_test)


# ---------------------------------------------------------------------------
# KRC


def krc_coefficients(K: np.ndarray, y: np.ndarray, alpha: float = KRC_ALPHA) -> np.ndarray:
    """Solve (K + alpha I) a = y with targets in {-1, +1}."""
    K = np.asarray(K, float)
    s = _pm(y)
    for attempt in range(JITTER_TRIES + 1):
        M = K + (alpha + attempt * JITTER) * np.eye(len(K))
        try:
            return linalg.solve(M, s, assume_a="sym")
        except (linalg.LinAlgError, ValueError):
            continue
    raise ClassifierError("kernel ridge system is singular")


def krc_train_predict(K_train: np.ndarray, y: np.ndarray, K_test: np.ndarray, y_test: np.ndarray | None = None, alpha: float = KRC_ALPHA):
    a = krc_coefficients(K_train, y, alpha)
    pred = _from_sign(np.atleast_2d(K_test) @ a)
    return pred if y_test is None else accuracy(pred, y_test)


_TRAIN_PREDICT = {"SVC": svc_train_predict, "GPC": gpc_train_predict, "KRC": krc_train_predict}


# ---------------------------------------------------------------------------
# circuit scoring


@dataclass
class CircuitScore:
    circuit_id: str
    per_classifier_accuracy: dict[str, float]
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def best_accuracy(self) -> float:
        return max(self.per_classifier_accuracy.values())

    @property
    def mean_accuracy(self) -> float:
        """Diagnostic only; labels use the maximum."""
        return float(np.mean(list(self.per_classifier_accuracy.values())))


def score_kernels(K_train: np.ndarray, y_train: np.ndarray, K_test: np.ndarray, y_test: np.ndarray, circuit_id: str = "") -> CircuitScore:
    accs: dict[str, float] = {}
    failures: dict[str, str] = {}
    for name in CLASSIFIERS:
        try:
            accs[name] = float(_TRAIN_PREDICT[name](K_train, y_train, K_test, y_test))
        except (ClassifierError, ValueError, linalg.LinAlgError) as exc:
            accs[name] = majority_accuracy(y_train, y_test)
            failures[name] = str(exc)
            log.warning("%s/%s failed (%s); scored as majority class", circuit_id, name, exc)
    return CircuitScore(circuit_id, accs, failures)


def score_circuits(d: PreprocessedDataset, circuits: Sequence[qsim.EncodingCircuit] | None = None) -> list[CircuitScore]:
    """Train-Gram and test-by-train Gram per circuit, then the three classifiers."""
    circuits = qsim.all_circuits() if circuits is None else circuits
    out = []
    for c in circuits:
        K_train = qsim.gram(c, d.train_features).entries
        K_test = qsim.gram(c, d.test_features, d.train_features).entries
        out.append(score_kernels(K_train, d.train_labels, K_test, d.test_labels, c.id))
    return out


# ---------------------------------------------------------------------------
# label sets


@dataclass(frozen=True)
class LabelSet:
    circuits: tuple[str, ...]
    mode: str
    epsilon: float = 0.0

    def __post_init__(self):
        if not self.circuits:
            raise ValueError("label set must be nonempty")
        if self.mode not in LABEL_MODES:
            raise ValueError(f"unknown label mode {self.mode!r}")
        if self.mode == SINGLE and len(self.circuits) != 1:
            raise ValueError("SINGLE-BEST-OUT label sets hold exactly one circuit")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    def __contains__(self, circuit_id) -> bool:
        return circuit_id in self.circuits

    def __len__(self) -> int:
        return len(self.circuits)


def _canonical(ids) -> tuple[str, ...]:
    rank = {c: i for i, c in enumerate(qsim.CIRCUIT_IDS)}
    return tuple(sorted(ids, key=lambda c: (rank.get(c, len(rank)), c)))


def label(scores: Sequence[CircuitScore] | dict[str, float], mode: str = TIED, epsilon: float = DEFAULT_EPSILON, seed: int = 0) -> LabelSet:
    """Best circuit (SINGLE, exact ties drawn with ``seed``) or all circuits within ``epsilon`` (TIED)."""
    best = {s.circuit_id: s.best_accuracy for s in scores} if not isinstance(scores, dict) else dict(scores)
    if not best:
        raise ValueError("no scores to label")
    top = max(best.values())
    if mode == SINGLE:
        winners = _canonical(c for c, a in best.items() if a == top)
        pick = winners[int(np.random.default_rng(seed).integers(len(winners)))]
        if len(winners) > 1:
            log.info("label tie at %.4f among %s; drew %s", top, "|".join(winners), pick, extra={"event": "label_tie"})
        return LabelSet((pick,), SINGLE, 0.0)
    if mode == TIED:
        if epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        members = _canonical(c for c, a in best.items() if a >= top - epsilon - TIE_SLACK)
        return LabelSet(members, TIED, float(epsilon))
    raise ValueError(f"unknown label mode {mode!r}")


# ---------------------------------------------------------------------------
# score tables

SCORE_COLUMNS = ["dataset_name", "circuit_id", "acc_svc", "acc_gpc", "acc_krc", "acc_best"]


def write_scores_csv(table: dict[str, list[CircuitScore]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_COLUMNS)
        for name, scores in table.items():
            for s in scores:
                acc = s.per_classifier_accuracy
                w.writerow([name, s.circuit_id] + [repr(acc[k]) for k in CLASSIFIERS] + [repr(s.best_accuracy)])


def read_scores_csv(path: str | Path) -> dict[str, list[CircuitScore]]:
    table: dict[str, list[CircuitScore]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SCORE_COLUMNS:
            raise ValueError(f"{path}: unexpected score header {reader.fieldnames}")
        for row in reader:
            accs = {k: float(row[f"acc_{k.lower()}"]) for k in CLASSIFIERS}
            table.setdefault(row["dataset_name"], []).append(CircuitScore(row["circuit_id"], accs))
    return table

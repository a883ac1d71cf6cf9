"""Meta-learning recommender over complexity features.

A meta-record pairs one dataset's complexity vector with the circuit
scores measured on it. Fourteen base classifiers learn to map complexity
features to the best circuit; they are combined either by majority vote
(MV) or by picking the single best (classifier, feature mode) pair with
leave-one-out cross-validation (LOOCV). Recommendations are Top-k lists
and a recommendation is a hit when it shares a circuit with the record's
label set.
"""
from __future__ import annotations

import csv
import logging
import pickle
import threading
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed
from sklearn.ensemble import AdaBoostClassifier, BaggingClassifier, GradientBoostingClassifier, RandomForestClassifier
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression
from sklearn.naive_bayes import GaussianNB
from sklearn.neighbors import KNeighborsClassifier, NearestCentroid
from sklearn.multiclass import OneVsRestClassifier
from sklearn.neural_network import MLPClassifier
from sklearn.svm import SVC
from sklearn.tree import DecisionTreeClassifier

from . import evaluator as ev
from .complexity import ALL_IN, METRIC_IDS, ComplexityVector, mode_metrics
from .datagen import dataset_seed
from .qsim import CIRCUIT_IDS

log = logging.getLogger(__name__)

CLASSIFIER_IDS = ("DT", "RF", "E-GB", "AB", "Bg", "SVM-L", "SVM-R", "SVM-S", "MLP-1", "MLP-3", "KNN", "NC", "NB", "LR")
MV = "MV"
LOOCV = "LOOCV"
FORMAT_VERSION = 1
KNN_K = 5
TEST_FRACTION = 0.2
_RANK = {c: i for i, c in enumerate(CIRCUIT_IDS)}


class TrainingCounter:
    """Thread-safe count of base-classifier trainings."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.trainings = 0

    def add(self, n: int = 1) -> None:
        with self._lock:
            self.trainings += n

    def reset(self) -> None:
        with self._lock:
            self.trainings = 0


TRAINING_COUNTER = TrainingCounter()


# ---------------------------------------------------------------------------
# meta records


@dataclass
class MetaRecord:
    dataset_name: str
    features: ComplexityVector
    scores: list[ev.CircuitScore]
    label_set: ev.LabelSet
    target: str  # training target: the single best circuit

    def x(self, feature_mode: str) -> np.ndarray:
        return self.features.as_array(mode_metrics(feature_mode))


def make_records(
    features: dict[str, ComplexityVector],
    scores: dict[str, list[ev.CircuitScore]],
    label_mode: str = ev.TIED,
    epsilon: float = ev.DEFAULT_EPSILON,
    seed: int = 0,
) -> list[MetaRecord]:
    """Join feature and score tables by dataset name.

    The training target is the SINGLE-BEST-OUT label for every label mode;
    its tie draw uses a per-dataset seed so both modes share targets.
    """
    missing = sorted(set(scores) - set(features))
    if missing:
        raise ValueError(f"datasets without features: {missing[:5]}")
    records = []
    for name in scores:
        s = scores[name]
        lab_seed = dataset_seed(seed, name)
        target = ev.label(s, ev.SINGLE, seed=lab_seed).circuits[0]
        lab = ev.label(s, label_mode, epsilon, seed=lab_seed)
        records.append(MetaRecord(name, features[name], s, lab, target))
    return records


def relabel(records: Sequence[MetaRecord], label_mode: str, epsilon: float = ev.DEFAULT_EPSILON, seed: int = 0) -> list[MetaRecord]:
    """Same records and targets under another label mode."""
    out = []
    for r in records:
        lab = ev.label(r.scores, label_mode, epsilon, seed=dataset_seed(seed, r.dataset_name))
        if label_mode == ev.SINGLE:
            lab = ev.LabelSet((r.target,), ev.SINGLE)
        out.append(MetaRecord(r.dataset_name, r.features, r.scores, lab, r.target))
    return out


def meta_columns() -> list[str]:
    return ["dataset_name", *METRIC_IDS, "label_mode", "epsilon", "label_set", "target"] + [f"acc_{c}" for c in CIRCUIT_IDS]


def write_meta_csv(records: Sequence[MetaRecord], path: str | Path) -> None:
    """One row per record: features, pipe-separated label set, training target and best accuracy per circuit."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(meta_columns())
        for r in records:
            best = {s.circuit_id: s.best_accuracy for s in r.scores}
            w.writerow(
                [r.dataset_name]
                + [repr(float(r.features.values[m])) for m in METRIC_IDS]
                + [r.label_set.mode, repr(r.label_set.epsilon), "|".join(r.label_set.circuits), r.target]
                + [repr(best[c]) for c in CIRCUIT_IDS]
            )


def read_meta_csv(path: str | Path) -> list[MetaRecord]:
    """Inverse of write_meta_csv; label sets are checked against the accuracies."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != meta_columns():
            raise ValueError(f"{path}: not a meta-dataset file (unexpected header)")
        for line, row in enumerate(reader, start=2):
            try:
                name = row["dataset_name"]
                feats = ComplexityVector({m: float(row[m]) for m in METRIC_IDS}, name)
                accs = {c: float(row[f"acc_{c}"]) for c in CIRCUIT_IDS}
                lab = ev.LabelSet(tuple(row["label_set"].split("|")), row["label_mode"], float(row["epsilon"]))
                target = row["target"]
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{line}: {exc}") from None
            top = max(accs.values())
            if target not in CIRCUIT_IDS or accs[target] != top:
                raise ValueError(f"{path}:{line}: target {target!r} is not a best circuit")
            if lab.mode == ev.TIED and lab != ev.label(accs, ev.TIED, lab.epsilon):
                raise ValueError(f"{path}:{line}: label set does not follow from the accuracies")
            if lab.mode == ev.SINGLE and lab.circuits != (target,):
                raise ValueError(f"{path}:{line}: SINGLE label differs from the target")
            scores = [ev.CircuitScore(c, {"best": accs[c]}) for c in CIRCUIT_IDS]
            records.append(MetaRecord(name, feats, scores, lab, target))
    if not records:
        raise ValueError(f"{path}: empty meta-dataset")
    return records


def design_matrix(records: Sequence[MetaRecord], feature_mode: str) -> tuple[np.ndarray, np.ndarray]:
    X = np.vstack([r.x(feature_mode) for r in records])
    y = np.array([r.target for r in records], dtype=object)
    return X, y


# ---------------------------------------------------------------------------
# base classifiers


_SVM_KERNELS = {"SVM-L": "linear", "SVM-R": "rbf", "SVM-S": "sigmoid"}


def make_classifier(cid: str, seed: int = 0, n_train: int | None = None):
    """Unfitted estimator with the pinned hyperparameters.

    Library defaults fill the rest: E-GB uses depth-3 trees, learning rate
    0.1 and log-loss; AB boosts depth-1 stumps with SAMME; MLPs train with
    Adam (learning rate 1e-3, batch 200, at most 200 epochs); SVMs are
    one-vs-rest over the circuits seen in training. KNN shrinks k to the
    training size when fewer than 5 records are available.
    """
    if cid == "DT":
        return DecisionTreeClassifier(max_depth=None, random_state=seed)
    if cid == "RF":
        return RandomForestClassifier(n_estimators=10, random_state=seed)
    if cid == "E-GB":
        return GradientBoostingClassifier(n_estimators=100, random_state=seed)
    if cid == "AB":
        return AdaBoostClassifier(n_estimators=50, random_state=seed)
    if cid == "Bg":
        return BaggingClassifier(n_estimators=10, random_state=seed)
    if cid in _SVM_KERNELS:
        return OneVsRestClassifier(SVC(kernel=_SVM_KERNELS[cid], C=1.0, random_state=seed))
    if cid == "MLP-1":
        return MLPClassifier(hidden_layer_sizes=(500,), random_state=seed)
    if cid == "MLP-3":
        return MLPClassifier(hidden_layer_sizes=(100, 100, 100), random_state=seed)
    if cid == "KNN":
        k = KNN_K if n_train is None else max(1, min(KNN_K, n_train))
        return KNeighborsClassifier(n_neighbors=k)
    if cid == "NC":
        return NearestCentroid(metric="euclidean")
    if cid == "NB":
        return GaussianNB()
    if cid == "LR":
        return LogisticRegression(max_iter=1000, random_state=seed)
    raise ValueError(f"unknown classifier {cid!r}")


class ConstantClassifier:
    """Fallback for a single-class training set: always predicts that class."""

    degenerate = True

    def __init__(self, label):
        self.label = label
        self.classes_ = np.array([label], dtype=object)

    def predict(self, X):
        return np.full(len(np.atleast_2d(X)), self.label, dtype=object)


@dataclass
class BaseClassifier:
    id: str
    model: object
    degenerate: bool = False

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.model.predict(np.atleast_2d(X)), dtype=object)

    def class_scores(self, X) -> np.ndarray:
        """Per-circuit scores, shape (n, 9); -inf marks circuits the model cannot rank."""
        return class_scores(self, np.atleast_2d(X))


def train_base(cid: str, X: np.ndarray, y: np.ndarray, seed: int = 0, counter: TrainingCounter | None = TRAINING_COUNTER) -> BaseClassifier:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=object)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError(f"inconsistent shapes {X.shape} and {y.shape}")
    if counter is not None:
        counter.add(1)
    classes = np.unique(y)
    if len(classes) < 2:
        log.warning("%s: single-class training set, using a constant predictor", cid)
        return BaseClassifier(cid, ConstantClassifier(classes[0]), degenerate=True)
    model = make_classifier(cid, seed, n_train=len(y))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        warnings.simplefilter("ignore", UserWarning)
        model.fit(X, y)
    return BaseClassifier(cid, model)


def class_scores(clf: BaseClassifier, X: np.ndarray) -> np.ndarray:
    """9-way score matrix in canonical circuit order; the top score is the predicted circuit.

    Margins for SVMs, negative centroid distance for NC, negative distance to
    the closest member of each class (after the vote share) for KNN, class
    probabilities otherwise. Circuits absent from training, or with zero
    probability, get -inf.
    """
    n = len(X)
    out = np.full((n, len(CIRCUIT_IDS)), -np.inf)
    model = clf.model
    if isinstance(model, ConstantClassifier):
        out[:, _RANK[model.label]] = 1.0
        return out
    classes = [str(c) for c in model.classes_]
    cols = [_RANK[c] for c in classes]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        if isinstance(model, OneVsRestClassifier):
            s = model.decision_function(X)
            if s.ndim == 1:  # two classes: positive margin means classes_[1]
                s = np.column_stack([-s, s])
        elif isinstance(model, NearestCentroid):
            s = -np.linalg.norm(X[:, None, :] - model.centroids_[None, :, :], axis=2)
        elif isinstance(model, KNeighborsClassifier):
            share = model.predict_proba(X)
            fit_X = model._fit_X
            fit_y = np.asarray(model.classes_)[model._y]
            dist = np.linalg.norm(X[:, None, :] - fit_X[None, :, :], axis=2)
            nearest = np.column_stack([dist[:, fit_y == c].min(axis=1) for c in model.classes_])
            # vote share first, closeness breaks ties; distances are finite so share dominates
            s = share * 1e6 - nearest / (1.0 + nearest)
        else:
            s = model.predict_proba(X)
            s = np.where(s > 0, s, -np.inf)
    out[:, cols] = s
    # keep the ranking head consistent with predict()
    pred = clf.predict(X)
    for i, p in enumerate(pred):
        top = out[i].max()
        out[i, _RANK[str(p)]] = top + 1.0 if np.isfinite(top) else 1.0
    return out


# ---------------------------------------------------------------------------
# voting and recommendations


@dataclass
class Recommendation:
    ranked: list[str]
    votes: dict[str, float]
    tie: bool = False

    def top(self, k: int) -> list[str]:
        return self.ranked[:k]


def _rank(scores: dict[str, float]) -> list[str]:
    return sorted(scores, key=lambda c: (-scores[c], _RANK[c]))


def vote_counts(predictions: Sequence[str]) -> dict[str, int]:
    votes: dict[str, int] = {}
    for p in predictions:
        votes[str(p)] = votes.get(str(p), 0) + 1
    return votes


def majority_vote(ensemble: Sequence[BaseClassifier], x: np.ndarray) -> tuple[str, dict[str, int], bool]:
    """Winning circuit, vote map (nonzero entries) and whether the top count was tied."""
    votes = vote_counts(m.predict(np.atleast_2d(x))[0] for m in ensemble)
    ranked = _rank(votes)
    tie = len(ranked) > 1 and votes[ranked[0]] == votes[ranked[1]]
    return ranked[0], votes, tie


def _check_k(k: int) -> None:
    if not 1 <= k <= len(CIRCUIT_IDS):
        raise ValueError(f"k must be in [1, {len(CIRCUIT_IDS)}], got {k}")


def recommend_from_votes(votes: dict[str, float], k: int = len(CIRCUIT_IDS)) -> Recommendation:
    _check_k(k)
    positive = {c: v for c, v in votes.items() if v > 0}
    ranked = _rank(positive)
    tie = len(ranked) > 1 and positive[ranked[0]] == positive[ranked[1]]
    return Recommendation(ranked[:k], positive, tie)


def recommend_from_scores(scores: np.ndarray, k: int = len(CIRCUIT_IDS)) -> Recommendation:
    _check_k(k)
    s = {c: float(v) for c, v in zip(CIRCUIT_IDS, scores) if np.isfinite(v)}
    ranked = _rank(s)
    return Recommendation(ranked[:k], s, len(ranked) > 1 and s[ranked[0]] == s[ranked[1]])


def hit(rec: Recommendation | Sequence[str], truth: ev.LabelSet) -> bool:
    ranked = rec.ranked if isinstance(rec, Recommendation) else list(rec)
    return bool(set(ranked) & set(truth.circuits))


# ---------------------------------------------------------------------------
# evaluation


def meta_split(groups: Sequence[str], seed: int, test_fraction: float = TEST_FRACTION) -> tuple[np.ndarray, np.ndarray]:
    """Stratified split; largest-remainder quotas with seeded remainder ties."""
    groups = np.asarray(groups, dtype=object).astype(str)
    n = len(groups)
    rng = np.random.default_rng(seed)
    n_test = int(np.floor(test_fraction * n + 0.5))
    keys, inverse, counts = np.unique(groups, return_inverse=True, return_counts=True)
    exact = counts * n_test / n
    quota = np.floor(exact).astype(int)
    short = n_test - quota.sum()
    if short:
        order = np.lexsort((rng.permutation(len(keys)), -(exact - quota)))
        quota[order[:short]] += 1
    test = np.concatenate([rng.permutation(np.flatnonzero(inverse == g))[:q] for g, q in enumerate(quota)])
    test = np.sort(test.astype(int))
    train = np.setdiff1d(np.arange(n), test)
    return train, test


def train_ensemble(X: np.ndarray, y: np.ndarray, seed: int = 0, classifiers: Sequence[str] = CLASSIFIER_IDS, counter=TRAINING_COUNTER) -> list[BaseClassifier]:
    return [train_base(c, X, y, seed, counter) for c in classifiers]


def ensemble_recommendations(ensemble: Sequence[BaseClassifier], X: np.ndarray) -> list[Recommendation]:
    preds = np.column_stack([m.predict(X) for m in ensemble])
    recs = [recommend_from_votes(vote_counts(row)) for row in preds]
    for rec in recs:
        if rec.tie:
            log.info("vote tie %s; %s wins by circuit order", rec.votes, rec.ranked[0], extra={"event": "vote_tie"})
    return recs


@dataclass
class RunPredictions:
    seed: int
    test_index: np.ndarray
    recommendations: list[Recommendation]


@dataclass
class MVResult:
    runs: list[RunPredictions]
    per_run: dict[int, list[float]]  # k -> hit rate per run

    def mean(self, k: int = 1) -> float:
        return float(np.mean(self.per_run[k]))

    @property
    def mean_accuracy(self) -> float:
        return self.mean(1)


def mv_predictions(meta: Sequence[MetaRecord], R: int = 10, seed: int = 0, feature_mode: str = ALL_IN, counter=TRAINING_COUNTER) -> list[RunPredictions]:
    """R seeded 80/20 splits stratified by training target; full vote rankings on each test part."""
    if R < 1:
        raise ValueError("R must be >= 1")
    if len(meta) < 10:
        raise ValueError("MV evaluation needs at least 10 records")
    X, y = design_matrix(meta, feature_mode)
    runs = []
    split_seed = seed
    for _ in range(R):
        while True:
            train, test = meta_split(y, split_seed)
            if len(set(y[train])) >= 2:
                break
            log.warning("split seed %d gave a single-class train set; resampling", split_seed)
            split_seed += 1
        ensemble = train_ensemble(X[train], y[train], split_seed, counter=counter)
        runs.append(RunPredictions(split_seed, test, ensemble_recommendations(ensemble, X[test])))
        split_seed += 1
    return runs


def hit_rates(runs: Sequence[RunPredictions], meta: Sequence[MetaRecord], ks: Sequence[int] = (1, 2, 3)) -> dict[int, list[float]]:
    out = {k: [] for k in ks}
    for run in runs:
        for k in ks:
            hits = [hit(rec.top(k), meta[i].label_set) for i, rec in zip(run.test_index, run.recommendations)]
            out[k].append(float(np.mean(hits)))
    return out


def mv_evaluate(meta: Sequence[MetaRecord], R: int = 10, seed: int = 0, feature_mode: str = ALL_IN, ks: Sequence[int] = (1, 2, 3)) -> MVResult:
    runs = mv_predictions(meta, R, seed, feature_mode)
    return MVResult(runs, hit_rates(runs, meta, ks))


def _loocv_task(cid: str, feature_mode: str, X: np.ndarray, y: np.ndarray, seed: int) -> tuple[list[np.ndarray], int]:
    counter = TrainingCounter()
    n = len(y)
    scores = []
    for i in range(n):
        mask = np.arange(n) != i
        clf = train_base(cid, X[mask], y[mask], seed, counter)
        scores.append(class_scores(clf, X[i : i + 1])[0])
    return scores, counter.trainings


@dataclass
class LOOCVResult:
    scores: dict[tuple[str, str], list[np.ndarray]]  # (classifier, mode) -> per-record 9-way scores
    classifiers: list[str]
    modes: list[str]

    def recommendations(self, cid: str, mode: str, k: int = len(CIRCUIT_IDS)) -> list[Recommendation]:
        return [recommend_from_scores(s, k) for s in self.scores[(cid, mode)]]

    def accuracy(self, meta: Sequence[MetaRecord], k: int = 1) -> dict[tuple[str, str], float]:
        return {
            key: float(np.mean([hit(recommend_from_scores(s, k), r.label_set) for s, r in zip(vals, meta)]))
            for key, vals in self.scores.items()
        }

    def winner(self, meta: Sequence[MetaRecord], k: int = 1) -> tuple[str, str, float]:
        """Best (classifier, mode); ties go to classifier order, then mode order."""
        acc = self.accuracy(meta, k)
        best = None
        for m_idx, mode in enumerate(self.modes):
            for c_idx, cid in enumerate(self.classifiers):
                key = (-acc[(cid, mode)], c_idx, m_idx)
                if best is None or key < best[0]:
                    best = (key, cid, mode)
        return best[1], best[2], -best[0][0]


def loocv_evaluate(
    meta: Sequence[MetaRecord],
    modes: Sequence[str] = (ALL_IN,),
    classifiers: Sequence[str] = CLASSIFIER_IDS,
    seed: int = 0,
    n_jobs: int = 1,
    counter=TRAINING_COUNTER,
) -> LOOCVResult:
    """N leave-one-out folds for every (classifier, mode) pair; workers report their training counts."""
    if len(meta) < 3:
        raise ValueError("LOOCV needs at least 3 records")
    tasks = []
    for mode in modes:
        X, y = design_matrix(meta, mode)
        for cid in classifiers:
            tasks.append((cid, mode, X, y))
    results = Parallel(n_jobs=n_jobs)(delayed(_loocv_task)(cid, mode, X, y, seed) for cid, mode, X, y in tasks)
    scores = {}
    for (cid, mode, _, _), (s, count) in zip(tasks, results):
        scores[(cid, mode)] = s
        if counter is not None:
            counter.add(count)
    return LOOCVResult(scores, list(classifiers), list(modes))


def cost_ratio(R: int, H: int, N: int) -> tuple[float, tuple[int, int]]:
    """MV over LOOCV training cost: (R*H)/(H*N) = R/N, with both raw counts."""
    if min(R, H, N) <= 0:
        raise ValueError("R, H and N must be positive")
    return R / N, (R * H, H * N)


# ---------------------------------------------------------------------------
# final model


@dataclass
class Recommender:
    strategy: str
    feature_mode: str
    members: list[BaseClassifier]
    label_mode: str = ev.TIED
    epsilon: float = ev.DEFAULT_EPSILON
    global_seed: int = 0
    classes: tuple[str, ...] = CIRCUIT_IDS
    format_version: int = FORMAT_VERSION
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.strategy == MV and len(self.members) != len(CLASSIFIER_IDS):
            raise ValueError(f"MV recommender needs {len(CLASSIFIER_IDS)} members")
        if self.strategy == LOOCV and len(self.members) != 1:
            raise ValueError("LOOCV recommender has exactly one member")
        if self.strategy not in (MV, LOOCV):
            raise ValueError(f"unknown strategy {self.strategy!r}")

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            pickle.dump(self, fh)

    @staticmethod
    def load(path: str | Path) -> "Recommender":
        with open(path, "rb") as fh:
            obj = pickle.load(fh)
        if not isinstance(obj, Recommender):
            raise ValueError(f"{path} does not hold a Recommender")
        if obj.format_version != FORMAT_VERSION:
            raise ValueError(f"{path}: model format {obj.format_version}, expected {FORMAT_VERSION}")
        return obj


def train_final(meta: Sequence[MetaRecord], strategy: str = MV, feature_mode: str = ALL_IN, classifier: str | None = None, seed: int = 0, **info) -> Recommender:
    """MV: all 14 on the full meta-dataset. LOOCV: the given winning classifier only."""
    X, y = design_matrix(meta, feature_mode)
    label_mode = meta[0].label_set.mode if meta else ev.TIED
    epsilon = meta[0].label_set.epsilon if meta else ev.DEFAULT_EPSILON
    if strategy == MV:
        members = train_ensemble(X, y, seed)
    elif strategy == LOOCV:
        if classifier is None:
            raise ValueError("LOOCV training needs the winning classifier")
        members = [train_base(classifier, X, y, seed)]
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return Recommender(strategy, feature_mode, members, label_mode, epsilon, seed, info=dict(info))


def recommend_topk(f: Recommender, x: ComplexityVector, k: int = 3) -> Recommendation:
    """Top-k circuits for one dataset; never touches the quantum simulator."""
    _check_k(k)
    wanted = mode_metrics(f.feature_mode)
    if x.metrics != wanted:
        raise ValueError(f"feature vector holds {x.metrics[:3]}..., recommender expects mode {f.feature_mode}")
    row = x.as_array(wanted)[None, :]
    if f.strategy == MV:
        return recommend_from_votes(vote_counts(m.predict(row)[0] for m in f.members), k)
    return recommend_from_scores(f.members[0].class_scores(row)[0], k)

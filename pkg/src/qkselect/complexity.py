"""Classical data-complexity descriptors used as meta-features.

All measures follow the complexity-oriented convention (higher means a
harder problem where the measure is bounded). Inputs are min-max scaled
and the samples put in a canonical order before any measure is computed,
so every value is independent of the row order of the dataset.
"""
from __future__ import annotations

import csv
import hashlib
import warnings
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.exceptions import ConvergenceWarning
from sklearn.svm import SVC

from .datagen import LabeledDataset, minmax_scale

METRIC_IDS = (
    "F1", "F1v", "F2", "F3", "F4",
    "L1", "L2", "L3",
    "N1", "N2", "N3", "N4", "T1", "LSC",
    "Density", "ClsCoef", "Hubs",
    "T2", "T3", "T4",
    "C1", "C2",
    "IntDim", "Kolmogorov",
)  # fmt: skip

ALL_IN = "ALL-IN"

EPSILON_GRAPH = 0.15
PCA_VARIANCE = 0.95
ZLIB_LEVEL = 9
INTERPOLATION_SEED = 1234


@dataclass
class ComplexityVector:
    values: dict[str, float]
    dataset_name: str = ""

    @property
    def metrics(self) -> list[str]:
        return list(self.values)

    def as_array(self, metrics=None) -> np.ndarray:
        metrics = self.metrics if metrics is None else metrics
        return np.array([self.values[m] for m in metrics], dtype=float)

    def __len__(self) -> int:
        return len(self.values)


def mode_metrics(mode: str) -> list[str]:
    """Metric ids selected by a feature mode: ``ALL-IN`` or ``SINGLE-IN:<metric>``."""
    if mode == ALL_IN:
        return list(METRIC_IDS)
    metric = mode.split(":", 1)[1] if mode.startswith("SINGLE-IN:") else mode
    if metric not in METRIC_IDS:
        raise ValueError(f"unknown feature mode {mode!r}")
    return [metric]


def single_in(metric: str) -> str:
    if metric not in METRIC_IDS:
        raise ValueError(f"unknown metric {metric!r}")
    return f"SINGLE-IN:{metric}"


ALL_MODES = [ALL_IN] + [single_in(m) for m in METRIC_IDS]


# ---------------------------------------------------------------------------
# shared preparation


def prepare(d: LabeledDataset) -> tuple[np.ndarray, np.ndarray]:
    """Min-max scale and sort samples lexicographically (features, then label)."""
    if not d.is_binary():
        raise ValueError(f"{d.name}: complexity measures need binary 0/1 labels")
    return prepare_arrays(d.features, d.labels)


def prepare_arrays(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y).astype(int)
    if X.shape[0] != len(y) or not np.all(np.isfinite(X)):
        raise ValueError("features must be finite with one row per label")
    if not set(np.unique(y)) <= {0, 1}:
        raise ValueError("complexity measures need binary 0/1 labels")
    X, _, _ = minmax_scale(X)
    order = np.lexsort((y,) + tuple(X[:, j] for j in reversed(range(X.shape[1]))))
    return X[order], y[order]


def _raw(d, y, labels_required: bool = True) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(d, LabeledDataset):
        return d.features, d.labels
    if y is None:
        if labels_required:
            raise ValueError("labels are required with a raw feature matrix")
        y = np.zeros(len(d), dtype=int)
    return np.asarray(d, dtype=float), np.asarray(y)


def _symmetrized(fns, X_raw, y_raw) -> dict[str, float]:
    """Average each measure over both label orientations.

    Tie-breaks on duplicated points (and solver round-off) can depend on
    which class is called 1; averaging the two canonical orientations
    makes every value exactly invariant to a label swap.
    """
    y_raw = np.asarray(y_raw).astype(int)
    a: dict[str, float] = {}
    b: dict[str, float] = {}
    for out, labels in ((a, y_raw), (b, 1 - y_raw)):
        X, y = prepare_arrays(X_raw, labels)
        D = cdist(X, X) if any(fn in (_neighborhood, _network) for fn in fns) else None
        for fn in fns:
            out.update(fn(X, y, D=D) if fn in (_neighborhood, _network) else fn(X, y))
    return {k: 0.5 * (a[k] + b[k]) for k in a}


def _require_two_classes(y):
    if len(np.unique(y)) < 2:
        raise ValueError("complexity measures need both classes present")


def _nearest(D: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index and distance of the closest allowed column per row (lowest index on ties)."""
    M = np.where(mask, D, np.inf)
    idx = np.argmin(M, axis=1)
    return idx, M[np.arange(len(M)), idx]


def _class_seed(X: np.ndarray) -> int:
    digest = hashlib.sha256(np.ascontiguousarray(X).tobytes()).digest()
    return int.from_bytes(digest[:8], "little") ^ INTERPOLATION_SEED


def interpolate_points(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One synthetic point per sample: a uniform convex combination of two same-class points.

    Each class draws from a generator seeded by its own content, so the
    result does not depend on which class carries which label.
    """
    out_X, out_y = [], []
    for c in (0, 1):
        Xc = X[y == c]
        rng = np.random.default_rng(_class_seed(Xc))
        i = rng.integers(0, len(Xc), size=len(Xc))
        j = rng.integers(0, len(Xc), size=len(Xc))
        lam = rng.uniform(0.0, 1.0, size=(len(Xc), 1))
        out_X.append(lam * Xc[i] + (1.0 - lam) * Xc[j])
        out_y.append(np.full(len(Xc), c))
    return np.vstack(out_X), np.concatenate(out_y)


# ---------------------------------------------------------------------------
# feature-based


def _fisher_ratios(X, y):
    mu = X.mean(axis=0)
    num = np.zeros(X.shape[1])
    den = np.zeros(X.shape[1])
    for c in (0, 1):
        Xc = X[y == c]
        mc = Xc.mean(axis=0)
        num += len(Xc) * (mc - mu) ** 2
        den += ((Xc - mc) ** 2).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))
    return r


def _overlap_bounds(X, y):
    X0, X1 = X[y == 0], X[y == 1]
    lo = np.maximum(X0.min(axis=0), X1.min(axis=0))
    hi = np.minimum(X0.max(axis=0), X1.max(axis=0))
    return lo, hi


def _feature_based(X: np.ndarray, y: np.ndarray) -> dict[str, float]:
    _require_two_classes(y)
    n, d = X.shape
    out = {}
    out["F1"] = 1.0 / (1.0 + float(np.max(_fisher_ratios(X, y))))

    # directional-vector Fisher ratio
    X0, X1 = X[y == 0], X[y == 1]
    p0, p1 = len(X0) / n, len(X1) / n
    W = p0 * np.cov(X0, rowvar=False, ddof=0).reshape(d, d) + p1 * np.cov(X1, rowvar=False, ddof=0).reshape(d, d)
    delta = X1.mean(axis=0) - X0.mean(axis=0)
    v = np.linalg.pinv(W) @ delta
    between = float(v @ delta) ** 2
    within = float(v @ W @ v)
    if between <= 0:
        dF = 0.0
    elif within <= 1e-300:
        dF = np.inf
    else:
        dF = between / within
    out["F1v"] = 1.0 / (1.0 + dF)

    lo, hi = _overlap_bounds(X, y)
    span = X.max(axis=0) - X.min(axis=0)
    overlap = np.maximum(0.0, hi - lo)
    ratio = np.where(span > 0, overlap / np.where(span > 0, span, 1.0), 1.0)
    out["F2"] = float(np.prod(ratio))

    in_overlap = (X >= lo) & (X <= hi) & (hi >= lo)
    out["F3"] = float(in_overlap.sum(axis=0).min() / n)

    remaining = np.ones(n, bool)
    features = list(range(d))
    while features and remaining.any():
        Xr, yr = X[remaining], y[remaining]
        if len(np.unique(yr)) < 2:
            remaining[:] = False
            break
        lo_r, hi_r = _overlap_bounds(Xr, yr)
        inside = (Xr >= lo_r) & (Xr <= hi_r) & (hi_r >= lo_r)
        counts = inside[:, features].sum(axis=0)
        best = int(np.argmin(counts))
        j = features.pop(best)
        idx = np.flatnonzero(remaining)
        remaining[idx[~inside[:, j]]] = False
    out["F4"] = float(remaining.sum() / n)
    return out


# ---------------------------------------------------------------------------
# linearity


def _linear_svm(X, y):
    clf = SVC(kernel="linear", C=1.0, tol=1e-6)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        clf.fit(X, y)
    return clf


def _linearity(X: np.ndarray, y: np.ndarray) -> dict[str, float]:
    """L1 uses the summed |decision value| of misclassified training points."""
    _require_two_classes(y)
    n = len(y)
    clf = _linear_svm(X, y)
    f = clf.decision_function(X)
    signed = np.where(y == 1, f, -f)
    wrong = signed < 0
    sum_err = float(np.abs(f[wrong]).sum() / n)
    Xi, yi = interpolate_points(X, y)
    fi = clf.decision_function(Xi)
    wrong_i = np.where(yi == 1, fi, -fi) < 0
    return {
        "L1": sum_err / (1.0 + sum_err),
        "L2": float(wrong.mean()),
        "L3": float(wrong_i.mean()),
    }



# ---------------------------------------------------------------------------
# neighborhood


def minimum_spanning_tree(D: np.ndarray) -> list[tuple[int, int]]:
    """Prim's algorithm on a dense distance matrix; ties go to the lowest index."""
    n = len(D)
    in_tree = np.zeros(n, bool)
    in_tree[0] = True
    best = D[0].copy()
    parent = np.zeros(n, int)
    edges = []
    for _ in range(n - 1):
        cand = np.where(in_tree, np.inf, best)
        v = int(np.argmin(cand))
        edges.append((int(parent[v]), v))
        in_tree[v] = True
        closer = (D[v] < best) & ~in_tree
        best[closer] = D[v][closer]
        parent[closer] = v
    return edges


def loo_1nn_errors(D: np.ndarray, y: np.ndarray) -> np.ndarray:
    n = len(y)
    mask = ~np.eye(n, dtype=bool)
    idx, _ = _nearest(D, mask)
    return y[idx] != y


def _neighborhood(X: np.ndarray, y: np.ndarray, D: np.ndarray | None = None) -> dict[str, float]:
    _require_two_classes(y)
    n = len(y)
    if n < 3:
        raise ValueError("neighborhood measures need at least 3 samples")
    D = cdist(X, X) if D is None else D
    same = y[:, None] == y[None, :]
    not_self = ~np.eye(n, dtype=bool)

    edges = minimum_spanning_tree(D)
    cross = sum(1 for i, j in edges if y[i] != y[j])
    n1 = cross / (n - 1)

    _, intra = _nearest(D, same & not_self)
    _, extra = _nearest(D, ~same)
    intra = np.where(np.isfinite(intra), intra, 0.0)
    s_intra, s_extra = float(intra.sum()), float(extra.sum())
    if s_extra > 0:
        r = s_intra / s_extra
        n2 = r / (1.0 + r)
    else:
        n2 = 1.0

    n3 = float(loo_1nn_errors(D, y).mean())

    Xi, yi = interpolate_points(X, y)
    Di = cdist(Xi, X)
    nn = np.argmin(Di, axis=1)
    n4 = float((y[nn] != yi).mean())

    # hyperspheres grown to the nearest enemy; a sphere is absorbed when its
    # center lies inside a larger same-class sphere (lower index wins ties)
    radius = extra
    bigger = (radius[None, :] > radius[:, None]) | (
        (radius[None, :] == radius[:, None]) & (np.arange(n)[None, :] < np.arange(n)[:, None])
    )
    absorbed = (D < radius[None, :]) & same & not_self & bigger
    t1 = float((~absorbed.any(axis=1)).sum() / n)

    local_sets = (D < extra[:, None]).sum(axis=1)
    lsc = 1.0 - float(local_sets.sum()) / n**2

    return {"N1": n1, "N2": n2, "N3": n3, "N4": n4, "T1": t1, "LSC": lsc}


# ---------------------------------------------------------------------------
# network


def epsilon_graph(X: np.ndarray, y: np.ndarray, eps: float = EPSILON_GRAPH, D: np.ndarray | None = None) -> np.ndarray:
    """Adjacency of the same-class epsilon-NN graph.

    Distances are Euclidean on [0,1]-scaled features divided by sqrt(d), so
    they lie in [0, 1].
    """
    D = cdist(X, X) if D is None else D
    Dn = D / np.sqrt(X.shape[1])
    A = (Dn < eps) & (y[:, None] == y[None, :])
    np.fill_diagonal(A, False)
    return A


def hub_scores(A: np.ndarray, tol: float = 1e-12, max_iter: int = 10000) -> np.ndarray:
    """Kleinberg hub scores (power iteration on A A^T from the all-ones vector), max-normalized."""
    A = A.astype(float)
    v = np.ones(len(A))
    for _ in range(max_iter):
        w = A @ (A.T @ v)
        top = w.max(initial=0.0)
        if top <= 0:
            return np.zeros(len(A))
        w = w / top
        if np.max(np.abs(w - v)) < tol:
            return w
        v = w
    return v


def network_from_graph(A: np.ndarray) -> dict[str, float]:
    n = len(A)
    Ai = A.astype(int)
    E = Ai.sum() / 2
    density = 1.0 - 2.0 * E / (n * (n - 1))
    deg = Ai.sum(axis=1)
    triangles = np.einsum("ij,jk,ki->i", Ai, Ai, Ai) / 2
    pairs = deg * (deg - 1) / 2
    cc = np.where(deg >= 2, triangles / np.where(pairs > 0, pairs, 1), 0.0)
    return {
        "Density": float(density),
        "ClsCoef": float(1.0 - cc.mean()),
        "Hubs": float(1.0 - hub_scores(A).mean()),
    }


def _network(X: np.ndarray, y: np.ndarray, D: np.ndarray | None = None) -> dict[str, float]:
    if len(y) < 3:
        raise ValueError("network measures need at least 3 samples")
    return network_from_graph(epsilon_graph(X, y, D=D))


# ---------------------------------------------------------------------------
# dimensionality, balance, intrinsic dimension, compression


def covariance_eigenvalues(X: np.ndarray) -> np.ndarray:
    if len(X) < 2:
        return np.zeros(X.shape[1])
    cov = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    vals = np.linalg.eigvalsh(cov)[::-1]
    return np.clip(vals, 0.0, None)


def pca_components(X: np.ndarray, variance: float = PCA_VARIANCE) -> int:
    """Smallest number of principal components explaining ``variance`` of the total."""
    vals = covariance_eigenvalues(X)
    total = vals.sum()
    if total <= 0:
        return 1
    frac = np.cumsum(vals) / total
    return int(np.searchsorted(frac, variance - 1e-12) + 1)


def _dimensionality(X: np.ndarray, y: np.ndarray | None = None) -> dict[str, float]:
    n, d = X.shape
    if n < 2:
        raise ValueError("dimensionality measures need at least 2 samples")
    m = pca_components(X)
    return {"T2": d / n, "T3": m / n, "T4": m / d}


def _class_balance(X: np.ndarray | None, y: np.ndarray) -> dict[str, float]:
    _require_two_classes(y)
    counts = np.bincount(y, minlength=2).astype(float)
    p = counts / counts.sum()
    entropy = -float(np.sum(p * np.log(p)))
    c1 = 1.0 - entropy / np.log(2.0)
    n = counts.sum()
    ir = 0.5 * float(np.sum(counts / (n - counts)))
    c2 = 1.0 - 1.0 / ir
    return {"C1": max(0.0, c1), "C2": max(0.0, c2)}


def _intrinsic_dimension(X: np.ndarray, y: np.ndarray | None = None) -> dict[str, float]:
    """Participation ratio of the covariance eigenvalues; 1 for zero variance."""
    vals = covariance_eigenvalues(X)
    s2 = float(np.sum(vals**2))
    if s2 <= 0:
        return {"IntDim": 1.0}
    return {"IntDim": float(vals.sum() ** 2 / s2)}


def canonical_text(X: np.ndarray, y: np.ndarray) -> bytes:
    """Rows ``v1,...,vd,label`` with six decimals, sorted; the label orientation
    giving the smaller text is used."""
    feats = [",".join(f"{v + 0.0:.6f}" for v in row) for row in X]
    texts = []
    for labels in (y, 1 - y):
        lines = sorted(f"{f},{int(c)}" for f, c in zip(feats, labels))
        texts.append("\n".join(lines).encode("ascii"))
    return min(texts)


def compression_ratio(data: bytes, level: int = ZLIB_LEVEL) -> float:
    if not data:
        return 1.0
    return len(zlib.compress(data, level)) / len(data)


def _kolmogorov(X: np.ndarray, y: np.ndarray) -> dict[str, float]:
    return {"Kolmogorov": compression_ratio(canonical_text(X, y))}


# ---------------------------------------------------------------------------
# public per-group entry points: accept a LabeledDataset or (features, labels)


def feature_based(d, y=None) -> dict[str, float]:
    return _symmetrized([_feature_based], *_raw(d, y))


def linearity(d, y=None) -> dict[str, float]:
    return _symmetrized([_linearity], *_raw(d, y))


def neighborhood(d, y=None) -> dict[str, float]:
    return _symmetrized([_neighborhood], *_raw(d, y))


def network(d, y=None) -> dict[str, float]:
    return _symmetrized([_network], *_raw(d, y))


def dimensionality(d, y=None) -> dict[str, float]:
    return _symmetrized([_dimensionality], *_raw(d, y, labels_required=False))


def class_balance(d, y=None) -> dict[str, float]:
    return _symmetrized([_class_balance], *_raw(d, y))


def intrinsic_dimension(d, y=None) -> float:
    return _symmetrized([_intrinsic_dimension], *_raw(d, y, labels_required=False))["IntDim"]


def kolmogorov(d, y=None) -> float:
    return _symmetrized([_kolmogorov], *_raw(d, y))["Kolmogorov"]


_GROUPS = (
    (("F1", "F1v", "F2", "F3", "F4"), _feature_based),
    (("L1", "L2", "L3"), _linearity),
    (("N1", "N2", "N3", "N4", "T1", "LSC"), _neighborhood),
    (("Density", "ClsCoef", "Hubs"), _network),
    (("T2", "T3", "T4"), _dimensionality),
    (("C1", "C2"), _class_balance),
    (("IntDim",), _intrinsic_dimension),
    (("Kolmogorov",), _kolmogorov),
)


def compute_metrics(d: LabeledDataset, metrics=METRIC_IDS) -> dict[str, float]:
    if not d.is_binary():
        raise ValueError(f"{d.name}: complexity measures need binary 0/1 labels")
    wanted = set(metrics)
    fns = [fn for ids, fn in _GROUPS if wanted & set(ids)]
    values = _symmetrized(fns, d.features, d.labels)
    return {m: float(values[m]) for m in METRIC_IDS if m in wanted}


def extract(d: LabeledDataset, mode: str = ALL_IN) -> ComplexityVector:
    """Feature vector for ``mode``: all 24 measures or a single one."""
    metrics = mode_metrics(mode)
    return ComplexityVector(compute_metrics(d, metrics), d.name)


def write_features_csv(vectors: list[ComplexityVector], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset_name", *METRIC_IDS])
        for v in vectors:
            w.writerow([v.dataset_name] + [repr(float(v.values[m])) for m in METRIC_IDS])


def read_features_csv(path: str | Path) -> list[ComplexityVector]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["dataset_name", *METRIC_IDS]:
        raise ValueError(f"{path}: unexpected feature header")
    return [ComplexityVector({m: float(v) for m, v in zip(METRIC_IDS, r[1:])}, r[0]) for r in rows[1:]]

"""Dataset generation, CSV ingestion and the angle-encoding preprocessing pipeline."""
from __future__ import annotations

import csv
import logging
import urllib.request
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from sklearn import datasets as skd

log = logging.getLogger(__name__)

N_QUBITS = 4
TEST_FRACTION = 0.2

META_FAMILIES = ("Blobs", "Circles", "Moons", "ConcentricRings", "XOR", "Spiral", "Checkerboard")
# Only used for the holdout analogs, never for the meta-dataset.
EXTRA_FAMILIES = ("Classification", "GaussianQuantiles")

_DEFAULTS: dict[str, dict[str, Any]] = {
    "Blobs": {"centers": 2, "std": 1.0, "n_features": 2, "center_box": 10.0},
    "Circles": {"noise": 0.05, "factor": 0.5},
    "Moons": {"noise": 0.1},
    "ConcentricRings": {"n_rings": 3, "noise": 0.05},
    "XOR": {"noise": 0.1},
    "Spiral": {"turns": 1.5, "noise": 0.2},
    "Checkerboard": {"k": 3, "noise": 0.0},
    "Classification": {"n_features": 4, "n_informative": 2, "class_sep": 1.0, "weights": None, "flip_y": 0.01},
    "GaussianQuantiles": {"n_features": 2},
}


class DataError(ValueError):
    """Malformed input data or an invalid dataset request."""


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    generator_config: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels).astype(int)
        if self.features.ndim != 2:
            raise DataError(f"{self.name}: features must be a 2-D matrix")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"{self.name}: {self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if not np.all(np.isfinite(self.features)):
            raise DataError(f"{self.name}: non-finite feature values")
        classes, counts = np.unique(self.labels, return_counts=True)
        if len(classes) < 2 or counts.min() < 2:
            raise DataError(f"{self.name}: need at least 2 samples in each of 2 classes, got {dict(zip(classes, counts))}")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def is_binary(self) -> bool:
        return set(np.unique(self.labels)) <= {0, 1}


@dataclass
class PreprocessedDataset:
    train_features: np.ndarray
    test_features: np.ndarray
    train_labels: np.ndarray
    test_labels: np.ndarray
    scaler_params: tuple[np.ndarray, np.ndarray]
    pca_params: dict | None = None
    name: str = "dataset"

    @property
    def n_samples(self) -> int:
        return len(self.train_labels) + len(self.test_labels)


# ---------------------------------------------------------------------------
# synthetic generators


def _balanced_counts(n: int, n_classes: int = 2) -> list[int]:
    base, extra = divmod(n, n_classes)
    return [base + (1 if c < extra else 0) for c in range(n_classes)]


def _shuffle(X, y, rng):
    order = rng.permutation(len(y))
    return X[order], y[order]


def _xor(n, cfg, rng):
    X, y = [], []
    for label, count in enumerate(_balanced_counts(n)):
        # label 0 -> quadrants (+,+),(-,-); label 1 -> (+,-),(-,+)
        sx = rng.choice([-1.0, 1.0], size=count)
        sy = sx if label == 0 else -sx
        pts = rng.uniform(0.0, 1.0, size=(count, 2)) * np.column_stack([sx, sy])
        X.append(pts)
        y.append(np.full(count, label))
    X = np.vstack(X)
    if cfg["noise"] > 0:
        X = X + rng.normal(0.0, cfg["noise"], size=X.shape)
    return _shuffle(X, np.concatenate(y), rng)


def _spiral(n, cfg, rng):
    X, y = [], []
    for label, count in enumerate(_balanced_counts(n)):
        t = rng.uniform(0.0, 1.0, size=count)
        theta = 2.0 * np.pi * cfg["turns"] * t + 0.5
        r = theta / (2.0 * np.pi)
        theta = theta + rng.normal(0.0, cfg["noise"], size=count) + np.pi * label
        X.append(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
        y.append(np.full(count, label))
    return _shuffle(np.vstack(X), np.concatenate(y), rng)


def _checkerboard(n, cfg, rng):
    k = int(cfg["k"])
    if k < 2:
        raise DataError("Checkerboard needs k >= 2")
    cells = [(i, j) for i in range(k) for j in range(k)]
    X, y = [], []
    for label, count in enumerate(_balanced_counts(n)):
        mine = np.array([c for c in cells if (c[0] + c[1]) % 2 == label])
        pick = mine[rng.integers(0, len(mine), size=count)]
        pts = pick + rng.uniform(0.0, 1.0, size=(count, 2))
        X.append(pts)
        y.append(np.full(count, label))
    X = np.vstack(X)
    if cfg["noise"] > 0:
        X = X + rng.normal(0.0, cfg["noise"], size=X.shape)
    return _shuffle(X, np.concatenate(y), rng)


def _rings(n, cfg, rng):
    n_rings = int(cfg["n_rings"])
    if n_rings < 2:
        raise DataError("ConcentricRings needs n_rings >= 2")
    X, y = [], []
    for label, count in enumerate(_balanced_counts(n)):
        mine = np.arange(label, n_rings, 2)
        radius = 1.0 + mine[rng.integers(0, len(mine), size=count)]
        radius = radius + rng.normal(0.0, cfg["noise"], size=count)
        phi = rng.uniform(0.0, 2.0 * np.pi, size=count)
        X.append(np.column_stack([radius * np.cos(phi), radius * np.sin(phi)]))
        y.append(np.full(count, label))
    return _shuffle(np.vstack(X), np.concatenate(y), rng)


def generate_synthetic(family: str, config: dict | None, n_samples: int, seed: int) -> LabeledDataset:
    """Draw one synthetic binary dataset.

    Multi-center Blobs are binarized by center parity. The custom families
    (XOR, Spiral, Checkerboard, ConcentricRings) draw exactly balanced
    classes.
    """
    if family not in _DEFAULTS:
        raise DataError(f"unknown family {family!r}; expected one of {META_FAMILIES + EXTRA_FAMILIES}")
    config = dict(config or {})
    unknown = set(config) - set(_DEFAULTS[family])
    if unknown:
        raise DataError(f"invalid config key(s) for {family}: {sorted(unknown)}")
    if n_samples < 4:
        raise DataError(f"n_samples must be >= 4, got {n_samples}")
    cfg = {**_DEFAULTS[family], **config}
    rng = np.random.default_rng(seed)
    rs = int(rng.integers(0, 2**31 - 1))

    if family == "Blobs":
        box = float(cfg["center_box"])
        X, c = skd.make_blobs(
            n_samples=n_samples,
            n_features=int(cfg["n_features"]),
            centers=int(cfg["centers"]),
            cluster_std=float(cfg["std"]),
            center_box=(-box, box),
            random_state=rs,
        )
        y = c % 2
    elif family == "Circles":
        X, y = skd.make_circles(n_samples=n_samples, noise=cfg["noise"] or None, factor=cfg["factor"], random_state=rs)
    elif family == "Moons":
        X, y = skd.make_moons(n_samples=n_samples, noise=cfg["noise"] or None, random_state=rs)
    elif family == "XOR":
        X, y = _xor(n_samples, cfg, rng)
    elif family == "Spiral":
        X, y = _spiral(n_samples, cfg, rng)
    elif family == "Checkerboard":
        X, y = _checkerboard(n_samples, cfg, rng)
    elif family == "ConcentricRings":
        X, y = _rings(n_samples, cfg, rng)
    elif family == "Classification":
        weights = cfg["weights"]
        X, y = skd.make_classification(
            n_samples=n_samples,
            n_features=int(cfg["n_features"]),
            n_informative=int(cfg["n_informative"]),
            n_redundant=0,
            class_sep=float(cfg["class_sep"]),
            weights=list(weights) if weights else None,
            flip_y=float(cfg["flip_y"]),
            random_state=rs,
        )
    else:  # GaussianQuantiles
        X, y = skd.make_gaussian_quantiles(
            n_samples=n_samples, n_features=int(cfg["n_features"]), n_classes=2, random_state=rs
        )
    name = f"{family}_n{n_samples}"
    return LabeledDataset(X, y, name=name, generator_config={"family": family, **cfg}, seed=seed)


# ---------------------------------------------------------------------------
# CSV ingestion


@dataclass(frozen=True)
class CsvSchema:
    """Feature columns followed by one label column."""

    n_features: int
    label_column: str | None = None


@dataclass(frozen=True)
class ClassPair:
    negative: str
    positive: str


@dataclass(frozen=True)
class Threshold:
    """Numeric labels ``>= value`` become class 1."""

    value: float


def read_csv(path: str | Path, schema: CsvSchema | None = None) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Parse a headered CSV into (features, raw string labels, header)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise DataError(f"{path}: need a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    width = len(header)
    if schema is not None:
        if width != schema.n_features + 1:
            raise DataError(f"{path}: header has {width} columns, schema expects {schema.n_features} features + label")
        if schema.label_column is not None and header[-1] != schema.label_column:
            raise DataError(f"{path}: missing label column {schema.label_column!r} (last column is {header[-1]!r})")
    if width < 2:
        raise DataError(f"{path}: need at least one feature column and a label column")
    feats, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DataError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
        try:
            feats.append([float(v) for v in row[:-1]])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        label = row[-1].strip()
        if label == "":
            raise DataError(f"{path}:{lineno}: missing label")
        labels.append(label)
    X = np.array(feats, dtype=float)
    if not np.all(np.isfinite(X)):
        raise DataError(f"{path}: non-finite feature values")
    return X, np.array(labels), header


def _binarize(labels: np.ndarray, rule) -> tuple[np.ndarray, np.ndarray]:
    """Return (row mask, 0/1 labels of the kept rows)."""
    if rule is None:
        classes = sorted(set(labels.tolist()), key=_label_key)
        if len(classes) != 2:
            raise DataError(f"expected 2 classes without a binarization rule, got {classes}")
        return np.ones(len(labels), bool), (labels == classes[1]).astype(int)
    if isinstance(rule, ClassPair):
        mask = (labels == rule.negative) | (labels == rule.positive)
        return mask, (labels[mask] == rule.positive).astype(int)
    if isinstance(rule, Threshold):
        try:
            values = labels.astype(float)
        except ValueError:
            raise DataError("threshold binarization needs numeric labels") from None
        return np.ones(len(labels), bool), (values >= rule.value).astype(int)
    raise DataError(f"unknown binarization rule {rule!r}")


def _label_key(v: str):
    try:
        return (0, float(v), v)
    except ValueError:
        return (1, 0.0, v)


def stratified_indices(groups, n_take: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted indices of a stratified sample of size ``n_take``.

    Per-group quotas use largest-remainder rounding of the proportional
    share; remainder ties go to the group that appears first in sorted order.
    """
    groups = np.asarray(groups)
    n = len(groups)
    if not 0 <= n_take <= n:
        raise DataError(f"cannot take {n_take} of {n} rows")
    keys, inverse, counts = np.unique(groups, return_inverse=True, return_counts=True)
    exact = counts * n_take / n
    quota = np.floor(exact).astype(int)
    short = n_take - quota.sum()
    if short:
        order = np.lexsort((np.arange(len(keys)), -(exact - quota)))
        quota[order[:short]] += 1
    picked = []
    for g, q in enumerate(quota):
        members = np.flatnonzero(inverse == g)
        picked.append(members[rng.permutation(len(members))[:q]])
    return np.sort(np.concatenate(picked)) if picked else np.zeros(0, int)


def load_real(
    path: str | Path,
    schema: CsvSchema,
    binarization=None,
    n_samples: int | None = None,
    seed: int = 0,
    name: str | None = None,
) -> LabeledDataset:
    """Read a real-world CSV, binarize it and draw a stratified subsample."""
    X, raw, _ = read_csv(path, schema)
    mask, y = _binarize(raw, binarization)
    X = X[mask]
    if len(np.unique(y)) < 2 or np.bincount(y, minlength=2).min() < 2:
        raise DataError(f"{path}: binarization {binarization} leaves fewer than 2 samples in a class")
    if n_samples is not None:
        if n_samples > len(y):
            raise DataError(f"{path}: requested {n_samples} rows but only {len(y)} available after binarization")
        idx = stratified_indices(y, n_samples, np.random.default_rng(seed))
        X, y = X[idx], y[idx]
    cfg = {"source": Path(path).name, "binarization": repr(binarization), "n_samples": n_samples}
    return LabeledDataset(X, y, name=name or Path(path).stem, generator_config=cfg, seed=seed)


def write_csv(d: LabeledDataset, path: str | Path) -> None:
    """Write a dataset in the CSV interface format (features then ``label``)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j}" for j in range(d.n_features)] + ["label"])
        for row, label in zip(d.features, d.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def read_dataset_csv(path: str | Path, name: str | None = None) -> LabeledDataset:
    """Read a two-class CSV (any label spelling) as a LabeledDataset."""
    X, raw, _ = read_csv(path)
    _, y = _binarize(raw, None)
    return LabeledDataset(X, y, name=name or Path(path).stem, generator_config={"source": str(path)})


def load_digits_pair(neg: int = 0, pos: int = 1, n_samples: int | None = None, seed: int = 0) -> LabeledDataset:
    digits = skd.load_digits()
    mask = (digits.target == neg) | (digits.target == pos)
    X, y = digits.data[mask], (digits.target[mask] == pos).astype(int)
    if n_samples is not None:
        idx = stratified_indices(y, n_samples, np.random.default_rng(seed))
        X, y = X[idx], y[idx]
    return LabeledDataset(X, y, name=f"Digits_{neg}v{pos}", generator_config={"family": "Digits"}, seed=seed)


# ---------------------------------------------------------------------------
# preprocessing


def minmax_scale(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Scale columns to [0, 1]; constant columns map to 0."""
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    Z = np.where(span > 0, (X - lo) / safe, 0.0)
    return Z, lo, hi


def pca_basis(X: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-``k`` principal axes of ``X`` as columns, plus the mean and all eigenvalues (descending).

    Each axis is flipped so its largest-magnitude coordinate is positive.
    """
    mean = X.mean(axis=0)
    cov = np.cov(X - mean, rowvar=False, ddof=1) if len(X) > 1 else np.zeros((X.shape[1],) * 2)
    vals, vecs = np.linalg.eigh(np.atleast_2d(cov))
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    basis = vecs[:, :k].copy()
    for j in range(basis.shape[1]):
        if basis[np.argmax(np.abs(basis[:, j])), j] < 0:
            basis[:, j] = -basis[:, j]
    return basis, mean, vals


def to_qubit_angles(X: np.ndarray, n_qubits: int = N_QUBITS) -> tuple[np.ndarray, tuple, dict | None]:
    """Min-max scale, reduce/tile to ``n_qubits`` columns, and map to [0, pi]."""
    Z, lo, hi = minmax_scale(X)
    pca = None
    d = Z.shape[1]
    if d > n_qubits:
        basis, mean, vals = pca_basis(Z, n_qubits)
        P = (Z - mean) @ basis
        Z, plo, phi = minmax_scale(P)
        pca = {"basis": basis, "mean": mean, "eigenvalues": vals, "min": plo, "max": phi}
    elif d < n_qubits:
        # fewer features than qubits: repeat columns cyclically
        Z = Z[:, [j % d for j in range(n_qubits)]]
    return Z * np.pi, (lo, hi), pca


def split_indices(labels: np.ndarray, seed: int, test_fraction: float = TEST_FRACTION):
    """Stratified train/test split with ``|test| = round(test_fraction * n)``."""
    n = len(labels)
    if n < 5:
        raise DataError(f"need at least 5 samples to split, got {n}")
    n_test = int(np.floor(test_fraction * n + 0.5))
    test = stratified_indices(labels, n_test, np.random.default_rng(seed))
    train = np.setdiff1d(np.arange(n), test)
    return train, test


def preprocess(d: LabeledDataset, seed: int) -> PreprocessedDataset:
    """Scale to [0,1], project to 4 components if wider, map to [0, pi], split 8/2.

    The projection is fit on the full dataset before splitting.
    """
    if d.n_samples < 5:
        raise DataError(f"{d.name}: need at least 5 samples to split, got {d.n_samples}")
    angles, scaler, pca = to_qubit_angles(d.features)
    train, test = split_indices(d.labels, seed)
    return PreprocessedDataset(
        train_features=angles[train],
        test_features=angles[test],
        train_labels=d.labels[train],
        test_labels=d.labels[test],
        scaler_params=scaler,
        pca_params=pca,
        name=d.name,
    )


# ---------------------------------------------------------------------------
# dataset manifest

REAL_DATA = resources.files("qkselect") / "data" / "real"
DEFAULT_MANIFEST = resources.files("qkselect") / "data" / "manifest.yaml"

FETCH_URLS = {
    "banknote.csv": (
        "https://archive.ics.uci.edu/ml/machine-learning-databases/00267/data_banknote_authentication.txt",
        ["variance", "skewness", "curtosis", "entropy", "class"],
    ),
    "haberman.csv": (
        "https://archive.ics.uci.edu/ml/machine-learning-databases/haberman/haberman.data",
        ["age", "operation_year", "positive_nodes", "survival"],
    ),
}


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    kind: str  # "synthetic", "real" or "holdout"
    group: str
    config: dict
    n_samples: int | None
    seed: int


def dataset_seed(global_seed: int, name: str) -> int:
    return zlib.crc32(f"{global_seed}:{name}".encode()) & 0x7FFFFFFF


def load_manifest(path: str | Path | None = None) -> dict:
    text = Path(path).read_text(encoding="utf-8") if path else DEFAULT_MANIFEST.read_text(encoding="utf-8")
    manifest = yaml.safe_load(text)
    if not isinstance(manifest, dict) or "synthetic" not in manifest or "real" not in manifest:
        raise DataError("manifest must define 'synthetic' and 'real' sections")
    return manifest


def manifest_specs(manifest: dict, section: str = "meta") -> list[DatasetSpec]:
    """Expand a manifest into dataset specs. ``section`` is ``"meta"`` or ``"holdout"``."""
    g = int(manifest.get("global_seed", 0))
    specs = []
    if section == "holdout":
        for entry in manifest.get("holdout", []):
            name = entry["name"]
            specs.append(
                DatasetSpec(name, "holdout", entry["family"], dict(entry.get("config", {})), entry.get("n_samples"), dataset_seed(g, name))
            )
        return specs
    sizes = manifest.get("synthetic_sizes", [100, 150, 200])
    for family, configs in manifest["synthetic"].items():
        if family not in META_FAMILIES:
            raise DataError(f"manifest lists unknown synthetic family {family!r}")
        for ci, cfg in enumerate(configs, start=1):
            for n in sizes:
                name = f"{family}_c{ci:02d}_n{n}"
                specs.append(DatasetSpec(name, "synthetic", family, dict(cfg or {}), int(n), dataset_seed(g, name)))
    for entry in manifest["real"]:
        for ci, cfg in enumerate(entry["configs"], start=1):
            name = f"{entry['name']}_c{ci}_n{cfg['n_samples']}"
            conf = {k: v for k, v in entry.items() if k != "configs"}
            conf.update(cfg)
            specs.append(DatasetSpec(name, "real", entry["name"], conf, int(cfg["n_samples"]), dataset_seed(g, name)))
    return specs


def _rule_from_config(cfg: dict):
    if "pair" in cfg:
        neg, pos = cfg["pair"]
        return ClassPair(str(neg), str(pos))
    if "threshold" in cfg:
        return Threshold(float(cfg["threshold"]))
    return None


def materialize(spec: DatasetSpec, data_dir: str | Path | None = None) -> LabeledDataset:
    """Produce the LabeledDataset described by one manifest spec."""
    if spec.kind == "synthetic":
        d = generate_synthetic(spec.group, spec.config, spec.n_samples, spec.seed)
    elif spec.kind == "holdout":
        if spec.group == "Digits":
            cfg = spec.config
            d = load_digits_pair(cfg.get("negative", 0), cfg.get("positive", 1), spec.n_samples, spec.seed)
        else:
            d = generate_synthetic(spec.group, spec.config, spec.n_samples, spec.seed)
    else:
        cfg = dict(spec.config)
        path = _find_real_file(cfg["file"], data_dir)
        if path is None and "fallback" in cfg:
            fb = cfg["fallback"]
            log.warning("%s: %s not found, using fallback %s", spec.name, cfg["file"], fb["file"])
            cfg.update({k: v for k, v in fb.items() if k != "name"})
            path = _find_real_file(cfg["file"], data_dir)
        if path is None:
            raise DataError(f"{spec.name}: data file {cfg['file']!r} not found")
        schema = CsvSchema(int(cfg["n_features"]), cfg.get("label_column"))
        d = load_real(path, schema, _rule_from_config(cfg), spec.n_samples, spec.seed)
        d.generator_config.update({"group": spec.group})
    d.name = spec.name
    d.seed = spec.seed
    return d


def _find_real_file(fname: str, data_dir) -> Path | None:
    candidates = []
    if data_dir is not None:
        candidates.append(Path(data_dir) / fname)
    candidates.append(Path(str(REAL_DATA / fname)))
    for c in candidates:
        if c.is_file():
            return c
    return None


def fetch_real(fname: str, dest_dir: str | Path, timeout: float = 30.0) -> Path:
    """Download one of the UCI files in ``FETCH_URLS`` and store it in the CSV interface format."""
    if fname not in FETCH_URLS:
        raise DataError(f"no download source for {fname!r}; known: {sorted(FETCH_URLS)}")
    url, header = FETCH_URLS[fname]
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        text = resp.read().decode("utf-8")
    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)
    out = dest / fname
    rows = [[v.strip() for v in line.split(",")] for line in text.splitlines() if line.strip()]
    if fname == "haberman.csv":
        rows = [r[:-1] + [str(int(r[-1]) - 1)] for r in rows]
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return out

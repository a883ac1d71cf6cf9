from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from qkselect import datagen as dg

FAMILY_COUNTS = {"Blobs": 42, "Circles": 24, "Moons": 21, "ConcentricRings": 24, "XOR": 18, "Spiral": 18, "Checkerboard": 27}


@pytest.fixture(scope="module")
def meta_specs():
    return dg.manifest_specs(dg.load_manifest())


def test_manifest_inventory(meta_specs):
    assert len(meta_specs) == 200
    synth = Counter(s.group for s in meta_specs if s.kind == "synthetic")
    assert dict(synth) == FAMILY_COUNTS
    assert sum(1 for s in meta_specs if s.kind == "real") == 26
    assert len({s.name for s in meta_specs}) == 200


def test_holdout_disjoint(meta_specs):
    hold = dg.manifest_specs(dg.load_manifest(), "holdout")
    assert len(hold) == 7
    assert not {s.name for s in hold} & {s.name for s in meta_specs}
    for s in hold:
        d = dg.materialize(s)
        assert d.is_binary() and d.n_samples >= 100


def test_all_meta_datasets_materialize(meta_specs):
    for s in meta_specs:
        d = dg.materialize(s)
        assert d.is_binary()
        assert min(np.bincount(d.labels)) >= 2
        if s.kind == "synthetic":
            assert d.n_samples in (100, 150, 200)
        else:
            assert d.n_samples in (80, 100, 120, 150)


@pytest.mark.parametrize("family", dg.META_FAMILIES)
def test_generator_deterministic_and_balanced(family):
    a = dg.generate_synthetic(family, {}, 151, 3)
    b = dg.generate_synthetic(family, {}, 151, 3)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)
    if family != "Blobs":
        counts = np.bincount(a.labels)
        assert abs(counts[0] - counts[1]) <= 1


def test_generator_errors():
    with pytest.raises(dg.DataError):
        dg.generate_synthetic("Nope", {}, 100, 0)
    with pytest.raises(dg.DataError):
        dg.generate_synthetic("Moons", {"bogus": 1}, 100, 0)
    with pytest.raises(dg.DataError):
        dg.generate_synthetic("Moons", {}, 3, 0)


def test_moons_noise_free_point():
    d = dg.generate_synthetic("Moons", {"noise": 0.0}, 100, 11)
    hit = np.all(np.isclose(d.features, [1.0, 0.0], atol=1e-15), axis=1)
    assert hit.any() and set(d.labels[hit]) == {0}


def test_xor_labels_exact():
    d = dg.generate_synthetic("XOR", {"noise": 0.0}, 100, 1)
    sx, sy = d.features[:, 0] > 0, d.features[:, 1] > 0
    assert np.array_equal(d.labels, (sx ^ sy).astype(int))


def test_blobs_loo_1nn():
    d = dg.generate_synthetic("Blobs", {"centers": 2, "std": 0.5}, 150, 7)
    assert oracles.loo_1nn(d.features, d.labels) < 0.1


def test_labeled_dataset_invariants():
    with pytest.raises(ValueError):
        dg.LabeledDataset(np.zeros((3, 2)), np.array([0, 1, 1]), "x")
    with pytest.raises(ValueError):
        dg.LabeledDataset(np.array([[np.inf, 0], [0, 0], [1, 1], [1, 0]]), np.array([0, 0, 1, 1]), "x")
    with pytest.raises(ValueError):
        dg.LabeledDataset(np.zeros((4, 2)), np.array([0, 0, 1]), "x")


def test_iris_pair():
    path = dg.REAL_DATA / "iris.csv"
    d = dg.load_real(path, dg.CsvSchema(4, "species"), dg.ClassPair("setosa", "versicolor"), 100, 0)
    assert d.features.shape == (100, 4) and set(d.labels) == {0, 1}


def test_wine_pair():
    path = dg.REAL_DATA / "wine.csv"
    d = dg.load_real(path, dg.CsvSchema(13, "target"), dg.ClassPair("0", "1"), 120, 0)
    assert d.features.shape == (120, 13)


def test_wrong_schema():
    with pytest.raises(dg.DataError):
        dg.read_csv(dg.REAL_DATA / "iris.csv", dg.CsvSchema(5, "species"))
    with pytest.raises(dg.DataError):
        dg.read_csv(dg.REAL_DATA / "iris.csv", dg.CsvSchema(4, "label"))


def test_real_errors(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b,label\n1,2,x\n3,4,x\n5,6,y\n")
    with pytest.raises(dg.DataError):  # only one y sample
        dg.load_real(p, dg.CsvSchema(2, "label"), None, 3, 0)
    with pytest.raises(dg.DataError):
        dg.load_real(p, dg.CsvSchema(2, "label"), None, 10, 0)
    p.write_text("a,b,label\n1,2,x\n3,,x\n")
    with pytest.raises(dg.DataError):
        dg.read_csv(p)


def test_csv_roundtrip(tmp_path):
    d = dg.generate_synthetic("Spiral", {}, 40, 0)
    dg.write_csv(d, tmp_path / "s.csv")
    back = dg.read_dataset_csv(tmp_path / "s.csv")
    assert np.array_equal(back.features, d.features) and np.array_equal(back.labels, d.labels)


def test_minmax_example():
    Z, lo, hi = dg.minmax_scale(np.array([[2.0], [4.0], [6.0]]))
    np.testing.assert_allclose(Z[:, 0], [0, 0.5, 1])
    angles, _, _ = dg.to_qubit_angles(np.array([[2.0, 1, 1, 1], [4, 2, 2, 2], [6, 3, 3, 3]]))
    np.testing.assert_allclose(angles[:, 0], [0, np.pi / 2, np.pi])


def test_constant_column_maps_to_zero():
    Z, _, _ = dg.minmax_scale(np.array([[1.0, 5.0], [2.0, 5.0]]))
    assert np.all(Z[:, 1] == 0.0)


def test_scaling_idempotent():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(30, 3))
    X[0], X[1] = 0.0, 1.0
    _, lo, hi = dg.minmax_scale(X)
    assert np.all(lo == 0) and np.all(hi == 1)


def test_wine_pca_top_components():
    path = dg.REAL_DATA / "wine.csv"
    d = dg.load_real(path, dg.CsvSchema(13, "target"), dg.ClassPair("0", "1"), 120, 0)
    Z, _, _ = dg.minmax_scale(d.features)
    basis, mean, vals = dg.pca_basis(Z, 4)
    assert basis.shape == (13, 4)
    np.testing.assert_allclose(basis.T @ basis, np.eye(4), atol=1e-10)
    # independent route: singular values of the centred data
    s = np.linalg.svd(Z - Z.mean(0), compute_uv=False)
    np.testing.assert_allclose(vals[:4], s[:4] ** 2 / (len(Z) - 1), rtol=1e-10)
    captured = np.var((Z - mean) @ basis, axis=0, ddof=1)
    np.testing.assert_allclose(captured, vals[:4], rtol=1e-10)
    p = dg.preprocess(d, 0)
    assert p.train_features.shape[1] == 4 and p.pca_params is not None


@settings(max_examples=40, deadline=None)
@given(n=st.integers(10, 200), seed=st.integers(0, 10_000), d=st.integers(1, 8))
def test_preprocess_invariants(n, seed, d):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = np.zeros(n, int)
    y[rng.permutation(n)[: max(2, n // 3)]] = 1
    ds = dg.LabeledDataset(X, y, "h")
    p = dg.preprocess(ds, seed)
    assert len(p.test_labels) == int(np.floor(0.2 * n + 0.5))
    assert len(p.train_labels) + len(p.test_labels) == n
    for F in (p.train_features, p.test_features):
        assert F.shape[1] == 4
        assert F.min() >= 0.0 and F.max() <= np.pi
    assert (p.pca_params is not None) == (d > 4)
    r_train, r_test = p.train_labels.mean(), p.test_labels.mean()
    assert abs(r_train - r_test) <= 1 / len(p.test_labels) + 1e-12
    q = dg.preprocess(ds, seed)
    assert np.array_equal(p.train_features, q.train_features)


def test_split_100():
    y = np.r_[np.zeros(60, int), np.ones(40, int)]
    train, test = dg.split_indices(y, 0)
    assert len(train) == 80 and len(test) == 20
    assert abs(y[test].sum() - 8) <= 1
    with pytest.raises(dg.DataError):
        dg.split_indices(np.array([0, 1, 0, 1]), 0)


def test_dataset_seed_stable():
    assert dg.dataset_seed(2025, "XOR_c01_n100") == dg.dataset_seed(2025, "XOR_c01_n100")
    assert dg.dataset_seed(2025, "a") != dg.dataset_seed(2025, "b")

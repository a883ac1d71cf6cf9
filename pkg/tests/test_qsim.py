import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from qkselect import qsim

# reference structure: (#params, #gates, depth, two-qubit kind)
EXPECTED = {
    "SRx": (0, 8, 2, None),
    "HERx": (0, 14, 8, "CX"),
    "ZFM": (0, 16, 4, None),
    "ZZFM": (0, 34, 22, "CX"),
    "HD": (0, 31, 9, "SQISW"),
    "YZ_CX": (16, 20, 6, "CX"),
    "HZY_CZ": (16, 28, 13, "CRZ"),
    "PZFM": (8, 22, 10, "CX"),
    "Chebyshev": (24, 24, 10, "CRZ"),
}

angles = arrays(np.float64, 4, elements=st.floats(0.0, np.pi, allow_nan=False))


@pytest.mark.parametrize("cid", qsim.CIRCUIT_IDS)
def test_structure(cid):
    c = qsim.build_circuit(cid)
    assert (c.n_params, c.n_gates, c.depth, c.two_qubit_kind) == EXPECTED[cid]


def test_audit_all_ok():
    assert all(ok for _, _, ok in qsim.audit_circuits().values())


def test_depth_rule():
    g = qsim.GateTemplate
    layer = [g("H", (0,)), g("H", (1,)), g("CX", (0, 1)), g("H", (2,))]
    assert qsim.circuit_depth([layer]) == 2
    assert qsim.circuit_depth([layer, layer]) == 4


def test_gate_validation():
    with pytest.raises(ValueError):
        qsim.Gate("CX", (1, 1))
    with pytest.raises(ValueError):
        qsim.Gate("RX", (0,))
    with pytest.raises(ValueError):
        qsim.Gate("H", (4,))
    with pytest.raises(ValueError):
        qsim.GateTemplate("RX", (0,), "__import__('os')")


def test_wrong_param_length():
    with pytest.raises(ValueError):
        qsim.build_circuit("YZ_CX", params=np.zeros(3))
    with pytest.raises(ValueError):
        qsim.build_circuit("Nope")


def test_params_deterministic_in_range():
    for cid in qsim.CIRCUIT_IDS:
        p = qsim.default_params(cid)
        assert np.array_equal(p, qsim.default_params(cid))
        assert np.all((p >= 0) & (p < 2 * np.pi))


def test_shipped_manifest_matches_code():
    shipped = qsim.load_circuit_manifest()
    for a, b in zip(shipped, qsim.all_circuits()):
        assert a.id == b.id
        assert a.templates == b.templates
        assert np.array_equal(a.params, b.params)


def test_sqisw_squared_is_iswap():
    U = qsim.gate_matrix("SQISW")
    iswap = np.array([[1, 0, 0, 0], [0, 0, 1j, 0], [0, 1j, 0, 0], [0, 0, 0, 1]])
    np.testing.assert_allclose(U @ U, iswap, atol=1e-15)
    # |01> means qubit 0 set: index 1; i|10> is index 2
    state = np.zeros(16, complex)
    state[1] = 1
    g = qsim.Gate("SQISW", (0, 1))
    out = qsim.apply_gate(qsim.apply_gate(state, g), g)
    expected = np.zeros(16, complex)
    expected[2] = 1j
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_cx_control_is_first_target():
    state = np.zeros(16, complex)
    state[1] = 1  # qubit 0 set
    out = qsim.apply_gate(state, qsim.Gate("CX", (0, 2)))
    assert abs(out[1 + 4]) == pytest.approx(1.0)


@pytest.mark.parametrize("cid", qsim.CIRCUIT_IDS)
def test_simulator_matches_dense_reference(cid):
    c = qsim.build_circuit(cid)
    rng = np.random.default_rng(hash(cid) % 2**32)
    for x in rng.uniform(0, np.pi, size=(3, 4)):
        np.testing.assert_allclose(qsim.encode(c, x), oracles.statevector_reference(c, x), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(x=angles, cid=st.sampled_from(qsim.CIRCUIT_IDS))
def test_norm_preserved(x, cid):
    psi = qsim.encode(qsim.build_circuit(cid), x)
    assert abs(np.vdot(psi, psi).real - 1.0) < 1e-10


@settings(max_examples=50, deadline=None)
@given(x=angles, y=angles)
def test_srx_closed_form(x, y):
    # separable RX twice per qubit: fidelity is prod cos^2(x_q - y_q)
    expected = np.prod(np.cos(x - y) ** 2)
    assert qsim.kernel(qsim.build_circuit("SRx"), x, y) == pytest.approx(expected, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(x=angles, y=angles, cid=st.sampled_from(qsim.CIRCUIT_IDS))
def test_kernel_symmetric_unit_diagonal(x, y, cid):
    c = qsim.build_circuit(cid)
    assert abs(qsim.kernel(c, x, y) - qsim.kernel(c, y, x)) < 1e-10
    assert abs(qsim.kernel(c, x, x) - 1.0) < 1e-10
    assert 0.0 <= qsim.kernel(c, x, y) <= 1.0


@pytest.mark.parametrize("cid", qsim.CIRCUIT_IDS)
def test_gram_psd_and_consistent(cid):
    c = qsim.build_circuit(cid)
    rng = np.random.default_rng(1)
    A = rng.uniform(0, np.pi, size=(50, 4))
    K = qsim.gram(c, A).entries
    assert np.allclose(K, K.T, atol=1e-10)
    assert np.allclose(np.diag(K), 1.0)
    assert np.linalg.eigvalsh(K).min() >= -1e-8
    B = rng.uniform(0, np.pi, size=(5, 4))
    C = qsim.gram(c, B, A).entries
    assert C[2, 7] == pytest.approx(qsim.kernel(c, B[2], A[7]), abs=1e-12)


def test_global_phase_invariance():
    c = qsim.build_circuit("HD")
    rng = np.random.default_rng(2)
    X = rng.uniform(0, np.pi, size=(6, 4))
    S = qsim.encode_batch(c, X)
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, size=(6, 1)))
    np.testing.assert_allclose(qsim.fidelity(S * phases, S), qsim.fidelity(S, S), atol=1e-12)


def test_domain_checked():
    c = qsim.build_circuit("SRx")
    with pytest.raises(ValueError):
        qsim.encode(c, [0, 0, 0, 4.0])
    with pytest.raises(ValueError):
        qsim.encode(c, [0, 0, 0])
    with pytest.raises(ValueError):
        qsim.encode(c, [0, np.nan, 0, 0])


def test_counter():
    qsim.KERNEL_COUNTER.reset()
    c = qsim.build_circuit("SRx")
    qsim.gram(c, np.zeros((3, 4)))
    qsim.kernel(c, np.zeros(4), np.ones(4))
    assert qsim.KERNEL_COUNTER.kernel_entries == 10


def test_gram_csv(tmp_path):
    c = qsim.build_circuit("ZFM")
    g = qsim.gram(c, np.full((2, 4), 0.3), row_ids=["a", "b"], col_ids=["a", "b"])
    g.to_csv(tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "ZFM,a,b" and lines[1].startswith("a,1.0")

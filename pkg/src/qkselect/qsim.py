"""Statevector simulation of the nine 4-qubit encoding circuits.

Amplitude index convention: qubit 0 is the least significant bit, so the
basis state ``|q3 q2 q1 q0>`` sits at index ``8*q3 + 4*q2 + 2*q1 + q0``.

Circuits are described as a list of layers, each layer an ordered list of
gate templates whose angles are small arithmetic expressions over the
feature vector ``x`` and the fixed trainable parameters ``p``. The same
templates are exported verbatim to the circuit manifest.
"""
from __future__ import annotations

import ast
import csv
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

N_QUBITS = 4
N_LAYERS = 2
DIM = 2**N_QUBITS

CIRCUIT_IDS = ("SRx", "HERx", "ZFM", "ZZFM", "HD", "YZ_CX", "HZY_CZ", "PZFM", "Chebyshev")

# Seed for the fixed (never optimized) trainable parameters, shared by every dataset.
PARAM_SEED = 20240917

ONE_QUBIT_KINDS = ("H", "RX", "RY", "RZ", "P")
TWO_QUBIT_KINDS = ("CX", "CZ", "CRZ", "SQISW")
PARAMETERIZED_KINDS = ("RX", "RY", "RZ", "P", "CRZ")

_S2 = 1.0 / np.sqrt(2.0)
_H = np.array([[1, 1], [1, -1]], dtype=complex) * _S2
_CX = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
_CZ = np.diag([1, 1, 1, -1]).astype(complex)
_SQISW = np.array(
    [[1, 0, 0, 0], [0, _S2, 1j * _S2, 0], [0, 1j * _S2, _S2, 0], [0, 0, 0, 1]], dtype=complex
)


class EvaluationCounter:
    """Thread-safe tally of kernel work (encoded states and kernel entries)."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.kernel_entries = 0
        self.gram_calls = 0

    def add(self, entries: int) -> None:
        with self._lock:
            self.kernel_entries += int(entries)
            self.gram_calls += 1

    def reset(self) -> None:
        with self._lock:
            self.kernel_entries = 0
            self.gram_calls = 0


KERNEL_COUNTER = EvaluationCounter()


@dataclass(frozen=True)
class Gate:
    kind: str
    targets: tuple[int, ...]
    angle: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        _validate_gate(self.kind, self.targets, self.angle is not None)


def _validate_gate(kind: str, targets: tuple[int, ...], has_angle: bool) -> None:
    if kind in ONE_QUBIT_KINDS:
        arity = 1
    elif kind in TWO_QUBIT_KINDS:
        arity = 2
    else:
        raise ValueError(f"unknown gate kind {kind!r}")
    if len(targets) != arity:
        raise ValueError(f"{kind} acts on {arity} qubit(s), got targets {targets}")
    for t in targets:
        if not 0 <= t < N_QUBITS:
            raise ValueError(f"qubit index {t} outside [0, {N_QUBITS})")
    if arity == 2 and targets[0] == targets[1]:
        raise ValueError(f"{kind} needs two distinct qubits, got {targets}")
    if has_angle != (kind in PARAMETERIZED_KINDS):
        raise ValueError(f"{kind} {'requires' if kind in PARAMETERIZED_KINDS else 'takes no'} angle")


_ALLOWED_NAMES = {"x", "p", "pi", "arccos"}
_CODE_CACHE: dict[str, object] = {}


def _compile_expr(expr: str):
    tree = ast.parse(expr, mode="eval")
    for node in ast.walk(tree):
        if isinstance(node, ast.Name) and node.id not in _ALLOWED_NAMES:
            raise ValueError(f"name {node.id!r} not allowed in angle expression {expr!r}")
        if isinstance(node, (ast.Attribute, ast.Lambda, ast.Starred)):
            raise ValueError(f"unsupported syntax in angle expression {expr!r}")
    return compile(tree, "<angle>", "eval")


def _safe_arccos(v):
    return np.arccos(np.clip(v, -1.0, 1.0))


@dataclass(frozen=True)
class GateTemplate:
    """A gate whose angle is an expression such as ``2*x[1]`` or ``p[3]*x[0]``."""

    kind: str
    targets: tuple[int, ...]
    expr: str | None = None

    def __post_init__(self):
        _validate_gate(self.kind, tuple(self.targets), self.expr is not None)
        if self.expr is not None and self.expr not in _CODE_CACHE:
            _CODE_CACHE[self.expr] = _compile_expr(self.expr)

    def angles(self, X: np.ndarray, p: np.ndarray) -> np.ndarray:
        """Angle per sample for a batch ``X`` of shape (n, 4)."""
        code = _CODE_CACHE[self.expr]
        env = {"x": X.T, "p": p, "pi": np.pi, "arccos": _safe_arccos, "__builtins__": {}}
        return np.broadcast_to(np.asarray(eval(code, env), dtype=float), (X.shape[0],))


@dataclass
class EncodingCircuit:
    id: str
    layers: list[list[GateTemplate]]
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def templates(self) -> list[GateTemplate]:
        return [g for layer in self.layers for g in layer]

    @property
    def n_gates(self) -> int:
        return sum(len(layer) for layer in self.layers)

    @property
    def n_params(self) -> int:
        return len(self.params)

    @property
    def depth(self) -> int:
        return circuit_depth(self.layers)

    @property
    def two_qubit_kind(self) -> str | None:
        kinds = {g.kind for g in self.templates if g.kind in TWO_QUBIT_KINDS}
        if len(kinds) > 1:
            raise ValueError(f"{self.id} mixes two-qubit kinds {sorted(kinds)}")
        return kinds.pop() if kinds else None

    def bind(self, x: Sequence[float]) -> list[Gate]:
        """Concrete gate list for a single feature vector."""
        X = _check_domain(np.atleast_2d(np.asarray(x, dtype=float)))
        gates = []
        for t in self.templates:
            angle = None if t.expr is None else float(t.angles(X, self.params)[0])
            gates.append(Gate(t.kind, t.targets, angle))
        return gates

    def summary(self) -> dict:
        return {
            "id": self.id,
            "params": self.n_params,
            "gates": self.n_gates,
            "depth": self.depth,
            "two_qubit_gate": self.two_qubit_kind,
        }


def circuit_depth(layers: Sequence[Sequence[GateTemplate | Gate]]) -> int:
    """Greedy ASAP depth; layers are separated by a barrier, so their depths add."""
    total = 0
    for layer in layers:
        free = [0] * N_QUBITS
        for g in layer:
            level = max(free[q] for q in g.targets) + 1
            for q in g.targets:
                free[q] = level
        total += max(free)
    return total


# ---------------------------------------------------------------------------
# circuit templates

_PAIRS_CHAIN = ((0, 1), (1, 2), (2, 3))
_PAIRS_RING = ((0, 1), (1, 2), (2, 3), (3, 0))
# Same ring, ordered so the entangling block has depth 3.
_PAIRS_RING_STAGGERED = ((1, 2), (0, 1), (2, 3), (3, 0))


def _g(kind, targets, expr=None) -> GateTemplate:
    if isinstance(targets, int):
        targets = (targets,)
    return GateTemplate(kind, tuple(targets), expr)


def _srx(layer: int) -> list[GateTemplate]:
    return [_g("RX", q, f"x[{q}]") for q in range(N_QUBITS)]


def _herx(layer: int) -> list[GateTemplate]:
    return _srx(layer) + [_g("CX", pair) for pair in _PAIRS_CHAIN]


def _zfm(layer: int) -> list[GateTemplate]:
    return [_g("H", q) for q in range(N_QUBITS)] + [_g("P", q, f"2*x[{q}]") for q in range(N_QUBITS)]


def _zzfm(layer: int) -> list[GateTemplate]:
    gates = _zfm(layer)
    for i, j in _PAIRS_CHAIN:
        gates += [
            _g("CX", (i, j)),
            _g("P", j, f"2*(pi - x[{i}])*(pi - x[{j}])"),
            _g("CX", (i, j)),
        ]
    return gates


def _hd(layer: int) -> list[GateTemplate]:
    gates = [_g("H", q) for q in range(N_QUBITS)] if layer == 0 else []
    for q in range(N_QUBITS):
        base = 3 * (layer * N_QUBITS + q)
        for r, kind in enumerate(("RZ", "RY", "RZ")):
            gates.append(_g(kind, q, f"x[{(base + r) % N_QUBITS}]"))
    if layer < N_LAYERS - 1:
        gates += [_g("SQISW", pair) for pair in ((0, 1), (2, 3), (1, 2))]
    return gates


def _yz_cx(layer: int) -> list[GateTemplate]:
    off = 2 * N_QUBITS * layer
    gates = [_g("RY", q, f"p[{off + q}]*x[{q}]") for q in range(N_QUBITS)]
    gates += [_g("RZ", q, f"p[{off + N_QUBITS + q}]*x[{q}]") for q in range(N_QUBITS)]
    return gates + [_g("CX", (0, 1)), _g("CX", (2, 3))]


def _hzy_cz(layer: int) -> list[GateTemplate]:
    off = 2 * N_QUBITS * layer
    gates = [_g("H", q) for q in range(N_QUBITS)] if layer == 0 else []
    gates += [_g("RZ", q, f"x[{q}]") for q in range(N_QUBITS)]
    gates += [_g("RY", q, f"p[{off + q}]") for q in range(N_QUBITS)]
    gates += [_g("CRZ", pair, f"p[{off + N_QUBITS + k}]") for k, pair in enumerate(_PAIRS_RING)]
    return gates


def _pzfm(layer: int) -> list[GateTemplate]:
    off = N_QUBITS * layer
    gates = [_g("H", q) for q in range(N_QUBITS)]
    gates += [_g("P", q, f"p[{off + q}]*x[{q}]") for q in range(N_QUBITS)]
    return gates + [_g("CX", pair) for pair in _PAIRS_CHAIN]


def _chebyshev(layer: int) -> list[GateTemplate]:
    off = 3 * N_QUBITS * layer
    gates = [_g("RX", q, f"p[{off + q}]*arccos(2*x[{q}]/pi - 1)") for q in range(N_QUBITS)]
    gates += [_g("RY", q, f"p[{off + N_QUBITS + q}]") for q in range(N_QUBITS)]
    gates += [
        _g("CRZ", pair, f"p[{off + 2 * N_QUBITS + k}]") for k, pair in enumerate(_PAIRS_RING_STAGGERED)
    ]
    return gates


_BUILDERS = {
    "SRx": (_srx, 0),
    "HERx": (_herx, 0),
    "ZFM": (_zfm, 0),
    "ZZFM": (_zzfm, 0),
    "HD": (_hd, 0),
    "YZ_CX": (_yz_cx, 16),
    "HZY_CZ": (_hzy_cz, 16),
    "PZFM": (_pzfm, 8),
    "Chebyshev": (_chebyshev, 24),
}

# (#params, #gates, depth, two-qubit gate) at L = 2 layers on 4 qubits.
REFERENCE_STRUCTURE = {
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


def n_params(circuit_id: str) -> int:
    if circuit_id not in _BUILDERS:
        raise ValueError(f"unknown circuit {circuit_id!r}; expected one of {CIRCUIT_IDS}")
    return _BUILDERS[circuit_id][1]


def default_params(circuit_id: str, seed: int = PARAM_SEED) -> np.ndarray:
    """Fixed trainable parameters: uniform on [0, 2*pi), one stream per circuit."""
    k = n_params(circuit_id)
    rng = np.random.default_rng([seed, CIRCUIT_IDS.index(circuit_id)])
    return rng.uniform(0.0, 2.0 * np.pi, size=k)


def build_circuit(circuit_id: str, params: Sequence[float] | None = None, seed: int = PARAM_SEED) -> EncodingCircuit:
    """Instantiate one of the nine encoding circuits.

    ``params`` defaults to :func:`default_params` drawn with ``seed``; an
    explicit vector must have exactly the circuit's parameter count.
    """
    builder, k = _BUILDERS.get(circuit_id, (None, None))
    if builder is None:
        raise ValueError(f"unknown circuit {circuit_id!r}; expected one of {CIRCUIT_IDS}")
    if params is None:
        params = default_params(circuit_id, seed)
    params = np.asarray(params, dtype=float).reshape(-1)
    if len(params) != k:
        raise ValueError(f"{circuit_id} takes {k} parameters, got {len(params)}")
    return EncodingCircuit(circuit_id, [builder(layer) for layer in range(N_LAYERS)], params)


def all_circuits(seed: int = PARAM_SEED) -> list[EncodingCircuit]:
    return [build_circuit(cid, seed=seed) for cid in CIRCUIT_IDS]


def audit_circuits(seed: int = PARAM_SEED) -> dict[str, tuple[tuple, tuple, bool]]:
    """Compare each circuit's structure to the reference table: id -> (got, expected, ok)."""
    out = {}
    for c in all_circuits(seed):
        got = (c.n_params, c.n_gates, c.depth, c.two_qubit_kind)
        out[c.id] = (got, REFERENCE_STRUCTURE[c.id], got == REFERENCE_STRUCTURE[c.id])
    return out


def circuit_manifest(seed: int = PARAM_SEED) -> dict:
    """Symbolic description of every circuit (the content of ``circuits.yaml``)."""
    entries = []
    for c in all_circuits(seed):
        entries.append(
            {
                "id": c.id,
                "n_params": c.n_params,
                "params": [float(v) for v in c.params],
                "layers": [
                    [
                        {"gate": g.kind, "qubits": list(g.targets), **({"angle": g.expr} if g.expr else {})}
                        for g in layer
                    ]
                    for layer in c.layers
                ],
            }
        )
    return {
        "format_version": 1,
        "n_qubits": N_QUBITS,
        "n_layers": N_LAYERS,
        "param_seed": seed,
        "depth_rule": "ASAP within each layer; layers separated by a barrier",
        "qubit_order": "qubit 0 is the least significant amplitude bit",
        "circuits": entries,
    }


CIRCUIT_MANIFEST = resources.files("qkselect") / "data" / "circuits.yaml"


def write_circuit_manifest(path: str | Path, seed: int = PARAM_SEED) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# Generated by `qkselect audit-circuits --write-manifest`; do not edit by hand.\n")
        yaml.safe_dump(circuit_manifest(seed), fh, sort_keys=False, default_flow_style=None, width=100)


def load_circuit_manifest(path: str | Path | None = None) -> list[EncodingCircuit]:
    """Rebuild circuits from a manifest file (the shipped one by default)."""
    text = Path(path).read_text(encoding="utf-8") if path else CIRCUIT_MANIFEST.read_text(encoding="utf-8")
    data = yaml.safe_load(text)
    out = []
    for entry in data["circuits"]:
        layers = [[GateTemplate(g["gate"], tuple(g["qubits"]), g.get("angle")) for g in layer] for layer in entry["layers"]]
        out.append(EncodingCircuit(entry["id"], layers, np.asarray(entry.get("params", []), dtype=float)))
    return out


# ---------------------------------------------------------------------------
# gate matrices and state evolution


def _rx(t):
    c, s = np.cos(t / 2), np.sin(t / 2)
    m = np.empty(t.shape + (2, 2), dtype=complex)
    m[..., 0, 0] = c
    m[..., 0, 1] = -1j * s
    m[..., 1, 0] = -1j * s
    m[..., 1, 1] = c
    return m


def _ry(t):
    c, s = np.cos(t / 2), np.sin(t / 2)
    m = np.empty(t.shape + (2, 2), dtype=complex)
    m[..., 0, 0] = c
    m[..., 0, 1] = -s
    m[..., 1, 0] = s
    m[..., 1, 1] = c
    return m


def _rz(t):
    m = np.zeros(t.shape + (2, 2), dtype=complex)
    m[..., 0, 0] = np.exp(-0.5j * t)
    m[..., 1, 1] = np.exp(0.5j * t)
    return m


def _p(t):
    m = np.zeros(t.shape + (2, 2), dtype=complex)
    m[..., 0, 0] = 1.0
    m[..., 1, 1] = np.exp(1j * t)
    return m


def _crz(t):
    m = np.zeros(t.shape + (4, 4), dtype=complex)
    m[..., 0, 0] = 1.0
    m[..., 1, 1] = 1.0
    m[..., 2, 2] = np.exp(-0.5j * t)
    m[..., 3, 3] = np.exp(0.5j * t)
    return m


_PARAM_MATRICES = {"RX": _rx, "RY": _ry, "RZ": _rz, "P": _p, "CRZ": _crz}
_FIXED_MATRICES = {"H": _H, "CX": _CX, "CZ": _CZ, "SQISW": _SQISW}


def gate_matrix(kind: str, angle: float | None = None) -> np.ndarray:
    """Unitary of a gate. Two-qubit matrices use index ``2*bit(first) + bit(second)``."""
    if kind in _FIXED_MATRICES:
        return _FIXED_MATRICES[kind].copy()
    if kind in _PARAM_MATRICES:
        if angle is None:
            raise ValueError(f"{kind} requires an angle")
        return _PARAM_MATRICES[kind](np.asarray(float(angle)))
    raise ValueError(f"unknown gate kind {kind!r}")


def _apply_batch(states: np.ndarray, mats: np.ndarray, targets: tuple[int, ...]) -> np.ndarray:
    """Apply a (possibly per-sample) k-qubit matrix to states of shape (n, 16)."""
    n = states.shape[0]
    k = len(targets)
    psi = states.reshape((n,) + (2,) * N_QUBITS)
    axes = [N_QUBITS - q for q in targets]
    dest = list(range(N_QUBITS + 1 - k, N_QUBITS + 1))
    psi = np.moveaxis(psi, axes, dest)
    shape = psi.shape
    flat = psi.reshape(n, -1, 2**k)
    if mats.ndim == 2:
        out = flat @ mats.T
    else:
        out = np.einsum("nij,nmj->nmi", mats, flat)
    return np.moveaxis(out.reshape(shape), dest, axes).reshape(n, DIM)


def zero_state() -> np.ndarray:
    s = np.zeros(DIM, dtype=complex)
    s[0] = 1.0
    return s


def apply_gate(state: np.ndarray, gate: Gate) -> np.ndarray:
    """Return ``gate`` applied to a single 16-amplitude state."""
    state = np.asarray(state, dtype=complex)
    if state.shape != (DIM,):
        raise ValueError(f"state must have {DIM} amplitudes, got shape {state.shape}")
    m = gate_matrix(gate.kind, gate.angle)
    return _apply_batch(state[None, :], m, gate.targets)[0]


def _check_domain(X: np.ndarray) -> np.ndarray:
    if X.ndim != 2 or X.shape[1] != N_QUBITS:
        raise ValueError(f"expected samples with {N_QUBITS} features, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    if X.min(initial=0.0) < -1e-12 or X.max(initial=0.0) > np.pi + 1e-12:
        raise ValueError("features must lie in [0, pi]; run preprocessing first")
    return X


def encode_batch(circuit: EncodingCircuit, X: np.ndarray) -> np.ndarray:
    """Encoded states ``U(x)|0000>`` for every row of ``X``; shape (n, 16)."""
    X = _check_domain(np.atleast_2d(np.asarray(X, dtype=float)))
    n = X.shape[0]
    states = np.zeros((n, DIM), dtype=complex)
    states[:, 0] = 1.0
    for t in circuit.templates:
        if t.expr is None:
            mats = _FIXED_MATRICES[t.kind]
        else:
            mats = _PARAM_MATRICES[t.kind](t.angles(X, circuit.params))
        states = _apply_batch(states, mats, t.targets)
    return states


def encode(circuit: EncodingCircuit, x: Sequence[float]) -> np.ndarray:
    return encode_batch(circuit, np.asarray(x, dtype=float).reshape(1, -1))[0]


def fidelity(states_a: np.ndarray, states_b: np.ndarray) -> np.ndarray:
    """Squared overlaps ``|<a_i|b_j>|^2`` between two batches of states."""
    return np.abs(np.conj(states_a) @ states_b.T) ** 2


def kernel(circuit: EncodingCircuit, x: Sequence[float], x_prime: Sequence[float]) -> float:
    states = encode_batch(circuit, np.vstack([np.asarray(x, float), np.asarray(x_prime, float)]))
    KERNEL_COUNTER.add(1)
    return float(min(1.0, fidelity(states[:1], states[1:])[0, 0]))


@dataclass
class GramMatrix:
    entries: np.ndarray
    circuit_id: str
    row_ids: list = field(default_factory=list)
    col_ids: list = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        rows = self.row_ids or list(range(self.entries.shape[0]))
        cols = self.col_ids or list(range(self.entries.shape[1]))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([self.circuit_id] + [str(c) for c in cols])
            for rid, row in zip(rows, self.entries):
                w.writerow([str(rid)] + [repr(float(v)) for v in row])


def gram(
    circuit: EncodingCircuit,
    A: np.ndarray,
    B: np.ndarray | None = None,
    row_ids: Sequence | None = None,
    col_ids: Sequence | None = None,
) -> GramMatrix:
    """Fidelity Gram matrix between the rows of ``A`` and ``B`` (``B=None`` means ``A``).

    Each sample is encoded once. The square case is symmetrized with an
    exact unit diagonal.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    states_a = encode_batch(circuit, A)
    if B is None:
        K = fidelity(states_a, states_a)
        K = 0.5 * (K + K.T)
        np.fill_diagonal(K, 1.0)
    else:
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if B.shape[1] != A.shape[1]:
            raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
        K = fidelity(states_a, encode_batch(circuit, B))
    np.clip(K, 0.0, 1.0, out=K)
    KERNEL_COUNTER.add(K.size)
    return GramMatrix(
        K,
        circuit.id,
        list(row_ids) if row_ids is not None else [],
        list(col_ids) if col_ids is not None else [],
    )

"""Small statevector simulator for parameterized circuits.

Native gates are RY, RZ, H, X, CZ and CNOT. Qubit 0 is the most significant
bit of the basis index, matching :mod:`nisqpf.pauli`.

Noise is sampled with quantum trajectories instead of density matrices: each
shot draws its own Pauli errors after the entangling gates, and the readout of
every bit is flipped independently.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import cos, pi, sin, sqrt

import numpy as np

from .pauli import PauliDecomposition, PauliString

SINGLE_QUBIT_GATES = ("RY", "RZ", "H", "X")
TWO_QUBIT_GATES = ("CZ", "CNOT")
ROTATIONS = ("RY", "RZ")

_H = np.array([[1, 1], [1, -1]], dtype=complex) / sqrt(2)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_PAULI_1Q = (
    np.eye(2, dtype=complex),
    _X,
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.diag([1, -1]).astype(complex),
)


def _ry(t: float) -> np.ndarray:
    c, s = cos(t / 2), sin(t / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _rz(t: float) -> np.ndarray:
    return np.array([[np.exp(-0.5j * t), 0], [0, np.exp(0.5j * t)]], dtype=complex)


@dataclass(frozen=True)
class Gate:
    """One gate application. Rotations take either a bound ``angle`` or a
    ``param`` index into the circuit's parameter vector (scaled by ``sign``,
    which adjoint circuits set to -1)."""

    name: str
    qubits: tuple[int, ...]
    param: int | None = None
    angle: float | None = None
    sign: int = 1

    def __post_init__(self):
        if self.name in SINGLE_QUBIT_GATES:
            if len(self.qubits) != 1:
                raise ValueError(f"{self.name} acts on one qubit")
        elif self.name in TWO_QUBIT_GATES:
            if len(self.qubits) != 2 or self.qubits[0] == self.qubits[1]:
                raise ValueError(f"{self.name} needs two distinct qubits")
        else:
            raise ValueError(f"unknown gate {self.name!r}")
        if self.name in ROTATIONS and (self.param is None) == (self.angle is None):
            raise ValueError(f"{self.name} needs exactly one of param/angle")

    @property
    def entangling(self) -> bool:
        return self.name in TWO_QUBIT_GATES


@dataclass
class ParamCircuit:
    n_qubits: int
    gates: list[Gate] = field(default_factory=list)

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("a circuit needs at least one qubit")
        for g in self.gates:
            self._check(g)

    def _check(self, g: Gate) -> None:
        if any(q < 0 or q >= self.n_qubits for q in g.qubits):
            raise ValueError(f"{g.name} on {g.qubits} outside {self.n_qubits} qubits")

    def append(self, g: Gate) -> "ParamCircuit":
        self._check(g)
        self.gates.append(g)
        return self

    def ry(self, q: int, param: int | None = None, angle: float | None = None):
        return self.append(Gate("RY", (q,), param, angle))

    def rz(self, q: int, param: int | None = None, angle: float | None = None):
        return self.append(Gate("RZ", (q,), param, angle))

    def h(self, q: int):
        return self.append(Gate("H", (q,)))

    def x(self, q: int):
        return self.append(Gate("X", (q,)))

    def cz(self, q1: int, q2: int):
        return self.append(Gate("CZ", (q1, q2)))

    def cnot(self, control: int, target: int):
        return self.append(Gate("CNOT", (control, target)))

    @property
    def n_params(self) -> int:
        idx = sorted({g.param for g in self.gates if g.param is not None})
        if idx != list(range(len(idx))):
            raise ValueError(f"parameter indices are not dense: {idx}")
        return len(idx)

    def inverse(self) -> "ParamCircuit":
        """Adjoint circuit; rotation parameters keep their indices, negated."""
        inv = ParamCircuit(self.n_qubits)
        for g in reversed(self.gates):
            inv.gates.append(_adjoint_gate(g))
        return inv


@dataclass
class StateVector:
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        n = self.amplitudes.size.bit_length() - 1
        if self.amplitudes.ndim != 1 or 2 ** n != self.amplitudes.size or n < 1:
            raise ValueError("amplitudes must be a vector of length 2**n, n >= 1")
        if abs(np.linalg.norm(self.amplitudes) - 1.0) > 1e-10:
            raise ValueError("state is not normalised")

    @property
    def n_qubits(self) -> int:
        return self.amplitudes.size.bit_length() - 1

    def probabilities(self) -> np.ndarray:
        p = np.abs(self.amplitudes) ** 2
        return p / p.sum()

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


@dataclass(frozen=True)
class NoiseModel:
    """Two-qubit depolarizing after every entangling gate plus readout flips.

    Defaults are the IBMQ belem medians (CNOT error 1.235e-2, readout error
    2.85e-2). The depolarizing probability is the chance that one of the 15
    non-identity two-qubit Paulis hits the gate's qubits.
    """

    two_qubit_depolarizing_prob: float = 1.235e-2
    readout_flip_prob: float = 2.85e-2
    enabled: bool = True

    def __post_init__(self):
        for name in ("two_qubit_depolarizing_prob", "readout_flip_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


NOISELESS = NoiseModel(0.0, 0.0, enabled=False)
BELEM = NoiseModel()


@dataclass
class MeasurementCounts:
    counts: dict[int, int]
    shots: int

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError("shots must be positive")
        if sum(self.counts.values()) != self.shots:
            raise ValueError("counts do not sum to shots")

    def frequencies(self, dim: int) -> np.ndarray:
        f = np.zeros(dim)
        for k, c in self.counts.items():
            if k < dim:
                f[k] = c
        return f / self.shots


# -- gate application -------------------------------------------------------

def _apply_1q(psi: np.ndarray, u: np.ndarray, q: int, n: int) -> np.ndarray:
    """Apply a 2x2 ``u`` to qubit ``q`` of the flat state ``psi``."""
    v = psi.reshape(1 << q, 2, 1 << (n - q - 1))
    a, b = v[:, 0, :], v[:, 1, :]
    out = np.empty_like(v)
    out[:, 0, :] = u[0, 0] * a + u[0, 1] * b
    out[:, 1, :] = u[1, 0] * a + u[1, 1] * b
    return out.reshape(-1)


@lru_cache(maxsize=None)
def _bit_masks(n: int) -> np.ndarray:
    k = np.arange(1 << n)
    return np.array([(k >> (n - 1 - q)) & 1 for q in range(n)], dtype=bool)


@lru_cache(maxsize=None)
def _cnot_perm(n: int, control: int, target: int) -> np.ndarray:
    bits = _bit_masks(n)
    return np.arange(1 << n) ^ (bits[control] * (1 << (n - 1 - target)))


@lru_cache(maxsize=None)
def _cz_signs(n: int, a: int, b: int) -> np.ndarray:
    bits = _bit_masks(n)
    return np.where(bits[a] & bits[b], -1.0, 1.0)


@lru_cache(maxsize=None)
def _x_perm(n: int, q: int) -> np.ndarray:
    return np.arange(1 << n) ^ (1 << (n - 1 - q))


def _gate_angle(g: Gate, params) -> float:
    if g.param is not None:
        return g.sign * float(params[g.param])
    return float(g.angle)


def _apply_gate(psi: np.ndarray, g: Gate, params, n: int) -> np.ndarray:
    name = g.name
    if name == "RY":
        return _apply_1q(psi, _ry(_gate_angle(g, params)), g.qubits[0], n)
    if name == "RZ":
        return _apply_1q(psi, _rz(_gate_angle(g, params)), g.qubits[0], n)
    if name == "H":
        return _apply_1q(psi, _H, g.qubits[0], n)
    if name == "X":
        return psi[_x_perm(n, g.qubits[0])]
    if name == "CZ":
        return psi * _cz_signs(n, *g.qubits)
    return psi[_cnot_perm(n, *g.qubits)]


def _check_params(circuit: ParamCircuit, params) -> np.ndarray:
    params = np.asarray(params if params is not None else [], dtype=float).ravel()
    if params.size != circuit.n_params:
        raise ValueError(
            f"circuit takes {circuit.n_params} parameters, got {params.size}"
        )
    return params


def apply_circuit(circuit: ParamCircuit, params, amplitudes) -> np.ndarray:
    """Apply ``circuit`` to an arbitrary input amplitude vector."""
    params = _check_params(circuit, params)
    n = circuit.n_qubits
    psi = np.array(amplitudes, dtype=complex).reshape(-1)
    if psi.size != 1 << n:
        raise ValueError(f"state has {psi.size} amplitudes, circuit acts on {n} qubits")
    for g in circuit.gates:
        psi = _apply_gate(psi, g, params, n)
    return psi


def vjp(circuit: ParamCircuit, params, cotangent) -> np.ndarray:
    """Reverse-mode gradient ``d/dw 2 Re <lam|U(w)|0>`` with ``lam`` held fixed.

    For a real function ``f(psi)`` pass ``lam = df/dpsi*``; the result is then
    ``df/dw``. Costs one forward and one backward sweep.
    """
    params = _check_params(circuit, params)
    n = circuit.n_qubits
    states = [zero_state(n)]
    for g in circuit.gates:
        states.append(_apply_gate(states[-1], g, params, n))
    mu = np.asarray(cotangent, dtype=complex)
    grad = np.zeros(params.size)
    for i in range(len(circuit.gates) - 1, -1, -1):
        g = circuit.gates[i]
        if g.param is not None:
            t = _gate_angle(g, params)
            d = 0.5 * g.sign * (_ry(t + pi) if g.name == "RY" else _rz(t + pi))
            grad[g.param] += 2.0 * np.vdot(mu, _apply_1q(states[i], d, g.qubits[0], n)).real
        mu = _apply_gate(mu, _adjoint_gate(g), params, n)
    return grad


def _adjoint_gate(g: Gate) -> Gate:
    if g.param is not None:
        return Gate(g.name, g.qubits, param=g.param, sign=-g.sign)
    if g.angle is not None:
        return Gate(g.name, g.qubits, angle=-g.angle)
    return g


def zero_state(n: int) -> np.ndarray:
    psi = np.zeros(2 ** n, dtype=complex)
    psi[0] = 1.0
    return psi


def simulate(circuit: ParamCircuit, params=None) -> StateVector:
    """Noiseless ``U(params)|0...0>``."""
    return StateVector(apply_circuit(circuit, params, zero_state(circuit.n_qubits)))


def _as_decomposition(observable) -> PauliDecomposition:
    if isinstance(observable, PauliDecomposition):
        return observable
    if isinstance(observable, PauliString):
        return PauliDecomposition(((1.0, observable),), observable.n_qubits)
    if isinstance(observable, str):
        return _as_decomposition(PauliString(observable))
    return PauliDecomposition.from_dict(dict(observable))


def expectation(state: StateVector, observable) -> float:
    """``<psi|O|psi>`` for a weighted Pauli sum ``O``."""
    obs = _as_decomposition(observable)
    if obs.n_qubits != state.n_qubits:
        raise ValueError(
            f"observable on {obs.n_qubits} qubits, state on {state.n_qubits}"
        )
    psi = state.amplitudes
    total = 0.0 + 0.0j
    for c, s in obs.terms:
        total += c * np.vdot(psi, s.matrix() @ psi)
    return float(total.real)


# -- sampling ---------------------------------------------------------------

def _flip_readout(outcomes: np.ndarray, n: int, p: float, rng) -> np.ndarray:
    if p <= 0.0:
        return outcomes
    flips = rng.random((outcomes.size, n)) < p
    weights = 1 << np.arange(n - 1, -1, -1)
    return outcomes ^ (flips.astype(np.int64) @ weights)


def _counts_from_outcomes(outcomes: np.ndarray, shots: int) -> MeasurementCounts:
    keys, vals = np.unique(outcomes, return_counts=True)
    return MeasurementCounts({int(k): int(v) for k, v in zip(keys, vals)}, shots)


def sample(
    state: StateVector, shots: int, noise: NoiseModel | None = None, seed: int = 0
) -> MeasurementCounts:
    """Measure every qubit ``shots`` times, with optional readout flips."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = np.random.default_rng(seed)
    probs = state.probabilities()
    outcomes = rng.choice(probs.size, size=shots, p=probs)
    if noise is not None and noise.enabled:
        outcomes = _flip_readout(outcomes, state.n_qubits, noise.readout_flip_prob, rng)
    return _counts_from_outcomes(outcomes, shots)


def _pauli_pair(code: int) -> tuple[np.ndarray, np.ndarray]:
    return _PAULI_1Q[code // 4], _PAULI_1Q[code % 4]


def run_shots(
    circuit: ParamCircuit,
    params,
    shots: int,
    noise: NoiseModel | None = None,
    seed: int = 0,
) -> MeasurementCounts:
    """Execute ``circuit`` shot by shot under ``noise`` and measure all qubits.

    Shots sharing the same depolarizing-error pattern are simulated once and
    then sampled together.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    params = _check_params(circuit, params)
    if noise is None or not noise.enabled:
        return sample(simulate(circuit, params), shots, None, seed)
    rng = np.random.default_rng(seed)
    n = circuit.n_qubits
    ent = [i for i, g in enumerate(circuit.gates) if g.entangling]
    # pattern[s, e] = 0 (no error) or 1..15 (index of the two-qubit Pauli)
    hit = rng.random((shots, len(ent))) < noise.two_qubit_depolarizing_prob
    which = rng.integers(1, 16, size=(shots, len(ent)))
    patterns = np.where(hit, which, 0)
    if len(ent):
        uniq, inverse = np.unique(patterns, axis=0, return_inverse=True)
        inverse = inverse.ravel()
    else:
        uniq, inverse = np.zeros((1, 0), dtype=int), np.zeros(shots, dtype=int)
    outcomes = np.empty(shots, dtype=np.int64)
    for u, pattern in enumerate(uniq):
        errors = {ent[e]: int(c) for e, c in enumerate(pattern) if c}
        psi = zero_state(n)
        for i, g in enumerate(circuit.gates):
            psi = _apply_gate(psi, g, params, n)
            if i in errors:
                pa, pb = _pauli_pair(errors[i])
                psi = _apply_1q(_apply_1q(psi, pa, g.qubits[0], n), pb, g.qubits[1], n)
        probs = np.abs(psi) ** 2
        members = np.flatnonzero(inverse == u)
        outcomes[members] = rng.choice(probs.size, size=members.size, p=probs / probs.sum())
    outcomes = _flip_readout(outcomes, n, noise.readout_flip_prob, rng)
    return _counts_from_outcomes(outcomes, shots)


# -- Hadamard test ----------------------------------------------------------

def hadamard_test(
    unitary_a: PauliString,
    prep_b: ParamCircuit,
    ansatz: ParamCircuit,
    params,
    shots: int | None = None,
    seed: int = 0,
    prep_params=None,
) -> float:
    """Estimate ``Re <b| A U(params) |0>`` with ``|b> = prep_b|0>``.

    ``shots=None`` is exact mode: the overlap is read off the two statevectors.
    Otherwise the ancilla-controlled circuit ``H . c-(B^dag A U) . H`` is
    simulated and the ancilla is sampled; the estimate is ``(n0 - n1)/shots``.
    """
    n = ansatz.n_qubits
    if prep_b.n_qubits != n or unitary_a.n_qubits != n:
        raise ValueError("Hadamard test operands act on different qubit counts")
    psi = simulate(ansatz, params).amplitudes
    a_psi = unitary_a.matrix() @ psi
    if shots is None:
        b = simulate(prep_b, prep_params).amplitudes
        return float(np.vdot(b, a_psi).real)
    if shots < 1:
        raise ValueError("shots must be >= 1")
    # ancilla is the leading qubit; after the first H both branches hold |0...0>
    branch0 = zero_state(n) / sqrt(2)
    branch1 = apply_circuit(prep_b.inverse(), prep_params, a_psi) / sqrt(2)
    # final H on the ancilla
    p0 = float(np.linalg.norm((branch0 + branch1) / sqrt(2)) ** 2)
    p0 = min(max(p0, 0.0), 1.0)
    rng = np.random.default_rng(seed)
    n0 = int(rng.binomial(shots, p0))
    return (2 * n0 - shots) / shots


# -- circuit statistics -----------------------------------------------------

@dataclass(frozen=True)
class GateReport:
    depth: int
    cnot_count: int
    total_gates: int

    def __iter__(self):
        return iter((self.depth, self.cnot_count, self.total_gates))


def depth_and_gate_report(circuit: ParamCircuit) -> GateReport:
    """Greedy ASAP layering; CZ and CNOT both count as entangling gates."""
    level = [0] * circuit.n_qubits
    for g in circuit.gates:
        layer = 1 + max(level[q] for q in g.qubits)
        for q in g.qubits:
            level[q] = layer
    n_ent = sum(g.entangling for g in circuit.gates)
    return GateReport(max(level, default=0), n_ent, len(circuit.gates))

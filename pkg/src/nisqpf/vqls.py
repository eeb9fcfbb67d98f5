"""Variational quantum linear solver on the built-in simulator.

The global cost ``1 - |<b|Psi>|^2`` with ``|Psi> = A U(w)|0> / ||A U(w)|0>||``
is minimised over the RY angles of a layered hardware-efficient ansatz.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .pauli import PauliDecomposition, decompose_matrix, reconstruct
from .sim import ParamCircuit, expectation, hadamard_test, simulate, vjp

log = logging.getLogger(__name__)

ENTANGLERS = ("cnot-linear", "cz-linear", "cz-ring")


class SingularDirectionError(ArithmeticError):
    """``A U(w)|0>`` (or its norm estimate) vanished."""


@dataclass(frozen=True)
class AnsatzConfig:
    n_qubits: int
    n_layers: int = 2
    entangler: str = "cnot-linear"

    def __post_init__(self):
        if self.n_qubits < 1 or self.n_layers < 1:
            raise ValueError("need n_qubits >= 1 and n_layers >= 1")
        if self.entangler not in ENTANGLERS:
            raise ValueError(f"entangler must be one of {ENTANGLERS}")

    @property
    def n_params(self) -> int:
        return self.n_qubits * (self.n_layers + 1)


def _entangling_pairs(n: int, entangler: str) -> list[tuple[int, int]]:
    pairs = [(q, q + 1) for q in range(n - 1)]
    if entangler == "cz-ring" and n > 2:
        pairs.append((n - 1, 0))
    return pairs


def build_ansatz(config: AnsatzConfig) -> ParamCircuit:
    """RY encoding layer followed by ``n_layers`` x [entanglers + RY layer]."""
    n = config.n_qubits
    c = ParamCircuit(n)
    k = 0
    for q in range(n):
        c.ry(q, param=k)
        k += 1
    for _ in range(config.n_layers):
        for a, b in _entangling_pairs(n, config.entangler):
            if config.entangler.startswith("cnot"):
                c.cnot(a, b)
            else:
                c.cz(a, b)
        for q in range(n):
            c.ry(q, param=k)
            k += 1
    return c


def basis_state_prep(n_qubits: int, j: int) -> ParamCircuit:
    """X gates preparing ``|j>`` (qubit 0 is the most significant bit)."""
    if not 0 <= j < 2 ** n_qubits:
        raise ValueError(f"basis index {j} out of range for {n_qubits} qubits")
    c = ParamCircuit(n_qubits)
    for q in range(n_qubits):
        if (j >> (n_qubits - 1 - q)) & 1:
            c.x(q)
    return c


@dataclass
class VqlsProblem:
    """``A x = b`` with ``A`` in Pauli form and ``|b> = b_prep|0>``.

    ``b_norm`` is the Euclidean norm of the physical right-hand side, so
    :func:`solution_norm` returns the physical ``||x||``.
    """

    a_decomp: PauliDecomposition
    b_prep: ParamCircuit
    original_dim: int
    b_norm: float = 1.0
    a_matrix: np.ndarray = field(init=False, repr=False)
    ata_decomp: PauliDecomposition = field(init=False, repr=False)
    b_state: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.b_prep.n_qubits != self.a_decomp.n_qubits:
            raise ValueError("b_prep and A act on different qubit counts")
        if not 1 <= self.original_dim <= self.a_decomp.dim:
            raise ValueError("original_dim out of range")
        self.a_matrix = reconstruct(self.a_decomp)
        self.ata_decomp = decompose_matrix(self.a_matrix.conj().T @ self.a_matrix)
        self.b_state = simulate(self.b_prep).amplitudes

    @property
    def n_qubits(self) -> int:
        return self.a_decomp.n_qubits

    @classmethod
    def basis(cls, a_decomp: PauliDecomposition, j: int, original_dim: int | None = None):
        n = a_decomp.n_qubits
        return cls(a_decomp, basis_state_prep(n, j), original_dim or a_decomp.dim)


@dataclass(frozen=True)
class Shots:
    n: int = 100_000
    seed: int = 0


EXACT = "exact"


def _exact_parts(problem: VqlsProblem, ansatz: ParamCircuit, params) -> tuple[float, float]:
    psi = simulate(ansatz, params).amplitudes
    a_psi = problem.a_matrix @ psi
    num = abs(np.vdot(problem.b_state, a_psi)) ** 2
    den = float(np.vdot(a_psi, a_psi).real)
    return float(num), den


def _shot_parts(problem: VqlsProblem, ansatz: ParamCircuit, params, shots: Shots):
    # real ansatz and real A: <b|A|psi> is real, so Re-part tests suffice
    seed = shots.seed
    overlap = 0.0
    for c, s in problem.a_decomp.terms:
        overlap += c * hadamard_test(s, problem.b_prep, ansatz, params, shots.n, seed)
        seed += 1
    den = 0.0
    for c, s in problem.ata_decomp.terms:
        if set(s.ops) == {"I"}:
            den += c
            continue
        den += c * hadamard_test(s, ansatz, ansatz, params, shots.n, seed, prep_params=params)
        seed += 1
    return overlap ** 2, den


def cost(problem: VqlsProblem, ansatz: ParamCircuit, params, mode=EXACT) -> float:
    """Global VQLS cost ``1 - |<b|Psi>|^2``.

    ``mode`` is ``"exact"`` or a :class:`Shots` instance, in which case every
    overlap is a sampled Hadamard test and the result is clipped to [0, 1].
    """
    if ansatz.n_qubits != problem.n_qubits:
        raise ValueError("ansatz and problem act on different qubit counts")
    if mode == EXACT:
        _, r, den = _exact_terms(problem, ansatz, params)
        return float(min(np.vdot(r, r).real / den, 1.0))
    num, den = _shot_parts(problem, ansatz, params, mode)
    if den < 1e-24:
        raise SingularDirectionError("||A U(w)|0>|| below 1e-12")
    return float(min(max(1.0 - num / den, 0.0), 1.0))


def cost_gradient(problem: VqlsProblem, ansatz: ParamCircuit, params) -> np.ndarray:
    """Exact-mode gradient by the parameter-shift rule.

    Numerator and denominator are both expectation values of the ansatz
    state, so each gets its own +-pi/2 shift and the quotient rule combines
    them. Valid because every parameter drives exactly one RY gate.
    """
    params = np.asarray(params, dtype=float)
    num, den = _exact_parts(problem, ansatz, params)
    grad = np.empty_like(params)
    for k in range(params.size):
        shift = np.zeros_like(params)
        shift[k] = np.pi / 2
        n_p, d_p = _exact_parts(problem, ansatz, params + shift)
        n_m, d_m = _exact_parts(problem, ansatz, params - shift)
        dn = (n_p - n_m) / 2
        dd = (d_p - d_m) / 2
        grad[k] = -(dn * den - num * dd) / den ** 2
    return grad


def _exact_terms(problem: VqlsProblem, ansatz: ParamCircuit, params):
    # 1 - |<b|Psi>|^2 = ||r||^2 / D with r the part of A psi orthogonal to |b>;
    # the squared residual avoids the cancellation in 1 - N/D near the optimum
    psi = simulate(ansatz, params).amplitudes
    a_psi = problem.a_matrix @ psi
    r = a_psi - np.vdot(problem.b_state, a_psi) * problem.b_state
    den = float(np.vdot(a_psi, a_psi).real)
    if den < 1e-24:
        raise SingularDirectionError("||A U(w)|0>|| below 1e-12")
    return a_psi, r, den


def cost_and_gradient(problem: VqlsProblem, ansatz: ParamCircuit, params) -> tuple[float, np.ndarray]:
    """Exact-mode cost and its gradient by reverse-mode differentiation.

    The cost is ``R/D`` with ``R = ||r||^2``, so its cotangent with respect
    to ``psi*`` is ``(A^T r D - R A^T A psi) / D^2``.
    """
    a_psi, r, den = _exact_terms(problem, ansatz, params)
    res = float(np.vdot(r, r).real)
    at = problem.a_matrix.conj().T
    lam = (at @ r * den - res * (at @ a_psi)) / den ** 2
    return min(res / den, 1.0), vjp(ansatz, params, lam)


METHODS = ("nelder-mead", "param-shift", "adjoint")


@dataclass(frozen=True)
class OptimizerSettings:
    max_evals: int = 20_000
    restarts: int = 5
    target_cost: float | None = None
    method: str = "nelder-mead"
    mode: str = "exact"
    shots: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown optimizer method {self.method!r}")
        if self.mode not in ("exact", "shots"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.method != "nelder-mead" and self.mode != "exact":
            raise ValueError(f"{self.method} optimisation is exact-mode only")
        if self.max_evals < 1 or self.restarts < 1 or self.shots < 1:
            raise ValueError("max_evals, restarts and shots must be positive")

    @property
    def target(self) -> float:
        if self.target_cost is not None:
            return self.target_cost
        return 1e-8 if self.mode == "exact" else 1e-3


@dataclass
class OptimizeResult:
    params: np.ndarray
    final_cost: float
    cost_trace: list[tuple[int, float]]
    evaluations: int
    converged: bool
    restart: int = 0


def optimize(
    problem: VqlsProblem, config: AnsatzConfig, opt: OptimizerSettings | None = None
) -> OptimizeResult:
    """Multi-start minimisation of the VQLS cost.

    Restarts draw fresh uniform angles in [0, 2pi) and stop early once one
    reaches ``opt.target``; otherwise the best restart is returned with
    ``converged=False``.
    """
    opt = opt or OptimizerSettings()
    ansatz = build_ansatz(config)
    if ansatz.n_qubits != problem.n_qubits:
        raise ValueError("ansatz and problem act on different qubit counts")
    target = opt.target
    evals = 0
    trace: list[tuple[int, float]] = []
    best_cost, best_params, best_restart = np.inf, None, 0

    def objective(w):
        if opt.mode == "exact":
            value = cost(problem, ansatz, w)
        else:
            value = cost(problem, ansatz, w, Shots(opt.shots, opt.seed * 1_000_003 + evals))
        record(w, value)
        return value

    def record(w, value):
        nonlocal evals, best_cost, best_params
        evals += 1
        if value < best_cost:
            best_cost, best_params = value, np.array(w, dtype=float)
            trace.append((evals, value))

    def with_gradient(w):
        value, grad = cost_and_gradient(problem, ansatz, w)
        record(w, value)
        return value, grad

    for r in range(opt.restarts):
        rng = np.random.default_rng([opt.seed, r])
        w0 = rng.uniform(0.0, 2 * np.pi, config.n_params)
        before = best_cost
        budget_end = evals + opt.max_evals
        if opt.method == "nelder-mead":
            _nelder_mead(objective, w0, lambda: budget_end - evals, opt.mode == "exact")
        elif opt.method == "param-shift":
            minimize(objective, w0, method="BFGS",
                     jac=lambda w: cost_gradient(problem, ansatz, w),
                     options=dict(maxiter=opt.max_evals, gtol=1e-14))
        else:
            minimize(with_gradient, w0, method="BFGS", jac=True,
                     options=dict(maxiter=opt.max_evals, gtol=1e-14))
        if best_cost < before:
            best_restart = r
        log.debug("restart %d: best cost %.3e after %d evaluations", r, best_cost, evals)
        if best_cost < target:
            break

    final = best_cost
    if opt.mode != "exact":
        final = cost(problem, ansatz, best_params, Shots(opt.shots, opt.seed + 7919))
    return OptimizeResult(best_params, float(final), trace, evals, bool(final < target),
                          best_restart)


def _nelder_mead(objective, w0, remaining, exact: bool) -> None:
    # scipy's NM stalls well above machine precision; restarting it from its
    # own optimum rebuilds the simplex and keeps descending
    xatol, fatol = (1e-10, 1e-16) if exact else (1e-3, 1e-5)
    w = w0
    last = np.inf
    while remaining() > 0:
        res = minimize(objective, w, method="Nelder-Mead",
                       options=dict(maxfev=remaining(), xatol=xatol, fatol=fatol,
                                    adaptive=True))
        w = res.x
        if not exact or res.fun >= last * (1 - 1e-3) or res.fun < 1e-14:
            break
        last = res.fun


def solution_norm(problem: VqlsProblem, ansatz: ParamCircuit, params) -> float:
    """``||x|| = ||b|| / sqrt(<psi|A^T A|psi>)`` for the optimised state."""
    state = simulate(ansatz, params)
    value = expectation(state, problem.ata_decomp)
    if value < 1e-12:
        raise SingularDirectionError("<psi|A^T A|psi> below 1e-12")
    return problem.b_norm / float(np.sqrt(value))


def solution_vector(problem: VqlsProblem, ansatz: ParamCircuit, params) -> np.ndarray:
    """Signed physical solution ``||x|| U(w)|0>`` (global sign fixed so the
    largest-magnitude entry is positive), restricted to ``original_dim``."""
    psi = simulate(ansatz, params).amplitudes.real
    psi = psi * np.sign(psi[np.argmax(np.abs(psi))])
    return solution_norm(problem, ansatz, params) * psi[: problem.original_dim]


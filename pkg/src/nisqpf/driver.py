"""Hybrid quantum power-flow loop.

Both decoupled subsystems have fixed coefficient matrices, so VQLS runs once
per basis right-hand side ``e_j``. Every later linear solve is a classical
linear combination of the cached basis solutions, each of which is read back
from measured probabilities as ``sqrt(p_k)`` (the basis solutions of the
sign-fixed, diagonally dominant systems are entrywise nonnegative).
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .pauli import PauliDecomposition, decompose_matrix, pad_to_power_of_two
from .powerflow import (
    NetworkCase,
    PowerFlowResult,
    PowerFlowState,
    build_fdlf_matrices,
    decoupled_iteration,
)
from .sim import (
    NOISELESS,
    GateReport,
    MeasurementCounts,
    NoiseModel,
    ParamCircuit,
    depth_and_gate_report,
    run_shots,
    simulate,
)
from .vqls import (
    AnsatzConfig,
    OptimizerSettings,
    VqlsProblem,
    build_ansatz,
    optimize,
    solution_norm,
)

log = logging.getLogger(__name__)


class BasisOptimizationError(RuntimeError):
    def __init__(self, subsystem: str, j: int, cost: float, target: float):
        super().__init__(
            f"{subsystem}-subsystem basis state {j}: VQLS cost {cost:.3e} "
            f"did not reach target {target:.1e}"
        )
        self.subsystem, self.j, self.cost = subsystem, j, cost


@dataclass
class QpfConfig:
    tol: float = 1e-4
    max_iterations: int = 100
    mode: str = "exact"
    shots: int = 100_000
    noise: NoiseModel = NOISELESS
    seed: int = 0
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    n_layers: int = 2
    entangler: str = "cnot-linear"
    workers: int = 1

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.mode not in ("exact", "shots"):
            raise ValueError(f"unknown measurement mode {self.mode!r}")
        if self.shots < 1 or self.max_iterations < 0:
            raise ValueError("shots must be positive and max_iterations nonnegative")


@dataclass
class BasisSolution:
    j: int
    params: np.ndarray
    norm: float
    final_cost: float
    evaluations: int
    cost_trace: list[tuple[int, float]]


@dataclass
class BasisSolutionCache:
    """Optimised circuits for ``A x_j = e_j``, ``j < original_dim``."""

    subsystem: str
    matrix: np.ndarray  # padded, sign-fixed system matrix
    decomposition: PauliDecomposition
    original_dim: int
    config: AnsatzConfig
    solutions: list[BasisSolution]
    target_cost: float
    # columns are the exact-mode recovered unit vectors (restricted, renormalised)
    vectors: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.vectors = np.column_stack(
            [recover_amplitudes(simulate(self.ansatz, s.params).amplitudes, self.original_dim)
             for s in self.solutions]
        ) if self.solutions else np.zeros((self.original_dim, 0))

    @property
    def ansatz(self) -> ParamCircuit:
        return build_ansatz(self.config)

    @property
    def norms(self) -> np.ndarray:
        return np.array([s.norm for s in self.solutions])

    def gate_report(self) -> GateReport:
        return depth_and_gate_report(self.ansatz)

    def measured_vectors(self, shots: int, noise: NoiseModel, seed) -> np.ndarray:
        """Re-run every basis circuit for ``shots`` and recover ``sqrt(p)``."""
        ansatz = self.ansatz
        cols = []
        for s in self.solutions:
            ss = np.random.SeedSequence([*np.atleast_1d(seed), s.j])
            counts = run_shots(ansatz, s.params, shots, noise, int(ss.generate_state(1)[0]))
            cols.append(recover_state(counts, self.original_dim))
        return np.column_stack(cols)


def recover_state(counts: MeasurementCounts, original_dim: int) -> np.ndarray:
    """``sqrt(counts[k] / shots)`` for ``k < original_dim``, renormalised."""
    amp = np.sqrt(counts.frequencies(original_dim))
    norm = np.linalg.norm(amp)
    return amp / norm if norm > 0 else amp


def recover_amplitudes(amplitudes: np.ndarray, original_dim: int) -> np.ndarray:
    """Exact-mode counterpart of :func:`recover_state`: ``|a_k|``, renormalised."""
    amp = np.abs(np.asarray(amplitudes)[:original_dim])
    norm = np.linalg.norm(amp)
    return amp / norm if norm > 0 else amp


def _optimize_basis(args):
    problem, ansatz_config, settings = args
    res = optimize(problem, ansatz_config, settings)
    norm = solution_norm(problem, build_ansatz(ansatz_config), res.params)
    return res, norm


def precompute_basis_solutions(
    matrix, config: QpfConfig | None = None, subsystem: str = "P"
) -> BasisSolutionCache:
    """Optimise one VQLS circuit per basis vector of the (unpadded) system.

    ``matrix`` must already be sign-fixed (positive diagonal). Padding rows
    are skipped because their right-hand-side weight is always zero.
    """
    config = config or QpfConfig()
    padded, _, dim = pad_to_power_of_two(matrix, np.zeros(len(matrix)))
    decomp = decompose_matrix(padded)
    ansatz_config = AnsatzConfig(decomp.n_qubits, config.n_layers, config.entangler)
    sub_seed = 0 if subsystem == "P" else 1
    jobs = []
    for j in range(dim):
        settings = replace(config.optimizer, seed=int(
            np.random.SeedSequence([config.seed, config.optimizer.seed, sub_seed, j])
            .generate_state(1)[0]))
        jobs.append((VqlsProblem.basis(decomp, j, dim), ansatz_config, settings))
    if config.workers > 1 and dim > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_optimize_basis, jobs))
    else:
        results = [_optimize_basis(job) for job in jobs]
    target = config.optimizer.target
    solutions = []
    for j, (res, norm) in enumerate(results):
        if not res.converged:
            raise BasisOptimizationError(subsystem, j, res.final_cost, target)
        solutions.append(BasisSolution(j, res.params, norm, res.final_cost, res.evaluations,
                                       res.cost_trace))
        log.info("%s basis %d: cost %.2e after %d evaluations", subsystem, j,
                 res.final_cost, res.evaluations)
    return BasisSolutionCache(subsystem, padded, decomp, dim, ansatz_config, solutions, target)


def combine_basis_solutions(cache: BasisSolutionCache, rhs, vectors=None) -> np.ndarray:
    """``sum_j rhs_j ||x_j|| x_j``, with signs carried by the raw ``rhs_j``."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (cache.original_dim,):
        raise ValueError(f"rhs has shape {rhs.shape}, cache dimension is {cache.original_dim}")
    vectors = cache.vectors if vectors is None else vectors
    return vectors @ (cache.norms * rhs)


@dataclass
class QpfResult:
    result: PowerFlowResult
    caches: dict[str, BasisSolutionCache]
    circuit_stats: dict[str, dict]
    timings: dict[str, float]

    @property
    def converged(self) -> bool:
        return self.result.converged


def build_caches(case: NetworkCase, config: QpfConfig) -> dict[str, BasisSolutionCache]:
    m = build_fdlf_matrices(case)
    caches = {"P": precompute_basis_solutions(-m.b_prime, config, "P")}
    if len(m.b_tilde):
        caches["Q"] = precompute_basis_solutions(-m.b_tilde, config, "Q")
    return caches


def circuit_stats(caches: dict[str, BasisSolutionCache]) -> dict[str, dict]:
    out = {}
    for name, cache in caches.items():
        rep = cache.gate_report()
        out[name] = {
            "n_qubits": cache.config.n_qubits,
            "n_layers": cache.config.n_layers,
            "entangler": cache.config.entangler,
            "n_params": cache.config.n_params,
            "depth": rep.depth,
            "entangling_gates": rep.cnot_count,
            "total_gates": rep.total_gates,
            "basis_costs": [s.final_cost for s in cache.solutions],
            "basis_evaluations": [s.evaluations for s in cache.solutions],
        }
    return out


def qpf_solve(
    case: NetworkCase,
    config: QpfConfig | None = None,
    caches: dict[str, BasisSolutionCache] | None = None,
    state: PowerFlowState | None = None,
) -> QpfResult:
    """Run the quantum power-flow iteration on ``case``.

    Circuits are optimised on the first pass that needs a linear solve, or
    taken from ``caches`` when given (they only depend on the topology). In
    shot mode every basis circuit is re-measured on every pass.
    """
    config = config or QpfConfig()
    m = build_fdlf_matrices(case)
    caches = dict(caches) if caches else {}
    timings = {"precompute_s": 0.0, "iterate_s": 0.0}
    counter = {"P": 0, "Q": 0}

    def ensure_caches():
        if not caches:
            t0 = time.perf_counter()
            caches.update(build_caches(case, config))
            timings["precompute_s"] = time.perf_counter() - t0

    def solver(name):
        def solve(rhs):
            ensure_caches()
            cache = caches[name]
            vectors = None
            if config.mode == "shots":
                sub = 0 if name == "P" else 1
                vectors = cache.measured_vectors(config.shots, config.noise,
                                                 [config.seed, sub, counter[name]])
            counter[name] += 1
            return combine_basis_solutions(cache, rhs, vectors)
        return solve

    t0 = time.perf_counter()
    result = decoupled_iteration(case, solver("P"), solver("Q"), m.b_tilde0,
                                 config.tol, config.max_iterations, "qpf", state)
    timings["iterate_s"] = time.perf_counter() - t0 - timings["precompute_s"]
    return QpfResult(result, caches, circuit_stats(caches), timings)

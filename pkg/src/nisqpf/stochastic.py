"""Monte Carlo power flow with correlated Gaussian injections.

Each target bus gets one Gaussian active-power injection; its reactive
injection follows at the base case's power factor. The basis-solution caches
depend only on the topology, so they are optimised once and shared by every
sample.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .driver import QpfConfig, build_caches, qpf_solve
from .powerflow import NetworkCase, classical_fdlf

log = logging.getLogger(__name__)


@dataclass
class InjectionDistribution:
    target_buses: list[int]
    means: np.ndarray
    covariance: np.ndarray
    n_samples: int
    seed: int = 0

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        k = len(self.target_buses)
        if self.means.shape != (k,) or self.covariance.shape != (k, k):
            raise ValueError("means/covariance do not match the number of target buses")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-12):
            raise ValueError("covariance is not symmetric")


def correlated_distribution(
    case: NetworkCase,
    buses: list[int],
    corr: float = 0.75,
    std_frac: float = 0.1,
    n_samples: int = 5000,
    seed: int = 0,
) -> InjectionDistribution:
    """Means from the case injections, std ``std_frac * |mean|``, equal
    pairwise correlation ``corr``."""
    idx = case.index
    missing = [b for b in buses if b not in idx]
    if missing:
        raise ValueError(f"unknown buses {missing}")
    if not -1.0 <= corr <= 1.0:
        raise ValueError("correlation must lie in [-1, 1]")
    means = np.array([case.buses[idx[b]].p for b in buses])
    std = std_frac * np.abs(means)
    rho = np.full((len(buses), len(buses)), corr)
    np.fill_diagonal(rho, 1.0)
    return InjectionDistribution(list(buses), means, rho * np.outer(std, std), n_samples, seed)


def _factor(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    # rank-deficient PSD: symmetric square root keeps samples on the right subspace
    w, v = np.linalg.eigh(cov)
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < -1e-10 * scale:
        raise ValueError("covariance is not positive semidefinite")
    return v * np.sqrt(np.clip(w, 0.0, None))


def sample_injections(dist: InjectionDistribution) -> np.ndarray:
    """``n_samples x n_buses`` draws ``means + L z`` with ``L L^T = covariance``."""
    L = _factor(dist.covariance)
    z = np.random.default_rng(dist.seed).standard_normal((dist.n_samples, len(dist.target_buses)))
    return dist.means + z @ L.T


@dataclass
class StochasticResult:
    buses: list[int]                 # monitored bus ids
    injections: np.ndarray           # converged samples x target buses
    V: np.ndarray                    # converged samples x monitored buses
    theta: np.ndarray
    failures: int
    target_buses: list[int] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return self.V.shape[0]

    def summary(self) -> dict:
        def corr(x):
            if x.shape[0] < 2:
                return np.full((x.shape[1], x.shape[1]), np.nan)
            with np.errstate(invalid="ignore", divide="ignore"):
                return np.corrcoef(x, rowvar=False).reshape(x.shape[1], x.shape[1])
        return {
            "n_samples": self.n_samples,
            "failures": self.failures,
            "monitored_buses": self.buses,
            "target_buses": self.target_buses,
            "v_mean": self.V.mean(axis=0).tolist(),
            "v_std": self.V.std(axis=0, ddof=1).tolist() if self.n_samples > 1 else None,
            "theta_mean": self.theta.mean(axis=0).tolist(),
            "theta_std": self.theta.std(axis=0, ddof=1).tolist() if self.n_samples > 1 else None,
            "voltage_correlation": corr(self.V).tolist(),
            "injection_correlation": corr(self.injections).tolist(),
            "injection_mean": self.injections.mean(axis=0).tolist(),
        }


def run_stochastic(
    case: NetworkCase,
    dist: InjectionDistribution,
    config: QpfConfig | None = None,
    monitor: list[int] | None = None,
    caches=None,
    classical: bool = False,
) -> StochasticResult:
    """Solve one power flow per injection sample.

    ``classical=True`` swaps the quantum solver for the dense FDLF twin.
    Non-converged samples are counted and dropped.
    """
    config = config or QpfConfig()
    idx = case.index
    monitor = list(dist.target_buses if monitor is None else monitor)
    for b in list(dist.target_buses) + monitor:
        if b not in idx:
            raise ValueError(f"unknown bus {b}")
    samples = sample_injections(dist)
    base = {b: case.buses[idx[b]] for b in dist.target_buses}
    if not classical and caches is None:
        caches = build_caches(case, config)
    cols = [idx[b] for b in monitor]
    inj, vs, ths = [], [], []
    failures = 0
    for k, p in enumerate(samples):
        updates = {}
        for b, pk in zip(dist.target_buses, p):
            bus = base[b]
            q = bus.q * pk / bus.p if bus.p != 0 else bus.q
            updates[b] = (float(pk), float(q))
        sample_case = case.with_injections(updates)
        if classical:
            res = classical_fdlf(sample_case, config.tol, config.max_iterations)
        else:
            sample_config = config
            if config.mode == "shots":
                sample_config = _reseeded(config, k)
            res = qpf_solve(sample_case, sample_config, caches=caches).result
        if not res.converged:
            failures += 1
            continue
        inj.append(p)
        vs.append(res.state.V[cols])
        ths.append(res.state.theta[cols])
    if failures:
        log.warning("%d of %d samples did not converge", failures, len(samples))
    k_t, k_m = len(dist.target_buses), len(monitor)
    return StochasticResult(
        monitor,
        np.array(inj).reshape(-1, k_t),
        np.array(vs).reshape(-1, k_m),
        np.array(ths).reshape(-1, k_m),
        failures,
        list(dist.target_buses),
    )


def _reseeded(config: QpfConfig, k: int) -> QpfConfig:
    seed = int(np.random.SeedSequence([config.seed, k]).generate_state(1)[0])
    return replace(config, seed=seed)

from dataclasses import replace
from math import sqrt

import numpy as np
import pytest

from nisqpf.driver import (
    BasisOptimizationError,
    QpfConfig,
    combine_basis_solutions,
    precompute_basis_solutions,
    qpf_solve,
    recover_amplitudes,
    recover_state,
)
from nisqpf.powerflow import (
    Branch,
    Bus,
    NetworkCase,
    build_fdlf_matrices,
    classical_fdlf,
    newton_raphson,
)
from nisqpf.sim import BELEM, MeasurementCounts, sample, simulate
from nisqpf.vqls import OptimizerSettings


@pytest.fixture(scope="module")
def identity_cache():
    return precompute_basis_solutions(np.eye(4))


def test_identity_cache(identity_cache):
    np.testing.assert_allclose(identity_cache.vectors, np.eye(4), atol=1e-4)
    np.testing.assert_allclose(identity_cache.norms, 1.0, atol=1e-8)


def test_cache_costs_below_target(five_bus_caches, nine_bus_caches):
    for caches in (five_bus_caches, nine_bus_caches):
        for cache in caches.values():
            assert all(s.final_cost < cache.target_cost for s in cache.solutions)


def test_five_bus_basis_zero(five_bus, five_bus_caches):
    cache = five_bus_caches["P"]
    oracle = np.linalg.solve(-build_fdlf_matrices(five_bus).b_prime, np.eye(4)[0])
    fidelity = (cache.vectors[:, 0] @ oracle / np.linalg.norm(oracle)) ** 2
    assert fidelity > 1 - 1e-6
    assert cache.norms[0] == pytest.approx(np.linalg.norm(oracle), abs=1e-6)


def test_nine_bus_p_cache(nine_bus_caches):
    cache = nine_bus_caches["P"]
    assert len(cache.solutions) == 8 and cache.config.n_qubits == 3
    assert cache.vectors.min() >= -1e-10
    # the raw signed amplitudes are nonnegative too, up to one global sign
    for s in cache.solutions:
        psi = simulate(cache.ansatz, s.params).amplitudes.real
        psi *= np.sign(psi[np.argmax(np.abs(psi))])
        assert psi.min() >= -1e-4


def test_padding_states_skipped():
    m = np.array([[2.0, -1, 0], [-1, 2, -1], [0, -1, 2]])
    cache = precompute_basis_solutions(m)
    assert cache.original_dim == 3 and len(cache.solutions) == 3
    rhs = np.array([0.3, -1.0, 0.5])
    np.testing.assert_allclose(combine_basis_solutions(cache, rhs), np.linalg.solve(m, rhs),
                               atol=1e-5)


def test_recover_state_examples():
    np.testing.assert_allclose(recover_state(MeasurementCounts({0: 1000}, 1000), 2), [1, 0])
    counts = MeasurementCounts({k: 250 for k in range(4)}, 1000)
    np.testing.assert_allclose(recover_state(counts, 4), [0.5] * 4)


def test_recover_state_sampled():
    amps = np.array([0.1, 0.3, 0.5, np.sqrt(1 - 0.35)])
    from nisqpf.sim import StateVector
    shots = 10 ** 5
    got = recover_state(sample(StateVector(amps), shots, seed=4), 4)
    # delta method: sd(sqrt(p_hat)) ~ sqrt((1 - p) / (4 shots))
    sigma = np.sqrt((1 - amps ** 2) / (4 * shots))
    assert np.all(np.abs(got - amps) < 3 * sigma + 1e-12)


def test_recover_amplitudes_truncates():
    np.testing.assert_allclose(recover_amplitudes(np.array([0.6, -0.8, 0, 0]), 1), [1.0])


def test_combine_examples(identity_cache):
    np.testing.assert_allclose(combine_basis_solutions(identity_cache, np.eye(4)[0]),
                               np.eye(4)[0], atol=1e-4)
    np.testing.assert_allclose(combine_basis_solutions(identity_cache, [2.0, 0, 0, 0]),
                               [2, 0, 0, 0], atol=1e-4)
    with pytest.raises(ValueError):
        combine_basis_solutions(identity_cache, [1.0, 2.0])


@pytest.mark.parametrize("name", ["five", "nine"])
def test_linear_combination_matches_dense(name, request):
    case = request.getfixturevalue(f"{name}_bus")
    caches = request.getfixturevalue(f"{name}_bus_caches")
    m = build_fdlf_matrices(case)
    rng = np.random.default_rng(7)
    for sub, mat in (("P", -m.b_prime), ("Q", -m.b_tilde)):
        for _ in range(100):
            rhs = rng.normal(size=len(mat))
            np.testing.assert_allclose(combine_basis_solutions(caches[sub], rhs),
                                       np.linalg.solve(mat, rhs), atol=1e-5)


def test_zero_injection_case():
    case = NetworkCase([Bus(1, "PQ"), Bus(2, "PQ"), Bus(3, "slack")],
                       [Branch(1, 2, 0.01, 0.1), Branch(2, 3, 0.01, 0.1)])
    res = qpf_solve(case).result
    assert res.converged and res.iterations <= 1
    np.testing.assert_allclose(res.state.V, 1.0)


def test_five_bus_exact_matches_oracles(five_bus, five_bus_caches):
    q = qpf_solve(five_bus, caches=five_bus_caches)
    nr, fd = newton_raphson(five_bus), classical_fdlf(five_bus)
    assert q.converged and 4 <= q.result.iterations <= 10
    np.testing.assert_allclose(q.result.state.V, nr.state.V, atol=1e-3)
    np.testing.assert_allclose(q.result.state.theta, nr.state.theta, atol=1e-3)
    # quantum and classical twins walk the same iterates
    assert q.result.iterations == fd.iterations
    for a, b in zip(q.result.iterates, fd.iterates):
        np.testing.assert_allclose(a.V, b.V, atol=1e-4)
        np.testing.assert_allclose(a.theta, b.theta, atol=1e-4)


def test_fixed_point(five_bus, five_bus_caches):
    tol = 1e-4
    conv = qpf_solve(five_bus, QpfConfig(tol=tol), caches=five_bus_caches).result
    one = qpf_solve(five_bus, QpfConfig(tol=1e-300, max_iterations=1), caches=five_bus_caches,
                    state=conv.state).result
    assert one.iterations == 1
    assert np.abs(one.state.V - conv.state.V).max() < tol
    assert np.abs(one.state.theta - conv.state.theta).max() < tol


def test_circuit_economy(five_bus_caches, nine_bus_caches):
    for caches in (five_bus_caches, nine_bus_caches):
        for cache in caches.values():
            depth, ent, _ = cache.gate_report()
            assert ent <= 4 and depth <= 24


def test_precompute_failure_names_basis_state():
    cfg = QpfConfig(optimizer=OptimizerSettings(max_evals=5, restarts=1, target_cost=1e-30))
    with pytest.raises(BasisOptimizationError, match="basis state 0"):
        precompute_basis_solutions(np.array([[2.0, -1], [-1, 2]]), cfg)


def test_parallel_precompute_matches_serial():
    m = np.array([[2.0, -1, 0, 0], [-1, 2, -1, 0], [0, -1, 2, -1], [0, 0, -1, 2]])
    serial = precompute_basis_solutions(m)
    parallel = precompute_basis_solutions(m, QpfConfig(workers=2))
    for a, b in zip(serial.solutions, parallel.solutions):
        np.testing.assert_array_equal(a.params, b.params)


def test_shot_mode_measured_vectors(five_bus_caches):
    cache = five_bus_caches["P"]
    shots = 10 ** 5
    vec = cache.measured_vectors(shots, BELEM, seed=1)
    assert vec.shape == cache.vectors.shape and vec.min() >= 0
    # noise and shot error both small at this shot count
    assert np.abs(vec - cache.vectors).max() < 0.1
    clean = cache.measured_vectors(shots, replace(BELEM, enabled=False), seed=1)
    sigma = 1 / sqrt(4 * shots)
    assert np.abs(clean - cache.vectors).max() < 6 * sigma


def test_shot_mode_solve(five_bus, five_bus_caches):
    cfg = QpfConfig(mode="shots", shots=10 ** 5, noise=BELEM, seed=3)
    res = qpf_solve(five_bus, cfg, caches=five_bus_caches).result
    nr = newton_raphson(five_bus)
    assert res.converged
    assert np.mean(np.abs(res.state.V - nr.state.V) / nr.state.V) < 5e-3


def test_config_validation():
    with pytest.raises(ValueError):
        QpfConfig(tol=0)
    with pytest.raises(ValueError):
        QpfConfig(mode="analog")

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import golden
from netgen import random_network
from nisqpf.powerflow import (
    Branch,
    Bus,
    CaseError,
    NetworkCase,
    PowerFlowState,
    build_b_doubleprime_split,
    build_b_prime,
    build_fdlf_matrices,
    build_ybus,
    classical_fdlf,
    flat_start,
    mismatch,
    newton_raphson,
)


def two_bus(r=0.0, x=0.1, b=0.0, load=0j):
    return NetworkCase([Bus(1, "PQ", p=load.real, q=load.imag), Bus(2, "slack")],
                       [Branch(1, 2, r, x, b)])


def chain():
    return NetworkCase([Bus(1, "PQ"), Bus(2, "PQ"), Bus(3, "slack")],
                       [Branch(1, 2, 0, 0.1), Branch(2, 3, 0, 0.1)])


def stressed(case):
    return case.with_injections({3: (-1.0, -1.0), 4: (-1.6, -1.0)})


def test_ybus_examples():
    np.testing.assert_allclose(build_ybus(two_bus()), [[-10j, 10j], [10j, -10j]])
    y = build_ybus(two_bus(r=0.01))
    assert y[0, 1] == pytest.approx(-1 / (0.01 + 0.1j))


def test_ybus_golden(nine_bus):
    g = golden("nine_bus_matrices.json")
    y = build_ybus(nine_bus)
    np.testing.assert_allclose(y.real, g["ybus_real"], atol=1e-12)
    np.testing.assert_allclose(y.imag, g["ybus_imag"], atol=1e-12)


def test_b_prime_examples():
    np.testing.assert_allclose(build_b_prime(two_bus()), [[-10]])
    np.testing.assert_allclose(build_b_prime(chain()), [[-10, 10], [10, -20]])


def test_b_prime_golden(nine_bus):
    np.testing.assert_allclose(build_b_prime(nine_bus), golden("nine_bus_matrices.json")["b_prime"],
                               atol=1e-12)


def test_b_doubleprime_examples():
    bt, b0 = build_b_doubleprime_split(two_bus())
    np.testing.assert_allclose(bt, [[-10]])
    np.testing.assert_allclose(b0, [[0]])
    _, b0 = build_b_doubleprime_split(two_bus(b=0.2))
    np.testing.assert_allclose(b0, [[0.1]])


def test_b_doubleprime_golden(nine_bus):
    g = golden("nine_bus_matrices.json")
    bt, b0 = build_b_doubleprime_split(nine_bus)
    np.testing.assert_allclose(bt, g["b_tilde"], atol=1e-12)
    np.testing.assert_allclose(b0, g["b_tilde0"], atol=1e-12)


def test_fdlf_index_maps(nine_bus):
    m = build_fdlf_matrices(nine_bus)
    assert list(m.angle_index) == [1, 2, 3, 4, 5, 6, 7, 8]
    assert list(m.v_index) == [1, 2, 3, 4, 5, 6]


def test_mismatch_examples(five_bus):
    flat = NetworkCase([Bus(1, "PQ"), Bus(2, "PV"), Bus(3, "slack")],
                       [Branch(1, 2, 0.01, 0.1, 0.0), Branch(2, 3, 0.01, 0.1, 0.0)])
    dp, dq = mismatch(flat, flat_start(flat))
    assert np.abs(dp).max() == 0 and np.abs(dq).max() == 0
    dp, _ = mismatch(two_bus(load=-1 + 0j), flat_start(two_bus()))
    np.testing.assert_allclose(dp, [-1.0])
    nr = newton_raphson(five_bus)
    dp, dq = mismatch(five_bus, nr.state)
    assert max(np.abs(dp).max(), np.abs(dq).max()) < 1e-4


def test_newton_raphson(five_bus):
    flat = NetworkCase([Bus(1, "PQ"), Bus(2, "slack")], [Branch(1, 2, 0.0, 0.1)])
    res = newton_raphson(flat)
    assert res.converged and res.iterations <= 1
    np.testing.assert_allclose(res.state.V, 1.0)
    res = newton_raphson(five_bus)
    assert res.converged and 2 <= res.iterations <= 4
    # published solution of this standard 5-bus system
    np.testing.assert_allclose(res.state.V, [1.0474, 1.0179, 1.0242, 1.0236, 1.06], atol=1e-4)


def test_stressed_newton_matches_fdlf(five_bus):
    case = stressed(five_bus)
    nr, fd = newton_raphson(case), classical_fdlf(case, 1e-6)
    assert nr.converged and fd.converged
    np.testing.assert_allclose(fd.state.V, nr.state.V, atol=1e-4)


def test_classical_fdlf(five_bus):
    flat = NetworkCase([Bus(1, "PQ"), Bus(2, "slack")], [Branch(1, 2, 0.0, 0.1)])
    res = classical_fdlf(flat)
    assert res.converged and res.iterations <= 1
    res = classical_fdlf(five_bus)
    nr = newton_raphson(five_bus)
    assert res.converged and 4 <= res.iterations <= 10
    np.testing.assert_allclose(res.state.V, nr.state.V, atol=1e-4)
    assert res.mismatch_history[-1] < 1e-4


def test_stressed_fdlf_slow(five_bus):
    res = classical_fdlf(stressed(five_bus))
    assert res.converged and 25 <= res.iterations <= 60


def test_non_convergence_flagged(five_bus):
    res = classical_fdlf(five_bus, max_iter=2)
    assert not res.converged and res.iterations == 2
    assert not newton_raphson(stressed(five_bus), max_iter=1).converged


def test_branch_flows_balance(five_bus):
    from nisqpf.powerflow import injected_power

    res = newton_raphson(five_bus, tol=1e-10)
    loss = sum(f.p_from + f.p_to for f in res.branch_flows)
    assert loss == pytest.approx(injected_power(five_bus, res.state).real.sum(), abs=1e-10)
    assert loss > 0


def test_oracles_agree_on_shipped_cases(five_bus, nine_bus):
    for case in (five_bus, nine_bus):
        nr, fd = newton_raphson(case), classical_fdlf(case)
        np.testing.assert_allclose(fd.state.V, nr.state.V, atol=1e-4)
        np.testing.assert_allclose(fd.state.theta, nr.state.theta, atol=1e-4)


@pytest.mark.parametrize("mutate, message", [
    (lambda b, br: (b + [Bus(1, "PQ")], br), "duplicate bus id"),
    (lambda b, br: ([x for x in b if x.type != "slack"], br), "no slack"),
    (lambda b, br: (b + [Bus(99, "slack")], br + [Branch(99, 1, 0, 0.1)]), "multiple slack"),
    (lambda b, br: (b, br + [Branch(1, 2, 0.1, 0.0)]), "zero reactance"),
    (lambda b, br: (b + [Bus(42, "PQ")], br), "disconnected"),
    (lambda b, br: (b, br + [Branch(1, 77, 0, 0.1)]), "unknown bus"),
    (lambda b, br: (b, br + [Branch(1, 1, 0, 0.1)]), "self-loop"),
])
def test_case_validation(five_bus, mutate, message):
    buses, branches = mutate(list(five_bus.buses), list(five_bus.branches))
    with pytest.raises(CaseError, match=message):
        NetworkCase(buses, branches)


def test_with_injections_unknown_bus(five_bus):
    with pytest.raises(CaseError):
        five_bus.with_injections({99: (0.0, 0.0)})


cases = st.integers(0, 2 ** 32 - 1).map(random_network)


@settings(max_examples=300, deadline=None)
@given(case=cases)
def test_b_prime_diagonally_dominant(case):
    a = -build_b_prime(case)
    diag = np.diag(a)
    off = np.abs(a).sum(axis=1) - np.abs(diag)
    assert np.all(diag > 0)
    assert np.all(diag >= off - 1e-12)
    # strict on rows whose bus touches the slack
    slack = case.buses[case.slack].id
    pos = {b.id: r for r, b in enumerate(b for b in case.buses if b.type != "slack")}
    for br in case.branches:
        for end, other in ((br.from_bus, br.to_bus), (br.to_bus, br.from_bus)):
            if other == slack:
                assert diag[pos[end]] > off[pos[end]] + 1e-12


@settings(max_examples=300, deadline=None)
@given(case=cases)
def test_basis_solutions_nonnegative(case):
    m = build_fdlf_matrices(case)
    assert np.linalg.inv(-m.b_prime).min() >= -1e-12
    if len(m.b_tilde):
        assert np.linalg.inv(-m.b_tilde).min() >= -1e-12


@settings(max_examples=300, deadline=None)
@given(case=cases, seed=st.integers(0, 2 ** 32 - 1))
def test_split_reproduces_unsplit(case, seed):
    bt, b0 = build_b_doubleprime_split(case)
    pq = case.pq
    b_full = build_ybus(case).imag[np.ix_(pq, pq)]
    dv = np.random.default_rng(seed).normal(size=len(pq))
    np.testing.assert_allclose(bt @ dv + b0 @ dv, b_full @ dv, atol=1e-10)
    assert np.count_nonzero(b0 - np.diag(np.diag(b0))) == 0


@settings(max_examples=50, deadline=None)
@given(case=cases)
def test_random_oracles_agree(case):
    nr, fd = newton_raphson(case, 1e-8), classical_fdlf(case, 1e-8, 200)
    if nr.converged and fd.converged:
        np.testing.assert_allclose(fd.state.V, nr.state.V, atol=1e-4)


def test_pv_voltage_held(nine_bus):
    res = newton_raphson(nine_bus)
    for b, v in zip(nine_bus.buses, res.state.V):
        if b.type != "PQ":
            assert v == b.v_set

"""Network model, admittance/FDLF matrices and classical power-flow solvers.

All quantities are per unit. Injections are net (generation minus load), so a
load shows up as a negative ``p``/``q``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

SLACK, PV, PQ = "slack", "PV", "PQ"
BUS_TYPES = (SLACK, PV, PQ)


class CaseError(ValueError):
    """Invalid network data. ``where`` is ``("bus", k)``, ``("branch", k)``
    or ``None`` and points at the offending entry."""

    def __init__(self, message: str, where: tuple[str, int] | None = None):
        super().__init__(message)
        self.where = where


@dataclass(frozen=True)
class Bus:
    id: int
    type: str
    p: float = 0.0
    q: float = 0.0
    v_set: float = 1.0
    theta_set: float = 0.0
    g_shunt: float = 0.0
    b_shunt: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0  # total line charging, split half per end

    @property
    def y_series(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass
class NetworkCase:
    buses: list[Bus]
    branches: list[Branch]
    base_mva: float = 100.0
    name: str = "case"

    def __post_init__(self):
        self.buses = list(self.buses)
        self.branches = list(self.branches)
        self.validate()

    def validate(self) -> None:
        seen = set()
        for k, b in enumerate(self.buses):
            if b.id in seen:
                raise CaseError(f"duplicate bus id {b.id}", ("bus", k))
            seen.add(b.id)
            if b.type not in BUS_TYPES:
                raise CaseError(f"bus {b.id}: unknown type {b.type!r}", ("bus", k))
        slacks = [k for k, b in enumerate(self.buses) if b.type == SLACK]
        if not slacks:
            raise CaseError("no slack bus")
        if len(slacks) > 1:
            raise CaseError("multiple slack buses", ("bus", slacks[1]))
        for k, br in enumerate(self.branches):
            label = f"branch {k} ({br.from_bus}-{br.to_bus})"
            for end in (br.from_bus, br.to_bus):
                if end not in seen:
                    raise CaseError(f"{label} references unknown bus {end}", ("branch", k))
            if br.from_bus == br.to_bus:
                raise CaseError(f"{label} is a self-loop", ("branch", k))
            if br.x == 0:
                raise CaseError(f"{label} has zero reactance", ("branch", k))
        unreached = self._unreachable()
        if unreached:
            first = min(k for k, b in enumerate(self.buses) if b.id in unreached)
            raise CaseError(
                f"disconnected network: buses {sorted(unreached)} unreachable from slack",
                ("bus", first),
            )

    def _unreachable(self) -> set[int]:
        adj = {b.id: [] for b in self.buses}
        for br in self.branches:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
        start = self.buses[self.slack].id
        seen, todo = {start}, deque([start])
        while todo:
            for m in adj[todo.popleft()]:
                if m not in seen:
                    seen.add(m)
                    todo.append(m)
        return set(adj) - seen

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def slack(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.type == SLACK)

    @property
    def non_slack(self) -> np.ndarray:
        """Positions of the angle unknowns (rows of B')."""
        return np.array([i for i, b in enumerate(self.buses) if b.type != SLACK], dtype=int)

    @property
    def pq(self) -> np.ndarray:
        """Positions of the magnitude unknowns (rows of B'')."""
        return np.array([i for i, b in enumerate(self.buses) if b.type == PQ], dtype=int)

    @property
    def p_sched(self) -> np.ndarray:
        return np.array([b.p for b in self.buses])

    @property
    def q_sched(self) -> np.ndarray:
        return np.array([b.q for b in self.buses])

    def with_injections(self, updates: dict[int, tuple[float, float]]) -> "NetworkCase":
        """Copy of the case with ``{bus_id: (p, q)}`` overriding injections."""
        buses = [replace(b, p=updates[b.id][0], q=updates[b.id][1]) if b.id in updates else b
                 for b in self.buses]
        missing = set(updates) - {b.id for b in self.buses}
        if missing:
            raise CaseError(f"unknown buses {sorted(missing)}")
        return NetworkCase(buses, self.branches, self.base_mva, self.name)


@dataclass
class PowerFlowState:
    V: np.ndarray
    theta: np.ndarray

    def copy(self) -> "PowerFlowState":
        return PowerFlowState(self.V.copy(), self.theta.copy())

    @property
    def complex_voltage(self) -> np.ndarray:
        return self.V * np.exp(1j * self.theta)


def flat_start(case: NetworkCase) -> PowerFlowState:
    V = np.array([1.0 if b.type == PQ else b.v_set for b in case.buses])
    theta = np.array([b.theta_set if b.type == SLACK else 0.0 for b in case.buses])
    return PowerFlowState(V, theta)


@dataclass(frozen=True)
class BranchFlow:
    from_bus: int
    to_bus: int
    p_from: float
    q_from: float
    p_to: float
    q_to: float


@dataclass
class PowerFlowResult:
    state: PowerFlowState
    iterations: int
    mismatch_history: list[float]
    converged: bool
    branch_flows: list[BranchFlow] = field(default_factory=list)
    iterates: list[PowerFlowState] = field(default_factory=list)
    method: str = ""


# -- matrices ---------------------------------------------------------------

def build_ybus(case: NetworkCase) -> np.ndarray:
    idx = case.index
    Y = np.zeros((case.n_bus, case.n_bus), dtype=complex)
    for br in case.branches:
        f, t = idx[br.from_bus], idx[br.to_bus]
        y = br.y_series
        Y[f, t] -= y
        Y[t, f] -= y
        Y[f, f] += y + 0.5j * br.b
        Y[t, t] += y + 0.5j * br.b
    for i, b in enumerate(case.buses):
        Y[i, i] += complex(b.g_shunt, b.b_shunt)
    return Y


@dataclass
class FdlfMatrices:
    b_prime: np.ndarray
    b_tilde: np.ndarray
    b_tilde0: np.ndarray
    angle_index: dict[int, int]
    v_index: dict[int, int]


def build_b_prime(case: NetworkCase) -> np.ndarray:
    """``B'`` over non-slack buses: diagonal ``-sum 1/x``, off-diagonal ``+1/x``."""
    idx = case.index
    rows = {pos: r for r, pos in enumerate(case.non_slack)}
    B = np.zeros((len(rows), len(rows)))
    for br in case.branches:
        f, t = idx[br.from_bus], idx[br.to_bus]
        inv_x = 1.0 / br.x
        for a, b in ((f, t), (t, f)):
            if a in rows:
                B[rows[a], rows[a]] -= inv_x
                if b in rows:
                    B[rows[a], rows[b]] += inv_x
    return B


def build_b_doubleprime_split(case: NetworkCase) -> tuple[np.ndarray, np.ndarray]:
    """Branch part ``B~''`` and diagonal ground part ``B~0''`` over PQ buses.

    ``B~'' + B~0''`` equals ``Im(Ybus)`` restricted to the PQ buses.
    """
    idx = case.index
    rows = {pos: r for r, pos in enumerate(case.pq)}
    Bt = np.zeros((len(rows), len(rows)))
    b0 = np.zeros(len(rows))
    for br in case.branches:
        f, t = idx[br.from_bus], idx[br.to_bus]
        y = br.y_series
        for a, b in ((f, t), (t, f)):
            if a in rows:
                Bt[rows[a], rows[a]] += y.imag
                b0[rows[a]] += 0.5 * br.b
                if b in rows:
                    Bt[rows[a], rows[b]] -= y.imag
    for pos, r in rows.items():
        b0[r] += case.buses[pos].b_shunt
    return Bt, np.diag(b0)


def build_fdlf_matrices(case: NetworkCase) -> FdlfMatrices:
    Bt, B0 = build_b_doubleprime_split(case)
    ids = [b.id for b in case.buses]
    return FdlfMatrices(
        build_b_prime(case),
        Bt,
        B0,
        {ids[pos]: r for r, pos in enumerate(case.non_slack)},
        {ids[pos]: r for r, pos in enumerate(case.pq)},
    )


# -- mismatches and flows ---------------------------------------------------

def injected_power(case: NetworkCase, state: PowerFlowState, ybus=None) -> np.ndarray:
    Y = build_ybus(case) if ybus is None else ybus
    v = state.complex_voltage
    return v * np.conj(Y @ v)


def mismatch(case: NetworkCase, state: PowerFlowState, ybus=None) -> tuple[np.ndarray, np.ndarray]:
    """Scheduled minus computed injections: ``dP`` on non-slack, ``dQ`` on PQ buses."""
    s = injected_power(case, state, ybus)
    dp = case.p_sched - s.real
    dq = case.q_sched - s.imag
    return dp[case.non_slack], dq[case.pq]


def _max_abs(dp, dq) -> float:
    return float(max(np.abs(dp).max(initial=0.0), np.abs(dq).max(initial=0.0)))


def branch_flows(case: NetworkCase, state: PowerFlowState) -> list[BranchFlow]:
    idx = case.index
    v = state.complex_voltage
    out = []
    for br in case.branches:
        f, t = idx[br.from_bus], idx[br.to_bus]
        y, ysh = br.y_series, 0.5j * br.b
        s_f = v[f] * np.conj((y + ysh) * v[f] - y * v[t])
        s_t = v[t] * np.conj((y + ysh) * v[t] - y * v[f])
        out.append(BranchFlow(br.from_bus, br.to_bus, s_f.real, s_f.imag, s_t.real, s_t.imag))
    return out


# -- solvers ----------------------------------------------------------------

def newton_raphson(case: NetworkCase, tol: float = 1e-4, max_iter: int = 20) -> PowerFlowResult:
    """Full-Jacobian Newton-Raphson in polar coordinates."""
    Y = build_ybus(case)
    state = flat_start(case)
    ns, pq = case.non_slack, case.pq
    history, iterates = [], []
    converged = False
    it = 0
    while True:
        dp, dq = mismatch(case, state, Y)
        history.append(_max_abs(dp, dq))
        if history[-1] < tol:
            converged = True
            break
        if it >= max_iter:
            break
        v = state.complex_voltage
        ibus = Y @ v
        dv_unit = v / state.V
        # dS/dtheta and dS/d|V|
        ds_dth = 1j * np.diag(v) @ np.conj(np.diag(ibus) - Y @ np.diag(v))
        ds_dvm = np.diag(v) @ np.conj(Y @ np.diag(dv_unit)) + np.diag(dv_unit) @ np.conj(np.diag(ibus))
        J = np.block([
            [ds_dth[np.ix_(ns, ns)].real, ds_dvm[np.ix_(ns, pq)].real],
            [ds_dth[np.ix_(pq, ns)].imag, ds_dvm[np.ix_(pq, pq)].imag],
        ])
        dx = np.linalg.solve(J, np.concatenate([dp, dq]))
        state.theta[ns] += dx[: len(ns)]
        state.V[pq] += dx[len(ns):]
        it += 1
        iterates.append(state.copy())
    return PowerFlowResult(state, it, history, converged, branch_flows(case, state), iterates,
                           "nr")


LinearSolve = Callable[[np.ndarray], np.ndarray]


def decoupled_iteration(
    case: NetworkCase,
    solve_p: LinearSolve,
    solve_q: LinearSolve,
    b_tilde0: np.ndarray,
    tol: float = 1e-4,
    max_iter: int = 100,
    method: str = "fdlf",
    state: PowerFlowState | None = None,
) -> PowerFlowResult:
    """Modified fast-decoupled loop shared by the classical and quantum solvers.

    ``solve_p`` must return ``x`` with ``-B' x = rhs`` (``x = V dtheta``) and
    ``solve_q`` ``dV`` with ``-B~'' dV = rhs``. Each pass computes both
    mismatches from one snapshot, then updates ``theta`` and ``V`` together.
    The ground part uses the previous pass's ``dV`` (zero on the first pass).
    """
    Y = build_ybus(case)
    state = flat_start(case) if state is None else state.copy()
    ns, pq = case.non_slack, case.pq
    dv_prev = np.zeros(len(pq))
    history, iterates = [], []
    converged = False
    it = 0
    while True:
        dp, dq = mismatch(case, state, Y)
        history.append(_max_abs(dp, dq))
        if history[-1] < tol:
            converged = True
            break
        if it >= max_iter:
            break
        v_dtheta = solve_p(dp / state.V[ns])
        dv = solve_q(dq / state.V[pq] + b_tilde0 @ dv_prev) if len(pq) else dv_prev
        state.theta[ns] += v_dtheta / state.V[ns]
        state.V[pq] += dv
        dv_prev = dv
        it += 1
        iterates.append(state.copy())
    return PowerFlowResult(state, it, history, converged, branch_flows(case, state), iterates,
                           method)


def classical_fdlf(case: NetworkCase, tol: float = 1e-4, max_iter: int = 100) -> PowerFlowResult:
    """Dense-solve twin of the quantum driver."""
    m = build_fdlf_matrices(case)
    a_p, a_q = -m.b_prime, -m.b_tilde
    return decoupled_iteration(
        case,
        lambda rhs: np.linalg.solve(a_p, rhs),
        lambda rhs: np.linalg.solve(a_q, rhs),
        m.b_tilde0,
        tol,
        max_iter,
        "fdlf",
    )

"""Centralised benchmark: stochastic dispatch, nodal prices, equilibrium checks.

The dispatch LP maximises total expected utility over participant plans and
network injections, with the piecewise-linear utilities expressed through
epigraph variables.  Its equality duals are the contingent nodal prices: the
multiplier on the bus balance row is the marginal expected system cost of
delivering one more MW at that bus in that scenario.

The equilibrium checker is deliberately independent of the dispatch LP for
the participant side: each participant's price-taking problem is separable
and piecewise linear, so it is maximised exactly by scanning breakpoints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import lp
from .market import Market
from .network import LoadingMatrix, build_loading_matrix
from .participants import Participant

__all__ = [
    "DispatchSolution",
    "PriceSystem",
    "EquilibriumReport",
    "DispatchInfeasibleError",
    "solve_dispatch",
    "lmp_from_marginals",
    "welfare_gap",
    "check_arrow_debreu",
]


class DispatchInfeasibleError(RuntimeError):
    """The welfare maximisation has no feasible plan."""

    def __init__(self, status: str):
        super().__init__(f"dispatch problem is {status}")
        self.status = status


@dataclass(frozen=True)
class PriceSystem:
    """Contingent nodal prices, shape (S, N).

    With utilities stated in injection convention the balance duals come out
    nonnegative wherever demand carries value, so ``prices`` equals the raw
    duals; both are kept so consumers can tell the reporting convention from
    the solver output.
    """

    prices: np.ndarray
    raw_duals: np.ndarray


@dataclass(frozen=True)
class DispatchSolution:
    """Optimal plan plus every dual needed for pricing and verification.

    ``zeta[pid][s]`` is the per-scenario commitment force for day-ahead
    participants (sums to zero over scenarios); ``beta`` are the loading-row
    duals and ``gamma_s`` the per-scenario system balance duals.
    """

    plans: dict[str, np.ndarray]
    x: np.ndarray
    objective: float
    lambda_: np.ndarray
    gamma_s: np.ndarray
    beta: np.ndarray
    eta_lower: dict[str, np.ndarray]
    eta_upper: dict[str, np.ndarray]
    zeta: dict[str, np.ndarray]

    @property
    def price_system(self) -> PriceSystem:
        return PriceSystem(prices=self.lambda_, raw_duals=self.lambda_)


def solve_dispatch(market: Market, lm: LoadingMatrix | None = None) -> DispatchSolution:
    """Maximise total expected utility subject to local and network limits."""
    lm = build_loading_matrix(market.network) if lm is None else lm
    parts = market.participants
    n_i, n_s, n_n = len(parts), market.scenario_count, market.network.bus_count
    n_rows = lm.rows.shape[0]
    n_vars = 2 * n_i * n_s + n_n * n_s

    def p_idx(i: int, s: int) -> int:
        return i * n_s + s

    def u_idx(i: int, s: int) -> int:
        return n_i * n_s + i * n_s + s

    def x_idx(n: int, s: int) -> int:
        return 2 * n_i * n_s + n * n_s + s

    c = np.zeros(n_vars)
    lower = np.full(n_vars, -np.inf)
    upper = np.full(n_vars, np.inf)
    rows_eq: list[np.ndarray] = []
    rhs_eq: list[float] = []
    rows_ub: list[np.ndarray] = []
    rhs_ub: list[float] = []

    for i, p in enumerate(parts):
        w = p.weights(market.scenarios)
        for s in range(n_s):
            c[u_idx(i, s)] = w[s]
            lower[p_idx(i, s)], upper[p_idx(i, s)] = p.bounds[s]
            slopes, intercepts = p.utility[s].segments()
            for m, a in zip(slopes, intercepts):
                row = np.zeros(n_vars)
                row[u_idx(i, s)] = 1.0
                row[p_idx(i, s)] = -m
                rows_ub.append(row)
                rhs_ub.append(a)

    # Bus balance rows first (their duals are the prices), then system
    # balance, then day-ahead commitment chains.
    for n in range(n_n):
        members = [i for i, p in enumerate(parts) if p.bus == n]
        for s in range(n_s):
            row = np.zeros(n_vars)
            row[x_idx(n, s)] = 1.0
            for i in members:
                row[p_idx(i, s)] = -1.0
            rows_eq.append(row)
            rhs_eq.append(0.0)
    for s in range(n_s):
        row = np.zeros(n_vars)
        for n in range(n_n):
            row[x_idx(n, s)] = 1.0
        rows_eq.append(row)
        rhs_eq.append(0.0)
    da_indices = [i for i, p in enumerate(parts) if p.timing == "DA"]
    for i in da_indices:
        for s in range(n_s - 1):
            row = np.zeros(n_vars)
            row[p_idx(i, s)] = 1.0
            row[p_idx(i, s + 1)] = -1.0
            rows_eq.append(row)
            rhs_eq.append(0.0)

    for s in range(n_s):
        limits = lm.limits_for(s if lm.scenario_limits is not None else None)
        for r in range(n_rows):
            row = np.zeros(n_vars)
            for n in range(n_n):
                row[x_idx(n, s)] = lm.rows[r, n]
            rows_ub.append(row)
            rhs_ub.append(limits[r])

    program = lp.LinearProgram(
        sense="max",
        c=c,
        a_eq=np.array(rows_eq),
        b_eq=np.array(rhs_eq),
        a_ub=np.array(rows_ub) if rows_ub else None,
        b_ub=np.array(rhs_ub) if rows_ub else None,
        lower=lower,
        upper=upper,
    )
    sol = lp.solve(program)
    if sol.status != "optimal":
        raise DispatchInfeasibleError(sol.status)

    plans = {
        p.id: np.array([sol.x[p_idx(i, s)] for s in range(n_s)])
        for i, p in enumerate(parts)
    }
    x = np.array([[sol.x[x_idx(n, s)] for n in range(n_n)] for s in range(n_s)])
    lam = np.array([[sol.duals_eq[n * n_s + s] for n in range(n_n)] for s in range(n_s)])
    gamma_s = np.array([sol.duals_eq[n_n * n_s + s] for s in range(n_s)])
    zeta: dict[str, np.ndarray] = {}
    offset = n_n * n_s + n_s
    for i in da_indices:
        chain = sol.duals_eq[offset: offset + n_s - 1]
        offset += n_s - 1
        nu = np.zeros(n_s)
        for s in range(n_s):
            nu[s] = (chain[s] if s < n_s - 1 else 0.0) - (chain[s - 1] if s > 0 else 0.0)
        zeta[parts[i].id] = nu
    n_hypo = sum(len(p.utility[s].slopes) for p in parts for s in range(n_s))
    beta_flat = sol.duals_ub[n_hypo:]
    beta = beta_flat.reshape(n_s, n_rows)
    eta_lower = {
        p.id: np.array([sol.duals_lower[p_idx(i, s)] for s in range(n_s)])
        for i, p in enumerate(parts)
    }
    eta_upper = {
        p.id: np.array([sol.duals_upper[p_idx(i, s)] for s in range(n_s)])
        for i, p in enumerate(parts)
    }
    return DispatchSolution(
        plans=plans,
        x=x,
        objective=sol.objective,
        lambda_=lam,
        gamma_s=gamma_s,
        beta=beta,
        eta_lower=eta_lower,
        eta_upper=eta_upper,
        zeta=zeta,
    )


def lmp_from_marginals(
    market: Market,
    plans: Mapping[str, np.ndarray],
    n: int,
    s: int,
    interior_tol: float = 1e-7,
) -> float | None:
    """Price quote from a strictly interior flexible participant at bus ``n``.

    Works only when some real-time participant's injection sits strictly
    inside its bounds and away from utility breakpoints, where the marginal
    value is unambiguous; otherwise returns ``None`` and the caller should
    fall back to the dispatch duals.  The quote is weighted with the
    probabilities the participant itself trades on, which is what the
    benchmark's balance duals reflect.
    """
    for p in market.at_bus(n):
        if p.timing != "RT":
            continue
        val = float(np.asarray(plans[p.id])[s])
        lo, hi = p.bounds[s]
        if not (lo + interior_tol < val < hi - interior_tol):
            continue
        if any(abs(val - b) <= interior_tol for b in p.utility[s].breakpoints):
            continue
        left, right = p.utility[s].marginals(val)
        return -float(p.weights(market.scenarios)[s]) * left
    return None


def welfare_gap(
    market: Market,
    plans: Mapping[str, np.ndarray],
    solution: DispatchSolution,
) -> float:
    """Optimality gap of a plan, clamped at zero for round-off.

    Both sides are valued with the probabilities each participant trades on,
    which coincides with the market-probability welfare when no subjective
    overrides are present.
    """
    achieved = market.total_utility(dict(plans), subjective=True)
    return max(0.0, solution.objective - achieved)


@dataclass(frozen=True)
class EquilibriumReport:
    """Price-taking optimality slacks for everyone plus market clearing."""

    participant_ok: dict[str, bool]
    participant_slack: dict[str, float]
    so_ok: bool
    so_slack: float
    clearing_residual: float
    clearing_ok: bool
    verdict: bool
    tol: float


def _best_response_value(p: Participant, lam_at_bus: np.ndarray, w: np.ndarray) -> float:
    """Exact maximum of the participant's price-taking objective."""
    if p.timing == "DA":
        lo, hi = p.bounds[0]
        candidates = {lo, hi}
        for s in range(len(w)):
            candidates.update(b for b in p.utility[s].breakpoints if lo < b < hi)
        return max(
            sum(lam_at_bus[s] * z + w[s] * p.utility[s].value(z) for s in range(len(w)))
            for z in candidates
        )
    total = 0.0
    for s in range(len(w)):
        lo, hi = p.bounds[s]
        candidates = {lo, hi}
        candidates.update(b for b in p.utility[s].breakpoints if lo < b < hi)
        total += max(lam_at_bus[s] * z + w[s] * p.utility[s].value(z) for z in candidates)
    return total


def check_arrow_debreu(
    market: Market,
    plans: Mapping[str, np.ndarray],
    x: np.ndarray,
    prices: np.ndarray,
    tol: float = 1e-6,
    lm: LoadingMatrix | None = None,
) -> EquilibriumReport:
    """Do plans, injections, and prices form a competitive equilibrium?

    Checks, with slack at most ``tol * (1 + |optimum|)`` each: every
    participant maximises payment plus expected utility over its own set at
    the given prices; the network operator's injection maximises conversion
    profit over the feasible polytope; and every contingent commodity clears.
    """
    lm = build_loading_matrix(market.network) if lm is None else lm
    prices = np.asarray(prices, dtype=float)
    x = np.asarray(x, dtype=float)
    participant_ok: dict[str, bool] = {}
    participant_slack: dict[str, float] = {}
    for p in market.participants:
        w = p.weights(market.scenarios)
        lam = prices[:, p.bus]
        plan = np.asarray(plans[p.id], dtype=float)
        actual = sum(
            lam[s] * plan[s] + w[s] * p.utility[s].value(plan[s])
            for s in range(market.scenario_count)
        )
        best = _best_response_value(p, lam, w)
        slack = best - actual
        participant_slack[p.id] = float(slack)
        participant_ok[p.id] = slack <= tol * (1.0 + abs(best))

    so_slack = 0.0
    for s in range(market.scenario_count):
        limits = lm.limits_for(s if lm.scenario_limits is not None else None)
        program = lp.LinearProgram(
            sense="max",
            c=-prices[s],
            a_eq=np.ones((1, market.network.bus_count)),
            b_eq=np.zeros(1),
            a_ub=lm.rows,
            b_ub=limits,
        )
        sol = lp.solve(program)
        if sol.status != "optimal":
            raise lp.LpError(f"operator profit LP ended {sol.status}")
        so_slack += sol.objective - float(-prices[s] @ x[s])
    so_scale = 1.0 + abs(float(np.abs(prices).sum())) * float(np.abs(lm.limits).max() if lm.limits.size else 0.0)
    so_ok = so_slack <= tol * so_scale

    clearing = float(np.max(np.abs(x - market.aggregate_nodal(dict(plans))), initial=0.0))
    clearing_ok = clearing <= tol * (1.0 + float(np.max(np.abs(x), initial=0.0)))

    return EquilibriumReport(
        participant_ok=participant_ok,
        participant_slack=participant_slack,
        so_ok=so_ok,
        so_slack=float(so_slack),
        clearing_residual=clearing,
        clearing_ok=clearing_ok,
        verdict=all(participant_ok.values()) and so_ok and clearing_ok,
        tol=tol,
    )

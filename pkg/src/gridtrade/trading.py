"""System-operator trading engine.

Trades are balanced multilateral exchanges of scenario-contingent power.
The operator never optimises: it validates each submitted trade, checks it
against the announced binding-line directions, scales it back just enough
to stay inside the network polytope, and applies it.  Because every
accepted step lands inside the feasible region, the run can stop at any
point with a safe dispatch.

The loop terminates when the proposer certifies that no trade worth at
least ``epsilon`` exists (by convention via one whole-market search), or
when ``max_steps`` is exhausted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping

import numpy as np

from .market import Market
from .network import (
    BALANCE_TOL,
    BINDING_TOL,
    DIRECTION_TOL,
    FEASIBILITY_TOL,
    LoadingMatrix,
    binding_lines,
    build_loading_matrix,
    check_feasible,
    curtailment_factor,
    is_feasible_direction,
)
from .participants import evaluate_utility, local_feasible

__all__ = [
    "Trade",
    "TradeRecord",
    "TradingState",
    "EngineConfig",
    "Certificate",
    "TradingResult",
    "nodal_injection",
    "validate_trade",
    "is_worthy",
    "so_step",
    "announce",
    "run_trading",
]


@dataclass(frozen=True)
class Trade:
    """Sparse map of participant id to per-scenario injection increments."""

    plans: Mapping[str, np.ndarray]

    def __post_init__(self) -> None:
        clean: dict[str, np.ndarray] = {}
        for pid in sorted(self.plans):
            arr = np.array(self.plans[pid], dtype=float)
            if arr.ndim != 1:
                raise ValueError(f"{pid}: plan must be a per-scenario vector")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{pid}: plan entries must be finite")
            arr.setflags(write=False)
            clean[pid] = arr
        object.__setattr__(self, "plans", clean)

    @property
    def group(self) -> tuple[str, ...]:
        return tuple(pid for pid, arr in self.plans.items() if np.any(arr != 0.0))


@dataclass(frozen=True)
class TradeRecord:
    """One submission: the proposal, the operator's decision, and the context."""

    step: int
    trade: Trade
    gamma: float
    accepted: bool
    reasons: tuple[str, ...]
    nodal: np.ndarray
    welfare_delta: float
    binding_after: tuple[tuple[int, ...], ...]
    gamma_by_scenario: tuple[float, ...] | None = None


@dataclass(frozen=True)
class TradingState:
    """Accumulated participant plans and the implied network state."""

    y: Mapping[str, np.ndarray]
    x: np.ndarray
    records: tuple[TradeRecord, ...] = ()

    @classmethod
    def initial(cls, market: Market) -> "TradingState":
        for p in market.participants:
            if not local_feasible(p, np.zeros(market.scenario_count)):
                raise ValueError(
                    f"{p.id}: zero injection is not locally feasible; "
                    "represent fixed obligations with elastic bounds and a value slope"
                )
        return cls(
            y={pid: np.zeros(market.scenario_count) for pid in market.participant_ids},
            x=np.zeros((market.scenario_count, market.network.bus_count)),
        )

    def welfare(self, market: Market, subjective: bool = False) -> float:
        return market.total_utility(dict(self.y), subjective=subjective)


@dataclass(frozen=True)
class EngineConfig:
    """Operator-side knobs for one run."""

    epsilon: float = 1e-3
    curtailment_mode: str = "uniform"
    max_steps: int = 500
    seed: int = 0
    feas_tol: float = FEASIBILITY_TOL
    binding_tol: float = BINDING_TOL
    direction_tol: float = DIRECTION_TOL
    balance_tol: float = BALANCE_TOL
    local_tol: float = 1e-9

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.curtailment_mode not in ("uniform", "hybrid"):
            raise ValueError("curtailment_mode must be 'uniform' or 'hybrid'")


@dataclass(frozen=True)
class Certificate:
    """Proof of termination: best whole-market improvement found."""

    optimum: float


@dataclass(frozen=True)
class TradingResult:
    state: TradingState
    converged: bool
    certified_bound: float | None
    steps: int
    final_welfare: float


def nodal_injection(trade: Trade, market: Market) -> np.ndarray:
    """Per-scenario nodal injections (S, N) induced by a trade."""
    q = np.zeros((market.scenario_count, market.network.bus_count))
    for pid, plan in trade.plans.items():
        p = market.participant(pid)
        if plan.shape != (market.scenario_count,):
            raise ValueError(f"{pid}: plan must cover {market.scenario_count} scenarios")
        q[:, p.bus] += plan
    return q


def validate_trade(
    trade: Trade,
    state: TradingState,
    market: Market,
    balance_tol: float = BALANCE_TOL,
    local_tol: float = 1e-9,
) -> list[str]:
    """Empty list when acceptable, else one message per violation."""
    problems: list[str] = []
    for pid in trade.plans:
        if pid not in state.y:
            raise KeyError(f"unknown participant id {pid!r}")
    if not trade.group:
        problems.append("degenerate: all increments are zero")
        return problems
    sums = np.zeros(market.scenario_count)
    for plan in trade.plans.values():
        sums += plan
    for s, r in enumerate(sums):
        if abs(r) > balance_tol:
            problems.append(f"balance: scenario {s} sums to {r:.3e}")
    for pid in trade.group:
        p = market.participant(pid)
        target = state.y[pid] + trade.plans[pid]
        if not local_feasible(p, target, local_tol):
            kind = "non-anticipation" if (
                p.timing == "DA" and np.ptp(target) > local_tol
            ) else "bounds"
            problems.append(f"local: {pid} violates {kind}")
    return problems


def is_worthy(
    trade: Trade,
    state: TradingState,
    epsilon: float,
    market: Market,
) -> tuple[bool, float]:
    """Group utility change of the proposal against the threshold.

    Each member values the change with their own probabilities, so a trade
    can be worthwhile to heterogeneous believers.
    """
    delta = 0.0
    for pid in trade.group:
        p = market.participant(pid)
        before = evaluate_utility(p, state.y[pid], market.scenarios)
        after = evaluate_utility(p, state.y[pid] + trade.plans[pid], market.scenarios)
        delta += after - before
    return delta >= epsilon, delta


def _market_prob_delta(trade: Trade, state: TradingState, market: Market, gamma) -> float:
    w = market.scenarios.as_array()
    delta = 0.0
    for pid in trade.group:
        p = market.participant(pid)
        y = state.y[pid]
        stepped = y + gamma * trade.plans[pid]
        for s in range(market.scenario_count):
            delta += w[s] * (p.utility[s].value(stepped[s]) - p.utility[s].value(y[s]))
    return delta


def _normalize(trade: Trade, market: Market) -> Trade:
    """Snap solver round-off: exact non-anticipation, then exact balance.

    Residuals are already within the validation tolerances; this keeps them
    from compounding across hundreds of accepted steps.
    """
    plans = {pid: np.array(arr) for pid, arr in trade.plans.items()}
    for pid in list(plans):
        p = market.participant(pid)
        if p.timing == "DA" and plans[pid].size > 1 and np.ptp(plans[pid]) != 0.0:
            plans[pid][:] = math.fsum(plans[pid]) / plans[pid].size
    group = [pid for pid in plans if np.any(plans[pid] != 0.0)]
    if not group:
        return Trade(plans)
    rt_group = [pid for pid in group if market.participant(pid).timing == "RT"]
    if rt_group:
        for s in range(market.scenario_count):
            residual = math.fsum(plans[pid][s] for pid in group)
            if residual != 0.0:
                target = max(rt_group, key=lambda pid: (abs(plans[pid][s]), pid))
                plans[target][s] -= residual
    else:
        residual = math.fsum(plans[pid][0] for pid in group)
        if residual != 0.0:
            target = max(group, key=lambda pid: (abs(plans[pid][0]), pid))
            plans[target] -= residual
    return Trade(plans)


def announce(
    state: TradingState,
    lm: LoadingMatrix,
    binding_tol: float = BINDING_TOL,
) -> tuple[tuple[int, ...], ...]:
    """Binding loading-row indices per scenario, in ascending order."""
    per_scenario = []
    for s in range(state.x.shape[0]):
        scen = s if lm.scenario_limits is not None else None
        per_scenario.append(binding_lines(lm, state.x[s], binding_tol, scenario=scen))
    return tuple(per_scenario)


def _rejection(
    state: TradingState, trade: Trade, market: Market, lm: LoadingMatrix,
    config: EngineConfig, reasons: Iterable[str], step: int,
) -> tuple[TradeRecord, TradingState]:
    try:
        q = nodal_injection(trade, market)
    except (KeyError, ValueError):
        q = np.zeros_like(state.x)
    record = TradeRecord(
        step=step,
        trade=trade,
        gamma=0.0,
        accepted=False,
        reasons=tuple(reasons),
        nodal=q,
        welfare_delta=0.0,
        binding_after=announce(state, lm, config.binding_tol),
    )
    return record, replace(state, records=state.records + (record,))


def so_step(
    state: TradingState,
    trade: Trade,
    config: EngineConfig,
    lm: LoadingMatrix,
    market: Market,
    step: int | None = None,
) -> tuple[TradeRecord, TradingState]:
    """Operator decision on one submitted trade.

    Invalid or wrong-direction trades are rejected with the state unchanged;
    otherwise the trade is scaled by the ratio-test factor and applied.
    Scenario-wise factors are used only in hybrid mode and only when no
    day-ahead participant is involved, since they would otherwise break
    non-anticipation.
    """
    k = len(state.records) if step is None else step
    problems = validate_trade(trade, state, market, config.balance_tol, config.local_tol)
    if problems:
        return _rejection(state, trade, market, lm, config, problems, k)
    trade = _normalize(trade, market)
    q = nodal_injection(trade, market)
    if not is_feasible_direction(lm, state.x, q, config.direction_tol, config.binding_tol):
        return _rejection(state, trade, market, lm, config,
                          ["direction: increases loading on a binding line"], k)

    group_has_da = any(market.participant(pid).timing == "DA" for pid in trade.group)
    gamma_by_scenario: tuple[float, ...] | None = None
    if config.curtailment_mode == "hybrid" and not group_has_da:
        gammas = [
            curtailment_factor(lm, state.x, q, config.feas_tol, config.direction_tol, scenarios=[s])
            for s in range(market.scenario_count)
        ]
        gamma_by_scenario = tuple(gammas)
        gamma_vec = np.asarray(gammas)
        gamma = float(min(gammas))
    else:
        gamma = curtailment_factor(lm, state.x, q, config.feas_tol, config.direction_tol)
        gamma_vec = gamma
    if gamma <= 0.0:
        return _rejection(state, trade, market, lm, config, ["no headroom after ratio test"], k)

    new_y = {pid: np.array(arr) for pid, arr in state.y.items()}
    for pid, plan in trade.plans.items():
        new_y[pid] = new_y[pid] + gamma_vec * plan
    new_x = state.x + (gamma_vec[:, None] if gamma_by_scenario else gamma) * q
    delta = _market_prob_delta(trade, state, market, gamma_vec)
    interim = TradingState(y=new_y, x=new_x, records=state.records)
    record = TradeRecord(
        step=k,
        trade=trade,
        gamma=gamma,
        accepted=True,
        reasons=(),
        nodal=q,
        welfare_delta=delta,
        binding_after=announce(interim, lm, config.binding_tol),
        gamma_by_scenario=gamma_by_scenario,
    )
    return record, TradingState(y=new_y, x=new_x, records=state.records + (record,))


def run_trading(
    market: Market,
    config: EngineConfig,
    proposer: "Callable | object",
    lm: LoadingMatrix | None = None,
) -> TradingResult:
    """Run announce/propose/curtail/update until certified or out of steps.

    ``proposer`` must expose ``propose(market, state, announcements, epsilon,
    rng)`` returning either a :class:`Trade` or a :class:`Certificate`.
    """
    lm = build_loading_matrix(market.network) if lm is None else lm
    state = TradingState.initial(market)
    rng = np.random.default_rng(config.seed)
    converged = False
    certified: float | None = None
    steps = 0
    while steps < config.max_steps:
        announcements = announce(state, lm, config.binding_tol)
        proposal = proposer.propose(market, state, announcements, config.epsilon, rng)
        if isinstance(proposal, Certificate):
            converged = True
            certified = proposal.optimum
            break
        worthy, _ = is_worthy(proposal, state, config.epsilon, market)
        if not worthy:
            _, state = _rejection(state, proposal, market, lm, config,
                                  ["not epsilon-worthy"], len(state.records))
            steps += 1
            continue
        _, state = so_step(state, proposal, config, lm, market)
        steps += 1
        report = check_feasible(lm, state.x, config.feas_tol, config.balance_tol)
        if not report.ok:  # pragma: no cover - engine invariant
            raise AssertionError(f"post-step state infeasible: {report}")
    return TradingResult(
        state=state,
        converged=converged,
        certified_bound=certified,
        steps=steps,
        final_welfare=state.welfare(market),
    )

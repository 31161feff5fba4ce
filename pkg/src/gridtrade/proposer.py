"""Participant-side trade formation.

A group's best joint move is found by an exact linear program over the
piecewise-linear utilities: maximise the group's expected utility gain
subject to per-scenario balance, the operator's announced loading-vector
directions, injection bounds, and day-ahead commitment.  Imposing the
announced directions inside the search (rather than filtering afterwards)
guarantees the operator will accept a positive fraction of the trade.

Only a whole-market search can certify termination; subset strategies fall
back to one such search when their own attempts come up empty.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import lp
from .market import Market
from .network import LoadingMatrix, build_loading_matrix
from .participants import evaluate_utility
from .trading import Certificate, Trade, TradingState

__all__ = [
    "ProposerStrategy",
    "GroupSampler",
    "sample_group",
    "find_worthy_fd_trade",
    "FullGroupProposer",
    "SubsetProposer",
    "make_proposer",
]

_ENTRY_EPS = 1e-11


@dataclass(frozen=True)
class ProposerStrategy:
    """Group-formation policy: whole market, all small subsets, or sampling."""

    mode: str = "full_group"
    max_size: int = 2
    attempts: int = 20
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("full_group", "exhaustive_subsets", "random_subsets"):
            raise ValueError(f"unknown proposer mode {self.mode!r}")
        if self.max_size < 2:
            raise ValueError("max_size must be >= 2")
        if self.attempts < 1:
            raise ValueError("attempts must be >= 1")


class GroupSampler:
    """Draws candidate trading groups according to a strategy.

    Exhaustive mode walks all subsets of size 2..max_size in lexicographic
    order across successive calls, then wraps around.  Random mode first
    draws a size, then a subset, so every admissible subset has positive
    probability.
    """

    def __init__(self, strategy: ProposerStrategy, participant_ids: tuple[str, ...]):
        if len(participant_ids) < 2:
            raise ValueError("need at least two participants to form groups")
        self.strategy = strategy
        self.ids = tuple(participant_ids)
        self._cycle: "itertools.cycle | None" = None
        if strategy.mode == "exhaustive_subsets":
            subsets = [
                combo
                for size in range(2, min(strategy.max_size, len(self.ids)) + 1)
                for combo in itertools.combinations(self.ids, size)
            ]
            self._subsets = subsets
            self._cycle = itertools.cycle(subsets)

    @property
    def cycle_length(self) -> int:
        return len(self._subsets) if self._cycle is not None else 1

    def sample(self, rng: np.random.Generator) -> tuple[str, ...]:
        mode = self.strategy.mode
        if mode == "full_group":
            return self.ids
        if mode == "exhaustive_subsets":
            return next(self._cycle)
        size = int(rng.integers(2, min(self.strategy.max_size, len(self.ids)) + 1))
        members = rng.choice(len(self.ids), size=size, replace=False)
        return tuple(self.ids[i] for i in sorted(members))


def sample_group(sampler: GroupSampler, rng: np.random.Generator) -> tuple[str, ...]:
    return sampler.sample(rng)


def find_worthy_fd_trade(
    group: tuple[str, ...],
    state: TradingState,
    announcements: tuple[tuple[int, ...], ...],
    epsilon: float,
    market: Market,
    lm: LoadingMatrix,
) -> tuple[Trade | None, float]:
    """Best balanced feasible-direction move for ``group``.

    Returns ``(trade, optimum)`` when the utility improvement reaches
    ``epsilon``, else ``(None, optimum)``: the optimum is the exact best
    improvement available to this group at this state, so a value below
    ``epsilon`` from the full group certifies termination.
    """
    members = [market.participant(pid) for pid in sorted(set(group))]
    if not members:
        raise ValueError("group must not be empty")
    n_s = market.scenario_count
    n_members = len(members)
    n_vars = 2 * n_members * n_s  # injection deltas then utility epigraph values

    def d_idx(i: int, s: int) -> int:
        return i * n_s + s

    def u_idx(i: int, s: int) -> int:
        return n_members * n_s + i * n_s + s

    c = np.zeros(n_vars)
    lower = np.full(n_vars, -np.inf)
    upper = np.full(n_vars, np.inf)
    base_utility = 0.0
    rows_ub: list[np.ndarray] = []
    rhs_ub: list[float] = []
    rows_eq: list[np.ndarray] = []
    rhs_eq: list[float] = []

    for i, p in enumerate(members):
        w = p.weights(market.scenarios)
        y = state.y[p.id]
        base_utility += evaluate_utility(p, y, market.scenarios)
        for s in range(n_s):
            c[u_idx(i, s)] = w[s]
            lo, hi = p.bounds[s]
            lower[d_idx(i, s)] = lo - y[s]
            upper[d_idx(i, s)] = hi - y[s]
            slopes, intercepts = p.utility[s].segments()
            for m, a in zip(slopes, intercepts):
                row = np.zeros(n_vars)
                row[u_idx(i, s)] = 1.0
                row[d_idx(i, s)] = -m
                rows_ub.append(row)
                rhs_ub.append(a + m * y[s])
        if p.timing == "DA":
            for s in range(n_s - 1):
                row = np.zeros(n_vars)
                row[d_idx(i, s)] = 1.0
                row[d_idx(i, s + 1)] = -1.0
                rows_eq.append(row)
                rhs_eq.append(0.0)

    for s in range(n_s):
        row = np.zeros(n_vars)
        for i in range(n_members):
            row[d_idx(i, s)] = 1.0
        rows_eq.append(row)
        rhs_eq.append(0.0)

    for s, rows in enumerate(announcements):
        for r in rows:
            row = np.zeros(n_vars)
            for i, p in enumerate(members):
                row[d_idx(i, s)] = lm.rows[r, p.bus]
            rows_ub.append(row)
            rhs_ub.append(0.0)

    program = lp.LinearProgram(
        sense="max",
        c=c,
        a_eq=np.array(rows_eq),
        b_eq=np.array(rhs_eq),
        a_ub=np.array(rows_ub),
        b_ub=np.array(rhs_ub),
        lower=lower,
        upper=upper,
    )
    sol = lp.solve(program)
    if sol.status != "optimal":
        raise lp.LpError(f"trade search LP ended with status {sol.status}")
    optimum = sol.objective - base_utility
    if optimum < epsilon:
        return None, optimum
    plans = {}
    for i, p in enumerate(members):
        delta = np.array([sol.x[d_idx(i, s)] for s in range(n_s)])
        delta[np.abs(delta) < _ENTRY_EPS] = 0.0
        if np.any(delta != 0.0):
            plans[p.id] = delta
    return Trade(plans), optimum


class FullGroupProposer:
    """Always searches over the whole market; certifies when below epsilon."""

    def __init__(self, lm: LoadingMatrix | None = None):
        self._lm = lm

    def _loading(self, market: Market) -> LoadingMatrix:
        if self._lm is None:
            self._lm = build_loading_matrix(market.network)
        return self._lm

    def propose(self, market, state, announcements, epsilon, rng):
        trade, optimum = find_worthy_fd_trade(
            market.participant_ids, state, announcements, epsilon, market, self._loading(market)
        )
        if trade is None:
            return Certificate(optimum)
        return trade


class SubsetProposer:
    """Tries small groups first; one whole-market search settles termination."""

    def __init__(self, strategy: ProposerStrategy, lm: LoadingMatrix | None = None):
        self.strategy = strategy
        self._lm = lm
        self._sampler: GroupSampler | None = None
        self._own_rng = (
            np.random.default_rng(strategy.seed) if strategy.seed is not None else None
        )

    def _loading(self, market: Market) -> LoadingMatrix:
        if self._lm is None:
            self._lm = build_loading_matrix(market.network)
        return self._lm

    def propose(self, market, state, announcements, epsilon, rng):
        rng = self._own_rng if self._own_rng is not None else rng
        if self._sampler is None:
            self._sampler = GroupSampler(self.strategy, market.participant_ids)
        lm = self._loading(market)
        tries = (
            self._sampler.cycle_length
            if self.strategy.mode == "exhaustive_subsets"
            else self.strategy.attempts
        )
        for _ in range(tries):
            group = self._sampler.sample(rng)
            trade, optimum = find_worthy_fd_trade(group, state, announcements, epsilon, market, lm)
            if trade is not None:
                return trade
        trade, optimum = find_worthy_fd_trade(
            market.participant_ids, state, announcements, epsilon, market, lm
        )
        if trade is None:
            return Certificate(optimum)
        return trade


def make_proposer(strategy: ProposerStrategy, lm: LoadingMatrix | None = None):
    if strategy.mode == "full_group":
        return FullGroupProposer(lm)
    return SubsetProposer(strategy, lm)

"""Market participants: scenario model, piecewise-linear utilities, local bounds.

Utilities are concave piecewise-linear functions of the participant's power
injection, normalised so the value at zero injection is zero.  Producers
inject (``p >= 0``) and their utility is the negated cost; loads withdraw
(``p <= 0``) and their utility is the consumption benefit, so its slope with
respect to injection is negative.  Expected utility weights each scenario by
the market probability unless the participant carries a subjective override.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScenarioSet",
    "UtilityFunction",
    "Participant",
    "evaluate_utility",
    "marginal_utility",
    "local_feasible",
    "PROBABILITY_TOL",
]

PROBABILITY_TOL = 1e-12


@dataclass(frozen=True)
class ScenarioSet:
    """Finite scenario collection with strictly positive probabilities."""

    probabilities: tuple[float, ...]
    names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        probs = tuple(float(p) for p in self.probabilities)
        object.__setattr__(self, "probabilities", probs)
        if not probs:
            raise ValueError("at least one scenario is required")
        if any(p <= 0 for p in probs):
            raise ValueError("scenario probabilities must be positive")
        if abs(sum(probs) - 1.0) > PROBABILITY_TOL:
            raise ValueError(f"probabilities sum to {sum(probs)!r}, expected 1")
        if self.names is not None:
            names = tuple(self.names)
            if len(names) != len(probs):
                raise ValueError("names must match the number of scenarios")
            object.__setattr__(self, "names", names)

    @property
    def count(self) -> int:
        return len(self.probabilities)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probabilities)


@dataclass(frozen=True)
class UtilityFunction:
    """Concave piecewise-linear utility of injection, anchored at zero.

    ``breakpoints`` are strictly increasing and bracket the domain;
    ``slopes[j]`` is the marginal value on ``[breakpoints[j], breakpoints[j+1]]``
    and the sequence must be nonincreasing (strictly decreasing for a
    non-degenerate function).  The domain must contain 0 so the anchor
    ``value(0) == 0`` is well defined.
    """

    breakpoints: tuple[float, ...]
    slopes: tuple[float, ...]

    def __post_init__(self) -> None:
        bps = tuple(float(b) for b in self.breakpoints)
        slp = tuple(float(m) for m in self.slopes)
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "slopes", slp)
        if len(bps) < 2 or len(slp) != len(bps) - 1:
            raise ValueError("need K >= 2 breakpoints and K-1 slopes")
        if any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if any(m2 > m1 + 1e-12 for m1, m2 in zip(slp, slp[1:])):
            raise ValueError("slopes must be nonincreasing (concavity)")
        if not bps[0] <= 0.0 <= bps[-1]:
            raise ValueError("domain must contain 0 for value normalisation")
        values = [0.0] * len(bps)
        for j in range(1, len(bps)):
            values[j] = values[j - 1] + slp[j - 1] * (bps[j] - bps[j - 1])
        offset = self._interp(bps, values, 0.0)
        object.__setattr__(self, "_values", tuple(v - offset for v in values))

    @staticmethod
    def _interp(bps: tuple[float, ...], values: list[float], p: float) -> float:
        j = max(bisect.bisect_right(bps, p) - 1, 0)
        j = min(j, len(bps) - 2)
        return values[j] + (values[j + 1] - values[j]) / (bps[j + 1] - bps[j]) * (p - bps[j])

    @classmethod
    def constant_marginal(cls, slope: float, lower: float, upper: float) -> "UtilityFunction":
        """Single-segment utility covering ``[min(lower, 0), max(upper, 0)]``."""
        return cls((min(lower, 0.0), max(upper, 0.0)), (slope,))

    @property
    def domain(self) -> tuple[float, float]:
        return self.breakpoints[0], self.breakpoints[-1]

    @property
    def is_degenerate(self) -> bool:
        """True when some adjacent slopes tie, which blurs marginal pricing."""
        return any(abs(m1 - m2) <= 1e-12 for m1, m2 in zip(self.slopes, self.slopes[1:]))

    def _check_domain(self, p: float) -> None:
        lo, hi = self.domain
        if not lo - 1e-9 <= p <= hi + 1e-9:
            raise ValueError(f"injection {p} outside utility domain [{lo}, {hi}]")

    def value(self, p: float) -> float:
        self._check_domain(p)
        return self._interp(self.breakpoints, list(self._values), float(p))

    def marginals(self, p: float, tol: float = 0.0) -> tuple[float, float]:
        """One-sided derivatives ``(left, right)`` at ``p``, clamped to the domain.

        Equal away from breakpoints; at a domain endpoint both sides report
        the interior segment's slope.  ``tol`` snaps ``p`` onto a breakpoint
        within that distance, which optimality checks need because solver
        output lands on kinks only up to round-off.
        """
        self._check_domain(p)
        p = float(p)
        bps, slp = self.breakpoints, self.slopes
        if tol > 0.0:
            j = min(range(len(bps)), key=lambda k: abs(bps[k] - p))
            if abs(bps[j] - p) <= tol:
                p = bps[j]
        seg_left = min(max(bisect.bisect_left(bps, p) - 1, 0), len(slp) - 1)
        seg_right = min(max(bisect.bisect_right(bps, p) - 1, 0), len(slp) - 1)
        return slp[seg_left], slp[seg_right]

    def supergradient(self, p: float, tol: float = 0.0) -> tuple[float, float]:
        """Inclusive slope interval ``[right, left]`` supporting the graph at ``p``."""
        left, right = self.marginals(p, tol)
        return right, left

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-segment ``(slopes, intercepts)`` with value(p) = min(a + m p)."""
        m = np.asarray(self.slopes)
        b = np.asarray(self.breakpoints[:-1])
        v = np.asarray(self._values[:-1])
        return m, v - m * b


_KINDS = ("producer", "load")
_TIMINGS = ("DA", "RT")


@dataclass(frozen=True)
class Participant:
    """One producer or load at a bus, with per-scenario bounds and utilities.

    ``bounds[s]`` is the closed injection interval for scenario ``s``.  DA
    participants commit a single injection before the scenario is known, so
    their bounds must be identical across scenarios.
    """

    id: str
    bus: int
    kind: str
    timing: str
    bounds: tuple[tuple[float, float], ...]
    utility: tuple[UtilityFunction, ...]
    subjective_probabilities: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        if self.timing not in _TIMINGS:
            raise ValueError(f"timing must be one of {_TIMINGS}, got {self.timing!r}")
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        object.__setattr__(self, "bounds", bounds)
        utility = tuple(self.utility)
        object.__setattr__(self, "utility", utility)
        if len(bounds) != len(utility) or not bounds:
            raise ValueError("bounds and utility must cover the same S >= 1 scenarios")
        for lo, hi in bounds:
            if lo > hi:
                raise ValueError(f"{self.id}: empty bound interval [{lo}, {hi}]")
            if self.kind == "producer" and lo < 0:
                raise ValueError(f"{self.id}: producer bounds must lie in [0, inf)")
            if self.kind == "load" and hi > 0:
                raise ValueError(f"{self.id}: load bounds must lie in (-inf, 0]")
        if self.timing == "DA" and any(b != bounds[0] for b in bounds[1:]):
            raise ValueError(f"{self.id}: DA bounds must be identical across scenarios")
        for (lo, hi), u in zip(bounds, utility):
            dlo, dhi = u.domain
            if lo < dlo - 1e-9 or hi > dhi + 1e-9:
                raise ValueError(f"{self.id}: utility domain must cover the bounds")
        if self.subjective_probabilities is not None:
            probs = tuple(float(p) for p in self.subjective_probabilities)
            if len(probs) != len(bounds):
                raise ValueError(f"{self.id}: subjective probabilities must cover S scenarios")
            if any(p <= 0 for p in probs) or abs(sum(probs) - 1.0) > PROBABILITY_TOL:
                raise ValueError(f"{self.id}: subjective probabilities must be positive and sum to 1")
            object.__setattr__(self, "subjective_probabilities", probs)

    @property
    def scenario_count(self) -> int:
        return len(self.bounds)

    @classmethod
    def producer(
        cls,
        id: str,
        bus: int,
        timing: str,
        capacity: "float | tuple[float, ...]",
        marginal_cost: float,
        subjective_probabilities: tuple[float, ...] | None = None,
        scenario_count: int | None = None,
    ) -> "Participant":
        caps = capacity if isinstance(capacity, tuple) else (float(capacity),) * (scenario_count or 1)
        bounds = tuple((0.0, c) for c in caps)
        util = tuple(UtilityFunction.constant_marginal(-marginal_cost, 0.0, c) for c in caps)
        return cls(id, bus, "producer", timing, bounds, util, subjective_probabilities)

    @classmethod
    def load(
        cls,
        id: str,
        bus: int,
        timing: str,
        max_demand: "float | tuple[float, ...]",
        value: float,
        subjective_probabilities: tuple[float, ...] | None = None,
        scenario_count: int | None = None,
    ) -> "Participant":
        dem = max_demand if isinstance(max_demand, tuple) else (float(max_demand),) * (scenario_count or 1)
        bounds = tuple((-d, 0.0) for d in dem)
        util = tuple(UtilityFunction.constant_marginal(-value, -d, 0.0) for d in dem)
        return cls(id, bus, "load", timing, bounds, util, subjective_probabilities)

    def weights(self, scenarios: ScenarioSet) -> np.ndarray:
        """Probabilities this participant uses to value plans."""
        if self.subjective_probabilities is not None:
            return np.asarray(self.subjective_probabilities)
        return scenarios.as_array()


def evaluate_utility(participant: Participant, plan: np.ndarray, scenarios: ScenarioSet) -> float:
    """Expected utility of a per-scenario injection plan."""
    plan = np.asarray(plan, dtype=float)
    if plan.shape != (participant.scenario_count,):
        raise ValueError("plan must have one entry per scenario")
    for s, p in enumerate(plan):
        lo, hi = participant.bounds[s]
        if not lo - 1e-9 <= p <= hi + 1e-9:
            raise ValueError(f"{participant.id}: plan {p} outside bounds [{lo}, {hi}] in scenario {s}")
    w = participant.weights(scenarios)
    return float(sum(w[s] * participant.utility[s].value(plan[s]) for s in range(len(plan))))


def marginal_utility(participant: Participant, plan: np.ndarray, s: int) -> tuple[float, float]:
    """One-sided utility derivatives at the plan's scenario-``s`` injection."""
    plan = np.asarray(plan, dtype=float)
    return participant.utility[s].marginals(float(plan[s]))


def local_feasible(participant: Participant, plan: np.ndarray, tol: float = 1e-9) -> bool:
    """Bounds hold per scenario and DA plans are constant across scenarios."""
    plan = np.asarray(plan, dtype=float)
    if plan.shape != (participant.scenario_count,):
        return False
    for s, p in enumerate(plan):
        lo, hi = participant.bounds[s]
        if p < lo - tol or p > hi + tol:
            return False
    if participant.timing == "DA" and plan.size > 1:
        if np.max(plan) - np.min(plan) > tol:
            return False
    return True

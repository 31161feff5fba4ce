"""Market aggregate: network, scenario set, and participant roster."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Line, Network
from .participants import Participant, ScenarioSet, evaluate_utility

__all__ = ["Market", "two_bus_market"]


@dataclass(frozen=True)
class Market:
    network: Network
    scenarios: ScenarioSet
    participants: tuple[Participant, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "participants", tuple(self.participants))
        seen: set[str] = set()
        for p in self.participants:
            if p.id in seen:
                raise ValueError(f"duplicate participant id {p.id!r}")
            seen.add(p.id)
            if not 0 <= p.bus < self.network.bus_count:
                raise ValueError(f"{p.id}: bus {p.bus} out of range")
            if p.scenario_count != self.scenarios.count:
                raise ValueError(f"{p.id}: expected {self.scenarios.count} scenarios")
        object.__setattr__(self, "_by_id", {p.id: p for p in self.participants})

    @property
    def scenario_count(self) -> int:
        return self.scenarios.count

    @property
    def participant_ids(self) -> tuple[str, ...]:
        return tuple(p.id for p in self.participants)

    def participant(self, pid: str) -> Participant:
        try:
            return self._by_id[pid]
        except KeyError:
            raise KeyError(f"unknown participant id {pid!r}") from None

    def at_bus(self, bus: int) -> tuple[Participant, ...]:
        return tuple(p for p in self.participants if p.bus == bus)

    def zero_plans(self) -> dict[str, np.ndarray]:
        return {p.id: np.zeros(self.scenario_count) for p in self.participants}

    def aggregate_nodal(self, plans: dict[str, np.ndarray]) -> np.ndarray:
        """Per-scenario nodal injections (S, N) implied by participant plans."""
        x = np.zeros((self.scenario_count, self.network.bus_count))
        for pid, plan in plans.items():
            x[:, self.participant(pid).bus] += np.asarray(plan, dtype=float)
        return x

    def total_utility(self, plans: dict[str, np.ndarray], subjective: bool = False) -> float:
        """Sum of participant utilities; market probabilities unless ``subjective``."""
        total = 0.0
        for p in self.participants:
            plan = np.asarray(plans[p.id], dtype=float)
            if subjective:
                total += evaluate_utility(p, plan, self.scenarios)
            else:
                w = self.scenarios.as_array()
                total += float(sum(w[s] * p.utility[s].value(plan[s]) for s in range(len(plan))))
        return total


def two_bus_market(
    line_capacity: float = 120.0,
    load_value: float = 1000.0,
) -> Market:
    """Bundled demonstration market: two buses joined by one line.

    A day-ahead coal plant (cost 50, up to 200 MW) and a free wind farm
    (100 MW windy / 50 MW breezy) sit at bus 0; a fast gas plant (cost 80,
    up to 100 MW) and a 150 MW load sit at bus 1.  Scenario probabilities
    are 0.6 / 0.4.  The load is elastic down to zero consumption with a
    large constant value per MWh so that restoring curtailed demand is
    always worthwhile.
    """
    network = Network(
        bus_count=2,
        lines=(Line(from_bus=0, to_bus=1, reactance=1.0, capacity=line_capacity),),
        reference_bus=1,
    )
    scenarios = ScenarioSet(probabilities=(0.6, 0.4), names=("windy", "breezy"))
    participants = (
        Participant.producer("G1", bus=0, timing="DA", capacity=(200.0, 200.0), marginal_cost=50.0),
        Participant.producer("G2", bus=0, timing="RT", capacity=(100.0, 50.0), marginal_cost=0.0),
        Participant.producer("G3", bus=1, timing="RT", capacity=(100.0, 100.0), marginal_cost=80.0),
        Participant.load("L", bus=1, timing="DA", max_demand=(150.0, 150.0), value=load_value),
    )
    return Market(network, scenarios, participants)

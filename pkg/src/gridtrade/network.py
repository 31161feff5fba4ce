"""DC network model: topology, shift factors, and all feasibility queries.

Line flows are linear in nodal injections.  The loading matrix stacks the
shift-factor rows for both flow directions, so every capacity constraint has
the one-sided form ``h @ x <= limit``.  Injection arrays are scenario-major:
shape ``(S, N)``, one row per scenario.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Line",
    "Network",
    "LoadingMatrix",
    "ViolationReport",
    "DisconnectedNetworkError",
    "build_loading_matrix",
    "check_feasible",
    "binding_lines",
    "is_feasible_direction",
    "curtailment_factor",
    "FEASIBILITY_TOL",
    "BINDING_TOL",
    "DIRECTION_TOL",
    "BALANCE_TOL",
]

# Absolute tolerances in MW.  Feasibility is strict (post-curtailment states
# must satisfy it); binding detection is looser so that repeated ratio tests
# do not drop a genuinely active line to round-off.
FEASIBILITY_TOL = 1e-8
BINDING_TOL = 1e-6
DIRECTION_TOL = 1e-9
BALANCE_TOL = 1e-9


class DisconnectedNetworkError(ValueError):
    """Raised when the bus graph is not connected."""


@dataclass(frozen=True)
class Line:
    """Transmission line between two buses (0-indexed endpoints).

    ``capacity`` limits the magnitude of the flow in both directions; the
    positive flow direction is ``from_bus -> to_bus``.
    """

    from_bus: int
    to_bus: int
    reactance: float
    capacity: float

    def __post_init__(self) -> None:
        if self.from_bus == self.to_bus:
            raise ValueError(f"line endpoints must be distinct, got {self.from_bus}")
        if not self.reactance > 0:
            raise ValueError(f"reactance must be positive, got {self.reactance}")
        if not self.capacity > 0:
            raise ValueError(f"capacity must be positive, got {self.capacity}")


@dataclass(frozen=True)
class Network:
    """Connected transmission network with a flow reference bus."""

    bus_count: int
    lines: tuple[Line, ...]
    reference_bus: int = 0

    def __post_init__(self) -> None:
        if self.bus_count < 1:
            raise ValueError("bus_count must be >= 1")
        object.__setattr__(self, "lines", tuple(self.lines))
        for line in self.lines:
            for b in (line.from_bus, line.to_bus):
                if not 0 <= b < self.bus_count:
                    raise ValueError(f"line endpoint {b} out of range [0, {self.bus_count})")
        if not 0 <= self.reference_bus < self.bus_count:
            raise ValueError(f"reference_bus {self.reference_bus} out of range")
        if not self._connected():
            raise DisconnectedNetworkError("bus graph is not connected")

    @property
    def line_count(self) -> int:
        return len(self.lines)

    @property
    def is_tree(self) -> bool:
        return self.line_count == self.bus_count - 1

    def _connected(self) -> bool:
        if self.bus_count == 1:
            return True
        adj: list[list[int]] = [[] for _ in range(self.bus_count)]
        for line in self.lines:
            adj[line.from_bus].append(line.to_bus)
            adj[line.to_bus].append(line.from_bus)
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.bus_count

    def incidence(self) -> np.ndarray:
        """Oriented incidence matrix, one row per line (+1 from, -1 to)."""
        a = np.zeros((self.line_count, self.bus_count))
        for idx, line in enumerate(self.lines):
            a[idx, line.from_bus] = 1.0
            a[idx, line.to_bus] = -1.0
        return a


@dataclass(frozen=True)
class LoadingMatrix:
    """Stacked shift factors ``rows = [H_hat; -H_hat]`` with limits ``[r; r]``.

    Row ``l`` (0 <= l < L) is the forward direction of line ``l``; row
    ``l + L`` is its negation (reverse direction).  ``scenario_limits``, when
    present, overrides ``limits`` per scenario (shape ``(S, 2L)``).
    """

    rows: np.ndarray
    limits: np.ndarray
    scenario_limits: np.ndarray | None = None

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=float)
        limits = np.asarray(self.limits, dtype=float)
        if rows.ndim != 2 or rows.shape[0] % 2 != 0:
            raise ValueError("rows must be a (2L, N) matrix")
        if limits.shape != (rows.shape[0],):
            raise ValueError("limits must have one entry per row")
        rows.setflags(write=False)
        limits.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "limits", limits)
        if self.scenario_limits is not None:
            sl = np.asarray(self.scenario_limits, dtype=float)
            if sl.ndim != 2 or sl.shape[1] != rows.shape[0]:
                raise ValueError("scenario_limits must have shape (S, 2L)")
            sl.setflags(write=False)
            object.__setattr__(self, "scenario_limits", sl)

    @property
    def line_count(self) -> int:
        return self.rows.shape[0] // 2

    @property
    def bus_count(self) -> int:
        return self.rows.shape[1]

    def limits_for(self, scenario: int | None = None) -> np.ndarray:
        if scenario is None or self.scenario_limits is None:
            return self.limits
        return self.scenario_limits[scenario]

    def with_scenario_capacities(self, capacities: np.ndarray) -> "LoadingMatrix":
        """Attach per-scenario line capacities (shape ``(S, L)``)."""
        caps = np.asarray(capacities, dtype=float)
        if caps.ndim != 2 or caps.shape[1] != self.line_count:
            raise ValueError("capacities must have shape (S, L)")
        return LoadingMatrix(self.rows, self.limits, np.hstack([caps, caps]))


def build_loading_matrix(network: Network) -> LoadingMatrix:
    """Shift factors via the reduced weighted-Laplacian inverse.

    For any balanced injection ``p`` (sum zero), ``H_hat @ p`` is the DC line
    flow vector with the network's reference bus as the angle reference.
    Exact for the DC model; O(N^3) which is fine at the scale used here.
    """
    n, ref = network.bus_count, network.reference_bus
    a = network.incidence()
    b = np.array([1.0 / line.reactance for line in network.lines])
    lap = a.T @ (b[:, None] * a)
    keep = [i for i in range(n) if i != ref]
    h_hat = np.zeros((network.line_count, n))
    if keep:
        reduced = lap[np.ix_(keep, keep)]
        try:
            sol = np.linalg.solve(reduced, (b[:, None] * a[:, keep]).T)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded by Network
            raise DisconnectedNetworkError("singular susceptance matrix") from exc
        h_hat[:, keep] = sol.T
    caps = np.array([line.capacity for line in network.lines])
    return LoadingMatrix(np.vstack([h_hat, -h_hat]), np.concatenate([caps, caps]))


def _as_scenario_major(x: np.ndarray, n: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != n:
        raise ValueError(f"injections must have shape (S, {n}) or ({n},)")
    if not np.all(np.isfinite(arr)):
        # NaNs would sail through the one-sided comparisons below.
        raise ValueError("injections must be finite")
    return arr


@dataclass(frozen=True)
class ViolationReport:
    """Outcome of a feasibility check over all scenarios.

    ``line_violations`` holds ``(row, scenario, excess)`` triples for rows
    exceeding their limit beyond tolerance; ``balance_residuals`` holds the
    per-scenario injection sums.
    """

    line_violations: tuple[tuple[int, int, float], ...]
    balance_residuals: tuple[float, ...]
    balance_tol: float = BALANCE_TOL

    @property
    def balanced(self) -> bool:
        return all(abs(r) <= self.balance_tol for r in self.balance_residuals)

    @property
    def ok(self) -> bool:
        return not self.line_violations and self.balanced


def check_feasible(
    lm: LoadingMatrix,
    x: np.ndarray,
    tol: float = FEASIBILITY_TOL,
    balance_tol: float = BALANCE_TOL,
) -> ViolationReport:
    """Report every (row, scenario) limit violation and balance residual."""
    arr = _as_scenario_major(x, lm.bus_count)
    violations: list[tuple[int, int, float]] = []
    for s in range(arr.shape[0]):
        loading = lm.rows @ arr[s]
        excess = loading - lm.limits_for(s if lm.scenario_limits is not None else None)
        for row in np.flatnonzero(excess > tol):
            violations.append((int(row), s, float(excess[row])))
    residuals = tuple(float(arr[s].sum()) for s in range(arr.shape[0]))
    return ViolationReport(tuple(violations), residuals, balance_tol)


def binding_lines(
    lm: LoadingMatrix,
    x_s: np.ndarray,
    tol: float = BINDING_TOL,
    scenario: int | None = None,
) -> tuple[int, ...]:
    """Rows whose loading sits within ``tol`` of the limit, ascending.

    ``x_s`` is a single scenario's injection vector and must be feasible
    within ``tol``.
    """
    vec = np.asarray(x_s, dtype=float)
    if vec.shape != (lm.bus_count,):
        raise ValueError("binding_lines expects a single scenario vector")
    limits = lm.limits_for(scenario)
    loading = lm.rows @ vec
    excess = loading - limits
    if np.any(excess > tol):
        worst = float(excess.max())
        raise ValueError(f"injection infeasible by {worst:.3e} MW; binding set undefined")
    return tuple(int(r) for r in np.flatnonzero(np.abs(excess) <= tol))


def is_feasible_direction(
    lm: LoadingMatrix,
    x: np.ndarray,
    q: np.ndarray,
    tol: float = DIRECTION_TOL,
    binding_tol: float = BINDING_TOL,
) -> bool:
    """True iff ``q`` does not increase loading on any binding row, any scenario."""
    x_arr = _as_scenario_major(x, lm.bus_count)
    q_arr = _as_scenario_major(q, lm.bus_count)
    if x_arr.shape != q_arr.shape:
        raise ValueError("state and direction must have matching shapes")
    for s in range(x_arr.shape[0]):
        scen = s if lm.scenario_limits is not None else None
        rows = binding_lines(lm, x_arr[s], binding_tol, scenario=scen)
        if rows and np.any(lm.rows[list(rows)] @ q_arr[s] > tol):
            return False
    return True


def curtailment_factor(
    lm: LoadingMatrix,
    x: np.ndarray,
    q: np.ndarray,
    feas_tol: float = FEASIBILITY_TOL,
    direction_tol: float = DIRECTION_TOL,
    scenarios: "slice | list[int] | None" = None,
) -> float:
    """Largest gamma in [0, 1] with ``x + gamma * q`` feasible, by ratio test.

    The state must already be feasible.  Rows with loading increase at or
    below ``direction_tol`` never constrain gamma.  A binding row loaded
    beyond ``direction_tol`` yields gamma 0, which callers treat as a
    rejection.  Closed form, no search.
    """
    x_arr = _as_scenario_major(x, lm.bus_count)
    q_arr = _as_scenario_major(q, lm.bus_count)
    if x_arr.shape != q_arr.shape:
        raise ValueError("state and direction must have matching shapes")
    scenario_list = range(x_arr.shape[0]) if scenarios is None else scenarios
    gamma = 1.0
    for s in scenario_list:
        limits = lm.limits_for(s if lm.scenario_limits is not None else None)
        headroom = limits - lm.rows @ x_arr[s]
        if np.any(headroom < -feas_tol):
            raise ValueError("curtailment_factor requires a feasible state")
        increase = lm.rows @ q_arr[s]
        active = increase > direction_tol
        if np.any(active):
            ratios = np.maximum(headroom[active], 0.0) / increase[active]
            gamma = min(gamma, float(ratios.min()))
    return max(gamma, 0.0)

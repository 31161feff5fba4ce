import numpy as np
import pytest

from gridtrade.dispatch import (
    DispatchInfeasibleError,
    check_arrow_debreu,
    lmp_from_marginals,
    solve_dispatch,
    welfare_gap,
)
from gridtrade.generators import random_market
from gridtrade.market import Market, two_bus_market
from gridtrade.network import Line, Network, build_loading_matrix
from gridtrade.participants import Participant, ScenarioSet, UtilityFunction

from conftest import assert_plans_close, kkt_report


def two_bus_cost_oracle(cap: float) -> float:
    """Brute-force production cost: sweep the committed unit, fill by merit.

    For each candidate day-ahead output of the 50 $/MW unit, the free wind
    farm is used to the line's remaining room and the 80 $/MW unit covers the
    rest, per scenario.  Fine sweep over the one degree of freedom.
    """
    best = float("inf")
    for p1 in np.arange(0.0, 200.0 + 1e-9, 0.05):
        cost = 50.0 * p1
        feasible = True
        for prob, wind_cap in ((0.6, 100.0), (0.4, 50.0)):
            wind = min(wind_cap, max(cap - p1, 0.0), 150.0 - p1)
            gas = 150.0 - p1 - wind
            if gas < -1e-9 or gas > 100.0 + 1e-9 or p1 + wind > cap + 1e-9:
                feasible = False
                break
            cost += prob * 80.0 * max(gas, 0.0)
        if feasible:
            best = min(best, cost)
    return best


class TestSolveDispatch:
    def test_congested_two_bus_matches_golden_plan(self, two_bus, two_bus_dispatch, golden_plans):
        assert_plans_close(two_bus_dispatch.plans, golden_plans["final"])
        # Welfare = consumption value minus 5000 $ of expected production cost.
        value = 150.0 * 1000.0
        assert two_bus_dispatch.objective == pytest.approx(value - 5000.0, abs=1e-6)
        assert two_bus_dispatch.objective == pytest.approx(value - two_bus_cost_oracle(120.0), abs=1e-4)

    def test_uncongested_two_bus_matches_sweep_oracle(self):
        market = two_bus_market(line_capacity=150.0)
        solution = solve_dispatch(market)
        cost = 150.0 * 1000.0 - solution.objective
        assert cost == pytest.approx(4100.0, abs=1e-6)
        assert cost == pytest.approx(two_bus_cost_oracle(150.0), abs=1e-4)

    def test_single_bus_forced_balance(self):
        network = Network(1, (), reference_bus=0)
        gen = Participant.producer("gen", 0, "RT", (200.0,), 50.0)
        fixed = Participant(
            "load", 0, "load", "RT", ((-100.0, -100.0),),
            (UtilityFunction((-100.0, 0.0), (0.0,)),),
        )
        market = Market(network, ScenarioSet((1.0,)), (gen, fixed))
        solution = solve_dispatch(market)
        assert solution.plans["gen"][0] == pytest.approx(100.0)
        assert solution.objective == pytest.approx(-5000.0)

    def test_infeasible_market_reported(self):
        network = Network(2, (Line(0, 1, 1.0, 10.0),), reference_bus=1)
        gen = Participant.producer("gen", 0, "RT", (200.0,), 50.0)
        fixed = Participant(
            "load", 1, "load", "RT", ((-100.0, -100.0),),
            (UtilityFunction((-100.0, 0.0), (0.0,)),),
        )
        market = Market(network, ScenarioSet((1.0,)), (gen, fixed))
        with pytest.raises(DispatchInfeasibleError):
            solve_dispatch(market)


class TestPriceDiscovery:
    def test_interior_quotes_at_flexible_bus(self, two_bus, two_bus_dispatch):
        quote_windy = lmp_from_marginals(two_bus, two_bus_dispatch.plans, 1, 0)
        quote_breezy = lmp_from_marginals(two_bus, two_bus_dispatch.plans, 1, 1)
        assert quote_windy == pytest.approx(48.0, abs=1e-9)
        assert quote_breezy == pytest.approx(32.0, abs=1e-9)

    def test_bus_without_interior_participant_defers(self, two_bus, two_bus_dispatch):
        # Wind sits at its cap and the coal unit is committed ahead, so no
        # local marginal quote exists at bus 0 in the windy scenario.
        assert lmp_from_marginals(two_bus, two_bus_dispatch.plans, 0, 0) is None

    def test_quotes_agree_with_duals(self, two_bus, two_bus_dispatch):
        for s in range(2):
            quote = lmp_from_marginals(two_bus, two_bus_dispatch.plans, 1, s)
            assert quote == pytest.approx(two_bus_dispatch.lambda_[s, 1], abs=1e-6)

    def test_full_price_matrix(self, two_bus_dispatch):
        np.testing.assert_allclose(
            two_bus_dispatch.lambda_, [[18.0, 48.0], [32.0, 32.0]], atol=1e-6
        )

    def test_quote_uses_the_participants_own_weights(self):
        # An interior seller with subjective beliefs quotes at its believed
        # marginal cost, and the benchmark's duals agree.
        network = Network(1, (), reference_bus=0)
        seller = Participant.producer(
            "gen", 0, "RT", (100.0, 100.0), 50.0, subjective_probabilities=(0.3, 0.7)
        )
        buyer = Participant(
            "dem", 0, "load", "RT",
            ((-60.0, 0.0), (-60.0, 0.0)),
            (UtilityFunction((-60.0, -30.0, 0.0), (-20.0, -80.0)),) * 2,
        )
        market = Market(network, ScenarioSet((0.5, 0.5)), (seller, buyer))
        solution = solve_dispatch(market)
        for s, w in enumerate((0.3, 0.7)):
            assert solution.plans["gen"][s] == pytest.approx(30.0)
            quote = lmp_from_marginals(market, solution.plans, 0, s)
            assert quote == pytest.approx(w * 50.0, abs=1e-6)
            assert quote == pytest.approx(solution.lambda_[s, 0], abs=1e-6)


class TestWelfareGap:
    def test_zero_at_the_optimum(self, two_bus, two_bus_dispatch, golden_plans):
        assert welfare_gap(two_bus, golden_plans["final"], two_bus_dispatch) <= 1e-6

    def test_positive_at_curtailed_state(self, two_bus, two_bus_dispatch, golden_plans):
        gap = welfare_gap(two_bus, golden_plans["curtailed"], two_bus_dispatch)
        assert gap == pytest.approx(28280.0, abs=1e-6)

    def test_zero_for_dispatch_plan_itself(self, two_bus, two_bus_dispatch):
        assert welfare_gap(two_bus, two_bus_dispatch.plans, two_bus_dispatch) <= 1e-9


class TestArrowDebreu:
    def test_dispatch_tuple_is_an_equilibrium(self, two_bus, two_bus_dispatch):
        report = check_arrow_debreu(
            two_bus, two_bus_dispatch.plans, two_bus_dispatch.x, two_bus_dispatch.lambda_
        )
        assert report.verdict
        assert all(report.participant_ok.values()) and report.so_ok and report.clearing_ok

    @pytest.mark.parametrize("s,n", [(0, 0), (0, 1), (1, 0), (1, 1)])
    def test_any_single_price_perturbation_breaks_it(self, two_bus, two_bus_dispatch, s, n):
        prices = two_bus_dispatch.lambda_.copy()
        prices[s, n] += 1.0
        report = check_arrow_debreu(two_bus, two_bus_dispatch.plans, two_bus_dispatch.x, prices)
        assert not report.verdict

    def test_empty_market_is_vacuously_in_equilibrium(self):
        network = Network(2, (Line(0, 1, 1.0, 50.0),), reference_bus=0)
        market = Market(network, ScenarioSet((1.0,)), ())
        report = check_arrow_debreu(market, {}, np.zeros((1, 2)), np.zeros((1, 2)))
        assert report.verdict

    def test_random_markets_first_welfare_theorem(self):
        rng = np.random.default_rng(77)
        for _ in range(6):
            market = random_market(rng, max_buses=4, max_scenarios=3, max_participants=6)
            solution = solve_dispatch(market)
            report = check_arrow_debreu(market, solution.plans, solution.x, solution.lambda_)
            assert report.verdict
            assert welfare_gap(market, solution.plans, solution) <= 1e-6


class TestDualConsistency:
    def test_kkt_system_on_two_bus(self, two_bus, two_bus_dispatch):
        lm = build_loading_matrix(two_bus.network)
        assert kkt_report(two_bus, two_bus_dispatch, lm) == []

    def test_kkt_system_on_random_markets(self):
        rng = np.random.default_rng(5150)
        for _ in range(6):
            market = random_market(rng, max_buses=5, max_scenarios=3, max_participants=7)
            lm = build_loading_matrix(market.network)
            solution = solve_dispatch(market, lm)
            assert kkt_report(market, solution, lm) == []

    def test_congestion_rent_sign_on_random_two_bus_markets(self):
        rng = np.random.default_rng(321)
        for _ in range(10):
            cap = float(rng.uniform(20.0, 60.0))
            network = Network(2, (Line(0, 1, 1.0, cap),), reference_bus=1)
            gen = Participant.producer("gen", 0, "RT", (150.0,), float(rng.uniform(10, 40)))
            back = Participant.producer("back", 1, "RT", (150.0,), float(rng.uniform(50, 90)))
            dem = Participant.load("dem", 1, "RT", (float(rng.uniform(60, 140)),), 400.0)
            market = Market(network, ScenarioSet((1.0,)), (gen, back, dem))
            solution = solve_dispatch(market)
            for rows, s in [(build_loading_matrix(network), 0)]:
                for line_row in range(network.line_count):
                    flow = rows.rows[line_row] @ solution.x[s]
                    if abs(flow - network.lines[line_row].capacity) <= 1e-6:
                        importer, exporter = (1, 0) if flow > 0 else (0, 1)
                        rent = solution.lambda_[s, importer] - solution.lambda_[s, exporter]
                        assert rent >= -1e-8

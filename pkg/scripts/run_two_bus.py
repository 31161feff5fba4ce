#!/usr/bin/env python3
"""Walk through the bundled two-bus market step by step.

Prints each proposed trade, the operator's curtailment decision, the
resulting accumulated plans, and finally the dispatch benchmark with its
nodal prices and the equilibrium verdict.
"""

import numpy as np

from gridtrade import (
    EngineConfig,
    check_arrow_debreu,
    lmp_from_marginals,
    make_proposer,
    ProposerStrategy,
    run_trading,
    solve_dispatch,
    two_bus_market,
    welfare_gap,
)


def print_plans(title, plans, scenario_names):
    print(f"\n{title}")
    ids = sorted(plans)
    header = "  scenario | " + " | ".join(f"{pid:>6}" for pid in ids)
    print(header)
    for s, name in enumerate(scenario_names):
        row = " | ".join(f"{plans[pid][s]:6.1f}" for pid in ids)
        print(f"  {name:>8} | {row}")


def main():
    market = two_bus_market()
    names = market.scenarios.names
    result = run_trading(market, EngineConfig(epsilon=1e-3), make_proposer(ProposerStrategy()))

    print(f"converged: {result.converged} after {result.steps} proposals")
    for record in result.state.records:
        verdict = "accepted" if record.accepted else f"rejected ({', '.join(record.reasons)})"
        print(f"\nstep {record.step}: {verdict}, gamma = {record.gamma:g}, "
              f"welfare gain = {record.welfare_delta:,.0f} $")
        print_plans("  proposed increments", record.trade.plans, names)

    print_plans("final accumulated plans", result.state.y, names)
    print(f"\nfinal welfare: {result.final_welfare:,.1f} $")

    solution = solve_dispatch(market)
    gap = welfare_gap(market, dict(result.state.y), solution)
    print(f"benchmark welfare: {solution.objective:,.1f} $  (gap {gap:.2e})")

    print("\nnodal prices ($/MW per scenario):")
    for s, name in enumerate(names):
        quotes = [lmp_from_marginals(market, solution.plans, n, s) for n in range(2)]
        duals = solution.lambda_[s]
        print(f"  {name:>8}: duals {np.round(duals, 4)}  local quotes {quotes}")

    report = check_arrow_debreu(market, solution.plans, solution.x, solution.lambda_)
    print(f"\nequilibrium verdict: {report.verdict}")


if __name__ == "__main__":
    main()

"""Command-line entry point.

Subcommands: run, dispatch, prices, check-eq, decompose, robust-run.
Exit codes: 0 success, 1 equilibrium verdict false, 2 input error,
3 non-convergence within the step budget, 4 internal or numerical failure.
Set GRIDTRADE_LOG to a logging level name for progress output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import dispatch as dispatch_mod
from . import market_io, robust, tree
from .lp import LpError
from .network import build_loading_matrix
from .proposer import ProposerStrategy, make_proposer
from .trading import EngineConfig, run_trading

log = logging.getLogger("gridtrade")

EXIT_OK = 0
EXIT_VERDICT_FALSE = 1
EXIT_INPUT = 2
EXIT_NO_CONVERGENCE = 3
EXIT_INTERNAL = 4


def _configure_logging() -> None:
    level = os.environ.get("GRIDTRADE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(message)s")


def _load(args) -> market_io.RunSpec:
    spec = market_io.load_market(args.market)
    engine = spec.engine
    overrides = {}
    if getattr(args, "epsilon", None) is not None:
        overrides["epsilon"] = args.epsilon
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "max_steps", None) is not None:
        overrides["max_steps"] = args.max_steps
    if getattr(args, "curtailment", None) is not None:
        overrides["curtailment_mode"] = args.curtailment
    if overrides:
        engine = EngineConfig(
            epsilon=overrides.get("epsilon", engine.epsilon),
            curtailment_mode=overrides.get("curtailment_mode", engine.curtailment_mode),
            max_steps=overrides.get("max_steps", engine.max_steps),
            seed=overrides.get("seed", engine.seed),
        )
    strategy = spec.strategy
    if getattr(args, "proposer", None) is not None:
        mode = {"full": "full_group", "exhaustive": "exhaustive_subsets", "random": "random_subsets"}[args.proposer]
        strategy = ProposerStrategy(mode=mode, max_size=strategy.max_size, attempts=strategy.attempts)
    return market_io.RunSpec(spec.market, engine, strategy, spec.interval_trades, spec.scenario_capacities)


def _loading_matrix(spec: market_io.RunSpec):
    lm = build_loading_matrix(spec.market.network)
    if spec.scenario_capacities is not None:
        lm = lm.with_scenario_capacities(spec.scenario_capacities)
    return lm


def cmd_run(args) -> int:
    spec = _load(args)
    lm = _loading_matrix(spec)
    proposer = make_proposer(spec.strategy, lm)
    started = time.perf_counter()
    result = run_trading(spec.market, spec.engine, proposer, lm)
    elapsed = time.perf_counter() - started

    oracle_gap = None
    prices = None
    verdict = None
    if not args.skip_oracle:
        solution = dispatch_mod.solve_dispatch(spec.market, lm)
        oracle_gap = dispatch_mod.welfare_gap(spec.market, dict(result.state.y), solution)
        prices = solution.lambda_
        verdict = dispatch_mod.check_arrow_debreu(
            spec.market, solution.plans, solution.x, solution.lambda_, lm=lm
        ).verdict

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "trace.jsonl", "w") as fp:
        market_io.write_trace(result.state.records, fp)
    report = market_io.result_to_jsonable(result, spec.market, oracle_gap)
    if prices is not None:
        report["prices"] = [list(row) for row in prices]
        report["equilibrium_verdict"] = verdict
    report["timing_sec"] = elapsed
    (out_dir / "report.json").write_text(market_io.dumps(report) + "\n")
    print(market_io.dumps(report))
    if not result.converged:
        log.warning("did not certify termination within %d steps", spec.engine.max_steps)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_dispatch(args) -> int:
    spec = _load(args)
    lm = _loading_matrix(spec)
    try:
        solution = dispatch_mod.solve_dispatch(spec.market, lm)
    except dispatch_mod.DispatchInfeasibleError as exc:
        print(market_io.dumps({"status": exc.status}))
        return EXIT_OK
    doc = {
        "status": "optimal",
        "objective": solution.objective,
        "plans": {pid: list(v) for pid, v in solution.plans.items()},
        "injections": [list(row) for row in solution.x],
        "duals": {
            "lambda": [list(row) for row in solution.lambda_],
            "gamma_s": list(solution.gamma_s),
            "beta": [list(row) for row in solution.beta],
            "eta_lower": {pid: list(v) for pid, v in solution.eta_lower.items()},
            "eta_upper": {pid: list(v) for pid, v in solution.eta_upper.items()},
            "zeta": {pid: list(v) for pid, v in solution.zeta.items()},
        },
    }
    print(market_io.dumps(doc))
    return EXIT_OK


def cmd_prices(args) -> int:
    spec = _load(args)
    lm = _loading_matrix(spec)
    solution = dispatch_mod.solve_dispatch(spec.market, lm)
    system = solution.price_system
    quotes = []
    for s in range(spec.market.scenario_count):
        row = []
        for n in range(spec.market.network.bus_count):
            row.append(dispatch_mod.lmp_from_marginals(spec.market, solution.plans, n, s))
        quotes.append(row)
    doc = {
        "lambda": [list(row) for row in system.prices],
        "raw_duals": [list(row) for row in system.raw_duals],
        "marginal_quotes": quotes,
    }
    print(market_io.dumps(doc))
    return EXIT_OK


def cmd_check_eq(args) -> int:
    spec = _load(args)
    lm = _loading_matrix(spec)
    solution = dispatch_mod.solve_dispatch(spec.market, lm)
    prices = solution.lambda_
    if args.prices is not None:
        prices = np.asarray(json.loads(Path(args.prices).read_text()), dtype=float)
        if prices.shape != solution.lambda_.shape:
            print(f"prices: expected shape {solution.lambda_.shape}", file=sys.stderr)
            return EXIT_INPUT
    report = dispatch_mod.check_arrow_debreu(spec.market, solution.plans, solution.x, prices, lm=lm)
    doc = {
        "verdict": report.verdict,
        "participant_ok": report.participant_ok,
        "participant_slack": report.participant_slack,
        "so_ok": report.so_ok,
        "so_slack": report.so_slack,
        "clearing_residual": report.clearing_residual,
    }
    print(market_io.dumps(doc))
    return EXIT_OK if report.verdict else EXIT_VERDICT_FALSE


def _decompose_one(args, network, values, state):
    if args.mode == "sequential":
        return {"components": [_component_to_jsonable(c)
                               for c in tree.decompose_sequential(network, values, state)]}
    if args.mode == "conformal":
        return {"components": [_component_to_jsonable(c)
                               for c in tree.decompose_conformal(network, values, state)]}
    alpha = [Fraction(part.strip()) for part in args.alpha.split(",")]
    result = tree.decompose_profitable(network, values, alpha, state)
    if isinstance(result, tree.RedundancyCertificate):
        return {
            "redundant": True,
            "dropped": _component_to_jsonable(result.dropped),
            "remaining_trade": [str(v) for v in result.remaining],
            "original_profit": float(result.original_profit),
            "remaining_profit": float(result.remaining_profit),
        }
    return {"components": [_component_to_jsonable(c) for c in result]}


def cmd_decompose(args) -> int:
    spec = _load(args)
    network = spec.market.network
    if args.mode == "profitable" and args.alpha is None:
        print("--alpha is required for profitable mode", file=sys.stderr)
        return EXIT_INPUT
    try:
        trades = [[Fraction(part.strip()) for part in spec_str.split(",")]
                  for spec_str in args.trade]
    except (ValueError, ZeroDivisionError) as exc:
        print(f"--trade: {exc}", file=sys.stderr)
        return EXIT_INPUT
    for values in trades:
        if len(values) != network.bus_count:
            print(f"--trade: expected {network.bus_count} per-bus values", file=sys.stderr)
            return EXIT_INPUT
    states = [None] * len(trades)
    if args.state:
        parsed = [[Fraction(part.strip()) for part in s.split(",")] for s in args.state]
        if len(parsed) == 1:
            states = parsed * len(trades)
        elif len(parsed) == len(trades):
            states = parsed
        else:
            print("--state: give one vector, or one per --trade", file=sys.stderr)
            return EXIT_INPUT
    try:
        docs = [_decompose_one(args, network, values, state)
                for values, state in zip(trades, states)]
    except (tree.NonTreeNetworkError, ValueError) as exc:
        print(f"decompose: {exc}", file=sys.stderr)
        return EXIT_INPUT
    # Scenario-indexed trades decompose independently; a single vector keeps
    # the flat layout.
    print(market_io.dumps(docs[0] if len(docs) == 1 else {"scenarios": docs}))
    return EXIT_OK


def _component_to_jsonable(c: tree.BilateralTrade) -> dict:
    return {
        "supply_bus": c.supply_bus + 1,
        "demand_bus": c.demand_bus + 1,
        "quantity": float(c.quantity),
        "quantity_exact": str(c.quantity),
    }


def cmd_robust_run(args) -> int:
    spec = _load(args)
    if not spec.interval_trades:
        print("market file has no interval_trades section", file=sys.stderr)
        return EXIT_INPUT
    lm = _loading_matrix(spec)
    state = robust.IntervalState.initial(spec.market.network.bus_count)
    for trade in spec.interval_trades:
        _, state = robust.accept_interval_trade(state, trade, lm, spec.market)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "robust_trace.jsonl", "w") as fp:
        for step, record in enumerate(state.records):
            doc = {
                "step": step,
                "lower": dict(record.trade.lower),
                "upper": dict(record.trade.upper),
                "gamma": record.gamma,
                "accepted": record.accepted,
            }
            fp.write(market_io.dumps(doc, indent=None) + "\n")
    summary = {
        "trades": len(state.records),
        "accepted": sum(1 for r in state.records if r.accepted),
        "state_lower": list(state.x_lower),
        "state_upper": list(state.x_upper),
    }
    (out_dir / "robust_report.json").write_text(market_io.dumps(summary) + "\n")
    print(market_io.dumps(summary))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridtrade", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default=None):
        p.add_argument("market", help="market definition JSON file")
        p.add_argument("--epsilon", type=float, default=None, help="worthiness threshold in $")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--max-steps", type=int, default=None)
        p.add_argument("--proposer", choices=["full", "exhaustive", "random"], default=None)
        p.add_argument("--curtailment", choices=["uniform", "hybrid"], default=None)
        if out_default is not None:
            p.add_argument("--out", default=out_default, help="output directory")

    p_run = sub.add_parser("run", help="run the trading process to termination")
    common(p_run, out_default="out")
    p_run.add_argument("--skip-oracle", action="store_true", help="skip the dispatch comparison")
    p_run.set_defaults(func=cmd_run)

    p_dispatch = sub.add_parser("dispatch", help="solve the welfare-maximising dispatch")
    common(p_dispatch)
    p_dispatch.set_defaults(func=cmd_dispatch)

    p_prices = sub.add_parser("prices", help="contingent nodal prices and marginal quotes")
    common(p_prices)
    p_prices.set_defaults(func=cmd_prices)

    p_check = sub.add_parser("check-eq", help="verify the competitive equilibrium conditions")
    common(p_check)
    p_check.add_argument("--prices", default=None, help="JSON file with an (S x N) price matrix")
    p_check.set_defaults(func=cmd_check_eq)

    p_dec = sub.add_parser("decompose", help="split a nodal trade into bilateral trades")
    common(p_dec)
    p_dec.add_argument("--trade", required=True, action="append",
                       help="comma-separated per-bus MW values; repeat for scenario-indexed trades")
    p_dec.add_argument("--state", default=None, action="append",
                       help="comma-separated accumulated per-bus MW")
    p_dec.add_argument("--mode", choices=["sequential", "conformal", "profitable"], default="sequential")
    p_dec.add_argument("--alpha", default=None, help="comma-separated per-bus linear marginals")
    p_dec.set_defaults(func=cmd_decompose)

    p_rob = sub.add_parser("robust-run", help="process the file's interval trades robustly")
    common(p_rob, out_default="out")
    p_rob.set_defaults(func=cmd_robust_run)

    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except market_io.MarketFormatError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (LpError, dispatch_mod.DispatchInfeasibleError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

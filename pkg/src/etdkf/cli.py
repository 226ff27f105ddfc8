"""Command line interface.

Subcommands:

* ``run``            simulate a scenario file
* ``example1``       simulate the built-in two-state benchmark
* ``heat``           simulate the built-in diffusion benchmark
* ``lowrank-table``  rank-budget sweep of the gain designer
* ``validate``       build a scenario's design and report it, no simulation

Exit codes: 0 success, 1 unexpected failure, 2 configuration problems,
3 model validation, 4 estimation, 5 decomposition, 6 synchronization design,
7 low-rank design.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .decomp import eigenratio_bound
from .errors import ConfigError, EtdkfError
from .lowrank import performance_table
from .scenarios import example1, heat_benchmark, load_scenario
from .simnet import Scenario, monte_carlo, simulate_run
from .triggers import VARIANTS, TriggerSpec


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", type=Path, default=None, help="directory for csv/json outputs")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--runs", type=int, default=None, help="override the run count")
    p.add_argument("--horizon", type=int, default=None, help="override the horizon")
    p.add_argument("--trigger", choices=VARIANTS, default=None, help="override the trigger")
    p.add_argument("--c0", type=float, default=None, help="time trigger offset")
    p.add_argument("--c1", type=float, default=None, help="time trigger amplitude")
    p.add_argument("--alpha", type=float, default=None, help="time trigger decay")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="etdkf",
        description="event-triggered distributed Kalman filtering on sensor networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario file")
    p_run.add_argument("--scenario", type=Path, required=True)
    _add_sim_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_ex = sub.add_parser("example1", help="simulate the two-state benchmark")
    _add_sim_flags(p_ex)
    p_ex.set_defaults(func=_cmd_example1)

    p_heat = sub.add_parser("heat", help="simulate the diffusion benchmark")
    _add_sim_flags(p_heat)
    p_heat.set_defaults(func=_cmd_heat)

    p_low = sub.add_parser("lowrank-table", help="sweep gain rank budgets")
    p_low.add_argument("--scenario", type=Path, default=None,
                       help="scenario supplying the plant and sensors (default: heat)")
    p_low.add_argument("--rank-list", type=str, default=None,
                       help="comma separated budgets, e.g. 1,2,5")
    p_low.add_argument("--out", type=Path, default=None)
    p_low.set_defaults(func=_cmd_lowrank)

    p_val = sub.add_parser("validate", help="build a scenario's design and report it")
    p_val.add_argument("--scenario", type=Path, required=True)
    p_val.set_defaults(func=_cmd_validate)
    return parser


def _apply_overrides(scenario: Scenario, args) -> Scenario:
    updates = {}
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if args.runs is not None:
        updates["runs"] = args.runs
    if args.horizon is not None:
        updates["horizon"] = args.horizon
    if updates:
        scenario = replace(scenario, **updates)
    if args.trigger is not None:
        params = {}
        if args.trigger == "static_time":
            if args.c0 is not None:
                params["c0"] = args.c0
            if args.c1 is not None:
                params["c1"] = args.c1
            if args.alpha is not None:
                params["alpha"] = args.alpha
        elif any(v is not None for v in (args.c0, args.c1, args.alpha)):
            raise ConfigError("--c0/--c1/--alpha only apply to --trigger static_time")
        builder = {
            "full": TriggerSpec.full,
            "static_time": TriggerSpec.static_time,
            "static_state": TriggerSpec.static_state,
            "dynamic": TriggerSpec.dynamic,
        }[args.trigger]
        scenario = scenario.with_trigger(builder(**params))
    elif any(v is not None for v in (args.c0, args.c1, args.alpha)):
        if scenario.trigger.variant != "static_time":
            raise ConfigError("--c0/--c1/--alpha only apply to the static_time trigger")
        spec = scenario.trigger
        scenario = scenario.with_trigger(
            TriggerSpec.static_time(
                c0=args.c0 if args.c0 is not None else spec.c0,
                c1=args.c1 if args.c1 is not None else spec.c1,
                alpha=args.alpha if args.alpha is not None else spec.alpha,
            )
        )
    return scenario


def _write_json(path: Path, text: str) -> None:
    path.write_text(text + "\n")


def _write_run_outputs(out_dir: Path, scenario: Scenario, metrics) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_lines = ["run,k,node,triggered,eps_sq,err_sq,cons_dev_sq"]
    step_lines = ["run,k,avg_gap"]
    for run in range(scenario.runs):
        tr = simulate_run(scenario, run)
        for k in range(tr.horizon):
            step_lines.append(f"{run},{k},{_fmt(tr.avg_gap[k])}")
            for node in range(scenario.network.m):
                trace_lines.append(
                    ",".join(
                        (
                            str(run),
                            str(k),
                            str(node),
                            str(int(tr.triggered[k, node])),
                            _fmt(tr.eps_sq[k, node]),
                            _fmt(tr.err_sq[k, node]),
                            _fmt(tr.cons_dev_sq[k, node]),
                        )
                    )
                )
    (out_dir / "trace.csv").write_text("\n".join(trace_lines) + "\n")
    (out_dir / "steps.csv").write_text("\n".join(step_lines) + "\n")
    _write_json(
        out_dir / "metrics.json",
        json.dumps(metrics.to_json_dict(), sort_keys=True, separators=(",", ":")),
    )
    _write_json(out_dir / "decomposition.json", scenario.decomposition().to_json())


def _simulate(scenario: Scenario, args) -> int:
    scenario = _apply_overrides(scenario, args)
    metrics = monte_carlo(scenario)
    if args.out is not None:
        _write_run_outputs(args.out, scenario, metrics)
    name = scenario.name or "scenario"
    print(
        f"{name}: runs={scenario.runs} horizon={scenario.horizon} "
        f"trigger={scenario.trigger.variant} "
        f"comm_rate={metrics.comm_rate_overall:.4f}"
    )
    print(json.dumps(metrics.to_json_dict(), sort_keys=True, separators=(",", ":")))
    return 0


def _cmd_run(args) -> int:
    return _simulate(load_scenario(args.scenario), args)


def _cmd_example1(args) -> int:
    return _simulate(example1(), args)


def _cmd_heat(args) -> int:
    return _simulate(heat_benchmark(), args)


def _parse_rank_list(text: str | None) -> list[int] | None:
    if text is None:
        return None
    try:
        ranks = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --rank-list: {exc}") from exc
    if not ranks:
        raise ConfigError("--rank-list is empty")
    return ranks


def _cmd_lowrank(args) -> int:
    if args.scenario is not None:
        scenario = load_scenario(args.scenario)
        sys_, net = scenario.system, scenario.network
        name = scenario.name or "scenario"
    else:
        scenario = heat_benchmark()
        sys_, net = scenario.system, scenario.network
        name = "heat"
    ranks = _parse_rank_list(args.rank_list)
    rows = performance_table(sys_, net, ranks)
    payload = [
        {
            "rank": row["rank"],
            "relaxed_objective": row["relaxed_objective"],
            "objective": row["objective"],
            "normalized_objective": row["normalized_objective"],
            "gain_rank": int(np.linalg.matrix_rank(row["design"].gain, tol=1e-9)),
        }
        for row in rows
    ]
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        _write_json(args.out / "lowrank_table.json", text)
    print(f"{name}: {len(payload)} rank budgets")
    for row in payload:
        print(
            f"  rank {row['rank']:>3}: relaxed {row['relaxed_objective']:.6f} "
            f"achieved {row['objective']:.6f} "
            f"(normalized {row['normalized_objective']:.6f})"
        )
    if args.out is None:
        print(text)
    return 0


def _cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    dec = scenario.decomposition()
    margin = float(dec.sync_margins.max()) if dec.sync_margins.size else 0.0
    print(f"scenario: {scenario.name or args.scenario}")
    print(f"  states={dec.n} sensors={dec.m} gain_rank={dec.r}")
    print(f"  horizon={scenario.horizon} runs={scenario.runs} seed={scenario.master_seed}")
    print(f"  trigger={scenario.trigger.variant}")
    bound = eigenratio_bound(dec.mu2, dec.mu_m)
    print(f"  mahler={dec.mahler:.6f} ratio_bound={bound:.6f} zeta={dec.zeta:.6f}")
    print(f"  sync_margin_max={margin:.6f}")
    print("ok")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EtdkfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"unexpected error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

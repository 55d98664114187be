"""Command-line entry point: ``ecoacc plan|simulate|compare|sweep|report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from .errors import EcoAccError, NoFeasiblePlanError, TraceInvariantError
from .mpc import load_mpc_config
from .planner import PlannerConfig, nominal_trajectory, solve_dp
from .signals import load_corridor
from .sim import CONTROLLERS, Scenario, TrafficConfig, realize_environment, run_closed_loop
from .vehicle import PlanState, load_vehicle

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_SAFETY = 3
EXIT_IO = 4

log = logging.getLogger("ecoacc")


def _data(name: str) -> Path:
    return Path(str(resources.files("ecoacc") / "data" / name))


def _read_json(path: Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"0-9"`` or ``"1,4,7"``."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty seed list")
    return out


def parse_floats(text: str) -> list[float]:
    vals = [float(x) for x in text.split(",") if x.strip()]
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--corridor", type=Path, default=None, help="corridor JSON")
    g.add_argument("--vehicle", type=Path, default=None, help="vehicle parameter JSON")
    g.add_argument("--planner", type=Path, default=None, help="planner config JSON")
    g.add_argument("--mpc", type=Path, default=None, help="MPC config JSON")
    g.add_argument("--traffic", default="none",
                   help="'none', 'default', or a traffic config JSON path")
    g.add_argument("--lam", type=float, default=None, help="override lambda")
    g.add_argument("--eta", type=float, default=None, help="override chance-constraint level")
    g.add_argument("--t-f", type=float, default=None, help="override deadline (s)")
    g.add_argument("--replan-period", type=float, default=None)
    g.add_argument("--hard-cap", type=float, default=None)
    g.add_argument("--fixed-offsets", action="store_true",
                   help="keep the corridor's signal offsets instead of drawing them per seed")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")


def load_scenario(args, controller: str = "eco-acc", seed: int = 0) -> Scenario:
    corridor = load_corridor(args.corridor or _data("corridor.json"))
    vehicle = load_vehicle(args.vehicle or _data("vehicle.json"))
    pd = _read_json(args.planner or _data("planner.json"))
    pd["N"] = int(round(corridor.length / float(pd.get("ds", 10.0))))
    pd.pop("n_t", None)
    over = {k: v for k, v in (("lam", args.lam), ("eta", args.eta), ("t_f", args.t_f))
            if v is not None}
    planner = replace(PlannerConfig.from_dict(pd), **over) if over else PlannerConfig.from_dict(pd)
    mpc = load_mpc_config(args.mpc or _data("mpc.json"))
    if args.traffic == "none":
        traffic = None
    elif args.traffic == "default":
        traffic = TrafficConfig.from_dict(_read_json(_data("traffic.json")))
    else:
        traffic = TrafficConfig.from_dict(_read_json(Path(args.traffic)))
    extra = {}
    if args.replan_period is not None:
        extra["replan_period"] = args.replan_period
    if args.hard_cap is not None:
        extra["hard_cap"] = args.hard_cap
    return Scenario(corridor, vehicle, planner, mpc, traffic, seed=seed, controller=controller,
                    randomize_offsets=not args.fixed_offsets, **extra)


def _safety_ok(summary: dict, d_min: float) -> bool:
    return summary["red_crossings"] == 0 and summary["min_gap"] >= d_min


# ---------------------------------------------------------------- subcommands


def cmd_plan(args) -> int:
    scn = load_scenario(args, seed=args.seed if args.seed is not None else 0)
    corridor = scn.corridor
    if args.seed is not None:
        corridor = realize_environment(scn).corridor
    start = PlanState(max(args.v0, scn.vehicle.v_min_plan), 0.0)
    pol = solve_dp(scn.vehicle, corridor, scn.planner, start)
    traj = nominal_trajectory(pol, start)
    args.out.mkdir(parents=True, exist_ok=True)
    pol.save(args.out / "policy.npz")
    with open(args.out / "nominal.csv", "w", encoding="utf-8") as fh:
        fh.write("position,v,t,T_w\n")
        for r in traj:
            tw = "" if r.T_w is None else f"{r.T_w:.6f}"
            fh.write(f"{r.position:.6f},{r.v:.6f},{r.t:.6f},{tw}\n")
    print(f"plan: travel time {traj[-1].t:.1f} s, cost {pol.start_value():.6g}, "
          f"written to {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    code = EXIT_OK
    for seed in args.seed:
        scn = load_scenario(args, controller=args.controller, seed=seed)
        trace = run_closed_loop(scn)
        stem = f"trace_{args.controller}_{seed}"
        trace.write_csv(args.out / f"{stem}.csv")
        trace.write_summary(args.out / f"{stem}.json")
        s = trace.summary
        tt = "incomplete" if s["travel_time"] is None else f"{s['travel_time']:.1f} s"
        print(f"seed {seed}: {tt}, {s['wheel_energy_kwh']:.4f} kWh, min gap "
              f"{s['min_gap']:.2f} m, red crossings {s['red_crossings']}")
        if not _safety_ok(s, scn.mpc.d_min):
            code = EXIT_SAFETY
    return code


def cmd_compare(args) -> int:
    from .harness import compare_controllers, write_reports_csv

    base = load_scenario(args)
    cmp = compare_controllers(base, args.seeds, {"controller": args.baseline},
                              {"controller": args.candidate}, workers=args.workers)
    args.out.mkdir(parents=True, exist_ok=True)
    reports = [r for pair in cmp.pairs for r in pair]
    if reports:
        write_reports_csv(reports, args.out / "compare.csv")
    summary = {
        "baseline": args.baseline,
        "candidate": args.candidate,
        "seeds": args.seeds,
        "paired": len(cmp.pairs),
        "excluded_seeds": cmp.excluded,
        "median_energy_delta": cmp.energy_delta,
        "median_time_delta": cmp.time_delta,
        "mean_energy_delta": cmp.mean_energy_delta,
        "mean_time_delta": cmp.mean_time_delta,
    }
    (args.out / "compare.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"{args.candidate} vs {args.baseline}: energy {100 * cmp.energy_delta:+.1f}%, "
          f"travel time {100 * cmp.time_delta:+.1f}% (median over {len(cmp.pairs)} pairs; "
          f"excluded {cmp.excluded})")
    unsafe = any(not _safety_ok(_as_summary(r), base.mpc.d_min) for r in reports)
    return EXIT_SAFETY if unsafe else EXIT_OK


def _as_summary(r) -> dict:
    return {"red_crossings": r.red_crossings, "min_gap": r.min_gap}


def cmd_sweep(args) -> int:
    from .harness import pareto_sweep, plot_pareto, write_sweep_csv

    base = load_scenario(args)
    res = pareto_sweep(base, args.lambdas, args.seeds, workers=args.workers)
    args.out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(res, args.out / "sweep.csv")
    if any(r.completed for r in res.reports):
        plot_pareto(res.reports, args.out / "pareto.png")
    for lam, (e, t) in sorted(res.medians.items()):
        print(f"lambda {lam:g}: median energy {e:.4f} kWh, median travel time {t:.1f} s")
    return EXIT_OK


def cmd_report(args) -> int:
    from .harness import ExperimentReport, emit_report

    scn = load_scenario(args, controller=args.controller, seed=args.seed)
    env = realize_environment(scn)
    trace = run_closed_loop(scn, env)
    rep = ExperimentReport.from_trace(trace)
    files = emit_report([rep], args.out, trace=trace, corridor=env.corridor)
    trace.write_csv(args.out / f"trace_{args.controller}_{args.seed}.csv")
    for f in files:
        print(f)
    return EXIT_OK if _safety_ok(trace.summary, scn.mpc.d_min) else EXIT_SAFETY


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ecoacc", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="solve the DP and write the policy and nominal trajectory")
    _common(p)
    p.add_argument("--seed", type=int, default=None,
                   help="realize the signal offsets of this seed before planning")
    p.add_argument("--v0", type=float, default=1.0, help="start speed (m/s)")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="closed-loop runs, one trace CSV per seed")
    _common(p)
    p.add_argument("--seed", type=parse_seeds, required=True, help="seed, range a-b, or list")
    p.add_argument("--controller", choices=CONTROLLERS, default="eco-acc")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="paired-seed controller comparison")
    _common(p)
    p.add_argument("--seeds", type=parse_seeds, default=parse_seeds("0-19"))
    p.add_argument("--baseline", choices=CONTROLLERS, default="acc-only")
    p.add_argument("--candidate", choices=CONTROLLERS, default="eco-acc")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="lambda Pareto sweep")
    _common(p)
    p.add_argument("--lambdas", type=parse_floats, default=parse_floats("0,25,50,65,70,100"))
    p.add_argument("--seeds", type=parse_seeds, default=parse_seeds("0-4"))
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="one run with report CSV and plots")
    _common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--controller", choices=CONTROLLERS, default="eco-acc")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NoFeasiblePlanError as exc:
        print(f"infeasible plan: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except TraceInvariantError as exc:
        print(f"trace invariant violated: {exc}", file=sys.stderr)
        return EXIT_SAFETY
    except (OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EcoAccError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

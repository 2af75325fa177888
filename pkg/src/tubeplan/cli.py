"""Command-line interface: plan / optimize / verify / bench / gen-env.

Exit codes: 0 success, 2 infeasible instance or program, 1 any other error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench as bench_mod
from . import config as cfg_mod
from . import dynmodel, planner as planner_mod, trajopt
from .env import load_environment

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2


def _parse_point(text: str) -> np.ndarray:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected x,y,z")
    return np.array(parts)


def _cmd_plan(args) -> int:
    cfg = cfg_mod.load_config(args.config)
    envmap = load_environment(args.env)
    pcfg = cfg_mod.planner_config(cfg, variant=args.variant)
    if args.iters is not None:
        pcfg.max_iters = args.iters
    rng = np.random.default_rng(args.seed)
    try:
        planner = planner_mod.Planner(
            envmap, args.start, args.goal,
            cfg_mod.sampler_config(cfg), cfg_mod.potential_config(cfg),
            cfg_mod.step_config(cfg), pcfg, rng,
        )
    except planner_mod.InfeasibleInputError as exc:
        print(f"infeasible instance: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    result = planner.plan()
    if result is None:
        print("no path found within the iteration budget", file=sys.stderr)
        return EXIT_INFEASIBLE
    planner_mod.save_path_json(result, args.out)
    if args.nodes_csv:
        planner_mod.tree_to_csv(planner.tree, args.nodes_csv)
    print(
        f"path: {len(result.waypoints)} waypoints, length {result.length:.2f} m, "
        f"turning {result.turning_sum:.2f} rad, min clearance "
        f"{result.min_clearance:.2f} m -> {args.out}"
    )
    return EXIT_OK


def _cmd_optimize(args) -> int:
    cfg = cfg_mod.load_config(args.config)
    ocfg = cfg_mod.opt_config(cfg)
    waypoints = planner_mod.load_waypoints_json(args.path)
    try:
        spline, tensions, report = trajopt.optimize(waypoints, ocfg)
    except trajopt.InfeasibleProblem as exc:
        print(f"infeasible trajectory program: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    trajopt.export_trajectory_csv(spline, tensions, args.out_csv)
    trajopt.save_solution_json(spline, tensions, report, args.solution)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
    print(
        f"trajectory: {report['segments']} segments over {report['duration_s']:.2f} s, "
        f"max tension {report['max_tension_n']:.2f} N, max tilt "
        f"{np.rad2deg(report['max_tilt_rad']):.2f} deg -> {args.out_csv}"
    )
    return EXIT_OK


def _cmd_verify(args) -> int:
    cfg = cfg_mod.load_config(args.config)
    params = cfg_mod.system_params(cfg)
    envmap = load_environment(args.env) if args.env else None
    spline, tensions, _ = trajopt.load_solution_json(args.solution)
    bounds = dynmodel.VerifyBounds(
        T_u=float(cfg["trajopt"]["tension_max_n"]),
        alpha_u=float(np.deg2rad(cfg["trajopt"]["tilt_max_deg"])),
        T_l=float(cfg["trajopt"]["tension_min_warn_n"]),
    )
    report = dynmodel.verify(spline, tensions, params, bounds, envmap)
    with open(args.out, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    print(f"verification {'PASS' if report.pass_ else 'FAIL'} -> {args.out}")
    return EXIT_OK if report.pass_ else EXIT_INFEASIBLE


def _cmd_bench(args) -> int:
    cfg = cfg_mod.load_config(args.config)
    bcfg_d = cfg["bench"]
    envmap = load_environment(args.env)
    settings = bench_mod.RunSettings(
        start=np.asarray(args.start if args.start is not None else bcfg_d["start"]),
        goal=np.asarray(args.goal if args.goal is not None else bcfg_d["goal"]),
        sampler_cfg=cfg_mod.sampler_config(cfg),
        potential_cfg=cfg_mod.potential_config(cfg),
        step_cfg=cfg_mod.step_config(cfg),
        planner_cfg=cfg_mod.planner_config(cfg),
    )
    settings.planner_cfg.max_iters = (
        args.iters if args.iters is not None else int(bcfg_d["max_iters"])
    )
    bcfg = bench_mod.BenchConfig(
        seeds=args.seeds if args.seeds is not None else int(bcfg_d["seeds"]),
        variants=tuple(args.variants.split(",")) if args.variants
        else tuple(bcfg_d["variants"]),
        workers=args.workers if args.workers is not None else bcfg_d["workers"],
    )
    records = bench_mod.run_bench(envmap, settings, bcfg)
    summary = bench_mod.aggregate(records)
    out_dir = args.out_dir
    bench_mod.write_records(records, out_dir)
    bench_mod.write_summary(summary, out_dir)
    for variant in sorted(summary):
        row = summary[variant]
        print(
            f"{variant:9s} success {row['success_rate_pct']:5.1f}%  "
            f"eff {row['mean_effective_ratio']:.3f}  "
            f"checks {row['mean_collision_checks']:.0f}"
        )
    print(f"reports -> {out_dir}")
    return EXIT_OK


def _cmd_gen_env(args) -> int:
    keep_clear = []
    if args.keep_clear:
        for spec in args.keep_clear:
            x, y, z, r = (float(v) for v in spec.split(","))
            keep_clear.append((np.array([x, y, z]), r))
    arena_lo = args.arena_min
    arena_hi = args.arena_max
    envmap = bench_mod.generate_env(
        density=args.density,
        seed=args.seed,
        arena=(arena_lo, arena_hi),
        size_range=(args.size_min, args.size_max),
        keep_clear=keep_clear,
    )
    from .env import save_environment

    save_environment(envmap, args.out)
    print(f"{len(envmap.obstacles)} obstacles at density {args.density} -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tubeplan",
        description="Tube-RRT* planning and payload trajectory optimization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="search a tube path through an environment")
    p.add_argument("--env", required=True)
    p.add_argument("--start", type=_parse_point, required=True)
    p.add_argument("--goal", type=_parse_point, required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", default="enhanced")
    p.add_argument("--iters", type=int)
    p.add_argument("--out", default="path.json")
    p.add_argument("--nodes-csv")
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("optimize", help="smooth a path into a payload trajectory")
    p.add_argument("--path", required=True, help="path JSON from `plan`")
    p.add_argument("--config")
    p.add_argument("--out-csv", default="trajectory.csv")
    p.add_argument("--solution", default="solution.json")
    p.add_argument("--report")
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("verify", help="audit a trajectory solution")
    p.add_argument("--solution", required=True, help="solution JSON from `optimize`")
    p.add_argument("--env")
    p.add_argument("--config")
    p.add_argument("--out", default="verification.json")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("bench", help="run the multi-seed ablation benchmark")
    p.add_argument("--env", required=True)
    p.add_argument("--config")
    p.add_argument("--seeds", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--variants", help="comma-separated subset of variants")
    p.add_argument("--workers", type=int)
    p.add_argument("--start", type=_parse_point)
    p.add_argument("--goal", type=_parse_point)
    p.add_argument("--out-dir", default="bench_out")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("gen-env", help="generate a seeded box-field environment")
    p.add_argument("--out", required=True)
    p.add_argument("--density", type=float, default=0.12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--arena-min", type=_parse_point, default=np.zeros(3))
    p.add_argument("--arena-max", type=_parse_point, default=np.array([50.0, 50.0, 15.0]))
    p.add_argument("--size-min", type=float, default=0.75)
    p.add_argument("--size-max", type=float, default=2.0)
    p.add_argument("--keep-clear", action="append",
                   help="x,y,z,radius region boxes must avoid (repeatable)")
    p.set_defaults(func=_cmd_gen_env)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (trajopt.InfeasibleProblem, planner_mod.InfeasibleInputError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Subcommands
-----------
build-primitives   fit, size, and serialize a motion-primitive library
run                execute a scenario batch and emit reports + figures
compare            paired runs of the tube planner and the RRT baseline
contour-dump       extract contour boundaries and outer-ellipse parameters
tube-check         re-simulate a library and report tube containment

Exit codes: 0 success, 2 at least one run ended planner-stuck, 3 at least
one run exhausted the cycle budget, 4 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import ccrrt
from . import contours as ct
from . import dynamics as dyn
from . import planner as pl
from . import report
from . import scenario as sc
from . import tubes

EXIT_OK = 0
EXIT_STUCK = 2
EXIT_BUDGET = 3
EXIT_CONFIG = 4


class ConfigError(ValueError):
    pass


def _load_scenario(name_or_path):
    try:
        if name_or_path in sc.BUILTIN_SCENARIOS:
            return sc.load_builtin(name_or_path)
        return sc.load_scenario(name_or_path)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load scenario {name_or_path!r}: {exc}")


def _library_for(scenario, path=None, seed=0):
    if path is None:
        return scenario.build_library(seed=seed)
    try:
        with open(path) as fh:
            model, prims = tubes.library_from_json(json.load(fh))
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load library {path!r}: {exc}")
    if model.kind != scenario.model.kind:
        raise ConfigError(
            f"library model {model.kind!r} does not match scenario "
            f"model {scenario.model.kind!r}")
    return prims


def _apply_risk_overrides(scenario, args):
    if getattr(args, "delta", None) is not None:
        scenario.delta = args.delta
    if getattr(args, "cycles_cap", None) is not None:
        scenario.cycles_cap = args.cycles_cap
    if getattr(args, "replan_stride", None) is not None:
        scenario.replan_stride = args.replan_stride


def cmd_build_primitives(args):
    if args.scenario:
        scenario = _load_scenario(args.scenario)
        model = scenario.model
        library = scenario.build_library(verifier=args.verifier,
                                         seed=args.seed)
    else:
        model = dyn.underwater_model() if args.model == "underwater" \
            else dyn.ground_model()
        if args.model == "underwater":
            specs = tubes.default_underwater_specs()
            method = "control-sampling"
        else:
            specs = tubes.default_ground_specs()
            method = "state-tracking"
        library = tubes.build_library(model, specs, method=method,
                                      verifier=args.verifier,
                                      seed=args.seed)
    blob = tubes.library_to_json(model, library, verifier=args.verifier,
                                 seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(library)} primitives to {out}")
    return EXIT_OK


def _batch_exit_code(rows):
    statuses = {r["status"] for r in rows}
    if "planner-stuck" in statuses:
        return EXIT_STUCK
    if "budget-violated" in statuses:
        return EXIT_BUDGET
    return EXIT_OK


def _run_batch(scenario, library, runs, seed, outdir):
    budget = scenario.budget()
    poses = scenario.sample_initial_poses(runs, seed=seed)
    rows = []
    all_poses = []
    logs_blob = []
    for i in range(runs):
        scene = i % scenario.n_scenes
        task = scenario.make_task(scene)
        rng = np.random.default_rng((seed, i))
        res = pl.run_to_goal(scenario.model, poses[i], library, task,
                             budget, rng)
        n = res.report["cycles"]
        rows.append({"run": i, "seed": seed, "scene": scene,
                     "status": res.status,
                     "goal_reached": res.report["goal_reached"],
                     "cycles": n,
                     "linear_bound": res.report["linear_bound"],
                     "product_bound": res.report["product_bound"]})
        all_poses.append(res.poses)
        logs_blob.append([log.to_json() for log in res.logs])
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    report.write_runs_csv(outdir / "runs.csv", rows)
    cycles = [r["cycles"] for r in rows if r["goal_reached"]]
    report.write_histogram_csv(outdir / "cycles_histogram.csv", cycles)
    summary = report.aggregate(rows)
    summary["delta"] = budget.delta
    summary["delta_o"] = budget.delta_o
    summary["delta_tube"] = budget.delta_tube
    report.write_summary(outdir / "summary.json", summary)
    with open(outdir / "cycle_logs.json", "w") as fh:
        json.dump(logs_blob, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for i, ps in enumerate(all_poses[:20]):
        report.write_poses_csv(outdir / f"trajectory_{i:03d}.csv", i, ps)
    waypoints = scenario.objective_spec.get("waypoints")
    report.render_trajectories(outdir / "trajectories.png",
                               scenario.contour_set(0), all_poses[:10],
                               waypoints, scenario.goal,
                               scenario.goal_radius)
    report.render_histogram(outdir / "cycles_histogram.png", cycles)
    return rows, summary


def cmd_run(args):
    scenario = _load_scenario(args.scenario)
    _apply_risk_overrides(scenario, args)
    runs = scenario.n_scenes if args.runs is None else args.runs
    if runs == 0:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        report.write_runs_csv(outdir / "runs.csv", [])
        report.write_summary(outdir / "summary.json", report.aggregate([]))
        print("empty batch")
        return EXIT_OK
    library = _library_for(scenario, args.library, args.seed)
    rows, summary = _run_batch(scenario, library, runs, args.seed, args.out)
    print(f"{summary['runs']} runs, success rate {summary['success_rate']}, "
          f"max cycles {summary['max_cycles']}")
    return _batch_exit_code(rows)


def _baseline_obstacles(scenario, scene):
    """Discs whose radii are the contour boundary extents at the shared
    risk level; the baseline's own inflation then adds the Gaussian
    quantile per tree depth."""
    cset = ct.build_contour_set(scenario.scenes()[scene], scenario.delta_o)
    obs = []
    for entry in cset.entries:
        radius = ct.boundary_radius(entry, cset.delta, 0.0, (1.0, 0.0))
        obs.append(ccrrt.DiscObstacle(entry.obstacle.center, radius,
                                      entry.obstacle.velocity))
    return obs


def cmd_compare(args):
    scenario = _load_scenario(args.scenario)
    _apply_risk_overrides(scenario, args)
    runs = args.runs if args.runs is not None else 10
    library = _library_for(scenario, args.library, args.seed)
    outdir = Path(args.out)
    (outdir / "primary").mkdir(parents=True, exist_ok=True)
    rows, summary = _run_batch(scenario, library, runs, args.seed,
                               outdir / "primary")
    comparison = {"primary": summary, "notes": list(ccrrt.COMPARISON_NOTES)}
    if args.baseline:
        (outdir / "baseline").mkdir(parents=True, exist_ok=True)
        model = ccrrt.LinearGaussianModel(dt=scenario.model.dt)
        objective = ccrrt.CcrrtObjective(
            tuple(map(tuple, scenario.objective_spec.get(
                "waypoints", [scenario.goal, scenario.goal]))),
            tuple(scenario.goal))
        params = ccrrt.RrtParams(delta_o=scenario.delta_o)
        poses = scenario.sample_initial_poses(runs, seed=args.seed)
        base_rows = []
        collision_rates = []
        for i in range(runs):
            scene = i % scenario.n_scenes
            obstacles = _baseline_obstacles(scenario, scene)
            rng = np.random.default_rng((args.seed, i, 1))
            res = ccrrt.run_to_goal(model, poses[i][:2], obstacles,
                                    objective, params,
                                    scenario.goal_radius, rng,
                                    max_cycles=scenario.cycles_cap * 4)
            base_rows.append({"run": i, "seed": args.seed, "scene": scene,
                              "status": res.status,
                              "goal_reached":
                              res.report["goal_reached"],
                              "cycles": res.report["cycles"],
                              "linear_bound": 0.0, "product_bound": 0.0})
            collision_rates.append(
                ccrrt.collision_rate(res.poses, obstacles, model.dt))
        report.write_runs_csv(outdir / "baseline" / "runs.csv", base_rows)
        base_summary = report.aggregate(base_rows)
        base_summary["mean_collision_rate"] = float(
            np.mean(collision_rates))
        report.write_summary(outdir / "baseline" / "summary.json",
                             base_summary)
        comparison["baseline"] = base_summary
    report.write_summary(outdir / "comparison.json", comparison)
    print(json.dumps(comparison, indent=2, sort_keys=True))
    return _batch_exit_code(rows)


def cmd_contour_dump(args):
    scenario = _load_scenario(args.scenario)
    cset = scenario.contour_set(args.scene)
    try:
        x0, x1, y0, y1 = (float(v) for v in args.window.split(","))
    except ValueError:
        raise ConfigError(f"bad window {args.window!r}; "
                          "expected x0,x1,y0,y1")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    segs = report.contour_boundary_segments(
        cset, ((x0, x1), (y0, y1)), resolution=args.resolution, t=args.time)
    report.write_boundary_csv(outdir / "boundaries.csv", segs)
    report.write_ellipse_csv(outdir / "outer_ellipses.csv", cset,
                             t=args.time)
    report.render_trajectories(outdir / "contours.png", cset, [],
                               window=((x0, x1), (y0, y1)), t=args.time,
                               goal=scenario.goal,
                               goal_radius=scenario.goal_radius)
    print(f"wrote {len(segs)} boundary segments to {outdir}")
    return EXIT_OK


def cmd_tube_check(args):
    try:
        with open(args.library) as fh:
            model, prims = tubes.library_from_json(json.load(fh))
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load library {args.library!r}: {exc}")
    rng = np.random.default_rng(args.seed)
    print("index  radius    worst-step containment "
          f"(n={args.samples}, delta_tube per step)")
    ok = True
    for prim in prims:
        start = np.asarray(prim.start, dtype=float)
        traj = dyn.simulate(model, np.tile(start, (args.samples, 1)),
                            prim.controls, rng)
        phi = 1.0 / prim.tube.radius ** 2
        worst = 1.0
        for k in range(1, prim.horizon + 1):
            center = prim.nominal.evaluate(k / prim.horizon)
            d2 = np.sum((traj[:, k, :2] - center) ** 2, axis=1)
            worst = min(worst, float(np.mean(phi * d2 <= 1.0)))
        target = 1.0 - prim.tube.delta_tube
        line_ok = worst >= target - 3.0 * np.sqrt(
            prim.tube.delta_tube / args.samples)
        ok = ok and line_ok
        print(f"{prim.index:5d}  {prim.tube.radius:8.4f}  {worst:.5f}  "
              f"{'ok' if line_ok else 'LOW'} (target {target})")
    return EXIT_OK if ok else EXIT_CONFIG


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tubeplan",
        description="risk-bounded tube motion planning benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    bp = sub.add_parser("build-primitives",
                        help="fit, size, and serialize a primitive library")
    group = bp.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", choices=("underwater", "ground"))
    group.add_argument("--scenario")
    bp.add_argument("--out", required=True)
    bp.add_argument("--seed", type=int, default=0)
    bp.add_argument("--verifier", choices=("analytical", "sampling"),
                    default="analytical")
    bp.set_defaults(func=cmd_build_primitives)

    run = sub.add_parser("run", help="execute a scenario batch")
    run.add_argument("--scenario", required=True)
    run.add_argument("--runs", type=int, default=None)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", required=True)
    run.add_argument("--library", default=None)
    run.add_argument("--replan-stride", type=int, default=None)
    run.add_argument("--delta", type=float, default=None)
    run.add_argument("--cycles-cap", type=int, default=None)
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare",
                          help="paired tube planner / RRT baseline runs")
    cmp_.add_argument("--scenario", required=True)
    cmp_.add_argument("--runs", type=int, default=None)
    cmp_.add_argument("--seed", type=int, default=0)
    cmp_.add_argument("--out", required=True)
    cmp_.add_argument("--library", default=None)
    cmp_.add_argument("--replan-stride", type=int, default=None)
    cmp_.add_argument("--delta", type=float, default=None)
    cmp_.add_argument("--cycles-cap", type=int, default=None)
    cmp_.add_argument("--baseline", action=argparse.BooleanOptionalAction,
                      default=True)
    cmp_.set_defaults(func=cmd_compare)

    cd = sub.add_parser("contour-dump",
                        help="extract contour boundaries for plotting")
    cd.add_argument("--scenario", required=True)
    cd.add_argument("--scene", type=int, default=0)
    cd.add_argument("--out", required=True)
    cd.add_argument("--window", default="-1,7,-1,5")
    cd.add_argument("--resolution", type=int, default=200)
    cd.add_argument("--time", type=float, default=0.0)
    cd.set_defaults(func=cmd_contour_dump)

    tc = sub.add_parser("tube-check",
                        help="re-simulate a library and report containment")
    tc.add_argument("--library", required=True)
    tc.add_argument("--samples", type=int, default=20_000)
    tc.add_argument("--seed", type=int, default=0)
    tc.set_defaults(func=cmd_tube_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

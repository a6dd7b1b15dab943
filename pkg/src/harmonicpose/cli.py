"""Command-line pipeline: estimate, assign, simulate, benchmark, report.

Exit codes: 0 success, 1 usage error, 2 input error, 3 numerical failure
(non-convergence), 4 empty association set.  Angles on the command line and
in reports are degrees; all internal computation is radians.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time

import numpy as np

from . import kernels
from .assoc import association_metrics, group_precision
from .evalharness import (SceneConfig, discretization_mc, eval_time_bench,
                          generate_scene, pose_error, sensitivity_sweep)
from .geometry import params_to_pose
from .io import (AssociationFile, CameraBlock, InputFormatError,
                 load_association_file, save_association_file)
from .marginals import AssignmentConfig, ConvergenceError, assign_marginals
from .mechanisms import MECHANISMS, MechanismConfig
from .search import discretize, search, set_threads

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_EMPTY = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _add_run_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon-deg", type=float, default=0.15,
                   help="inlier threshold in degrees")
    p.add_argument("--outlier-range-deg", type=float, default=5.0,
                   help="outlier error range in degrees")
    p.add_argument("--px", type=float, default=0.1)
    p.add_argument("--py", type=float, default=0.1)
    p.add_argument("--grid-n", type=int, default=32,
                   help="disk lattice granularity (cell side pi/N)")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)


def _resolved_config(args, mechanism=None) -> dict:
    cfg = {
        "epsilon_deg": args.epsilon_deg,
        "outlier_range_deg": args.outlier_range_deg,
        "p_x": args.px,
        "p_y": args.py,
        "grid_n": args.grid_n,
        "seed": args.seed,
        "threads": args.threads,
        "backend": kernels.backend_name(),
    }
    if mechanism is not None:
        cfg["mechanism"] = mechanism
    return cfg


def _emit(record: dict, output: str | None) -> None:
    text = json.dumps(record, indent=1, default=_jsonable)
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _load_graph(path):
    afile = load_association_file(path)
    graph = afile.to_graph()
    return afile, graph


def cmd_estimate(args) -> int:
    afile, graph = _load_graph(args.input)
    if graph.n_edges == 0:
        print("error: association file has no edges", file=sys.stderr)
        return EXIT_EMPTY
    config = MechanismConfig.from_degrees(args.epsilon_deg,
                                          args.outlier_range_deg,
                                          args.px, args.py)
    assignment = None
    if args.mechanism in ("hcm", "mcm-hcm"):
        assignment = assign_marginals(graph, AssignmentConfig(p_x=args.px,
                                                              p_y=args.py))
    grid = discretize(args.grid_n)
    t0 = time.perf_counter()
    result = search(graph, config, grid, args.mechanism,
                    assignment=assignment, threads=args.threads)
    elapsed = time.perf_counter() - t0
    record = {
        "command": "estimate",
        "config": _resolved_config(args, args.mechanism),
        "score": result.score,
        "rotation": result.pose.rotation.ravel().tolist(),
        "translation": result.pose.translation.tolist(),
        "params": {"phi": result.params.phi,
                   "v1": result.params.v1.tolist(),
                   "v2": result.params.v2.tolist()},
        "inlier_count": result.diagnostics.get("inlier_count"),
        "tie_count": len(result.ties),
        "tie_overflow": result.tie_overflow,
        "elapsed_s": elapsed,
    }
    gt = afile.ground_truth()
    if gt is not None and gt.pose is not None:
        err = pose_error([t.pose for t in result.ties], gt.pose)
        record["error_deg"] = {"rotation": math.degrees(err.rotation),
                               "translation": math.degrees(err.translation),
                               "combined": math.degrees(err.combined)}
    _emit(record, args.output)
    return EXIT_OK


def cmd_assign(args) -> int:
    afile, graph = _load_graph(args.input)
    if graph.n_edges == 0:
        print("error: association file has no edges", file=sys.stderr)
        return EXIT_EMPTY
    assignment = assign_marginals(
        graph, AssignmentConfig(p_x=args.px, p_y=args.py,
                                tolerance=args.tolerance,
                                max_iterations=args.max_iterations))
    record = {
        "command": "assign",
        "config": {"p_x": args.px, "p_y": args.py,
                   "tolerance": args.tolerance,
                   "max_iterations": args.max_iterations},
        "reference": assignment.reference,
        "probs": [[int(i), int(j), float(p)] for (i, j), p in
                  zip(((e.i, e.j) for e in graph.edges), assignment.probs)],
        "left_totals": assignment.left_totals.tolist(),
        "right_totals": assignment.right_totals.tolist(),
    }
    _emit(record, args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    scene = generate_scene(SceneConfig(
        n_points=args.points, outlier_fraction=args.outlier_fraction,
        ambiguity=args.ambiguity, noise=math.radians(args.noise_deg),
        seed=args.seed))
    graph = scene.graph
    afile = AssociationFile(
        left=CameraBlock(bearings=graph.left),
        right=CameraBlock(bearings=graph.right),
        edges=[(e.i, e.j, e.similarity) for e in graph.edges],
        gt_rotation=scene.pose.rotation,
        gt_translation=scene.pose.translation,
        gt_matches=sorted(scene.gt.matches),
    )
    save_association_file(args.output, afile)
    record = {
        "command": "simulate",
        "config": {"points": args.points,
                   "outlier_fraction": args.outlier_fraction,
                   "ambiguity": args.ambiguity, "noise_deg": args.noise_deg,
                   "seed": args.seed},
        "n_left": graph.n_left, "n_right": graph.n_right,
        "n_edges": graph.n_edges, "output": args.output,
    }
    print(json.dumps(record, indent=1))
    return EXIT_OK


def cmd_metrics(args) -> int:
    afile, graph = _load_graph(args.input)
    gt = afile.ground_truth()
    if gt is None or not gt.matches:
        print("error: file carries no ground-truth matches", file=sys.stderr)
        return EXIT_INPUT
    m = association_metrics(graph.edges, gt)
    record = {
        "command": "metrics",
        "precision": m.precision,
        "recall": m.recall,
        "success": m.success,
        "n_correct": m.n_correct,
        "group_precision_left": group_precision(graph, gt, "left"),
        "group_precision_right": group_precision(graph, gt, "right"),
    }
    _emit(record, args.output)
    return EXIT_OK


def cmd_discretize_error(args) -> int:
    stats = discretization_mc(n=args.grid_n, trials=args.trials,
                              seed=args.seed)
    record = {
        "command": "discretize-error",
        "config": {"grid_n": args.grid_n, "trials": args.trials,
                   "seed": args.seed},
        "max_rotation_deg": stats["max_rotation_deg"],
        "max_translation_deg": stats["max_translation_deg"],
        "median_rotation_deg": stats["median_rotation_deg"],
        "median_translation_deg": stats["median_translation_deg"],
    }
    _emit(record, args.output)
    if args.csv:
        rows = []
        for kind in ("rotation", "translation"):
            counts, edges = stats[f"{kind}_hist"]
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                rows.append([kind, f"{0.5 * (lo + hi):.6f}", int(c)])
        _write_csv(args.csv, ["parameter", "threshold_or_bin", "value"], rows)
    return EXIT_OK


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    stats = eval_time_bench(inlier_counts=sizes, trials=args.trials,
                            seed=args.seed)
    record = {
        "command": "bench",
        "config": {"sizes": sizes, "trials": args.trials, "seed": args.seed,
                   "backend": kernels.backend_name()},
        "results": stats,
    }
    if args.kernel_backends:
        record["kernel_backends"] = _backend_comparison(args.seed)
    _emit(record, args.output)
    if args.csv:
        rows = []
        for n, m_us, h_us in zip(stats["n"], stats["mcm_us"], stats["hcm_us"]):
            rows.append(["mcm", n, m_us])
            rows.append(["hcm", n, h_us])
        _write_csv(args.csv, ["parameter", "threshold_or_bin", "value"], rows)
    return EXIT_OK


def _backend_comparison(seed: int) -> dict:
    """Time the cell-sweep kernel against its uncompiled fallback."""
    from .marginals import AssignmentConfig, assign_marginals
    from .search import _CellEvaluator, discretize

    scene = generate_scene(SceneConfig(n_points=10, outlier_fraction=0.2,
                                       ambiguity=2, seed=seed))
    config = MechanismConfig.from_degrees(epsilon_deg=1.5,
                                          outlier_range_deg=50.0)
    assignment = assign_marginals(scene.graph, AssignmentConfig())
    grid = discretize(6)
    ev = _CellEvaluator(scene.graph, config, grid, "hcm", assignment)
    out = np.empty(grid.n_cells)
    stop = grid.n_cells

    def run(fn):
        fn(0, stop, *ev._common_args(), out)
        t0 = time.perf_counter()
        fn(0, stop, *ev._common_args(), out)
        return time.perf_counter() - t0

    timings = {"cells": int(grid.n_cells) ** 2,
               "numpy_s": run(kernels.fallback(kernels.eval_rows))}
    if kernels.USE_NUMBA:
        timings["numba_s"] = run(kernels.eval_rows)
        timings["speedup"] = timings["numpy_s"] / timings["numba_s"]
    return timings


def cmd_sweep(args) -> int:
    p_values = [float(p) for p in args.p_values.split(",")]
    scenes = [generate_scene(SceneConfig(n_points=args.points,
                                         outlier_fraction=args.outlier_fraction,
                                         ambiguity=args.ambiguity,
                                         seed=args.seed + k))
              for k in range(args.scenes)]
    set_threads(args.threads)
    grid = discretize(args.grid_n)
    stats = sensitivity_sweep(scenes, p_values, grid,
                              epsilon=math.radians(args.epsilon_deg),
                              outlier_range=math.radians(args.outlier_range_deg))
    record = {
        "command": "sweep",
        "config": _resolved_config(args),
        "p_values": stats["p"],
        "c_values": stats["c"],
        "recall": stats["recall"],
        "mean_error_deg": [float(np.mean(e)) for e in stats["errors_deg"]],
    }
    _emit(record, args.output)
    if args.csv:
        rows = []
        for p, errors in zip(stats["p"], stats["errors_deg"]):
            for err in errors:
                rows.append([p, "error_deg", f"{err:.6f}"])
        _write_csv(args.csv, ["parameter", "threshold_or_bin", "value"], rows)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(
        prog="harmonicpose",
        description="Relative-pose estimation under many-to-many association",
        epilog="exit codes: 0 ok, 1 usage, 2 input, 3 numerical, 4 empty edges")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate a pose from an association file")
    p.add_argument("--input", required=True)
    p.add_argument("--mechanism", choices=MECHANISMS, default="hcm")
    _add_run_config(p)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("assign", help="assign marginal probabilities to edges")
    p.add_argument("--input", required=True)
    p.add_argument("--px", type=float, default=0.1)
    p.add_argument("--py", type=float, default=0.1)
    p.add_argument("--tolerance", type=float, default=1e-8)
    p.add_argument("--max-iterations", type=int, default=10000)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("simulate", help="write a synthetic association file")
    p.add_argument("--points", type=int, default=12)
    p.add_argument("--outlier-fraction", type=float, default=0.25)
    p.add_argument("--ambiguity", type=int, default=2)
    p.add_argument("--noise-deg", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("metrics", help="association quality against ground truth")
    p.add_argument("--input", required=True)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("discretize-error",
                       help="Monte-Carlo grid discretization error")
    p.add_argument("--grid-n", type=int, default=32)
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default=None)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_discretize_error)

    p = sub.add_parser("bench", help="post-inlier evaluation-time benchmark")
    p.add_argument("--sizes", default="128,256,512,1024")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernel-backends", action="store_true",
                   help="also compare compiled vs fallback sweep kernels")
    p.add_argument("--output", default=None)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="budget-probability sensitivity sweep")
    p.add_argument("--p-values", default="0.01,0.05,0.1,0.2,0.3,0.5,0.7")
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--outlier-fraction", type=float, default=0.25)
    p.add_argument("--ambiguity", type=int, default=2)
    _add_run_config(p)
    p.add_argument("--output", default=None)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputFormatError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConvergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

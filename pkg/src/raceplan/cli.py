"""Command-line front end for planning, simulation, and benchmarking.

Four subcommands cover the workflow:

``raceplan plan``
    One planning cycle on a scenario snapshot.  Writes the refined
    trajectory as CSV; the pseudo-parallel strategy writes one CSV per
    side combination plus a selection record.
``raceplan sim``
    Closed-loop run of a single scenario under one or all strategies,
    with per-run result rows, per-step timing, and trajectory dumps.
``raceplan bench``
    Seeded Monte Carlo benchmark across strategies.  Emits the aggregate
    results, plot-ready overtake-time and per-step-time tables, the
    effective config, and optional SVG box plots.  Scenarios run in a
    process pool by default; ``--sequential`` keeps everything in one
    process so the recorded per-step times are comparable.
``raceplan plot``
    Re-render the SVG figures from an existing benchmark directory.

Every emitted file is schema-checked before the command returns.  Exit
codes: 0 success, 1 bad arguments or configuration, 2 runtime failure,
3 benchmark failure rate above 20%.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import (
    behavior_params,
    bench_kwargs,
    default_config,
    gg_diagram,
    load_config,
    ocp_params,
    save_config,
    scenario_from_config,
)
from .errors import (
    ConsistencyError,
    GeometryError,
    ParseError,
    RaceplanError,
    SpecError,
)
from .ocp import save_solution_csv
from .sim import (
    RESULT_COLUMNS,
    STRATEGIES,
    TIMING_COLUMNS,
    fmt_cell,
    make_planner,
    make_world,
    median_overtake_time,
    random_scenario,
    run_scenario,
    select_evaluation,
    write_results_csv,
    write_timing_csv,
)
from .track import load_track, make_synthetic_track

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_BENCH = 3

# input-side problems: bad flags, unreadable files, invalid configuration
_CONFIG_ERRORS = (ParseError, SpecError, GeometryError, ConsistencyError,
                  OSError)

_SOLUTION_COLUMNS = ("s", "t", "V", "n", "chi", "ax", "ay", "jx", "jy")
_OVERTAKE_COLUMNS = ("scenario", "strategy", "completed", "overtake_time")
_STEPTIME_COLUMNS = ("strategy", "n_visible", "samples", "mean_solves",
                     "mean_ms", "median_ms", "p25_ms", "p75_ms")
_TRAJECTORY_COLUMNS = ("t", "s", "n", "V")


class _UsageError(Exception):
    """Raised instead of argparse's sys.exit so main() can return 1."""


class _OutputInvalid(Exception):
    """An emitted file failed its schema check."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="raceplan",
                     description="overtaking planner: plan, simulate, "
                                 "benchmark, plot")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="{plan,sim,bench,plot}")

    def common(sp, strategies, default):
        sp.add_argument("--track", metavar="CSV",
                        help="track file (default: built-in 4 km straight)")
        sp.add_argument("--scenario", metavar="JSON",
                        help="config file (default: shipped defaults)")
        sp.add_argument("--strategy", choices=strategies, default=default)
        sp.add_argument("--seed", type=int, default=None,
                        help="draw a seeded random scenario instead of the "
                             "configured opponents")
        sp.add_argument("--out", default=".", metavar="DIR",
                        help="output directory (default: current)")

    one = ("hierarchical", "parallel", "left", "right")
    plan = sub.add_parser("plan", help="one planning cycle on a snapshot")
    common(plan, one, "hierarchical")
    plan.add_argument("--dump-graph", action="store_true",
                      help="also write the visibility graph as JSON")
    plan.add_argument("--dump-corridor", action="store_true",
                      help="also write the corridor and wall as JSON")

    sim = sub.add_parser("sim", help="closed-loop run of one scenario")
    common(sim, one + ("all",), "hierarchical")

    bench = sub.add_parser("bench", help="seeded Monte Carlo benchmark")
    common(bench, one + ("all",), "all")
    bench.add_argument("--n-scenarios", type=int, default=None,
                       help="number of seeded scenarios (default from config)")
    bench.add_argument("--sequential", action="store_true",
                       help="run in-process so per-step times are recorded")
    bench.add_argument("--svg", action="store_true",
                       help="also render SVG box plots (needs matplotlib)")

    plot = sub.add_parser("plot", help="re-render SVGs from report CSVs")
    plot.add_argument("--out", default=".", metavar="DIR",
                      help="directory holding results.csv and timing.csv")
    return parser


# ---------------------------------------------------------------------------
# Shared setup


def _load_setup(args):
    cfg = load_config(args.scenario) if args.scenario else default_config()
    if args.track:
        track = load_track(args.track)
    else:
        track = make_synthetic_track([(4000.0, 0.0)],
                                     n_left=6.0, n_right=-6.0)
    return cfg, track, gg_diagram(cfg)


def _resolve_scenario(cfg, args):
    if args.seed is not None:
        return random_scenario(args.seed, **bench_kwargs(cfg))
    return scenario_from_config(cfg)


def _ensure_out(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _write_json(doc, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Output schema checks


def _require(cond, path, msg) -> None:
    if not cond:
        raise _OutputInvalid(f"{path}: {msg}")


def _read_rows(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    _require(bool(lines), path, "file is empty")
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


def _check_csv(path, columns, numeric=(), n_rows=None, min_rows=0) -> None:
    header, rows = _read_rows(path)
    _require(header == list(columns), path,
             f"header {header} != expected {list(columns)}")
    if n_rows is not None:
        _require(len(rows) == n_rows, path,
                 f"{len(rows)} rows, expected {n_rows}")
    _require(len(rows) >= min_rows, path, f"needs at least {min_rows} rows")
    idx = [header.index(c) for c in numeric]
    for k, cells in enumerate(rows):
        _require(len(cells) == len(header), path, f"row {k + 1} is ragged")
        for j in idx:
            if cells[j] == "":
                continue
            try:
                float(cells[j])
            except ValueError:
                raise _OutputInvalid(
                    f"{path}: row {k + 1} column {header[j]}: "
                    f"{cells[j]!r} is not numeric") from None


def _check_solution_csv(path, n_rows) -> None:
    header, rows = _read_rows(path)
    _require(tuple(header[:len(_SOLUTION_COLUMNS)]) == _SOLUTION_COLUMNS,
             path, f"unexpected header {header}")
    _require(len(rows) == n_rows, path,
             f"{len(rows)} rows, expected {n_rows}")
    t_col = header.index("t")
    t_prev = -np.inf
    for k, cells in enumerate(rows):
        _require(len(cells) == len(header), path, f"row {k + 1} is ragged")
        try:
            vals = [float(c) for c in cells]
        except ValueError:
            raise _OutputInvalid(f"{path}: row {k + 1} has a non-numeric "
                                 "cell") from None
        _require(vals[t_col] >= t_prev - 1e-12, path,
                 f"t decreases at row {k + 1}")
        t_prev = vals[t_col]


def _check_json_file(path, keys=()) -> None:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise _OutputInvalid(f"{path}: invalid JSON ({exc})") from exc
    for key in keys:
        _require(key in doc, path, f"missing key {key!r}")


def _check_svg(path) -> None:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    _require(text.lstrip().startswith("<?xml") or
             text.lstrip().startswith("<svg"), path, "not an SVG document")
    _require("</svg>" in text[-100:], path, "truncated SVG document")


# ---------------------------------------------------------------------------
# plan


def _corridor_doc(corridor, wall) -> dict:
    doc = {"corridor": None, "wall": None}
    if corridor is not None:
        doc["corridor"] = {
            "s": corridor.s.tolist(),
            "n_left": corridor.n_l.tolist(),
            "n_right": corridor.n_r.tolist(),
            "restricted_left": corridor.active_l.astype(int).tolist(),
            "restricted_right": corridor.active_r.astype(int).tolist(),
        }
    if wall is not None:
        doc["wall"] = {"s_coll": wall.s_coll, "V_coll": wall.V_coll}
    return doc


def _combo_tag(sides) -> str:
    return "".join(side[0] for side in sides)


def _plan_parallel(planner, world, out_dir):
    """Write one solution CSV per side combination plus selection.json."""
    preds, evals = planner.evaluate_combos(world)
    best = select_evaluation(evals)
    record = {"strategy": "parallel", "evaluations": [], "selected": None}
    files = []
    for row in evals:
        entry = {"sides": list(row["sides"]), "file": None,
                 "progress": None, "error": row["error"]}
        if row["solution"] is not None:
            name = f"solution_{_combo_tag(row['sides'])}.csv"
            save_solution_csv(row["solution"], os.path.join(out_dir, name))
            files.append(name)
            entry["file"] = name
            entry["progress"] = row["progress"]
        record["evaluations"].append(entry)
        if row is best:
            record["selected"] = dict(entry)
    _write_json(record, os.path.join(out_dir, "selection.json"))
    if best is None:
        reasons = ", ".join(e["error"] or "?" for e in record["evaluations"])
        raise SpecError(f"every side combination failed ({reasons})")
    planner.adopt_evaluation(best, preds)
    return files, best


def _cmd_plan(args) -> int:
    cfg, track, gg = _load_setup(args)
    scen = _resolve_scenario(cfg, args)
    out_dir = _ensure_out(args.out)
    bparams, oparams = behavior_params(cfg), ocp_params(cfg)
    planner = make_planner(args.strategy, track, gg,
                           behavior=bparams, ocp=oparams)
    world = make_world(track, gg, scen)
    n_rows = oparams.n_grid + 1

    files = []
    if args.strategy == "parallel" and planner.visible(world):
        try:
            files, best = _plan_parallel(planner, world, out_dir)
        except SpecError as exc:
            print(f"plan failed: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        _check_json_file(os.path.join(out_dir, "selection.json"),
                         keys=("evaluations", "selected"))
        print(f"parallel: {len(best['sides'])} opponents, "
              f"selected sides={list(best['sides'])} "
              f"progress={best['progress']:.1f} m")
    else:
        out = planner.plan(world)
        if out.degraded:
            print("plan failed: refinement found no acceptable trajectory",
                  file=sys.stderr)
            return EXIT_RUNTIME
        save_solution_csv(planner.prev_solution,
                          os.path.join(out_dir, "solution.csv"))
        files.append("solution.csv")
        if args.strategy == "parallel":
            record = {"strategy": "parallel", "evaluations": [],
                      "selected": {"sides": [], "file": "solution.csv",
                                   "progress": None, "error": ""}}
            _write_json(record, os.path.join(out_dir, "selection.json"))
            _check_json_file(os.path.join(out_dir, "selection.json"),
                             keys=("evaluations", "selected"))
        sol = planner.prev_solution
        print(f"{planner.name}: sides={list(out.sides)} status={sol.status} "
              f"iterations={sol.iterations} objective={sol.objective:.6g}")

    for name in files:
        _check_solution_csv(os.path.join(out_dir, name), n_rows)

    if args.dump_graph:
        graph = planner.last_graph()
        path = os.path.join(out_dir, "graph.json")
        _write_json(graph.to_jsonable(), path)
        _check_json_file(path, keys=("nodes", "edges", "start", "dest",
                                     "obstacles"))
    if args.dump_corridor:
        path = os.path.join(out_dir, "corridor.json")
        _write_json(_corridor_doc(planner.last_corridor, planner.last_wall),
                    path)
        _check_json_file(path, keys=("corridor", "wall"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# sim


def _write_trajectory_csv(res, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(_TRAJECTORY_COLUMNS) + "\n")
        for row in res.trajectory:
            fh.write(",".join(fmt_cell(v) for v in row) + "\n")


def _summary_line(res) -> str:
    if res.failed:
        state = f"FAILED ({res.failure})"
    elif res.completed:
        state = f"completed t={res.overtake_time:.1f} s"
    else:
        state = "did not finish"
    return (f"{res.strategy}: {state}, min clearance "
            f"{res.min_clearance:.2f} m, {res.replans} replans, "
            f"{res.ocp_solves} solves")


def _cmd_sim(args) -> int:
    cfg, track, gg = _load_setup(args)
    scen = _resolve_scenario(cfg, args)
    out_dir = _ensure_out(args.out)
    bparams, oparams = behavior_params(cfg), ocp_params(cfg)
    strategies = STRATEGIES if args.strategy == "all" else (args.strategy,)

    results = []
    for strategy in strategies:
        res = run_scenario(track, gg, scen, strategy, behavior=bparams,
                           ocp=oparams, log_trajectory=True)
        results.append(res)
        print(_summary_line(res))

    _write_reports(results, out_dir)
    for res in results:
        path = os.path.join(out_dir, f"trajectory_{res.strategy}.csv")
        _write_trajectory_csv(res, path)
        _check_csv(path, _TRAJECTORY_COLUMNS, numeric=_TRAJECTORY_COLUMNS,
                   n_rows=len(res.trajectory))
    if any(res.failed for res in results):
        return EXIT_RUNTIME
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def _bench_task(task):
    track, gg, scen, strategy, bparams, oparams = task
    return run_scenario(track, gg, scen, strategy,
                        behavior=bparams, ocp=oparams)


def _progress_line(i, total, res) -> None:
    if res.failed:
        state = "FAILED"
    elif res.completed:
        state = f"done t={res.overtake_time:.1f}s"
    else:
        state = "DNF"
    print(f"[{i}/{total}] seed={res.seed} {res.strategy}: {state}",
          file=sys.stderr, flush=True)


def _write_reports(results, out_dir) -> None:
    """results.csv + timing.csv, schema-checked."""
    path = os.path.join(out_dir, "results.csv")
    write_results_csv(results, path)
    numeric = tuple(c for c in RESULT_COLUMNS if c != "strategy")
    _check_csv(path, RESULT_COLUMNS, numeric=numeric, n_rows=len(results))

    path = os.path.join(out_dir, "timing.csv")
    write_timing_csv(results, path)
    numeric = tuple(c for c in TIMING_COLUMNS if c != "strategy")
    _check_csv(path, TIMING_COLUMNS, numeric=numeric,
               n_rows=sum(len(r.step_log) for r in results))


def _write_overtake_csv(results, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(_OVERTAKE_COLUMNS) + "\n")
        for r in results:
            row = (r.seed, r.strategy, r.completed, r.overtake_time)
            fh.write(",".join(fmt_cell(v) for v in row) + "\n")


def _write_steptime_csv(results, path, timed) -> None:
    """Per-step planner times grouped by strategy and visible-opponent count.

    Wall-clock statistics are written only for sequential runs; the sample
    and solve-count columns are deterministic either way.
    """
    groups = {}
    for r in results:
        for _, n_vis, solves, ptime in r.step_log:
            groups.setdefault((r.strategy, n_vis), []).append((solves, ptime))

    def order(key):
        strategy, n_vis = key
        rank = STRATEGIES.index(strategy) if strategy in STRATEGIES else 99
        return (rank, n_vis)

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(_STEPTIME_COLUMNS) + "\n")
        for key in sorted(groups, key=order):
            samples = groups[key]
            solves = [s for s, _ in samples]
            row = [key[0], key[1], len(samples),
                   float(np.mean(solves))]
            if timed:
                ms = 1e3 * np.asarray([p for _, p in samples])
                row += [float(np.mean(ms)), float(np.median(ms)),
                        float(np.percentile(ms, 25)),
                        float(np.percentile(ms, 75))]
            else:
                row += [np.nan] * 4
            fh.write(",".join(fmt_cell(v) for v in row) + "\n")


def _render_svgs(results, out_dir, timed):
    from .plotting import plot_overtake_distribution, plot_step_times

    rows = [{"strategy": r.strategy, "completed": r.completed,
             "overtake_time": r.overtake_time} for r in results]
    path = os.path.join(out_dir, "overtake_times.svg")
    plot_overtake_distribution(rows, path)
    _check_svg(path)
    if not timed:
        return
    rows = [{"strategy": r.strategy, "n_visible": n_vis, "plan_time": ptime}
            for r in results for _, n_vis, _, ptime in r.step_log]
    path = os.path.join(out_dir, "step_times.svg")
    plot_step_times(rows, path)
    _check_svg(path)


def _cmd_bench(args) -> int:
    cfg, track, gg = _load_setup(args)
    out_dir = _ensure_out(args.out)
    bparams, oparams = behavior_params(cfg), ocp_params(cfg)
    n = args.n_scenarios if args.n_scenarios is not None \
        else cfg["bench"]["n_scenarios"]
    if n < 1:
        raise SpecError("--n-scenarios must be at least 1")
    base_seed = args.seed if args.seed is not None else cfg["seed"]
    strategies = STRATEGIES if args.strategy == "all" else (args.strategy,)

    kwargs = bench_kwargs(cfg)
    scens = [random_scenario(base_seed + k, **kwargs) for k in range(n)]
    tasks = [(track, gg, scen, strategy, bparams, oparams)
             for scen in scens for strategy in strategies]

    t_start = time.perf_counter()
    results = []
    timed = bool(args.sequential)
    if timed:
        for task in tasks:
            results.append(_bench_task(task))
            _progress_line(len(results), len(tasks), results[-1])
    else:
        with ProcessPoolExecutor(max_workers=os.cpu_count() or 1) as pool:
            for res in pool.map(_bench_task, tasks):
                results.append(res)
                _progress_line(len(results), len(tasks), res)
        # wall-clock step times from pooled workers are not comparable
        for res in results:
            res.step_log = [(t, n_vis, solves, np.nan)
                            for t, n_vis, solves, _ in res.step_log]
    wall = time.perf_counter() - t_start

    cfg_used = json.loads(json.dumps(cfg))
    cfg_used["seed"] = int(base_seed)
    cfg_used["bench"]["n_scenarios"] = int(n)
    path = os.path.join(out_dir, "config_used.json")
    save_config(cfg_used, path)
    _check_json_file(path, keys=("seed", "bench", "behavior", "ocp"))

    _write_reports(results, out_dir)
    path = os.path.join(out_dir, "overtake_times.csv")
    _write_overtake_csv(results, path)
    _check_csv(path, _OVERTAKE_COLUMNS,
               numeric=("scenario", "completed", "overtake_time"),
               n_rows=len(results))
    path = os.path.join(out_dir, "step_times.csv")
    _write_steptime_csv(results, path, timed)
    _check_csv(path, _STEPTIME_COLUMNS,
               numeric=tuple(c for c in _STEPTIME_COLUMNS if c != "strategy"),
               min_rows=1)
    if args.svg:
        _render_svgs(results, out_dir, timed)

    failed = sum(1 for r in results if r.failed)
    print(f"bench: {n} scenarios x {len(strategies)} strategies "
          f"in {wall:.1f} s ({failed} failed runs)")
    for strategy in strategies:
        med = median_overtake_time(results, strategy)
        dnf = sum(1 for r in results
                  if r.strategy == strategy and not r.completed)
        med_txt = "n/a (over half DNF)" if np.isinf(med) else f"{med:.2f} s"
        print(f"  {strategy}: median overtake {med_txt}, {dnf} DNF")

    if failed > 0.2 * len(results):
        print(f"failure rate {failed}/{len(results)} exceeds 20%",
              file=sys.stderr)
        return EXIT_BENCH
    return EXIT_OK


# ---------------------------------------------------------------------------
# plot


def _cmd_plot(args) -> int:
    from .plotting import plot_overtake_distribution, plot_step_times

    results_path = os.path.join(args.out, "results.csv")
    timing_path = os.path.join(args.out, "timing.csv")
    with open(results_path, "r", encoding="utf-8") as fh:
        result_rows = list(csv.DictReader(fh))
    if not result_rows:
        raise SpecError(f"{results_path}: no result rows to plot")
    path = os.path.join(args.out, "overtake_times.svg")
    plot_overtake_distribution(result_rows, path)
    _check_svg(path)
    print(f"wrote {path}")

    with open(timing_path, "r", encoding="utf-8") as fh:
        timing_rows = [r for r in csv.DictReader(fh) if r["plan_time"]]
    if timing_rows:
        path = os.path.join(args.out, "step_times.svg")
        plot_step_times(timing_rows, path)
        _check_svg(path)
        print(f"wrote {path}")
    else:
        print("timing.csv has no recorded step times (pooled benchmark); "
              "skipping step_times.svg")
    return EXIT_OK


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    handlers = {"plan": _cmd_plan, "sim": _cmd_sim, "bench": _cmd_bench,
                "plot": _cmd_plot}
    try:
        return handlers[args.command](args)
    except _OutputInvalid as exc:
        print(f"output validation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RaceplanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())

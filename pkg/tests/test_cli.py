"""End-to-end checks of the command-line interface.

These call ``raceplan.cli.main`` in-process with real solves on small
snapshots, asserting exit codes and the schemas of every emitted file.
"""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from raceplan import cli
from raceplan.sim import SimResult, read_csv_without_columns


def _write_config(path, **overrides):
    path = str(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(overrides, fh)
    return path


def _read_csv(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


def _has_matplotlib():
    try:
        import matplotlib  # noqa: F401
    except ImportError:
        return False
    return True


# ---------------------------------------------------------------------------
# plan


def test_plan_free_window_solution_has_monotone_time(tmp_path):
    cfg = _write_config(tmp_path / "cfg.json", opponents=[])
    out = tmp_path / "out"
    assert cli.main(["plan", "--scenario", cfg, "--out", str(out)]) == 0
    header, rows = _read_csv(out / "solution.csv")
    assert header[:9] == ["s", "t", "V", "n", "chi", "ax", "ay", "jx", "jy"]
    assert len(rows) == 61
    t = np.array([float(r[header.index("t")]) for r in rows])
    assert np.all(np.diff(t) > 0)


def test_plan_parallel_without_opponents_writes_empty_selection(tmp_path):
    cfg = _write_config(tmp_path / "cfg.json", opponents=[])
    out = tmp_path / "out"
    code = cli.main(["plan", "--strategy", "parallel", "--scenario", cfg,
                     "--out", str(out)])
    assert code == 0
    assert (out / "solution.csv").exists()
    record = json.loads((out / "selection.json").read_text())
    assert record["evaluations"] == []
    assert record["selected"]["sides"] == []


def test_plan_dumps_graph_and_corridor(tmp_path):
    out = tmp_path / "out"
    code = cli.main(["plan", "--out", str(out),
                     "--dump-graph", "--dump-corridor"])
    assert code == 0

    graph = json.loads((out / "graph.json").read_text())
    assert isinstance(graph["start"], int)
    assert isinstance(graph["dest"], int)
    n_nodes = len(graph["nodes"])
    assert 0 <= graph["start"] < n_nodes
    assert 0 <= graph["dest"] < n_nodes
    assert len(graph["obstacles"]) == 1

    dump = json.loads((out / "corridor.json").read_text())
    corr = dump["corridor"]
    assert len(corr["s"]) == 61
    n_l = np.array(corr["n_left"])
    n_r = np.array(corr["n_right"])
    assert np.all(n_l >= n_r)
    assert sum(corr["restricted_left"]) + sum(corr["restricted_right"]) > 0


def test_plan_parallel_writes_combo_csvs_and_selection(tmp_path):
    out = tmp_path / "out"
    code = cli.main(["plan", "--strategy", "parallel", "--out", str(out)])
    assert code == 0
    # one opponent in the default snapshot -> exactly two combinations
    assert (out / "solution_l.csv").exists()
    assert (out / "solution_r.csv").exists()
    assert not (out / "solution.csv").exists()

    record = json.loads((out / "selection.json").read_text())
    assert len(record["evaluations"]) == 2
    progresses = [e["progress"] for e in record["evaluations"]]
    assert all(isinstance(p, float) for p in progresses)
    assert record["selected"]["progress"] == max(progresses)
    assert record["selected"]["file"] in ("solution_l.csv", "solution_r.csv")


def test_plan_exit_codes_for_bad_inputs(tmp_path):
    bad_key = tmp_path / "bad_key.json"
    bad_key.write_text('{"bogus": 1}')
    bad_json = tmp_path / "bad.json"
    bad_json.write_text("not json")
    assert cli.main(["plan", "--scenario", str(bad_key)]) == 1
    assert cli.main(["plan", "--scenario", str(bad_json)]) == 1
    assert cli.main(["plan", "--strategy", "all"]) == 1
    assert cli.main(["plan", "--track", str(tmp_path / "missing.csv")]) == 1


def test_plan_exit_2_when_every_combination_is_infeasible(tmp_path):
    # an opponent wider than the track leaves no side to pass on
    cfg = _write_config(tmp_path / "cfg.json", opponents=[
        {"offset": 60.0, "lane": 0.0, "speed": 30.0, "half_width": 10.0}])
    out = tmp_path / "out"
    code = cli.main(["plan", "--strategy", "parallel", "--scenario", cfg,
                     "--out", str(out)])
    assert code == 2
    record = json.loads((out / "selection.json").read_text())
    assert record["selected"] is None
    assert all(e["error"] == "EmptyCorridorError"
               for e in record["evaluations"])


# ---------------------------------------------------------------------------
# sim


def test_sim_writes_reports_and_trajectory(tmp_path):
    out = tmp_path / "out"
    code = cli.main(["sim", "--strategy", "hierarchical", "--out", str(out)])
    assert code == 0

    header, rows = _read_csv(out / "results.csv")
    assert len(rows) == 1
    row = dict(zip(header, rows[0]))
    assert row["strategy"] == "hierarchical"
    assert row["completed"] == "1"
    assert row["failed"] == "0"

    t_header, t_rows = _read_csv(out / "trajectory_hierarchical.csv")
    assert t_header == ["t", "s", "n", "V"]
    assert len(t_rows) == int(row["steps"])
    assert (out / "timing.csv").exists()


# ---------------------------------------------------------------------------
# bench


@pytest.fixture(scope="module")
def sequential_bench(tmp_path_factory):
    """One tiny sequential benchmark shared by the bench/plot tests."""
    out = tmp_path_factory.mktemp("bench_seq")
    code = cli.main(["bench", "--n-scenarios", "1", "--seed", "40",
                     "--strategy", "hierarchical", "--sequential",
                     "--out", str(out)])
    assert code == 0
    return out


def test_bench_pool_matches_sequential_reports(tmp_path, sequential_bench):
    out = tmp_path / "pool"
    code = cli.main(["bench", "--n-scenarios", "1", "--seed", "40",
                     "--strategy", "hierarchical", "--out", str(out)])
    assert code == 0

    for name in ("results.csv", "overtake_times.csv", "config_used.json"):
        assert (out / name).read_bytes() == \
            (sequential_bench / name).read_bytes()
    assert read_csv_without_columns(str(out / "timing.csv")) == \
        read_csv_without_columns(str(sequential_bench / "timing.csv"))

    # wall-clock statistics are recorded only in sequential mode
    header, rows = _read_csv(out / "step_times.csv")
    ms = header.index("mean_ms")
    assert rows and all(r[ms] == "" for r in rows)
    header, rows = _read_csv(sequential_bench / "step_times.csv")
    assert rows and all(float(r[ms]) > 0 for r in rows)


def test_bench_sequential_reports_have_expected_shape(sequential_bench):
    header, rows = _read_csv(sequential_bench / "overtake_times.csv")
    assert header == ["scenario", "strategy", "completed", "overtake_time"]
    assert len(rows) == 1

    cfg = json.loads((sequential_bench / "config_used.json").read_text())
    assert cfg["seed"] == 40
    assert cfg["bench"]["n_scenarios"] == 1

    header, rows = _read_csv(sequential_bench / "step_times.csv")
    by_visible = {int(r[header.index("n_visible")]) for r in rows}
    assert by_visible.issubset({0, 1, 2})
    solves = [float(r[header.index("mean_solves")]) for r in rows]
    assert all(v == 1.0 for v in solves)


def test_bench_failure_rate_exits_3(tmp_path, monkeypatch):
    def fake_task(task):
        track, gg, scen, strategy, bparams, oparams = task
        return SimResult(
            strategy=strategy, seed=scen.seed, completed=False,
            overtake_time=float("nan"), collision=False, min_clearance=1.0,
            steps=3, replans=1, ocp_solves=1, degraded_steps=0, failed=True,
            failure="PlanExhaustedError: stub",
            step_log=[(0.0, 1, 1, 0.01)])

    monkeypatch.setattr(cli, "_bench_task", fake_task)
    out = tmp_path / "out"
    code = cli.main(["bench", "--n-scenarios", "3", "--sequential",
                     "--strategy", "hierarchical", "--out", str(out)])
    assert code == 3
    header, rows = _read_csv(out / "results.csv")
    assert all(r[header.index("failed")] == "1" for r in rows)


# ---------------------------------------------------------------------------
# plot


@pytest.mark.skipif(not _has_matplotlib(), reason="matplotlib not installed")
def test_plot_renders_svgs_from_reports(sequential_bench):
    code = cli.main(["plot", "--out", str(sequential_bench)])
    assert code == 0
    for name in ("overtake_times.svg", "step_times.svg"):
        text = (sequential_bench / name).read_text()
        assert text.lstrip().startswith("<?xml") or \
            text.lstrip().startswith("<svg")
        assert "</svg>" in text


def test_plot_exit_1_when_reports_missing(tmp_path):
    assert cli.main(["plot", "--out", str(tmp_path)]) == 1


# ---------------------------------------------------------------------------
# entry point


def test_module_entry_point_prints_usage():
    proc = subprocess.run(
        [sys.executable, "-m", "raceplan.cli", "plan", "--help"],
        capture_output=True, text=True,
        env={**os.environ, "PYTHONPATH": ""})
    assert proc.returncode == 0
    assert "--dump-graph" in proc.stdout

import csv
import io
import math
import os

import numpy as np
import pytest

from stochsqp import harness
from stochsqp.harness import (
    CSV_COLUMNS,
    ExperimentSpec,
    RunSummary,
    best_iterate,
    emit_report,
    load_reports,
    render,
    run_experiment,
)


def summary(i=0, method="sqp", setting="noise=0.01", fe=1e-9, st=1e-3):
    return RunSummary("p", method, setting, i, 3, fe, st, 12.5, termination="max_iter")


class TestBestIterate:
    def test_last_feasible_wins(self):
        assert best_iterate([(1.0, 1.0), (1e-7, 0.5), (1e-3, 0.1), (1e-8, 0.2)]) == (3, 1e-8, 0.2)

    def test_least_infeasible_fallback(self):
        assert best_iterate([(1.0, 1.0), (0.5, 0.5), (0.7, 0.1)]) == (1, 0.5, 0.5)

    def test_threshold_scales_with_initial_violation(self):
        hist = [(100.0, 1.0), (5e-7, 0.3), (5e-5, 0.1)]
        assert best_iterate(hist)[0] == 2
        assert best_iterate(hist, c0_inf=1.0) == (1, 5e-7, 0.3)

    def test_threshold_boundary(self):
        assert best_iterate([(1.0, 1.0), (1e-6, 0.4), (2e-6, 0.1)])[0] == 1

    def test_empty(self):
        with pytest.raises(ValueError):
            best_iterate([])


class TestRender:
    def test_csv_header_exact(self):
        text = render([summary()], "csv")
        assert text.splitlines()[0] == "problem,method,setting,seed,best_index,feas_err,stat_err,wall_ms"

    def test_csv_parses(self):
        rows = list(csv.DictReader(io.StringIO(render([summary(i) for i in range(3)], "csv"))))
        assert len(rows) == 3
        assert tuple(rows[0]) == CSV_COLUMNS
        assert float(rows[2]["stat_err"]) == 1e-3

    def test_json_round_trip(self, tmp_path):
        runs = [summary(i, fe=1e-9 * (i + 1)) for i in range(4)]
        runs[0].extra = {"hold_rate": 0.98}
        path = emit_report(runs, "json", tmp_path)
        assert load_reports(path) == runs

    def test_markdown_rows(self):
        text = render([summary(i) for i in range(5)], "markdown")
        lines = text.strip().splitlines()
        assert len(lines) == 2 + 5
        assert all(line.startswith("|") for line in lines)

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            render([summary()], "xml")

    def test_empty_reports(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report([], "csv", tmp_path)

    @pytest.mark.skipif(os.geteuid() == 0, reason="root ignores permissions")
    def test_unwritable_directory(self, tmp_path):
        d = tmp_path / "ro"
        d.mkdir()
        d.chmod(0o500)
        with pytest.raises(OSError):
            emit_report([summary()], "csv", d)

    def test_path_blocked_by_file(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            emit_report([summary()], "csv", blocker / "sub")


class TestAggregate:
    def test_ci_five_runs(self):
        st = [1.0, 2.0, 3.0, 4.0, 5.0]
        rows = harness.aggregate([summary(i, st=v) for i, v in enumerate(st)])
        assert len(rows) == 1
        assert rows[0]["runs"] == 5
        assert rows[0]["stat_mean"] == pytest.approx(3.0)
        assert rows[0]["stat_ci"] == pytest.approx(1.96 * np.std(st, ddof=1) / math.sqrt(5))

    def test_single_run_zero_width(self):
        assert harness.aggregate([summary()])[0]["feas_ci"] == 0.0

    def test_groups(self):
        runs = [summary(0), summary(1), summary(0, method="subgradient"), summary(0, setting="noise=0.1")]
        assert len(harness.aggregate(runs)) == 3

    def test_summary_table(self):
        table = harness.summary_table([summary(0), summary(1, method="subgradient")])
        assert len(table.strip().splitlines()) == 4


SYNTH = {"type": "synthetic", "n": 12, "m": 4, "kind": "feasible", "seed": 0}


class TestExperiment:
    def test_spec_validation(self):
        with pytest.raises(ValueError):
            ExperimentSpec(problems=[SYNTH], methods=())
        with pytest.raises(ValueError):
            ExperimentSpec(problems=[SYNTH], budget=0)

    def test_run_count_and_budget(self):
        grids = {"subgradient": {"tau": [0.1, 1.0], "beta": [0.1, 1.0]}}
        spec = ExperimentSpec(problems=[SYNTH], settings=(1e-4, 1e-2), seeds=2, budget=20,
                              budget_ratio=3, grids=grids)
        runs = run_experiment(spec)
        assert len(runs) == 2 * 2 * 2
        for r in runs:
            if r.method == "sqp":
                assert r.oracle_calls <= 20
            else:
                assert r.oracle_calls == 4 * 3 * 20

    def test_csv_deterministic_apart_from_wall_time(self, tmp_path):
        spec = ExperimentSpec(problems=[SYNTH], methods=("sqp",), settings=(1e-2,), seeds=3, budget=30)
        a = render(run_experiment(spec), "csv").splitlines()
        b = render(run_experiment(spec), "csv").splitlines()
        assert [r.rsplit(",", 1)[0] for r in a] == [r.rsplit(",", 1)[0] for r in b]

    def test_seed_streams_differ(self):
        spec = ExperimentSpec(problems=[SYNTH], methods=("sqp",), settings=(1e-1,), seeds=3, budget=30)
        stats = {r.stat_err for r in run_experiment(spec)}
        assert len(stats) == 3

    def test_parallel_matches_serial(self):
        spec = ExperimentSpec(problems=[SYNTH], methods=("sqp",), settings=(1e-2,), seeds=2, budget=20)
        serial = [r.stat_err for r in run_experiment(spec)]
        par = [r.stat_err for r in run_experiment(ExperimentSpec(**{**vars(spec), "workers": 2}))]
        assert serial == par

    def test_median_stationarity_grows_with_noise(self):
        spec = ExperimentSpec(problems=[{**SYNTH, "n": 20, "m": 6}], methods=("sqp",), seeds=5, budget=300)
        runs = run_experiment(spec)
        medians = [np.median([r.stat_err for r in runs if r.setting == f"noise={lvl:g}"])
                   for lvl in spec.settings]
        assert all(b >= a for a, b in zip(medians, medians[1:]))

    def test_projected_gradient_skipped_when_not_affine(self):
        spec = ExperimentSpec(problems=[SYNTH], methods=("projected-gradient",), settings=(1e-2,),
                              seeds=1, budget=5)
        assert run_experiment(spec) == []

    def test_unknown_problem_kind(self):
        bad = {"type": "synthetic", "n": 12, "m": 4, "kind": "no-such-kind", "seed": 0}
        with pytest.raises(ValueError):
            harness.build_problem(bad)


class TestLogisticSpec:
    def test_norm_variant_excludes_projected_gradient(self):
        assert "projected-gradient" not in harness.logistic_spec(norm=True).methods
        assert "projected-gradient" in harness.logistic_spec(norm=False).methods

    def test_epoch_budget(self):
        spec = harness.logistic_spec(batches=(128,), seeds=1, epochs=2, methods=("sqp", "projected-gradient"))
        runs = run_experiment(spec)
        epoch = math.ceil(690 / 128)
        sqp = next(r for r in runs if r.method == "sqp")
        pg = next(r for r in runs if r.method == "projected-gradient")
        assert sqp.oracle_calls <= 2 * epoch
        assert pg.oracle_calls == 11 * 2 * epoch

import json

import pytest

from stochsqp import cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestUsage:
    def test_no_command(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == cli.EXIT_USAGE

    def test_bad_flag(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["solve", "--step-rule", "fastest"])
        assert exc.value.code == cli.EXIT_USAGE

    def test_bad_problem(self, capsys):
        code, _, err = run(capsys, "solve", "--problem", "qp:3")
        assert code == cli.EXIT_USAGE and "cannot parse" in err

    def test_mc_partial_triple(self, capsys):
        assert run(capsys, "mc-check", "--p", "0.5")[0] == cli.EXIT_USAGE

    def test_mc_precondition(self, capsys):
        assert run(capsys, "mc-check", "--p", "0.5", "--J", "5", "--s-max", "10")[0] == cli.EXIT_USAGE

    def test_projected_gradient_on_nonaffine(self, capsys):
        code, _, _ = run(capsys, "solve", "--problem", "logistic:australian:norm",
                         "--method", "projected-gradient", "--budget", "3")
        assert code == cli.EXIT_USAGE

    def test_unknown_config_key(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"eta": 0.5, "bogus": 1}))
        assert run(capsys, "solve", "--config", str(cfg), "--budget", "3")[0] == cli.EXIT_USAGE


class TestCommands:
    def test_solve_sqp(self, capsys):
        code, out, _ = run(capsys, "solve", "--problem", "synthetic:feasible:10:4:0", "--budget", "20",
                           "--noise", "1e-4", "--step-rule", "suff")
        assert code == cli.EXIT_OK and "best iterate" in out

    def test_solve_deterministic_with_yaml_config(self, capsys, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("eta: 0.5\nstep_rule: suff\nbeta_schedule:\n  kind: constant\n  beta: 1.0\n")
        code, out, _ = run(capsys, "solve", "--deterministic", "--budget", "50", "--config", str(cfg),
                           "--problem", "synthetic:feasible:10:4:1")
        assert code == cli.EXIT_OK

    def test_solve_subgradient_writes_json(self, capsys, tmp_path):
        code, _, _ = run(capsys, "solve", "--method", "subgradient", "--budget", "10",
                         "--out", str(tmp_path))
        assert code == cli.EXIT_OK
        assert json.loads((tmp_path / "solve.json").read_text())[0]["method"] == "subgradient"

    def test_solve_logistic(self, capsys):
        code, out, _ = run(capsys, "solve", "--problem", "logistic", "--batch", "64", "--budget", "10",
                           "--beta", "0.1")
        assert code == cli.EXIT_OK and "australian" in out

    def test_bench_synthetic(self, capsys, tmp_path):
        code, out, _ = run(capsys, "bench-synthetic", "--problems", "1", "--n", "10", "--m", "4",
                           "--noise", "1e-4,1e-2", "--seeds", "2", "--budget", "5", "--out", str(tmp_path))
        assert code == cli.EXIT_OK
        for name in ("runs.csv", "runs.json", "runs.md", "summary.md"):
            assert (tmp_path / name).exists()
        assert len((tmp_path / "runs.csv").read_text().splitlines()) == 1 + 2 * 2 * 2

    def test_bench_logistic(self, capsys):
        code, out, _ = run(capsys, "bench-logistic", "--norm", "--batch", "128", "--seeds", "1",
                           "--epochs", "1", "--record-true")
        assert code == cli.EXIT_OK and "final epoch clean" in out
        assert "projected-gradient" not in out

    def test_tune(self, capsys):
        code, out, _ = run(capsys, "tune", "--method", "projected-gradient", "--problem", "logistic",
                           "--batch", "128", "--budget", "3")
        assert code == cli.EXIT_OK and out.startswith("11 grid points")

    def test_mc_check_single(self, capsys):
        code, out, _ = run(capsys, "mc-check", "--p", "0.9", "--J", "21", "--s-max", "10",
                           "--trials", "10000")
        assert code == cli.EXIT_OK and "bound 0.16901" in out

    def test_gradcheck(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--problem", "synthetic", "--points", "3")
        assert code == cli.EXIT_OK and "ok" in out

    def test_gradcheck_failure_exit(self, capsys):
        assert run(capsys, "gradcheck", "--points", "2", "--rtol", "0")[0] == cli.EXIT_SOLVER


class TestIOErrors:
    def test_missing_dataset(self, capsys):
        assert run(capsys, "solve", "--problem", "logistic:/no/such/file", "--budget", "2")[0] == cli.EXIT_IO

    def test_malformed_dataset(self, capsys, tmp_path):
        bad = tmp_path / "bad.libsvm"
        bad.write_text("+1 1:0.5 2:oops\n")
        assert run(capsys, "gradcheck", "--problem", f"logistic:{bad}", "--points", "1")[0] == cli.EXIT_IO

    def test_unwritable_output(self, capsys, tmp_path):
        blocker = tmp_path / "f"
        blocker.write_text("")
        code, _, err = run(capsys, "solve", "--budget", "2", "--out", str(blocker / "x"))
        assert code == cli.EXIT_IO

    def test_missing_config(self, capsys, tmp_path):
        assert run(capsys, "solve", "--config", str(tmp_path / "none.json"))[0] == cli.EXIT_IO

import json

import numpy as np
import pytest

import run_oracle
import run_trials
import sweep_risk
from utils.benchmarks import gen_example1
from utils.experiment_utils import SUMMARY_FIELDS, SWEEP_FIELDS, TRIAL_FIELDS, read_run_csv
from utils.pomdp_format import load_pomdp

EXAMPLE = ["--bench", "example1", "--tau", "1", "--horizon", "3"]
SMALL_BUDGET = ["--budget-first", "100sims", "--budget-step", "20sims"]


def _run(module, argv, capsys):
    code = module.main(argv)
    return code, capsys.readouterr().out


class TestRunTrials:
    def test_zero_trials(self, capsys):
        code, out = _run(run_trials, EXAMPLE + ["--alpha", "0.5", "--trials", "0", "--quiet"], capsys)
        assert code == 0
        assert out == (
            ",".join(TRIAL_FIELDS) + "\n\n"
            + ",".join(SUMMARY_FIELDS) + "\n"
            + "0,0.0,0.0,0.0,0.0\n"
        )

    def test_output_is_reproducible(self, capsys):
        argv = EXAMPLE + SMALL_BUDGET + ["--alpha", "0.6667", "--trials", "4", "--quiet"]
        _, first = _run(run_trials, argv, capsys)
        _, second = _run(run_trials, argv, capsys)
        _, parallel = _run(run_trials, argv + ["--jobs", "2"], capsys)
        assert first == second == parallel

    def test_summary_matches_rows(self, capsys):
        code, out = _run(run_trials, EXAMPLE + SMALL_BUDGET + ["--alpha", "0.6667", "--trials", "6", "--quiet"], capsys)
        assert code == 0
        trials, summary = read_run_csv(out)
        assert list(trials.columns) == TRIAL_FIELDS
        assert summary["trials"] == 6
        assert trials["trial"].tolist() == list(range(6))
        assert (trials["seed"] == 42).all()
        assert summary["avg_payoff"] == pytest.approx(trials["payoff"].mean())
        assert summary["empirical_risk"] == pytest.approx(1.0 - trials["safe"].mean())
        assert summary["avg_stated_risk"] == pytest.approx(trials["stated_risk"].mean())
        assert (trials["wall_ms"] == "").all()

    def test_wall_time_column(self, capsys):
        _, out = _run(run_trials, EXAMPLE + SMALL_BUDGET + ["--alpha", "1", "--trials", "1", "--quiet", "--wall-time"], capsys)
        trials, _ = read_run_csv(out)
        assert float(trials["wall_ms"][0]) >= 0.0

    def test_missing_arguments(self):
        with pytest.raises(SystemExit) as info:
            run_trials.main(["--bench", "example1"])
        assert info.value.code == 2

    def test_alpha_range(self):
        with pytest.raises(SystemExit) as info:
            run_trials.main(EXAMPLE + ["--alpha", "1.5"])
        assert info.value.code == 2

    def test_bad_budget(self, capsys):
        code = run_trials.main(EXAMPLE + ["--alpha", "0.5", "--budget-first", "fast", "--quiet"])
        assert code == 2
        assert "budget" in capsys.readouterr().err

    def test_infeasible_everywhere(self, capsys):
        argv = ["--bench", "example1", "--tau", "1e6", "--horizon", "3", "--alpha", "0.5", "--trials", "2", "--quiet"]
        code, out = _run(run_trials, argv + SMALL_BUDGET, capsys)
        assert code == 1
        _, summary = read_run_csv(out)
        assert summary["infeasible_fraction"] == 1.0
        assert summary["empirical_risk"] == 1.0

    @pytest.mark.parametrize("engine", ["tree", "simplex"])
    def test_lp_engine(self, engine, capsys):
        code, out = _run(run_trials, EXAMPLE + SMALL_BUDGET + ["--alpha", "0.6", "--trials", "2", "--quiet",
                                                               "--lp-engine", engine], capsys)
        assert code == 0
        assert out.splitlines()[0] == ",".join(TRIAL_FIELDS)

    def test_unknown_lp_engine(self):
        with pytest.raises(SystemExit) as info:
            run_trials.main(EXAMPLE + ["--alpha", "0.6", "--lp-engine", "sparse"])
        assert info.value.code == 2

    def test_out_file_and_config(self, tmp_path, capsys):
        out = tmp_path / "run.csv"
        code = run_trials.main(EXAMPLE + SMALL_BUDGET + ["--alpha", "0.6667", "--trials", "2", "--quiet", "--out", str(out)])
        assert code == 0
        assert capsys.readouterr().out == ""
        _, summary = read_run_csv(out.read_text(encoding="utf-8"))
        config = json.loads((tmp_path / "run.csv.config.json").read_text(encoding="utf-8"))
        assert config["alpha"] == 0.6667
        assert config["bench"] == "example1"
        assert config["model_name"] == "example1"
        assert config["summary"]["trials"] == summary["trials"] == 2


class TestSweep:
    def test_rows(self, capsys):
        code, out = _run(sweep_risk, EXAMPLE + SMALL_BUDGET + ["--alphas", "1,0.5", "--trials", "2", "--quiet"], capsys)
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == ",".join(SWEEP_FIELDS)
        assert [line.split(",")[0] for line in lines[1:]] == ["1.0", "0.5"]
        assert all(line.split(",")[1] == "2" for line in lines[1:])

    def test_infeasible_everywhere(self, capsys):
        argv = ["--bench", "example1", "--tau", "1e6", "--horizon", "3", "--alphas", "0.5,0.2", "--trials", "1", "--quiet"]
        code, _ = _run(sweep_risk, argv + SMALL_BUDGET, capsys)
        assert code == 1

    def test_bad_alphas(self):
        with pytest.raises(SystemExit) as info:
            sweep_risk.main(EXAMPLE + ["--alphas", "0.5,2"])
        assert info.value.code == 2

    @pytest.mark.slow
    def test_payoff_drops_with_alpha(self, capsys):
        argv = EXAMPLE + ["--alphas", "1,0.5", "--trials", "40", "--quiet",
                          "--budget-first", "1000sims", "--budget-step", "200sims"]
        code, out = _run(sweep_risk, argv, capsys)
        assert code == 0
        rows = [line.split(",") for line in out.splitlines()[1:]]
        payoff = {row[0]: float(row[SWEEP_FIELDS.index("avg_payoff")]) for row in rows}
        assert payoff["1.0"] > payoff["0.5"]


class TestOracle:
    def test_report(self, capsys):
        code, out = _run(run_oracle, EXAMPLE + ["--alpha", "0.6666666666666666"], capsys)
        assert code == 0
        lines = dict(line.split(": ", 1) for line in out.splitlines())
        assert float(lines["rho"]) == pytest.approx(610.0)
        assert lines["min risk"] == "0.5"
        assert float(lines["best deterministic"]) == pytest.approx(-7.5)
        assert lines["verdict"] == "feasible"
        assert lines["model"].startswith("example1 (7 states")

    def test_infeasible(self, capsys):
        code, out = _run(run_oracle, EXAMPLE + ["--alpha", "0.4"], capsys)
        assert code == 1
        assert "rho: Infeasible" in out
        assert "best deterministic: Infeasible" in out
        assert "root distribution" not in out

    def test_skip_deterministic(self, capsys):
        _, out = _run(run_oracle, EXAMPLE + ["--alpha", "1", "--no-deterministic"], capsys)
        assert "best deterministic" not in out

    def test_size_guard(self, capsys):
        code = run_oracle.main(["--bench", "tiger", "--tau", "0", "--horizon", "8", "--alpha", "0.5", "--max-nodes", "10"])
        assert code == 2
        assert "history graph exceeds" in capsys.readouterr().err

    def test_export_and_reload(self, tmp_path, capsys):
        path = tmp_path / "example1.pomdp"
        code, exported = _run(run_oracle, EXAMPLE + ["--alpha", "0.5", "--export", str(path)], capsys)
        model = load_pomdp(path)
        reference = gen_example1().model
        assert np.array_equal(model.transition, reference.transition)
        assert np.array_equal(model.reward, reference.reward)

        argv = ["--model", str(path), "--tau", "1", "--horizon", "3", "--alpha", "0.5"]
        code_reloaded, reloaded = _run(run_oracle, argv, capsys)
        assert code_reloaded == code
        assert reloaded.splitlines()[1:] == exported.splitlines()[1:]

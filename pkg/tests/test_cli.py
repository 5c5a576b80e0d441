import json
import math

import pytest

from kaebench.cli import main
from kaebench.exceptions import MismatchedRuns
from kaebench.runner import compare_runs, read_csv, run_pipeline, write_csv


def write_config(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture(scope="module")
def value_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("value")
    cfg = write_config(base / "v.cfg", "preset = value_mse_table\neval.replications = 40\n"
                                       "eval.steps = 20\n")
    out = str(base / "out")
    assert main(["run", cfg, "--output-dir", out]) == 0
    return base, cfg, out


class TestRun:
    def test_missing_config(self, capsys):
        assert main(["run", "does-not-exist.cfg"]) == 1
        assert "does-not-exist.cfg" in capsys.readouterr().err

    def test_bad_config_line(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "b.cfg", "preset = oneshot\ntrain.steps = lots\n")
        assert main(["validate", cfg]) == 1
        assert "b.cfg:2:" in capsys.readouterr().err

    def test_validate_ok(self, tmp_path):
        assert main(["validate", write_config(tmp_path / "ok.cfg", "preset = oneshot\n")]) == 0

    def test_usage_error(self):
        assert main(["frobnicate"]) == 1

    def test_artifacts(self, value_run):
        _, _, out = value_run
        rows = read_csv(f"{out}/value_mse.csv")
        assert {r["algorithm"] for r in rows} == {"kae", "grpo", "rpp"}
        manifest = json.load(open(f"{out}/manifest.json"))
        assert {"config_hash", "seeds", "versions", "task_hash"} <= set(manifest)

    def test_byte_identical_rerun(self, value_run, tmp_path):
        _, cfg, out = value_run
        assert main(["run", cfg, "--output-dir", str(tmp_path / "again")]) == 0
        assert open(f"{out}/value_mse.csv", "rb").read() == \
            open(tmp_path / "again" / "value_mse.csv", "rb").read()

    def test_rerun_from_manifest_config(self, value_run, tmp_path):
        _, _, out = value_run
        assert main(["run", f"{out}/config.txt", "--output-dir", str(tmp_path / "re")]) == 0
        assert open(f"{out}/value_mse.csv", "rb").read() == \
            open(tmp_path / "re" / "value_mse.csv", "rb").read()

    def test_oneshot_curves(self, tmp_path):
        cfg = write_config(tmp_path / "o.cfg", "preset = oneshot\ntrain.steps = 15\nseeds = 0, 1\n")
        out = run_pipeline(cfg, output_dir=str(tmp_path / "o"))
        rows = read_csv(f"{out}/train_curve.csv")
        assert {r["algorithm"] for r in rows} == {"kae", "oracle", "grpo"}
        assert len(rows) == 3 * 2 * 16
        final = [r for r in rows if r["step"] == 15]
        assert all(math.isnan(r["mean_train_reward"]) and 0 <= r["exact_J"] <= 1 for r in final)

    def test_parallel_matches_serial(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path / "a.cfg", "preset = policy_singlestream\n"
                                               "train.steps = 10\nseeds = 0, 1\n")
        serial = run_pipeline(cfg, output_dir=str(tmp_path / "s"), jobs=1)
        monkeypatch.setenv("KAEBENCH_JOBS", "2")
        parallel = run_pipeline(cfg, output_dir=str(tmp_path / "p"))
        assert open(f"{serial}/train_curve.csv", "rb").read() == \
            open(f"{parallel}/train_curve.csv", "rb").read()

    def test_numerical_failure_exit_code(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "n.cfg", "algorithms = zero\nlr.kind = constant\n"
                                               "lr.eta = inf\ntrain.steps = 5\n"
                                               "task.kind = random\ntask.density = 1.0\n")
        assert main(["run", cfg, "--output-dir", str(tmp_path / "n")]) == 2
        assert "iteration" in capsys.readouterr().err


class TestCsv:
    def test_round_trip(self, tmp_path):
        rows = [(1, "kae", 0.1 + 0.2, float("nan")), (2, "grpo", 1e-300, 3.0)]
        write_csv(tmp_path / "x.csv", ("step", "algorithm", "mse", "se"), rows)
        back = read_csv(tmp_path / "x.csv")
        assert back[0]["mse"] == 0.1 + 0.2 and math.isnan(back[0]["se"])
        assert back[1] == {"step": 2, "algorithm": "grpo", "mse": 1e-300, "se": 3.0}
        assert open(tmp_path / "x.csv").read().endswith("\n")


class TestCompare:
    def test_self_reference_zero(self, value_run):
        rows = compare_runs([value_run[2]], "value_mse", "grpo")
        assert [r[-1] for r in rows if r[0] == "grpo"] == [0.0]

    def test_reduction_formula(self, value_run):
        out = value_run[2]
        mse = {r["algorithm"]: r["mse"] for r in read_csv(f"{out}/value_mse.csv")
               if r["prompt"] == "all"}
        rows = {r[0]: r for r in compare_runs([out], "value_mse", "grpo")}
        assert rows["kae"][-1] == pytest.approx((mse["grpo"] - mse["kae"]) / mse["grpo"])

    def test_empty(self):
        with pytest.raises(MismatchedRuns):
            compare_runs([], "grad_mse", "grpo")

    def test_mismatched_tasks(self, value_run, tmp_path):
        cfg = write_config(tmp_path / "m.cfg", "preset = value_mse_table\ntask.seed = 9\n"
                                               "eval.replications = 5\neval.steps = 20\n")
        other = run_pipeline(cfg, output_dir=str(tmp_path / "m"))
        with pytest.raises(MismatchedRuns):
            compare_runs([value_run[2], other], "value_mse", "grpo")

    def test_cli_output(self, value_run, tmp_path):
        dest = tmp_path / "table.csv"
        assert main(["compare", value_run[2], "--metric", "value_mse", "--reference", "grpo",
                     "--output", str(dest)]) == 0
        header = dest.read_text().splitlines()[0]
        assert header == "algorithm,step,value_mse,se,n,reduction_vs_grpo"

    def test_cli_empty_is_error(self):
        assert main(["compare", "--metric", "exact_J", "--reference", "kae"]) == 1

    def test_exact_j_uses_gap(self, tmp_path):
        cfg = write_config(tmp_path / "t.cfg", "algorithms = kae, grpo\ntrain.steps = 8\n"
                                               "seeds = 0, 1\n")
        out = run_pipeline(cfg, output_dir=str(tmp_path / "t"))
        rows = {(r[0], r[1]): r for r in compare_runs([out], "exact_J", "grpo", steps={8})}
        kae, grpo = rows[("kae", 8)], rows[("grpo", 8)]
        assert kae[-1] == pytest.approx(((1 - grpo[2]) - (1 - kae[2])) / (1 - grpo[2]))
        assert kae[4] == 2 and kae[3] > 0

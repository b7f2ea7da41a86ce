"""End-to-end command runs through main.main()."""

import csv
import dataclasses
import json

import pytest

import main
from core import metrics
from core.commands import cmd_gradcheck
from core.errors import CheckFailedError
from core.nn import backward_bp
from tests.conftest import write_settings


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("FEDALIGN_SEED", raising=False)
    monkeypatch.delenv("FEDALIGN_OUTPUT_DIR", raising=False)


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def _run(*argv):
    return main.main(["--quiet", *argv])


class TestTrain:
    def test_writes_artifacts(self, tmp_path, tiny_config):
        config = write_settings(tmp_path / "tiny.json", tiny_config)
        out = tmp_path / "out"
        assert _run("train", "--config", str(config), "--output-dir", str(out)) == 0
        assert {p.name for p in out.iterdir()} == {"rounds.jsonl", "metrics.csv", "model.json", "manifest.json"}
        lines = (out / "rounds.jsonl").read_text().splitlines()
        assert [json.loads(line)["round"] for line in lines] == [0, 1]
        assert "updates" in json.loads(lines[0])
        rows = _read_csv(out / "metrics.csv")
        assert [r["round"] for r in rows] == ["0", "1"]
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "ok"
        assert set(manifest["artifacts"]) == {"rounds", "metrics", "model"}

    def test_rerun_is_byte_identical(self, tmp_path, tiny_config):
        config = write_settings(tmp_path / "tiny.json", tiny_config)
        for name in ("a", "b"):
            assert _run("train", "--config", str(config), "--output-dir", str(tmp_path / name)) == 0
        for artifact in ("metrics.csv", "rounds.jsonl", "model.json"):
            assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()
        run_a = json.loads((tmp_path / "a" / "manifest.json").read_text())["run_id"]
        run_b = json.loads((tmp_path / "b" / "manifest.json").read_text())["run_id"]
        assert run_a == run_b

    def test_seed_flag_changes_run(self, tmp_path, tiny_config):
        config = write_settings(tmp_path / "tiny.json", tiny_config)
        _run("train", "--config", str(config), "--output-dir", str(tmp_path / "a"))
        _run("train", "--config", str(config), "--output-dir", str(tmp_path / "b"), "--seed", "1")
        assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_optional_artifacts(self, tmp_path, tiny_config):
        tiny_config["metrics"].update({"assumptions": True, "representation": True, "record_updates": False})
        config = write_settings(tmp_path / "tiny.json", tiny_config)
        out = tmp_path / "out"
        assert _run("train", "--config", str(config), "--output-dir", str(out)) == 0
        estimates = json.loads((out / "assumptions.json").read_text())
        assert set(estimates) == {"g_hat", "sigma_hat", "gamma_hat"}
        assert "updates" not in json.loads((out / "rounds.jsonl").read_text().splitlines()[0])
        assert _read_csv(out / "metrics.csv")[0]["separability"] != ""

    def test_invalid_config_writes_nothing(self, tmp_path, tiny_config, capsys):
        tiny_config["train"]["client_fraction"] = 0.0
        config = write_settings(tmp_path / "bad.json", tiny_config)
        out = tmp_path / "out"
        assert _run("train", "--config", str(config), "--output-dir", str(out)) == 2
        assert not out.exists()
        assert "train.client_fraction" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert _run("train", "--config", str(tmp_path / "nope.json")) == 2

    def test_trace_mode_bound_failure_exits_nonzero(self, tmp_path, tiny_config, monkeypatch):
        real_check = metrics.drift_bound_check

        def inflated(*args, **kwargs):
            return [dataclasses.replace(row, lhs=2.0 * row.rhs + 1.0) for row in real_check(*args, **kwargs)]

        monkeypatch.setattr(metrics, "drift_bound_check", inflated)
        tiny_config["dataset"]["test_fraction"] = 0.0
        tiny_config["model"]["activation"] = "tanh"
        tiny_config["partition"] = {"n_clients": 2, "beta": 5.0, "redraw_empty": True}
        tiny_config["train"].update({"batch_size": 2, "local_steps": 3})
        tiny_config["metrics"]["trace_mode"] = True
        config = write_settings(tmp_path / "trace.json", tiny_config)
        out = tmp_path / "out"
        assert _run("train", "--config", str(config), "--output-dir", str(out)) == 1
        rows = _read_csv(out / "bound_report.csv")
        assert rows and all(r["passed"] == "False" for r in rows)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "failed"
        assert manifest["checks"]["bound_rows_failed"] == len(rows)


class TestCompare:
    def test_paired_runs(self, tmp_path, tiny_config):
        tiny_config["compare"] = {"seeds": [0, 1], "ablations": ["norescale"]}
        config = write_settings(tmp_path / "pair.json", tiny_config)
        out = tmp_path / "out"
        assert _run("compare", "--config", str(config), "--output-dir", str(out)) == 0
        rows = _read_csv(out / "compare.csv")
        assert len(rows) == 2 * 2
        assert {"drift_bp", "drift_flfa", "reduction_flfa", "accuracy_diff_flfa_norescale"} <= set(rows[0])
        for row in rows:
            assert float(row["reduction_flfa"]) == pytest.approx(float(row["drift_bp"]) - float(row["drift_flfa"]))
        summary = json.loads((out / "compare_summary.json").read_text())
        assert summary["methods"] == ["flfa", "flfa_norescale"]
        assert set(summary["seeds"]) == {"0", "1"}
        assert summary["seeds"]["0"][0]["reduction_sign"] in (-1, 0, 1)
        assert (out / "rounds_bp_seed1.jsonl").exists()
        assert (out / "summary.md").read_text().startswith("# pair")

    def test_seed_flag_replaces_seed_list(self, tmp_path, tiny_config):
        tiny_config["compare"] = {"seeds": [0, 1, 2]}
        config = write_settings(tmp_path / "pair.json", tiny_config)
        out = tmp_path / "out"
        assert _run("compare", "--config", str(config), "--output-dir", str(out), "--seed", "5") == 0
        assert {r["seed"] for r in _read_csv(out / "compare.csv")} == {"5"}


class TestGradcheck:
    def test_passes(self, tmp_path, capsys):
        out = tmp_path / "grad"
        assert _run("gradcheck", "--cases", "5", "--output-dir", str(out)) == 0
        assert "Result: PASS" in capsys.readouterr().out
        assert json.loads((out / "gradcheck.json").read_text())["passed"] is True
        assert (out / "gradcheck.txt").exists()

    def test_corrupted_backward_fails_with_report(self, tmp_path, capsys):
        def broken(model, trace, dlogits):
            grads = backward_bp(model, trace, dlogits)
            grads.weights[-1] = -grads.weights[-1]
            return grads

        with pytest.raises(CheckFailedError):
            cmd_gradcheck(seed=0, cases=3, output_dir=str(tmp_path), backward_fn=broken)
        assert "Result: FAIL" in capsys.readouterr().out
        assert json.loads((tmp_path / "gradcheck.json").read_text())["passed"] is False
        assert json.loads((tmp_path / "manifest.json").read_text())["status"] == "failed"


class TestBoundcheck:
    def test_all_rows_hold(self, tmp_path, tiny_config):
        tiny_config["dataset"]["test_fraction"] = 0.0
        tiny_config["model"]["activation"] = "tanh"
        tiny_config["partition"] = {"n_clients": 2, "beta": 5.0, "redraw_empty": True}
        tiny_config["train"].update({"batch_size": 2, "local_steps": 3})
        config = write_settings(tmp_path / "bound.json", tiny_config)
        out = tmp_path / "out"
        assert _run("boundcheck", "--config", str(config), "--output-dir", str(out)) == 0
        summary = json.loads((out / "bound_summary.json").read_text())
        # 4 methods x 2 rounds x 3 steps x 2 layers
        assert summary["rows"] == 48
        assert summary["failed"] == 0
        assert summary["max_fa_weight_term"] == 0.0
        assert summary["rescale_samples"] == 2 * 2 * 3
        assert summary["rescale_failed"] == 0
        rows = _read_csv(out / "bound_report.csv")
        assert {r["method"] for r in rows} == {"bp", "flfa", "flfa_norescale", "flfa_random"}
        assert all(r["passed"] == "True" for r in rows)
        assert "Drift bound check" in (out / "summary.md").read_text()


class TestPartition:
    def test_dump(self, tmp_path, tiny_config):
        config = write_settings(tmp_path / "tiny.json", tiny_config)
        out = tmp_path / "out"
        assert _run("partition", "--config", str(config), "--output-dir", str(out)) == 0
        parts = json.loads((out / "partition.json").read_text())
        assert sorted(parts) == ["0", "1", "2"]
        indices = sorted(i for part in parts.values() for i in part)
        assert indices == list(range(36))
        rows = _read_csv(out / "histograms.csv")
        assert sum(int(r["samples"]) for r in rows) == 36
        assert {"class_0", "class_1", "class_2"} <= set(rows[0])


class TestMain:
    def test_list(self, capsys):
        assert main.main(["--list"]) == 0
        assert "quickstart" in capsys.readouterr().out

    def test_no_command(self):
        assert main.main([]) == 2

"""Atomic artifact writers and run identity."""

import json

import numpy as np
import pytest

from core.run_store import (JsonlWriter, RunManifest, canonical_json, compute_run_id, write_csv,
                            write_json)


class TestWriters:
    def test_csv_column_order_and_none(self, tmp_path):
        path = write_csv(tmp_path / "m.csv", [{"b": 1, "a": None}, {"b": 2, "a": 0.5}], ["a", "b"])
        assert path.read_text() == "a,b\n,1\n0.5,2\n"
        assert not (tmp_path / "m.csv.tmp").exists()

    def test_jsonl(self, tmp_path):
        path = tmp_path / "r.jsonl"
        with JsonlWriter(path) as writer:
            writer.write({"round": 0, "x": np.float64(1.5)})
            writer.write({"round": 1})
        assert writer.count == 2
        lines = path.read_text().splitlines()
        assert [json.loads(line)["round"] for line in lines] == [0, 1]
        assert lines[0] == '{"round":0,"x":1.5}'

    def test_jsonl_discarded_on_error(self, tmp_path):
        path = tmp_path / "r.jsonl"
        with pytest.raises(RuntimeError):
            with JsonlWriter(path) as writer:
                writer.write({"round": 0})
                raise RuntimeError("boom")
        assert not path.exists()
        assert not (tmp_path / "r.jsonl.tmp").exists()

    def test_json_handles_numpy(self, tmp_path):
        path = write_json(tmp_path / "s.json", {"v": np.arange(3), "n": np.int64(4)})
        assert json.loads(path.read_text()) == {"n": 4, "v": [0, 1, 2]}

    def test_canonical_json_sorts_keys(self):
        assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'


class TestRunIdentity:
    def test_run_id_ignores_output_location(self):
        base = {"seed": 1, "train": {"lr": 0.1}, "output_dir": "a", "workers": 2}
        moved = {**base, "output_dir": "b", "workers": 8}
        assert compute_run_id(base, 1) == compute_run_id(moved, 1)
        assert len(compute_run_id(base, 1)) == 12

    def test_run_id_depends_on_config_and_seed(self):
        cfg = {"train": {"lr": 0.1}}
        assert compute_run_id(cfg, 1) != compute_run_id(cfg, 2)
        assert compute_run_id(cfg, 1) != compute_run_id({"train": {"lr": 0.2}}, 1)

    def test_manifest(self, tmp_path):
        artifact = write_csv(tmp_path / "metrics.csv", [{"round": 0}])
        manifest = RunManifest.start("train", {"seed": 0}, 0)
        manifest.add_artifact("metrics.csv", artifact)
        manifest.finish()
        data = json.loads(manifest.save(tmp_path / "manifest.json").read_text())
        assert data["status"] == "ok"
        assert data["command"] == "train"
        assert data["artifacts"]["metrics.csv"]["bytes"] == artifact.stat().st_size
        assert len(data["artifacts"]["metrics.csv"]["sha256"]) == 64

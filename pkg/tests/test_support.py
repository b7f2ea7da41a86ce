"""Seed streams, run logging and recovery helpers."""

import numpy as np
import pytest

from core.error_recovery import ArtifactGuard, RecoveryContext
from core.performance_logger import LogLevel, PerformanceLogger
from core.seeding import stream


class TestStreams:
    def test_same_keys_same_draws(self):
        np.testing.assert_array_equal(stream(3, "client", 1, 2).random(4), stream(3, "client", 1, 2).random(4))

    def test_names_and_ids_separate_streams(self):
        base = stream(3, "client", 1, 2).random(4)
        assert not np.array_equal(base, stream(3, "client", 2, 1).random(4))
        assert not np.array_equal(base, stream(3, "select", 1, 2).random(4))
        assert not np.array_equal(base, stream(4, "client", 1, 2).random(4))

    def test_invalid_keys(self):
        with pytest.raises(ValueError):
            stream(0, -1)
        with pytest.raises(TypeError):
            stream(0, True)


class TestPerformanceLogger:
    def test_levels(self, monkeypatch):
        monkeypatch.delenv("FEDALIGN_LOG_LEVEL", raising=False)
        log = PerformanceLogger(quiet=True)
        assert log.level is LogLevel.WARNING
        log.set_verbose_mode(True)
        assert log.level is LogLevel.DEBUG
        log.set_log_level("error")
        assert log.level is LogLevel.ERROR

    def test_env_level(self, monkeypatch):
        monkeypatch.setenv("FEDALIGN_LOG_LEVEL", "DEBUG")
        assert PerformanceLogger().level is LogLevel.DEBUG

    def test_stats_and_timings(self):
        log = PerformanceLogger(quiet=True)
        log.update_stats("federation", rounds_completed=1, samples_processed=10, parallel_workers=4)
        log.update_stats("federation", rounds_completed=1, samples_processed=5, parallel_workers=2)
        stats = log.get_stats_summary()["federation"]
        assert (stats.rounds_completed, stats.samples_processed, stats.parallel_workers) == (2, 15, 2)
        with log.time_operation("aggregation"):
            pass
        assert log.get_timing_summary()["aggregation"]["count"] == 1
        log.reset()
        assert log.get_stats_summary() == {}


class TestRecoveryContext:
    def test_fallback_on_error(self):
        with RecoveryContext("metric", "Test", fallback_value=-1) as ctx:
            ctx.result = 1
            raise ZeroDivisionError("x")
        assert ctx.result == -1
        assert ctx.errors[0]["error_type"] == "ZeroDivisionError"

    def test_critical_reraises(self):
        with pytest.raises(ValueError):
            with RecoveryContext("metric", "Test", critical=True):
                raise ValueError("bad")


class TestArtifactGuard:
    def test_removes_partial_outputs(self, tmp_path):
        out = tmp_path / "run"
        with pytest.raises(RuntimeError):
            with ArtifactGuard(out) as guard:
                guard.track("a.csv").write_text("x")
                guard.track("b.jsonl.tmp").write_text("y")
                raise RuntimeError("crash")
        assert not out.exists()

    def test_keeps_outputs_on_success(self, tmp_path):
        with ArtifactGuard(tmp_path) as guard:
            guard.track("a.csv").write_text("x")
        assert (tmp_path / "a.csv").read_text() == "x"

#!/usr/bin/env python3
"""
Performance Logging Module
Structured console logging, timing measurements and run statistics for
federated training runs.
"""

import os
import threading
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional, Union

import psutil


class LogLevel(Enum):
    """Log level enumeration for filtering messages"""
    DEBUG = 10
    INFO = 20
    WARNING = 30
    ERROR = 40

    @classmethod
    def from_string(cls, level_str: str) -> 'LogLevel':
        level_map = {
            'DEBUG': cls.DEBUG,
            'INFO': cls.INFO,
            'WARNING': cls.WARNING,
            'WARN': cls.WARNING,
            'ERROR': cls.ERROR
        }
        return level_map.get(level_str.upper(), cls.INFO)


@dataclass
class TimingMetric:
    """A single timed operation"""
    name: str
    start_time: float
    end_time: Optional[float] = None
    duration: Optional[float] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def finish(self):
        if self.end_time is None:
            self.end_time = time.perf_counter()
            self.duration = self.end_time - self.start_time


@dataclass
class RunStats:
    """Counters accumulated per category (e.g. 'federation', 'boundcheck')"""
    rounds_completed: int = 0
    client_updates: int = 0
    local_steps: int = 0
    samples_processed: int = 0
    warnings: int = 0
    parallel_workers: int = 0

    ACCUMULATED = ('rounds_completed', 'client_updates', 'local_steps',
                   'samples_processed', 'warnings')

    def throughput(self, seconds: float) -> float:
        """Samples per second"""
        return self.samples_processed / seconds if seconds > 0 else 0.0


class PerformanceLogger:
    """Thread-safe run logger with configurable verbosity"""

    def __init__(self, log_level: LogLevel = LogLevel.INFO, quiet: bool = False, verbose: bool = False):
        self._timings: Dict[str, List[TimingMetric]] = defaultdict(list)
        self._stats: Dict[str, RunStats] = defaultdict(RunStats)
        self._lock = threading.RLock()
        self._run_start_time = time.perf_counter()
        self._active_timers: Dict[str, TimingMetric] = {}
        self._peak_memory_mb = 0.0

        if quiet:
            self._log_level = LogLevel.WARNING
        elif verbose:
            self._log_level = LogLevel.DEBUG
        else:
            self._log_level = log_level

        env_level = os.environ.get('FEDALIGN_LOG_LEVEL')
        if env_level:
            self._log_level = LogLevel.from_string(env_level)

    @property
    def level(self) -> LogLevel:
        return self._log_level

    def set_log_level(self, level: Union[LogLevel, str]):
        if isinstance(level, str):
            self._log_level = LogLevel.from_string(level)
        else:
            self._log_level = level

    def set_quiet_mode(self, quiet: bool):
        """WARNING and ERROR only"""
        self._log_level = LogLevel.WARNING if quiet else LogLevel.INFO

    def set_verbose_mode(self, verbose: bool):
        self._log_level = LogLevel.DEBUG if verbose else LogLevel.INFO

    def reset(self):
        """Forget timings and stats; used between CLI commands and in tests."""
        with self._lock:
            self._timings.clear()
            self._stats.clear()
            self._active_timers.clear()
            self._run_start_time = time.perf_counter()
            self._peak_memory_mb = 0.0

    def start_timing(self, operation: str, metadata: Optional[Dict[str, Any]] = None) -> str:
        """
        Start timing an operation

        Args:
            operation: Name of the operation
            metadata: Optional metadata about the operation

        Returns:
            Timer ID for stopping the timer
        """
        with self._lock:
            timer_id = f"{operation}_{time.perf_counter_ns()}_{threading.current_thread().ident}"
            self._active_timers[timer_id] = TimingMetric(
                name=operation,
                start_time=time.perf_counter(),
                metadata=metadata or {}
            )
            return timer_id

    def stop_timing(self, timer_id: str) -> Optional[float]:
        """Stop a timer; returns its duration in seconds or None if unknown."""
        with self._lock:
            if timer_id in self._active_timers:
                timing = self._active_timers.pop(timer_id)
                timing.finish()
                self._timings[timing.name].append(timing)
                return timing.duration
            return None

    @contextmanager
    def time_operation(self, operation: str, metadata: Optional[Dict[str, Any]] = None):
        timer_id = self.start_timing(operation, metadata)
        try:
            yield
        finally:
            self.stop_timing(timer_id)

    def update_stats(self, category: str, **kwargs):
        """
        Update run statistics for a category

        Args:
            category: Category name (e.g. 'federation', 'compare')
            **kwargs: Counter values; counters in RunStats.ACCUMULATED are added,
                the rest are set
        """
        with self._lock:
            stats = self._stats[category]
            for key, value in kwargs.items():
                if not hasattr(stats, key):
                    continue
                if key in RunStats.ACCUMULATED:
                    setattr(stats, key, getattr(stats, key) + value)
                else:
                    setattr(stats, key, value)
            self._peak_memory_mb = max(self._peak_memory_mb, self.get_memory_usage())

    def log_structured(self, level: str, component: str, message: str,
                       emoji: str = "", duration: Optional[float] = None,
                       stats: Optional[Dict[str, Any]] = None):
        """
        Log a structured message

        Args:
            level: Log level (INFO, DEBUG, WARN, ERROR)
            component: Component name (e.g. 'Federation', 'Metrics')
            message: Human-readable message
            emoji: Emoji prefix
            duration: Optional duration in seconds
            stats: Optional key/value statistics appended to the line
        """
        message_level = LogLevel.from_string(level)
        if message_level.value < self._log_level.value:
            return

        timestamp = datetime.now().strftime("%H:%M:%S.%f")[:-3]
        display_parts = []

        if self._log_level == LogLevel.DEBUG or message_level in (LogLevel.ERROR, LogLevel.WARNING):
            display_parts.append(f"[{timestamp}]")
        if self._log_level == LogLevel.DEBUG:
            display_parts.append(f"[{level:5s}]")
            if component:
                display_parts.append(f"[{component}]")
        if emoji:
            display_parts.append(emoji)
        display_parts.append(message)

        if duration is not None:
            if duration < 1.0:
                display_parts.append(f"({duration*1000:.1f}ms)")
            else:
                display_parts.append(f"({duration:.2f}s)")

        if stats:
            stat_parts = []
            for key, value in stats.items():
                if isinstance(value, float):
                    stat_parts.append(f"{key.replace('_', ' ')}: {value:.4g}")
                else:
                    stat_parts.append(f"{key.replace('_', ' ')}: {value}")
            display_parts.append(f"[{', '.join(stat_parts)}]")

        with self._lock:
            print(" ".join(display_parts), flush=True)

    def log_info(self, component: str, message: str, emoji: str = "ℹ️", **kwargs):
        self.log_structured("INFO", component, message, emoji, **kwargs)

    def log_debug(self, component: str, message: str, emoji: str = "🔍", **kwargs):
        self.log_structured("DEBUG", component, message, emoji, **kwargs)

    def log_warn(self, component: str, message: str, emoji: str = "⚠️", **kwargs):
        with self._lock:
            self._stats['warnings'].warnings += 1
        self.log_structured("WARN", component, message, emoji, **kwargs)

    def log_error(self, component: str, message: str, emoji: str = "❌", **kwargs):
        self.log_structured("ERROR", component, message, emoji, **kwargs)

    def log_success(self, component: str, message: str, emoji: str = "✅", **kwargs):
        self.log_structured("INFO", component, message, emoji, **kwargs)

    def log_phase_start(self, component: str, phase: str, emoji: str = "🚀"):
        self.log_info(component, f"Starting {phase}...", emoji)

    def log_phase_complete(self, component: str, phase: str, duration: float, emoji: str = "✅", **stats):
        self.log_success(component, f"{phase} completed", emoji, duration=duration, stats=stats or None)

    def get_memory_usage(self) -> float:
        """Current resident memory in MB"""
        try:
            return psutil.Process().memory_info().rss / 1024 / 1024
        except (psutil.NoSuchProcess, psutil.AccessDenied):
            return 0.0

    def get_timing_summary(self) -> Dict[str, Dict[str, float]]:
        with self._lock:
            summary = {}
            for operation, timings in self._timings.items():
                durations = [t.duration for t in timings if t.duration is not None]
                if not durations:
                    continue
                summary[operation] = {
                    'count': len(durations),
                    'total_time': sum(durations),
                    'avg_time': sum(durations) / len(durations),
                    'min_time': min(durations),
                    'max_time': max(durations)
                }
            return summary

    def get_stats_summary(self) -> Dict[str, RunStats]:
        with self._lock:
            return dict(self._stats)

    def print_run_summary(self):
        """Print timing breakdown, counters, throughput and peak memory"""
        with self._lock:
            total_time = time.perf_counter() - self._run_start_time
            if self._log_level.value > LogLevel.INFO.value:
                return

            print(f"\n{'='*60}")
            print("🎯 RUN PERFORMANCE SUMMARY")
            print(f"{'='*60}")

            if total_time < 60:
                print(f"⏱️  Total Time: {total_time:.2f}s")
            else:
                print(f"⏱️  Total Time: {int(total_time // 60)}m {total_time % 60:.1f}s")

            memory = max(self._peak_memory_mb, self.get_memory_usage())
            if memory > 0:
                print(f"💾 Peak Memory Usage: {memory:.1f}MB")

            timing_summary = self.get_timing_summary()
            if timing_summary:
                print("\n📊 TIME BREAKDOWN BY OPERATION:")
                for operation, data in sorted(timing_summary.items(),
                                              key=lambda x: x[1]['total_time'], reverse=True):
                    share = (data['total_time'] / total_time) * 100 if total_time > 0 else 0.0
                    time_str = (f"{data['total_time']*1000:.1f}ms" if data['total_time'] < 1.0
                                else f"{data['total_time']:.2f}s")
                    avg_str = (f"{data['avg_time']*1000:.1f}ms avg" if data['avg_time'] < 1.0
                               else f"{data['avg_time']:.2f}s avg")
                    print(f"  • {operation}: {time_str} ({share:.1f}%) - {data['count']} ops, {avg_str}")

            stats_summary = self.get_stats_summary()
            rows = {k: v for k, v in stats_summary.items() if k != 'warnings'}
            if rows:
                print("\n📈 RUN STATISTICS:")
                for category, stats in rows.items():
                    print(f"  • {category}:")
                    print(f"    - Rounds: {stats.rounds_completed}, client updates: {stats.client_updates}, "
                          f"local steps: {stats.local_steps}")
                    if stats.samples_processed:
                        print(f"    - Samples: {stats.samples_processed} "
                              f"({stats.throughput(total_time):.0f}/s)")
                    if stats.parallel_workers > 0:
                        print(f"    - Workers: {stats.parallel_workers} parallel threads")

            warnings = stats_summary.get('warnings')
            if warnings and warnings.warnings:
                print(f"\n⚠️  Warnings logged: {warnings.warnings}")
            print(f"{'='*60}\n")


# Global logger instance
logger = PerformanceLogger()


def time_operation(operation: str, metadata: Optional[Dict[str, Any]] = None):
    """Context manager for timing operations"""
    return logger.time_operation(operation, metadata)


def update_stats(category: str, **kwargs):
    logger.update_stats(category, **kwargs)


def log_info(component: str, message: str, emoji: str = "ℹ️", **kwargs):
    logger.log_info(component, message, emoji, **kwargs)


def log_debug(component: str, message: str, emoji: str = "🔍", **kwargs):
    logger.log_debug(component, message, emoji, **kwargs)


def log_warn(component: str, message: str, emoji: str = "⚠️", **kwargs):
    logger.log_warn(component, message, emoji, **kwargs)


def log_error(component: str, message: str, emoji: str = "❌", **kwargs):
    logger.log_error(component, message, emoji, **kwargs)


def log_success(component: str, message: str, emoji: str = "✅", **kwargs):
    logger.log_success(component, message, emoji, **kwargs)


def log_phase_start(component: str, phase: str, emoji: str = "🚀"):
    logger.log_phase_start(component, phase, emoji)


def log_phase_complete(component: str, phase: str, duration: float, emoji: str = "✅", **stats):
    logger.log_phase_complete(component, phase, duration, emoji, **stats)


def print_run_summary():
    logger.print_run_summary()

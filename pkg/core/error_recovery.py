#!/usr/bin/env python3
"""
Error Recovery Module

Standardized handling for optional steps that may fail without invalidating a
run (degenerate metrics, report rendering) and cleanup of partial artifacts
when a command aborts.
"""

import os
import traceback
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

from .performance_logger import log_debug, log_error, log_info, log_warn


class RecoveryContext:
    """Context manager that logs a failure and substitutes a fallback value.

    The body stores its outcome in ``ctx.result``; on an exception the result
    is reset to ``fallback_value`` and the exception is suppressed unless
    ``critical`` is set.
    """

    def __init__(self, operation_name: str, component: str, fallback_value: Any = None,
                 recovery_strategy: Optional[Callable[[], None]] = None, critical: bool = False):
        self.operation_name = operation_name
        self.component = component
        self.fallback_value = fallback_value
        self.recovery_strategy = recovery_strategy
        self.critical = critical
        self.result: Any = fallback_value
        self.errors: List[Dict[str, str]] = []

    def __enter__(self) -> 'RecoveryContext':
        return self

    def __exit__(self, exc_type, exc_value, exc_traceback) -> bool:
        if exc_type is None:
            return True
        if issubclass(exc_type, KeyboardInterrupt):
            return False

        error_msg = f"{self.operation_name} failed: {exc_type.__name__}: {exc_value}"
        if self.critical:
            log_error(self.component, error_msg)
        else:
            log_warn(self.component, error_msg)

        self.errors.append({
            'operation': self.operation_name,
            'error_type': exc_type.__name__,
            'error_msg': str(exc_value),
            'traceback': ''.join(traceback.format_exception(exc_type, exc_value, exc_traceback)),
        })
        get_recovery_handler().record(recovered=not self.critical)
        self.result = self.fallback_value

        if self.recovery_strategy:
            try:
                log_info(self.component, f"Attempting recovery for {self.operation_name}", "🔧")
                self.recovery_strategy()
            except Exception as recovery_error:
                log_error(self.component, f"Recovery failed: {recovery_error}")

        return not self.critical


class ArtifactGuard:
    """Tracks files written by a command and deletes them if the command fails.

    Usage::

        with ArtifactGuard(output_dir) as guard:
            write_json(guard.track("manifest.json"), ...)
    """

    def __init__(self, output_dir: Union[str, Path], component: str = "CLI"):
        self.output_dir = Path(output_dir)
        self.component = component
        self.paths: List[Path] = []
        self._created_dir = False

    def __enter__(self) -> 'ArtifactGuard':
        if not self.output_dir.exists():
            self.output_dir.mkdir(parents=True)
            self._created_dir = True
        return self

    def track(self, name: Union[str, Path]) -> Path:
        path = Path(name)
        if not path.is_absolute():
            path = self.output_dir / path
        if path not in self.paths:
            self.paths.append(path)
        return path

    def __exit__(self, exc_type, exc_value, exc_traceback) -> bool:
        if exc_type is None:
            return False
        removed = 0
        for path in reversed(self.paths):
            for candidate in (path, path.with_name(path.name + ".tmp")):
                try:
                    if candidate.exists():
                        candidate.unlink()
                        removed += 1
                except OSError as e:
                    log_warn(self.component, f"Could not remove partial output {candidate}: {e}")
        if self._created_dir:
            try:
                os.rmdir(self.output_dir)
            except OSError:
                pass
        if removed:
            log_info(self.component, f"Removed {removed} partial output file(s)", "🧹")
        return False


class ErrorRecovery:
    """Process-wide recovery counters."""

    def __init__(self):
        self.recovery_stats = {
            'total_errors': 0,
            'recovered': 0,
            'failed': 0,
        }

    def record(self, recovered: bool) -> None:
        self.recovery_stats['total_errors'] += 1
        self.recovery_stats['recovered' if recovered else 'failed'] += 1

    def safe_render(self, render: Callable[[], str], fallback: str, component: str = "Reports") -> str:
        """Run a rendering function, returning ``fallback`` if it raises."""
        try:
            return render()
        except Exception as e:
            log_error(component, f"Report render failed: {type(e).__name__}: {e}")
            log_debug(component, "Using plain-text fallback report")
            self.record(recovered=True)
            return fallback

    def reset(self) -> None:
        for key in self.recovery_stats:
            self.recovery_stats[key] = 0


_recovery_handler: Optional[ErrorRecovery] = None


def get_recovery_handler() -> ErrorRecovery:
    global _recovery_handler
    if _recovery_handler is None:
        _recovery_handler = ErrorRecovery()
    return _recovery_handler

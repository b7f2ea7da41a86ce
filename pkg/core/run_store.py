#!/usr/bin/env python3
"""
Run artifact persistence.

All payload files are written to a temporary sibling and moved into place with
``os.replace`` so a reader never sees a half-written file. Payloads carry no
timestamps; those live only in manifest.json.
"""

import csv
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .performance_logger import log_debug

PathLike = Union[str, Path]


def _json_default(value: Any) -> Any:
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), default=_json_default)


def _tmp_path(path: Path) -> Path:
    return path.with_name(path.name + ".tmp")


def atomic_write_text(path: PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = _tmp_path(path)
    with open(tmp, 'w', encoding='utf-8', newline='') as f:
        f.write(text)
    os.replace(tmp, path)
    return path


def write_json(path: PathLike, data: Any) -> Path:
    return atomic_write_text(path, json.dumps(data, sort_keys=True, indent=2, default=_json_default) + "\n")


class JsonlWriter:
    """Streams one JSON object per line; the file appears only on a clean close."""

    def __init__(self, path: PathLike):
        self.path = Path(path)
        self.count = 0
        self._handle = None

    def __enter__(self) -> 'JsonlWriter':
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = open(_tmp_path(self.path), 'w', encoding='utf-8', newline='')
        return self

    def write(self, row: Dict[str, Any]) -> None:
        self._handle.write(canonical_json(row) + "\n")
        self.count += 1

    def __exit__(self, exc_type, exc_value, exc_traceback) -> bool:
        self._handle.close()
        tmp = _tmp_path(self.path)
        if exc_type is None:
            os.replace(tmp, self.path)
        elif tmp.exists():
            tmp.unlink()
        return False


def write_csv(path: PathLike, rows: Sequence[Dict[str, Any]], columns: Optional[List[str]] = None) -> Path:
    """CSV with a fixed column order (first row's keys by default); None is written empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    tmp = _tmp_path(path)
    with open(tmp, 'w', encoding='utf-8', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n", extrasaction="raise")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})
    os.replace(tmp, path)
    return path


def file_sha256(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def compute_run_id(config: Dict[str, Any], seed: int) -> str:
    """First 12 hex chars of SHA-256 over the canonical config (minus output location) and seed."""
    payload = {k: v for k, v in config.items() if k not in ("output_dir", "workers")}
    return hashlib.sha256((canonical_json(payload) + f"|{seed}").encode('utf-8')).hexdigest()[:12]


@dataclass
class RunManifest:
    command: str
    run_id: str
    seed: int
    config: Dict[str, Any]
    started_at: str = ""
    finished_at: str = ""
    duration_seconds: float = 0.0
    status: str = "running"
    artifacts: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    checks: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def start(cls, command: str, config: Dict[str, Any], seed: int) -> 'RunManifest':
        manifest = cls(command=command, run_id=compute_run_id(config, seed), seed=seed, config=config)
        manifest.started_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
        manifest._t0 = time.perf_counter()
        return manifest

    def add_artifact(self, name: str, path: PathLike) -> None:
        path = Path(path)
        self.artifacts[name] = {"path": str(path), "sha256": file_sha256(path),
                                "bytes": path.stat().st_size}

    def finish(self, status: str = "ok") -> None:
        self.status = status
        self.finished_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self.duration_seconds = round(time.perf_counter() - getattr(self, "_t0", time.perf_counter()), 3)

    def save(self, path: PathLike) -> Path:
        written = write_json(path, asdict(self))
        log_debug("RunStore", f"Manifest {self.run_id} written to {written}")
        return written

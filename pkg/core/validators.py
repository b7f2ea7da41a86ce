#!/usr/bin/env python3
"""
Configuration validators for FedAlign.

A run configuration is a nested mapping (from a settings.py module or a JSON
file). Validation collects every problem before any work starts; each error
names the dotted path of the offending field.
"""

from pathlib import Path
from typing import Any, Dict, List, Tuple

from .data import PartitionSpec
from .federation import Algorithm, BackwardMode, LayerStrategy, TrainConfig
from .feedback import FeedbackMode
from .nn import Activation

NoneType = type(None)

# section -> key -> (accepted types, default)
SCHEMA: Dict[str, Any] = {
    "seed": ((int,), 0),
    "output_dir": ((str, NoneType), None),
    "workers": ((int, NoneType), None),
    "model": {
        "hidden": ((list,), [32]),
        "activation": ((str,), "relu"),
        "init": ((str,), "glorot"),
    },
    "dataset": {
        "kind": ((str,), "blobs"),
        "classes": ((int,), 5),
        "dim": ((int,), 20),
        "per_class": ((int,), 100),
        "spread": ((float,), 1.0),
        "path": ((str, NoneType), None),
        "test_fraction": ((float,), 0.2),
    },
    "partition": {
        "n_clients": ((int,), 10),
        "beta": ((float,), 0.3),
        "redraw_empty": ((bool,), False),
        "max_redraws": ((int,), 10),
    },
    "train": {
        "rounds": ((int,), 10),
        "local_epochs": ((int,), 1),
        "lr": ((float,), 0.05),
        "momentum": ((float,), 0.0),
        "weight_decay": ((float,), 0.0),
        "lr_decay": ((float,), 1.0),
        "batch_size": ((int,), 32),
        "client_fraction": ((float,), 1.0),
        "backward_mode": ((str,), "bp"),
        "feedback_mode": ((str,), "global_weights"),
        "algorithm": ((str,), "fedavg"),
        "prox_mu": ((float,), 0.0),
        "server_momentum": ((float,), 0.0),
        "layer_strategy": ((str,), "lowest"),
        "fixed_layer": ((int, NoneType), None),
        "fa_layer_count": ((int,), 1),
        "start_layers": ((list,), []),
        "local_steps": ((int, NoneType), None),
    },
    "metrics": {
        "trace_mode": ((bool,), False),
        "representation": ((bool,), False),
        "assumptions": ((bool,), False),
        "track_gradient_gap": ((bool,), True),
        "record_updates": ((bool,), True),
        "assumption_samples": ((int,), 8),
    },
    "compare": {
        "seeds": ((list,), [0]),
        "ablations": ((list,), []),
    },
}

ABLATIONS = {
    "norescale": FeedbackMode.GLOBAL_NO_RESCALE,
    "random": FeedbackMode.RANDOM_FIXED,
}
DATASET_KINDS = ("blobs", "csv")
INITIALIZERS = ("glorot",)


def _type_ok(value: Any, types: Tuple[type, ...]) -> bool:
    if isinstance(value, bool):
        return bool in types
    if isinstance(value, int) and float in types:
        return True
    if isinstance(value, tuple) and list in types:
        return True
    return isinstance(value, types)


def _type_name(types: Tuple[type, ...]) -> str:
    return " or ".join("null" if t is NoneType else t.__name__ for t in types)


def merge_defaults(raw: Dict[str, Any]) -> Dict[str, Any]:
    """Schema defaults overlaid with ``raw`` (unknown keys are dropped)."""
    merged: Dict[str, Any] = {}
    for key, spec in SCHEMA.items():
        if isinstance(spec, dict):
            section = raw.get(key) if isinstance(raw.get(key), dict) else {}
            merged[key] = {k: section.get(k, default) for k, (_, default) in spec.items()}
        else:
            merged[key] = raw.get(key, spec[1])
    return merged


class ConfigValidator:
    """Validates run configurations; collects errors and warnings."""

    def __init__(self):
        self.errors: List[str] = []
        self.warnings: List[str] = []

    def validate_run_config(self, raw: Dict[str, Any]) -> Tuple[bool, List[str], List[str]]:
        """Validate a raw nested configuration mapping.

        Args:
            raw: Mapping with the top-level keys of SCHEMA (all optional)

        Returns:
            Tuple of (is_valid, errors, warnings)
        """
        self.errors = []
        self.warnings = []

        if not isinstance(raw, dict):
            self.errors.append(f"configuration must be a mapping, got {type(raw).__name__}")
            return False, self.errors, self.warnings

        self._validate_structure(raw)
        if self.errors:
            return False, self.errors, self.warnings

        cfg = merge_defaults(raw)
        self._validate_top_level(cfg)
        self._validate_model(cfg["model"])
        self._validate_dataset(cfg["dataset"])
        self._validate_partition(cfg["partition"], cfg["seed"])
        self._validate_train(cfg)
        self._validate_metrics(cfg)
        self._validate_compare(cfg["compare"])
        return len(self.errors) == 0, self.errors, self.warnings

    def _validate_structure(self, raw: Dict[str, Any]) -> None:
        for key, value in raw.items():
            if key not in SCHEMA:
                self.errors.append(f"{key}: unknown key")
                continue
            spec = SCHEMA[key]
            if isinstance(spec, dict):
                if not isinstance(value, dict):
                    self.errors.append(f"{key}: must be a mapping, got {type(value).__name__}")
                    continue
                for sub_key, sub_value in value.items():
                    if sub_key not in spec:
                        self.errors.append(f"{key}.{sub_key}: unknown key")
                    elif not _type_ok(sub_value, spec[sub_key][0]):
                        self.errors.append(f"{key}.{sub_key}: expected {_type_name(spec[sub_key][0])}, "
                                           f"got {type(sub_value).__name__}")
            elif not _type_ok(value, spec[0]):
                self.errors.append(f"{key}: expected {_type_name(spec[0])}, got {type(value).__name__}")

    def _validate_top_level(self, cfg: Dict[str, Any]) -> None:
        if cfg["seed"] < 0:
            self.errors.append(f"seed: must be >= 0, got {cfg['seed']}")
        if cfg["workers"] is not None and cfg["workers"] < 1:
            self.errors.append(f"workers: must be >= 1, got {cfg['workers']}")

    def _validate_model(self, model: Dict[str, Any]) -> None:
        hidden = model["hidden"]
        if any(isinstance(h, bool) or not isinstance(h, int) or h < 1 for h in hidden):
            self.errors.append(f"model.hidden: must be a list of positive integers, got {list(hidden)}")
        try:
            Activation.from_string(model["activation"])
        except ValueError as e:
            self.errors.append(f"model.activation: {e}")
        if model["init"] not in INITIALIZERS:
            self.errors.append(f"model.init: must be one of {', '.join(INITIALIZERS)}, got '{model['init']}'")

    def _validate_dataset(self, ds: Dict[str, Any]) -> None:
        kind = ds["kind"]
        if kind not in DATASET_KINDS:
            self.errors.append(f"dataset.kind: must be one of {', '.join(DATASET_KINDS)}, got '{kind}'")
            return
        if kind == "blobs":
            if ds["classes"] < 2:
                self.errors.append(f"dataset.classes: must be >= 2, got {ds['classes']}")
            if ds["dim"] < 1:
                self.errors.append(f"dataset.dim: must be >= 1, got {ds['dim']}")
            if ds["per_class"] < 1:
                self.errors.append(f"dataset.per_class: must be >= 1, got {ds['per_class']}")
            if ds["spread"] < 0:
                self.errors.append(f"dataset.spread: must be >= 0, got {ds['spread']}")
            if ds["path"] is not None:
                self.warnings.append("dataset.path is ignored for kind 'blobs'")
        else:
            if not ds["path"]:
                self.errors.append("dataset.path: required for kind 'csv'")
            elif not Path(ds["path"]).is_file():
                self.errors.append(f"dataset.path: file not found: {ds['path']}")
        if not 0.0 <= ds["test_fraction"] < 1.0:
            self.errors.append(f"dataset.test_fraction: must be in [0, 1), got {ds['test_fraction']}")

    def _validate_partition(self, part: Dict[str, Any], seed: int) -> None:
        spec = PartitionSpec(part["n_clients"], part["beta"], seed, part["redraw_empty"], part["max_redraws"])
        self.errors.extend(f"partition.{e}" for e in spec.validate())

    def _validate_train(self, cfg: Dict[str, Any]) -> None:
        train = cfg["train"]
        enum_fields = (("backward_mode", BackwardMode), ("feedback_mode", FeedbackMode),
                       ("algorithm", Algorithm), ("layer_strategy", LayerStrategy))
        enums_ok = True
        for name, enum_cls in enum_fields:
            allowed = [m.value for m in enum_cls]
            if str(train[name]).lower() not in allowed:
                self.errors.append(f"train.{name}: must be one of {', '.join(allowed)}, got '{train[name]}'")
                enums_ok = False
        start = train["start_layers"]
        if any(isinstance(l, bool) or not isinstance(l, int) for l in start):
            self.errors.append(f"train.start_layers: must be a list of integers, got {list(start)}")
            return
        if not enums_ok:
            return

        tc = TrainConfig(**train, seed=cfg["seed"], workers=cfg["workers"])
        self.errors.extend(f"train.{e}" for e in tc.validate() if not e.startswith(("seed:", "workers:")))

        hidden = cfg["model"]["hidden"]
        if isinstance(hidden, list) and all(isinstance(h, int) for h in hidden):
            layer_count = len(hidden) + 1
            if tc.fixed_layer is not None and tc.fixed_layer > layer_count:
                self.errors.append(f"train.fixed_layer: model has {layer_count} layers, got {tc.fixed_layer}")
            if any(l > layer_count for l in tc.start_layers):
                self.errors.append(f"train.start_layers: model has {layer_count} layers, "
                                   f"got {list(tc.start_layers)}")
            if tc.uses_feedback and layer_count < 2:
                self.warnings.append("train.backward_mode is 'flfa' but a single-layer model has no FA effect")
        if tc.fixed_layer == 1 or 1 in tc.start_layers:
            self.warnings.append("FA on layer 1 does not change any gradient")
        if tc.algorithm is Algorithm.FEDPROX and tc.prox_mu == 0:
            self.warnings.append("train.algorithm is 'fedprox' with prox_mu 0 (same as fedavg)")
        if tc.algorithm is not Algorithm.FEDAVGM and tc.server_momentum > 0:
            self.warnings.append("train.server_momentum is only used by 'fedavgm'")

    def _validate_metrics(self, cfg: Dict[str, Any]) -> None:
        metrics = cfg["metrics"]
        if metrics["assumption_samples"] < 1:
            self.errors.append(f"metrics.assumption_samples: must be >= 1, got {metrics['assumption_samples']}")
        if metrics["trace_mode"]:
            if cfg["partition"]["n_clients"] != 2:
                self.warnings.append("metrics.trace_mode forces partition.n_clients to 2")
            train = cfg["train"]
            if train["momentum"] or train["weight_decay"] or train["prox_mu"]:
                self.warnings.append("metrics.trace_mode forces momentum, weight_decay and prox_mu to 0")

    def _validate_compare(self, compare: Dict[str, Any]) -> None:
        seeds = compare["seeds"]
        if not seeds:
            self.errors.append("compare.seeds: must not be empty")
        elif any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in seeds):
            self.errors.append(f"compare.seeds: must be non-negative integers, got {list(seeds)}")
        elif len(set(seeds)) != len(seeds):
            self.errors.append(f"compare.seeds: duplicates in {list(seeds)}")
        unknown = [a for a in compare["ablations"] if a not in ABLATIONS]
        if unknown:
            self.errors.append(f"compare.ablations: unknown {unknown}; allowed: {', '.join(ABLATIONS)}")

#!/usr/bin/env python3
"""
Typed run configuration.

``RunConfig.from_dict`` validates a raw nested mapping (see validators.SCHEMA)
and turns it into dataclasses. Environment overrides exist for the seed and
the output directory only.
"""

import copy
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

from .data import PartitionSpec
from .errors import ConfigError
from .federation import Algorithm, BackwardMode, LayerStrategy, TrainConfig
from .feedback import FeedbackMode
from .nn import Activation
from .performance_logger import log_warn
from .validators import ABLATIONS, ConfigValidator, merge_defaults

ENV_SEED = "FEDALIGN_SEED"
ENV_OUTPUT_DIR = "FEDALIGN_OUTPUT_DIR"

TRACE_CLIENTS = 2
TRACE_LOCAL_STEPS = 3


@dataclass(frozen=True)
class ModelSpec:
    hidden: Tuple[int, ...] = (32,)
    activation: Activation = Activation.RELU
    init: str = "glorot"

    def layer_sizes(self, input_dim: int, classes: int) -> List[int]:
        return [input_dim, *self.hidden, classes]

    @property
    def layer_count(self) -> int:
        return len(self.hidden) + 1


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "blobs"
    classes: int = 5
    dim: int = 20
    per_class: int = 100
    spread: float = 1.0
    path: Optional[str] = None
    test_fraction: float = 0.2


@dataclass(frozen=True)
class MetricToggles:
    trace_mode: bool = False
    representation: bool = False
    assumptions: bool = False
    track_gradient_gap: bool = True
    record_updates: bool = True
    assumption_samples: int = 8


@dataclass(frozen=True)
class CompareSpec:
    seeds: Tuple[int, ...] = (0,)
    ablations: Tuple[str, ...] = ()

    def methods(self) -> List[Tuple[BackwardMode, FeedbackMode]]:
        """BP, FLFA and any requested ablations, in report order."""
        methods = [(BackwardMode.BP, FeedbackMode.GLOBAL_WEIGHTS),
                   (BackwardMode.FLFA, FeedbackMode.GLOBAL_WEIGHTS)]
        methods.extend((BackwardMode.FLFA, ABLATIONS[name]) for name in self.ablations)
        return methods


@dataclass
class RunConfig:
    seed: int
    output_dir: Optional[str]
    workers: Optional[int]
    model: ModelSpec
    dataset: DatasetSpec
    partition: PartitionSpec
    train: TrainConfig
    metrics: MetricToggles
    compare: CompareSpec
    source: str = ""
    warnings: List[str] = field(default_factory=list)

    @classmethod
    def from_dict(cls, raw: Dict[str, Any], source: str = "") -> 'RunConfig':
        """
        Validate and convert a raw configuration mapping.

        Raises:
            ConfigError: listing every invalid or unknown field
        """
        validator = ConfigValidator()
        is_valid, errors, warnings = validator.validate_run_config(raw)
        if not is_valid:
            raise ConfigError(errors, source)
        for warning in warnings:
            log_warn("Config", warning)

        cfg = merge_defaults(raw)
        seed = int(cfg["seed"])
        metrics = MetricToggles(**cfg["metrics"])
        train_raw = dict(cfg["train"])
        train = TrainConfig(**train_raw, seed=seed, workers=cfg["workers"],
                            track_gradient_gap=metrics.track_gradient_gap)
        part = cfg["partition"]
        return cls(
            seed=seed,
            output_dir=cfg["output_dir"],
            workers=cfg["workers"],
            model=ModelSpec(tuple(int(h) for h in cfg["model"]["hidden"]),
                            Activation.from_string(cfg["model"]["activation"]),
                            cfg["model"]["init"]),
            dataset=DatasetSpec(**{k: (float(v) if k in ("spread", "test_fraction") else v)
                                   for k, v in cfg["dataset"].items()}),
            partition=PartitionSpec(part["n_clients"], float(part["beta"]), seed,
                                    part["redraw_empty"], part["max_redraws"]),
            train=train,
            metrics=metrics,
            compare=CompareSpec(tuple(cfg["compare"]["seeds"]), tuple(cfg["compare"]["ablations"])),
            source=source,
            warnings=list(warnings),
        )

    def to_dict(self) -> Dict[str, Any]:
        """Canonical nested mapping; from_dict(to_dict()) reproduces the config."""
        t = self.train
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "workers": self.workers,
            "model": {"hidden": list(self.model.hidden), "activation": self.model.activation.value,
                      "init": self.model.init},
            "dataset": {
                "kind": self.dataset.kind, "classes": self.dataset.classes, "dim": self.dataset.dim,
                "per_class": self.dataset.per_class, "spread": self.dataset.spread,
                "path": self.dataset.path, "test_fraction": self.dataset.test_fraction,
            },
            "partition": {
                "n_clients": self.partition.n_clients, "beta": self.partition.beta,
                "redraw_empty": self.partition.redraw_empty, "max_redraws": self.partition.max_redraws,
            },
            "train": {
                "rounds": t.rounds, "local_epochs": t.local_epochs, "lr": t.lr, "momentum": t.momentum,
                "weight_decay": t.weight_decay, "lr_decay": t.lr_decay, "batch_size": t.batch_size,
                "client_fraction": t.client_fraction, "backward_mode": t.backward_mode.value,
                "feedback_mode": t.feedback_mode.value, "algorithm": t.algorithm.value,
                "prox_mu": t.prox_mu, "server_momentum": t.server_momentum,
                "layer_strategy": t.layer_strategy.value, "fixed_layer": t.fixed_layer,
                "fa_layer_count": t.fa_layer_count, "start_layers": list(t.start_layers),
                "local_steps": t.local_steps,
            },
            "metrics": {
                "trace_mode": self.metrics.trace_mode, "representation": self.metrics.representation,
                "assumptions": self.metrics.assumptions,
                "track_gradient_gap": self.metrics.track_gradient_gap,
                "record_updates": self.metrics.record_updates,
                "assumption_samples": self.metrics.assumption_samples,
            },
            "compare": {"seeds": list(self.compare.seeds), "ablations": list(self.compare.ablations)},
        }

    def with_seed(self, seed: int) -> 'RunConfig':
        return replace(self, seed=seed,
                       partition=replace(self.partition, seed=seed),
                       train=replace(self.train, seed=seed))

    def with_method(self, backward_mode: BackwardMode, feedback_mode: FeedbackMode) -> 'RunConfig':
        return replace(self, train=replace(self.train, backward_mode=backward_mode,
                                           feedback_mode=feedback_mode))

    def for_trace_mode(self) -> 'RunConfig':
        """
        Settings under which the drift bound applies: two clients with full
        participation, plain SGD steps and a fixed number of local steps.
        FA is pinned to layer 2 from round 0 when the model has one.
        """
        layer_count = self.model.layer_count
        fa = (2,) if layer_count >= 2 else ()
        train = replace(
            self.train,
            client_fraction=1.0, momentum=0.0, weight_decay=0.0, prox_mu=0.0,
            algorithm=Algorithm.FEDAVG, server_momentum=0.0,
            local_steps=self.train.local_steps or TRACE_LOCAL_STEPS,
            layer_strategy=LayerStrategy.FIXED if fa else LayerStrategy.NONE,
            fixed_layer=fa[0] if fa else None, start_layers=fa, fa_layer_count=1,
        )
        return replace(self, train=train,
                       partition=replace(self.partition, n_clients=TRACE_CLIENTS),
                       metrics=replace(self.metrics, trace_mode=True))


def apply_env_overrides(raw: Dict[str, Any], environ: Optional[Dict[str, str]] = None) -> Dict[str, Any]:
    """Copy of ``raw`` with FEDALIGN_SEED / FEDALIGN_OUTPUT_DIR applied."""
    environ = os.environ if environ is None else environ
    result = copy.deepcopy(raw)
    if environ.get(ENV_SEED):
        try:
            result["seed"] = int(environ[ENV_SEED])
        except ValueError:
            raise ConfigError([f"seed: {ENV_SEED}={environ[ENV_SEED]!r} is not an integer"],
                              "environment") from None
    if environ.get(ENV_OUTPUT_DIR):
        result["output_dir"] = environ[ENV_OUTPUT_DIR]
    return result


def apply_cli_overrides(raw: Dict[str, Any], seed: Optional[int] = None, output_dir: Optional[str] = None,
                        workers: Optional[int] = None) -> Dict[str, Any]:
    result = copy.deepcopy(raw)
    if seed is not None:
        result["seed"] = seed
    if output_dir is not None:
        result["output_dir"] = output_dir
    if workers is not None:
        result["workers"] = workers
    return result

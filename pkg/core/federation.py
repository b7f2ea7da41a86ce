#!/usr/bin/env python3
"""
Federated round loop.

Each round: sample clients, pick the FA layer set from the previous round's
alignment scores, train every selected client locally (BP or FLFA, optionally
with a proximal term), aggregate by sample-weighted averaging (plus server
momentum for FedAvgM), then measure alignment, drift and global accuracy.
"""

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .data import ClientShard, Dataset, batches, cyclic_batches
from .error_recovery import RecoveryContext
from .errors import PartitionError, ShapeMismatchError
from .feedback import FeedbackMode, FeedbackSet, init_feedback, rescale_feedback, sample_random_feedback
from .matcore import Matrix
from .metrics import local_drift, representation_metrics, skewness
from .nn import (MlpModel, OptimizerState, backward_bp, backward_fa, cross_entropy, evaluate,
                 forward, layer_deltas, penultimate_features, sgd_step)
from .performance_logger import log_debug, log_info, time_operation, update_stats
from .seeding import stream
from .tracing import TraceRecorder

ALIGNMENT_EPS = 1e-12


class BackwardMode(Enum):
    BP = "bp"
    FLFA = "flfa"


class Algorithm(Enum):
    FEDAVG = "fedavg"
    FEDPROX = "fedprox"
    FEDAVGM = "fedavgm"


class LayerStrategy(Enum):
    LOWEST = "lowest"
    HIGHEST = "highest"
    FIXED = "fixed"
    NONE = "none"


def _enum_value(enum_cls, value):
    return value if isinstance(value, enum_cls) else enum_cls(str(value).lower())


@dataclass
class TrainConfig:
    rounds: int = 10
    local_epochs: int = 1
    lr: float = 0.01
    momentum: float = 0.0
    weight_decay: float = 0.0
    lr_decay: float = 1.0
    batch_size: int = 64
    client_fraction: float = 1.0
    backward_mode: BackwardMode = BackwardMode.BP
    feedback_mode: FeedbackMode = FeedbackMode.GLOBAL_WEIGHTS
    algorithm: Algorithm = Algorithm.FEDAVG
    prox_mu: float = 0.0
    server_momentum: float = 0.0
    layer_strategy: LayerStrategy = LayerStrategy.LOWEST
    fixed_layer: Optional[int] = None
    fa_layer_count: int = 1
    start_layers: Tuple[int, ...] = ()
    local_steps: Optional[int] = None
    seed: int = 0
    workers: Optional[int] = None
    track_gradient_gap: bool = True

    def __post_init__(self):
        self.backward_mode = _enum_value(BackwardMode, self.backward_mode)
        self.feedback_mode = _enum_value(FeedbackMode, self.feedback_mode)
        self.algorithm = _enum_value(Algorithm, self.algorithm)
        self.layer_strategy = _enum_value(LayerStrategy, self.layer_strategy)
        self.start_layers = tuple(int(l) for l in self.start_layers)

    def validate(self) -> List[str]:
        """Field-level errors, each prefixed with the field name."""
        errors = []
        if self.rounds < 1:
            errors.append(f"rounds: must be >= 1, got {self.rounds}")
        if self.local_epochs < 1:
            errors.append(f"local_epochs: must be >= 1, got {self.local_epochs}")
        if not self.lr > 0:
            errors.append(f"lr: must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            errors.append(f"momentum: must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            errors.append(f"weight_decay: must be >= 0, got {self.weight_decay}")
        if not 0.0 < self.lr_decay <= 1.0:
            errors.append(f"lr_decay: must be in (0, 1], got {self.lr_decay}")
        if self.batch_size < 1:
            errors.append(f"batch_size: must be >= 1, got {self.batch_size}")
        if not 0.0 < self.client_fraction <= 1.0:
            errors.append(f"client_fraction: must be in (0, 1], got {self.client_fraction}")
        if self.prox_mu < 0:
            errors.append(f"prox_mu: must be >= 0, got {self.prox_mu}")
        if not 0.0 <= self.server_momentum < 1.0:
            errors.append(f"server_momentum: must be in [0, 1), got {self.server_momentum}")
        if self.layer_strategy is LayerStrategy.FIXED and self.fixed_layer is None:
            errors.append("fixed_layer: required when layer_strategy is 'fixed'")
        if self.fixed_layer is not None and self.fixed_layer < 1:
            errors.append(f"fixed_layer: must be >= 1, got {self.fixed_layer}")
        if self.fa_layer_count < 1:
            errors.append(f"fa_layer_count: must be >= 1, got {self.fa_layer_count}")
        if any(l < 1 for l in self.start_layers):
            errors.append(f"start_layers: layer numbers must be >= 1, got {list(self.start_layers)}")
        if self.local_steps is not None and self.local_steps < 1:
            errors.append(f"local_steps: must be >= 1 when set, got {self.local_steps}")
        if self.seed < 0:
            errors.append(f"seed: must be >= 0, got {self.seed}")
        if self.workers is not None and self.workers < 1:
            errors.append(f"workers: must be >= 1 when set, got {self.workers}")
        return errors

    @property
    def uses_feedback(self) -> bool:
        return self.backward_mode is BackwardMode.FLFA

    @property
    def method_label(self) -> str:
        if not self.uses_feedback:
            return "bp"
        return {
            FeedbackMode.GLOBAL_WEIGHTS: "flfa",
            FeedbackMode.GLOBAL_NO_RESCALE: "flfa_norescale",
            FeedbackMode.RANDOM_FIXED: "flfa_random",
        }[self.feedback_mode]

    def lr_at(self, round_index: int) -> float:
        return self.lr * self.lr_decay ** round_index


@dataclass
class LocalResult:
    client_id: int
    model: MlpModel
    sample_count: int
    steps: int
    mean_loss: float
    samples_seen: int = 0
    gradient_gaps: List[float] = field(default_factory=list)


@dataclass
class RoundRecord:
    round: int
    lr: float
    selected_clients: List[int]
    sample_counts: List[int]
    step_counts: List[int]
    fa_layers: List[int]
    updates: List[List[np.ndarray]]
    drift: float
    alignment: List[Optional[float]]
    alignment_skewness: Optional[float]
    next_fa_layers: List[int]
    local_loss: float
    train_loss: float
    eval_loss: float
    eval_accuracy: float
    g_hat: float
    g_hat_round_start: float
    representation: Optional[Dict[str, Any]] = None

    def to_dict(self, include_updates: bool = True) -> Dict[str, Any]:
        data = {
            "round": self.round,
            "lr": self.lr,
            "selected_clients": self.selected_clients,
            "sample_counts": self.sample_counts,
            "step_counts": self.step_counts,
            "fa_layers": self.fa_layers,
            "drift": self.drift,
            "alignment": self.alignment,
            "alignment_skewness": self.alignment_skewness,
            "next_fa_layers": self.next_fa_layers,
            "local_loss": self.local_loss,
            "train_loss": self.train_loss,
            "eval_loss": self.eval_loss,
            "eval_accuracy": self.eval_accuracy,
            "g_hat": self.g_hat,
            "g_hat_round_start": self.g_hat_round_start,
            "representation": self.representation,
        }
        if include_updates:
            data["updates"] = [[layer.tolist() for layer in client] for client in self.updates]
        return data

    def metrics_row(self) -> Dict[str, Any]:
        """Flat scalar view for metrics.csv."""
        rep = self.representation or {}
        return {
            "round": self.round,
            "lr": self.lr,
            "clients": len(self.selected_clients),
            "fa_layers": " ".join(str(l) for l in self.fa_layers),
            "drift": self.drift,
            "alignment": " ".join("nan" if z is None else repr(z) for z in self.alignment),
            "alignment_skewness": self.alignment_skewness,
            "next_fa_layers": " ".join(str(l) for l in self.next_fa_layers),
            "local_loss": self.local_loss,
            "train_loss": self.train_loss,
            "eval_loss": self.eval_loss,
            "eval_accuracy": self.eval_accuracy,
            "g_hat": self.g_hat,
            "g_hat_round_start": self.g_hat_round_start,
            "intra": rep.get("intra"),
            "inter": rep.get("inter"),
            "separability": rep.get("separability"),
        }


@dataclass
class RunResult:
    records: List[RoundRecord]
    model: MlpModel
    random_bank: Optional[Dict[int, Matrix]] = None
    recorder: Optional[TraceRecorder] = None


# --- server-side operations ---------------------------------------------------------

def select_clients(n_clients: int, fraction: float, rng: np.random.Generator) -> List[int]:
    """Uniform sample without replacement of max(1, round(fraction * N)) ids, sorted."""
    if n_clients < 1:
        raise ValueError(f"n_clients must be >= 1, got {n_clients}")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"client fraction must be in (0, 1], got {fraction}")
    count = min(n_clients, max(1, int(np.floor(fraction * n_clients + 0.5))))
    if count == n_clients:
        return list(range(n_clients))
    return sorted(int(c) for c in rng.choice(n_clients, size=count, replace=False))


def aggregate(models: Sequence[MlpModel], sizes: Sequence[int]) -> MlpModel:
    """Sample-weighted average of every weight and bias."""
    if not models:
        raise ValueError("aggregate needs at least one model")
    if len(models) != len(sizes):
        raise ValueError(f"{len(models)} models but {len(sizes)} sizes")
    if any(s <= 0 for s in sizes):
        raise ValueError(f"aggregation weights must be positive, got {list(sizes)}")
    shapes = [l.weight.shape for l in models[0].layers]
    for m in models[1:]:
        if [l.weight.shape for l in m.layers] != shapes:
            raise ShapeMismatchError("aggregate", tuple(shapes[0]), m.layers[0].weight.shape,
                                     "client models differ in architecture")
    total = float(sum(sizes))
    weights = [s / total for s in sizes]
    result = models[0].copy()
    for idx, layer in enumerate(result.layers):
        layer.weight = weights[0] * models[0].layers[idx].weight
        layer.bias = weights[0] * models[0].layers[idx].bias
        for w, m in zip(weights[1:], models[1:]):
            layer.weight = layer.weight + w * m.layers[idx].weight
            layer.bias = layer.bias + w * m.layers[idx].bias
    return result


MomentumBuffer = List[Tuple[Matrix, np.ndarray]]


def zero_momentum_buffer(model: MlpModel) -> MomentumBuffer:
    return [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in model.layers]


def server_momentum_step(prev_global: MlpModel, aggregated: MlpModel, buffer: MomentumBuffer,
                         coeff: float) -> Tuple[MlpModel, MomentumBuffer]:
    """buffer <- coeff*buffer + (prev - aggregated); new = prev - buffer."""
    if len(buffer) != prev_global.layer_count:
        raise ShapeMismatchError("server_momentum_step", (len(buffer),), (prev_global.layer_count,))
    new_buffer = []
    for (bw, bb), prev, agg in zip(buffer, prev_global.layers, aggregated.layers):
        new_buffer.append((coeff * bw + (prev.weight - agg.weight),
                           coeff * bb + (prev.bias - agg.bias)))
    if coeff == 0.0:
        return aggregated.copy(), new_buffer
    result = prev_global.copy()
    for layer, (bw, bb) in zip(result.layers, new_buffer):
        layer.weight = layer.weight - bw
        layer.bias = layer.bias - bb
    return result, new_buffer


def cosine_alignment(updates: Sequence[Sequence[np.ndarray]]) -> List[Optional[float]]:
    """
    Mean cosine similarity of each client's layer update with the mean update.

    Args:
        updates: updates[i][l] is client i's flattened update of layer l+1

    Returns:
        One value per layer; None where the mean update or any client update
        has norm below 1e-12
    """
    if not updates:
        raise ValueError("cosine_alignment needs at least one client")
    layer_count = len(updates[0])
    scores: List[Optional[float]] = []
    for l in range(layer_count):
        stacked = np.vstack([np.asarray(client[l], dtype=np.float64) for client in updates])
        mean = stacked.mean(axis=0)
        mean_norm = np.linalg.norm(mean)
        norms = np.linalg.norm(stacked, axis=1)
        if mean_norm < ALIGNMENT_EPS or np.any(norms < ALIGNMENT_EPS):
            scores.append(None)
            continue
        cosines = (stacked @ mean) / (norms * mean_norm)
        scores.append(float(np.mean(cosines)))
    return scores


def select_fa_layer(z: Sequence[Optional[float]], strategy: LayerStrategy,
                    fixed_layer: Optional[int] = None, count: int = 1,
                    eligible: Optional[Iterable[int]] = None) -> FrozenSet[int]:
    """
    FA layer set for the next round.

    Lowest/Highest pick the ``count`` layers with the smallest/largest defined
    score (ties go to the smaller layer number); Fixed returns {fixed_layer};
    None returns the empty set. ``eligible`` restricts the candidate layers.
    """
    if strategy is LayerStrategy.NONE:
        return frozenset()
    if strategy is LayerStrategy.FIXED:
        if fixed_layer is None:
            raise ValueError("fixed strategy needs fixed_layer")
        return frozenset({fixed_layer})
    allowed = set(eligible) if eligible is not None else None
    candidates = [(value, number) for number, value in enumerate(z, 1)
                  if value is not None and (allowed is None or number in allowed)]
    if not candidates:
        log_debug("Federation", "No defined alignment score, FA layer set is empty this round")
        return frozenset()
    if strategy is LayerStrategy.LOWEST:
        ranked = sorted(candidates, key=lambda c: (c[0], c[1]))
    else:
        ranked = sorted(candidates, key=lambda c: (-c[0], c[1]))
    return frozenset(number for _, number in ranked[:count])


def initial_fa_layers(cfg: TrainConfig) -> FrozenSet[int]:
    """FA set of round 0: explicit start layers, the fixed layer, or empty."""
    if not cfg.uses_feedback:
        return frozenset()
    if cfg.start_layers:
        return frozenset(cfg.start_layers)
    if cfg.layer_strategy is LayerStrategy.FIXED and cfg.fixed_layer is not None:
        return frozenset({cfg.fixed_layer})
    return frozenset()


# --- client side ----------------------------------------------------------------------

def local_train(shard: ClientShard, global_model: MlpModel, cfg: TrainConfig,
                fa_layers: Iterable[int], round_index: int = 0, lr: Optional[float] = None,
                rng: Optional[np.random.Generator] = None,
                random_bank: Optional[Dict[int, Matrix]] = None,
                recorder: Optional[TraceRecorder] = None) -> LocalResult:
    """
    Train a private copy of the global model on one shard.

    Runs ``local_epochs`` shuffled epochs, or exactly ``local_steps`` fixed-size
    batches when that is set. Under FLFA the layers in ``fa_layers`` propagate
    their error through B; in GlobalWeights mode B is rescaled after every
    step. FedProx adds mu * (w - W^r) to each weight gradient.

    Returns:
        LocalResult with the trained model and the per-step FA-vs-BP gradient gaps
    """
    lr = cfg.lr if lr is None else lr
    rng = rng if rng is not None else stream(cfg.seed, "client", round_index, shard.client_id)
    local = global_model.copy()
    opt = OptimizerState.init(local, lr, cfg.momentum, cfg.weight_decay)

    feedback: Optional[FeedbackSet] = None
    if cfg.uses_feedback:
        feedback = init_feedback(global_model, fa_layers, cfg.feedback_mode,
                                 bank=random_bank, seed=cfg.seed)
    prox = cfg.algorithm is Algorithm.FEDPROX and cfg.prox_mu > 0

    if cfg.local_steps is not None:
        schedule = cyclic_batches(shard, cfg.batch_size, cfg.local_steps, rng)
    else:
        schedule = []
        for _ in range(cfg.local_epochs):
            schedule.extend(batches(shard, cfg.batch_size, rng))

    losses, gaps = [], []
    for step, (x, y) in enumerate(schedule):
        trace = forward(local, x)
        loss, dlogits = cross_entropy(trace.output, y)
        losses.append(loss)
        if feedback:
            grads = backward_fa(local, feedback, trace, dlogits)
            if cfg.track_gradient_gap:
                reference = backward_bp(local, trace, dlogits)
                gaps.append(float(np.linalg.norm(grads.flatten() - reference.flatten())))
        else:
            grads = backward_bp(local, trace, dlogits)
            if cfg.track_gradient_gap:
                gaps.append(0.0)
        if prox:
            for idx, layer in enumerate(local.layers):
                grads.weights[idx] = grads.weights[idx] + cfg.prox_mu * (
                    layer.weight - global_model.layers[idx].weight)

        entry = None
        if recorder is not None:
            entry = recorder.record_step(round_index, shard.client_id, step, local, trace, grads, feedback)
        sgd_step(local, grads, opt)
        if feedback and cfg.feedback_mode.rescales:
            rescale_feedback(feedback, local)
        if recorder is not None:
            recorder.finish_step(entry, local)
            if feedback:
                recorder.record_rescale(round_index, shard.client_id, step, feedback, local)

    return LocalResult(shard.client_id, local, shard.sample_count, len(schedule),
                       float(np.mean(losses)) if losses else 0.0,
                       sum(int(y.shape[0]) for _, y in schedule), gaps)


# --- orchestration ----------------------------------------------------------------------

def _eligible_layers(model: MlpModel) -> List[int]:
    # layer 1 has no lower layer to send an error to, so FA there changes nothing
    return list(range(2, model.layer_count + 1))


def _global_loss(model: MlpModel, dataset: Dataset) -> float:
    loss, _ = cross_entropy(forward(model, dataset.features).output, dataset.labels)
    return loss


def run_training(cfg: TrainConfig, dataset: Dataset, shards: Sequence[ClientShard],
                 initial_model: MlpModel, eval_set: Optional[Dataset] = None,
                 representation: bool = False, recorder: Optional[TraceRecorder] = None,
                 on_round: Optional[Callable[[RoundRecord], None]] = None) -> RunResult:
    """
    Run ``cfg.rounds`` federated rounds starting from ``initial_model``.

    The result is a function of (cfg, data, shards, initial model) only: every
    random choice comes from a named stream of ``cfg.seed`` and clients are
    reduced in client-id order whatever the worker scheduling.

    Args:
        cfg: Training configuration
        dataset: Union of the client data, used for the global train loss
        shards: Client shards ordered by client id
        initial_model: Global model W^0 (not modified)
        eval_set: Hold-out set for accuracy; ``dataset`` when omitted
        representation: Compute penultimate-feature metrics each round
        recorder: Trace store for the drift bound check
        on_round: Called with every finished RoundRecord

    Raises:
        PartitionError: no selected client holds any sample in some round
    """
    errors = cfg.validate()
    if errors:
        raise ValueError("invalid TrainConfig: " + "; ".join(errors))
    if initial_model.input_dim != dataset.dim:
        raise ShapeMismatchError("run_training", (initial_model.input_dim,), (dataset.dim,),
                                 "model input dim must equal data dim")
    if cfg.fixed_layer is not None and cfg.fixed_layer > initial_model.layer_count:
        raise ValueError(f"fixed_layer {cfg.fixed_layer} exceeds layer count {initial_model.layer_count}")

    eval_set = eval_set if eval_set is not None else dataset
    workers = cfg.workers or os.cpu_count() or 1
    n_clients = len(shards)
    global_model = initial_model.copy()
    random_bank = None
    if cfg.uses_feedback and cfg.feedback_mode is FeedbackMode.RANDOM_FIXED:
        random_bank = sample_random_feedback(global_model, cfg.seed)
    buffer = zero_momentum_buffer(global_model)
    fa_layers = initial_fa_layers(cfg)
    eligible = _eligible_layers(global_model)
    if (cfg.uses_feedback and cfg.layer_strategy in (LayerStrategy.LOWEST, LayerStrategy.HIGHEST)
            and len(eligible) <= cfg.fa_layer_count):
        log_info("Federation", f"{cfg.layer_strategy.value} strategy has no choice to make: only layers "
                               f"{eligible} are eligible for FA on a {global_model.layer_count}-layer model", "📌")
    records: List[RoundRecord] = []
    run_start = time.perf_counter()

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for r in range(cfg.rounds):
            lr = cfg.lr_at(r)
            selected = select_clients(n_clients, cfg.client_fraction, stream(cfg.seed, "select", r))
            snapshot = global_model

            def train_one(cid: int) -> LocalResult:
                return local_train(shards[cid], snapshot, cfg, fa_layers, r, lr,
                                   stream(cfg.seed, "client", r, cid), random_bank, recorder)

            with time_operation("local_training"):
                results = list(pool.map(train_one, selected))

            contributors = [res for res in results if res.sample_count > 0]
            if not contributors:
                raise PartitionError(f"round {r}: none of the selected clients {selected} holds data")

            with time_operation("aggregation"):
                aggregated = aggregate([res.model for res in contributors],
                                       [res.sample_count for res in contributors])
                if cfg.algorithm is Algorithm.FEDAVGM:
                    new_global, buffer = server_momentum_step(global_model, aggregated, buffer,
                                                              cfg.server_momentum)
                else:
                    new_global = aggregated

            updates = [layer_deltas(res.model, global_model) for res in contributors]
            alignment = cosine_alignment(updates)
            drift = local_drift([np.concatenate(u) for u in updates])
            if cfg.uses_feedback:
                next_layers = select_fa_layer(alignment, cfg.layer_strategy, cfg.fixed_layer,
                                              cfg.fa_layer_count, eligible)
            else:
                next_layers = frozenset()

            with time_operation("evaluation"):
                train_loss = _global_loss(new_global, dataset)
                eval_loss, eval_acc = evaluate(new_global, eval_set.features, eval_set.labels)
                rep = None
                if representation:
                    with RecoveryContext("representation_metrics", "Metrics", fallback_value=None) as ctx:
                        ctx.result = representation_metrics(
                            penultimate_features(new_global, eval_set.features), eval_set.labels).to_dict()
                    rep = ctx.result

            gaps = [g for res in contributors for g in res.gradient_gaps]
            first_gaps = [res.gradient_gaps[0] for res in contributors if res.gradient_gaps]
            record = RoundRecord(
                round=r, lr=lr,
                selected_clients=list(selected),
                sample_counts=[res.sample_count for res in results],
                step_counts=[res.steps for res in results],
                fa_layers=sorted(fa_layers),
                updates=updates,
                drift=drift,
                alignment=alignment,
                alignment_skewness=skewness(alignment),
                next_fa_layers=sorted(next_layers),
                local_loss=float(np.mean([res.mean_loss for res in contributors])),
                train_loss=train_loss,
                eval_loss=eval_loss,
                eval_accuracy=eval_acc,
                g_hat=max(gaps) if gaps else 0.0,
                g_hat_round_start=max(first_gaps) if first_gaps else 0.0,
                representation=rep,
            )
            records.append(record)
            if on_round is not None:
                on_round(record)

            update_stats("federation", rounds_completed=1, client_updates=len(contributors),
                         local_steps=sum(res.steps for res in results),
                         samples_processed=sum(res.samples_seen for res in results),
                         parallel_workers=workers)
            log_info("Federation",
                     f"[{cfg.method_label}] round {r + 1}/{cfg.rounds}",
                     "🔁", stats={"drift": drift, "acc": eval_acc, "loss": train_loss,
                                 "fa": sorted(fa_layers) or "-"})
            global_model = new_global
            fa_layers = next_layers

    log_debug("Federation", f"{cfg.method_label} run finished", duration=time.perf_counter() - run_start)
    return RunResult(records, global_model, random_bank, recorder)

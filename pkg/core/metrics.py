#!/usr/bin/env python3
"""
Drift, representation and bound diagnostics.

Functions here are pure over recorded values (updates, features, step traces)
and never mutate their inputs.
"""

import math
from dataclasses import asdict, dataclass
from itertools import combinations
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import matcore
from .data import ClientShard, Dataset, PartitionSpec, mean_shard_entropy, partition_dirichlet
from .errors import FedAlignError, TraceError
from .feedback import FeedbackMode, init_feedback
from .matcore import Matrix
from .nn import GradSet, MlpModel, backward_bp, backward_fa, cross_entropy, forward
from .seeding import stream
from .tracing import RescaleSample, StepTrace, TraceRecorder, weight_delta

BOUND_REL_TOL = 1e-9
BOUND_ABS_TOL = 1e-12
INFINITE_SEPARABILITY = math.inf


class ComparisonError(FedAlignError, ValueError):
    """Two runs cannot be paired (different round counts)."""


@dataclass(frozen=True)
class RepresentationMetrics:
    intra: float
    inter: float
    separability: float

    def to_dict(self) -> Dict[str, Any]:
        return {"intra": self.intra, "inter": self.inter,
                "separability": None if math.isinf(self.separability) else self.separability}


@dataclass(frozen=True)
class BoundRow:
    method: str
    round: int
    client_i: int
    client_j: int
    layer: int
    step: int
    mode: str              # bp | fa | fa_rescaled | output
    lhs: float
    rhs: float
    error_term: float
    weight_term: float
    gate_term: float
    input_term: float
    x_envelope: float
    delta_envelope: float
    alpha: float
    spectral_fallback: bool

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs * (1.0 + BOUND_REL_TOL) + BOUND_ABS_TOL

    def to_row(self) -> Dict[str, Any]:
        row = asdict(self)
        row["slack"] = self.slack
        row["passed"] = self.passed
        return row


@dataclass(frozen=True)
class AssumptionEstimates:
    g_hat: float
    sigma_hat: float
    gamma_hat: float


@dataclass(frozen=True)
class ComparisonRow:
    round: int
    drift_a: float
    drift_b: float
    reduction: float
    accuracy_a: float
    accuracy_b: float
    accuracy_diff: float


@dataclass
class DriftReport:
    label_a: str
    label_b: str
    rows: List[ComparisonRow]
    mean_reduction: float
    mean_reduction_tail: float
    tail_start: int
    final_accuracy_a: float
    final_accuracy_b: float

    @property
    def reduction_sign(self) -> int:
        return int(np.sign(self.mean_reduction_tail))

    def summary(self) -> Dict[str, Any]:
        return {
            "label_a": self.label_a,
            "label_b": self.label_b,
            "rounds": len(self.rows),
            "mean_reduction": self.mean_reduction,
            "mean_reduction_tail": self.mean_reduction_tail,
            "tail_start": self.tail_start,
            "reduction_sign": self.reduction_sign,
            "final_accuracy_a": self.final_accuracy_a,
            "final_accuracy_b": self.final_accuracy_b,
        }


# --- drift ------------------------------------------------------------------

def local_drift(updates: Sequence[np.ndarray]) -> float:
    """H = mean_i ||u_i - mean(u)||_2 over flattened client updates."""
    if len(updates) == 0:
        raise ValueError("local_drift needs at least one update")
    stacked = np.vstack([np.asarray(u, dtype=np.float64).ravel() for u in updates])
    center = stacked.mean(axis=0)
    return float(np.mean(np.linalg.norm(stacked - center, axis=1)))


def brute_force_local_drift(updates: Sequence[Sequence[float]]) -> float:
    k = len(updates)
    length = len(updates[0])
    center = [sum(u[p] for u in updates) / k for p in range(length)]
    total = 0.0
    for u in updates:
        total += math.sqrt(sum((u[p] - center[p]) ** 2 for p in range(length)))
    return total / k


def skewness(values: Iterable[Optional[float]]) -> Optional[float]:
    """Biased sample skewness of the defined values; None with < 3 values or zero spread."""
    data = np.array([v for v in values if v is not None], dtype=np.float64)
    if data.size < 3:
        return None
    centered = data - data.mean()
    std = np.sqrt(np.mean(centered ** 2))
    if std == 0.0:
        return None
    return float(np.mean(centered ** 3) / std ** 3)


def tail_mean(values: Sequence[float], fraction: float = 0.1) -> float:
    """Mean over the last ceil(fraction * n) values (at least one)."""
    if len(values) == 0:
        return 0.0
    count = max(1, int(math.ceil(len(values) * fraction)))
    return float(np.mean(values[-count:]))


# --- representations ----------------------------------------------------------

def representation_metrics(features: np.ndarray, labels: np.ndarray) -> RepresentationMetrics:
    """
    Class compactness and separation of per-sample feature rows.

    intra is the mean over present classes of the mean distance to the class
    centroid, inter the mean pairwise centroid distance and separability their
    ratio (+inf when intra is 0).

    Raises:
        ValueError: fewer than two classes present
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ValueError(f"features {features.shape} do not match {labels.shape[0]} labels")
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("representation metrics need at least two classes")

    centroids = []
    compactness = []
    for c in classes:
        members = features[labels == c]
        centroid = members.mean(axis=0)
        centroids.append(centroid)
        compactness.append(np.linalg.norm(members - centroid, axis=1).mean())
    centroids = np.array(centroids)
    intra = float(np.mean(compactness))
    pair_distances = [np.linalg.norm(centroids[a] - centroids[b])
                      for a, b in combinations(range(len(classes)), 2)]
    inter = float(np.mean(pair_distances))
    separability = inter / intra if intra > 0 else INFINITE_SEPARABILITY
    return RepresentationMetrics(intra, inter, separability)


def brute_force_representation(features: Sequence[Sequence[float]],
                               labels: Sequence[int]) -> Tuple[float, float]:
    """(intra, inter) by explicit loops over samples and class pairs."""
    classes = sorted(set(labels))
    dim = len(features[0])
    centroids = {}
    intra_parts = []
    for c in classes:
        members = [features[k] for k in range(len(labels)) if labels[k] == c]
        centroid = [sum(m[d] for m in members) / len(members) for d in range(dim)]
        centroids[c] = centroid
        dist = 0.0
        for m in members:
            dist += math.sqrt(sum((m[d] - centroid[d]) ** 2 for d in range(dim)))
        intra_parts.append(dist / len(members))
    pair_sum, pairs = 0.0, 0
    for a in range(len(classes)):
        for b in range(a + 1, len(classes)):
            ca, cb = centroids[classes[a]], centroids[classes[b]]
            pair_sum += math.sqrt(sum((ca[d] - cb[d]) ** 2 for d in range(dim)))
            pairs += 1
    return sum(intra_parts) / len(intra_parts), pair_sum / pairs


# --- partition skew ----------------------------------------------------------------

@dataclass
class EntropySkew:
    low_beta: float
    high_beta: float
    low_entropy: float
    high_entropy: float

    @property
    def passed(self) -> bool:
        return self.low_entropy < self.high_entropy


def entropy_skew_check(ds: Dataset, n_clients: int, seeds: Iterable[int],
                       low_beta: float = 0.1, high_beta: float = 10.0) -> EntropySkew:
    """Mean shard label entropy at a low and a high concentration, averaged over ``seeds``."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("entropy_skew_check needs at least one seed")

    def mean_entropy(beta: float) -> float:
        return float(np.mean([mean_shard_entropy(partition_dirichlet(ds, PartitionSpec(n_clients, beta, s)).shards)
                              for s in seeds]))

    return EntropySkew(low_beta, high_beta, mean_entropy(low_beta), mean_entropy(high_beta))


# --- drift bound ----------------------------------------------------------------

def _check_aligned(steps_i: List[StepTrace], steps_j: List[StepTrace]) -> None:
    if not steps_i or not steps_j:
        raise TraceError("bound check needs at least one recorded step per client")
    if len(steps_i) != len(steps_j):
        raise TraceError(f"trace lengths differ: {len(steps_i)} vs {len(steps_j)}")
    for a, b in zip(steps_i, steps_j):
        shapes_a = [w.shape for w in a.weights_before]
        shapes_b = [w.shape for w in b.weights_before]
        if shapes_a != shapes_b:
            raise TraceError(f"layer shapes differ at step {a.step}: {shapes_a} vs {shapes_b}")
        if a.inputs[0].shape != b.inputs[0].shape:
            raise TraceError(f"batch shapes differ at step {a.step}: {a.inputs[0].shape} vs {b.inputs[0].shape} "
                             "(a client holds fewer samples than batch_size)")
        if not a.weights_after or not b.weights_after:
            raise TraceError(f"step {a.step} was recorded without its post-update weights")


def drift_bound_check(steps_i: List[StepTrace], steps_j: List[StepTrace], lr: float,
                      layer: int, mode: str, method: str = "", round_index: int = 0,
                      clients: Tuple[int, int] = (0, 1)) -> List[BoundRow]:
    """
    Evaluate both sides of the pairwise drift bound for one layer and one round.

    One row per step prefix k: the LHS is ||Delta_i - Delta_j||_F of the actual
    weight change after k+1 steps, the RHS is lr times the summed per-step terms.
    For a hidden layer l with P the operator layer l+1 propagates through (w or B):

        error  = x * ||f'_i||inf * ||P_i||_2 * ||d_i - d_j||_F
        weight = x * ||f'_i||inf * ||P_i - P_j||_2 * d
        gate   = x * ||f'_i - f'_j||inf * ||P_j||_2 * d
        input  = ||f'_j||inf * ||P_j||_2 * d * ||h_i - h_j||_F

    with d_i the error signal of layer l+1, x = max ||h_l||_F and d = max ||d||_F
    over the round's steps of both clients. The output layer uses
    x * ||delta_i - delta_j|| + d * ||h_i - h_j|| directly.
    Requires plain SGD steps (no momentum, decay or proximal term).

    Raises:
        TraceError: misaligned traces
    """
    _check_aligned(steps_i, steps_j)
    layer_count = len(steps_i[0].weights_before)
    if not 1 <= layer <= layer_count:
        raise TraceError(f"layer {layer} outside 1..{layer_count}")
    top = layer == layer_count
    idx = layer - 1
    signal_idx = idx if top else idx + 1

    both = steps_i + steps_j
    x_env = max(matcore.frobenius_norm(s.inputs[idx]) for s in both)
    d_env = max(matcore.frobenius_norm(s.deltas[signal_idx]) for s in both)

    rows = []
    cumulative = np.zeros(4)
    for k, (si, sj) in enumerate(zip(steps_i, steps_j)):
        h_gap = matcore.frobenius_norm(si.inputs[idx] - sj.inputs[idx])
        d_gap = matcore.frobenius_norm(si.deltas[signal_idx] - sj.deltas[signal_idx])
        alpha = 1.0
        fallback = False
        if top:
            terms = np.array([x_env * d_gap, 0.0, 0.0, d_env * h_gap])
        else:
            p_i, p_j = si.operators[idx + 1], sj.operators[idx + 1]
            est_i = matcore.spectral_norm(p_i)
            est_j = matcore.spectral_norm(p_j)
            est_diff = matcore.spectral_norm(p_i - p_j)
            fallback = not (est_i.converged and est_j.converged and est_diff.converged)
            gi = matcore.max_abs(si.derivatives[idx])
            gj = matcore.max_abs(sj.derivatives[idx])
            g_gap = matcore.max_abs(si.derivatives[idx] - sj.derivatives[idx])
            terms = np.array([
                x_env * gi * est_i.value * d_gap,
                x_env * gi * est_diff.value * d_env,
                x_env * g_gap * est_j.value * d_env,
                gj * est_j.value * d_env * h_gap,
            ])
            norm_i = matcore.frobenius_norm(p_i)
            if mode == "fa_rescaled" and norm_i > 0:
                alpha = matcore.frobenius_norm(p_j) / norm_i
        cumulative = cumulative + lr * terms
        lhs = matcore.frobenius_norm(weight_delta(steps_i, layer, k) - weight_delta(steps_j, layer, k))
        rows.append(BoundRow(
            method=method, round=round_index, client_i=clients[0], client_j=clients[1],
            layer=layer, step=k, mode="output" if top else mode,
            lhs=lhs, rhs=float(cumulative.sum()),
            error_term=float(cumulative[0]), weight_term=float(cumulative[1]),
            gate_term=float(cumulative[2]), input_term=float(cumulative[3]),
            x_envelope=x_env, delta_envelope=d_env, alpha=alpha, spectral_fallback=fallback,
        ))
    return rows


def bound_mode(step: StepTrace, layer: int, rescaled: bool) -> str:
    """Which bound applies to ``layer``: it depends on how layer+1 propagates."""
    if layer == len(step.weights_before):
        return "output"
    if (layer + 1) in step.fa_layers:
        return "fa_rescaled" if rescaled else "fa"
    return "bp"


def check_recorded_bounds(recorder: TraceRecorder, lr_by_round: Dict[int, float],
                          method: str, rescaled: bool) -> List[BoundRow]:
    """Bound rows for every recorded round, client pair and layer."""
    rows: List[BoundRow] = []
    for round_index in recorder.rounds():
        clients = recorder.clients(round_index)
        for ci, cj in combinations(clients, 2):
            steps_i = recorder.steps(round_index, ci)
            steps_j = recorder.steps(round_index, cj)
            _check_aligned(steps_i, steps_j)
            for layer in range(1, len(steps_i[0].weights_before) + 1):
                mode = bound_mode(steps_i[0], layer, rescaled)
                rows.extend(drift_bound_check(steps_i, steps_j, lr_by_round[round_index], layer,
                                              mode, method, round_index, (ci, cj)))
    return rows


# --- feedback rescale ---------------------------------------------------------------

RESCALE_TOL = 1e-9


def rescale_holds(sample: RescaleSample, tol: float = RESCALE_TOL) -> bool:
    """||B||_F matches ||w||_F and B keeps the round-start direction, both within ``tol``."""
    return (sample.norm_residual <= tol * sample.weight_norm
            and sample.direction_residual <= tol)


# --- assumption constants ----------------------------------------------------------

def _gradient(model: MlpModel, x: Matrix, labels: np.ndarray, feedback=None) -> GradSet:
    trace = forward(model, x)
    _, dlogits = cross_entropy(trace.output, labels)
    if feedback:
        return backward_fa(model, feedback, trace, dlogits)
    return backward_bp(model, trace, dlogits)


def gradient_gap(model: MlpModel, x: Matrix, labels: np.ndarray, feedback) -> float:
    """||FA gradient - BP gradient||_2 over all flattened parameters on one batch."""
    if not feedback:
        return 0.0
    fa = _gradient(model, x, labels, feedback).flatten()
    bp = _gradient(model, x, labels).flatten()
    return float(np.linalg.norm(fa - bp))


def estimate_assumptions(model: MlpModel, shards: Sequence[ClientShard], fa_layers: Iterable[int],
                         mode: FeedbackMode, batch_size: int, seed: int,
                         bank: Optional[Dict[int, Matrix]] = None, samples: int = 8) -> AssumptionEstimates:
    """
    Empirical G, sigma and gamma for ``model`` on the client shards.

    G is the largest FA-vs-BP gradient gap over sampled batches, sigma the RMS
    distance of a batch gradient to its shard's full gradient and gamma
    sqrt(sum_i pi_i ||grad J_i - grad J||^2) with pi_i the shard weights.
    Batches are sorted index subsets so a full-size batch equals the shard.
    """
    populated = [s for s in shards if s.sample_count > 0]
    if not populated:
        raise ValueError("estimate_assumptions needs at least one non-empty shard")
    feedback = init_feedback(model, fa_layers, mode, bank=bank, seed=seed)

    g_hat = 0.0
    variance_terms = []
    full_grads = []
    for shard in populated:
        n = shard.sample_count
        full = _gradient(model, shard.features, shard.labels).flatten()
        full_grads.append(full)
        rng = stream(seed, "assumptions", shard.client_id)
        size = min(batch_size, n)
        for _ in range(samples):
            sel = np.sort(rng.choice(n, size=size, replace=False))
            x, y = np.ascontiguousarray(shard.features[:, sel]), shard.labels[sel]
            batch_grad = _gradient(model, x, y).flatten()
            variance_terms.append(float(np.sum((batch_grad - full) ** 2)))
            g_hat = max(g_hat, gradient_gap(model, x, y, feedback))

    sizes = np.array([s.sample_count for s in populated], dtype=np.float64)
    weights = sizes / sizes.sum()
    global_grad = sum(w * g for w, g in zip(weights, full_grads))
    gamma_sq = sum(w * float(np.sum((g - global_grad) ** 2)) for w, g in zip(weights, full_grads))
    return AssumptionEstimates(g_hat=g_hat,
                               sigma_hat=float(np.sqrt(np.mean(variance_terms))),
                               gamma_hat=float(np.sqrt(gamma_sq)))


# --- paired runs -------------------------------------------------------------------

def compare_runs(records_a: Sequence[Any], records_b: Sequence[Any], label_a: str = "bp",
                 label_b: str = "flfa", tail_start: int = 10) -> DriftReport:
    """
    Per-round drift reduction H_a - H_b and accuracy difference b - a.

    Records only need ``round``, ``drift`` and ``eval_accuracy`` attributes.
    ``mean_reduction_tail`` averages rounds >= tail_start (all rounds when the
    run is shorter).

    Raises:
        ComparisonError: the runs have different round counts
    """
    if len(records_a) != len(records_b):
        raise ComparisonError(f"cannot pair runs with {len(records_a)} and {len(records_b)} rounds")
    rows = [ComparisonRow(ra.round, ra.drift, rb.drift, ra.drift - rb.drift,
                          ra.eval_accuracy, rb.eval_accuracy, rb.eval_accuracy - ra.eval_accuracy)
            for ra, rb in zip(records_a, records_b)]
    reductions = [r.reduction for r in rows]
    tail = [r.reduction for r in rows if r.round >= tail_start] or reductions
    return DriftReport(
        label_a=label_a, label_b=label_b, rows=rows,
        mean_reduction=float(np.mean(reductions)) if rows else 0.0,
        mean_reduction_tail=float(np.mean(tail)) if rows else 0.0,
        tail_start=tail_start,
        final_accuracy_a=tail_mean([r.accuracy_a for r in rows]),
        final_accuracy_b=tail_mean([r.accuracy_b for r in rows]),
    )

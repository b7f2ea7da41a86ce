#!/usr/bin/env python3
"""
Datasets and non-IID client partitioning.

Features are stored column-stacked (dim x n) like every other batch in the
package. Client shards carry their own feature/label views so local training
never touches the parent dataset.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import PartitionError
from .matcore import Matrix
from .performance_logger import log_debug, log_warn
from .run_store import write_json
from .seeding import stream

CENTROID_RADIUS = 3.0

Batch = Tuple[Matrix, np.ndarray]
RngLike = Union[int, np.random.Generator, np.random.SeedSequence]


def _as_rng(seed: RngLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass
class Dataset:
    features: Matrix       # (dim, n)
    labels: np.ndarray     # (n,), int64
    class_count: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise PartitionError(f"features must be 2-D, got shape {self.features.shape}")
        if self.features.shape[1] != self.labels.shape[0]:
            raise PartitionError(f"{self.features.shape[1]} feature columns but "
                                 f"{self.labels.shape[0]} labels")
        if self.labels.size == 0:
            raise PartitionError("dataset is empty")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise PartitionError(f"labels must lie in [0, {self.class_count})")

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[0])

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def subset(self, indices: np.ndarray) -> 'Dataset':
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(np.ascontiguousarray(self.features[:, indices]), self.labels[indices].copy(),
                       self.class_count)


@dataclass
class ClientShard:
    client_id: int
    indices: np.ndarray
    features: Matrix
    labels: np.ndarray
    class_count: int

    @classmethod
    def from_indices(cls, client_id: int, dataset: Dataset, indices: Sequence[int]) -> 'ClientShard':
        idx = np.asarray(indices, dtype=np.int64)
        return cls(client_id, idx, np.ascontiguousarray(dataset.features[:, idx]),
                   dataset.labels[idx].copy(), dataset.class_count)

    @property
    def sample_count(self) -> int:
        return int(self.indices.shape[0])

    @property
    def histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)


@dataclass(frozen=True)
class PartitionSpec:
    n_clients: int
    beta: float
    seed: int = 0
    redraw_empty: bool = False
    max_redraws: int = 10

    def validate(self) -> List[str]:
        errors = []
        if self.n_clients < 1:
            errors.append(f"n_clients: must be >= 1, got {self.n_clients}")
        if not self.beta > 0:
            errors.append(f"beta: must be > 0, got {self.beta}")
        if self.max_redraws < 0:
            errors.append(f"max_redraws: must be >= 0, got {self.max_redraws}")
        return errors


@dataclass
class PartitionResult:
    shards: List[ClientShard]
    empty_clients: List[int] = field(default_factory=list)
    draws: int = 1

    def __iter__(self) -> Iterator[ClientShard]:
        return iter(self.shards)

    def __len__(self) -> int:
        return len(self.shards)


def gen_blobs(classes: int, dim: int, per_class: int, spread: float, seed: int) -> Dataset:
    """Gaussian clusters around one centroid per class.

    Centroids are scaled simplex vertices (radius * e_c) when dim >= classes and
    random points on the radius sphere otherwise. Samples are class-major.
    """
    if classes < 2:
        raise PartitionError(f"gen_blobs needs at least 2 classes, got {classes}")
    if per_class < 1:
        raise PartitionError(f"per_class must be >= 1, got {per_class}")
    if dim < 1 or spread < 0:
        raise PartitionError(f"invalid blob geometry (dim={dim}, spread={spread})")

    rng = stream(seed, "blobs")
    if dim >= classes:
        centroids = CENTROID_RADIUS * np.eye(dim, classes)
    else:
        directions = rng.standard_normal((dim, classes))
        centroids = CENTROID_RADIUS * directions / np.linalg.norm(directions, axis=0, keepdims=True)

    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    noise = rng.standard_normal((dim, classes * per_class))
    features = centroids[:, labels] + spread * noise
    return Dataset(np.ascontiguousarray(features), labels, classes)


def load_csv(path: Union[str, Path], class_count: Optional[int] = None) -> Dataset:
    """Read header-less ``label,f1,...,fd`` rows."""
    try:
        table = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as e:
        raise PartitionError(f"{path}: malformed CSV ({e})") from e
    if table.shape[0] == 0 or table.shape[1] < 2:
        raise PartitionError(f"{path}: expected rows of label plus at least one feature")
    raw_labels = table[:, 0]
    if not np.all(raw_labels == np.round(raw_labels)):
        raise PartitionError(f"{path}: labels must be integers")
    labels = raw_labels.astype(np.int64)
    classes = class_count if class_count is not None else int(labels.max()) + 1
    return Dataset(np.ascontiguousarray(table[:, 1:].T), labels, classes)


def split_dataset(ds: Dataset, test_fraction: float, seed: int) -> Tuple[Dataset, Optional[Dataset]]:
    """Stratified hold-out split; returns (train, None) for a zero fraction."""
    if not 0.0 <= test_fraction < 1.0:
        raise PartitionError(f"test_fraction must be in [0, 1), got {test_fraction}")
    if test_fraction == 0.0:
        return ds, None
    rng = stream(seed, "split")
    train_idx, test_idx = [], []
    for c in range(ds.class_count):
        idx = rng.permutation(np.flatnonzero(ds.labels == c))
        n_test = min(int(np.floor(idx.size * test_fraction + 0.5)), max(idx.size - 1, 0))
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    test = np.sort(np.concatenate(test_idx))
    train = np.sort(np.concatenate(train_idx))
    if test.size == 0:
        return ds, None
    return ds.subset(train), ds.subset(test)


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    raw = proportions * total
    counts = np.floor(raw).astype(np.int64)
    remainder = total - int(counts.sum())
    if remainder > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def _draw_partition(ds: Dataset, spec: PartitionSpec, attempt: int) -> List[np.ndarray]:
    rng = stream(spec.seed, "partition", attempt)
    buckets: List[List[np.ndarray]] = [[] for _ in range(spec.n_clients)]
    for c in range(ds.class_count):
        idx = rng.permutation(np.flatnonzero(ds.labels == c))
        if idx.size == 0:
            continue
        gammas = rng.gamma(spec.beta, 1.0, spec.n_clients)
        total = gammas.sum()
        if total > 0:
            proportions = gammas / total
        else:
            # every draw underflowed (tiny beta): the class goes to one client
            proportions = np.zeros(spec.n_clients)
            proportions[rng.integers(spec.n_clients)] = 1.0
        counts = _largest_remainder(proportions, idx.size)
        bounds = np.concatenate([[0], np.cumsum(counts)])
        for client in range(spec.n_clients):
            buckets[client].append(idx[bounds[client]:bounds[client + 1]])
    return [np.sort(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
            for parts in buckets]


def partition_dirichlet(ds: Dataset, spec: PartitionSpec) -> PartitionResult:
    """
    Split a dataset across clients with per-class Dirichlet(beta) proportions.

    Each class's samples are shuffled and divided by largest-remainder rounding
    of proportions drawn from normalized Gamma(beta, 1) variates, so the shards
    always form an exact partition of the dataset.

    Args:
        ds: Dataset to split
        spec: Number of clients, concentration and seed

    Returns:
        PartitionResult with shards ordered by client id and the ids of clients
        that received no sample
    """
    errors = spec.validate()
    if errors:
        raise PartitionError("; ".join(errors))

    attempt = 0
    while True:
        parts = _draw_partition(ds, spec, attempt)
        empty = [cid for cid, part in enumerate(parts) if part.size == 0]
        if not empty or not spec.redraw_empty or attempt >= spec.max_redraws:
            break
        log_debug("Partition", f"Draw {attempt} left clients {empty} empty, redrawing")
        attempt += 1

    if empty:
        log_warn("Partition", f"Clients {empty} received no samples (beta={spec.beta}, draws={attempt + 1})")
    shards = [ClientShard.from_indices(cid, ds, part) for cid, part in enumerate(parts)]
    return PartitionResult(shards, empty, attempt + 1)


def iid_partition(ds: Dataset, n_clients: int, seed: int) -> PartitionResult:
    """Uniform random split with equal-as-possible shard sizes."""
    if n_clients < 1:
        raise PartitionError(f"n_clients must be >= 1, got {n_clients}")
    order = stream(seed, "iid_partition").permutation(ds.size)
    parts = np.array_split(order, n_clients)
    shards = [ClientShard.from_indices(cid, ds, np.sort(part)) for cid, part in enumerate(parts)]
    return PartitionResult(shards, [cid for cid, p in enumerate(parts) if p.size == 0])


def batches(shard: ClientShard, batch_size: int, epoch_seed: RngLike) -> List[Batch]:
    """One shuffled epoch; the last partial batch is kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = shard.sample_count
    if n == 0:
        return []
    order = _as_rng(epoch_seed).permutation(n)
    return [(np.ascontiguousarray(shard.features[:, sel]), shard.labels[sel])
            for sel in (order[start:start + batch_size] for start in range(0, n, batch_size))]


def cyclic_batches(shard: ClientShard, batch_size: int, steps: int, rng: RngLike) -> List[Batch]:
    """``steps`` batches of min(batch_size, n) samples from back-to-back shuffled epochs."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = shard.sample_count
    if n == 0 or steps <= 0:
        return []
    gen = _as_rng(rng)
    size = min(batch_size, n)
    needed = steps * size
    epochs = -(-needed // n)
    order = np.concatenate([gen.permutation(n) for _ in range(epochs)])
    return [(np.ascontiguousarray(shard.features[:, order[k * size:(k + 1) * size]]),
             shard.labels[order[k * size:(k + 1) * size]])
            for k in range(steps)]


def label_distribution(shard: ClientShard) -> np.ndarray:
    hist = shard.histogram.astype(np.float64)
    total = hist.sum()
    return hist / total if total > 0 else hist


def shard_entropy(shard: ClientShard) -> float:
    """Shannon entropy (nats) of the shard's label distribution; 0 for an empty shard."""
    p = label_distribution(shard)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def mean_shard_entropy(shards: Sequence[ClientShard]) -> float:
    non_empty = [s for s in shards if s.sample_count > 0]
    if not non_empty:
        return 0.0
    return float(np.mean([shard_entropy(s) for s in non_empty]))


def partition_to_dict(shards: Sequence[ClientShard]) -> Dict[str, List[int]]:
    return {str(s.client_id): s.indices.tolist() for s in shards}


def export_partition(path: Union[str, Path], shards: Sequence[ClientShard]) -> Path:
    return write_json(path, partition_to_dict(shards))

#!/usr/bin/env python3
"""
Feedback matrices for the aligned backward pass.

A FeedbackSet holds one matrix B_l for every layer l in the FA set. In
GlobalWeights mode B_l starts as a copy of the round-start global weight and is
rescaled after every local batch to the Frobenius norm of the current local
weight, keeping the global direction. GlobalNoRescale keeps the copy as is and
RandomFixed uses a bank sampled once per run.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Set

import numpy as np

from . import matcore
from .errors import FeedbackError
from .matcore import Matrix
from .nn import MlpModel, glorot_uniform
from .performance_logger import log_warn
from .seeding import stream

NORM_FLOOR = 1e-30


class FeedbackMode(Enum):
    GLOBAL_WEIGHTS = "global_weights"
    GLOBAL_NO_RESCALE = "global_no_rescale"
    RANDOM_FIXED = "random_fixed"

    @classmethod
    def from_string(cls, name: str) -> 'FeedbackMode':
        try:
            return cls(name.lower())
        except ValueError:
            allowed = ", ".join(m.value for m in cls)
            raise ValueError(f"Unknown feedback mode '{name}'. Allowed: {allowed}") from None

    @property
    def rescales(self) -> bool:
        return self is FeedbackMode.GLOBAL_WEIGHTS


@dataclass
class FeedbackSet:
    fa_layers: FrozenSet[int]
    matrices: Dict[int, Matrix]
    references: Dict[int, Matrix]
    mode: FeedbackMode
    skipped_layers: Set[int] = field(default_factory=set)

    def __post_init__(self):
        if set(self.matrices) != set(self.fa_layers):
            raise FeedbackError(f"feedback matrices {sorted(self.matrices)} do not match "
                                f"fa_layers {sorted(self.fa_layers)}")
        for number in self.fa_layers:
            if self.matrices[number].shape != self.references[number].shape:
                raise FeedbackError(f"layer {number}: B shape {self.matrices[number].shape} "
                                    f"!= reference shape {self.references[number].shape}")

    def __bool__(self) -> bool:
        return bool(self.fa_layers)

    def copy(self) -> 'FeedbackSet':
        return FeedbackSet(self.fa_layers,
                           {k: v.copy() for k, v in self.matrices.items()},
                           {k: v.copy() for k, v in self.references.items()},
                           self.mode, set(self.skipped_layers))


@dataclass(frozen=True)
class FeedbackNorm:
    layer: int
    feedback_norm: float
    weight_norm: float
    norm_residual: float       # | ||B||_F - ||w||_F |
    direction_residual: float  # max | B/||B|| - W^r/||W^r|| |


def _check_layers(model: MlpModel, fa_layers: Iterable[int]) -> FrozenSet[int]:
    layers = frozenset(int(l) for l in fa_layers)
    bad = sorted(l for l in layers if not 1 <= l <= model.layer_count)
    if bad:
        raise FeedbackError(f"FA layers {bad} outside 1..{model.layer_count}")
    return layers


def sample_random_feedback(global_model: MlpModel, seed: int) -> Dict[int, Matrix]:
    """Glorot-uniform bank with one matrix per layer, drawn once per run."""
    rng = stream(seed, "feedback_bank")
    return {number: glorot_uniform(*layer.weight.shape, rng)
            for number, layer in enumerate(global_model.layers, 1)}


def init_feedback(global_model: MlpModel, fa_layers: Iterable[int], mode: FeedbackMode,
                  bank: Optional[Dict[int, Matrix]] = None, seed: Optional[int] = None) -> FeedbackSet:
    """
    Build a client's FeedbackSet at the start of a round.

    Args:
        global_model: Round-start global model W^r (read only)
        fa_layers: 1-based layer numbers that use feedback alignment
        mode: How B is produced and maintained
        bank: RandomFixed matrices from sample_random_feedback; sampled from
            ``seed`` when omitted

    Raises:
        FeedbackError: on an invalid layer number or a bank with wrong shapes, or
            RandomFixed mode with neither a bank nor a seed
    """
    layers = _check_layers(global_model, fa_layers)
    references = {l: global_model.layer(l).weight.copy() for l in layers}
    if mode is FeedbackMode.RANDOM_FIXED:
        if bank is None:
            if seed is None:
                raise FeedbackError("random_fixed feedback needs a bank or a seed")
            bank = sample_random_feedback(global_model, seed)
        missing = sorted(l for l in layers if l not in bank)
        if missing:
            raise FeedbackError(f"random feedback bank has no matrix for layers {missing}")
        matrices = {l: bank[l].copy() for l in layers}
    else:
        matrices = {l: ref.copy() for l, ref in references.items()}
    return FeedbackSet(layers, matrices, references, mode)


def rescale_feedback(fb: FeedbackSet, local: MlpModel) -> FeedbackSet:
    """B_l <- (||w_l||_F / ||W_l^r||_F) * W_l^r for every l in the FA set (in place).

    A layer whose global reference has zero norm is left unchanged and noted in
    ``fb.skipped_layers``.
    """
    if not fb.mode.rescales:
        raise FeedbackError(f"rescale requested in {fb.mode.value} mode")
    for number in sorted(fb.fa_layers):
        weight = local.layer(number).weight
        reference = fb.references[number]
        if weight.shape != reference.shape:
            raise FeedbackError(f"layer {number}: local weight {weight.shape} "
                                f"!= reference {reference.shape}")
        ref_norm = matcore.frobenius_norm(reference)
        if ref_norm == 0.0:
            if number not in fb.skipped_layers:
                fb.skipped_layers.add(number)
                log_warn("Feedback", f"Global weight of layer {number} has zero norm, rescale skipped")
            continue
        fb.matrices[number] = matcore.scale(matcore.frobenius_norm(weight) / ref_norm, reference)
    return fb


def feedback_norm_report(fb: FeedbackSet, local: MlpModel) -> List[FeedbackNorm]:
    report = []
    for number in sorted(fb.fa_layers):
        b = fb.matrices[number]
        ref = fb.references[number]
        b_norm = matcore.frobenius_norm(b)
        w_norm = matcore.frobenius_norm(local.layer(number).weight)
        ref_norm = matcore.frobenius_norm(ref)
        if b_norm > NORM_FLOOR and ref_norm > NORM_FLOOR:
            direction = matcore.max_abs(b / b_norm - ref / ref_norm)
        else:
            direction = 0.0
        report.append(FeedbackNorm(number, b_norm, w_norm, abs(b_norm - w_norm), direction))
    return report

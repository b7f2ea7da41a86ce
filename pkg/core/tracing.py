#!/usr/bin/env python3
"""
Per-step trace recording for the drift bound check.

Only used in trace mode: every local step of every client stores the layer
inputs h_l, error signals delta_l, activation derivatives f'(z_l), the weights
before and after the step and the operator each layer used to propagate its
error downward (w_l, or B_l for FA layers).
"""

import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .feedback import FeedbackSet, feedback_norm_report
from .matcore import Matrix
from .nn import ForwardTrace, GradSet, MlpModel


@dataclass
class StepTrace:
    step: int
    inputs: List[Matrix]
    deltas: List[Matrix]
    derivatives: List[Matrix]
    weights_before: List[Matrix]
    operators: List[Matrix]
    weights_after: List[Matrix] = field(default_factory=list)
    fa_layers: Tuple[int, ...] = ()


@dataclass(frozen=True)
class RescaleSample:
    round: int
    client: int
    step: int
    layer: int
    feedback_norm: float
    weight_norm: float
    norm_residual: float
    direction_residual: float


class TraceRecorder:
    """Thread-safe store of StepTraces keyed by (round, client)."""

    def __init__(self):
        self._lock = threading.Lock()
        self._steps: Dict[Tuple[int, int], List[StepTrace]] = {}
        self._rescale: List[RescaleSample] = []

    def record_step(self, round_index: int, client_id: int, step: int, model: MlpModel,
                    trace: ForwardTrace, grads: GradSet, feedback: Optional[FeedbackSet]) -> StepTrace:
        operators = []
        for number, layer in enumerate(model.layers, 1):
            if feedback is not None and number in feedback.fa_layers:
                operators.append(feedback.matrices[number].copy())
            else:
                operators.append(layer.weight.copy())
        entry = StepTrace(
            step=step,
            inputs=[h.copy() for h in trace.inputs],
            deltas=[d.copy() for d in grads.deltas],
            derivatives=[layer.activation.derivative(z)
                         for layer, z in zip(model.layers, trace.pre_activations)],
            weights_before=[layer.weight.copy() for layer in model.layers],
            operators=operators,
            fa_layers=tuple(sorted(feedback.fa_layers)) if feedback is not None else (),
        )
        with self._lock:
            self._steps.setdefault((round_index, client_id), []).append(entry)
        return entry

    def finish_step(self, entry: StepTrace, model: MlpModel) -> None:
        entry.weights_after = [layer.weight.copy() for layer in model.layers]

    def record_rescale(self, round_index: int, client_id: int, step: int,
                       feedback: FeedbackSet, model: MlpModel) -> None:
        samples = [RescaleSample(round_index, client_id, step, n.layer, n.feedback_norm,
                                 n.weight_norm, n.norm_residual, n.direction_residual)
                   for n in feedback_norm_report(feedback, model)]
        with self._lock:
            self._rescale.extend(samples)

    def steps(self, round_index: int, client_id: int) -> List[StepTrace]:
        with self._lock:
            return list(self._steps.get((round_index, client_id), []))

    def rounds(self) -> List[int]:
        with self._lock:
            return sorted({r for r, _ in self._steps})

    def clients(self, round_index: int) -> List[int]:
        with self._lock:
            return sorted(c for r, c in self._steps if r == round_index)

    @property
    def rescale_samples(self) -> List[RescaleSample]:
        with self._lock:
            return sorted(self._rescale, key=lambda s: (s.round, s.client, s.step, s.layer))

    def __len__(self) -> int:
        with self._lock:
            return sum(len(v) for v in self._steps.values())


def weight_delta(steps: List[StepTrace], layer: int, upto: int) -> Matrix:
    """w_l after step ``upto`` minus w_l before step 0."""
    if not steps:
        raise ValueError("no recorded steps")
    return steps[upto].weights_after[layer - 1] - steps[0].weights_before[layer - 1]

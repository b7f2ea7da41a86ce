#!/usr/bin/env python3
"""
Finite-difference oracle for the hand-written backward passes.

Random small networks are checked parameter by parameter against central
differences of the cross-entropy loss, and the FA backward pass with B = w is
compared against plain backpropagation.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .feedback import FeedbackMode, init_feedback
from .nn import (Activation, ForwardTrace, GradSet, MlpModel, backward_bp, backward_fa,
                 cross_entropy, forward, init_model)
from .performance_logger import log_debug
from .seeding import stream

FD_STEP = 1e-5
GRAD_TOLERANCE = 1e-6
COLLAPSE_TOLERANCE = 1e-12
KINK_MARGIN = 1e-3
MAX_REDRAWS = 100

BackwardFn = Callable[[MlpModel, ForwardTrace, np.ndarray], GradSet]


@dataclass
class GradcheckCase:
    index: int
    layer_sizes: List[int]
    activation: str
    batch: int
    max_relative_error: float
    collapse_residual: float
    redraws: int = 0


@dataclass
class GradcheckReport:
    seed: int
    cases: List[GradcheckCase] = field(default_factory=list)
    grad_tolerance: float = GRAD_TOLERANCE
    collapse_tolerance: float = COLLAPSE_TOLERANCE

    @property
    def max_relative_error(self) -> float:
        return max((c.max_relative_error for c in self.cases), default=0.0)

    @property
    def max_collapse_residual(self) -> float:
        return max((c.collapse_residual for c in self.cases), default=0.0)

    @property
    def passed(self) -> bool:
        return (self.max_relative_error < self.grad_tolerance
                and self.max_collapse_residual <= self.collapse_tolerance)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a|| + ||n||, 1e-12)"""
    denom = max(float(np.linalg.norm(analytic) + np.linalg.norm(numeric)), 1e-12)
    return float(np.linalg.norm(analytic - numeric)) / denom


def _loss(model: MlpModel, x: np.ndarray, labels: np.ndarray) -> float:
    return cross_entropy(forward(model, x).output, labels)[0]


def numeric_gradients(model: MlpModel, x: np.ndarray, labels: np.ndarray,
                      step: float = FD_STEP) -> GradSet:
    """Central differences for every weight and bias entry."""
    probe = model.copy()
    weights, biases = [], []
    for layer in probe.layers:
        for param, out in ((layer.weight, weights), (layer.bias, biases)):
            grad = np.zeros_like(param)
            flat, gflat = param.reshape(-1), grad.reshape(-1)
            for k in range(flat.size):
                original = flat[k]
                flat[k] = original + step
                plus = _loss(probe, x, labels)
                flat[k] = original - step
                minus = _loss(probe, x, labels)
                flat[k] = original
                gflat[k] = (plus - minus) / (2.0 * step)
            out.append(grad)
    return GradSet(weights, biases)


def _near_kink(model: MlpModel, x: np.ndarray) -> bool:
    trace = forward(model, x)
    for layer, z in zip(model.layers, trace.pre_activations):
        if layer.activation is Activation.RELU and np.min(np.abs(z)) < KINK_MARGIN:
            return True
    return False


def _draw_case(rng: np.random.Generator):
    depth = int(rng.integers(1, 4))
    sizes = [int(s) for s in rng.integers(2, 17, size=depth + 1)]
    activation = Activation.RELU if rng.random() < 0.5 else Activation.TANH
    batch = int(rng.integers(1, 5))
    model = init_model(sizes, activation, rng)
    for layer in model.layers:
        layer.bias = rng.normal(0.0, 0.1, size=layer.bias.shape)
    x = rng.standard_normal((sizes[0], batch))
    labels = rng.integers(0, sizes[-1], size=batch)
    return sizes, activation, batch, model, x, labels


def run_gradcheck(cases: int = 50, seed: int = 0,
                  backward_fn: Optional[BackwardFn] = None) -> GradcheckReport:
    """
    Check ``backward_fn`` (backward_bp by default) on random networks.

    Networks have 1 to 3 layers of 2 to 16 units with ReLU or Tanh hidden
    activations. ReLU draws with a pre-activation within 1e-3 of the kink are
    redrawn so finite differences stay on one side of it.
    """
    backward_fn = backward_fn or backward_bp
    report = GradcheckReport(seed=seed)
    for index in range(cases):
        rng = stream(seed, "gradcheck", index)
        redraws = 0
        sizes, activation, batch, model, x, labels = _draw_case(rng)
        while _near_kink(model, x) and redraws < MAX_REDRAWS:
            redraws += 1
            sizes, activation, batch, model, x, labels = _draw_case(rng)

        trace = forward(model, x)
        _, dlogits = cross_entropy(trace.output, labels)
        analytic = backward_fn(model, trace, dlogits)
        numeric = numeric_gradients(model, x, labels)
        errors = []
        for aw, nw, ab, nb in zip(analytic.weights, numeric.weights, analytic.biases, numeric.biases):
            errors.append(relative_error(np.concatenate([aw.ravel(), ab]),
                                         np.concatenate([nw.ravel(), nb])))

        # FA with B = w on every layer must reproduce the BP gradients
        feedback = init_feedback(model, range(1, model.layer_count + 1), FeedbackMode.GLOBAL_WEIGHTS)
        fa = backward_fa(model, feedback, trace, dlogits)
        bp = backward_bp(model, trace, dlogits)
        collapse = float(np.max(np.abs(fa.flatten() - bp.flatten())))

        case = GradcheckCase(index, sizes, activation.value, batch, max(errors), collapse, redraws)
        report.cases.append(case)
        log_debug("Gradcheck", f"case {index}: sizes={sizes} {activation.value} "
                               f"rel_err={case.max_relative_error:.2e} collapse={collapse:.1e}")
    return report

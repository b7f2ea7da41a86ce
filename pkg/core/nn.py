#!/usr/bin/env python3
"""
Dense multilayer network with a hand-written backward pass.

Layers are numbered 1..L in the public API (feedback sets, reports) and stored
0-based in ``MlpModel.layers``. Batches are column-stacked: ``x`` has shape
(input_dim, batch).

Averaging convention: ``cross_entropy`` already divides ``dlogits`` by the batch
size, so the backward passes sum per-sample outer products and the resulting
dW/db are batch averages.
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import matcore
from .errors import FeedbackError, ShapeMismatchError
from .matcore import Matrix
from .run_store import write_json

if TYPE_CHECKING:
    from .feedback import FeedbackSet

MODEL_FORMAT = "fedalign-mlp"


class Activation(Enum):
    """Elementwise activation f and its derivative f'."""
    RELU = "relu"
    TANH = "tanh"
    IDENTITY = "identity"

    @classmethod
    def from_string(cls, name: str) -> 'Activation':
        try:
            return cls(name.lower())
        except ValueError:
            allowed = ", ".join(a.value for a in cls)
            raise ValueError(f"Unknown activation '{name}'. Allowed: {allowed}") from None

    def apply(self, z: Matrix) -> Matrix:
        if self is Activation.RELU:
            return np.maximum(z, 0.0)
        if self is Activation.TANH:
            return np.tanh(z)
        return z.copy()

    def derivative(self, z: Matrix) -> Matrix:
        # ReLU'(0) is defined as 0
        if self is Activation.RELU:
            return (z > 0.0).astype(np.float64)
        if self is Activation.TANH:
            t = np.tanh(z)
            return 1.0 - t * t
        return np.ones_like(z)


@dataclass
class DenseLayer:
    weight: Matrix          # (out, in)
    bias: np.ndarray        # (out,)
    activation: Activation

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise ShapeMismatchError("DenseLayer", self.weight.shape, detail="weight must be 2-D")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeMismatchError("DenseLayer", self.weight.shape, self.bias.shape,
                                     "bias length must equal weight rows")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.weight.shape

    def copy(self) -> 'DenseLayer':
        return DenseLayer(self.weight.copy(), self.bias.copy(), self.activation)


@dataclass
class MlpModel:
    layers: List[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("MlpModel needs at least one layer")
        for idx in range(1, len(self.layers)):
            prev_out = self.layers[idx - 1].weight.shape[0]
            cur_in = self.layers[idx].weight.shape[1]
            if prev_out != cur_in:
                raise ShapeMismatchError("MlpModel", self.layers[idx - 1].weight.shape,
                                         self.layers[idx].weight.shape,
                                         f"layer {idx + 1} input does not chain")

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def layer(self, number: int) -> DenseLayer:
        """1-based layer access."""
        if not 1 <= number <= self.layer_count:
            raise IndexError(f"layer {number} outside 1..{self.layer_count}")
        return self.layers[number - 1]

    def copy(self) -> 'MlpModel':
        return MlpModel([layer.copy() for layer in self.layers])

    def parameter_count(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)


@dataclass
class ForwardTrace:
    inputs: List[Matrix]            # h_l, the input of layer l
    pre_activations: List[Matrix]   # z_l
    output: Matrix                  # f_L(z_L)

    def __len__(self) -> int:
        return len(self.pre_activations)


@dataclass
class GradSet:
    weights: List[Matrix]
    biases: List[np.ndarray]
    deltas: List[Matrix] = field(default_factory=list)  # error signals delta_l, batch-scaled

    def copy(self) -> 'GradSet':
        return GradSet([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                       [d.copy() for d in self.deltas])

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)


@dataclass
class OptimizerState:
    """SGD with heavy-ball momentum and decoupled-from-bias weight decay."""
    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    weight_velocity: List[Matrix] = field(default_factory=list)
    bias_velocity: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight decay must be >= 0, got {self.weight_decay}")

    @classmethod
    def init(cls, model: MlpModel, lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0) -> 'OptimizerState':
        return cls(lr=lr, momentum=momentum, weight_decay=weight_decay,
                   weight_velocity=[np.zeros_like(l.weight) for l in model.layers],
                   bias_velocity=[np.zeros_like(l.bias) for l in model.layers])


def init_model(layer_sizes: Sequence[int], activation: Activation,
               rng: np.random.Generator, output_activation: Activation = Activation.IDENTITY) -> MlpModel:
    """Glorot-uniform weights, zero biases; the last layer uses ``output_activation``."""
    if len(layer_sizes) < 2:
        raise ValueError("layer_sizes needs at least input and output sizes")
    layers = []
    count = len(layer_sizes) - 1
    for idx in range(count):
        fan_in, fan_out = layer_sizes[idx], layer_sizes[idx + 1]
        weight = glorot_uniform(fan_out, fan_in, rng)
        act = output_activation if idx == count - 1 else activation
        layers.append(DenseLayer(weight, np.zeros(fan_out), act))
    return MlpModel(layers)


def glorot_uniform(rows: int, cols: int, rng: np.random.Generator) -> Matrix:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def forward(model: MlpModel, x: Matrix) -> ForwardTrace:
    """Run the network on a column-stacked batch and keep every h_l and z_l."""
    if x.ndim != 2 or x.shape[0] != model.input_dim:
        raise ShapeMismatchError("forward", x.shape, (model.input_dim, -1),
                                 "input rows must equal the first layer's input dim")
    inputs: List[Matrix] = []
    pre: List[Matrix] = []
    h = x
    for layer in model.layers:
        inputs.append(h)
        z = matcore.matmul(layer.weight, h) + layer.bias[:, None]
        pre.append(z)
        h = layer.activation.apply(z)
    return ForwardTrace(inputs=inputs, pre_activations=pre, output=h)


def _backward(model: MlpModel, trace: ForwardTrace, dlogits: Matrix,
              feedback_matrices: Dict[int, Matrix]) -> GradSet:
    if dlogits.shape != trace.output.shape:
        raise ShapeMismatchError("backward", dlogits.shape, trace.output.shape,
                                 "dlogits must match the network output")
    count = model.layer_count
    weights: List[Optional[Matrix]] = [None] * count
    biases: List[Optional[np.ndarray]] = [None] * count
    deltas: List[Optional[Matrix]] = [None] * count

    last = model.layers[-1]
    delta = matcore.hadamard(dlogits, last.activation.derivative(trace.pre_activations[-1]))
    for idx in range(count - 1, -1, -1):
        deltas[idx] = delta
        weights[idx] = matcore.matmul(delta, matcore.transpose(trace.inputs[idx]))
        biases[idx] = matcore.row_sum(delta)
        if idx == 0:
            break
        # layer number idx+1 propagates its error to layer idx
        operator = feedback_matrices.get(idx + 1, model.layers[idx].weight)
        below = model.layers[idx - 1]
        back = matcore.matmul(matcore.transpose(operator), delta)
        delta = matcore.hadamard(back, below.activation.derivative(trace.pre_activations[idx - 1]))
    return GradSet(weights=weights, biases=biases, deltas=deltas)


def backward_bp(model: MlpModel, trace: ForwardTrace, dlogits: Matrix) -> GradSet:
    """Standard backpropagation: delta_{l-1} = (w_l^T delta_l) * f'(z_{l-1})."""
    return _backward(model, trace, dlogits, {})


def backward_fa(model: MlpModel, feedback: 'FeedbackSet', trace: ForwardTrace,
                dlogits: Matrix) -> GradSet:
    """Backward pass where every layer l in the feedback set propagates through B_l.

    Only the propagation path changes; dW_l and db_l use the incoming delta_l
    for every layer.
    """
    matrices = feedback.matrices
    for number, b in matrices.items():
        if not 1 <= number <= model.layer_count:
            raise FeedbackError(f"feedback references layer {number}, model has {model.layer_count}")
        expected = model.layer(number).weight.shape
        if b.shape != expected:
            raise FeedbackError(f"feedback for layer {number} has shape {b.shape}, expected {expected}")
    return _backward(model, trace, dlogits, matrices)


def cross_entropy(logits: Matrix, labels: np.ndarray) -> Tuple[float, Matrix]:
    """Mean negative log-softmax over the batch and its gradient w.r.t. logits.

    Returns:
        (loss, dlogits) with dlogits = (softmax - onehot) / batch.
    """
    classes, batch = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (batch,):
        raise ShapeMismatchError("cross_entropy", logits.shape, labels.shape,
                                 "one label per column expected")
    if batch and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=0, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    cols = np.arange(batch)
    loss = float(-log_probs[labels, cols].mean())
    probs = softmax(logits)
    probs[labels, cols] -= 1.0
    return loss, probs / batch


def softmax(logits: Matrix) -> Matrix:
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def sgd_step(model: MlpModel, grads: GradSet, opt: OptimizerState) -> MlpModel:
    """In-place momentum SGD step; weight decay applies to weights only."""
    if not opt.weight_velocity:
        opt.weight_velocity = [np.zeros_like(l.weight) for l in model.layers]
        opt.bias_velocity = [np.zeros_like(l.bias) for l in model.layers]
    for idx, layer in enumerate(model.layers):
        gw, gb = grads.weights[idx], grads.biases[idx]
        if gw.shape != layer.weight.shape:
            raise ShapeMismatchError("sgd_step", gw.shape, layer.weight.shape)
        vw = opt.momentum * opt.weight_velocity[idx] + gw + opt.weight_decay * layer.weight
        vb = opt.momentum * opt.bias_velocity[idx] + gb
        opt.weight_velocity[idx] = vw
        opt.bias_velocity[idx] = vb
        layer.weight = layer.weight - opt.lr * vw
        layer.bias = layer.bias - opt.lr * vb
    return model


def evaluate(model: MlpModel, x: Matrix, labels: np.ndarray) -> Tuple[float, float]:
    """(mean cross-entropy, accuracy) of the model on a column-stacked set."""
    if x.shape[1] == 0:
        return 0.0, 0.0
    output = forward(model, x).output
    loss, _ = cross_entropy(output, labels)
    accuracy = float(np.mean(np.argmax(output, axis=0) == labels))
    return loss, accuracy


def penultimate_features(model: MlpModel, x: Matrix) -> np.ndarray:
    """Input of the last layer, one row per sample."""
    return forward(model, x).inputs[-1].T.copy()


def flatten_layer(model: MlpModel, number: int) -> np.ndarray:
    layer = model.layer(number)
    return np.concatenate([layer.weight.ravel(), layer.bias])


def flatten_params(model: MlpModel) -> np.ndarray:
    return np.concatenate([flatten_layer(model, n) for n in range(1, model.layer_count + 1)])


def layer_deltas(updated: MlpModel, reference: MlpModel) -> List[np.ndarray]:
    """Per-layer flattened (weight, bias) update of ``updated`` relative to ``reference``."""
    if updated.layer_count != reference.layer_count:
        raise ShapeMismatchError("layer_deltas", (updated.layer_count,), (reference.layer_count,))
    return [flatten_layer(updated, n) - flatten_layer(reference, n)
            for n in range(1, updated.layer_count + 1)]


def model_delta(updated: MlpModel, reference: MlpModel) -> np.ndarray:
    """Full flattened update of ``updated`` relative to ``reference``."""
    return np.concatenate(layer_deltas(updated, reference))


def model_to_dict(model: MlpModel) -> Dict:
    return {
        "format": MODEL_FORMAT,
        "layers": [
            {
                "rows": int(layer.weight.shape[0]),
                "cols": int(layer.weight.shape[1]),
                "activation": layer.activation.value,
                "weight": layer.weight.ravel().tolist(),
                "bias": layer.bias.tolist(),
            }
            for layer in model.layers
        ],
    }


def model_from_dict(data: Dict) -> MlpModel:
    if data.get("format") != MODEL_FORMAT:
        raise ValueError(f"Not a {MODEL_FORMAT} document (format={data.get('format')!r})")
    layers = []
    for idx, entry in enumerate(data["layers"], 1):
        rows, cols = int(entry["rows"]), int(entry["cols"])
        weight = np.array(entry["weight"], dtype=np.float64)
        if weight.size != rows * cols:
            raise ShapeMismatchError("load_model", (weight.size,), (rows * cols,),
                                     f"layer {idx} weight length")
        layers.append(DenseLayer(weight.reshape(rows, cols),
                                 np.array(entry["bias"], dtype=np.float64),
                                 Activation.from_string(entry["activation"])))
    return MlpModel(layers)


def save_model(path: Union[str, Path], model: MlpModel) -> Path:
    return write_json(path, model_to_dict(model))


def load_model(path: Union[str, Path]) -> MlpModel:
    with open(path, 'r', encoding='utf-8') as f:
        return model_from_dict(json.load(f))

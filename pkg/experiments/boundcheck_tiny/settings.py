#!/usr/bin/env python3
"""
FEDALIGN EXPERIMENT: BOUND CHECK
================================

Two clients, an 8-unit hidden layer and three local SGD steps per round:
small enough to record every step for ``main.py boundcheck``.
"""

SEED = 0

DATASET = {
    "kind": "blobs",
    "classes": 3,
    "dim": 5,
    "per_class": 20,
    "spread": 1.0,
    "test_fraction": 0.0,
}

PARTITION = {
    "n_clients": 2,
    "beta": 0.5,
    "redraw_empty": True,
}

MODEL = {
    "hidden": [8],
    "activation": "relu",
}

TRAIN = {
    "rounds": 5,
    "local_steps": 3,
    "lr": 0.05,
    "batch_size": 4,
    "backward_mode": "flfa",
    "layer_strategy": "fixed",
    "fixed_layer": 2,
    "start_layers": [2],
}

METRICS = {
    "trace_mode": True,
    "record_updates": False,
}

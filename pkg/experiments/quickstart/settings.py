#!/usr/bin/env python3
"""
FEDALIGN EXPERIMENT: QUICKSTART
===============================

Two rounds on a small synthetic problem. Copy this folder to start a new
experiment; every key left out falls back to its default.
"""

SEED = 0

# =============================================================================
# DATA
# =============================================================================

DATASET = {
    "kind": "blobs",
    "classes": 3,
    "dim": 6,
    "per_class": 30,
    "spread": 1.0,
    "test_fraction": 0.2,
}

PARTITION = {
    "n_clients": 4,
    "beta": 0.5,
    "redraw_empty": True,
}

# =============================================================================
# MODEL AND TRAINING
# =============================================================================

MODEL = {
    "hidden": [8],
    "activation": "relu",
}

TRAIN = {
    "rounds": 2,
    "local_epochs": 1,
    "lr": 0.05,
    "batch_size": 16,
    "backward_mode": "flfa",
    "layer_strategy": "lowest",
}

METRICS = {
    "representation": True,
    "assumptions": True,
}

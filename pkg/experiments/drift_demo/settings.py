#!/usr/bin/env python3
"""
FEDALIGN EXPERIMENT: DRIFT DEMO
===============================

Paired BP / FLFA runs on five-class Gaussian blobs split across ten clients
with strong label skew. ``main.py compare --config drift_demo`` reports the
per-round drift reduction and final accuracy for every seed.
"""

SEED = 0

# =============================================================================
# DATA (20-dimensional blobs, Dirichlet beta 0.3 over 10 clients)
# =============================================================================

DATASET = {
    "kind": "blobs",
    "classes": 5,
    "dim": 20,
    "per_class": 100,
    "spread": 1.0,
    "test_fraction": 0.2,
}

PARTITION = {
    "n_clients": 10,
    "beta": 0.3,
    "redraw_empty": True,
    "max_redraws": 10,
}

# =============================================================================
# MODEL AND TRAINING (MLP 20-32-5, full participation, 3 local epochs)
# =============================================================================

MODEL = {
    "hidden": [32],
    "activation": "relu",
}

TRAIN = {
    "rounds": 50,
    "local_epochs": 3,
    "lr": 0.05,
    "batch_size": 32,
    "client_fraction": 1.0,
    "algorithm": "fedavg",
    "backward_mode": "flfa",
    "feedback_mode": "global_weights",
    "layer_strategy": "lowest",
}

METRICS = {
    "record_updates": False,
    "track_gradient_gap": True,
}

# =============================================================================
# COMPARISON
# =============================================================================

COMPARE = {
    "seeds": [0, 1, 2, 3, 4],
    "ablations": ["norescale", "random"],
}

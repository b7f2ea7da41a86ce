"""
FedAlign Core Modules
=====================

Federated learning simulator with per-layer feedback alignment, client drift
metrics and the numerical checks that back them.
"""

from .config import RunConfig
from .data import Dataset, PartitionSpec, gen_blobs, partition_dirichlet
from .federation import BackwardMode, LayerStrategy, TrainConfig, run_training
from .feedback import FeedbackMode
from .nn import Activation, MlpModel, init_model

__all__ = ['RunConfig', 'Dataset', 'PartitionSpec', 'gen_blobs', 'partition_dirichlet',
           'BackwardMode', 'LayerStrategy', 'TrainConfig', 'run_training', 'FeedbackMode',
           'Activation', 'MlpModel', 'init_model']

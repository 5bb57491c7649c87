from .data import Dataset, load_idx_dataset, synth_dataset, write_idx
from .layers import adaptive_avg_pool
from .model import Model, set_random_projection
from .receptive import receptive_field
from .train import TrainConfig, evaluate, train

__all__ = [
    "Dataset", "Model", "TrainConfig", "adaptive_avg_pool", "evaluate", "load_idx_dataset",
    "receptive_field", "set_random_projection", "synth_dataset", "train", "write_idx",
]

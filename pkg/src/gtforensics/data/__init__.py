from .corrupt import KINDS, CorruptionSpec, corrupt
from .metrics import UndefinedMetricError, accuracy, auc
from .synthetic import SyntheticSample, gen_dataset, read_dataset, write_dataset

__all__ = [
    "KINDS", "CorruptionSpec", "corrupt", "UndefinedMetricError", "accuracy", "auc",
    "SyntheticSample", "gen_dataset", "read_dataset", "write_dataset",
]

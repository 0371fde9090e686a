"""Datasets, training, evaluation and reporting."""
from .dataset import (DatasetBundle, DatasetError, default_gen_config, generate_dataset,
                      split_dataset)
from .evaluation import (ErrorReport, evaluate, export_report, idw_sample, measure_speedup,
                         predict_bundle, read_summary, rel_l2, select_cases)
from .training import TrainingDiverged, TrainResult, smoothed, train

__all__ = [
    "DatasetBundle", "DatasetError", "default_gen_config", "generate_dataset", "split_dataset",
    "ErrorReport", "evaluate", "export_report", "idw_sample", "measure_speedup", "predict_bundle",
    "read_summary", "rel_l2", "select_cases", "TrainingDiverged", "TrainResult", "smoothed", "train",
]

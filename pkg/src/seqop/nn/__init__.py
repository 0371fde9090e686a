"""Small numpy network kernel: dense and recurrent layers, Adam, scaled MSE."""
import contextlib
import os

from threadpoolctl import threadpool_limits

from .layers import (dense_backward, dense_forward, dense_param_count, glorot, gru_param_count,
                     gru_step, gru_step_backward, lstm_param_count, lstm_step,
                     lstm_step_backward, run_sequence, run_sequence_backward, sigmoid)
from .optim import FieldScaler, adam_update, scaled_mse
from .store import ParamStore


def deterministic_requested() -> bool:
    return os.environ.get("SEQOP_DETERMINISTIC", "") not in ("", "0")


@contextlib.contextmanager
def reduction_mode(deterministic: bool | None = None):
    """Pin BLAS to one thread so reductions run in a fixed order."""
    if deterministic is None:
        deterministic = deterministic_requested()
    if deterministic:
        with threadpool_limits(limits=1):
            yield
    else:
        yield


__all__ = [
    "ParamStore", "FieldScaler", "adam_update", "scaled_mse", "dense_forward", "dense_backward",
    "lstm_step", "lstm_step_backward", "gru_step", "gru_step_backward", "run_sequence",
    "run_sequence_backward", "glorot", "sigmoid", "dense_param_count", "lstm_param_count",
    "gru_param_count", "reduction_mode", "deterministic_requested",
]

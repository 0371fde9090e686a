"""Mini-batch Adam training of a DeepONet on a dataset view."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import nn
from ..operator_net import DeepONetModel, InputScaling, backward_scaled, forward_scaled
from .dataset import DatasetBundle


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch, last_good):
        self.epoch = epoch
        self.last_good = last_good
        where = f"last good checkpoint {last_good}" if last_good else "no checkpoint written"
        super().__init__(f"non-finite loss at epoch {epoch}; {where}")


@dataclass
class TrainResult:
    model: DeepONetModel
    losses: list = field(default_factory=list)  # mean scaled MSE per epoch

    @property
    def initial_loss(self):
        return self.losses[0]

    @property
    def final_loss(self):
        return self.losses[-1]


def smoothed(losses, window=100):
    x = np.asarray(losses, dtype=float)
    if x.size < window:
        return x.copy()
    c = np.concatenate(([0.0], np.cumsum(x)))
    return (c[window:] - c[:-window]) / window


def train(model: DeepONetModel, data: DatasetBundle, epochs: int, batch: int = 64,
          lr: float = 1e-3, seed: int = 0, checkpoint_dir=None, checkpoint_every: int = 0,
          log=None, deterministic: bool | None = None, fit_scaling: bool = True) -> TrainResult:
    """Train in place. Scalings are fitted on ``data`` (the training view) only."""
    if epochs < 1 or batch < 1:
        raise ValueError("epochs and batch must be positive")
    if lr < 0:
        raise ValueError("lr must be non-negative")
    if fit_scaling:
        model.scaling = InputScaling.fit(data.coords, data.histories, data.fields)
    model.coords = data.coords.copy()
    dt = model.params.dtype
    Xs = model.scaling.coords(data.coords, dt)
    Ms = model.scaling.histories(data.histories, dt)
    Ys = model.scaling.field.transform(data.fields.astype(np.float64)).astype(dt)
    unit = nn.FieldScaler(0.0, 1.0)  # targets are already scaled
    rng = np.random.default_rng(seed)
    n = len(data)
    losses = []
    last_good = None
    with nn.reduction_mode(deterministic):
        for epoch in range(1, epochs + 1):
            order = rng.permutation(n)
            total = 0.0
            for s in range(0, n, batch):
                idx = order[s:s + batch]
                out, cache = forward_scaled(model, Ms[idx], Xs)
                loss, dout = nn.scaled_mse(out, Ys[idx], unit, with_grad=True)
                if not np.isfinite(loss):
                    raise TrainingDiverged(epoch, last_good)
                grads = backward_scaled(model, cache, dout)
                try:
                    nn.adam_update(model.params, grads, lr)
                except FloatingPointError as exc:
                    raise TrainingDiverged(epoch, last_good) from exc
                total += loss * idx.size
            losses.append(total / n)
            if log:
                log(epoch, losses[-1])
            if checkpoint_dir and checkpoint_every and epoch % checkpoint_every == 0:
                last_good = Path(checkpoint_dir) / f"epoch_{epoch:07d}"
                _stamp(model, data, epochs, batch, lr, seed, epoch, losses)
                model.save(last_good)
    _stamp(model, data, epochs, batch, lr, seed, epochs, losses)
    return TrainResult(model, losses)


def _stamp(model, data, epochs, batch, lr, seed, epoch, losses):
    model.metadata.update({
        "problem": data.problem,
        "data_config_hash": data.config_hash,
        "n_train": len(data),
        "epochs": epochs,
        "epochs_done": epoch,
        "batch": batch,
        "lr": lr,
        "train_seed": seed,
        "initial_loss": losses[0],
        "final_loss": losses[-1],
    })

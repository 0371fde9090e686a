"""Adam and the min-max scaled MSE loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .store import ParamStore


@dataclass(frozen=True)
class FieldScaler:
    lo: float
    hi: float
    mode: str = "minmax"

    def __post_init__(self):
        if self.mode != "minmax":
            raise ValueError(f"unsupported scaler mode {self.mode!r}")
        if not self.hi > self.lo:
            raise ValueError(f"scaler needs hi > lo, got lo={self.lo} hi={self.hi}")

    @classmethod
    def fit(cls, values) -> "FieldScaler":
        v = np.asarray(values)
        lo, hi = float(v.min()), float(v.max())
        if not hi > lo:
            raise ValueError(f"cannot scale constant targets (all values {lo})")
        return cls(lo, hi)

    @property
    def span(self):
        return self.hi - self.lo

    def transform(self, x):
        return (x - self.lo) / self.span

    def inverse(self, y):
        return y * self.span + self.lo

    def to_dict(self):
        return {"mode": self.mode, "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["lo"]), float(d["hi"]), d.get("mode", "minmax"))


def scaled_mse(pred, target, scaler: FieldScaler, with_grad=False):
    """Mean over all entries of the squared difference of min-max scaled values.

    With ``with_grad`` returns ``(loss, d loss / d pred)``.
    """
    pred = np.asarray(pred)
    if pred.shape != np.shape(target):
        raise ValueError(f"pred {pred.shape} and target {np.shape(target)} differ")
    diff = (pred - target) / pred.dtype.type(scaler.span)
    loss = float(np.mean(diff * diff, dtype=np.float64))
    if not with_grad:
        return loss
    grad = diff * pred.dtype.type(2.0 / (scaler.span * diff.size))
    return loss, grad


def adam_update(store: ParamStore, grads: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam step over every entry of ``store`` (in place)."""
    if set(grads) != set(store.names):
        missing = sorted(set(store.names) ^ set(grads))
        raise KeyError(f"gradient set does not match store: {missing}")
    for name in store.names:
        g = grads[name]
        if g.shape != store[name].shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, expected {store[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    store.step += 1
    t = store.step
    dt = store.dtype.type
    a = dt(lr * np.sqrt(1.0 - beta2 ** t) / (1.0 - beta1 ** t))
    b1, b2 = dt(beta1), dt(beta2)
    # eps scaled so the step equals lr * m_hat / (sqrt(v_hat) + eps)
    e = dt(eps * np.sqrt(1.0 - beta2 ** t))
    for name in store.names:
        g = grads[name].astype(store.dtype, copy=False)
        m, v = store.moments(name)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        store[name][...] -= a * m / (np.sqrt(v) + e)
    return store

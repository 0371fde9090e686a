"""DeepONet with a dense or a recurrent (LSTM / GRU) branch.

The branch maps a 101-step load history to ``b ∈ R^HD``, the trunk maps a
coordinate pair to ``t ∈ R^HD`` and the output is ``b · t + β``. Hidden
layers use tanh, the last layer of each network is linear. The recurrent
branch is an encoder-decoder stack: two sequence-returning layers followed by
one layer that returns only its final state, of width HD.

The model owns its input and output scalings (coordinates to [-1, 1] per
axis, histories standardized, fields min-max scaled) so a checkpoint is
self-contained.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .nn import FieldScaler, ParamStore

VARIANTS = ("fnn", "lstm", "gru")
SEQ_LEN = 101
FORMAT_VERSION = 1


@dataclass(frozen=True)
class DeepONetConfig:
    variant: str
    hd: int
    branch_widths: tuple
    trunk_widths: tuple
    seq_len: int = SEQ_LEN

    def __post_init__(self):
        object.__setattr__(self, "branch_widths", tuple(int(w) for w in self.branch_widths))
        object.__setattr__(self, "trunk_widths", tuple(int(w) for w in self.trunk_widths))
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if min(self.branch_widths + self.trunk_widths + (self.hd, self.seq_len)) < 1:
            raise ValueError("all widths must be positive")
        if self.trunk_widths[0] != 2 or self.trunk_widths[-1] != self.hd:
            raise ValueError(f"trunk widths {self.trunk_widths} must start at 2 and end at HD={self.hd}")
        if self.branch_widths[-1] != self.hd:
            raise ValueError(f"branch output {self.branch_widths[-1]} != HD={self.hd}")
        if self.variant == "fnn":
            if self.branch_widths[0] != self.seq_len:
                raise ValueError(f"fnn branch input {self.branch_widths[0]} != sequence length {self.seq_len}")
        elif len(self.branch_widths) < 1:
            raise ValueError("recurrent branch needs at least one layer")

    @classmethod
    def default(cls, variant: str, **overrides) -> "DeepONetConfig":
        """Reference architectures: HD=100 dense, HD=101 with a 256/256/HD recurrent branch."""
        if variant == "fnn":
            hd = overrides.pop("hd", 100)
            branch = (SEQ_LEN, 100, 100, 100, 100, 100, hd)
        elif variant in ("lstm", "gru"):
            hd = overrides.pop("hd", 101)
            branch = (256, 256, hd)
        else:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        kw = dict(variant=variant, hd=hd, branch_widths=branch,
                  trunk_widths=(2, 100, 100, 100, 100, 100, hd))
        kw.update(overrides)
        return cls(**kw)

    @property
    def recurrent(self):
        return self.variant != "fnn"

    def to_dict(self):
        d = asdict(self)
        d["branch_widths"] = list(self.branch_widths)
        d["trunk_widths"] = list(self.trunk_widths)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["variant"], d["hd"], d["branch_widths"], d["trunk_widths"], d.get("seq_len", SEQ_LEN))


def closed_form_count(cfg: DeepONetConfig, include_beta=True) -> int:
    trunk = sum(nn.dense_param_count(a, b) for a, b in zip(cfg.trunk_widths[:-1], cfg.trunk_widths[1:]))
    if cfg.recurrent:
        per = nn.lstm_param_count if cfg.variant == "lstm" else nn.gru_param_count
        ins = (1,) + cfg.branch_widths[:-1]
        branch = sum(per(i, h) for i, h in zip(ins, cfg.branch_widths))
    else:
        bw = cfg.branch_widths
        branch = sum(nn.dense_param_count(a, b) for a, b in zip(bw[:-1], bw[1:]))
    return trunk + branch + (1 if include_beta else 0)


@dataclass
class InputScaling:
    coord_lo: tuple = (0.0, 0.0)
    coord_hi: tuple = (1.0, 1.0)
    hist_mean: float = 0.0
    hist_std: float = 1.0
    field: FieldScaler = field(default_factory=lambda: FieldScaler(0.0, 1.0))

    def __post_init__(self):
        if not all(h > l for l, h in zip(self.coord_lo, self.coord_hi)):
            raise ValueError(f"coordinate range {self.coord_lo} -> {self.coord_hi} is empty on some axis")
        if not self.hist_std > 0:
            raise ValueError("history std must be positive")

    @classmethod
    def fit(cls, coords, histories, fields) -> "InputScaling":
        coords = np.asarray(coords, dtype=np.float64)
        lo, hi = coords.min(axis=0), coords.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1.0)  # degenerate axis (e.g. y of the 1D slice) maps to -1
        h = np.asarray(histories, dtype=np.float64)
        std = float(h.std())
        return cls(tuple(map(float, lo)), tuple(map(float, hi)), float(h.mean()),
                   std if std > 0 else 1.0, FieldScaler.fit(np.asarray(fields, dtype=np.float64)))

    def coords(self, X, dtype):
        lo, hi = np.asarray(self.coord_lo), np.asarray(self.coord_hi)
        return (2.0 * (np.asarray(X, dtype=np.float64) - lo) / (hi - lo) - 1.0).astype(dtype)

    def histories(self, m, dtype):
        return ((np.asarray(m, dtype=np.float64) - self.hist_mean) / self.hist_std).astype(dtype)

    def to_dict(self):
        return {"coord_lo": list(self.coord_lo), "coord_hi": list(self.coord_hi),
                "hist_mean": self.hist_mean, "hist_std": self.hist_std, "field": self.field.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["coord_lo"]), tuple(d["coord_hi"]), float(d["hist_mean"]),
                   float(d["hist_std"]), FieldScaler.from_dict(d["field"]))


@dataclass
class DeepONetModel:
    config: DeepONetConfig
    params: ParamStore
    seed: int
    scaling: InputScaling = field(default_factory=InputScaling)
    metadata: dict = field(default_factory=dict)
    coords: np.ndarray | None = None  # trunk coordinates of the training mesh, for prediction

    @property
    def beta(self):
        return self.params["beta"]

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        block = {
            "format_version": FORMAT_VERSION,
            "config": self.config.to_dict(),
            "seed": self.seed,
            "scaling": self.scaling.to_dict(),
            "metadata": self.metadata,
        }
        if self.coords is not None:
            c = np.ascontiguousarray(self.coords, dtype="<f4")
            (out / "coords.bin").write_bytes(c.tobytes())
            block["coords"] = {"file": "coords.bin", "shape": list(c.shape), "dtype": "<f4"}
        (out / "model.json").write_text(json.dumps(block, indent=1, sort_keys=True) + "\n")
        self.params.save(out / "params")

    @classmethod
    def load(cls, model_dir) -> "DeepONetModel":
        d = Path(model_dir)
        path = d / "model.json"
        if not path.is_file():
            raise FileNotFoundError(f"no model checkpoint at {d}")
        block = json.loads(path.read_text())
        if block.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {block.get('format_version')!r}")
        model = cls(DeepONetConfig.from_dict(block["config"]), ParamStore.load(d / "params"),
                    block["seed"], InputScaling.from_dict(block["scaling"]), block.get("metadata", {}))
        if "coords" in block:
            spec = block["coords"]
            raw = (d / spec["file"]).read_bytes()
            model.coords = np.frombuffer(raw, dtype=spec["dtype"]).reshape(spec["shape"]).astype(np.float32)
        if count_params(model) != closed_form_count(model.config):
            raise ValueError("checkpoint parameters do not match its config")
        return model


def build_model(cfg: DeepONetConfig, seed: int, dtype=np.float32) -> DeepONetModel:
    rng = np.random.default_rng(seed)
    store = ParamStore(dtype)
    if cfg.recurrent:
        gates = 4 if cfg.variant == "lstm" else 3
        n_in = 1
        for k, h in enumerate(cfg.branch_widths):
            store.add(f"branch.{k}.W", nn.glorot(rng, n_in, gates * h, dtype=dtype))
            store.add(f"branch.{k}.U", nn.glorot(rng, h, gates * h, dtype=dtype))
            b = np.zeros(gates * h, dtype)
            if cfg.variant == "lstm":
                b[h:2 * h] = 1.0
            store.add(f"branch.{k}.b", b)
            n_in = h
    else:
        _add_dense(store, rng, "branch", cfg.branch_widths, dtype)
    _add_dense(store, rng, "trunk", cfg.trunk_widths, dtype)
    store.add("beta", np.zeros(1, dtype))
    model = DeepONetModel(cfg, store, int(seed))
    assert count_params(model) == closed_form_count(cfg)
    return model


def _add_dense(store, rng, prefix, widths, dtype):
    for k, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        store.add(f"{prefix}.{k}.W", nn.glorot(rng, a, b, dtype=dtype))
        store.add(f"{prefix}.{k}.b", np.zeros(b, dtype))


def count_params(model: DeepONetModel, include_beta=True) -> int:
    n = model.params.count()
    return n if include_beta else n - model.params["beta"].size


def subnet_count(model: DeepONetModel, prefix: str) -> int:
    return int(sum(v.size for k, v in model.params.items() if k.startswith(prefix + ".")))


# ---- forward / backward in scaled space -------------------------------------

def _dense_stack(store, prefix, n_layers, X):
    caches = []
    for k in range(n_layers):
        act = "identity" if k == n_layers - 1 else "tanh"
        X, c = nn.dense_forward(store[f"{prefix}.{k}.W"], store[f"{prefix}.{k}.b"], X, act)
        caches.append(c)
    return X, caches


def _dense_stack_backward(prefix, caches, dY, grads):
    for k in range(len(caches) - 1, -1, -1):
        dW, db, dY = nn.dense_backward(caches[k], dY)
        grads[f"{prefix}.{k}.W"], grads[f"{prefix}.{k}.b"] = dW, db
    return dY


def branch_forward(model, m_scaled):
    cfg, p = model.config, model.params
    if not cfg.recurrent:
        return _dense_stack(p, "branch", len(cfg.branch_widths) - 1, m_scaled)
    X = m_scaled[:, :, None]
    caches = []
    last = len(cfg.branch_widths) - 1
    for k in range(last + 1):
        X, c = nn.run_sequence(cfg.variant, p[f"branch.{k}.W"], p[f"branch.{k}.U"],
                               p[f"branch.{k}.b"], X, return_sequence=k < last)
        caches.append(c)
    return X, caches


def branch_backward(model, caches, dB, grads):
    if not model.config.recurrent:
        return _dense_stack_backward("branch", caches, dB, grads)
    d = dB
    for k in range(len(caches) - 1, -1, -1):
        d, grads[f"branch.{k}.W"], grads[f"branch.{k}.U"], grads[f"branch.{k}.b"] = \
            nn.run_sequence_backward(caches[k], d)
    return d


def trunk_forward(model, X_scaled):
    return _dense_stack(model.params, "trunk", len(model.config.trunk_widths) - 1, X_scaled)


def fuse(b, t, beta):
    """``out[i, j] = Σ_k b[i, k] t[j, k] + β``."""
    return b @ t.T + beta


def fuse_backward(b, t, dout):
    """Returns ``(db, dt, dbeta)``."""
    return dout @ t, dout.T @ b, np.array([dout.sum()], dtype=b.dtype)


def forward_scaled(model, m_scaled, X_scaled):
    """Output in min-max scaled field units plus the cache for :func:`backward_scaled`."""
    cfg = model.config
    if m_scaled.ndim != 2 or m_scaled.shape[1] != cfg.seq_len:
        raise ValueError(f"histories must be (B, {cfg.seq_len}), got {m_scaled.shape}")
    if X_scaled.ndim != 2 or X_scaled.shape[1] != 2:
        raise ValueError(f"coordinates must be (M, 2), got {X_scaled.shape}")
    b, bc = branch_forward(model, m_scaled)
    t, tc = trunk_forward(model, X_scaled)
    return fuse(b, t, model.params["beta"][0]), (b, t, bc, tc)


def backward_scaled(model, cache, dout):
    b, t, bc, tc = cache
    db, dt, dbeta = fuse_backward(b, t, dout)
    grads = {"beta": dbeta.astype(model.params.dtype)}
    branch_backward(model, bc, db, grads)
    _dense_stack_backward("trunk", tc, dt, grads)
    return grads


def forward(model: DeepONetModel, m, X, batch: int | None = None):
    """Predicted fields ``(B, M)`` in physical units for raw histories and coordinates."""
    dt = model.params.dtype
    m = np.atleast_2d(np.asarray(m))
    X = np.asarray(X)
    if not np.all(np.isfinite(X)):
        raise ValueError("coordinates must be finite")
    Xs = model.scaling.coords(X, dt)
    ms = model.scaling.histories(m, dt)
    t, _ = trunk_forward(model, Xs)
    beta = model.params["beta"][0]
    out = np.empty((m.shape[0], X.shape[0]), dt)
    step = batch or m.shape[0] or 1
    for s in range(0, m.shape[0], step):
        b, _ = branch_forward(model, ms[s:s + step])
        out[s:s + step] = fuse(b, t, beta)
    return model.scaling.field.inverse(out)

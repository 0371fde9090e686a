"""Dense and recurrent layers with hand-written reverse mode.

Every ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward(cache, d_output)`` returns gradients in a fixed order. Arrays
keep the dtype of the parameters, so a float64 store gives a float64 pass.

Recurrent weights are stored gate-concatenated: ``W`` is ``(in, G*h)``, ``U``
is ``(h, G*h)`` and ``b`` is ``(G*h,)``. LSTM gate order is input, forget,
cell, output; GRU order is update, reset, candidate, with one bias set and the
reset gate applied to ``h_prev`` before the candidate matmul.
"""
from __future__ import annotations

import numpy as np

ACTIVATIONS = ("tanh", "identity")


def _check(cond, msg):
    if not cond:
        raise ValueError(msg)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def glorot(rng, fan_in, fan_out, shape=None, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    shape = shape or (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# ---- dense -----------------------------------------------------------------

def dense_forward(W, b, X, activation="tanh"):
    _check(activation in ACTIVATIONS, f"unknown activation {activation!r}")
    _check(W.ndim == 2 and b.shape == (W.shape[1],),
           f"dense: W {W.shape} and b {b.shape} do not conform")
    _check(X.shape[-1] == W.shape[0], f"dense: X {X.shape} does not match W {W.shape}")
    Y = X @ W + b
    if activation == "tanh":
        np.tanh(Y, out=Y)
    return Y, (X, W, Y, activation)


def dense_backward(cache, dY):
    X, W, Y, activation = cache
    _check(dY.shape == Y.shape, f"dense: dY {dY.shape} does not match Y {Y.shape}")
    dZ = dY * (1.0 - Y * Y) if activation == "tanh" else dY
    X2 = X.reshape(-1, X.shape[-1])
    dZ2 = dZ.reshape(-1, dZ.shape[-1])
    return X2.T @ dZ2, dZ2.sum(axis=0), dZ @ W.T


# ---- single cell steps -----------------------------------------------------

def _rec_shapes(W, U, b, gates, x, h):
    hd = U.shape[0]
    _check(U.shape == (hd, gates * hd), f"recurrent U {U.shape} must be (h, {gates}h)")
    _check(W.shape == (W.shape[0], gates * hd) and b.shape == (gates * hd,),
           f"recurrent W {W.shape} / b {b.shape} do not match U {U.shape}")
    _check(x.shape[-1] == W.shape[0], f"input x {x.shape} does not match W {W.shape}")
    _check(h.shape[-1] == hd, f"state h {h.shape} does not match U {U.shape}")
    return hd


def lstm_step(W, U, b, x_t, h_prev, c_prev):
    """One LSTM step; returns ``(h, c, cache)``."""
    hd = _rec_shapes(W, U, b, 4, x_t, h_prev)
    _check(c_prev.shape == h_prev.shape, f"cell c {c_prev.shape} does not match h {h_prev.shape}")
    z = x_t @ W + h_prev @ U + b
    i, f, o = sigmoid(z[..., :hd]), sigmoid(z[..., hd:2 * hd]), sigmoid(z[..., 3 * hd:])
    g = np.tanh(z[..., 2 * hd:3 * hd])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (W, U, x_t, h_prev, c_prev, i, f, g, o, tc)


def lstm_step_backward(cache, dh, dc):
    """Returns ``(dx, dh_prev, dc_prev, dW, dU, db)``."""
    W, U, x_t, h_prev, c_prev, i, f, g, o, tc = cache
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate([dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f),
                         dc * i * (1.0 - g * g), dh * tc * o * (1.0 - o)], axis=-1)
    return dz @ W.T, dz @ U.T, dc * f, x_t.T @ dz, h_prev.T @ dz, dz.sum(axis=0)


def gru_step(W, U, b, x_t, h_prev):
    """One GRU step; returns ``(h, cache)``."""
    hd = _rec_shapes(W, U, b, 3, x_t, h_prev)
    xp = x_t @ W + b
    zr = sigmoid(xp[..., :2 * hd] + h_prev @ U[:, :2 * hd])
    z, r = zr[..., :hd], zr[..., hd:]
    rh = r * h_prev
    n = np.tanh(xp[..., 2 * hd:] + rh @ U[:, 2 * hd:])
    h = (1.0 - z) * n + z * h_prev
    return h, (W, U, x_t, h_prev, z, r, rh, n)


def gru_step_backward(cache, dh):
    """Returns ``(dx, dh_prev, dW, dU, db)``."""
    W, U, x_t, h_prev, z, r, rh, n = cache
    hd = U.shape[0]
    dan = dh * (1.0 - z) * (1.0 - n * n)
    drh = dan @ U[:, 2 * hd:].T
    daz = dh * (h_prev - n) * z * (1.0 - z)
    dar = drh * h_prev * r * (1.0 - r)
    dzr = np.concatenate([daz, dar], axis=-1)
    dh_prev = dh * z + drh * r + dzr @ U[:, :2 * hd].T
    dz = np.concatenate([dzr, dan], axis=-1)
    dU = np.concatenate([h_prev.T @ dzr, rh.T @ dan], axis=1)
    return dz @ W.T, dh_prev, x_t.T @ dz, dU, dz.sum(axis=0)


# ---- unrolled sequences ----------------------------------------------------

def run_sequence(cell, W, U, b, X, return_sequence=True):
    """Unroll ``cell`` from a zero state over ``X`` of shape ``(B, T, in)`` or ``(T, in)``.

    Returns ``(out, cache)`` with ``out`` shaped ``(B, T, h)`` / ``(B, h)``
    (batch axis dropped again for 2D input).
    """
    _check(cell in ("lstm", "gru"), f"unknown cell {cell!r}")
    squeeze = X.ndim == 2
    if squeeze:
        X = X[None]
    _check(X.ndim == 3 and X.shape[1] >= 1, f"sequence input must be (B, T, in), got {X.shape}")
    gates = 4 if cell == "lstm" else 3
    B, T, _ = X.shape
    hd = _rec_shapes(W, U, b, gates, X[:, 0], np.zeros((1, U.shape[0]), U.dtype))
    dt = U.dtype
    XP = X @ W + b  # (B, T, G*h), input projection for all steps at once
    H = np.zeros((B, T + 1, hd), dt)
    if cell == "lstm":
        C = np.zeros((B, T + 1, hd), dt)
        A = np.empty((B, T, 4 * hd), dt)  # activated gates i, f, g, o
        TC = np.empty((B, T, hd), dt)
        for t in range(T):
            z = XP[:, t] + H[:, t] @ U
            a = A[:, t]
            a[:, :2 * hd] = sigmoid(z[:, :2 * hd])
            a[:, 2 * hd:3 * hd] = np.tanh(z[:, 2 * hd:3 * hd])
            a[:, 3 * hd:] = sigmoid(z[:, 3 * hd:])
            C[:, t + 1] = a[:, hd:2 * hd] * C[:, t] + a[:, :hd] * a[:, 2 * hd:3 * hd]
            TC[:, t] = np.tanh(C[:, t + 1])
            H[:, t + 1] = a[:, 3 * hd:] * TC[:, t]
        extra = (C, A, TC)
    else:
        A = np.empty((B, T, 3 * hd), dt)  # z, r, n
        RH = np.empty((B, T, hd), dt)
        for t in range(T):
            h = H[:, t]
            a = A[:, t]
            a[:, :2 * hd] = sigmoid(XP[:, t, :2 * hd] + h @ U[:, :2 * hd])
            RH[:, t] = a[:, hd:2 * hd] * h
            a[:, 2 * hd:] = np.tanh(XP[:, t, 2 * hd:] + RH[:, t] @ U[:, 2 * hd:])
            z = a[:, :hd]
            H[:, t + 1] = (1.0 - z) * a[:, 2 * hd:] + z * h
        extra = (A, RH)
    out = H[:, 1:] if return_sequence else H[:, -1]
    out = np.ascontiguousarray(out)
    cache = (cell, W, U, X, H, extra, return_sequence, squeeze)
    return (out[0] if squeeze else out), cache


def run_sequence_backward(cache, dout):
    """Backprop through time; returns ``(dX, dW, dU, db)``."""
    cell, W, U, X, H, extra, return_sequence, squeeze = cache
    if squeeze:
        dout = dout[None]
    B, T, _ = X.shape
    hd = U.shape[0]
    dt = U.dtype
    if return_sequence:
        _check(dout.shape == (B, T, hd), f"sequence gradient {dout.shape} != {(B, T, hd)}")
    else:
        _check(dout.shape == (B, hd), f"final-state gradient {dout.shape} != {(B, hd)}")
    dh = np.zeros((B, hd), dt)
    if cell == "lstm":
        C, A, TC = extra
        dZ = np.empty((B, T, 4 * hd), dt)
        dc = np.zeros((B, hd), dt)
        for t in range(T - 1, -1, -1):
            if return_sequence:
                dh = dh + dout[:, t]
            elif t == T - 1:
                dh = dh + dout
            a = A[:, t]
            i, f, g, o = a[:, :hd], a[:, hd:2 * hd], a[:, 2 * hd:3 * hd], a[:, 3 * hd:]
            tc = TC[:, t]
            dc = dc + dh * o * (1.0 - tc * tc)
            dz = dZ[:, t]
            dz[:, :hd] = dc * g * i * (1.0 - i)
            dz[:, hd:2 * hd] = dc * C[:, t] * f * (1.0 - f)
            dz[:, 2 * hd:3 * hd] = dc * i * (1.0 - g * g)
            dz[:, 3 * hd:] = dh * tc * o * (1.0 - o)
            dc = dc * f
            dh = dz @ U.T
        Hp = H[:, :-1].reshape(-1, hd)
        dU = Hp.T @ dZ.reshape(-1, 4 * hd)
    else:
        A, RH = extra
        dZ = np.empty((B, T, 3 * hd), dt)
        Uzr, Un = U[:, :2 * hd], U[:, 2 * hd:]
        for t in range(T - 1, -1, -1):
            if return_sequence:
                dh = dh + dout[:, t]
            elif t == T - 1:
                dh = dh + dout
            a = A[:, t]
            z, r, n = a[:, :hd], a[:, hd:2 * hd], a[:, 2 * hd:]
            hp = H[:, t]
            dz = dZ[:, t]
            dz[:, 2 * hd:] = dh * (1.0 - z) * (1.0 - n * n)
            drh = dz[:, 2 * hd:] @ Un.T
            dz[:, :hd] = dh * (hp - n) * z * (1.0 - z)
            dz[:, hd:2 * hd] = drh * hp * r * (1.0 - r)
            dh = dh * z + drh * r + dz[:, :2 * hd] @ Uzr.T
        Hp = H[:, :-1].reshape(-1, hd)
        dZf = dZ.reshape(-1, 3 * hd)
        dU = np.concatenate([Hp.T @ dZf[:, :2 * hd],
                             RH.reshape(-1, hd).T @ dZf[:, 2 * hd:]], axis=1)
    G = dZ.shape[-1]
    dZf = dZ.reshape(-1, G)
    dW = X.reshape(-1, X.shape[-1]).T @ dZf
    db = dZf.sum(axis=0)
    dX = dZ @ W.T
    return (dX[0] if squeeze else dX), dW, dU, db


def lstm_param_count(n_in, h):
    return 4 * (h * (h + n_in) + h)


def gru_param_count(n_in, h):
    return 3 * (h * (h + n_in) + h)


def dense_param_count(n_in, n_out):
    return n_in * n_out + n_out

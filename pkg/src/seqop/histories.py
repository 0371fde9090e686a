"""Random load histories built from six control points.

A history is fixed by six (time, value) anchors. Anchors are joined by a
Gaussian radial-basis interpolant and resampled on a uniform 101-point grid.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_STEPS = 101
N_CONTROL = 6

HEAT_HORIZON = 17.0
HEAT_INTERIOR = (0.0, 17.0)
FLUX_A = (3.0, 8.0)
FLUX_B = (0.3, 0.7)
FLUX_C = (-0.5, 0.5)

DISP_HORIZON = 1.0
DISP_INTERIOR = (0.1, 0.9)
SPECIMEN_LENGTH = 110.0  # mm
MAX_NOMINAL_STRAIN = 0.05
DISP_LIMIT = MAX_NOMINAL_STRAIN * SPECIMEN_LENGTH  # 5.5 mm

# lowest / highest value A*(t+1)**-B + C can take over the parameter box
FLUX_MIN = FLUX_A[0] * (HEAT_HORIZON + 1.0) ** (-FLUX_B[1]) + FLUX_C[0]
FLUX_MAX = FLUX_A[1] + FLUX_C[1]

_MAX_COND = 1e12


class InterpolationError(ValueError):
    """Kernel matrix too ill-conditioned to interpolate the control points."""


@dataclass(frozen=True)
class FluxParams:
    A: float
    B: float
    C: float

    def __post_init__(self):
        for name, (lo, hi) in (("A", FLUX_A), ("B", FLUX_B), ("C", FLUX_C)):
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"flux parameter {name}={v} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class ControlPoints:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.times) != N_CONTROL or len(self.values) != N_CONTROL:
            raise ValueError(f"need exactly {N_CONTROL} control points")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("control times must be strictly ascending")


@dataclass(frozen=True)
class LoadHistory:
    """One load curve on the uniform grid ``t_i = i * horizon / 100``."""

    kind: str
    horizon: float
    values: np.ndarray
    control: ControlPoints | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("flux", "displacement"):
            raise ValueError(f"unknown history kind {self.kind!r}")
        if self.values.shape != (N_STEPS,):
            raise ValueError(f"history must have {N_STEPS} samples, got {self.values.shape}")
        if self.kind == "displacement" and self.values[0] != 0.0:
            raise ValueError("displacement history must start at 0")

    @property
    def times(self) -> np.ndarray:
        return time_grid(self.horizon)

    def at(self, t):
        """Piecewise-linear value between the grid samples."""
        return np.interp(t, self.times, self.values)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "value"])
            for t, v in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(v))])


def time_grid(horizon: float) -> np.ndarray:
    return np.arange(N_STEPS) * (horizon / (N_STEPS - 1))


def read_history_csv(path, kind: str, horizon: float | None = None) -> LoadHistory:
    """Read either the two-column (time_s, value) dump or a bare column of 101 values."""
    rows = []
    with open(Path(path), newline="") as fh:
        for row in csv.reader(fh):
            if not row or not row[0].strip():
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                continue  # header
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != N_STEPS:
        raise ValueError(f"{path}: expected {N_STEPS} rows, got {arr.shape[0] if arr.ndim else 0}")
    if horizon is None:
        horizon = HEAT_HORIZON if kind == "flux" else DISP_HORIZON
    values = arr[:, -1].copy()
    if kind == "displacement":
        values[0] = 0.0
    return LoadHistory(kind, horizon, values)


def sample_control_times(rng: np.random.Generator, horizon: float,
                         interior_range: tuple[float, float]) -> np.ndarray:
    """Endpoints 0 and ``horizon`` plus four sorted uniform interior draws.

    Draws closer than ``1e-6 * horizon`` to each other or to an endpoint are
    rejected and the four interior times redrawn.
    """
    lo, hi = interior_range
    if not (0.0 <= lo < hi <= horizon):
        raise ValueError(f"interior range {interior_range} not inside (0, {horizon})")
    gap = 1e-6 * horizon
    while True:
        inner = np.sort(rng.uniform(lo, hi, size=N_CONTROL - 2))
        times = np.concatenate(([0.0], inner, [horizon]))
        if np.all(np.diff(times) > gap):
            return times


def flux_at_control(p: FluxParams, t_cp):
    return p.A * (np.asarray(t_cp, dtype=float) + 1.0) ** (-p.B) + p.C


def default_shape(times) -> float:
    """Inverse of the average node spacing, ``len(times) / span``."""
    t = np.asarray(times, dtype=float)
    return len(t) / (t[-1] - t[0])


def _gaussian(r, shape):
    return np.exp(-((shape * r) ** 2))


def rbf_weights(times, values, shape: float) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if shape <= 0:
        raise ValueError("RBF shape parameter must be positive")
    if np.any(np.diff(times) <= 0):
        raise ValueError("control times must be strictly ascending")
    K = _gaussian(np.abs(times[:, None] - times[None, :]), shape)
    cond = np.linalg.cond(K)
    if not np.isfinite(cond) or cond > _MAX_COND:
        spacing = np.diff(times)
        j = int(np.argmin(spacing))
        raise InterpolationError(
            f"RBF kernel condition {cond:.3g} > {_MAX_COND:g}: control times "
            f"{times[j]:.6g} and {times[j + 1]:.6g} are {spacing[j]:.3g} apart"
        )
    return np.linalg.solve(K, np.asarray(values, dtype=float))


def rbf_interpolate(times, values, queries, shape: float | None = None) -> np.ndarray:
    """Gaussian RBF interpolant through ``(times, values)`` evaluated at ``queries``."""
    if shape is None:
        shape = default_shape(times)
    w = rbf_weights(times, values, shape)
    q = np.asarray(queries, dtype=float)
    return _gaussian(np.abs(q[:, None] - np.asarray(times)[None, :]), shape) @ w


def sample_flux_params(rng: np.random.Generator) -> FluxParams:
    return FluxParams(rng.uniform(*FLUX_A), rng.uniform(*FLUX_B), rng.uniform(*FLUX_C))


def _conditioned_times(rng, horizon, interior_range):
    # the RBF system must also pass the conditioning check; redraw otherwise
    while True:
        times = sample_control_times(rng, horizon, interior_range)
        try:
            rbf_weights(times, np.zeros(N_CONTROL), default_shape(times))
        except InterpolationError:
            continue
        return times


def gen_heat_history(rng: np.random.Generator) -> LoadHistory:
    p = sample_flux_params(rng)
    times = _conditioned_times(rng, HEAT_HORIZON, HEAT_INTERIOR)
    q_cp = flux_at_control(p, times)
    values = rbf_interpolate(times, q_cp, time_grid(HEAT_HORIZON))
    return LoadHistory("flux", HEAT_HORIZON, values, ControlPoints(times, q_cp))


def gen_disp_history(rng: np.random.Generator) -> LoadHistory:
    """Displacement curve whose nominal strain stays below 5% along the whole path.

    Control values are uniform on [-5.5, 5.5] mm; draws whose interpolant
    leaves that band between control points are rejected.
    """
    while True:
        times = _conditioned_times(rng, DISP_HORIZON, DISP_INTERIOR)
        u_cp = np.concatenate(([0.0], rng.uniform(-DISP_LIMIT, DISP_LIMIT, size=N_CONTROL - 1)))
        values = rbf_interpolate(times, u_cp, time_grid(DISP_HORIZON))
        values[0] = 0.0
        if np.abs(values).max() <= DISP_LIMIT:
            break
    return LoadHistory("displacement", DISP_HORIZON, values, ControlPoints(times, u_cp))

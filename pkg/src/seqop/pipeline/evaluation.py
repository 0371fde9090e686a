"""Relative L2 metric, error statistics, timing and report files."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ..operator_net import DeepONetModel, forward
from .dataset import DatasetBundle

FORMAT_VERSION = 1
HIST_BINS = 20
LINE_POINTS = 200
PLASTIC_DIAGONAL = ((0.0, 30.0), (110.0, 0.0))  # mm
_TO_MM = {"m": 1000.0, "mm": 1.0}


def rel_l2(pred, true) -> float:
    true = np.asarray(true, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError(f"pred {pred.shape} and truth {true.shape} differ")
    den = np.linalg.norm(true)
    if den == 0.0:
        raise ValueError("relative L2 error undefined for an all-zero truth field")
    return float(np.linalg.norm(true - pred) / den)


def select_cases(errors):
    """``(best, median, worst)`` positions; median is the ceil(N/2)-th smallest, ties to the lowest index."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size < 3:
        raise ValueError("need at least 3 cases")
    order = np.argsort(e, kind="stable")
    k = math.ceil(e.size / 2) - 1
    median = int(np.flatnonzero(e == e[order[k]])[0])
    return int(np.argmin(e)), median, int(np.argmax(e))


@dataclass
class ErrorReport:
    case_ids: list
    errors: list
    mean: float
    std: float
    min: float
    max: float
    best: int  # case ids
    median: int
    worst: int
    timing: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @classmethod
    def from_errors(cls, case_ids, errors, timing=None, config=None) -> "ErrorReport":
        e = np.asarray(errors, dtype=np.float64)
        ids = [int(i) for i in case_ids]
        b, m, w = select_cases(e)
        return cls(ids, [float(x) for x in e], float(e.mean()), float(e.std()), float(e.min()),
                   float(e.max()), ids[b], ids[m], ids[w], dict(timing or {}), dict(config or {}))

    def to_dict(self):
        d = asdict(self)
        d["format_version"] = FORMAT_VERSION
        d["n_test"] = len(self.errors)
        return d

    @classmethod
    def from_dict(cls, d) -> "ErrorReport":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported report format {d.get('format_version')!r}")
        keys = cls.__dataclass_fields__
        return cls(**{k: d[k] for k in keys})


def predict_bundle(model: DeepONetModel, bundle: DatasetBundle, batch=64):
    return forward(model, bundle.histories, bundle.coords, batch=batch)


def evaluate(model: DeepONetModel, test: DatasetBundle, batch=64) -> tuple[ErrorReport, np.ndarray]:
    check_compatible(model, test)
    pred = predict_bundle(model, test, batch)
    errors = [rel_l2(p, t) for p, t in zip(pred, test.fields)]
    cfg = {"model": model.config.to_dict(), "seed": model.seed, "training": model.metadata,
           "problem": test.problem, "data_config_hash": test.config_hash}
    return ErrorReport.from_errors(test.case_ids, errors, config=cfg), pred


def check_compatible(model: DeepONetModel, bundle: DatasetBundle):
    trained_on = model.metadata.get("problem")
    if trained_on is not None and trained_on != bundle.problem:
        raise ValueError(f"model was trained on {trained_on} data, dataset is {bundle.problem}")


def measure_speedup(bundle: DatasetBundle, model: DeepONetModel, n_repeat: int = 5,
                    batch: int | None = None) -> dict:
    """Median batched inference time per case against the stored solver time per case."""
    check_compatible(model, bundle)
    n = len(bundle)
    forward(model, bundle.histories[:1], bundle.coords)  # warm-up
    runs = []
    for _ in range(max(1, n_repeat)):
        t0 = time.perf_counter()
        forward(model, bundle.histories, bundle.coords, batch=batch)
        runs.append((time.perf_counter() - t0) / n)
    infer = float(np.median(runs))
    solver = float(np.mean(bundle.times, dtype=np.float64))
    return {"solver_time_per_case": solver, "inference_time_per_case": infer,
            "speedup": solver / infer, "n_cases": n, "n_repeat": max(1, n_repeat)}


# ---- report files ----------------------------------------------------------

def line_endpoints(problem: str, coords_mm):
    if problem == "heat":
        y = 0.5 * (coords_mm[:, 1].min() + coords_mm[:, 1].max())
        return (float(coords_mm[:, 0].min()), y), (float(coords_mm[:, 0].max()), y)
    return PLASTIC_DIAGONAL


def idw_sample(coords, values, points, k=4, power=2.0):
    """Inverse-distance interpolation from the ``k`` nearest nodes (exact at nodes)."""
    values = np.asarray(values, dtype=np.float64)
    k = min(k, len(coords))
    dist, idx = cKDTree(coords).query(points, k=k)
    dist, idx = dist.reshape(len(points), k), idx.reshape(len(points), k)
    hit = dist[:, 0] < 1e-12
    w = 1.0 / np.where(hit[:, None], 1.0, dist) ** power
    out = (w * values[idx]).sum(axis=1) / w.sum(axis=1)
    out[hit] = values[idx[hit, 0]]
    return out


def line_samples(problem, coords_mm, n=LINE_POINTS):
    a, b = (np.asarray(p, dtype=np.float64) for p in line_endpoints(problem, coords_mm))
    s = np.linspace(0.0, 1.0, n)[:, None]
    return a + s * (b - a)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if not isinstance(x, (int, np.integer)) else int(x) for x in r])


def export_report(report: ErrorReport, bundle: DatasetBundle, predictions: dict,
                  out_dir, svg: bool = False) -> list:
    """Write the report directory; ``predictions`` maps variant name to ``(N_test, M)`` fields."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    pos = {int(c): i for i, c in enumerate(bundle.case_ids)}
    if sorted(pos) != sorted(report.case_ids):
        raise ValueError("report and dataset view cover different cases")
    names = list(predictions)

    p = out / "errors.csv"
    _write_csv(p, ["case_id", "rel_l2"], zip(report.case_ids, report.errors))
    written.append(p)

    counts, edges = np.histogram(report.errors, bins=HIST_BINS)
    p = out / "histogram.csv"
    _write_csv(p, ["bin_lo", "bin_hi", "count"], zip(edges[:-1], edges[1:], counts))
    written.append(p)

    scale = _TO_MM[bundle.units["coords"]]
    coords_mm = bundle.coords.astype(np.float64) * scale
    pts = line_samples(bundle.problem, coords_mm)
    for label, cid in (("best", report.best), ("median", report.median), ("worst", report.worst)):
        i = pos[cid]
        truth = bundle.fields[i]
        cols = [predictions[n][i] for n in names]
        p = out / f"field_case_{cid}.csv"
        _write_csv(p, ["node_x", "node_y", "truth"] + [f"pred_{n}" for n in names],
                   zip(bundle.coords[:, 0], bundle.coords[:, 1], truth, *cols))
        written.append(p)
        line_vals = [idw_sample(coords_mm, v, pts) for v in [truth] + cols]
        p = out / f"line_{cid}.csv"
        _write_csv(p, ["x_mm", "y_mm", "truth"] + [f"pred_{n}" for n in names],
                   zip(pts[:, 0], pts[:, 1], *line_vals))
        written.append(p)

    summary = report.to_dict()
    summary["cases"] = {"best": report.best, "median": report.median, "worst": report.worst}
    summary["histogram"] = {"edges": edges.tolist(), "counts": counts.tolist()}
    summary["units"] = bundle.units
    p = out / "summary.json"
    p.write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    written.append(p)

    if svg:
        from . import plots
        written += plots.render(out, report, bundle, predictions, edges, counts, pts, coords_mm)
    return written


def read_summary(path) -> ErrorReport:
    return ErrorReport.from_dict(json.loads(Path(path).read_text()))

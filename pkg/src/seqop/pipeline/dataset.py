"""Supervised datasets: N load histories, one shared mesh, N final fields.

A bundle on disk is a directory::

    manifest.json   shapes, dtype, units, seed, generation config and its hash
    histories.bin   float32 LE, (N, 101)
    coords.bin      float32 LE, (M, 2)
    fields.bin      float32 LE, (N, M)
    times.bin       float32 LE, (N,)   solver wall time per case, seconds

All blobs are C-ordered with no header.
"""
from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import histories as hist
from ..histories import N_STEPS, LoadHistory

FORMAT_VERSION = 1
PROBLEMS = ("heat", "plastic")
UNITS = {
    "heat": {"histories": "MW/m^2", "coords": "m", "fields": "degC", "times": "s"},
    "plastic": {"histories": "mm", "coords": "mm", "fields": "MPa", "times": "s"},
}
BLOBS = ("histories", "coords", "fields", "times")
_LE32 = np.dtype("<f4")


class DatasetError(ValueError):
    pass


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class DatasetBundle:
    problem: str
    histories: np.ndarray
    coords: np.ndarray
    fields: np.ndarray
    times: np.ndarray
    seed: int | None = None
    config: dict = field(default_factory=dict)
    case_ids: np.ndarray | None = None

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise DatasetError(f"unknown problem {self.problem!r}")
        self.histories = np.asarray(self.histories, dtype=np.float32)
        self.coords = np.asarray(self.coords, dtype=np.float32)
        self.fields = np.asarray(self.fields, dtype=np.float32)
        self.times = np.asarray(self.times, dtype=np.float32)
        n = self.histories.shape[0]
        if self.histories.ndim != 2 or self.histories.shape[1] != N_STEPS:
            raise DatasetError(f"histories must be (N, {N_STEPS}), got {self.histories.shape}")
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise DatasetError(f"coords must be (M, 2), got {self.coords.shape}")
        if self.fields.shape != (n, self.coords.shape[0]):
            raise DatasetError(f"fields {self.fields.shape} do not match {n} cases x {self.coords.shape[0]} nodes")
        if self.times.shape != (n,):
            raise DatasetError(f"times must be ({n},), got {self.times.shape}")
        for name in BLOBS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise DatasetError(f"non-finite values in {name}")
        if self.case_ids is None:
            self.case_ids = np.arange(n)

    def __len__(self):
        return self.histories.shape[0]

    @property
    def n_nodes(self):
        return self.coords.shape[0]

    @property
    def units(self):
        return UNITS[self.problem]

    @property
    def config_hash(self):
        return config_hash(self.config)

    def subset(self, idx) -> "DatasetBundle":
        idx = np.asarray(idx, dtype=np.int64)
        return DatasetBundle(self.problem, self.histories[idx], self.coords, self.fields[idx],
                             self.times[idx], self.seed, self.config, self.case_ids[idx])

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {}
        for name in BLOBS:
            arr = np.ascontiguousarray(getattr(self, name), dtype=_LE32)
            (out / f"{name}.bin").write_bytes(arr.tobytes())
            files[name] = {"file": f"{name}.bin", "shape": list(arr.shape)}
        manifest = {
            "format_version": FORMAT_VERSION,
            "problem": self.problem,
            "dtype": _LE32.str,
            "byte_order": "little",
            "n_cases": len(self),
            "n_nodes": self.n_nodes,
            "seq_len": N_STEPS,
            "files": files,
            "units": self.units,
            "seed": self.seed,
            "config": self.config,
            "config_hash": self.config_hash,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, data_dir) -> "DatasetBundle":
        d = Path(data_dir)
        path = d / "manifest.json"
        if not path.is_file():
            raise DatasetError(f"no dataset manifest at {d}")
        man = json.loads(path.read_text())
        if man.get("format_version") != FORMAT_VERSION:
            raise DatasetError(f"unsupported dataset format {man.get('format_version')!r}")
        arrays = {}
        for name in BLOBS:
            spec = man["files"][name]
            raw = (d / spec["file"]).read_bytes()
            shape = tuple(spec["shape"])
            if len(raw) != _LE32.itemsize * int(np.prod(shape)):
                raise DatasetError(f"{spec['file']}: size does not match shape {shape}")
            arrays[name] = np.frombuffer(raw, dtype=_LE32).reshape(shape).astype(np.float32)
        bundle = cls(man["problem"], seed=man.get("seed"), config=man.get("config", {}), **arrays)
        if man.get("config_hash") != bundle.config_hash:
            raise DatasetError("manifest config hash does not match its config block")
        return bundle

    def load_history(self, i) -> LoadHistory:
        kind = "flux" if self.problem == "heat" else "displacement"
        horizon = hist.HEAT_HORIZON if self.problem == "heat" else hist.DISP_HORIZON
        return LoadHistory(kind, horizon, self.histories[i].astype(np.float64))


def split_dataset(bundle: DatasetBundle, n_test: int, seed: int):
    """Deterministic shuffled split into disjoint, exhaustive (train, test) views."""
    n = len(bundle)
    if not 0 < n_test < n:
        raise DatasetError(f"n_test must be in (0, {n}), got {n_test}")
    perm = np.random.default_rng(seed).permutation(n)
    test, train = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    return bundle.subset(train), bundle.subset(test)


# ---- generation ------------------------------------------------------------

def default_gen_config(problem: str, **overrides) -> dict:
    if problem == "heat":
        cfg = {"problem": "heat", "dt": 0.1, "n_elements": 300, "element_size": 1e-4,
               "tol": 1e-9, "flux_rule": "step_average"}
    elif problem == "plastic":
        cfg = {"problem": "plastic", "mesh_target": 4756, "gauge_length": 40.0,
               "transition": 15.0, "tol": 1e-8, "clamp": "full"}
    else:
        raise DatasetError(f"unknown problem {problem!r}")
    unknown = set(overrides) - set(cfg)
    if unknown:
        raise DatasetError(f"unknown {problem} generation options {sorted(unknown)}")
    cfg.update(overrides)
    return cfg


_WORKER: dict = {}


def _setup(cfg):
    """Per-process solver context, built once per config."""
    key = config_hash(cfg)
    if _WORKER.get("key") == key:
        return _WORKER
    _WORKER.clear()
    _WORKER["key"] = key
    if cfg["problem"] == "heat":
        from ..thermal import SliceMesh, ThermalMaterial
        _WORKER["mesh"] = SliceMesh(cfg["n_elements"], cfg["element_size"])
        _WORKER["mat"] = ThermalMaterial()
        _WORKER["coords"] = _WORKER["mesh"].coords
    else:
        from ..solid import PlasticSolver, build_dogbone_mesh
        mesh = build_dogbone_mesh(cfg["mesh_target"], cfg["gauge_length"], cfg["transition"])
        _WORKER["mesh"] = mesh
        _WORKER["solver"] = PlasticSolver(mesh, clamp=cfg["clamp"])
        _WORKER["coords"] = mesh.nodes
    return _WORKER


def case_history(problem: str, seed_seq: np.random.SeedSequence) -> LoadHistory:
    rng = np.random.default_rng(seed_seq)
    if problem == "heat":
        return hist.gen_heat_history(rng)
    while True:
        h = hist.gen_disp_history(rng)
        if np.max(np.abs(h.values)) > 0.0:  # an all-zero load has no relative error
            return h


def solve_case(cfg: dict, seed_seq: np.random.SeedSequence):
    """Returns ``(history values, final field, wall time)`` for one case."""
    ctx = _setup(cfg)
    h = case_history(cfg["problem"], seed_seq)
    if cfg["problem"] == "heat":
        from ..thermal import solve_heat
        sol = solve_heat(h, ctx["mat"], ctx["mesh"], dt=cfg["dt"], tol=cfg["tol"],
                         flux_rule=cfg["flux_rule"])
        return h.values, sol.temperature, sol.wall_time
    sol = ctx["solver"].solve(h, tol=cfg["tol"])
    return h.values, sol.von_mises, sol.wall_time


def _solve_star(args):
    return solve_case(*args)


def generate_dataset(problem: str, n_cases: int, seed: int, jobs: int = 1,
                     progress=None, **overrides) -> DatasetBundle:
    """Solve ``n_cases`` random histories; case ``i`` depends only on ``(seed, i)``."""
    if n_cases < 2:
        raise DatasetError("a dataset needs at least 2 cases")
    if jobs < 1:
        raise DatasetError("jobs must be positive")
    cfg = default_gen_config(problem, **overrides)
    seqs = np.random.SeedSequence(seed).spawn(n_cases)
    tasks = [(cfg, s) for s in seqs]
    if jobs == 1:
        results = []
        for i, t in enumerate(tasks):
            results.append(_solve_star(t))
            if progress:
                progress(i + 1, n_cases)
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, os.cpu_count() or 1, n_cases)) as pool:
            results = []
            for i, r in enumerate(pool.map(_solve_star, tasks, chunksize=max(1, n_cases // (8 * jobs)))):
                results.append(r)
                if progress:
                    progress(i + 1, n_cases)
    coords = _setup(cfg)["coords"]
    return DatasetBundle(
        problem,
        np.stack([r[0] for r in results]),
        coords,
        np.stack([r[1] for r in results]),
        np.array([r[2] for r in results]),
        seed=seed,
        config=cfg,
    )

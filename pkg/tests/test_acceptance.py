"""Acceptance criteria 1-8, one test each.

Each test also checks its own wall-clock budget. Criterion 5 projects the
cost of the desk-scale trend run from measured step and solve times; the full
run itself is opt-in through ``SEQOP_FULL_TREND=1``.
"""
import math
import os
import shutil
import time

import numpy as np
from gradcheck import F32_TOL, F64_TOL, worst_gradient_error

from seqop import histories as H
from seqop import nn
from seqop import solid as S
from seqop import thermal as th
from seqop.cli import run
from seqop.operator_net import (VARIANTS, DeepONetConfig, backward_scaled, build_model,
                                count_params, forward_scaled, subnet_count)
from seqop.pipeline import (evaluate, generate_dataset, measure_speedup, rel_l2, select_cases,
                            split_dataset, train)
from seqop.pipeline.dataset import _setup, case_history, default_gen_config, solve_case

GRADIENT_OPS = ("dense", "lstm_sequence", "gru_sequence", "scaled_mse", "fusion")
TREND = {"cases": 600, "n_test": 50, "epochs": 20000, "batch": 64, "budget_h": 4.0,
         "bands": {"heat": 0.05, "plastic": 0.15}}


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.1f} s, budget {self.seconds} s"


def test_c1_fnn_parameter_audit():
    with Budget(1.0):
        m = build_model(DeepONetConfig.default("fnn"), 0)
        assert subnet_count(m, "branch") == 60700
        assert subnet_count(m, "trunk") == 50800
        assert count_params(m, include_beta=False) == 111500 == 60700 + 50800


def test_c2_gradient_suite():
    with Budget(60.0):
        worst = {(op, dt.__name__): worst_gradient_error(op, dt)
                 for op in GRADIENT_OPS for dt in (np.float32, np.float64)}
        bad = {k: v for k, v in worst.items()
               if v > (F32_TOL if k[1] == "float32" else F64_TOL)}
        assert not bad, f"gradient errors above tolerance: {bad}"


def test_c3_plasticity_patch_test():
    E, SY, HM = 2.09e5, 235.0, 800.0
    with Budget(1.0):
        mesh = S.rectangle_mesh(1.0, 1.0, 1, 1)
        u = np.linspace(0.0, 5e-3, 101)
        stress = []
        S.PlasticSolver(mesh, clamp="roller").solve(
            H.LoadHistory("displacement", 1.0, u),
            callback=lambda k, uu, sig, states: stress.append(sig[0][..., 0].mean()))
        strain, stress = u[1:], np.array(stress)
        el, pl = strain < SY / E, strain > SY / E
        k_el = np.polyfit(strain[el], stress[el], 1)
        k_pl = np.polyfit(strain[pl], stress[pl], 1)
        onset = (k_pl[1] - k_el[1]) / (k_el[0] - k_pl[0]) * k_el[0] + k_el[1]
    assert abs(k_el[0] - E) <= 0.5
    assert abs(k_pl[0] - E * HM / (E + HM)) <= 0.5
    assert abs(onset - SY) <= 0.1


def test_c4_thermal_verification():
    with Budget(300.0):
        zero = th.solve_heat(H.LoadHistory("flux", H.HEAT_HORIZON, np.zeros(101)))
        assert np.max(np.abs(zero.temperature - 1540.0)) <= 1e-9

        worst = 0.0
        for seq in np.random.SeedSequence(0).spawn(600):  # the cases of `gen --seed 0`
            h = case_history("heat", seq)
            value, absolute = th.energy_balance_residual(th.solve_heat(h), h)
            assert not absolute
            worst = max(worst, value)
        assert worst <= 0.01, f"worst energy imbalance {worst:.3%}"

        for seq in np.random.SeedSequence(1).spawn(3):
            h = case_history("heat", seq)
            T = [th.solve_heat(h, dt=dt).temperature for dt in (0.1, 0.05, 0.025)]
            d1, d2 = np.max(np.abs(T[0] - T[1])), np.max(np.abs(T[1] - T[2]))
            assert d1 / d2 >= 1.5


def _step_seconds(variant, n_nodes, repeats=2):
    model = build_model(DeepONetConfig.default(variant), 0)
    rng = np.random.default_rng(0)
    m = rng.normal(size=(TREND["batch"], 101)).astype(np.float32)
    X = rng.uniform(-1, 1, size=(n_nodes, 2)).astype(np.float32)
    Y = rng.uniform(size=(TREND["batch"], n_nodes)).astype(np.float32)
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out, cache = forward_scaled(model, m, X)
        _, d = nn.scaled_mse(out, Y, nn.FieldScaler(0.0, 1.0), with_grad=True)
        nn.adam_update(model.params, backward_scaled(model, cache, d), 1e-3)
        best = min(best, time.perf_counter() - t0)
    return best


def _trend_projection():
    """Projected hours for generating both datasets and training all six models."""
    n_train = TREND["cases"] - TREND["n_test"]
    steps = math.ceil(n_train / TREND["batch"]) * TREND["epochs"]
    parts = {}
    for problem, n in (("heat", 10), ("plastic", 1)):
        cfg = default_gen_config(problem)
        solve = [solve_case(cfg, s)[2] for s in np.random.SeedSequence(0).spawn(n)]
        parts[f"gen_{problem}"] = float(np.mean(solve)) * TREND["cases"]
        n_nodes = _setup(cfg)["coords"].shape[0]
        for v in VARIANTS:
            parts[f"train_{problem}_{v}"] = _step_seconds(v, n_nodes) * steps
    return {k: v / 3600.0 for k, v in parts.items()}


def _full_trend_run():
    errors = {}
    for problem in ("heat", "plastic"):
        data = generate_dataset(problem, TREND["cases"], seed=0, jobs=os.cpu_count() or 1)
        tr, te = split_dataset(data, TREND["n_test"], seed=0)
        for v in VARIANTS:
            model = build_model(DeepONetConfig.default(v), seed=0)
            train(model, tr, TREND["epochs"], TREND["batch"], 1e-3, seed=0, deterministic=True)
            errors[problem, v] = evaluate(model, te)[0].mean
    return errors


def test_c5_desk_scale_trend():
    budget = TREND["budget_h"]
    if os.environ.get("SEQOP_FULL_TREND") == "1":
        t0 = time.perf_counter()
        errors = _full_trend_run()
        hours = (time.perf_counter() - t0) / 3600.0
        for problem in ("heat", "plastic"):
            fnn = errors[problem, "fnn"]
            for v in ("lstm", "gru"):
                assert errors[problem, v] < fnn, f"{problem}: {v} {errors[problem, v]:.4f} >= fnn {fnn:.4f}"
            for v in VARIANTS:
                assert errors[problem, v] < TREND["bands"][problem], (problem, v, errors[problem, v])
        assert hours <= budget, f"full run took {hours:.2f} h"
        return
    parts = _trend_projection()
    total = sum(parts.values())
    detail = ", ".join(f"{k}={v:.2f}h" for k, v in sorted(parts.items()))
    assert total <= budget, f"projected {total:.1f} h exceeds the {budget} h budget ({detail})"


def test_c6_metric_identities():
    with Budget(1.0):
        t = np.random.default_rng(0).uniform(1.0, 2.0, size=301)
        assert rel_l2(t, t) == 0.0
        assert rel_l2(np.zeros_like(t), t) == 1.0
        assert abs(rel_l2(1.1 * t, t) - 0.1) <= 1e-12
        assert select_cases([0.3, 0.1, 0.2]) == (1, 2, 0)
        assert select_cases([0.2] * 5) == (0, 0, 0)
        e = np.random.default_rng(1).permutation(100) / 100.0
        b, m, w = select_cases(e)
        assert (e[b], e[m], e[w]) == (0.0, 0.49, 0.99)


def test_c7_speedup_direction():
    with Budget(120.0):
        data = {"heat": generate_dataset("heat", 64, seed=0),
                "plastic": generate_dataset("plastic", 2, seed=0)}
        timing = {}
        for problem, bundle in data.items():
            for v in VARIANTS:
                model = build_model(DeepONetConfig.default(v), seed=0)
                train(model, bundle, epochs=1)
                timing[problem, v] = measure_speedup(bundle, model, n_repeat=3)
    slow = {k: round(t["speedup"], 2) for k, t in timing.items() if t["speedup"] < 10.0}
    order = {p: all(timing[p, "fnn"]["inference_time_per_case"] < timing[p, v]["inference_time_per_case"]
                    for v in ("lstm", "gru")) for p in data}
    assert all(order.values()), f"fnn not fastest: {order}"
    assert not slow, f"speed-up below 10x: {slow}"


def test_c8_reproducibility(tmp_path, monkeypatch):
    monkeypatch.setenv("SEQOP_DETERMINISTIC", "1")

    def snapshot(d):
        # times.bin records measured solver wall time
        return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*"))
                if p.is_file() and p.name != "times.bin"}

    with Budget(600.0):
        for problem, cases in (("heat", 20), ("plastic", 3)):
            runs = []
            root = tmp_path / problem
            for _ in range(2):
                # identical invocations, output paths included
                shutil.rmtree(root, ignore_errors=True)
                assert run(["gen", "--problem", problem, "--cases", str(cases), "--seed", "11",
                            "--out", str(root / "data")]) == 0
                for v in VARIANTS:
                    assert run(["train", "--data", str(root / "data"), "--variant", v, "--epochs", "2",
                                "--batch", "8", "--seed", "5", "--out", str(root / v)]) == 0
                runs.append(snapshot(root))
            assert runs[0].keys() == runs[1].keys() and len(runs[0]) > 20
            diff = [k for k in runs[0] if runs[0][k] != runs[1][k]]
            assert not diff, f"{problem}: differing files {diff}"

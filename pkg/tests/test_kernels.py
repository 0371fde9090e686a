"""Compiled kernels against the numpy fallback."""
import numpy as np
import pytest

from seqop import _kernels
from seqop import histories as H
from seqop import solid as S
from seqop import thermal as th
from seqop._kernels import fallback

compiled_plastic = pytest.importorskip("seqop._kernels._plastic")
compiled_thermal = pytest.importorskip("seqop._kernels._thermal")

MAT = S.ElasticPlasticMaterial()


def _map(impl, eps, ep_old, eb_old):
    n = len(eps)
    out = (np.empty((n, 3)), np.empty((n, 3)), np.empty(n), np.empty((n, 3, 3)))
    f = impl(eps, ep_old, eb_old, MAT.E, MAT.nu, MAT.sigma_y0, MAT.H_mod, *out)
    return f, out


@pytest.mark.parametrize("seed", range(5))
def test_return_map_batch_agrees(seed):
    rng = np.random.default_rng(seed)
    n = 500
    eps = rng.normal(scale=4e-3, size=(n, 3))
    ep_old = rng.normal(scale=1e-3, size=(n, 3))
    eb_old = np.abs(rng.normal(scale=2e-3, size=n))
    f1, a = _map(compiled_plastic.return_map_batch, eps, ep_old, eb_old)
    f2, b = _map(fallback.return_map_batch, eps, ep_old, eb_old)
    assert f1 == f2 == 0
    for x, y in zip(a, b):
        scale = max(np.max(np.abs(y)), 1e-30)
        assert np.max(np.abs(x - y)) <= 1e-10 * scale


def test_element_integrals_agree(rng):
    ne, ng = 40, 4
    B = rng.normal(size=(ne, ng, 3, 8))
    w = rng.uniform(0.1, 1.0, size=(ne, ng))
    sig = rng.normal(size=(ne * ng, 3))
    D = rng.normal(size=(ne * ng, 3, 3))
    out = []
    for impl in (compiled_plastic.element_integrals, fallback.element_integrals):
        fe, ke = np.empty((ne, 8)), np.empty((ne, 8, 8))
        impl(B, w, sig, D, fe, ke)
        out.append((fe, ke))
    np.testing.assert_allclose(out[0][0], out[1][0], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(out[0][1], out[1][1], rtol=1e-12, atol=1e-12)


def test_heat_newton_step_agrees():
    mat, mesh = th.ThermalMaterial(), th.SliceMesh()
    args = (mesh.element_size, mat.density, mat.kT, mat.kV, mat.cT, mat.cV,
            mat.sensible_at_nodes, mat.latent_heat, mat.T_solidus, mat.T_liquidus)
    T_old = np.linspace(1490.0, 1540.0, mesh.n_nodes)
    res = []
    for impl in (compiled_thermal.heat_newton_step, fallback.heat_newton_step):
        T = T_old.copy()
        its, ok = impl(T, T_old, 5e6, 0.1, *args, 1e-10, 50)
        assert ok
        res.append(T)
    np.testing.assert_allclose(res[0], res[1], rtol=0, atol=1e-8)


def _with_fallback(monkeypatch):
    monkeypatch.setattr(_kernels, "heat_newton_step", fallback.heat_newton_step)
    monkeypatch.setattr(_kernels, "return_map_batch", fallback.return_map_batch)
    monkeypatch.setattr(_kernels, "element_integrals", fallback.element_integrals)


def test_full_heat_solve_agrees(monkeypatch):
    h = H.gen_heat_history(np.random.default_rng(3))
    a = th.solve_heat(h).temperature
    _with_fallback(monkeypatch)
    b = th.solve_heat(h).temperature
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-7)


def test_full_plastic_solve_agrees(monkeypatch):
    mesh = S.rectangle_mesh(10.0, 2.0, 5, 2)
    vals = 0.06 * np.sin(np.linspace(0, 2 * np.pi, 101))
    h = H.LoadHistory("displacement", 1.0, vals)
    a = S.PlasticSolver(mesh).solve(h).von_mises
    _with_fallback(monkeypatch)
    b = S.PlasticSolver(mesh).solve(h).von_mises
    np.testing.assert_allclose(a, b, rtol=1e-8, atol=1e-8)

"""Compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-N time of each kernel and of one full solve per problem,
for both backends, and the ratio.
"""
import argparse
import timeit

import numpy as np

from seqop import _kernels
from seqop import histories as H
from seqop import solid as S
from seqop import thermal as th
from seqop._kernels import fallback

try:
    from seqop._kernels import _plastic, _thermal
except ImportError:
    raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

BACKENDS = {
    "compiled": {"heat_newton_step": _thermal.heat_newton_step,
                 "return_map_batch": _plastic.return_map_batch,
                 "element_integrals": _plastic.element_integrals},
    "python": {"heat_newton_step": fallback.heat_newton_step,
               "return_map_batch": fallback.return_map_batch,
               "element_integrals": fallback.element_integrals},
}


def kernel_cases():
    rng = np.random.default_rng(0)
    mat = S.ElasticPlasticMaterial()
    n = 20000
    eps = rng.normal(scale=3e-3, size=(n, 3))
    ep, eb = np.zeros((n, 3)), np.zeros(n)
    outs = (np.empty((n, 3)), np.empty((n, 3)), np.empty(n), np.empty((n, 3, 3)))

    def rmap(k):
        return lambda: k["return_map_batch"](eps, ep, eb, mat.E, mat.nu, mat.sigma_y0, mat.H_mod, *outs)

    ne, ng = 5000, 4
    B = rng.normal(size=(ne, ng, 3, 8))
    w = rng.uniform(size=(ne, ng))
    sig, D = rng.normal(size=(ne * ng, 3)), rng.normal(size=(ne * ng, 3, 3))
    fe, ke = np.empty((ne, 8)), np.empty((ne, 8, 8))

    def integ(k):
        return lambda: k["element_integrals"](B, w, sig, D, fe, ke)

    tm, mesh = th.ThermalMaterial(), th.SliceMesh()
    args = (mesh.element_size, tm.density, tm.kT, tm.kV, tm.cT, tm.cV, tm.sensible_at_nodes,
            tm.latent_heat, tm.T_solidus, tm.T_liquidus)
    T_old = np.linspace(1490.0, 1540.0, mesh.n_nodes)

    def newton(k):
        return lambda: k["heat_newton_step"](T_old.copy(), T_old, 5e6, 0.1, *args, 1e-9, 50)

    return {"return_map_batch (20000 pts)": rmap, "element_integrals (5000 Q4)": integ,
            "heat_newton_step (301 nodes)": newton}


def solve_cases():
    heat = H.gen_heat_history(np.random.default_rng(1))
    mesh = S.build_dogbone_mesh(600)
    disp = H.gen_disp_history(np.random.default_rng(2))
    return {"solve_heat (1 case)": lambda: th.solve_heat(heat),
            "solve_plastic (600-element dog bone)": lambda: S.PlasticSolver(mesh).solve(disp)}


def use(backend):
    for name, fn in BACKENDS[backend].items():
        setattr(_kernels, name, fn)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rows = []
    for label, make in kernel_cases().items():
        t = {b: min(timeit.repeat(make(k), number=1, repeat=args.repeat)) for b, k in BACKENDS.items()}
        rows.append((label, t))
    for label, fn in solve_cases().items():
        t = {}
        for b in BACKENDS:
            use(b)
            t[b] = min(timeit.repeat(fn, number=1, repeat=max(1, args.repeat // 2)))
        rows.append((label, t))
    print(f"{'case':40s} {'compiled [ms]':>14s} {'python [ms]':>12s} {'ratio':>7s}")
    for label, t in rows:
        c, p = 1e3 * t["compiled"], 1e3 * t["python"]
        print(f"{label:40s} {c:14.2f} {p:12.2f} {p / c:7.1f}")


if __name__ == "__main__":
    main()

"""Plane-stress J2 plasticity on a dog-bone specimen.

Units are mm, N and MPa throughout. The specimen is clamped on its left edge
and driven in x on its right edge by a displacement history; the final von
Mises field is averaged to the nodes.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import _kernels
from .histories import LoadHistory

SPECIMEN_LENGTH = 110.0
GRIP_WIDTH = 30.0
GAUGE_WIDTH = 20.0


class PlasticityError(RuntimeError):
    pass


@dataclass(frozen=True)
class ElasticPlasticMaterial:
    E: float = 2.09e5
    nu: float = 0.3
    sigma_y0: float = 235.0
    H_mod: float = 800.0
    thickness: float = 1.0

    def __post_init__(self):
        if not (self.E > 0 and 0 < self.nu < 0.5 and self.sigma_y0 > 0 and self.H_mod >= 0):
            raise ValueError(f"invalid material constants {self}")

    @property
    def C(self):
        c = self.E / (1.0 - self.nu ** 2)
        return np.array([[c, self.nu * c, 0.0],
                         [self.nu * c, c, 0.0],
                         [0.0, 0.0, self.E / (2.0 * (1.0 + self.nu))]])


def plane_stress_elastic(mat: ElasticPlasticMaterial, eps):
    return np.asarray(eps, dtype=float) @ mat.C.T


def von_mises(stress):
    s = np.asarray(stress, dtype=float)
    s11, s22, s12 = s[..., 0], s[..., 1], s[..., 2]
    return np.sqrt(np.maximum(s11 * s11 + s22 * s22 - s11 * s22 + 3.0 * s12 * s12, 0.0))


# ----------------------------------------------------------------------------
# constitutive update
# ----------------------------------------------------------------------------

@dataclass
class GaussPointState:
    """Total strain, plastic strain (engineering shear), equivalent plastic strain, stress."""

    eps: np.ndarray = field(default_factory=lambda: np.zeros(3))
    eps_p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ebar_p: float = 0.0
    stress: np.ndarray = field(default_factory=lambda: np.zeros(3))


def return_map_batch(mat: ElasticPlasticMaterial, eps, eps_p_old, ebar_old):
    """Vector form of the return map; returns ``(stress, eps_p, ebar, tangent, failures)``."""
    eps = np.ascontiguousarray(eps, dtype=float)
    ng = eps.shape[0]
    stress = np.empty((ng, 3))
    eps_p = np.empty((ng, 3))
    ebar = np.empty(ng)
    tangent = np.empty((ng, 3, 3))
    failures = _kernels.return_map_batch(
        eps, np.ascontiguousarray(eps_p_old, dtype=float),
        np.ascontiguousarray(ebar_old, dtype=float),
        mat.E, mat.nu, mat.sigma_y0, mat.H_mod, stress, eps_p, ebar, tangent)
    return stress, eps_p, ebar, tangent, failures


def return_map_plane_stress(mat: ElasticPlasticMaterial, state: GaussPointState, deps,
                            with_tangent: bool = False):
    """Implicit plane-stress radial return for one point under strain increment ``deps``."""
    eps = state.eps + np.asarray(deps, dtype=float)
    stress, eps_p, ebar, D, failures = return_map_batch(
        mat, eps[None], state.eps_p[None], np.array([state.ebar_p]))
    if failures:
        raise PlasticityError("local return-map Newton did not converge in 100 iterations")
    new = GaussPointState(eps, eps_p[0], float(ebar[0]), stress[0])
    return (new, D[0]) if with_tangent else new


def yield_function(mat: ElasticPlasticMaterial, stress, ebar_p):
    return von_mises(stress) - (mat.sigma_y0 + mat.H_mod * np.asarray(ebar_p))


# ----------------------------------------------------------------------------
# mesh
# ----------------------------------------------------------------------------

@dataclass
class DogboneMesh:
    nodes: np.ndarray  # (N, 2) mm
    quads: np.ndarray  # (nq, 4) counter-clockwise
    tris: np.ndarray  # (nt, 3) counter-clockwise
    left: np.ndarray
    right: np.ndarray

    @property
    def n_elements(self):
        return len(self.quads) + len(self.tris)

    @property
    def n_nodes(self):
        return len(self.nodes)

    def translated(self, offset):
        return replace(self, nodes=self.nodes + np.asarray(offset, dtype=float))

    def to_text(self, path):
        """Write the plain-text mesh format (see README, "Mesh text format")."""
        with open(path, "w") as fh:
            fh.write("# seqop mesh v1 (mm)\n")
            fh.write(f"nodes {self.n_nodes}\n")
            for i, (x, y) in enumerate(self.nodes):
                fh.write(f"{i} {x:.17g} {y:.17g}\n")
            fh.write(f"elements {self.n_elements}\n")
            k = 0
            for q in self.quads:
                fh.write(f"{k} Q4 {' '.join(map(str, q))}\n")
                k += 1
            for t in self.tris:
                fh.write(f"{k} T3 {' '.join(map(str, t))}\n")
                k += 1
            for name in ("left", "right"):
                ids = getattr(self, name)
                fh.write(f"set {name} {len(ids)}\n{' '.join(map(str, ids))}\n")

    @classmethod
    def from_text(cls, path):
        with open(path) as fh:
            lines = [ln.split() for ln in fh if ln.strip() and not ln.startswith("#")]
        it = iter(lines)
        n = int(next(it)[1])
        nodes = np.array([[float(r[1]), float(r[2])] for r in (next(it) for _ in range(n))])
        ne = int(next(it)[1])
        quads, tris = [], []
        for _ in range(ne):
            r = next(it)
            (quads if r[1] == "Q4" else tris).append([int(v) for v in r[2:]])
        sets = {}
        for r in it:
            sets[r[1]] = np.array(next(it), dtype=np.int64)
        return cls(nodes, np.array(quads, dtype=np.int64).reshape(-1, 4),
                   np.array(tris, dtype=np.int64).reshape(-1, 3), sets["left"], sets["right"])


def dogbone_half_width(x, gauge_length=40.0, transition=15.0):
    x = np.asarray(x, dtype=float)
    grip = 0.5 * GRIP_WIDTH
    gauge = 0.5 * GAUGE_WIDTH
    a = 0.5 * (SPECIMEN_LENGTH - gauge_length) - transition  # grip end
    d = np.abs(x - 0.5 * SPECIMEN_LENGTH)
    s = np.clip((0.5 * gauge_length + transition - d) / transition, 0.0, 1.0)
    w = grip + (gauge - grip) * 0.5 * (1.0 - np.cos(np.pi * s))
    assert a > 0
    return w


def _corner_jacobians(xy):
    """Cross products at the four corners of each quad, (nq, 4)."""
    prev = np.roll(xy, 1, axis=1)
    nxt = np.roll(xy, -1, axis=1)
    a = nxt - xy
    b = prev - xy
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def build_dogbone_mesh(target_elems: int = 4756, gauge_length: float = 40.0,
                       transition: float = 15.0, split_ratio: float = 0.5) -> DogboneMesh:
    """Mapped quad mesh of the dog bone, ``nx * ny`` close to ``target_elems``.

    Quads whose corner-Jacobian ratio falls below ``split_ratio`` are split
    into two triangles along their shorter diagonal.
    """
    if target_elems < 100:
        raise ValueError(f"target_elems={target_elems} cannot resolve the grip/gauge geometry")
    grip_len = 0.5 * (SPECIMEN_LENGTH - gauge_length) - transition
    if grip_len <= 0:
        raise ValueError("gauge plus transitions longer than the specimen")
    mean_w = 2.0 * float(np.mean(dogbone_half_width(np.linspace(0, SPECIMEN_LENGTH, 2001),
                                                    gauge_length, transition)))
    best = None
    for ny in range(4, 400):
        nx = max(int(round(target_elems / ny)), 10)
        aspect = (SPECIMEN_LENGTH / nx) / (mean_w / ny)
        score = abs(nx * ny - target_elems) / target_elems + 0.05 * abs(np.log(aspect))
        if best is None or score < best[0]:
            best = (score, nx, ny)
    _, nx, ny = best

    # keep the breakpoints of the profile on grid lines
    seg = np.array([grip_len, transition, gauge_length, transition, grip_len])
    counts = np.maximum(np.round(seg / seg.sum() * nx).astype(int), 1)
    counts[2] += nx - counts.sum()
    bounds = np.concatenate(([0.0], np.cumsum(seg)))
    xs = np.concatenate([np.linspace(bounds[i], bounds[i + 1], counts[i], endpoint=False)
                         for i in range(5)] + [[SPECIMEN_LENGTH]])
    nx = len(xs) - 1
    w = dogbone_half_width(xs, gauge_length, transition)
    eta = np.linspace(-1.0, 1.0, ny + 1)
    X = np.repeat(xs, ny + 1)
    Y = 0.5 * GRIP_WIDTH + (w[:, None] * eta[None, :]).ravel()
    nodes = np.column_stack([X, Y])

    nid = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    quads = np.stack([nid[:-1, :-1], nid[1:, :-1], nid[1:, 1:], nid[:-1, 1:]], axis=-1).reshape(-1, 4)
    J = _corner_jacobians(nodes[quads])
    if np.any(J <= 0):
        raise ValueError("mesh generation produced an inverted quad")
    bad = J.min(axis=1) / J.max(axis=1) < split_ratio
    tris = []
    for q in quads[bad]:
        d02 = np.linalg.norm(nodes[q[0]] - nodes[q[2]])
        d13 = np.linalg.norm(nodes[q[1]] - nodes[q[3]])
        if d02 <= d13:
            tris += [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]
        else:
            tris += [[q[0], q[1], q[3]], [q[1], q[2], q[3]]]
    return DogboneMesh(nodes, quads[~bad], np.array(tris, dtype=np.int64).reshape(-1, 3),
                       nid[0].copy(), nid[-1].copy())


def rectangle_mesh(length: float, width: float, nx: int, ny: int) -> DogboneMesh:
    """Structured strip ``[0, length] x [0, width]``; used for verification problems."""
    xs = np.linspace(0.0, length, nx + 1)
    ys = np.linspace(0.0, width, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nid = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    quads = np.stack([nid[:-1, :-1], nid[1:, :-1], nid[1:, 1:], nid[:-1, 1:]], axis=-1).reshape(-1, 4)
    return DogboneMesh(np.column_stack([X.ravel(), Y.ravel()]), quads,
                       np.zeros((0, 3), dtype=np.int64), nid[0].copy(), nid[-1].copy())


# ----------------------------------------------------------------------------
# finite elements
# ----------------------------------------------------------------------------

_G = 1.0 / np.sqrt(3.0)
_Q4_POINTS = np.array([[-_G, -_G], [_G, -_G], [_G, _G], [-_G, _G]])


def _q4_dshape(xi, eta):
    return 0.25 * np.array([[-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)],
                            [-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)]])


def _b_matrix(dNdx):
    """(..., 2, nn) shape gradients -> (..., 3, 2nn) strain-displacement matrix."""
    nn = dNdx.shape[-1]
    B = np.zeros(dNdx.shape[:-2] + (3, 2 * nn))
    B[..., 0, 0::2] = dNdx[..., 0, :]
    B[..., 1, 1::2] = dNdx[..., 1, :]
    B[..., 2, 0::2] = dNdx[..., 1, :]
    B[..., 2, 1::2] = dNdx[..., 0, :]
    return B


@dataclass
class _Group:
    conn: np.ndarray  # (ne, nn)
    B: np.ndarray  # (ne, ng, 3, 2nn)
    w: np.ndarray  # (ne, ng)
    dofs: np.ndarray  # (ne, 2nn)

    @property
    def n_points(self):
        return self.w.size


def _q4_group(nodes, conn, t):
    xy = nodes[conn]  # (ne, 4, 2)
    Bs, ws = [], []
    for xi, eta in _Q4_POINTS:
        dN = _q4_dshape(xi, eta)  # (2, 4)
        J = np.einsum("ak,ekb->eab", dN, xy)  # (ne, 2, 2)
        detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        if np.any(detJ <= 0):
            raise ValueError("non-positive element Jacobian")
        dNdx = np.linalg.solve(J, np.broadcast_to(dN, J.shape[:1] + dN.shape))
        Bs.append(_b_matrix(dNdx))
        ws.append(detJ * t)  # Gauss weights are 1
    return _Group(conn, np.stack(Bs, axis=1), np.stack(ws, axis=1), _dofs(conn))


def _t3_group(nodes, conn, t):
    xy = nodes[conn]
    dN = np.array([[-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])
    J = np.einsum("ak,ekb->eab", dN, xy)
    detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(detJ <= 0):
        raise ValueError("non-positive element Jacobian")
    dNdx = np.linalg.solve(J, np.broadcast_to(dN, J.shape[:1] + dN.shape))
    return _Group(conn, _b_matrix(dNdx)[:, None], (0.5 * detJ * t)[:, None], _dofs(conn))


def _dofs(conn):
    d = np.empty((conn.shape[0], 2 * conn.shape[1]), dtype=np.int64)
    d[:, 0::2] = 2 * conn
    d[:, 1::2] = 2 * conn + 1
    return d


def element_groups(mesh: DogboneMesh, thickness: float = 1.0):
    groups = []
    if len(mesh.quads):
        groups.append(_q4_group(mesh.nodes, mesh.quads, thickness))
    if len(mesh.tris):
        groups.append(_t3_group(mesh.nodes, mesh.tris, thickness))
    return groups


def element_jacobians(mesh: DogboneMesh):
    """Smallest Jacobian determinant of every element (quads at Gauss points, triangles exact)."""
    out = []
    for g in element_groups(mesh):
        out.append(g.w.min(axis=1))
    return np.concatenate(out)


class _Pattern:
    """Fixed sparsity for repeated assembly of the free/free and free/fixed blocks."""

    def __init__(self, groups, free, fixed, ndof):
        self.free_index = np.full(ndof, -1, dtype=np.int64)
        self.free_index[free] = np.arange(len(free))
        self.fixed_index = np.full(ndof, -1, dtype=np.int64)
        self.fixed_index[fixed] = np.arange(len(fixed))
        self.nf, self.nc = len(free), len(fixed)
        rows = np.concatenate([np.repeat(g.dofs, g.dofs.shape[1], axis=1).ravel() for g in groups])
        cols = np.concatenate([np.tile(g.dofs, (1, g.dofs.shape[1])).ravel() for g in groups])
        r, c = self.free_index[rows], self.free_index[cols]
        self.ff = self._block(r, c, self.nf, self.nf)
        c2 = self.fixed_index[cols]
        self.fc = self._block(r, c2, self.nf, self.nc)
        upper = (r >= 0) & (c >= 0) & (r <= c)
        self.bw = int(np.max(c[upper] - r[upper])) if upper.any() else 0
        self.band_mask = upper
        self.band_index = (self.bw + r[upper] - c[upper]) * self.nf + c[upper]

    @staticmethod
    def _block(r, c, nr, nc):
        mask = (r >= 0) & (c >= 0)
        key = r[mask] * nc + c[mask]
        uniq, inv = np.unique(key, return_inverse=True)
        indptr = np.searchsorted(uniq // nc, np.arange(nr + 1))
        return mask, inv, uniq % nc, indptr, len(uniq), (nr, nc)

    @staticmethod
    def build(block, vals):
        mask, inv, indices, indptr, nnz, shape = block
        data = np.bincount(inv, weights=vals[mask], minlength=nnz)
        return sp.csr_matrix((data, indices, indptr), shape=shape)

    def factor(self, vals):
        """Solver for the free/free block: banded Cholesky, sparse LU if not positive definite."""
        if self.bw < 0.1 * self.nf:
            ab = np.bincount(self.band_index, weights=vals[self.band_mask],
                             minlength=(self.bw + 1) * self.nf).reshape(self.bw + 1, self.nf)
            try:
                cb = sla.cholesky_banded(ab, lower=False, check_finite=False)
                return lambda rhs: sla.cho_solve_banded((cb, False), rhs, check_finite=False)
            except sla.LinAlgError:
                pass
        try:
            lu = splu(self.build(self.ff, vals).tocsc(), permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise PlasticityError(f"singular stiffness; check boundary constraints ({exc})") from exc
        return lu.solve


@dataclass
class SolidSolution:
    von_mises: np.ndarray
    wall_time: float
    increments: list = field(default_factory=list)  # Newton iterations per increment
    displacement: np.ndarray | None = None
    stress: list = field(default_factory=list)  # per element group, (ne, ng, 3)
    ebar_p: list = field(default_factory=list)

    def to_csv(self, path, mesh: DogboneMesh):
        np.savetxt(path, np.column_stack([mesh.nodes, self.von_mises]), delimiter=",",
                   header="node_x,node_y,von_mises", comments="", fmt="%.17g")


class PlasticSolver:
    """Incremental Newton-Raphson driver bound to one mesh and material."""

    def __init__(self, mesh: DogboneMesh, mat: ElasticPlasticMaterial | None = None,
                 clamp: str = "full"):
        self.mesh = mesh
        self.mat = mat or ElasticPlasticMaterial()
        self.groups = element_groups(mesh, self.mat.thickness)
        ndof = 2 * mesh.n_nodes
        if clamp == "full":
            fixed = np.concatenate([2 * mesh.left, 2 * mesh.left + 1])
        elif clamp == "roller":
            # x fixed on the left edge, y pinned at its middle node only
            mid = mesh.left[np.argmin(np.abs(mesh.nodes[mesh.left, 1]
                                             - mesh.nodes[mesh.left, 1].mean()))]
            fixed = np.concatenate([2 * mesh.left, [2 * mid + 1]])
        else:
            raise ValueError(f"unknown clamp {clamp!r}")
        self.fixed = np.concatenate([np.sort(fixed), 2 * mesh.right])
        self.n_left_fixed = len(fixed)
        if len(np.unique(self.fixed)) != len(self.fixed):
            raise ValueError("left and right boundary sets overlap")
        self.free = np.setdiff1d(np.arange(ndof), self.fixed)
        self.pattern = _Pattern(self.groups, self.free, self.fixed, ndof)
        self.ndof = ndof

    def _prescribed(self, u_right):
        u_c = np.zeros(len(self.fixed))
        u_c[self.n_left_fixed:] = u_right
        return u_c

    def assemble(self, u, states):
        """Internal force, tangent values and trial states at displacement ``u``."""
        fint = np.zeros(self.ndof)
        kvals, trial, failures = [], [], 0
        for g, (eps_p_old, ebar_old) in zip(self.groups, states):
            ne, ng = g.w.shape
            nd = g.dofs.shape[1]
            eps = np.matmul(g.B, u[g.dofs][:, None, :, None])[..., 0].reshape(-1, 3)
            sig, eps_p, ebar, D, f = return_map_batch(
                self.mat, eps, eps_p_old.reshape(-1, 3), ebar_old.ravel())
            failures += f
            fe = np.empty((ne, nd))
            ke = np.empty((ne, nd, nd))
            _kernels.element_integrals(g.B, g.w, sig, D, fe, ke)
            fint += np.bincount(g.dofs.ravel(), weights=fe.ravel(), minlength=self.ndof)
            kvals.append(ke.ravel())
            trial.append((eps_p.reshape(ne, ng, 3), ebar.reshape(ne, ng), sig.reshape(ne, ng, 3)))
        return fint, np.concatenate(kvals), trial, failures

    def initial_states(self):
        return [(np.zeros(g.w.shape + (3,)), np.zeros(g.w.shape)) for g in self.groups]

    def solve(self, history: LoadHistory, tol: float = 1e-8, max_iter: int = 25,
              max_bisections: int = 4, callback=None) -> SolidSolution:
        """Follow ``history`` in 100 increments.

        ``callback(k, u, stress, states)`` runs after every converged
        increment; ``stress`` and ``states`` are per element group.
        """
        if history.kind != "displacement":
            raise ValueError(f"plastic solver needs a displacement history, got {history.kind}")
        start = time.perf_counter()
        u = np.zeros(self.ndof)
        states = self.initial_states()
        fint, kvals, trial, _ = self.assemble(u, states)
        sig = [t[2] for t in trial]
        self._last = self.pattern.factor(kvals)
        iters = []
        for k in range(1, len(history.values)):
            u, states, sig, kvals, its = self._increment(
                u, states, sig, kvals, history.values[k - 1], history.values[k],
                tol, max_iter, max_bisections, k)
            iters.append(its)
            if callback is not None:
                callback(k, u, sig, states)
        vm = self.nodal_von_mises(sig)
        return SolidSolution(vm, time.perf_counter() - start, iters, u, sig,
                             [s[1] for s in states])

    def _increment(self, u, states, sig, kvals, u0, u1, tol, max_iter, depth_left, k):
        out = self._newton(u, states, kvals, u1, tol, max_iter)
        if out is not None:
            return out
        if depth_left == 0:
            raise PlasticityError(f"increment {k} (u={u1:.6g} mm) failed after bisection")
        mid = 0.5 * (u0 + u1)
        u, states, sig, kvals, a = self._increment(u, states, sig, kvals, u0, mid, tol,
                                                   max_iter, depth_left - 1, k)
        u, states, sig, kvals, b = self._increment(u, states, sig, kvals, mid, u1, tol,
                                                   max_iter, depth_left - 1, k)
        return u, states, sig, kvals, a + b

    def _newton(self, u, states, kvals, u_right, tol, max_iter):
        P = self.pattern
        free, fixed = self.free, self.fixed
        start_factor = self._last
        u = u.copy()
        u_c = self._prescribed(u_right)
        du_c = u_c - u[fixed]
        u[fixed] = u_c
        if np.any(du_c):
            # predictor reuses the tangent factorised closest to the converged state
            u[free] -= self._last(P.build(P.fc, kvals) @ du_c)
        fint, kv, trial, failures = self.assemble(u, states)
        for it in range(1, max_iter + 1):
            if failures or not np.all(np.isfinite(fint)):
                break
            r = fint[free]
            rn = np.linalg.norm(r)
            if rn <= max(tol * np.linalg.norm(fint[fixed]), 1e-10):
                return u, [(t[0], t[1]) for t in trial], [t[2] for t in trial], kv, it
            self._last = P.factor(kv)
            step = self._last(r)
            # backtracking on the residual norm; the softened plastic tangent overshoots
            alpha = 1.0
            for _ in range(8):
                u_try = u.copy()
                u_try[free] -= alpha * step
                out = self.assemble(u_try, states)
                if not out[3] and np.linalg.norm(out[0][free]) < rn:
                    break
                alpha *= 0.5
            u = u_try
            fint, kv, trial, failures = out
        self._last = start_factor
        return None

    def nodal_von_mises(self, sig):
        acc = np.zeros(self.mesh.n_nodes)
        wsum = np.zeros(self.mesh.n_nodes)
        for g, s in zip(self.groups, sig):
            vm = von_mises(s)  # (ne, ng)
            area = g.w.sum(axis=1)
            elem = (vm * g.w).sum(axis=1) / area
            nn = g.conn.shape[1]
            np.add.at(acc, g.conn.ravel(), np.repeat(elem * area, nn))
            np.add.at(wsum, g.conn.ravel(), np.repeat(area, nn))
        return acc / wsum


def solve_plastic(history: LoadHistory, mesh: DogboneMesh | None = None,
                  mat: ElasticPlasticMaterial | None = None, tol: float = 1e-8,
                  clamp: str = "full") -> SolidSolution:
    mesh = mesh if mesh is not None else build_dogbone_mesh()
    return PlasticSolver(mesh, mat, clamp).solve(history, tol)

"""Pure numpy implementations of the compiled kernels.

Same algorithms and stopping rules as the ``.pyx`` sources; results agree to
rounding, not bit for bit.
"""
import numpy as np
from scipy.linalg import solve_banded


def _interp(xs, ys, x):
    return np.interp(x, xs, ys)


def _slope(xs, ys, x):
    seg = (ys[1:] - ys[:-1]) / (xs[1:] - xs[:-1])
    idx = np.searchsorted(xs, x, side="left") - 1
    out = np.where((x <= xs[0]) | (x >= xs[-1]), 0.0, seg[np.clip(idx, 0, len(seg) - 1)])
    return out


def _sensible(cT, cV, cum, T):
    T = np.asarray(T, dtype=float)
    idx = np.clip(np.searchsorted(cT, T, side="left") - 1, 0, len(cT) - 2)
    d = T - cT[idx]
    s = (cV[idx + 1] - cV[idx]) / (cT[idx + 1] - cT[idx])
    mid = cum[idx] + cV[idx] * d + 0.5 * s * d * d
    below = cV[0] * T
    above = cum[-1] + cV[-1] * (T - cT[-1])
    return np.where(T <= cT[0], below, np.where(T > cT[-1], above, mid))


def _enthalpy(cT, cV, cum, L, Ts, Tl, T):
    f = np.clip((T - Ts) / (Tl - Ts), 0.0, 1.0)
    return _sensible(cT, cV, cum, T) + L * f


def _capacity(cT, cV, L, Ts, Tl, T):
    c = np.interp(T, cT, cV)
    return c + np.where((T > Ts) & (T < Tl), L / (Tl - Ts), 0.0)


def _residual(T, H_old, q, dt, h, rho, kT, kV, cT, cV, cum, L, Ts, Tl):
    n = T.shape[0]
    m = np.full(n, h)
    m[0] = m[-1] = 0.5 * h
    R = rho * m * (_enthalpy(cT, cV, cum, L, Ts, Tl, T) - H_old) / dt
    k = np.interp(0.5 * (T[:-1] + T[1:]), kT, kV)
    flux = k / h * (T[:-1] - T[1:])
    R[:-1] += flux
    R[1:] -= flux
    R[0] += q
    return R


def heat_newton_step(T, T_old, q, dt, h, rho, kT, kV, cT, cV, cum, L, Ts, Tl, tol, max_iter):
    """Advance one backward-Euler step in place; returns (iterations, converged)."""
    n = T.shape[0]
    m = np.full(n, h)
    m[0] = m[-1] = 0.5 * h
    H_old = _enthalpy(cT, cV, cum, L, Ts, Tl, np.asarray(T_old))
    R = _residual(T, H_old, q, dt, h, rho, kT, kV, cT, cV, cum, L, Ts, Tl)
    rn = np.sqrt(R @ R)
    target = max(tol * rn, 1e-12)
    if rn <= target:
        return 0, True
    ab = np.zeros((3, n))
    for it in range(1, max_iter + 1):
        Tm = 0.5 * (T[:-1] + T[1:])
        k = np.interp(Tm, kT, kV)
        g = 0.5 * _slope(kT, kV, Tm) / h * (T[:-1] - T[1:])
        di = rho * m * _capacity(cT, cV, L, Ts, Tl, T) / dt
        di[:-1] += k / h + g
        di[1:] += k / h - g
        ab[0, 1:] = -k / h + g
        ab[1] = di
        ab[2, :-1] = -k / h - g
        dx = solve_banded((1, 1), ab, -R)
        small = np.max(np.abs(dx)) <= 1e-10 * np.max(np.abs(T))
        alpha = 1.0
        for _ in range(12):
            T_try = T + alpha * dx
            R = _residual(T_try, H_old, q, dt, h, rho, kT, kV, cT, cV, cum, L, Ts, Tl)
            rt = np.sqrt(R @ R)
            if rt < (1.0 - 1e-4 * alpha) * rn or rt <= target:
                break
            alpha *= 0.5
        T[:] = T_try
        rn = rt
        if rn <= target or small:
            return it, True
    return max_iter, False


def return_map_batch(eps, eps_p_old, ebar_old, E, nu, sy0, Hm, stress, eps_p, ebar, tangent):
    """Update every point in place; returns the number of points whose local Newton failed."""
    G = E / (2.0 * (1.0 + nu))
    c0 = E / (1.0 - nu * nu)
    c1 = E / (3.0 * (1.0 - nu))
    C = np.array([[c0, c0 * nu, 0.0], [c0 * nu, c0, 0.0], [0.0, 0.0, G]])

    e = eps - eps_p_old
    trial = e @ C.T
    s0, s1, s2 = trial[:, 0], trial[:, 1], trial[:, 2]
    vm = np.sqrt(s0 * s0 + s1 * s1 - s0 * s1 + 3.0 * s2 * s2)
    plastic = vm > (sy0 + Hm * ebar_old) * (1.0 + 1e-12)

    stress[:] = trial
    eps_p[:] = eps_p_old
    ebar[:] = ebar_old
    tangent[:] = C
    if not plastic.any():
        return 0

    idx = np.nonzero(plastic)[0]
    p0, p1, p2 = s0[idx], s1[idx], s2[idx]
    eb0 = ebar_old[idx]
    a1 = (p0 + p1) ** 2
    a2 = (p1 - p0) ** 2
    bb = 0.5 * a2 + 2.0 * p2 * p2
    dg = np.zeros(idx.size)
    active = np.ones(idx.size, dtype=bool)
    for _ in range(100):
        D1 = 1.0 + c1 * dg
        D2 = 1.0 + 2.0 * G * dg
        xi = a1 / (6.0 * D1 * D1) + bb / (D2 * D2)
        s = np.sqrt(2.0 * xi / 3.0)
        sy = sy0 + Hm * (eb0 + dg * s)
        active &= np.abs(np.sqrt(1.5 * xi) - sy) > 1e-10 * sy0
        if not active.any():
            break
        phi = 0.5 * xi - sy * sy / 3.0
        dxi = -a1 * c1 / (3.0 * D1 ** 3) - 4.0 * G * bb / D2 ** 3
        de = s + dg * dxi / (3.0 * s)
        dphi = 0.5 * dxi - 2.0 / 3.0 * sy * Hm * de
        dg = np.where(active, dg - phi / dphi, dg)
    failures = int(active.sum())

    D1 = 1.0 + c1 * dg
    D2 = 1.0 + 2.0 * G * dg
    xi = a1 / (6.0 * D1 * D1) + bb / (D2 * D2)
    s = np.sqrt(2.0 * xi / 3.0)
    p = (p0 + p1) / D1
    d = (p1 - p0) / D2
    sig = np.stack([0.5 * (p - d), 0.5 * (p + d), p2 / D2], axis=1)
    ps = np.stack([(2.0 * sig[:, 0] - sig[:, 1]) / 3.0,
                   (2.0 * sig[:, 1] - sig[:, 0]) / 3.0,
                   2.0 * sig[:, 2]], axis=1)
    stress[idx] = sig
    eps_p[idx] = eps_p_old[idx] + dg[:, None] * ps
    ebar[idx] = eb0 + dg * s
    sy = sy0 + Hm * ebar[idx]

    lp = 1.0 / ((1.0 - nu) / E + dg / 3.0)
    ld = 1.0 / ((1.0 + nu) / E + dg)
    ls = 1.0 / (1.0 / G + 2.0 * dg)
    Xi = np.zeros((idx.size, 3, 3))
    Xi[:, 0, 0] = Xi[:, 1, 1] = 0.5 * (lp + ld)
    Xi[:, 0, 1] = Xi[:, 1, 0] = 0.5 * (lp - ld)
    Xi[:, 2, 2] = ls
    n = np.einsum("gij,gj->gi", Xi, ps)
    spn = np.einsum("gi,gi->g", ps, n)
    theta = 1.0 - 4.0 / 9.0 * sy * Hm * dg / s
    denom = theta * spn + 2.0 / 3.0 * sy * Hm * s
    tangent[idx] = Xi - (theta / denom)[:, None, None] * n[:, :, None] * n[:, None, :]
    return failures


def element_integrals(B, w, stress, tangent, fe, ke):
    """Per-element ``sum_g w B^T s`` and ``sum_g w B^T D B`` (points ordered element-major)."""
    ne, ng = w.shape
    sig = stress.reshape(ne, ng, 3)
    D = tangent.reshape(ne, ng, 3, 3)
    fe[:] = np.einsum("egij,egi,eg->ej", B, sig, w)
    DB = np.matmul(D, B) * w[:, :, None, None]
    ke[:] = np.matmul(np.swapaxes(B, 2, 3), DB).sum(axis=1)

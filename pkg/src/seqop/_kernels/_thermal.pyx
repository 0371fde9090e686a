# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implicit step for the 1D enthalpy heat equation.

Mirrors ``seqop._kernels.fallback.heat_newton_step`` operation for operation.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


cdef inline double _interp(const double[:] xs, const double[:] ys, double x) noexcept nogil:
    cdef Py_ssize_t n = xs.shape[0], i
    if x <= xs[0]:
        return ys[0]
    if x >= xs[n - 1]:
        return ys[n - 1]
    for i in range(n - 1):
        if x <= xs[i + 1]:
            return ys[i] + (ys[i + 1] - ys[i]) * (x - xs[i]) / (xs[i + 1] - xs[i])
    return ys[n - 1]


cdef inline double _slope(const double[:] xs, const double[:] ys, double x) noexcept nogil:
    cdef Py_ssize_t n = xs.shape[0], i
    if x <= xs[0] or x >= xs[n - 1]:
        return 0.0
    for i in range(n - 1):
        if x <= xs[i + 1]:
            return (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])
    return 0.0


cdef inline double _sensible(const double[:] cT, const double[:] cV, const double[:] cum,
                             double T) noexcept nogil:
    cdef Py_ssize_t n = cT.shape[0], i
    cdef double d, s
    if T <= cT[0]:
        return cV[0] * T
    for i in range(n - 1):
        if T <= cT[i + 1]:
            d = T - cT[i]
            s = (cV[i + 1] - cV[i]) / (cT[i + 1] - cT[i])
            return cum[i] + cV[i] * d + 0.5 * s * d * d
    return cum[n - 1] + cV[n - 1] * (T - cT[n - 1])


cdef inline double _enthalpy(const double[:] cT, const double[:] cV, const double[:] cum,
                             double L, double Ts, double Tl, double T) noexcept nogil:
    cdef double f
    if T <= Ts:
        f = 0.0
    elif T >= Tl:
        f = 1.0
    else:
        f = (T - Ts) / (Tl - Ts)
    return _sensible(cT, cV, cum, T) + L * f


cdef inline double _capacity(const double[:] cT, const double[:] cV,
                             double L, double Ts, double Tl, double T) noexcept nogil:
    cdef double c = _interp(cT, cV, T)
    if Ts < T < Tl:
        c += L / (Tl - Ts)
    return c


cdef double _residual(const double[:] T, const double[:] H_old, double q, double dt, double h,
                      double rho, const double[:] kT, const double[:] kV,
                      const double[:] cT, const double[:] cV, const double[:] cum,
                      double L, double Ts, double Tl, double[:] R) noexcept nogil:
    cdef Py_ssize_t n = T.shape[0], i
    cdef double m, k, flux, acc = 0.0
    for i in range(n):
        m = h if 0 < i < n - 1 else 0.5 * h
        R[i] = rho * m * (_enthalpy(cT, cV, cum, L, Ts, Tl, T[i]) - H_old[i]) / dt
    for i in range(n - 1):
        k = _interp(kT, kV, 0.5 * (T[i] + T[i + 1]))
        flux = k / h * (T[i] - T[i + 1])
        R[i] += flux
        R[i + 1] -= flux
    R[0] += q
    for i in range(n):
        acc += R[i] * R[i]
    return sqrt(acc)


def heat_newton_step(double[:] T, const double[:] T_old, double q, double dt, double h,
                     double rho, const double[:] kT, const double[:] kV,
                     const double[:] cT, const double[:] cV, const double[:] cum,
                     double L, double Ts, double Tl, double tol, int max_iter):
    """Advance one backward-Euler step in place; returns (iterations, converged)."""
    cdef Py_ssize_t n = T.shape[0], i
    cdef double[:] H_old = np.empty(n)
    cdef double[:] R = np.empty(n)
    cdef double[:] lo = np.empty(n)
    cdef double[:] di = np.empty(n)
    cdef double[:] up = np.empty(n)
    cdef double[:] dx = np.empty(n)
    cdef double[:] T_try = np.empty(n)
    cdef double r0, rn, rt, target, alpha, k, dk, g, m, w, dmax, tmax
    cdef int it, ls

    for i in range(n):
        H_old[i] = _enthalpy(cT, cV, cum, L, Ts, Tl, T_old[i])
    rn = _residual(T, H_old, q, dt, h, rho, kT, kV, cT, cV, cum, L, Ts, Tl, R)
    r0 = rn
    target = tol * r0
    if target < 1e-12:
        target = 1e-12
    if rn <= target:
        return 0, True

    for it in range(1, max_iter + 1):
        for i in range(n):
            m = h if 0 < i < n - 1 else 0.5 * h
            di[i] = rho * m * _capacity(cT, cV, L, Ts, Tl, T[i]) / dt
            lo[i] = 0.0
            up[i] = 0.0
        for i in range(n - 1):
            k = _interp(kT, kV, 0.5 * (T[i] + T[i + 1]))
            dk = _slope(kT, kV, 0.5 * (T[i] + T[i + 1]))
            g = 0.5 * dk / h * (T[i] - T[i + 1])
            di[i] += k / h + g
            up[i] += -k / h + g
            lo[i + 1] += -k / h - g
            di[i + 1] += k / h - g
        # Thomas solve J dx = -R
        for i in range(n):
            dx[i] = -R[i]
        for i in range(1, n):
            w = lo[i] / di[i - 1]
            di[i] -= w * up[i - 1]
            dx[i] -= w * dx[i - 1]
        dx[n - 1] /= di[n - 1]
        for i in range(n - 2, -1, -1):
            dx[i] = (dx[i] - up[i] * dx[i + 1]) / di[i]
        dmax = 0.0
        tmax = 0.0
        for i in range(n):
            dmax = max(dmax, fabs(dx[i]))
            tmax = max(tmax, fabs(T[i]))

        alpha = 1.0
        for ls in range(12):
            for i in range(n):
                T_try[i] = T[i] + alpha * dx[i]
            rt = _residual(T_try, H_old, q, dt, h, rho, kT, kV, cT, cV, cum, L, Ts, Tl, R)
            if rt < (1.0 - 1e-4 * alpha) * rn or rt <= target:
                break
            alpha *= 0.5
        for i in range(n):
            T[i] = T_try[i]
        rn = rt
        # a negligible full Newton correction also ends the step: near equilibrium
        # the residual floor sits below the roundoff of its O(rho h H / dt) terms
        if rn <= target or dmax <= 1e-10 * tmax:
            return it, True
    return max_iter, False

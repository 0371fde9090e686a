# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled plane-stress J2 return mapping over a batch of integration points."""
from libc.math cimport sqrt, fabs


def return_map_batch(const double[:, :] eps, const double[:, :] eps_p_old,
                     const double[:] ebar_old, double E, double nu, double sy0, double Hm,
                     double[:, :] stress, double[:, :] eps_p, double[:] ebar,
                     double[:, :, :] tangent):
    """Update every point in place; returns the number of points whose local Newton failed."""
    cdef Py_ssize_t ng = eps.shape[0], g, a, b
    cdef double G = E / (2.0 * (1.0 + nu))
    cdef double c0 = E / (1.0 - nu * nu)
    cdef double c1 = E / (3.0 * (1.0 - nu))
    cdef double e0, e1, e2, s0, s1, s2, vm, sy, a1, a2, a3, bb, dg, D1, D2
    cdef double xi, dxi, s, de, phi, dphi, p, d, lp, ld, ls, inv2, theta, denom
    cdef double ps0, ps1, ps2, n0, n1, n2, spn
    cdef double xi_m[3][3]
    cdef int it, failures = 0, ok
    inv2 = 0.5

    for g in range(ng):
        e0 = eps[g, 0] - eps_p_old[g, 0]
        e1 = eps[g, 1] - eps_p_old[g, 1]
        e2 = eps[g, 2] - eps_p_old[g, 2]
        s0 = c0 * (e0 + nu * e1)
        s1 = c0 * (nu * e0 + e1)
        s2 = G * e2
        vm = sqrt(s0 * s0 + s1 * s1 - s0 * s1 + 3.0 * s2 * s2)
        sy = sy0 + Hm * ebar_old[g]
        if vm <= sy * (1.0 + 1e-12):
            stress[g, 0] = s0
            stress[g, 1] = s1
            stress[g, 2] = s2
            eps_p[g, 0] = eps_p_old[g, 0]
            eps_p[g, 1] = eps_p_old[g, 1]
            eps_p[g, 2] = eps_p_old[g, 2]
            ebar[g] = ebar_old[g]
            for a in range(3):
                for b in range(3):
                    tangent[g, a, b] = 0.0
            tangent[g, 0, 0] = c0
            tangent[g, 1, 1] = c0
            tangent[g, 0, 1] = c0 * nu
            tangent[g, 1, 0] = c0 * nu
            tangent[g, 2, 2] = G
            continue

        a1 = (s0 + s1) * (s0 + s1)
        a2 = (s1 - s0) * (s1 - s0)
        a3 = s2 * s2
        bb = 0.5 * a2 + 2.0 * a3
        dg = 0.0
        ok = 0
        for it in range(100):
            D1 = 1.0 + c1 * dg
            D2 = 1.0 + 2.0 * G * dg
            xi = a1 / (6.0 * D1 * D1) + bb / (D2 * D2)
            s = sqrt(2.0 * xi / 3.0)
            sy = sy0 + Hm * (ebar_old[g] + dg * s)
            if fabs(sqrt(1.5 * xi) - sy) <= 1e-10 * sy0:
                ok = 1
                break
            phi = 0.5 * xi - sy * sy / 3.0
            dxi = -a1 * c1 / (3.0 * D1 * D1 * D1) - 4.0 * G * bb / (D2 * D2 * D2)
            de = s + dg * dxi / (3.0 * s)
            dphi = 0.5 * dxi - 2.0 / 3.0 * sy * Hm * de
            dg -= phi / dphi
        if not ok:
            failures += 1

        D1 = 1.0 + c1 * dg
        D2 = 1.0 + 2.0 * G * dg
        xi = a1 / (6.0 * D1 * D1) + bb / (D2 * D2)
        s = sqrt(2.0 * xi / 3.0)
        p = (s0 + s1) / D1
        d = (s1 - s0) / D2
        stress[g, 0] = 0.5 * (p - d)
        stress[g, 1] = 0.5 * (p + d)
        stress[g, 2] = s2 / D2
        ps0 = (2.0 * stress[g, 0] - stress[g, 1]) / 3.0
        ps1 = (2.0 * stress[g, 1] - stress[g, 0]) / 3.0
        ps2 = 2.0 * stress[g, 2]
        eps_p[g, 0] = eps_p_old[g, 0] + dg * ps0
        eps_p[g, 1] = eps_p_old[g, 1] + dg * ps1
        eps_p[g, 2] = eps_p_old[g, 2] + dg * ps2
        ebar[g] = ebar_old[g] + dg * s
        sy = sy0 + Hm * ebar[g]

        # (C^-1 + dg P)^-1 assembled from its three eigenmodes
        lp = 1.0 / ((1.0 - nu) / E + dg / 3.0)
        ld = 1.0 / ((1.0 + nu) / E + dg)
        ls = 1.0 / (1.0 / G + 2.0 * dg)
        xi_m[0][0] = inv2 * (lp + ld)
        xi_m[1][1] = inv2 * (lp + ld)
        xi_m[0][1] = inv2 * (lp - ld)
        xi_m[1][0] = inv2 * (lp - ld)
        xi_m[0][2] = 0.0
        xi_m[1][2] = 0.0
        xi_m[2][0] = 0.0
        xi_m[2][1] = 0.0
        xi_m[2][2] = ls
        n0 = xi_m[0][0] * ps0 + xi_m[0][1] * ps1
        n1 = xi_m[1][0] * ps0 + xi_m[1][1] * ps1
        n2 = xi_m[2][2] * ps2
        spn = ps0 * n0 + ps1 * n1 + ps2 * n2
        theta = 1.0 - 4.0 / 9.0 * sy * Hm * dg / s
        denom = theta * spn + 2.0 / 3.0 * sy * Hm * s
        tangent[g, 0, 0] = xi_m[0][0] - theta * n0 * n0 / denom
        tangent[g, 0, 1] = xi_m[0][1] - theta * n0 * n1 / denom
        tangent[g, 0, 2] = -theta * n0 * n2 / denom
        tangent[g, 1, 0] = xi_m[1][0] - theta * n1 * n0 / denom
        tangent[g, 1, 1] = xi_m[1][1] - theta * n1 * n1 / denom
        tangent[g, 1, 2] = -theta * n1 * n2 / denom
        tangent[g, 2, 0] = -theta * n2 * n0 / denom
        tangent[g, 2, 1] = -theta * n2 * n1 / denom
        tangent[g, 2, 2] = xi_m[2][2] - theta * n2 * n2 / denom
    return failures


def element_integrals(const double[:, :, :, :] B, const double[:, :] w,
                      const double[:, :] stress, const double[:, :, :] tangent,
                      double[:, :] fe, double[:, :, :] ke):
    """Per-element ``sum_g w B^T s`` and ``sum_g w B^T D B`` (points ordered element-major)."""
    cdef Py_ssize_t ne = B.shape[0], ng = B.shape[1], nd = B.shape[3]
    cdef Py_ssize_t e, g, p, i, j, a, b
    cdef double wg, acc
    cdef double DB[3][16]
    for e in range(ne):
        for i in range(nd):
            fe[e, i] = 0.0
            for j in range(nd):
                ke[e, i, j] = 0.0
        for g in range(ng):
            p = e * ng + g
            wg = w[e, g]
            for i in range(nd):
                fe[e, i] += wg * (B[e, g, 0, i] * stress[p, 0] + B[e, g, 1, i] * stress[p, 1]
                                  + B[e, g, 2, i] * stress[p, 2])
            for a in range(3):
                for j in range(nd):
                    DB[a][j] = wg * (tangent[p, a, 0] * B[e, g, 0, j] + tangent[p, a, 1] * B[e, g, 1, j]
                                     + tangent[p, a, 2] * B[e, g, 2, j])
            for i in range(nd):
                for j in range(nd):
                    acc = 0.0
                    for b in range(3):
                        acc += B[e, g, b, i] * DB[b][j]
                    ke[e, i, j] += acc

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stepping core: explicit RK4/Euler sweeps for 1-d flat and 1-d
covariant scenarios whose reaction term, drift and boundary conditions lower
to op codes.  The numpy fallback in flat.py/bundle.py implements the same
stage arithmetic; keep the two in sync.

Op codes mirror invariantflow._backend (kept literal here to avoid a
circular import).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef enum:
    PHI_ZERO = 0
    PHI_LINEAR = 1
    PHI_LOGISTIC = 2
    PHI_FHN = 3
    PHI_CONSTANT = 4

cdef enum:
    ZETA_ZERO = 0
    ZETA_CONSTANT = 1

cdef enum:
    BC_DIRICHLET = 0
    BC_NEUMANN_ZERO = 1

cdef enum:
    SCHEME_RK4 = 0
    SCHEME_EULER = 1

cdef enum:
    STATUS_OK = 0
    STATUS_OVERFLOW = 1


cdef inline void _add_phi(double[:, ::1] y, double[:, ::1] out, int nx, int m,
                          int phi_code, double[::1] p) noexcept:
    cdef int i, c, d
    cdef double v, acc
    if phi_code == PHI_ZERO:
        return
    if phi_code == PHI_LOGISTIC:
        for i in range(nx):
            for c in range(m):
                v = y[i, c]
                out[i, c] += p[0] * v * (1.0 - v)
    elif phi_code == PHI_LINEAR:
        for i in range(nx):
            for c in range(m):
                acc = 0.0
                for d in range(m):
                    acc += p[c * m + d] * y[i, d]
                out[i, c] += acc
    elif phi_code == PHI_FHN:
        # p = [a, b, eps, I]; m == 2
        for i in range(nx):
            v = y[i, 0]
            out[i, 0] += v - v * v * v / 3.0 - y[i, 1] + p[3]
            out[i, 1] += p[2] * (v + p[0] - p[1] * y[i, 1])
    elif phi_code == PHI_CONSTANT:
        for i in range(nx):
            for c in range(m):
                out[i, c] += p[c]


cdef void _rhs_flat(double[:, ::1] y, double[:, ::1] out, int nx, int m, double h,
                    int periodic, int bcl, int bcr,
                    int phi_code, double[::1] phi_params,
                    int zeta_code, double[::1] zeta_params) noexcept:
    cdef int i, c
    cdef double fl, fr, fc, h2 = h * h, inv2h = 0.5 / h
    cdef double z = 0.0
    if zeta_code == ZETA_CONSTANT:
        z = zeta_params[0]
    for i in range(1, nx - 1):
        for c in range(m):
            fl = y[i - 1, c]
            fr = y[i + 1, c]
            fc = y[i, c]
            out[i, c] = (fr - 2.0 * fc + fl) / h2 + z * (fr - fl) * inv2h
    if periodic:
        for c in range(m):
            fl = y[nx - 1, c]
            fr = y[1, c]
            fc = y[0, c]
            out[0, c] = (fr - 2.0 * fc + fl) / h2 + z * (fr - fl) * inv2h
            fl = y[nx - 2, c]
            fr = y[0, c]
            fc = y[nx - 1, c]
            out[nx - 1, c] = (fr - 2.0 * fc + fl) / h2 + z * (fr - fl) * inv2h
    else:
        if bcl == BC_NEUMANN_ZERO:
            for c in range(m):
                fl = y[1, c]  # mirror ghost
                fr = y[1, c]
                fc = y[0, c]
                out[0, c] = (fr - 2.0 * fc + fl) / h2 + z * (fr - fl) * inv2h
        else:
            for c in range(m):
                out[0, c] = 0.0
        if bcr == BC_NEUMANN_ZERO:
            for c in range(m):
                fl = y[nx - 2, c]
                fr = y[nx - 2, c]
                fc = y[nx - 1, c]
                out[nx - 1, c] = (fr - 2.0 * fc + fl) / h2 + z * (fr - fl) * inv2h
        else:
            for c in range(m):
                out[nx - 1, c] = 0.0
    _add_phi(y, out, nx, m, phi_code, phi_params)
    # Dirichlet nodes stay pinned: zero their rate after the reaction add
    if not periodic:
        if bcl == BC_DIRICHLET:
            for c in range(m):
                out[0, c] = 0.0
        if bcr == BC_DIRICHLET:
            for c in range(m):
                out[nx - 1, c] = 0.0


cdef int _check_guard(double[:, ::1] f, int nx, int m, double guard) noexcept:
    cdef int i, c
    cdef double v
    for i in range(nx):
        for c in range(m):
            v = f[i, c]
            # NaN fails both comparisons and trips the guard as well
            if not (-guard <= v <= guard):
                return STATUS_OVERFLOW
    return STATUS_OK


def advance_flat_1d(double[:, ::1] f, double dt, int nsteps, double h, int periodic,
                    int bcl, double[::1] bcl_vals, int bcr, double[::1] bcr_vals,
                    int phi_code, double[::1] phi_params,
                    int zeta_code, double[::1] zeta_params,
                    int scheme, double guard):
    """Advance the (nx, m) field nsteps in place; returns a status code."""
    cdef int nx = f.shape[0]
    cdef int m = f.shape[1]
    cdef int step, i, c
    y_arr = np.empty((nx, m))
    k1_arr = np.empty((nx, m))
    k2_arr = np.empty((nx, m))
    k3_arr = np.empty((nx, m))
    k4_arr = np.empty((nx, m))
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] k1 = k1_arr
    cdef double[:, ::1] k2 = k2_arr
    cdef double[:, ::1] k3 = k3_arr
    cdef double[:, ::1] k4 = k4_arr

    if not periodic:
        if bcl == BC_DIRICHLET:
            for c in range(m):
                f[0, c] = bcl_vals[c]
        if bcr == BC_DIRICHLET:
            for c in range(m):
                f[nx - 1, c] = bcr_vals[c]

    for step in range(nsteps):
        if scheme == SCHEME_EULER:
            _rhs_flat(f, k1, nx, m, h, periodic, bcl, bcr,
                      phi_code, phi_params, zeta_code, zeta_params)
            for i in range(nx):
                for c in range(m):
                    f[i, c] = f[i, c] + dt * k1[i, c]
        else:
            _rhs_flat(f, k1, nx, m, h, periodic, bcl, bcr,
                      phi_code, phi_params, zeta_code, zeta_params)
            for i in range(nx):
                for c in range(m):
                    y[i, c] = f[i, c] + 0.5 * dt * k1[i, c]
            _rhs_flat(y, k2, nx, m, h, periodic, bcl, bcr,
                      phi_code, phi_params, zeta_code, zeta_params)
            for i in range(nx):
                for c in range(m):
                    y[i, c] = f[i, c] + 0.5 * dt * k2[i, c]
            _rhs_flat(y, k3, nx, m, h, periodic, bcl, bcr,
                      phi_code, phi_params, zeta_code, zeta_params)
            for i in range(nx):
                for c in range(m):
                    y[i, c] = f[i, c] + dt * k3[i, c]
            _rhs_flat(y, k4, nx, m, h, periodic, bcl, bcr,
                      phi_code, phi_params, zeta_code, zeta_params)
            for i in range(nx):
                for c in range(m):
                    f[i, c] = f[i, c] + (dt / 6.0) * (
                        k1[i, c] + 2.0 * k2[i, c] + 2.0 * k3[i, c] + k4[i, c]
                    )
        if _check_guard(f, nx, m, guard) != STATUS_OK:
            return STATUS_OVERFLOW
    return STATUS_OK


cdef void _rhs_bundle(double[:, ::1] y, double[:, ::1] out, double[:, ::1] u,
                      double[::1] gl, double[::1] gr, double[::1] avg,
                      int nx, int m, double h, int bcl, int bcr,
                      double[::1] bcl_vals, double[::1] bcr_vals,
                      double[:, :, ::1] A_nodes, double[:, :, ::1] A_half,
                      double[::1] g_inv, double[::1] gamma,
                      int phi_code, double[::1] phi_params,
                      int zeta_code, double[::1] zeta_params) noexcept:
    cdef int i, j, c, d
    cdef double acc, ddf, df
    cdef double z = 0.0
    if zeta_code == ZETA_CONSTANT:
        z = zeta_params[0]

    # ghost nodes: covariant Neumann kills the centered covariant derivative;
    # for Dirichlet the ghost mirrors node 1 (the boundary rate is zeroed anyway)
    if bcl == BC_NEUMANN_ZERO:
        for c in range(m):
            acc = 0.0
            for d in range(m):
                acc += A_nodes[0, c, d] * y[0, d]
            gl[c] = y[1, c] + 2.0 * h * acc
    else:
        for c in range(m):
            gl[c] = y[1, c]
    if bcr == BC_NEUMANN_ZERO:
        for c in range(m):
            acc = 0.0
            for d in range(m):
                acc += A_nodes[nx - 1, c, d] * y[nx - 1, d]
            gr[c] = y[nx - 2, c] - 2.0 * h * acc
    else:
        for c in range(m):
            gr[c] = y[nx - 2, c]

    # covariant increments on the half grid: u[j] sits between nodes j-1 and j
    for j in range(nx + 1):
        for c in range(m):
            if j == 0:
                avg[c] = 0.5 * (y[0, c] + gl[c])
                u[j, c] = (y[0, c] - gl[c]) / h
            elif j == nx:
                avg[c] = 0.5 * (gr[c] + y[nx - 1, c])
                u[j, c] = (gr[c] - y[nx - 1, c]) / h
            else:
                avg[c] = 0.5 * (y[j, c] + y[j - 1, c])
                u[j, c] = (y[j, c] - y[j - 1, c]) / h
        for c in range(m):
            acc = 0.0
            for d in range(m):
                acc += A_half[j, c, d] * avg[d]
            u[j, c] = u[j, c] + acc

    for i in range(nx):
        for c in range(m):
            avg[c] = 0.5 * (u[i + 1, c] + u[i, c])  # D_x f at the node
        for c in range(m):
            acc = 0.0
            for d in range(m):
                acc += A_nodes[i, c, d] * avg[d]
            ddf = (u[i + 1, c] - u[i, c]) / h + acc
            df = avg[c]
            out[i, c] = g_inv[i] * (ddf - gamma[i] * df) + z * df
    _add_phi(y, out, nx, m, phi_code, phi_params)
    if bcl == BC_DIRICHLET:
        for c in range(m):
            out[0, c] = 0.0
    if bcr == BC_DIRICHLET:
        for c in range(m):
            out[nx - 1, c] = 0.0


def advance_bundle_1d(double[:, ::1] f, double dt, int nsteps, double h,
                      int bcl, double[::1] bcl_vals, int bcr, double[::1] bcr_vals,
                      double[:, :, ::1] A_nodes, double[:, :, ::1] A_half,
                      double[::1] g_inv, double[::1] gamma,
                      int phi_code, double[::1] phi_params,
                      int zeta_code, double[::1] zeta_params,
                      int scheme, double guard):
    """Advance the covariant (nx, m) field nsteps in place; returns a status code."""
    cdef int nx = f.shape[0]
    cdef int m = f.shape[1]
    cdef int step, i, c
    y_arr = np.empty((nx, m))
    k1_arr = np.empty((nx, m))
    k2_arr = np.empty((nx, m))
    k3_arr = np.empty((nx, m))
    k4_arr = np.empty((nx, m))
    u_arr = np.empty((nx + 1, m))
    gl_arr = np.empty(m)
    gr_arr = np.empty(m)
    avg_arr = np.empty(m)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] k1 = k1_arr
    cdef double[:, ::1] k2 = k2_arr
    cdef double[:, ::1] k3 = k3_arr
    cdef double[:, ::1] k4 = k4_arr
    cdef double[:, ::1] u = u_arr
    cdef double[::1] gl = gl_arr
    cdef double[::1] gr = gr_arr
    cdef double[::1] avg = avg_arr

    if bcl == BC_DIRICHLET:
        for c in range(m):
            f[0, c] = bcl_vals[c]
    if bcr == BC_DIRICHLET:
        for c in range(m):
            f[nx - 1, c] = bcr_vals[c]

    for step in range(nsteps):
        if scheme == SCHEME_EULER:
            _rhs_bundle(f, k1, u, gl, gr, avg, nx, m, h, bcl, bcr, bcl_vals, bcr_vals,
                        A_nodes, A_half, g_inv, gamma,
                        phi_code, phi_params, zeta_code, zeta_params)
            for i in range(nx):
                for c in range(m):
                    f[i, c] = f[i, c] + dt * k1[i, c]
        else:
            _rhs_bundle(f, k1, u, gl, gr, avg, nx, m, h, bcl, bcr, bcl_vals, bcr_vals,
                        A_nodes, A_half, g_inv, gamma,
                        phi_code, phi_params, zeta_code, zeta_params)
            for i in range(nx):
                for c in range(m):
                    y[i, c] = f[i, c] + 0.5 * dt * k1[i, c]
            _rhs_bundle(y, k2, u, gl, gr, avg, nx, m, h, bcl, bcr, bcl_vals, bcr_vals,
                        A_nodes, A_half, g_inv, gamma,
                        phi_code, phi_params, zeta_code, zeta_params)
            for i in range(nx):
                for c in range(m):
                    y[i, c] = f[i, c] + 0.5 * dt * k2[i, c]
            _rhs_bundle(y, k3, u, gl, gr, avg, nx, m, h, bcl, bcr, bcl_vals, bcr_vals,
                        A_nodes, A_half, g_inv, gamma,
                        phi_code, phi_params, zeta_code, zeta_params)
            for i in range(nx):
                for c in range(m):
                    y[i, c] = f[i, c] + dt * k3[i, c]
            _rhs_bundle(y, k4, u, gl, gr, avg, nx, m, h, bcl, bcr, bcl_vals, bcr_vals,
                        A_nodes, A_half, g_inv, gamma,
                        phi_code, phi_params, zeta_code, zeta_params)
            for i in range(nx):
                for c in range(m):
                    f[i, c] = f[i, c] + (dt / 6.0) * (
                        k1[i, c] + 2.0 * k2[i, c] + 2.0 * k3[i, c] + k4[i, c]
                    )
        if _check_guard(f, nx, m, guard) != STATUS_OK:
            return STATUS_OVERFLOW
    return STATUS_OK

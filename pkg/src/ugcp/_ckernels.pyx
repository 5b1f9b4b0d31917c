# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled propagation kernel.

Grids are lifted to three spatial axes (a 2D grid is 1 x H x W), so the
neighbor order axis0 -/+, axis1 -/+, axis2 -/+ matches the numpy path.

Gates and edge factors are ratios of per-location exponentials:

    sigmoid((u_p - u_q) / k) = E_p / (E_p + E_q),   E = exp((u - 1) / k)
    tanh(g_p - g_q) = (F_p - F_q) / (F_p + F_q),     F = exp(2 (g - max g))

so the edge pass needs no transcendental calls.  Edges whose exponentials
underflow fall back to the direct formulas.

Passes (each parallel over rows, disjoint writes, no cross-thread
reductions except an exact max):

1. uncertainty and E per location, F per location;
2. per undirected edge (p, p + e_axis): both gates and the edge factor,
   stored at the lower endpoint p;
3. per location, accumulate neighbor terms and the source.
"""
import threading

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport exp, expf, log, fabs, fabsf

cnp.import_array()

NAME = "compiled"

# below this an exponential is treated as underflowed
cdef double TINY = 1e-290

ctypedef fused real:
    float
    double


cdef inline double _sigmoid(double x) noexcept nogil:
    cdef double e = exp(-fabs(x))
    if x >= 0:
        return 1.0 / (1.0 + e)
    return e / (1.0 + e)


cdef inline double _tanh(double x) noexcept nogil:
    cdef double t = 1.0 - 2.0 / (1.0 + exp(2.0 * fabs(x)))
    return t if x >= 0 else -t


cdef void _loc_row(const real* s, const real* g, double* u, double* E, double* F,
                   Py_ssize_t K, Py_ssize_t N, Py_ssize_t start, Py_ssize_t stop,
                   double eps, double kappa, double gmax, int gamma_on, int phi_on) noexcept nogil:
    # sum_k softplus(s_k) = sum_k max(s_k, 0) + log(prod_k (1 + e^{-|s_k|}))
    cdef Py_ssize_t i, k
    cdef double pos, prod, x
    for i in range(start, stop):
        pos = 0.0
        prod = 1.0
        for k in range(K):
            x = s[k * N + i]
            if x > 0:
                pos = pos + x
            if real is float:
                prod = prod * (1.0 + expf(-fabsf(<float>x)))
            else:
                prod = prod * (1.0 + exp(-fabs(x)))
        u[i] = K / ((pos + K + log(prod)) + eps)
        E[i] = exp((u[i] - 1.0) / kappa)
        if phi_on:
            F[i] = exp(2.0 * (<double>g[i] - gmax))


cdef void _edge_row(const real* g, const double* u, const double* E, const double* F,
                    double* gin, double* gout, double* phi,
                    Py_ssize_t Z, Py_ssize_t Y, Py_ssize_t X, Py_ssize_t z, Py_ssize_t y,
                    double kappa, int gamma_on, int phi_on) noexcept nogil:
    # edge arrays are (3, N): gin[a*N+p] is the gate into p from p+e_a,
    # gout[a*N+p] the gate from p into p+e_a, phi[a*N+p] = tanh(g_p - g_{p+e_a})
    cdef Py_ssize_t N = Z * Y * X
    cdef Py_ssize_t x, p, a, q, j
    cdef Py_ssize_t st[3]
    cdef int has[3]
    cdef double inv, d
    st[0] = Y * X
    st[1] = X
    st[2] = 1
    for x in range(X):
        p = (z * Y + y) * X + x
        has[0] = z < Z - 1
        has[1] = y < Y - 1
        has[2] = x < X - 1
        for a in range(3):
            if not has[a]:
                continue
            q = p + st[a]
            j = a * N + p
            if not gamma_on:
                gin[j] = 0.5
                gout[j] = 0.5
            elif E[p] > TINY and E[q] > TINY:
                inv = 1.0 / (E[p] + E[q])
                gin[j] = E[p] * inv
                gout[j] = E[q] * inv
            else:
                d = (u[p] - u[q]) / kappa
                gin[j] = _sigmoid(d)
                gout[j] = _sigmoid(-d)
            if not phi_on:
                phi[j] = 1.0
            elif F[p] > TINY and F[q] > TINY:
                phi[j] = (F[p] - F[q]) / (F[p] + F[q])
            else:
                phi[j] = _tanh(<double>g[p] - <double>g[q])


cdef void _step_row(const real* s, const real* s0, const double* u, const double* E,
                    const double* gin, const double* gout, const double* phi,
                    real* out, Py_ssize_t K, Py_ssize_t Z, Py_ssize_t Y, Py_ssize_t X,
                    Py_ssize_t z, Py_ssize_t y, double theta, double kappa, double u0, double E0,
                    int phi_on, int source_on, double clamp) noexcept nogil:
    cdef Py_ssize_t N = Z * Y * X
    cdef Py_ssize_t x, p, k, n, nn, a, q
    cdef Py_ssize_t qs[6]
    cdef double cin[6]
    cdef Py_ssize_t st[3]
    cdef Py_ssize_t coord[3]
    cdef Py_ssize_t ext[3]
    cdef double acc, r, val, out_sum
    st[0] = Y * X
    st[1] = X
    st[2] = 1
    ext[0] = Z
    ext[1] = Y
    ext[2] = X
    coord[0] = z
    coord[1] = y
    for x in range(X):
        p = (z * Y + y) * X + x
        coord[2] = x
        nn = 0
        out_sum = 0.0
        for a in range(3):
            if coord[a] > 0:
                # edge stored at its lower endpoint q: gout there is the gate into p
                q = p - st[a]
                qs[nn] = q
                cin[nn] = gout[a * N + q] * (-phi[a * N + q]) if phi_on else gout[a * N + q]
                out_sum = out_sum + gin[a * N + q]
                nn = nn + 1
            if coord[a] < ext[a] - 1:
                qs[nn] = p + st[a]
                cin[nn] = gin[a * N + p] * phi[a * N + p] if phi_on else gin[a * N + p]
                out_sum = out_sum + gout[a * N + p]
                nn = nn + 1
        r = 0.0
        if source_on:
            if E0 > TINY and E[p] > TINY:
                r = E0 / (E0 + E[p])
            else:
                r = _sigmoid((u0 - u[p]) / kappa)
        for k in range(K):
            acc = -out_sum * s[k * N + p]
            for n in range(nn):
                acc = acc + cin[n] * s[k * N + qs[n]]
            if source_on:
                acc = acc + r * (<double>s0[k * N + p] - <double>s[k * N + p])
            val = s[k * N + p] + theta * acc
            if clamp > 0:
                if val > clamp:
                    val = clamp
                elif val < -clamp:
                    val = -clamp
            out[k * N + p] = <real>val


_local = threading.local()


def _workspace(Py_ssize_t N):
    # scratch reused per thread; fresh large allocations cost a page fault per 4 KiB
    ws = getattr(_local, "ws", None)
    if ws is None or ws[0].shape[0] != N:
        ws = (np.empty(N), np.empty(N), np.empty(N), np.empty(3 * N), np.empty(3 * N), np.empty(3 * N))
        _local.ws = ws
    return ws


def _run(real[:, ::1] s, real[:, ::1] s0, real[::1] g, real[:, ::1] out,
         Py_ssize_t Z, Py_ssize_t Y, Py_ssize_t X,
         double theta, double kappa, double u0, double eps,
         int gamma_on, int phi_on, int source_on, double clamp, int num_threads):
    cdef Py_ssize_t K = s.shape[0]
    cdef Py_ssize_t N = Z * Y * X
    cdef Py_ssize_t row, nrows = Z * Y
    ws = _workspace(N)
    cdef double[::1] u = ws[0]
    cdef double[::1] E = ws[1]
    cdef double[::1] F = ws[2]
    cdef double[::1] gin = ws[3]
    cdef double[::1] gout = ws[4]
    cdef double[::1] phi = ws[5]
    cdef double gmax = float(np.max(g)) if phi_on else 0.0
    cdef double E0 = exp((u0 - 1.0) / kappa)
    cdef const real* sp = &s[0, 0]
    cdef const real* s0p = &s0[0, 0]
    cdef const real* gp = &g[0]
    cdef real* op = &out[0, 0]
    with nogil:
        for row in prange(nrows, num_threads=num_threads, schedule="static"):
            _loc_row(sp, gp, &u[0], &E[0], &F[0], K, N, row * X, (row + 1) * X,
                     eps, kappa, gmax, gamma_on, phi_on)
        for row in prange(nrows, num_threads=num_threads, schedule="static"):
            _edge_row(gp, &u[0], &E[0], &F[0], &gin[0], &gout[0], &phi[0],
                      Z, Y, X, row // Y, row % Y, kappa, gamma_on, phi_on)
        for row in prange(nrows, num_threads=num_threads, schedule="static"):
            _step_row(sp, s0p, &u[0], &E[0], &gin[0], &gout[0], &phi[0], op, K, Z, Y, X,
                      row // Y, row % Y, theta, kappa, u0, E0, phi_on, source_on, clamp)


def ugcp_step(s, s0, g, theta, kappa, u0, eps, gamma_on=True, phi_on=True,
              source_on=True, clamp=None, num_threads=1):
    """One Jacobi update on a ``(K, *extents)`` logit field; returns a new array."""
    dtype = s.dtype
    ext = s.shape[1:]
    ext3 = (1,) * (3 - len(ext)) + tuple(ext)
    K = s.shape[0]
    sf = np.ascontiguousarray(s).reshape(K, -1)
    s0f = np.ascontiguousarray(s0, dtype=dtype).reshape(K, -1)
    gf = np.ascontiguousarray(g, dtype=dtype).reshape(-1)
    out = np.empty_like(sf)
    _run(sf, s0f, gf, out, ext3[0], ext3[1], ext3[2], float(theta), float(kappa),
         float(u0), float(eps), int(bool(gamma_on)), int(bool(phi_on)),
         int(bool(source_on)), float(clamp) if clamp is not None else -1.0,
         max(1, int(num_threads)))
    return out.reshape(s.shape)

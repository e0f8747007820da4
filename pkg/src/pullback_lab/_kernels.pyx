# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled RK4 stepping of an ensemble of Galerkin states.

The two sine transforms of every stage are single dgemm calls over the
whole ensemble; the stage arithmetic is fused into C loops.  Element-wise
loops run over members with prange, and the transforms use whatever BLAS
scipy ships, so results match across thread counts whenever BLAS does.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _force(double[:, ::1] U, double[:, ::1] V, double[:, ::1] dU,
                 double[:, ::1] dV, double inv_m, const double[:, ::1] S,
                 const double[::1] lam, const double[::1] g, double alpha,
                 double a1, double a2, double a3, double[:, ::1] phys,
                 int nthreads) noexcept nogil:
    # dU = V;  dV = (g - alpha V - lam U - f(U)) / m
    cdef int M = U.shape[0], N = U.shape[1], Q = S.shape[0]
    cdef int i, j, k
    cdef double s
    cdef double one = 1.0, zero = 0.0, scale = 2.0 / (Q + 1)
    cdef char tr = b'T', nt = b'N'
    if a2 == 0.0 and a3 == 0.0:
        for i in prange(M, num_threads=nthreads, schedule="static"):
            for k in range(N):
                dU[i, k] = V[i, k]
                dV[i, k] = (g[k] - alpha * V[i, k] - lam[k] * U[i, k] - a1 * U[i, k]) * inv_m
        return
    # row-major (M, N) data is column-major (N, M); phys^T = S U^T
    dgemm(&tr, &nt, &Q, &M, &N, &one, &S[0, 0], &N, &U[0, 0], &N, &zero,
          &phys[0, 0], &Q)
    for i in prange(M, num_threads=nthreads, schedule="static"):
        for j in range(Q):
            s = phys[i, j]
            phys[i, j] = s * (a1 + s * (a2 + s * a3))
    # dV^T = scale * S^T phys^T
    dgemm(&nt, &nt, &N, &M, &Q, &scale, &S[0, 0], &N, &phys[0, 0], &Q, &zero,
          &dV[0, 0], &N)
    for i in prange(M, num_threads=nthreads, schedule="static"):
        for k in range(N):
            dU[i, k] = V[i, k]
            dV[i, k] = (g[k] - alpha * V[i, k] - lam[k] * U[i, k] - dV[i, k]) * inv_m


cdef void _stage(double[:, ::1] out, double[:, ::1] base, double[:, ::1] k,
                 double c, int nthreads) noexcept nogil:
    cdef int i, j
    for i in prange(base.shape[0], num_threads=nthreads, schedule="static"):
        for j in range(base.shape[1]):
            out[i, j] = base[i, j] + c * k[i, j]


def rk4_advance(double[:, ::1] U, double[:, ::1] V, const double[::1] masses, double h,
                int nsteps, const double[:, ::1] S, const double[::1] lam,
                const double[::1] g, double alpha, double a1, double a2, double a3,
                int num_threads=1):
    """Advance every row of (U, V) by nsteps RK4 steps of size h, in place.

    masses[j] is eps*rho at t0 + j*h/2 for j = 0 .. 2*nsteps.
    """
    cdef int M = U.shape[0], N = U.shape[1], Q = S.shape[0]
    if V.shape[0] != M or V.shape[1] != N or S.shape[1] != N:
        raise ValueError("shape mismatch between states and transform")
    if masses.shape[0] < 2 * nsteps + 1:
        raise ValueError("need 2*nsteps+1 stage masses")
    if M == 0 or nsteps <= 0:
        return
    if num_threads < 1:
        num_threads = 1
    work = np.empty((10, M, N))
    cdef double[:, ::1] ku1 = work[0], kv1 = work[1], ku2 = work[2], kv2 = work[3]
    cdef double[:, ::1] ku3 = work[4], kv3 = work[5], ku4 = work[6], kv4 = work[7]
    cdef double[:, ::1] Ut = work[8], Vt = work[9]
    cdef double[:, ::1] phys = np.empty((M, Q))
    cdef double h2 = 0.5 * h, h6 = h / 6.0
    cdef double inv0, inv1, inv2
    cdef int n, i, k
    with nogil:
        for n in range(nsteps):
            inv0 = 1.0 / masses[2 * n]
            inv1 = 1.0 / masses[2 * n + 1]
            inv2 = 1.0 / masses[2 * n + 2]
            _force(U, V, ku1, kv1, inv0, S, lam, g, alpha, a1, a2, a3, phys, num_threads)
            _stage(Ut, U, ku1, h2, num_threads)
            _stage(Vt, V, kv1, h2, num_threads)
            _force(Ut, Vt, ku2, kv2, inv1, S, lam, g, alpha, a1, a2, a3, phys, num_threads)
            _stage(Ut, U, ku2, h2, num_threads)
            _stage(Vt, V, kv2, h2, num_threads)
            _force(Ut, Vt, ku3, kv3, inv1, S, lam, g, alpha, a1, a2, a3, phys, num_threads)
            _stage(Ut, U, ku3, h, num_threads)
            _stage(Vt, V, kv3, h, num_threads)
            _force(Ut, Vt, ku4, kv4, inv2, S, lam, g, alpha, a1, a2, a3, phys, num_threads)
            for i in prange(M, num_threads=num_threads, schedule="static"):
                for k in range(N):
                    U[i, k] = U[i, k] + h6 * (ku1[i, k] + 2.0 * ku2[i, k]
                                              + 2.0 * ku3[i, k] + ku4[i, k])
                    V[i, k] = V[i, k] + h6 * (kv1[i, k] + 2.0 * kv2[i, k]
                                              + 2.0 * kv3[i, k] + kv4[i, k])

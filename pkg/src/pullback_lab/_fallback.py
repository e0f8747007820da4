"""Pure numpy twin of the compiled RK4 ensemble kernel."""
from __future__ import annotations

import numpy as np


def _force(U, V, inv_m, S, lam, g, alpha, a1, a2, a3, scale):
    if a2 == 0.0 and a3 == 0.0:
        nl = a1 * U
    else:
        phys = U @ S.T
        nl = scale * ((phys * (a1 + phys * (a2 + phys * a3))) @ S)
    return V, (g - alpha * V - lam * U - nl) * inv_m


def rk4_advance(U, V, masses, h, nsteps, S, lam, g, alpha, a1, a2, a3, num_threads=1):
    """Advance every row of (U, V) by nsteps RK4 steps of size h, in place.

    masses[j] is eps*rho at t0 + j*h/2 for j = 0 .. 2*nsteps.
    """
    M, N = U.shape
    Q = S.shape[0]
    if V.shape != U.shape or S.shape[1] != N:
        raise ValueError("shape mismatch between states and transform")
    if len(masses) < 2 * nsteps + 1:
        raise ValueError("need 2*nsteps+1 stage masses")
    scale = 2.0 / (Q + 1)
    args = (S, lam, g, alpha, a1, a2, a3, scale)
    h2, h6 = 0.5 * h, h / 6.0
    for n in range(nsteps):
        inv0 = 1.0 / masses[2 * n]
        inv1 = 1.0 / masses[2 * n + 1]
        inv2 = 1.0 / masses[2 * n + 2]
        ku1, kv1 = _force(U, V, inv0, *args)
        ku2, kv2 = _force(U + h2 * ku1, V + h2 * kv1, inv1, *args)
        ku3, kv3 = _force(U + h2 * ku2, V + h2 * kv2, inv1, *args)
        ku4, kv4 = _force(U + h * ku3, V + h * kv3, inv2, *args)
        U += h6 * (ku1 + 2.0 * ku2 + 2.0 * ku3 + ku4)
        V += h6 * (kv1 + 2.0 * kv2 + 2.0 * kv3 + kv4)

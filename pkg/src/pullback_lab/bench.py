"""Timing comparison of the compiled and numpy stepping kernels."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .kernels import get_backend
from .model import ModelConfig, transform_matrix


@dataclass
class BenchRow:
    backend: str
    members: int
    steps: int
    seconds: float
    max_abs_diff: float  # against the numpy backend on the same input


def compare_backends(members=(1, 64, 256), steps: int = 200, n_modes: int = 32,
                     threads: int = 1, repeats: int = 3, seed: int = 0) -> list[BenchRow]:
    """Best-of-``repeats`` wall time of ``steps`` RK4 steps for each backend and ensemble size."""
    cfg = ModelConfig(n_modes=n_modes)
    S, lam, g = transform_matrix(n_modes), cfg.eigenvalues, cfg.g
    a1, a2, a3 = cfg.nonlinearity.coeffs
    masses = np.full(2 * steps + 1, 0.5)
    h = 0.002
    names = ["python"]
    try:
        get_backend("compiled")
        names.append("compiled")
    except ImportError:
        pass
    rng = np.random.default_rng(seed)
    rows = []
    for M in members:
        U0 = rng.standard_normal((M, n_modes)) / lam
        V0 = rng.standard_normal((M, n_modes)) / np.sqrt(lam)
        ref = None
        for name in names:
            _, fn = get_backend(name)
            best = np.inf
            for _ in range(repeats):
                U, V = U0.copy(), V0.copy()
                t0 = time.perf_counter()
                fn(U, V, masses, h, steps, S, lam, g, cfg.alpha, a1, a2, a3, threads)
                best = min(best, time.perf_counter() - t0)
            if ref is None:
                ref = (U, V)
            diff = float(max(np.abs(U - ref[0]).max(), np.abs(V - ref[1]).max()))
            rows.append(BenchRow(name, M, steps, best, diff))
    return rows


def format_rows(rows) -> str:
    out = [f"{'backend':>9} {'M':>5} {'steps':>6} {'seconds':>10} {'speedup':>8} {'max|diff|':>10}"]
    base = {r.members: r.seconds for r in rows if r.backend == "python"}
    for r in rows:
        out.append(f"{r.backend:>9} {r.members:>5} {r.steps:>6} {r.seconds:>10.4f} "
                   f"{base[r.members] / r.seconds:>8.2f} {r.max_abs_diff:>10.2e}")
    return "\n".join(out)

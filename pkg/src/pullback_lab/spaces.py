"""Time-dependent phase-space norms, set distances, coverings and box counting.

Every set the rest of the package talks about (balls, attractor sections,
nets) is a finite :class:`PointCloud`.  Distances are computed in the
weighted Euclidean embedding of the modal coordinates, so the set operations
here reduce to plain Euclidean geometry once a cloud has been embedded.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import directed_hausdorff, pdist, squareform

ALLOWED_SIGMAS = (0.0, 1.0 / 3.0, 1.0)

RHO_KINDS = ("logistic", "arctan", "constant")


@dataclass(frozen=True)
class RhoProfile:
    """Decreasing mass profile rho(t) multiplying u_tt.

    kinds:
      logistic  rho(t) = 1 / (1 + exp(rate * t)), params = [rate] (default rate 1)
      arctan    rho(t) = 1/2 - arctan(rate * t) / pi, params = [rate]
      constant  rho(t) = c, params = [c]; a frozen profile for linear oracles.
                It does not decay, so ``check`` reports the tail condition failed.
    """

    kind: str = "logistic"
    params: tuple[float, ...] = ()
    L_bound: float = 1.25

    def __post_init__(self):
        if self.kind not in RHO_KINDS:
            raise ValueError(f"unknown rho profile {self.kind!r}; choose from {RHO_KINDS}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    @property
    def _p0(self) -> float:
        if self.params:
            return self.params[0]
        return 1.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "logistic":
            # 1/(1+e^x) written to avoid overflow for large |x|
            x = self._p0 * t
            out = np.where(x > 0, np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))),
                           1.0 / (1.0 + np.exp(-np.abs(x))))
        elif self.kind == "arctan":
            out = 0.5 - np.arctan(self._p0 * t) / np.pi
        else:
            out = np.full_like(t, self._p0)
        return out if out.ndim else float(out)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "logistic":
            r = self(t)
            out = -self._p0 * r * (1.0 - r)
        elif self.kind == "arctan":
            out = -self._p0 / (np.pi * (1.0 + (self._p0 * t) ** 2))
        else:
            out = np.zeros_like(t)
        return out if np.ndim(out) else float(out)

    def first_below(self, level: float, lo: float, hi: float) -> float | None:
        """First time in [lo, hi] where rho drops below ``level``, or None."""
        if self(hi) >= level:
            return None
        if self(lo) < level:
            return lo
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self(mid) < level:
                hi = mid
            else:
                lo = mid
        return hi

    def check(self, t_min: float = -50.0, t_max: float = 50.0, n: int = 20001,
              tail_tol: float = 1e-6) -> dict:
        ts = np.linspace(t_min, t_max, n)
        r, dr = self(ts), self.derivative(ts)
        bound = float(np.max(np.abs(r) + np.abs(dr)))
        return {
            "decreasing": bool(np.all(dr <= 0.0)),
            "bounded": bound <= self.L_bound,
            "sup_abs_rho_plus_abs_drho": bound,
            "tail_vanishes": bool(self(t_max) < tail_tol),
            "positive": bool(np.all(r > 0.0)),
        }


@dataclass(frozen=True)
class PhaseMetric:
    """Norm ||(u, v)||^2 = ||u||^2_{sigma+1} + eps*rho(t)*||v||^2_sigma on modal data.

    With ||w||^2_s = sum_k lambda_k^s w_k^2, where w_k are sine-series
    coefficients.
    """

    epsilon: float
    sigma: float
    rho: RhoProfile
    eigenvalues: np.ndarray = field(repr=False)

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        object.__setattr__(self, "eigenvalues", lam)
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if not any(abs(self.sigma - s) < 1e-12 for s in ALLOWED_SIGMAS):
            raise ValueError(f"sigma must be one of 0, 1/3, 1; got {self.sigma}")
        if lam.ndim != 1 or lam.size == 0 or lam[0] <= 0 or np.any(np.diff(lam) <= 0):
            raise ValueError("eigenvalues must be positive and strictly increasing")

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size

    def with_epsilon(self, epsilon: float) -> "PhaseMetric":
        return PhaseMetric(epsilon, self.sigma, self.rho, self.eigenvalues)

    def with_sigma(self, sigma: float) -> "PhaseMetric":
        return PhaseMetric(self.epsilon, sigma, self.rho, self.eigenvalues)

    def weights(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        lam = self.eigenvalues
        wu = lam ** (self.sigma + 1.0)
        wv = self.epsilon * self.rho(t) * lam ** self.sigma
        return wu, wv

    def embed(self, u: np.ndarray, v: np.ndarray, t: float) -> np.ndarray:
        """Map modal coordinates to R^{2N} isometrically."""
        u = np.atleast_2d(u)
        v = np.atleast_2d(v)
        if u.shape[-1] != self.n_modes or v.shape[-1] != self.n_modes:
            raise ValueError(
                f"mode count mismatch: state has {u.shape[-1]}/{v.shape[-1]}, "
                f"metric has {self.n_modes}")
        wu, wv = self.weights(t)
        return np.hstack([u * np.sqrt(wu), v * np.sqrt(wv)])

    def norm_sq_arrays(self, u: np.ndarray, v: np.ndarray, t: float) -> np.ndarray:
        if u.shape[-1] != self.n_modes or v.shape[-1] != self.n_modes:
            raise ValueError(
                f"mode count mismatch: state has {u.shape[-1]}/{v.shape[-1]}, "
                f"metric has {self.n_modes}")
        wu, wv = self.weights(t)
        return np.sum(wu * u * u, axis=-1) + np.sum(wv * v * v, axis=-1)


def norm_sq(state, t: float, metric: PhaseMetric) -> float:
    """Squared H^eps_{t,sigma} norm of a single modal state."""
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    u = np.asarray(state.u, dtype=float)
    v = np.asarray(state.v, dtype=float)
    return float(metric.norm_sq_arrays(u, v, t))


def distance(x, y, t: float, metric: PhaseMetric) -> float:
    du = np.asarray(x.u) - np.asarray(y.u)
    dv = np.asarray(x.v) - np.asarray(y.v)
    return float(np.sqrt(metric.norm_sq_arrays(du, dv, t)))


@dataclass
class PointCloud:
    """Finite set of modal states sharing a time stamp and a metric.

    ``u`` and ``v`` have shape (m, N); row i is the i-th state.
    """

    time: float
    u: np.ndarray
    v: np.ndarray
    metric: PhaseMetric

    def __post_init__(self):
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        if self.u.shape != self.v.shape:
            raise ValueError("u and v blocks must have the same shape")
        if self.u.size and self.u.shape[1] != self.metric.n_modes:
            raise ValueError(
                f"cloud has {self.u.shape[1]} modes, metric has {self.metric.n_modes}")

    @classmethod
    def from_states(cls, states: Sequence, metric: PhaseMetric, time: float | None = None):
        if not states:
            raise ValueError("cannot build a cloud from an empty state list")
        t0 = states[0].time if time is None else time
        for s in states:
            if abs(s.time - t0) > 1e-12:
                raise ValueError("all states in a cloud must share the time stamp")
        return cls(t0, np.array([s.u for s in states]), np.array([s.v for s in states]), metric)

    def __len__(self) -> int:
        return self.u.shape[0]

    @property
    def states(self):
        from .model import ModalState
        return [ModalState(self.u[i].copy(), self.v[i].copy(), self.time) for i in range(len(self))]

    def embedded(self) -> np.ndarray:
        return self.metric.embed(self.u, self.v, self.time)

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx, dtype=int)
        return PointCloud(self.time, self.u[idx], self.v[idx], self.metric)

    def union(self, other: "PointCloud") -> "PointCloud":
        _check_compatible(self, other)
        return PointCloud(self.time, np.vstack([self.u, other.u]),
                          np.vstack([self.v, other.v]), self.metric)

    def with_metric(self, metric: PhaseMetric) -> "PointCloud":
        return PointCloud(self.time, self.u, self.v, metric)

    def norms(self) -> np.ndarray:
        return np.sqrt(self.metric.norm_sq_arrays(self.u, self.v, self.time))

    def diameter(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(np.max(pdist(self.embedded())))


def _check_compatible(a: PointCloud, b: PointCloud) -> None:
    if len(a) == 0 or len(b) == 0:
        raise ValueError("Hausdorff distance needs nonempty clouds")
    if abs(a.time - b.time) > 1e-9:
        raise ValueError(f"time-stamp mismatch: {a.time} vs {b.time}")
    ma, mb = a.metric, b.metric
    if (ma.epsilon != mb.epsilon or ma.sigma != mb.sigma or ma.rho != mb.rho
            or not np.array_equal(ma.eigenvalues, mb.eigenvalues)):
        raise ValueError("clouds carry different metrics")


def hausdorff_semidist(from_cloud: PointCloud, to_cloud: PointCloud) -> float:
    """max over x in from_cloud of min over y in to_cloud of d(x, y)."""
    _check_compatible(from_cloud, to_cloud)
    # scipy's early-break search is exact; seed only fixes the visiting order
    d, _, _ = directed_hausdorff(from_cloud.embedded(), to_cloud.embedded(), seed=0)
    return float(d)


def symmetric_hausdorff(a: PointCloud, b: PointCloud) -> float:
    return max(hausdorff_semidist(a, b), hausdorff_semidist(b, a))


def _center_index(points: np.ndarray) -> int:
    """Sample point with the smallest distance to its farthest neighbour."""
    if points.shape[0] <= 2:
        return 0
    D = squareform(pdist(points))
    return int(np.argmin(D.max(axis=1)))


def _net_indices(points: np.ndarray, radius: float, start: int = 0) -> np.ndarray:
    """Farthest-point traversal from ``start``; stops once every point is within radius."""
    m = points.shape[0]
    chosen = [start]
    d2 = np.sum((points - points[start]) ** 2, axis=1)
    r2 = radius * radius
    while True:
        j = int(np.argmax(d2))
        if d2[j] <= r2:
            break
        chosen.append(j)
        d2 = np.minimum(d2, np.sum((points - points[j]) ** 2, axis=1))
        if len(chosen) > m:  # pragma: no cover - guards against NaN input
            raise RuntimeError("net construction did not terminate")
    return np.asarray(chosen, dtype=int)


def greedy_net_indices(cloud: PointCloud, radius: float, start: str = "first") -> np.ndarray:
    """Indices of a greedy net; ``start`` is "first" (index 0) or "center" (1-centre)."""
    if not radius > 0:
        raise ValueError(f"net radius must be positive, got {radius}")
    if len(cloud) == 0:
        raise ValueError("cannot cover an empty cloud")
    if start not in ("first", "center"):
        raise ValueError(f"unknown start rule {start!r}")
    pts = cloud.embedded()
    return _net_indices(pts, radius, _center_index(pts) if start == "center" else 0)


def greedy_net(cloud: PointCloud, radius: float) -> PointCloud:
    """Subset N of cloud with every cloud point within ``radius`` of N.

    |N| upper-estimates the minimal covering number; the chosen centres are
    pairwise farther apart than ``radius``.
    """
    return cloud.subset(greedy_net_indices(cloud, radius))


def is_cover(cloud: PointCloud, net: PointCloud, radius: float) -> bool:
    return hausdorff_semidist(cloud, net) <= radius


@dataclass
class DimensionEstimate:
    estimate: float
    fit_quality: float
    radii: np.ndarray
    counts: np.ndarray
    degenerate: bool = False

    def __iter__(self):
        # allows ``est, quality = box_counting_dim(...)``
        yield self.estimate
        yield self.fit_quality


def box_counting_dim(cloud: PointCloud, radii: Sequence[float]) -> DimensionEstimate:
    """Slope of ln|greedy_net(cloud, r)| against ln(1/r).

    Radii outside [2 * min pairwise distance, diameter] are dropped before
    the fit.  A cloud with a single distinct point gives estimate 0 with
    ``degenerate`` set and NaN quality.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.size < 3:
        raise ValueError("box counting needs at least 3 radii")
    if np.any(radii <= 0):
        raise ValueError("radii must be positive")
    if radii.max() / radii.min() < 10.0 * (1 - 1e-12):
        raise ValueError("radii must span at least one decade")
    pts = np.unique(cloud.embedded(), axis=0)
    if pts.shape[0] < 2:
        return DimensionEstimate(0.0, float("nan"), radii, np.ones_like(radii), True)
    dists = pdist(pts)
    lo, hi = 2.0 * dists.min(), dists.max()
    keep = (radii >= lo) & (radii <= hi)
    used = radii[keep]
    if used.size < 2:
        raise ValueError(
            f"fewer than 2 radii inside the resolved range [{lo:.3g}, {hi:.3g}]")
    counts = np.array([_net_indices(pts, r).size for r in used], dtype=float)
    x = np.log(1.0 / used)
    y = np.log(counts)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    quality = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else float("nan")
    return DimensionEstimate(float(slope), float(quality), used, counts)


def dyadic_radii(cloud: PointCloud, n_max: int = 12) -> np.ndarray:
    """Dyadic radii covering the resolved scale range of a cloud."""
    pts = np.unique(cloud.embedded(), axis=0)
    if pts.shape[0] < 2:
        return np.array([1.0, 0.1, 0.01])
    d = pdist(pts)
    hi, lo = d.max(), 2.0 * d.min()
    k = np.arange(n_max)
    radii = hi * 0.5 ** k
    radii = radii[radii >= lo]
    if radii.size < 3 or radii[0] / radii[-1] < 10:
        radii = hi * 0.5 ** np.arange(5)
    return radii

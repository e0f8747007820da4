"""Quasi-stability fits, discrete exponential attractors and Hölder continuity in eps.

The exponential attractor is built on the time grid t_n = n*T.  Every launch
level m carries a fixed sample of the ball B(mT), and the process is applied
one grid step at a time, so U(n, m) is literally the composition of one-step
maps.  A level-k set at grid index n is then a set of sample indices of
launch n - k:

    I_0(n) = net_0(n),   I_k(n) = net_k(n) | I_{k-1}(n-1),

where net_k(n) is a greedy cover of U(n, n-k) B(n-k) at radius 2 R0 (2 eta)^k.
Preimages are exact by construction, which is what allows a second family
(another eps) to reuse the index sets of a reference family.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .model import ModelConfig
from .process import (EvolutionSpec, TrajectorySample, evolve_arrays, fit_exponential_envelope,
                      sample_ball_arrays, shared_grid_spec)
from .spaces import (PhaseMetric, PointCloud, greedy_net_indices, hausdorff_semidist,
                     symmetric_hausdorff)


class QuasiStabilityError(RuntimeError):
    pass


class CoveringBudgetError(RuntimeError):
    pass


class PackingError(RuntimeError):
    pass


# Quasi-stability fit ---------------------------------------------------------

@dataclass
class QuasiStabilityFit:
    """Fitted ||diff(t)|| <= eta ||diff(t-T)|| + n_Z(diff) on a pair ensemble.

    n_Z(phi) = seminorm_scale * sup_s ||phi_u(s)||_{L2} over the recorded
    window.  eta = Q exp(-kappa T) and seminorm_scale = Q, where kappa is
    the fitted decay rate of normalized differences and Q the smallest
    constant making the envelope hold on every fitted pair.
    """

    T: float
    eta: float
    L_semi: float
    seminorm_scale: float
    kappa: float
    sample_count: int
    violations: int = 0
    holdout_violations: int = 0
    holdout_count: int = 0
    L1: float = 2.0
    epsilon: float = 1.0
    t: float = 0.0
    contraction: np.ndarray = field(default=None, repr=False)
    seminorm_ratio: np.ndarray = field(default=None, repr=False)
    trajectories: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")

    @property
    def valid(self) -> bool:
        return self.eta < 0.5

    def seminorm(self, traj: TrajectorySample) -> float:
        return self.seminorm_scale * traj.sup_l2_u()


def _envelope_Q(a, b, decay):
    return float(np.max(a / (decay + b)))


def _count_violations(a, b, eta, scale, rtol=1e-9):
    return int(np.sum(a > eta + scale * b + rtol * (eta + scale * b)))


def estimate_quasi_stability(ball: PointCloud, t: float, T: float, n_pairs: int,
                             cfg: ModelConfig, spec: EvolutionSpec | None = None,
                             seed: int = 0, t0: float = 0.0) -> QuasiStabilityFit:
    """Fit (eta, L) for the window [t - T, t] from random pairs of ``ball``."""
    spec = spec or EvolutionSpec()
    if not T > 0:
        raise ValueError("T must be positive (T = 0 is the identity map)")
    if t > t0:
        raise ValueError(f"t = {t} must not exceed t0 = {t0}")
    tau = t - T
    if abs(ball.time - tau) > 1e-9:
        raise ValueError(f"ball sample must sit at t - T = {tau}, got {ball.time}")
    M = len(ball)
    if M < 2:
        raise QuasiStabilityError("need at least two sample points")
    rng = np.random.default_rng(seed)
    I = rng.integers(0, M, size=n_pairs)
    J = (I + rng.integers(1, M, size=n_pairs)) % M
    U0 = np.vstack([ball.u[I], ball.u[J]])
    V0 = np.vstack([ball.v[I], ball.v[J]])
    _, _, rec = evolve_arrays(U0, V0, tau, t, cfg, spec, record=True)
    du = rec.u[:, :n_pairs] - rec.u[:, n_pairs:]
    dv = rec.v[:, :n_pairs] - rec.v[:, n_pairs:]
    metric = cfg.metric(0.0)
    dn = np.array([np.sqrt(metric.norm_sq_arrays(du[k], dv[k], rec.times[k]))
                   for k in range(rec.times.size)])  # (K, P)
    d0 = dn[0]
    ok = d0 > 1e-12
    if ok.sum() < 10:
        raise QuasiStabilityError(f"only {int(ok.sum())} admissible pairs (need >= 10)")
    du, dv, dn, d0 = du[:, ok], dv[:, ok], dn[:, ok], d0[ok]
    P = d0.size
    a = dn[-1] / d0
    b = np.sqrt(np.max(np.sum(du ** 2, axis=2), axis=0)) / d0
    lam = cfg.eigenvalues
    zsup = np.sqrt(np.max(np.sum(lam * du ** 2, axis=2) + np.sum(dv ** 2, axis=2), axis=0))
    s = rec.times - tau
    ratio = dn / d0
    _, kappa, _, _ = fit_exponential_envelope(s, ratio.max(axis=1))
    if kappa <= 0:
        kappa = max(-math.log(max(a.max(), 1e-300)) / T, 0.0)
    decay = math.exp(-kappa * T)
    Q = _envelope_Q(a, b, decay)
    eta = Q * decay
    # hold-out: fit on even pairs, test on odd ones
    ev, od = np.arange(0, P, 2), np.arange(1, P, 2)
    Qh = _envelope_Q(a[ev], b[ev], decay)
    trajs = [TrajectorySample(rec.times, du[:, i], dv[:, i]) for i in range(P)]
    return QuasiStabilityFit(
        T=float(T), eta=float(eta), L_semi=float(np.max(zsup / d0)), seminorm_scale=float(Q),
        kappa=float(kappa), sample_count=P, violations=_count_violations(a, b, eta, Q),
        holdout_violations=_count_violations(a[od], b[od], Qh * decay, Qh),
        holdout_count=int(od.size), L1=float(max(2.0, ratio.max())), epsilon=cfg.epsilon,
        t=float(t), contraction=a, seminorm_ratio=b, trajectories=trajs)


# Packing surrogate for m_Z --------------------------------------------------

@dataclass
class PackingEstimate:
    m: int
    radius: float
    subspace_dim: int
    full_rank: int
    counts: tuple[int, int]
    saturated: bool


def _trajectory_basis(trajs, eigenvalues, rel_tol, d_max):
    """Orthonormal (Frobenius, Z-weighted) basis of the difference-trajectory span."""
    sq = np.sqrt(eigenvalues)
    rows = [np.concatenate([(tr.u * sq).ravel(), tr.v.ravel()]) for tr in trajs]
    X = np.array(rows)
    _, sv, Vt = np.linalg.svd(X, full_matrices=False)
    if sv.size == 0 or not np.isfinite(sv).all() or sv[0] <= 0:
        raise PackingError("difference trajectories span no resolved subspace")
    rank = int(np.sum(sv >= rel_tol * sv[0]))
    return Vt[:min(rank, d_max)], rank


def packing_estimate(fit: QuasiStabilityFit, cfg: ModelConfig, radius: float | None = None,
                     n_samples: int = 2000, rel_tol: float = 1e-3, d_max: int = 3,
                     max_nodes: int = 12, seed: int = 0) -> PackingEstimate:
    """Greedy packing count of the Z-ball of ``radius`` (default 2L/eta) at n_Z-separation 1.

    The ball is restricted to the span of the leading principal directions
    of the recorded difference trajectories (at most ``d_max`` of them).
    The count is repeated on half the samples; ``saturated`` reports whether
    the two counts agree within 10%.
    """
    if not fit.valid:
        raise ValueError("packing needs a valid fit (eta < 1/2)")
    if not fit.trajectories:
        raise PackingError("fit carries no trajectories")
    R = 2.0 * fit.L_semi / fit.eta if radius is None else float(radius)
    if not np.isfinite(R) or R <= 0:
        raise PackingError(f"non-finite packing radius {R}")
    N = cfg.n_modes
    K = fit.trajectories[0].times.size
    B, rank = _trajectory_basis(fit.trajectories, cfg.eigenvalues, rel_tol, d_max)
    d = B.shape[0]
    basis = B.reshape(d, 2, K, N)  # [dir, (u*sqrt(lam) | v), node, mode]
    nodes = np.unique(np.linspace(0, K - 1, min(K, max_nodes)).astype(int))
    sq = np.sqrt(cfg.eigenvalues)
    # per-node linear maps coefficient -> Z-coordinates and -> L2 u-part
    Zmap = basis[:, :, nodes, :].transpose(2, 1, 3, 0).reshape(nodes.size, 2 * N, d)
    Umap = (basis[:, 0, nodes, :] / sq).transpose(1, 2, 0)  # (nodes, N, d)
    # reduce each map to a d x d triangular factor: ||A c|| = ||R c||
    Zr = np.array([np.linalg.qr(A, mode="r") for A in Zmap])
    Ur = np.array([np.linalg.qr(A, mode="r") for A in Umap]) * fit.seminorm_scale

    def znorm(C):
        return np.sqrt(np.max(np.sum(np.einsum("kij,mj->mki", Zr, C) ** 2, axis=2), axis=1))

    rng = np.random.default_rng(seed)
    # Frobenius-unit coefficients have Z-norm <= 1, so the coefficient ball of
    # radius R / min-gain contains the Z-ball; sample there and reject.
    gains = znorm(np.eye(d))
    rmax = R / max(gains.min(), 1e-300)
    pts = []
    need = n_samples
    for _ in range(200):
        w = rng.standard_normal((4 * need, d))
        w *= (rmax * rng.random(4 * need) ** (1.0 / d) / np.linalg.norm(w, axis=1))[:, None]
        w = w[znorm(w) <= R]
        pts.append(w)
        need -= w.shape[0]
        if need <= 0:
            break
    pts = np.vstack(pts)[:n_samples]
    if pts.shape[0] < n_samples // 2:
        raise PackingError("could not sample the restricted Z-ball")
    Y = np.einsum("kij,mj->mki", Ur, pts)  # (samples, nodes, d) seminorm coordinates

    def greedy(Yc):
        chosen = [0]
        for i in range(1, Yc.shape[0]):
            diff = Yc[chosen] - Yc[i]
            nz = np.sqrt(np.max(np.sum(diff * diff, axis=2), axis=1))
            if np.all(nz > 1.0):
                chosen.append(i)
        return len(chosen)

    full = greedy(Y)
    half = greedy(Y[: max(1, Y.shape[0] // 2)])
    m = max(full, 1)
    if not np.isfinite(m):
        raise PackingError("non-finite packing estimate")
    return PackingEstimate(int(m), R, d, rank, (half, full), bool(full <= 1.1 * half))


def dimension_bound_value(eta: float, m: float) -> float:
    """ln m / ln(1 / (2 eta))."""
    if not 0 < eta < 0.5:
        raise ValueError("eta must lie in (0, 1/2)")
    if not (m >= 1 and np.isfinite(m)):
        raise PackingError(f"packing number must be finite and >= 1, got {m}")
    return math.log(m) / math.log(1.0 / (2.0 * eta))


def dimension_bound(fit: QuasiStabilityFit, packing: PackingEstimate | int | None = None,
                    cfg: ModelConfig | None = None) -> float:
    """Fractal dimension bound from (eta, L) and the measured packing number."""
    if not fit.valid:
        raise ValueError("dimension bound needs eta < 1/2")
    if packing is None:
        if cfg is None:
            raise ValueError("need a model config to estimate the packing number")
        packing = packing_estimate(fit, cfg)
    m = packing.m if isinstance(packing, PackingEstimate) else packing
    return dimension_bound_value(fit.eta, m)


# Discrete exponential attractor ----------------------------------------------

@dataclass
class ExpAttractorSection:
    n: int
    time: float
    nets: dict            # k -> sample indices of launch n-k forming V_k(n)
    E_sets: dict          # k -> sample indices of launch n-k forming E_k(n)
    radii: dict           # k -> covering radius 2 R0 (2 eta)^k
    assembled: PointCloud
    eta_used: float
    R0_used: float
    dim_bound: float = float("nan")
    cover_valid: dict = field(default_factory=dict)
    attraction_defects: dict = field(default_factory=dict)
    semi_invariance_defect: float = float("nan")
    resolution: float = float("nan")
    shared_levels: int = -1

    @property
    def k_max(self) -> int:
        return max(self.E_sets)

    def cardinalities(self) -> dict:
        return {k: len(v) for k, v in self.E_sets.items()}

    def defect_ratios(self) -> list:
        """(k, defect(k+1)/defect(k)) for levels whose defect exceeds the resolution."""
        out = []
        ks = sorted(self.attraction_defects)
        for k0, k1 in zip(ks[:-1], ks[1:]):
            d0, d1 = self.attraction_defects[k0], self.attraction_defects[k1]
            if d0 > self.resolution and d1 > self.resolution:
                out.append((k0, d1 / d0))
        return out


class ExpAttractorBuild:
    """All launches, clouds and index sets of one exponential-attractor family."""

    def __init__(self, cfg: ModelConfig, spec: EvolutionSpec, T: float, eta: float, R0: float,
                 n_lo: int, n_hi: int, k_max: int, samples: dict, clouds: dict, metric: PhaseMetric):
        self.cfg, self.spec, self.T, self.eta, self.R0 = cfg, spec, T, eta, R0
        self.n_lo, self.n_hi, self.k_max = n_lo, n_hi, k_max
        self.samples = samples  # m -> (U, V) at time mT
        self.clouds = clouds    # (m, n) -> (U, V) at time nT
        self.metric = metric
        self.sections: dict[int, ExpAttractorSection] = {}
        self._I: dict = {}
        self._nets: dict = {}
        self._resamples: dict = {}
        self.seed = 0

    def radius(self, k: int) -> float:
        return 2.0 * self.R0 * (2.0 * self.eta) ** k

    def cloud(self, m: int, n: int) -> PointCloud:
        U, V = self.clouds[(m, n)]
        return PointCloud(n * self.T, U, V, self.metric)

    def section(self, n: int) -> ExpAttractorSection:
        return self.sections[n]

    def resample(self, m: int, n: int) -> PointCloud:
        """Independent sample of the launch-m ball, evolved to grid index n."""
        key = (m, n)
        if key not in self._resamples:
            size = self.samples[m][0].shape[0]
            U, V = sample_ball_arrays(size, self.R0, m * self.T, self.cfg,
                                      self.seed + 15485863 + 104729 * (m % 100003))
            for j in range(m + 1, n + 1):
                U, V = evolve_arrays(U, V, (j - 1) * self.T, j * self.T, self.cfg, self.spec)
            self._resamples[key] = (U, V)
        U, V = self._resamples[key]
        return PointCloud(n * self.T, U, V, self.metric)


def _launch_family(cfg, spec, T, R0, launches, n_hi, sample_size, seed, samples=None,
                   clouds=None):
    """Evolve every launch sample step by step up to grid index n_hi."""
    samples = {} if samples is None else samples
    clouds = {} if clouds is None else clouds
    for m in launches:
        if (m, n_hi) in clouds:
            continue
        if m not in samples:
            samples[m] = sample_ball_arrays(sample_size, R0, m * T, cfg, seed + 104729 * (m % 100003))
        U, V = samples[m]
        U, V = U.copy(), V.copy()
        clouds[(m, m)] = (U.copy(), V.copy())
        for n in range(m + 1, n_hi + 1):
            U, V = evolve_arrays(U, V, (n - 1) * T, n * T, cfg, spec)
            clouds[(m, n)] = (U.copy(), V.copy())
    return samples, clouds


def _select_k_max(cfg, spec, T, eta, R0, n_ref, sample_size, seed, k_cap, metric):
    """Smallest k with 2R0(2eta)^k below half the minimal pairwise distance of its cloud."""
    launches = list(range(n_ref - k_cap, n_ref + 1))
    samples, clouds = _launch_family(cfg, spec, T, R0, launches, n_ref, sample_size, seed)
    for k in range(k_cap + 1):
        U, V = clouds[(n_ref - k, n_ref)]
        emb = metric.embed(U, V, n_ref * T)
        dmin = pdist(emb).min() if emb.shape[0] > 1 else 0.0
        if 2.0 * R0 * (2.0 * eta) ** k < 0.5 * dmin:
            return k, samples, clouds
    return k_cap, samples, clouds


def build_exponential_attractor(n_range, fit: QuasiStabilityFit, R0: float, cfg: ModelConfig,
                                spec: EvolutionSpec | None = None, sample_size: int = 48,
                                seed: int = 0, k_cap: int = 8, packing_m: int | None = None,
                                reference: ExpAttractorBuild | None = None,
                                shared_levels: int = -1) -> ExpAttractorBuild:
    """Sections E(n) for n in ``n_range`` on the grid of step fit.T.

    With ``reference`` (a build for another eps on the same grid), the launch
    samples are shared and levels k <= ``shared_levels`` reuse the reference
    index sets, evolved under this family's process; deeper levels use their
    own nets.
    """
    spec = spec or EvolutionSpec()
    if not fit.valid:
        raise ValueError(f"fit not valid: eta = {fit.eta:.3g} >= 1/2")
    n_range = sorted(int(n) for n in n_range)
    if not n_range:
        raise ValueError("empty grid range")
    T, eta = fit.T, fit.eta
    metric = cfg.metric(0.0)
    n_lo, n_hi = n_range[0], n_range[-1]
    if reference is not None:
        if abs(reference.T - T) > 1e-12 or reference.n_hi < n_hi or reference.n_lo > n_lo:
            raise ValueError("reference build does not cover this grid")
        k_max, samples, clouds = reference.k_max, dict(reference.samples), {}
        eta, R0 = reference.eta, reference.R0
    else:
        k_max, samples, clouds = _select_k_max(cfg, spec, T, eta, R0, n_hi, sample_size, seed,
                                               k_cap, metric)
    launches = list(range(n_lo - k_max - 1, n_hi + 1))
    samples, clouds = _launch_family(cfg, spec, T, R0, launches, n_hi, sample_size, seed, samples,
                                     clouds)
    build = ExpAttractorBuild(cfg, spec, T, eta, R0, n_lo, n_hi, k_max, samples, clouds, metric)
    build.seed = seed

    def net(n, k):
        key = (n, k)
        if key not in build._nets:
            if reference is not None and k <= shared_levels:
                build._nets[key] = reference._nets[key]
            else:
                build._nets[key] = greedy_net_indices(build.cloud(n - k, n), build.radius(k),
                                                     start="center")
        return build._nets[key]

    def index_set(n, k):
        key = (n, k)
        if key not in build._I:
            if reference is not None and k <= shared_levels:
                build._I[key] = reference._I[key]
            elif k == 0:
                build._I[key] = net(n, 0)
            else:
                build._I[key] = np.union1d(net(n, k), index_set(n - 1, k - 1))
        return build._I[key]

    # the recursion reaches back to launch n - k at depth k; make sure it exists
    for n in range(n_lo - 1, n_hi + 1):
        for k in range(k_max + 1):
            if (n - k, n) in clouds:
                index_set(n, k)

    for n in n_range:
        sec = _assemble_section(build, n, net, index_set)
        if packing_m is not None:
            budget_m = max(int(packing_m), 2)
            for k, idx in sec.E_sets.items():
                if len(idx) > budget_m ** (k + 1):
                    raise CoveringBudgetError(
                        f"|E_{k}({n})| = {len(idx)} exceeds m^(k+1) = {budget_m ** (k + 1)}")
        sec.shared_levels = shared_levels if reference is not None else -1
        build.sections[n] = sec
    return build


def _assemble_section(build: ExpAttractorBuild, n: int, net, index_set) -> ExpAttractorSection:
    nets, E, radii, valid, defects = {}, {}, {}, {}, {}
    parts_u, parts_v = [], []
    for k in range(build.k_max + 1):
        cl = build.cloud(n - k, n)
        nets[k] = net(n, k)
        E[k] = index_set(n, k)
        radii[k] = build.radius(k)
        valid[k] = bool(hausdorff_semidist(cl, cl.subset(nets[k])) <= radii[k])
        parts_u.append(cl.u[E[k]])
        parts_v.append(cl.v[E[k]])
    assembled = PointCloud(n * build.T, np.vstack(parts_u), np.vstack(parts_v), build.metric)
    for k in range(build.k_max + 1):
        defects[k] = hausdorff_semidist(build.cloud(n - k, n), assembled)
    # levels past k_max lie in U(n, n-k_max)B, covered by the terminal net to
    # r_{k_max}; a point of that set is within the sampling gap (measured with
    # an independent resample) of the terminal cloud
    semi = float("nan")
    resolution = build.radius(build.k_max) + hausdorff_semidist(
        build.resample(n - build.k_max, n), build.cloud(n - build.k_max, n))
    if (n - 1 - build.k_max, n) in build.clouds and (n - 1, n - 1) in build.clouds:
        prev_u, prev_v = [], []
        for k in range(build.k_max + 1):
            idx = index_set(n - 1, k)
            cl = build.cloud(n - 1 - k, n)  # U(n, n-1) applied to E_k(n-1)
            prev_u.append(cl.u[idx])
            prev_v.append(cl.v[idx])
        image = PointCloud(n * build.T, np.vstack(prev_u), np.vstack(prev_v), build.metric)
        semi = hausdorff_semidist(image, assembled)
    return ExpAttractorSection(n, n * build.T, nets, E, radii, assembled, build.eta, build.R0,
                               cover_valid=valid, attraction_defects=defects,
                               semi_invariance_defect=semi, resolution=resolution)


def grid_index(t: float, T: float, t0: float = 0.0) -> int:
    """n_t = floor(t / T) for t <= t0, and n_* = floor(t0 / T) after t0."""
    return int(math.floor(min(t, t0) / T + 1e-12))


def transport_section(section: ExpAttractorSection, t: float, cfg: ModelConfig,
                      spec: EvolutionSpec | None = None, T: float | None = None,
                      t0: float = 0.0) -> PointCloud:
    """E(t) = U(t, n_t T) E(n_t)."""
    spec = spec or EvolutionSpec()
    if T is not None and grid_index(t, T, t0) != section.n:
        raise ValueError(f"section is at n = {section.n}, t = {t} needs n = {grid_index(t, T, t0)}")
    cl = section.assembled
    if t < cl.time:
        raise ValueError("transport only runs forward in time")
    if t == cl.time:
        return PointCloud(t, cl.u.copy(), cl.v.copy(), cl.metric)
    U, V = evolve_arrays(cl.u, cl.v, cl.time, t, cfg, spec)
    return PointCloud(t, U, V, cfg.metric(0.0))


@dataclass
class AttractionTransfer:
    """dist(U(t, t - tau) D0-sample, E(t)) against tau, with a log-linear rate fit."""

    taus: np.ndarray
    distances: np.ndarray
    beta: float
    C: float
    quality: float
    floor: float


def attraction_transfer(build: ExpAttractorBuild, n: int, radius: float, taus,
                        sample_size: int = 32, seed: int = 3,
                        floor: float | None = None) -> AttractionTransfer:
    """Launch samples of the radius-``radius`` ball at t - tau and measure their distance to E(n).

    Points at or below ``floor`` (default: the section resolution) are
    excluded from the fit dist ~ C exp(-beta tau).
    """
    sec = build.section(n)
    t = sec.time
    taus = np.asarray(sorted(float(x) for x in taus))
    if taus.size < 2 or taus[0] <= 0:
        raise ValueError("need at least two positive launch offsets")
    floor = sec.resolution if floor is None else floor
    d = np.empty(taus.size)
    for i, tau in enumerate(taus):
        U, V = sample_ball_arrays(sample_size, radius, t - tau, build.cfg, seed)
        U, V = evolve_arrays(U, V, t - tau, t, build.cfg, build.spec)
        d[i] = hausdorff_semidist(PointCloud(t, U, V, build.metric), sec.assembled)
    use = d > floor
    if use.sum() < 2:
        raise ValueError("fewer than two distances above the resolution floor")
    slope, icpt = np.polyfit(taus[use], np.log(d[use]), 1)
    y = np.log(d[use])
    resid = y - (slope * taus[use] + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    q = float(1.0 - np.sum(resid ** 2) / ss) if ss > 0 else 1.0
    return AttractionTransfer(taus, d, float(-slope), float(math.exp(icpt)), q, float(floor))


# Continuity in eps ---------------------------------------------------------

@dataclass
class GammaDistance:
    value: float
    eps: float
    eps0: float
    n_times: int
    n_offsets: int
    n_samples: int

    def __float__(self):
        return float(self.value)


def gamma_distance(eps: float, eps0: float, cfg: ModelConfig, spec: EvolutionSpec | None = None,
                   t0: float = 0.0, T: float = 2.0, radius: float = 1.0, t_grid=None,
                   n_offsets: int = 4, sample_size: int = 16, seed: int = 5,
                   a: float = 0.1) -> GammaDistance:
    """Sampled sup of ||U_eps(t, t-s)x - U_eps0(t, t-s)x||_{H_t}, x in B(t-s).

    The sup runs over t in ``t_grid`` (default t0 - j T/2, j = 0..4),
    s in {T/n_offsets, ..., T} and ``sample_size`` ball points; both
    processes share one step grid.
    """
    spec = spec or EvolutionSpec()
    for e in (eps, eps0):
        if not a <= e <= 1.0:
            raise ValueError(f"eps = {e} outside [{a}, 1]")
    t_grid = [t0 - j * T / 2 for j in range(5)] if t_grid is None else list(t_grid)
    if max(t_grid) > t0:
        raise ValueError("t_grid must not exceed t0")
    offs = [T * (i + 1) / n_offsets for i in range(n_offsets)]
    if eps == eps0:
        return GammaDistance(0.0, eps, eps0, len(t_grid), len(offs), sample_size)
    c1, c0 = cfg.with_epsilon(eps), cfg.with_epsilon(eps0)
    H = cfg.with_epsilon(1.0).metric(0.0)
    best = 0.0
    for t in t_grid:
        sp = shared_grid_spec(cfg, spec, (eps, eps0), t)
        for s in offs:
            # ball of the reference family; the two norms are equivalent on [a, 1]
            U, V = sample_ball_arrays(sample_size, radius, t - s, c0, seed)
            U1, V1 = evolve_arrays(U, V, t - s, t, c1, sp)
            U0, V0 = evolve_arrays(U, V, t - s, t, c0, sp)
            best = max(best, float(np.sqrt(H.norm_sq_arrays(U1 - U0, V1 - V0, t)).max()))
    return GammaDistance(best, eps, eps0, len(t_grid), len(offs), sample_size)


def shared_level_count(gamma: float, L1: float, eta: float) -> int:
    """Largest k with L1^k Gamma <= (2 eta)^k, i.e. k <= -log Gamma / (log L1 - log 2eta)."""
    if gamma <= 0:
        return 10 ** 6
    if gamma >= 1:
        return -1
    return int(math.floor(-math.log(gamma) / (math.log(L1) - math.log(2.0 * eta))))


@dataclass
class HolderFit:
    eps0: float
    gamma: float
    C_fit: float
    delta_validity: tuple[float, float]
    quality: float
    slope: float
    offsets: np.ndarray = field(repr=False, default=None)
    distances: np.ndarray = field(repr=False, default=None)

    def predict(self, offset):
        return self.C_fit * np.asarray(offset, dtype=float) ** self.gamma


def holder_continuity_fit(eps_grid, eps0: float, distances, gammas) -> HolderFit:
    """Fit dist^symm(E_eps(t), E_eps0(t)) ~ C |eps - eps0|^gamma where Gamma(eps, eps0) < 1.

    ``distances`` and ``gammas`` are sequences aligned with ``eps_grid``
    (or dicts keyed by eps).  gamma is constrained to (0, 1]; the
    unconstrained log-log slope is reported as ``slope``.
    """
    eps_grid = [float(e) for e in eps_grid]
    if isinstance(distances, dict):
        distances = [distances[e] for e in eps_grid]
    if isinstance(gammas, dict):
        gammas = [float(gammas[e]) for e in eps_grid]
    off = np.abs(np.array(eps_grid) - eps0)
    dist = np.asarray(distances, dtype=float)
    gam = np.array([float(g) for g in gammas])
    use = (off > 0) & (gam < 1.0) & (dist > 0) & np.isfinite(dist)
    if use.sum() < 2:
        raise ValueError("fewer than two grid points inside the validity range Gamma < 1")
    x, y = np.log(off[use]), np.log(dist[use])
    slope, icpt = np.polyfit(x, y, 1)
    gamma = float(min(max(slope, 1e-6), 1.0))
    if gamma != slope:
        icpt = float(np.mean(y - gamma * x))
    resid = y - (gamma * x + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    quality = float(1.0 - np.sum(resid ** 2) / ss) if ss > 0 else 1.0
    return HolderFit(float(eps0), gamma, float(math.exp(icpt)),
                     (float(off[use].min()), float(off[use].max())), quality, float(slope),
                     off, dist)


@dataclass
class HolderFamily:
    """Exponential-attractor sections for eps0 and a grid of eps, with Gamma per eps."""

    eps0: float
    t: float
    reference: ExpAttractorBuild
    builds: dict
    gammas: dict
    shared: dict
    sections_at_t: dict

    def distances(self) -> dict:
        ref = self.sections_at_t[self.eps0]
        H = PhaseMetric(1.0, 0.0, ref.metric.rho, ref.metric.eigenvalues)
        out = {}
        for e, cl in self.sections_at_t.items():
            out[e] = symmetric_hausdorff(cl.with_metric(H), ref.with_metric(H))
        return out

    def fit(self) -> HolderFit:
        grid = sorted(self.builds)
        d = self.distances()
        return holder_continuity_fit(grid, self.eps0, [d[e] for e in grid],
                                     [self.gammas[e] for e in grid])


def holder_family(eps_grid, eps0: float, t: float, fit: QuasiStabilityFit, R0: float,
                  cfg: ModelConfig, spec: EvolutionSpec | None = None, n_back: int = 1,
                  sample_size: int = 48, seed: int = 0, k_cap: int = 8,
                  gamma_kw: dict | None = None) -> HolderFamily:
    """Build E_eps0 and, for each eps, E_eps with the shared-net construction, then transport to t."""
    spec = spec or EvolutionSpec()
    grid = sorted({float(e) for e in eps_grid} | {float(eps0)})
    sp = shared_grid_spec(cfg, spec, grid, t)
    n_t = grid_index(t, fit.T)
    n_range = list(range(n_t - n_back, n_t + 1))
    c0 = cfg.with_epsilon(eps0)
    ref = build_exponential_attractor(n_range, fit, R0, c0, sp, sample_size, seed, k_cap)
    builds, gammas, shared, at_t = {float(eps0): ref}, {float(eps0): 0.0}, {}, {}
    gk = dict(T=fit.T, radius=R0)
    gk.update(gamma_kw or {})
    for e in grid:
        if e == eps0:
            continue
        g = gamma_distance(e, eps0, cfg, sp, **gk)
        gammas[e] = g.value
        shared[e] = shared_level_count(g.value, fit.L1, ref.eta)
        builds[e] = build_exponential_attractor(
            n_range, fit, R0, cfg.with_epsilon(e), sp, sample_size, seed, k_cap,
            reference=ref, shared_levels=min(shared[e], ref.k_max))
    for e, b in builds.items():
        at_t[e] = transport_section(b.section(n_t), t, cfg.with_epsilon(e), sp, fit.T)
    return HolderFamily(float(eps0), t, ref, builds, gammas, shared, at_t)

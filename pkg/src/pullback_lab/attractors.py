"""Absorbing balls, pullback attractor sections and continuity-in-eps scans."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import ModelConfig
from .process import (DecayFit, EvolutionSpec, evolve_arrays, fit_exponential_envelope,
                      sample_ball, sample_ball_arrays)
from .spaces import PhaseMetric, PointCloud, hausdorff_semidist, symmetric_hausdorff


class NonAbsorptionError(RuntimeError):
    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


class PullbackNonConvergence(RuntimeError):
    def __init__(self, msg, gap_history):
        super().__init__(msg)
        self.gap_history = list(gap_history)


@dataclass
class AbsorbingBall:
    R1: float
    probe_radius: float
    probe_times: tuple[float, ...]
    window: float
    tail_radii: np.ndarray
    depths: np.ndarray
    fit: DecayFit

    @property
    def depth(self) -> float:
        return float(np.max(self.depths))

    def launch_spread(self) -> float:
        """(max - min) / max of the per-probe tail radii."""
        r = self.tail_radii
        return float((r.max() - r.min()) / r.max()) if r.max() > 0 else 0.0


def absorbing_ball(cfg: ModelConfig, spec: EvolutionSpec | None = None, probe_radius: float = 10.0,
                   probe_times=(-10.0, -5.0, 0.0), window: float = 20.0, n_probe: int = 32,
                   seed: int = 0, margin: float = 1.05) -> AbsorbingBall:
    """Radius R1 of an H_t-ball that R-ball ensembles enter and stay in.

    Each probe ends at a time in ``probe_times`` and is launched ``window``
    earlier.  The per-probe radius is the ensemble sup-norm over the second
    half of the window; R1 = margin * max over probes (and over the fitted
    asymptotic radius).  The depth of a probe is the time after launch from
    which its sup-norm stays below R1 (0 if the launch ball is already inside).
    """
    spec = spec or EvolutionSpec()
    if probe_radius < 0 or window <= 0:
        raise ValueError("probe_radius must be >= 0 and window > 0")
    metric = cfg.metric(0.0)
    curves, tails = [], []
    fit = None
    for p, t_end in enumerate(probe_times):
        tau = t_end - window
        U, V = sample_ball_arrays(n_probe, probe_radius, tau, cfg, seed + 7919 * p)
        _, _, rec = evolve_arrays(U, V, tau, t_end, cfg, spec, record=True)
        sup = rec.norms(metric).max(axis=1)
        if not np.all(np.isfinite(sup)):  # pragma: no cover - evolve raises first
            raise NonAbsorptionError("non-finite probe trajectory")
        s = rec.times - tau
        q = s >= 0.75 * window
        if sup[q].size >= 2 and sup[q][-1] > 1.05 * sup[q][0] + 1e-12:
            raise NonAbsorptionError(
                f"probe ending at t={t_end} still growing at the end of the window",
                {"times": rec.times, "sup_norms": sup})
        tails.append(float(sup[s >= 0.5 * window].max()))
        curves.append((s, sup))
        if fit is None:
            C, k, R, qual = fit_exponential_envelope(s, sup)
            fit = DecayFit(k, R, C, (tau, t_end), qual, rec.times, sup)
    tails = np.array(tails)
    R1 = margin * max(float(tails.max()), fit.R_absorb)
    depths = []
    for s, sup in curves:
        outside = np.nonzero(sup > R1)[0]
        depths.append(0.0 if outside.size == 0 else float(s[min(outside[-1] + 1, s.size - 1)]))
    return AbsorbingBall(R1, probe_radius, tuple(probe_times), window, tails,
                         np.array(depths), fit)


@dataclass
class PullbackParams:
    sample_size: int = 64
    step: float = 2.0
    tol: float = 1e-3
    max_depth: int = 40
    radius: float = 1.0
    seed: int = 0


@dataclass
class AttractorSection:
    time: float
    epsilon: float
    cloud: PointCloud
    pullback_depth: float
    cauchy_gap: float
    sample_size: int
    gap_history: list = field(default_factory=list)
    converged: bool = True

    def tail_energy_fraction(self, sigma: float = 0.0) -> float:
        """Share of the squared norm carried by modes above N/2 (cloud total)."""
        m = self.cloud.metric
        wu, wv = m.with_sigma(sigma).weights(self.time)
        e = wu * self.cloud.u ** 2 + wv * self.cloud.v ** 2
        half = m.n_modes // 2
        tot = e.sum()
        return float(e[:, half:].sum() / tot) if tot > 0 else 0.0


def pullback_attractor(t: float, eps: float, cfg: ModelConfig, spec: EvolutionSpec | None = None,
                       params: PullbackParams | None = None) -> AttractorSection:
    """Section A_eps(t) from pullback images of absorbing-ball samples.

    Samples of the radius-``params.radius`` ball at tau_j = t - j*step are
    evolved to t; the section is accepted when successive images are closer
    than ``tol`` in symmetric Hausdorff distance twice in a row.
    """
    spec = spec or EvolutionSpec()
    params = params or PullbackParams()
    c = cfg.with_epsilon(eps)
    metric = c.metric(0.0)
    prev = sample_ball(params.sample_size, params.radius, t, c, params.seed)
    gaps, hits = [], 0
    for j in range(1, params.max_depth + 1):
        tau = t - j * params.step
        U, V = sample_ball_arrays(params.sample_size, params.radius, tau, c, params.seed)
        U, V = evolve_arrays(U, V, tau, t, c, spec)
        cur = PointCloud(t, U, V, metric)
        gap = symmetric_hausdorff(cur, prev)
        gaps.append(gap)
        hits = hits + 1 if gap < params.tol else 0
        prev = cur
        if hits >= 2:
            return AttractorSection(t, eps, cur, j * params.step, gap, params.sample_size, gaps)
    raise PullbackNonConvergence(
        f"no convergence at depth {params.max_depth * params.step} (last gap {gaps[-1]:.3e})", gaps)


def _section_or_none(t, eps, cfg, spec, params):
    try:
        return pullback_attractor(t, eps, cfg, spec, params)
    except PullbackNonConvergence:
        return None


def compute_sections(t, eps_list, cfg, spec, params, workers: int = 1) -> dict:
    """Sections per eps (None where the pullback iteration failed)."""
    eps_list = [float(e) for e in eps_list]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            out = list(ex.map(lambda e: _section_or_none(t, e, cfg, spec, params), eps_list))
    else:
        out = [_section_or_none(t, e, cfg, spec, params) for e in eps_list]
    return dict(zip(eps_list, out))


@dataclass
class ContinuityCurve:
    eps_grid: np.ndarray
    forward: np.ndarray
    reverse: np.ndarray
    reference_eps: float
    flagged: list = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.eps_grid) == len(self.forward) == len(self.reverse)):
            raise ValueError("grid and distance lists must have equal length")

    @property
    def symmetric(self) -> np.ndarray:
        return np.maximum(self.forward, self.reverse)

    @property
    def offsets(self) -> np.ndarray:
        return np.abs(np.asarray(self.eps_grid) - self.reference_eps)

    def nearest_index(self) -> int:
        off = np.where(self.offsets > 0, self.offsets, np.inf)
        return int(np.argmin(off)) if np.isfinite(off).any() else int(np.argmin(self.offsets))

    def farthest_index(self) -> int:
        return int(np.argmax(self.offsets))

    def modulus(self) -> np.ndarray:
        """Empirical modulus of continuity: running max of distance over |eps - eps0|."""
        order = np.argsort(self.offsets)
        d = np.nan_to_num(self.symmetric[order], nan=np.inf)
        return np.maximum.accumulate(d)


def _as_metric(section: AttractorSection, metric):
    return section.cloud.with_metric(metric)


def continuity_curve(sections: dict, eps0: float) -> ContinuityCurve:
    """One-sided and reverse distances of every section to the eps0 section.

    All clouds are compared in the H_t norm (eps = 1), which bounds every
    H^eps_t norm from above.
    """
    ref = sections.get(float(eps0))
    if ref is None:
        raise PullbackNonConvergence(f"reference section at eps0={eps0} unavailable", [])
    m = ref.cloud.metric
    metric = PhaseMetric(1.0, m.sigma, m.rho, m.eigenvalues)
    refc = _as_metric(ref, metric)
    grid, fw, rv, flagged = [], [], [], []
    for e, sec in sections.items():
        grid.append(e)
        if sec is None:
            fw.append(np.nan)
            rv.append(np.nan)
            flagged.append(e)
            continue
        c = _as_metric(sec, metric)
        fw.append(hausdorff_semidist(c, refc))
        rv.append(hausdorff_semidist(refc, c))
    return ContinuityCurve(np.array(grid), np.array(fw), np.array(rv), float(eps0), flagged)


def upper_semicontinuity_scan(t: float, eps0: float, eps_grid, cfg: ModelConfig,
                              spec: EvolutionSpec | None = None,
                              params: PullbackParams | None = None, a: float = 0.1,
                              workers: int = 1) -> ContinuityCurve:
    """dist(A_eps(t), A_eps0(t)) over a grid, all sections drawn with one seed."""
    spec = spec or EvolutionSpec()
    params = params or PullbackParams()
    grid = sorted({float(e) for e in eps_grid} | {float(eps0)})
    for e in grid:
        if not a <= e <= 1.0:
            raise ValueError(f"eps = {e} outside [{a}, 1]")
    sections = compute_sections(t, grid, cfg, spec, params, workers)
    curve = continuity_curve(sections, eps0)
    keep = [i for i, e in enumerate(curve.eps_grid) if e in {float(x) for x in eps_grid}]
    return ContinuityCurve(curve.eps_grid[keep], curve.forward[keep], curve.reverse[keep],
                           curve.reference_eps, curve.flagged)


@dataclass
class EquiAttractionTable:
    s_list: np.ndarray
    eps_grid: np.ndarray
    distances: np.ndarray  # (len(s_list), len(eps_grid))

    @property
    def sup(self) -> np.ndarray:
        return self.distances.max(axis=1)

    def monotone_violation(self) -> float:
        """Largest increase of the sup-curve as the launch time recedes."""
        s = self.sup
        return float(max(0.0, np.max(s[1:] - np.minimum.accumulate(s)[:-1]))) if s.size > 1 else 0.0


def equi_attraction_scan(t: float, eps_grid, s_list, cfg: ModelConfig, sections: dict,
                         spec: EvolutionSpec | None = None, radius: float = 1.0,
                         sample_size: int = 64, seed: int = 1) -> EquiAttractionTable:
    """sup over eps of dist(U_eps(t, s) B(s), A_eps(t)) for each launch time s."""
    spec = spec or EvolutionSpec()
    s_arr = np.asarray(s_list, dtype=float)
    if np.any(np.diff(s_arr) >= 0):
        raise ValueError("s_list must be strictly decreasing")
    if s_arr[0] > t:
        raise ValueError("launch times must not exceed t")
    eps_grid = [float(e) for e in eps_grid]
    D = np.empty((s_arr.size, len(eps_grid)))
    for j, e in enumerate(eps_grid):
        sec = sections.get(e)
        if sec is None:
            raise PullbackNonConvergence(f"no section for eps={e}", [])
        c = cfg.with_epsilon(e)
        for i, s in enumerate(s_arr):
            U, V = sample_ball_arrays(sample_size, radius, s, c, seed)
            U, V = evolve_arrays(U, V, s, t, c, spec)
            D[i, j] = hausdorff_semidist(PointCloud(t, U, V, sec.cloud.metric), sec.cloud)
    return EquiAttractionTable(s_arr, np.array(eps_grid), D)

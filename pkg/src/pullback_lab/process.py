"""The evolution process U_eps(t, tau) of the Galerkin system.

Everything is integrated on a uniform grid of n = ceil((t - tau) / h_max)
steps, where h_max comes from the step rule of :class:`EvolutionSpec`.
Recording only reads the state at multiples of the stride on that same
grid, so recorded and unrecorded runs produce identical endpoints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, optimize

from . import kernels
from .model import (MASS_FLOOR, DegenerateMassError, ModalState, ModelConfig,
                    apply_polynomial, transform_matrix)
from .spaces import PhaseMetric, PointCloud

INTEGRATORS = ("rk4", "trapezoid")
DT_RULES = ("wave", "stiff")


class StepBudgetError(RuntimeError):
    pass


class BlowUpError(FloatingPointError):
    pass


@dataclass(frozen=True)
class EvolutionSpec:
    """Integrator choice and step control.

    dt_rule "wave": h = safety * min(dt_base, sqrt(m/lambda_N), m/alpha), the
    oscillation-period limit of the stiffest mode, with m = eps*rho at the
    right end of the window (rho decreases).  dt_rule "stiff":
    h = safety * min(dt_base, m/lambda_N), the conservative rule that ties the
    step to the full stiffness ratio.  ``record_stride`` is the time spacing
    of recorded trajectory nodes; ``mass_ref`` caps m so two runs with
    different eps can share a step grid.
    """

    integrator: str = "rk4"
    dt_base: float = 0.02
    dt_rule: str = "wave"
    safety: float = 0.05
    record_stride: float = 0.05
    max_steps: int = 5_000_000
    floor: float = MASS_FLOOR
    threads: int = 1
    backend: str | None = None
    mass_ref: float | None = None

    def __post_init__(self):
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator {self.integrator!r}; choose from {INTEGRATORS}")
        if self.dt_rule not in DT_RULES:
            raise ValueError(f"unknown dt_rule {self.dt_rule!r}; choose from {DT_RULES}")
        if not self.dt_base > 0 or not self.safety > 0 or not self.record_stride > 0:
            raise ValueError("dt_base, safety and record_stride must be positive")
        if self.mass_ref is not None and not self.mass_ref > 0:
            raise ValueError("mass_ref must be positive")

    def replace(self, **kw) -> "EvolutionSpec":
        return replace(self, **kw)

    def step_limit(self, mass: float, lam_max: float, alpha: float) -> float:
        if self.mass_ref is not None:
            mass = min(mass, self.mass_ref)
        lam_max = max(lam_max, 1.0)
        if self.integrator == "trapezoid":
            return self.safety * min(self.dt_base, math.sqrt(mass), mass / alpha)
        if self.dt_rule == "stiff":
            return self.safety * min(self.dt_base, mass / lam_max)
        return self.safety * min(self.dt_base, math.sqrt(mass / lam_max), mass / alpha)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "EvolutionSpec":
        kw = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**kw)


@dataclass
class TrajectorySample:
    """States of one trajectory on a time grid; u and v have shape (K, N)."""

    times: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if self.u.shape[0] != self.times.size or self.v.shape != self.u.shape:
            raise ValueError("trajectory arrays do not match the time grid")

    def __len__(self) -> int:
        return self.times.size

    @property
    def states(self) -> list[ModalState]:
        return [ModalState(self.u[i], self.v[i], float(self.times[i])) for i in range(len(self))]

    def norms(self, metric: PhaseMetric) -> np.ndarray:
        return np.array([math.sqrt(metric.norm_sq_arrays(self.u[i], self.v[i], self.times[i]))
                         for i in range(len(self))])

    def sup_l2_u(self) -> float:
        """sup over nodes of the L2 norm of the u-component (modal convention)."""
        return float(np.sqrt(np.max(np.sum(self.u ** 2, axis=1))))

    def sup_v1_l2(self, eigenvalues: np.ndarray) -> float:
        """sup over nodes of sqrt(||u||_1^2 + ||u_t||^2), the Z-norm of the window."""
        q = np.sum(eigenvalues * self.u ** 2, axis=1) + np.sum(self.v ** 2, axis=1)
        return float(np.sqrt(q.max()))


@dataclass
class EnsembleRecord:
    """Recorded ensemble: arrays of shape (K, M, N) on ``times``."""

    times: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def member(self, i: int) -> TrajectorySample:
        return TrajectorySample(self.times, self.u[:, i, :], self.v[:, i, :])

    def cloud(self, k: int, metric: PhaseMetric) -> PointCloud:
        return PointCloud(float(self.times[k]), self.u[k], self.v[k], metric)

    def norms(self, metric: PhaseMetric) -> np.ndarray:
        """(K, M) array of H_t norms."""
        return np.array([np.sqrt(metric.norm_sq_arrays(self.u[k], self.v[k], self.times[k]))
                         for k in range(self.times.size)])


def step_plan(tau: float, t: float, cfg: ModelConfig, spec: EvolutionSpec) -> tuple[int, float]:
    """(number of steps, step size) for the window [tau, t]."""
    if not (np.isfinite(tau) and np.isfinite(t)):
        raise ValueError("tau and t must be finite")
    if t < tau:
        raise ValueError(f"need tau <= t, got tau={tau}, t={t}")
    if t == tau:
        return 0, 0.0
    m_end = min(cfg.mass(tau), cfg.mass(t))
    if m_end < spec.floor:
        first = cfg.rho.first_below(spec.floor / cfg.epsilon, tau, t)
        first = t if first is None else first
        raise DegenerateMassError(first, float(cfg.mass(first)), spec.floor)
    h_max = spec.step_limit(m_end, float(cfg.eigenvalues[-1]), cfg.alpha)
    n = max(1, math.ceil((t - tau) / h_max - 1e-9))
    if n > spec.max_steps:
        raise StepBudgetError(f"{n} steps needed on [{tau}, {t}], budget {spec.max_steps}")
    return n, (t - tau) / n


def _stage_masses(tau: float, h: float, n: int, cfg: ModelConfig) -> np.ndarray:
    return np.ascontiguousarray(cfg.mass(tau + 0.5 * h * np.arange(2 * n + 1)), dtype=float)


def _stride_steps(h: float, spec: EvolutionSpec) -> int:
    return max(1, int(round(spec.record_stride / h)))


def _trapezoid_advance(U, V, masses, h, nsteps, cfg, tol=1e-13, max_iter=100):
    """Trapezoid rule, linear part implicit per mode, f by fixed-point iteration."""
    lam, g, alpha = cfg.eigenvalues, cfg.g, cfg.alpha
    c = cfg.nonlinearity.coeffs
    fu = apply_polynomial(c, U)
    for n in range(nsteps):
        m0, m1 = masses[2 * n], masses[2 * n + 2]
        dv0 = (g - alpha * V - lam * U - fu) / m0
        ru0 = U + 0.5 * h * V
        rv0 = V + 0.5 * h * dv0
        denom = 1.0 + 0.5 * h * alpha / m1 + 0.25 * h * h * lam / m1
        f1 = fu
        for _ in range(max_iter):
            rv = rv0 + 0.5 * h * (g - f1) / m1
            V1 = (rv - 0.5 * h * lam * ru0 / m1) / denom
            U1 = ru0 + 0.5 * h * V1
            f_new = apply_polynomial(c, U1)
            if np.max(np.abs(f_new - f1)) <= tol * (1.0 + np.max(np.abs(f_new))):
                f1 = f_new
                break
            f1 = f_new
        else:
            raise RuntimeError("trapezoid fixed-point iteration did not converge")
        rv = rv0 + 0.5 * h * (g - f1) / m1
        V[...] = (rv - 0.5 * h * lam * ru0 / m1) / denom
        U[...] = ru0 + 0.5 * h * V
        fu = apply_polynomial(c, U)


def _advance(U, V, tau, h, nsteps, masses, cfg, spec):
    if nsteps <= 0:
        return
    if spec.integrator == "trapezoid":
        _trapezoid_advance(U, V, masses, h, nsteps, cfg)
    else:
        _, fn = kernels.get_backend(spec.backend)
        a1, a2, a3 = cfg.nonlinearity.coeffs
        fn(U, V, masses, h, nsteps, transform_matrix(cfg.n_modes), cfg.eigenvalues, cfg.g,
           cfg.alpha, a1, a2, a3, spec.threads)
    if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
        raise BlowUpError(f"non-finite state at t = {tau + nsteps * h:.6g}")


def evolve_arrays(U, V, tau: float, t: float, cfg: ModelConfig, spec: EvolutionSpec,
                  record: bool = False):
    """Evolve an ensemble (rows of U, V) from tau to t.

    Returns (U_t, V_t) or, with ``record``, (U_t, V_t, EnsembleRecord).
    Inputs are not modified.
    """
    U = np.array(U, dtype=float, ndmin=2, order="C")
    V = np.array(V, dtype=float, ndmin=2, order="C")
    if U.shape != V.shape:
        raise ValueError("u and v blocks must have the same shape")
    if U.shape[1] != cfg.n_modes:
        raise ValueError(f"states have {U.shape[1]} modes, model has {cfg.n_modes}")
    n, h = step_plan(tau, t, cfg, spec)
    if not record:
        if n:
            _advance(U, V, tau, h, n, _stage_masses(tau, h, n, cfg), cfg, spec)
        return U, V
    masses = _stage_masses(tau, h, n, cfg) if n else np.ones(1)
    stride = _stride_steps(h, spec) if n else 1
    times, us, vs = [tau], [U.copy()], [V.copy()]
    done = 0
    while done < n:
        k = min(stride, n - done)
        _advance(U, V, tau + done * h, h, k, masses[2 * done: 2 * (done + k) + 1], cfg, spec)
        done += k
        times.append(tau + done * h if done < n else t)
        us.append(U.copy())
        vs.append(V.copy())
    return U, V, EnsembleRecord(np.array(times), np.array(us), np.array(vs))


def evolve(z: ModalState, tau: float, t: float, cfg: ModelConfig,
           spec: EvolutionSpec | None = None) -> ModalState:
    """U_eps(t, tau) z."""
    spec = spec or EvolutionSpec()
    if t == tau:
        return ModalState(z.u.copy(), z.v.copy(), t)
    U, V = evolve_arrays(z.u, z.v, tau, t, cfg, spec)
    return ModalState(U[0], V[0], t)


def evolve_cloud(cloud: PointCloud, t: float, cfg: ModelConfig, spec: EvolutionSpec | None = None,
                 metric: PhaseMetric | None = None) -> PointCloud:
    spec = spec or EvolutionSpec()
    U, V = evolve_arrays(cloud.u, cloud.v, cloud.time, t, cfg, spec)
    return PointCloud(t, U, V, metric or cloud.metric)


def evolve_trajectory(z: ModalState, tau: float, t: float, cfg: ModelConfig,
                      spec: EvolutionSpec | None = None) -> TrajectorySample:
    spec = spec or EvolutionSpec()
    _, _, rec = evolve_arrays(z.u, z.v, tau, t, cfg, spec, record=True)
    return rec.member(0)


def evolve_pair(z1: ModalState, z2: ModalState, tau: float, t: float, cfg: ModelConfig,
                spec: EvolutionSpec | None = None):
    """Both endpoints plus the recorded difference trajectory on [tau, t]."""
    spec = spec or EvolutionSpec()
    U0 = np.vstack([z1.u, z2.u])
    V0 = np.vstack([z1.v, z2.v])
    U, V, rec = evolve_arrays(U0, V0, tau, t, cfg, spec, record=True)
    diff = TrajectorySample(rec.times, rec.u[:, 0] - rec.u[:, 1], rec.v[:, 0] - rec.v[:, 1])
    return ModalState(U[0], V[0], t), ModalState(U[1], V[1], t), diff


def shared_grid_spec(cfg: ModelConfig, spec: EvolutionSpec, eps_values, t: float) -> EvolutionSpec:
    """Spec whose step grid is the one of the smallest eps, for like-for-like comparisons."""
    m = min(float(e) for e in eps_values) * float(cfg.rho(t))
    if spec.mass_ref is not None:
        m = min(m, spec.mass_ref)
    return spec.replace(mass_ref=m)


def lipschitz_in_eps(z: ModalState, tau: float, t: float, eps1: float, eps2: float,
                     cfg: ModelConfig, spec: EvolutionSpec | None = None,
                     a: float = 0.1) -> float:
    """||U_eps1(t,tau) z - U_eps2(t,tau) z||_{H_t} / |eps1 - eps2|, on a shared step grid."""
    spec = spec or EvolutionSpec()
    if eps1 == eps2:
        raise ValueError("eps1 and eps2 must differ")
    for e in (eps1, eps2):
        if not a <= e <= 1.0:
            raise ValueError(f"eps = {e} outside [{a}, 1]")
    sp = shared_grid_spec(cfg, spec, (eps1, eps2), t)
    x1 = evolve(z, tau, t, cfg.with_epsilon(eps1), sp)
    x2 = evolve(z, tau, t, cfg.with_epsilon(eps2), sp)
    d = cfg.with_epsilon(1.0).metric(0.0)
    return math.sqrt(d.norm_sq_arrays(x1.u - x2.u, x1.v - x2.v, t)) / abs(eps1 - eps2)


def _rk4_generic(y, tau, h, n, masses, force, stride, t_end):
    """Plain RK4 on an arbitrary state array with recording every ``stride`` steps."""
    times, ys = [tau], [y.copy()]
    for i in range(n):
        inv0, inv1, inv2 = 1.0 / masses[2 * i], 1.0 / masses[2 * i + 1], 1.0 / masses[2 * i + 2]
        k1 = force(y, inv0)
        k2 = force(y + 0.5 * h * k1, inv1)
        k3 = force(y + 0.5 * h * k2, inv1)
        k4 = force(y + h * k3, inv2)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if (i + 1) % stride == 0 or i + 1 == n:
            times.append(tau + (i + 1) * h if i + 1 < n else t_end)
            ys.append(y.copy())
    if not np.all(np.isfinite(y)):
        raise BlowUpError("non-finite state in split evolution")
    return np.array(times), np.array(ys)


@dataclass
class SplitRecord:
    """Recorded full solution and its two parts, arrays of shape (K, M, N)."""

    times: np.ndarray
    u: np.ndarray
    ut: np.ndarray
    v: np.ndarray
    vt: np.ndarray
    w: np.ndarray
    wt: np.ndarray


def split_evolve_arrays(U0, V0, tau: float, t: float, cfg: ModelConfig,
                        spec: EvolutionSpec | None = None) -> SplitRecord:
    """Integrate u, the f0-part v (data z, g = 0) and the remainder w (zero data) together."""
    spec = spec or EvolutionSpec()
    U0 = np.atleast_2d(np.asarray(U0, dtype=float))
    V0 = np.atleast_2d(np.asarray(V0, dtype=float))
    M, N = U0.shape
    if N != cfg.n_modes:
        raise ValueError(f"states have {N} modes, model has {cfg.n_modes}")
    n, h = step_plan(tau, t, cfg, spec)
    lam, g, alpha = cfg.eigenvalues, cfg.g, cfg.alpha
    fc, f0c = cfg.nonlinearity.coeffs, cfg.nonlinearity.split

    def force(y, inv_m):
        u, ut, v, vt, w, wt = y
        fu = apply_polynomial(fc, u)
        f0v = apply_polynomial(f0c, v)
        return np.array([
            ut, (g - alpha * ut - lam * u - fu) * inv_m,
            vt, (-alpha * vt - lam * v - f0v) * inv_m,
            wt, (g - alpha * wt - lam * w - fu + f0v) * inv_m,
        ])

    zero = np.zeros_like(U0)
    y0 = np.array([U0, V0, U0, V0, zero, zero])
    if n == 0:
        ys = y0[None]
        times = np.array([tau])
    else:
        masses = _stage_masses(tau, h, n, cfg)
        times, ys = _rk4_generic(y0, tau, h, n, masses, force, _stride_steps(h, spec), t)
    return SplitRecord(times, *(ys[:, j] for j in range(6)))


def split_evolve(z: ModalState, tau: float, t: float, cfg: ModelConfig,
                 spec: EvolutionSpec | None = None) -> tuple[ModalState, ModalState]:
    """(v_part, w_part) at time t, with v_part + w_part = U_eps(t, tau) z."""
    rec = split_evolve_arrays(z.u, z.v, tau, t, cfg, spec)
    return (ModalState(rec.v[-1, 0], rec.vt[-1, 0], t),
            ModalState(rec.w[-1, 0], rec.wt[-1, 0], t))


# Lyapunov functionals ---------------------------------------------------

LYAPUNOV_KINDS = ("phi", "lambda", "psi")
_TARGET_SIGMA = {"phi": 1.0 / 3.0, "lambda": 1.0, "psi": 0.0}


@dataclass(frozen=True)
class LyapunovConfig:
    """Multiplier weight delta and functional kind, validated for the sandwich.

    The quadratic part of each functional lies between 1/2 and 2 times the
    target squared norm when delta <= 1/2, delta*(m_max + alpha)/lambda_1 <= 1
    and delta*m_max/lambda_1 <= 1/4, where m_max = sup eps*rho.
    """

    delta: float = 0.01
    which: str = "phi"
    mass_max: float = 1.0
    alpha: float = 1.0
    lambda1: float = 1.0

    def __post_init__(self):
        if self.which not in LYAPUNOV_KINDS:
            raise ValueError(f"unknown functional {self.which!r}; choose from {LYAPUNOV_KINDS}")
        d, m, lam1 = self.delta, self.mass_max, self.lambda1
        if not 0.0 < d < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {d}")
        if d > 0.5 or d * (m + self.alpha) / lam1 > 1.0 or d * m / lam1 > 0.25:
            raise ValueError(
                f"delta = {d} too large for the sandwich with m_max={m}, "
                f"alpha={self.alpha}, lambda1={lam1}")

    @classmethod
    def create(cls, cfg: ModelConfig, delta: float = 0.01, which: str = "phi",
               t_min: float = -50.0) -> "LyapunovConfig":
        m_max = float(cfg.epsilon * cfg.rho(t_min))
        return cls(delta, which, m_max, cfg.alpha, float(cfg.eigenvalues[0]))

    @property
    def target_sigma(self) -> float:
        return _TARGET_SIGMA[self.which]


def _lyapunov_parts(u, v, t, cfg, lycfg, delta):
    lam, g = cfg.eigenvalues, cfg.g
    m = float(cfg.mass(t))
    a = cfg.alpha
    if lycfg.which == "phi":
        th = 1.0 / 3.0
        quad = (m * np.sum(lam ** th * v * v) + np.sum(lam ** (1 + th) * u * u)
                + delta * (2.0 * m * np.sum(lam ** th * v * u) + a * np.sum(lam ** th * u * u)))
        forcing = -2.0 * np.sum(g * lam ** th * u)
        nonlin = 2.0 * np.sum(apply_polynomial(cfg.nonlinearity.coeffs, u) * lam ** th * u)
    elif lycfg.which == "lambda":
        quad = (np.sum(lam ** 2 * u * u) + m * np.sum(lam * v * v)
                + delta * (2.0 * m * np.sum(lam * v * u) + a * np.sum(lam * u * u)))
        forcing = -2.0 * np.sum(g * lam * u)
        nonlin = 0.0
    else:
        quad = (m * np.sum(v * v) + np.sum(lam * u * u)
                + delta * (2.0 * m * np.sum(v * u) + a * np.sum(u * u)))
        forcing = 0.0
        nonlin = 0.0
    return float(quad), float(forcing), float(nonlin)


def lyapunov_eval(state: ModalState, t: float, cfg: ModelConfig, lycfg: LyapunovConfig,
                  delta: float | None = None) -> float:
    """Value of the chosen functional.

    phi:    m||v||^2_{1/3} + ||u||^2_{4/3} + 2<f(u) - g, A^{1/3}u> + d[2m<v, A^{1/3}u> + a||u||^2_{1/3}]
    lambda: ||u||^2_2 + m||v||^2_1 - 2<g, Au> + d[2m<v, Au> + a||u||^2_1]
    psi:    m||v||^2 + ||u||^2_1 + d[2m<v, u> + a||u||^2]   (for a difference of solutions)

    with m = eps*rho(t).  ``delta`` overrides the configured weight (0 allowed).
    """
    d = lycfg.delta if delta is None else float(delta)
    if d < 0:
        raise ValueError("delta must be nonnegative")
    return sum(_lyapunov_parts(state.u, state.v, t, cfg, lycfg, d))


def lyapunov_sandwich(state: ModalState, t: float, cfg: ModelConfig,
                      lycfg: LyapunovConfig) -> tuple[float, float, float]:
    """(lower, value - nonlinear part, upper) for the validated sandwich.

    lower = ||z||^2/4 - C and upper = 2||z||^2 + C in the target norm, where
    C = 4 ||A^{(theta-1)/2} g||^2 bounds the forcing term (0 for psi).
    """
    quad, forcing, nonlin = _lyapunov_parts(state.u, state.v, t, cfg, lycfg, lycfg.delta)
    q = float(cfg.metric(lycfg.target_sigma).norm_sq_arrays(state.u, state.v, t))
    lam, g = cfg.eigenvalues, cfg.g
    if lycfg.which == "phi":
        C = 4.0 * float(np.sum(lam ** (-2.0 / 3.0) * g * g))
    elif lycfg.which == "lambda":
        C = 4.0 * float(np.sum(g * g))
    else:
        C = 0.0
    return 0.25 * q - C, quad + forcing, 2.0 * q + C


# Ball sampling ---------------------------------------------------------------

def sample_ball_arrays(n: int, radius: float, t: float, cfg: ModelConfig, seed: int,
                       sigma: float = 0.0, center: ModalState | None = None):
    """n points uniform in radius inside the H^eps_{t,sigma} ball.

    Directions are isotropic Gaussians in the isometric embedding; member i
    uses its own spawned stream, so the first n points do not depend on n.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    metric = cfg.metric(sigma)
    wu, wv = metric.weights(t)
    N = cfg.n_modes
    children = np.random.SeedSequence(seed).spawn(n)
    U = np.empty((n, N))
    V = np.empty((n, N))
    for i, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        w = rng.standard_normal(2 * N)
        nrm = np.linalg.norm(w)
        r = radius * rng.random()
        w = w * (r / nrm) if nrm > 0 else w * 0.0
        U[i] = w[:N] / np.sqrt(wu)
        V[i] = w[N:] / np.sqrt(wv)
    if center is not None:
        U += center.u
        V += center.v
    return U, V


def sample_ball(n: int, radius: float, t: float, cfg: ModelConfig, seed: int,
                sigma: float = 0.0, center: ModalState | None = None) -> PointCloud:
    U, V = sample_ball_arrays(n, radius, t, cfg, seed, sigma, center)
    return PointCloud(t, U, V, cfg.metric(sigma))


# Decay fits ----------------------------------------------------------------

@dataclass
class DecayFit:
    kappa: float
    R_absorb: float
    C: float
    window: tuple[float, float]
    quality: float
    times: np.ndarray = field(repr=False, default=None)
    sup_norms: np.ndarray = field(repr=False, default=None)
    ut_integral_full: np.ndarray = field(repr=False, default=None)
    ut_integral_half: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        self.kappa = max(float(self.kappa), 0.0)
        self.R_absorb = max(float(self.R_absorb), 0.0)

    @property
    def failed(self) -> bool:
        return not (self.quality >= 0.5)

    def envelope(self, s=None) -> np.ndarray:
        s = (self.times - self.window[0]) if s is None else np.asarray(s)
        return self.C * np.exp(-self.kappa * s) + self.R_absorb

    def integral_variation(self) -> float:
        """max relative growth of the u_t energy integral from the half to the full window."""
        if self.ut_integral_full is None:
            return float("nan")
        full = self.ut_integral_full
        half = self.ut_integral_half
        rel = np.where(full > 0, (full - half) / np.where(full > 0, full, 1.0), 0.0)
        return float(rel.max())


def fit_exponential_envelope(s: np.ndarray, y: np.ndarray) -> tuple[float, float, float, float]:
    """Least-squares fit y ~ C exp(-kappa s) + R with C, kappa, R >= 0.

    Returns (C, kappa, R, r_squared).
    """
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.allclose(y, y[0], rtol=0, atol=1e-14 * max(1.0, abs(y[0]))):
        return 0.0, 0.0, float(max(y[0], 0.0)), 1.0
    R0 = float(y[-1])
    C0 = max(float(y[0] - R0), 1e-12)
    # initial rate from the log of the excess over the tail value
    excess = y - R0
    pos = excess > 1e-3 * C0
    k0 = 1.0
    if pos.sum() >= 2:
        k0 = max(-np.polyfit(s[pos], np.log(excess[pos]), 1)[0], 1e-3)

    def model(x, C, k, R):
        return C * np.exp(-k * x) + R

    try:
        p, _ = optimize.curve_fit(model, s, y, p0=(C0, k0, max(R0, 0.0)),
                                  bounds=([0, 0, 0], [np.inf, np.inf, np.inf]), maxfev=20000)
    except (RuntimeError, ValueError):
        return C0, 0.0, max(R0, 0.0), float("-inf")
    resid = y - model(s, *p)
    ss_tot = np.sum((y - y.mean()) ** 2)
    q = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return float(p[0]), float(p[1]), float(p[2]), float(q)


def decay_fit(ensemble: PointCloud, tau: float, t_grid, cfg: ModelConfig,
              spec: EvolutionSpec | None = None) -> DecayFit:
    """Fit sup-over-ensemble H_t norms on [tau, max t_grid] to C e^{-kappa s} + R."""
    spec = spec or EvolutionSpec()
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size < 3 or np.any(np.diff(t_grid) <= 0) or t_grid[0] < tau:
        raise ValueError("t_grid must be increasing, start at or after tau, and have >= 3 nodes")
    if abs(ensemble.time - tau) > 1e-12:
        raise ValueError("ensemble time stamp must equal tau")
    t_end = float(t_grid[-1])
    _, _, rec = evolve_arrays(ensemble.u, ensemble.v, tau, t_end, cfg, spec, record=True)
    metric = cfg.metric(0.0)
    norms = rec.norms(metric)  # (K, M)
    sup_rec = norms.max(axis=1)
    sup = np.interp(t_grid, rec.times, sup_rec)
    C, k, R, q = fit_exponential_envelope(t_grid - tau, sup)
    # time integral of ||u_t||^2 per trajectory, over the full and half window
    ut2 = np.sum(rec.v ** 2, axis=2)  # (K, M)
    full = integrate.trapezoid(ut2, rec.times, axis=0)
    mid = tau + 0.5 * (t_end - tau)
    hmask = rec.times <= mid + 1e-12
    half = integrate.trapezoid(ut2[hmask], rec.times[hmask], axis=0)
    return DecayFit(k, R, C, (float(tau), t_end), q, t_grid, sup, full, half)


def fit_lipschitz_growth(ratios: np.ndarray, spans: np.ndarray) -> float:
    """Smallest Q with ratio <= Q exp(Q s) for every (ratio, s) pair."""
    best = 0.0
    for r, s in zip(np.asarray(ratios, float), np.asarray(spans, float)):
        if r <= 0:
            continue
        fn = lambda q: q * math.exp(q * s) - r  # noqa: E731
        hi = max(1.0, r)
        while fn(hi) < 0:
            hi *= 2.0
        best = max(best, optimize.brentq(fn, 0.0, hi, xtol=1e-14, rtol=1e-12))
    return best

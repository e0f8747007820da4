"""Spectral Galerkin form of  eps*rho(t) u_tt + alpha u_t + A u + f(u) = g  on (0, L).

Coordinates are sine-series coefficients: u(x) = sum_k u_k sin(k pi x / L),
so A = -d^2/dx^2 with Dirichlet conditions is diagonal with
lambda_k = (k pi / L)^2.  f is a polynomial of degree <= 3 and is applied
pseudo-spectrally on a grid fine enough that the cubic is not aliased.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import optimize

from .spaces import PhaseMetric, RhoProfile

MASS_FLOOR = 1e-6

NONLINEARITIES = ("cubic", "cubic-minus-linear", "zero", "linear", "polynomial")


class DegenerateMassError(ValueError):
    """eps*rho(t) fell below the integration floor."""

    def __init__(self, time: float, mass: float, floor: float = MASS_FLOOR):
        self.time = time
        self.mass = mass
        super().__init__(
            f"eps*rho(t) = {mass:.3e} below floor {floor:.0e} at t = {time:.6g}")


def _poly(c, s):
    return c[0] * s + c[1] * s * s + c[2] * s * s * s


def _dpoly(c, s):
    return c[0] + 2.0 * c[1] * s + 3.0 * c[2] * s * s


def _d2poly(c, s):
    return 2.0 * c[1] + 6.0 * c[2] * s


def _ipoly(c, s):
    return c[0] * s ** 2 / 2.0 + c[1] * s ** 3 / 3.0 + c[2] * s ** 4 / 4.0


@dataclass(frozen=True)
class NonlinearitySpec:
    """f(s) = c1 s + c2 s^2 + c3 s^3 with a split f = f0 + f1.

    ``coeffs`` are (c1, c2, c3); ``split`` holds the coefficients of f0, and
    f1 = f - f0.  ``growth_c``, ``nu`` and ``c1`` are the constants the model
    declares for the growth and dissipation conditions; the validator reports
    the tightest values it observes independently.
    """

    kind: str = "cubic"
    coeffs: tuple[float, float, float] = (0.0, 0.0, 1.0)
    split: tuple[float, float, float] = (0.0, 0.0, 1.0)
    growth_c: float = 6.0
    nu: float = 0.5
    c1: float = 0.0

    @classmethod
    def named(cls, kind: str, param: float | None = None) -> "NonlinearitySpec":
        if kind == "cubic":
            return cls("cubic", (0.0, 0.0, 1.0), (0.0, 0.0, 1.0), 6.0, 0.5, 0.0)
        if kind == "cubic-minus-linear":
            return cls(kind, (-1.0, 0.0, 1.0), (0.0, 0.0, 1.0), 6.0, 0.5, 0.0)
        if kind == "zero":
            return cls("zero", (0.0, 0.0, 0.0), (0.0, 0.0, 0.0), 0.0, 0.5, 0.0)
        if kind == "linear":
            c = 1.0 if param is None else float(param)
            return cls("linear", (c, 0.0, 0.0), (0.0, 0.0, 0.0), 0.0, 0.5, 0.0)
        raise ValueError(f"unknown nonlinearity {kind!r}; choose from {NONLINEARITIES}")

    @property
    def f1_coeffs(self) -> tuple[float, float, float]:
        return tuple(a - b for a, b in zip(self.coeffs, self.split))

    def f(self, s):
        return _poly(self.coeffs, s)

    def df(self, s):
        return _dpoly(self.coeffs, s)

    def d2f(self, s):
        return _d2poly(self.coeffs, s)

    def F(self, s):
        return _ipoly(self.coeffs, s)

    def f0(self, s):
        return _poly(self.split, s)

    def df0(self, s):
        return _dpoly(self.split, s)

    def d2f0(self, s):
        return _d2poly(self.split, s)

    def f1(self, s):
        return _poly(self.f1_coeffs, s)

    def df1(self, s):
        return _dpoly(self.f1_coeffs, s)

    def is_zero(self) -> bool:
        return not any(self.coeffs)


def sine_forcing(n_modes: int, amplitude: float = 1.0, mode: int = 1) -> np.ndarray:
    g = np.zeros(n_modes)
    if amplitude:
        g[mode - 1] = amplitude
    return g


@dataclass(frozen=True)
class ModelConfig:
    domain_length: float = np.pi
    n_modes: int = 32
    alpha: float = 1.0
    epsilon: float = 1.0
    g_modes: tuple[float, ...] | None = None
    rho: RhoProfile = field(default_factory=RhoProfile)
    nonlinearity: NonlinearitySpec = field(default_factory=NonlinearitySpec)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if int(self.n_modes) < 1:
            raise ValueError("n_modes must be >= 1")
        object.__setattr__(self, "n_modes", int(self.n_modes))
        g = self.g_modes
        if g is None:
            g = sine_forcing(self.n_modes)
        g = tuple(float(x) for x in g)
        if len(g) < self.n_modes:
            g = g + (0.0,) * (self.n_modes - len(g))
        elif len(g) > self.n_modes:
            raise ValueError(f"forcing has {len(g)} modes, model has {self.n_modes}")
        object.__setattr__(self, "g_modes", g)

    @property
    def eigenvalues(self) -> np.ndarray:
        k = np.arange(1, self.n_modes + 1, dtype=float)
        return (k * np.pi / self.domain_length) ** 2

    @property
    def g(self) -> np.ndarray:
        return np.asarray(self.g_modes, dtype=float)

    def with_epsilon(self, epsilon: float) -> "ModelConfig":
        return replace(self, epsilon=float(epsilon))

    def replace(self, **kw) -> "ModelConfig":
        return replace(self, **kw)

    def mass(self, t):
        return self.epsilon * self.rho(t)

    def metric(self, sigma: float = 0.0, epsilon: float | None = None) -> PhaseMetric:
        eps = self.epsilon if epsilon is None else epsilon
        return PhaseMetric(eps, sigma, self.rho, self.eigenvalues)

    def to_dict(self) -> dict:
        nl = self.nonlinearity
        return {
            "domain_length": self.domain_length,
            "n_modes": self.n_modes,
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "g_modes": list(self.g_modes),
            "rho_kind": self.rho.kind,
            "rho_params": list(self.rho.params),
            "rho_L_bound": self.rho.L_bound,
            "nonlinearity": nl.kind,
            "f_coeffs": list(nl.coeffs),
            "f0_coeffs": list(nl.split),
            "growth_c": nl.growth_c,
            "nu": nl.nu,
            "c1": nl.c1,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        rho = RhoProfile(d.get("rho_kind", "logistic"), tuple(d.get("rho_params", ())),
                         float(d.get("rho_L_bound", 1.25)))
        kind = d.get("nonlinearity", "cubic")
        if "f_coeffs" in d:
            nl = NonlinearitySpec(kind, tuple(map(float, d["f_coeffs"])),
                                  tuple(map(float, d.get("f0_coeffs", d["f_coeffs"]))),
                                  float(d.get("growth_c", 6.0)), float(d.get("nu", 0.5)),
                                  float(d.get("c1", 0.0)))
        else:
            nl = NonlinearitySpec.named(kind, d.get("f_param"))
        g = d.get("g_modes")
        return cls(float(d.get("domain_length", np.pi)), int(d.get("n_modes", 32)),
                   float(d.get("alpha", 1.0)), float(d.get("epsilon", 1.0)),
                   None if g is None else tuple(map(float, g)), rho, nl)


@dataclass
class ModalState:
    """Galerkin coefficients of (u, u_t) at a given time."""

    u: np.ndarray
    v: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.u.shape != self.v.shape or self.u.ndim != 1:
            raise ValueError("u and v must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ValueError("state has non-finite entries")

    @property
    def n_modes(self) -> int:
        return self.u.size

    @classmethod
    def zeros(cls, n_modes: int, time: float = 0.0) -> "ModalState":
        return cls(np.zeros(n_modes), np.zeros(n_modes), time)

    def copy(self) -> "ModalState":
        return ModalState(self.u.copy(), self.v.copy(), self.time)

    def __sub__(self, other: "ModalState") -> "ModalState":
        return ModalState(self.u - other.u, self.v - other.v, self.time)

    def __add__(self, other: "ModalState") -> "ModalState":
        return ModalState(self.u + other.u, self.v + other.v, self.time)


@lru_cache(maxsize=32)
def transform_matrix(n_modes: int) -> np.ndarray:
    """S[j, k] = sin((k+1) pi j / P) on the 2N+1 interior nodes of P = 2N+2 cells.

    Products up to mode 3N alias onto modes above N on this grid, so the
    Galerkin projection of a cubic is exact.
    """
    P = 2 * n_modes + 2
    j = np.arange(1, P)[:, None]
    k = np.arange(1, n_modes + 1)[None, :]
    S = np.sin(np.pi * j * k / P)
    S.setflags(write=False)
    return S


def grid_cells(n_modes: int) -> int:
    return 2 * n_modes + 2


def apply_polynomial(coeffs, u_modes: np.ndarray) -> np.ndarray:
    """Sine coefficients (first N) of p(u(x)) for the polynomial with given coeffs.

    Exact for odd polynomials.  A quadratic term makes p(u) a series with
    unbounded sine content, so its projection carries a grid quadrature error.
    """
    u_modes = np.asarray(u_modes, dtype=float)
    c1, c2, c3 = coeffs
    if c2 == 0.0 and c3 == 0.0:
        return c1 * u_modes
    n = u_modes.shape[-1]
    S = transform_matrix(n)
    phys = u_modes @ S.T
    vals = _poly(coeffs, phys)
    return (2.0 / grid_cells(n)) * (vals @ S)


def nonlinear_modal(u_modes: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Galerkin image of f(u); works on a single state or a stack of states."""
    return apply_polynomial(cfg.nonlinearity.coeffs, u_modes)


def mass_at(t: float, cfg: ModelConfig, floor: float = MASS_FLOOR) -> float:
    m = float(cfg.mass(t))
    if m < floor:
        raise DegenerateMassError(t, m, floor)
    return m


def rhs(state: ModalState, t: float, cfg: ModelConfig,
        floor: float = MASS_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """(du/dt, dv/dt) with dv/dt = (-alpha v - lambda u - f(u) + g) / (eps rho(t))."""
    m = mass_at(t, cfg, floor)
    u, v = state.u, state.v
    if u.size != cfg.n_modes:
        raise ValueError(f"state has {u.size} modes, model has {cfg.n_modes}")
    dv = (-cfg.alpha * v - cfg.eigenvalues * u - nonlinear_modal(u, cfg) + cfg.g) / m
    return v.copy(), dv


def equilibrium(cfg: ModelConfig) -> np.ndarray:
    """Solve lambda u + f(u) = g for the stationary modal profile."""
    lam, g = cfg.eigenvalues, cfg.g
    u0 = g / lam

    def resid(u):
        return lam * u + nonlinear_modal(u, cfg) - g

    sol = optimize.root(resid, u0, method="hybr", tol=1e-14)
    if not sol.success:  # pragma: no cover - only for pathological configs
        raise RuntimeError(f"equilibrium solve failed: {sol.message}")
    return sol.x


@dataclass
class AssumptionReport:
    checks: dict
    constants: dict
    witnesses: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def failures(self) -> list[str]:
        return [k for k, ok in self.checks.items() if not ok]


def _grows(values_full: float, values_half: float, ratio: float = 1.5) -> bool:
    """True when a sup over the full range clearly exceeds the sup over half of it."""
    return values_full > 1e-12 and values_full > ratio * max(values_half, 1e-12)


def validate_assumptions(cfg: ModelConfig, sample_range=(-50.0, 50.0),
                         n_samples: int = 20001) -> AssumptionReport:
    """Sampled check of the growth, dissipation and splitting conditions on f."""
    lo, hi = sample_range
    if lo > -50.0 or hi < 50.0:
        raise ValueError("sample_range must contain [-50, 50]")
    nl = cfg.nonlinearity
    lam1 = float(cfg.eigenvalues[0])
    s = np.linspace(lo, hi, n_samples)
    half = np.abs(s) <= 0.5 * max(-lo, hi)
    checks, consts, wit = {}, {}, {}

    checks["f(0)=0"] = abs(nl.f(0.0)) == 0.0

    growth = np.abs(nl.d2f(s)) / (1.0 + np.abs(s))
    consts["growth_c"] = float(growth.max())
    checks["growth |f''| <= c(1+|s|)"] = bool(
        np.all(np.abs(nl.d2f(s)) <= nl.growth_c * (1.0 + np.abs(s)) + 1e-12))
    if not checks["growth |f''| <= c(1+|s|)"]:
        wit["growth"] = float(s[np.argmax(growth)])

    # liminf f(s)/s over the outer tenth of the range
    outer = np.abs(s) >= 0.9 * max(-lo, hi)
    ratio = nl.f(s[outer]) / s[outer]
    consts["liminf_f_over_s"] = float(ratio.min())
    checks["liminf f(s)/s > -lambda1"] = bool(ratio.min() > -lam1)
    if not checks["liminf f(s)/s > -lambda1"]:
        wit["liminf"] = float(s[outer][np.argmin(ratio)])

    # 2 f(s) s >= F(s) - nu s^2 - c1: best c1 over a nu grid in (0, lambda1)
    best = None
    for nu in np.linspace(0.02, 0.98, 49) * lam1:
        gap = nl.F(s) - nu * s * s - 2.0 * nl.f(s) * s
        c1 = max(float(gap.max()), 0.0)
        c1_half = max(float(gap[half].max()), 0.0)
        bounded = not _grows(c1, c1_half)
        if best is None or (bounded, -c1) > (best[2], -best[1]):
            best = (nu, c1, bounded, float(s[np.argmax(gap)]))
    consts["nu"], consts["c1"] = float(best[0]), float(best[1])
    checks["dissipation 2fs >= F - nu s^2 - c1"] = bool(best[2])
    if not best[2]:
        wit["dissipation"] = best[3]

    # splitting f = f0 + f1
    split_err = np.abs(nl.f(s) - nl.f0(s) - nl.f1(s)) / (1.0 + np.abs(nl.f(s)))
    checks["split f = f0 + f1"] = bool(split_err.max() <= 1e-12)
    checks["f0(0) = f0'(0) = 0"] = nl.f0(0.0) == 0.0 and nl.df0(0.0) == 0.0
    f0s = nl.f0(s) * s
    checks["f0(s) s >= 0"] = bool(np.all(f0s >= -1e-12))
    if not checks["f0(s) s >= 0"]:
        wit["f0_sign"] = float(s[np.argmin(f0s)])
    g0 = np.abs(nl.d2f0(s)) / (1.0 + np.abs(s))
    consts["f0_growth_C"] = float(g0.max())
    df1 = np.abs(nl.df1(s))
    consts["f1_lipschitz_C"] = float(df1.max())
    checks["|f1'| bounded"] = not _grows(float(df1.max()), float(df1[half].max()))
    if not checks["|f1'| bounded"]:
        wit["f1_lipschitz"] = float(s[np.argmax(df1)])
    return AssumptionReport(checks, consts, wit)

"""Experiment suites, configuration files, result records and replay.

A run is described by an :class:`ExperimentConfig` (an INI file on disk),
produces a :class:`ResultRecord`, and is stored under
``<output_dir>/<config hash>/`` together with one CSV per table.
"""
from __future__ import annotations

import configparser
import copy
import csv
import hashlib
import io
import json
import math
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attractors import (PullbackNonConvergence, PullbackParams, absorbing_ball,
                         compute_sections, continuity_curve, equi_attraction_scan,
                         pullback_attractor, upper_semicontinuity_scan)
from .model import ModalState, ModelConfig
from .process import (EvolutionSpec, LyapunovConfig, decay_fit, evolve_arrays,
                      fit_exponential_envelope, fit_lipschitz_growth, lipschitz_in_eps,
                      lyapunov_eval, lyapunov_sandwich, sample_ball, sample_ball_arrays,
                      split_evolve_arrays, step_plan)
from .quasistability import (attraction_transfer, build_exponential_attractor, dimension_bound,
                             estimate_quasi_stability, holder_family, packing_estimate)
from .spaces import PointCloud, box_counting_dim, dyadic_radii, hausdorff_semidist, \
    symmetric_hausdorff


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class HashMismatchError(RuntimeError):
    pass


# Suite defaults ---------------------------------------------------------------
# params: knobs of the experiment; tolerances: verdict thresholds (all > 0)

SUITE_DEFAULTS: dict[str, dict] = {
    "simulate": {
        "params": {"tau": -10.0, "t": 0.0, "radius": 1.0, "sample_size": 8, "epsilon": 1.0},
        "tolerances": {"max_norm": 1e6},
    },
    "decay": {
        "params": {"tau": -40.0, "window": 20.0, "persist": 20.0, "radius": 10.0,
                   "sample_size": 64, "n_fit": 81, "epsilon": 1.0, "probe_window": 20.0},
        "tolerances": {"kappa_min": 1e-3, "R_absorb_max": 1e3, "absorb_margin": 1.05,
                       "integral_variation": 0.10, "launch_spread": 0.20},
    },
    "sandwich": {
        "params": {"n_triples": 10000, "n_lyapunov": 100, "a": 0.1, "t_range": 20.0},
        "tolerances": {"rel_violation": 1e-12},
    },
    "cocycle": {
        "params": {"sample_size": 20, "radius": 1.0, "tau": 0.0, "s": 0.7, "t": 2.0,
                   "epsilon": 1.0, "ladder_epsilon": 0.25, "ladder_safety": 0.8,
                   "ladder_halvings": 2},
        "tolerances": {"identity_defect": 1e-300, "cocycle_defect": 1e-6, "order_log2": 0.6},
    },
    "lipschitz": {
        "params": {"n_pairs": 100, "radius": 1.0, "separation": 0.1, "tau": -4.0,
                   "spans": [0.5, 1.0, 2.0, 4.0], "epsilon": 1.0},
        "tolerances": {"envelope_excess": 0.05},
    },
    "eps-lipschitz": {
        "params": {"eps0": 0.5, "tau": -2.0, "t": 0.0, "radius": 1.0, "n_offsets": 7,
                   "offset_min": 1e-4, "offset_max": 1e-1, "a": 0.1},
        "tolerances": {"slope_dev": 0.15, "quality_min": 0.95},
    },
    "split": {
        "params": {"tau": -40.0, "window": 40.0, "radius": 1.0, "sample_size": 16,
                   "epsilon": 1.0},
        "tolerances": {"v_rate_min": 1e-3, "v_endpoint_ratio": 1e-2, "w_slope": 0.05,
                       "superposition": 1e-6},
    },
    "quasistab": {
        "params": {"t": 0.0, "T_list": [2.0, 3.0, 4.0], "n_pairs": 200, "sample_size": 48,
                   "epsilon": 1.0, "ball_seed_offset": 11},
        "tolerances": {"eta_target": 0.25, "violations": 0.5},
    },
    "exp-attractor": {
        "params": {"T": 2.0, "n_lo": -3, "n_hi": 0, "n_pairs": 200, "sample_size": 48,
                   "epsilon": 1.0, "k_cap": 8, "pullback_sample": 64, "transfer_radius": 10.0,
                   "transfer_taus": [4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0],
                   "ball_seed_offset": 11},
        "tolerances": {"defect_ratio_slack": 1.25, "semi_slack": 1.0, "containment": 1e-3,
                       "transfer_beta_min": 1e-3, "invalid_covers": 0.5, "dim_slack": 1.0},
    },
    "attractor": {
        "params": {"t": -1.0, "eps_grid": [1.0, 0.5, 0.25], "sample_size": 64, "step": 2.0,
                   "max_depth": 40},
        "tolerances": {"tol": 1e-3, "forward_factor": 3.0},
    },
    "usc-scan": {
        "params": {"t": -1.0, "eps0": 0.5, "eps_grid": [0.3, 0.4, 0.45, 0.4875, 0.5125, 0.7],
                   "sample_size": 32, "step": 2.0, "max_depth": 40, "a": 0.1},
        "tolerances": {"tol": 1e-3, "nearest_factor": 5.0, "noise_factor": 2.0},
    },
    "continuity-scan": {
        "params": {"t": -1.0, "eps0": 0.5, "eps_grid": [0.3, 0.4, 0.45, 0.4875, 0.5125, 0.7],
                   "sample_size": 32, "step": 2.0, "max_depth": 40, "a": 0.1},
        "tolerances": {"tol": 1e-3, "nearest_factor": 5.0, "reverse_match": 1e-12},
    },
    "equi-attraction": {
        "params": {"t": -1.0, "eps_grid": [1.0, 0.75, 0.5], "depths": [0, 2, 4, 6, 8, 10, 12,
                                                                        14, 16, 18, 20],
                   "sample_size": 32, "step": 2.0, "max_depth": 40, "radius": 1.0},
        "tolerances": {"tol": 1e-3, "monotone_factor": 2.0, "final_factor": 5.0},
    },
    "holder": {
        "params": {"t": 0.0, "eps0": 1.0, "eps_grid": [0.9, 0.95, 0.98, 0.99, 0.995], "T": 2.0,
                   "n_pairs": 200, "sample_size": 48, "n_back": 0, "ball_seed_offset": 11},
        "tolerances": {"quality_min": 0.9, "halving_slack": 1.5, "gamma_max": 1.0,
                       "gamma_min": 1e-9, "halving_excess": 1e-9},
    },
}

SUITE_ALIASES = {"norm-sandwich": "sandwich"}
SUITES = tuple(SUITE_DEFAULTS)


def canonical_suite(name: str) -> str:
    name = SUITE_ALIASES.get(name, name)
    if name not in SUITE_DEFAULTS:
        raise ConfigError(f"unknown suite {name!r}; available: {', '.join(SUITES)}"
                          f" (alias: {', '.join(SUITE_ALIASES)})")
    return name


# Configuration -------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value)


def _parse(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


@dataclass
class ExperimentConfig:
    experiment: str
    model: ModelConfig = field(default_factory=ModelConfig)
    evolution: EvolutionSpec = field(default_factory=EvolutionSpec)
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    output_dir: str = "out"

    def __post_init__(self):
        self.experiment = canonical_suite(self.experiment)
        self.seed = int(self.seed)
        d = SUITE_DEFAULTS[self.experiment]
        self.params = {**copy.deepcopy(d["params"]), **(self.params or {})}
        self.tolerances = {**d["tolerances"], **(self.tolerances or {})}
        for k, v in self.tolerances.items():
            if not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"tolerance {k} must be a positive number, got {v!r}")
            self.tolerances[k] = float(v)

    @classmethod
    def default(cls, suite: str, **kw) -> "ExperimentConfig":
        return cls(suite, **kw)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "model": self.model.to_dict(),
            "evolution": self.evolution.to_dict(),
            "tolerances": dict(sorted(self.tolerances.items())),
            "params": dict(sorted(self.params.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(d["experiment"], ModelConfig.from_dict(d.get("model", {})),
                   EvolutionSpec.from_dict(d.get("evolution", {})), d.get("seed", 0),
                   d.get("tolerances", {}), d.get("params", {}), d.get("output_dir", "out"))

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form (output location excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        d = self.to_dict()
        cp["experiment"] = {"experiment": d["experiment"], "seed": str(d["seed"]),
                            "output_dir": d["output_dir"]}
        for sec in ("model", "evolution", "tolerances", "params"):
            cp[sec] = {k: _fmt(v) for k, v in d[sec].items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        if "experiment" not in cp or "experiment" not in cp["experiment"]:
            raise ConfigError("config needs [experiment] with an 'experiment' key")
        e = cp["experiment"]
        d = {"experiment": e["experiment"], "seed": int(e.get("seed", "0")),
             "output_dir": e.get("output_dir", "out")}
        for sec in ("model", "evolution", "tolerances", "params"):
            d[sec] = {k: _parse(v) for k, v in cp[sec].items()} if sec in cp else {}
        try:
            return cls.from_dict(d)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        return cls.from_ini(p.read_text())

    def replace(self, **kw) -> "ExperimentConfig":
        d = self.to_dict()
        for k, v in kw.items():
            if k in ("params", "tolerances"):
                d[k] = {**d[k], **v}
            elif k == "model":
                d[k] = v.to_dict()
            elif k == "evolution":
                d[k] = v.to_dict()
            else:
                d[k] = v
        return ExperimentConfig.from_dict(d)


# Result record ------------------------------------------------------------------

@dataclass
class Verdict:
    value: float
    threshold_key: str
    threshold: float
    comparison: str  # "le", "lt", "ge", "gt"
    passed: bool

    def to_dict(self) -> dict:
        return {"value": self.value, "threshold_key": self.threshold_key,
                "threshold": self.threshold, "comparison": self.comparison,
                "passed": self.passed}


@dataclass
class ResultRecord:
    config_hash: str
    suite: str
    seed: int
    metrics: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)   # name -> {"header": [...], "rows": [[...]]}
    verdicts: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    tolerances: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.errors and all(v.passed for v in self.verdicts.values())

    def failed_verdicts(self) -> list[str]:
        return [k for k, v in self.verdicts.items() if not v.passed]

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "suite": self.suite, "seed": self.seed,
                "metrics": self.metrics, "tables": self.tables,
                "verdicts": {k: v.to_dict() for k, v in self.verdicts.items()},
                "errors": self.errors, "wall_clock": self.wall_clock,
                "tolerances": self.tolerances, "passed": self.passed}

    @classmethod
    def from_dict(cls, d: dict) -> "ResultRecord":
        return cls(d["config_hash"], d["suite"], d["seed"], d["metrics"], d["tables"],
                   {k: Verdict(**v) for k, v in d["verdicts"].items()}, d.get("errors", {}),
                   d.get("wall_clock", 0.0), d.get("tolerances", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class _Run:
    """Mutable helpers shared by the suites."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.p = cfg.params
        self.tol = cfg.tolerances
        self.rec = ResultRecord(cfg.config_hash(), cfg.experiment, cfg.seed,
                                tolerances=dict(cfg.tolerances))
        self.spec = cfg.evolution.replace(threads=max(cfg.evolution.threads, 1))

    def model(self, eps=None) -> ModelConfig:
        m = self.cfg.model
        return m if eps is None else m.with_epsilon(float(eps))

    def metric(self, name, value):
        if isinstance(value, (np.floating, np.integer)):
            value = value.item()
        self.rec.metrics[name] = value
        return value

    def table(self, name, header, rows):
        self.rec.tables[name] = {"header": list(header),
                                 "rows": [[_plain(x) for x in r] for r in rows]}

    def verdict(self, name, value, comparison, key, scale=1.0):
        """Compare ``value`` against scale * tolerances[key]."""
        if key not in self.tol:
            raise ConfigError(f"verdict {name} needs tolerance {key!r}")
        thr = scale * self.tol[key]
        value = float(value)
        ok = {"le": value <= thr, "lt": value < thr, "ge": value >= thr,
              "gt": value > thr}[comparison] and math.isfinite(value)
        self.rec.verdicts[name] = Verdict(value, key, thr, comparison, bool(ok))
        return ok

    @contextmanager
    def guard(self, name):
        try:
            yield
        except (RuntimeError, ValueError, FloatingPointError) as exc:
            self.rec.errors[name] = f"{type(exc).__name__}: {exc}"


def _plain(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def _loglog(x, y):
    x, y = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    return float(slope), float(1.0 - np.sum(resid ** 2) / ss) if ss > 0 else 1.0


# Suites ------------------------------------------------------------------------

def _suite_simulate(r: _Run):
    p = r.p
    cfg = r.model(p["epsilon"])
    tau, t = float(p["tau"]), float(p["t"])
    U, V = sample_ball_arrays(int(p["sample_size"]), float(p["radius"]), tau, cfg, r.cfg.seed)
    _, _, rec = evolve_arrays(U, V, tau, t, cfg, r.spec, record=True)
    norms = rec.norms(cfg.metric(0.0))
    ly = LyapunovConfig.create(cfg, which="phi", t_min=tau)
    phi = [lyapunov_eval(ModalState(rec.u[k, 0], rec.v[k, 0], rec.times[k]), rec.times[k], cfg, ly)
           for k in range(rec.times.size)]
    r.table("trajectory", ["t", "sup_norm", "mean_norm", "phi_member0"],
            zip(rec.times, norms.max(axis=1), norms.mean(axis=1), phi))
    r.metric("final_sup_norm", float(norms[-1].max()))
    r.metric("steps", step_plan(tau, t, cfg, r.spec)[0])
    r.verdict("bounded", float(norms.max()), "le", "max_norm")


def _suite_decay(r: _Run):
    p = r.p
    cfg = r.model(p["epsilon"])
    tau, W = float(p["tau"]), float(p["window"])
    with r.guard("absorbing_ball"):
        ball = absorbing_ball(cfg, r.spec, probe_radius=float(p["radius"]),
                              window=float(p["probe_window"]), seed=r.cfg.seed)
        r.metric("R1", ball.R1)
        r.metric("launch_spread", ball.launch_spread())
        r.metric("absorption_depth", ball.depth)
        r.verdict("launch_uniformity", ball.launch_spread(), "le", "launch_spread")
    Z = sample_ball(int(p["sample_size"]), float(p["radius"]), tau, cfg, r.cfg.seed + 1)
    grid = np.linspace(tau, tau + W, int(p["n_fit"]))
    fit = decay_fit(Z, tau, grid, cfg, r.spec)
    r.metric("kappa", fit.kappa)
    r.metric("R_absorb", fit.R_absorb)
    r.metric("fit_quality", fit.quality)
    r.metric("integral_variation", fit.integral_variation())
    r.metric("ut_integral_max", float(fit.ut_integral_full.max()))
    r.table("decay", ["t", "sup_norm", "envelope"], zip(fit.times, fit.sup_norms, fit.envelope()))
    r.verdict("kappa_positive", fit.kappa, "ge", "kappa_min")
    r.verdict("R_absorb_finite", fit.R_absorb, "le", "R_absorb_max")
    r.verdict("integral_bounded", fit.integral_variation(), "le", "integral_variation")
    if "R1" in r.rec.metrics:
        U, V = evolve_arrays(Z.u, Z.v, tau, tau + W, cfg, r.spec)
        _, _, rec = evolve_arrays(U, V, tau + W, tau + W + float(p["persist"]), cfg, r.spec,
                                  record=True)
        sup = rec.norms(cfg.metric(0.0)).max(axis=1)
        r.metric("persist_sup", float(sup.max()))
        r.verdict("absorption_persists", float(sup.max()) / r.rec.metrics["R1"], "le",
                  "absorb_margin")


def _suite_sandwich(r: _Run):
    p = r.p
    cfg = r.model()
    rng = np.random.default_rng(r.cfg.seed)
    n, N, a = int(p["n_triples"]), cfg.n_modes, float(p["a"])
    worst = 0.0
    lam = cfg.eigenvalues
    for _ in range(n):
        t = rng.uniform(-p["t_range"], p["t_range"])
        eps = rng.uniform(a, 1.0)
        scale = 10.0 ** rng.uniform(-3, 3)
        u = scale * rng.standard_normal(N) / np.sqrt(lam)
        v = scale * rng.standard_normal(N)
        h = float(cfg.metric(0.0, 1.0).norm_sq_arrays(u, v, t))
        he = float(cfg.metric(0.0, eps).norm_sq_arrays(u, v, t))
        lo_violation = max(0.0, eps * h - he) / he
        hi_violation = max(0.0, he - h) / h
        worst = max(worst, lo_violation, hi_violation)
    r.metric("norm_max_rel_violation", worst)
    r.metric("n_triples", n)
    r.verdict("norm_sandwich", worst, "le", "rel_violation")
    rows, lyap_worst = [], 0.0
    for which in ("phi", "lambda", "psi"):
        c = cfg.with_epsilon(float(rng.uniform(a, 1.0)))
        ly = LyapunovConfig.create(c, which=which)
        w = 0.0
        for _ in range(int(p["n_lyapunov"])):
            t = rng.uniform(-p["t_range"], 0.0)
            scale = 10.0 ** rng.uniform(-2, 1)
            z = ModalState(scale * rng.standard_normal(N) / lam ** (0.5 + ly.target_sigma / 2),
                           scale * rng.standard_normal(N) / lam ** (ly.target_sigma / 2), t)
            lo, mid, hi = lyapunov_sandwich(z, t, c, ly)
            ref = max(abs(mid), 1e-300)
            w = max(w, max(0.0, lo - mid) / ref, max(0.0, mid - hi) / ref)
        rows.append((which, ly.delta, w))
        lyap_worst = max(lyap_worst, w)
    r.table("lyapunov_sandwich", ["functional", "delta", "max_rel_violation"], rows)
    r.metric("lyapunov_max_rel_violation", lyap_worst)
    r.verdict("lyapunov_sandwich", lyap_worst, "le", "rel_violation")


def _cocycle_defect(Z, tau, s, t, cfg, spec):
    U1, V1 = evolve_arrays(Z.u, Z.v, tau, s, cfg, spec)
    U1, V1 = evolve_arrays(U1, V1, s, t, cfg, spec)
    U2, V2 = evolve_arrays(Z.u, Z.v, tau, t, cfg, spec)
    return float(np.sqrt(cfg.metric(0.0).norm_sq_arrays(U1 - U2, V1 - V2, t)).max())


def _suite_cocycle(r: _Run):
    p = r.p
    cfg = r.model(p["epsilon"])
    tau, s, t = float(p["tau"]), float(p["s"]), float(p["t"])
    Z = sample_ball(int(p["sample_size"]), float(p["radius"]), tau, cfg, r.cfg.seed)
    U, V = evolve_arrays(Z.u, Z.v, tau, tau, cfg, r.spec)
    ident = float(max(np.abs(U - Z.u).max(), np.abs(V - Z.v).max()))
    r.metric("identity_defect", ident)
    r.verdict("identity_exact", ident, "le", "identity_defect")
    d0 = _cocycle_defect(Z, tau, s, t, cfg, r.spec)
    r.metric("cocycle_defect", d0)
    r.verdict("cocycle_default_dt", d0, "le", "cocycle_defect")
    # default-dt defects are at roundoff; the order is read off a coarser ladder
    c2 = r.model(p["ladder_epsilon"])
    Z2 = sample_ball(int(p["sample_size"]), float(p["radius"]), tau, c2, r.cfg.seed)
    rows, defects = [], []
    for j in range(int(p["ladder_halvings"]) + 1):
        sp = r.spec.replace(safety=float(p["ladder_safety"]) / 2 ** j)
        d = _cocycle_defect(Z2, tau, s, t, c2, sp)
        defects.append(d)
        rows.append((sp.safety, step_plan(tau, t, c2, sp)[1], d))
    r.table("cocycle_ladder", ["safety", "h", "defect"], rows)
    for j in range(1, len(defects)):
        ratio = defects[j - 1] / defects[j] if defects[j] > 0 else float("inf")
        r.metric(f"order_ratio_{j}", ratio)
        r.verdict(f"order4_halving_{j}", abs(math.log2(ratio) - 4.0) if ratio > 0 else math.inf,
                  "le", "order_log2")


def _suite_lipschitz(r: _Run):
    p = r.p
    cfg = r.model(p["epsilon"])
    tau = float(p["tau"])
    n = int(p["n_pairs"])
    Z1 = sample_ball(n, float(p["radius"]), tau, cfg, r.cfg.seed)
    D = sample_ball(n, float(p["separation"]), tau, cfg, r.cfg.seed + 1)
    U2, V2 = Z1.u + D.u, Z1.v + D.v
    m = cfg.metric(0.0)
    d0 = np.sqrt(m.norm_sq_arrays(D.u, D.v, tau))
    ratios, spans = [], []
    U1, V1, W1, X1 = Z1.u, Z1.v, U2, V2
    t_prev = tau
    for s in sorted(float(x) for x in p["spans"]):
        U1, V1 = evolve_arrays(U1, V1, t_prev, tau + s, cfg, r.spec)
        W1, X1 = evolve_arrays(W1, X1, t_prev, tau + s, cfg, r.spec)
        t_prev = tau + s
        d = np.sqrt(m.norm_sq_arrays(U1 - W1, V1 - X1, tau + s))
        ratios.append(d / d0)
        spans.append(np.full(n, s))
    ratios, spans = np.array(ratios), np.array(spans)   # (n_spans, n)
    fit_idx = np.arange(n) % 2 == 0
    Q = fit_lipschitz_growth(ratios[:, fit_idx].ravel(), spans[:, fit_idx].ravel())
    env = Q * np.exp(Q * spans)
    excess = float(np.max(ratios[:, ~fit_idx] / env[:, ~fit_idx]) - 1.0)
    r.metric("Q_fit", Q)
    r.metric("holdout_excess", excess)
    r.table("lipschitz", ["span", "max_ratio", "envelope"],
            [(spans[i, 0], ratios[i].max(), env[i, 0]) for i in range(len(spans))])
    r.verdict("envelope_holds", max(excess, 0.0), "le", "envelope_excess")


def _suite_eps_lipschitz(r: _Run):
    p = r.p
    cfg = r.model()
    eps0, tau, t = float(p["eps0"]), float(p["tau"]), float(p["t"])
    U, V = sample_ball_arrays(1, float(p["radius"]), tau, cfg.with_epsilon(eps0), r.cfg.seed,
                              sigma=1.0)
    z = ModalState(U[0], V[0], tau)
    offs = np.logspace(math.log10(p["offset_min"]), math.log10(p["offset_max"]),
                       int(p["n_offsets"]))
    dists = []
    for d in offs:
        e1 = eps0 + d if eps0 + d <= 1.0 else eps0 - d
        dists.append(lipschitz_in_eps(z, tau, t, e1, eps0, cfg, r.spec, a=float(p["a"])) * d)
    slope, q = _loglog(offs, dists)
    r.metric("slope", slope)
    r.metric("quality", q)
    r.metric("max_ratio", float(np.max(np.array(dists) / offs)))
    r.table("eps_lipschitz", ["offset", "distance", "ratio"],
            zip(offs, dists, np.array(dists) / offs))
    r.verdict("linear_slope", abs(slope - 1.0), "le", "slope_dev")
    r.verdict("fit_quality", q, "ge", "quality_min")


def _suite_split(r: _Run):
    p = r.p
    cfg = r.model(p["epsilon"])
    tau, W = float(p["tau"]), float(p["window"])
    Z = sample_ball(int(p["sample_size"]), float(p["radius"]), tau, cfg, r.cfg.seed)
    rec = split_evolve_arrays(Z.u, Z.v, tau, tau + W, cfg, r.spec)
    m0 = cfg.metric(0.0)
    m13 = cfg.metric(1.0 / 3.0)
    K = rec.times.size
    vn = np.array([np.sqrt(m0.norm_sq_arrays(rec.v[k], rec.vt[k], rec.times[k])).max()
                   for k in range(K)])
    wn = np.array([np.sqrt(m13.norm_sq_arrays(rec.w[k], rec.wt[k], rec.times[k])).max()
                   for k in range(K)])
    sup = max(float(np.sqrt(m0.norm_sq_arrays(rec.v[k] + rec.w[k] - rec.u[k],
                                              rec.vt[k] + rec.wt[k] - rec.ut[k],
                                              rec.times[k])).max()) for k in range(K))
    _, kappa, _, q = fit_exponential_envelope(rec.times - tau, vn)
    pos = vn > 0
    rate = -np.polyfit(rec.times[pos] - tau, np.log(vn[pos]), 1)[0] if pos.sum() > 2 else 0.0
    half = rec.times >= tau + 0.5 * W
    wslope = float(np.polyfit(rec.times[half], wn[half] / wn[half].mean(), 1)[0])
    r.metric("v_rate", float(rate))
    r.metric("v_envelope_kappa", kappa)
    r.metric("v_endpoint_ratio", float(vn[-1] / vn[0]))
    r.metric("w_tail_slope", wslope)
    r.metric("w_sup", float(wn.max()))
    r.metric("superposition_defect", sup)
    r.table("split", ["t", "v_sup_norm", "w_sup_norm_1_3"], zip(rec.times, vn, wn))
    r.verdict("v_decays", rate, "ge", "v_rate_min")
    r.verdict("v_endpoint", vn[-1] / vn[0], "le", "v_endpoint_ratio")
    r.verdict("w_bounded", wslope, "le", "w_slope")
    r.verdict("superposition", sup, "le", "superposition")


def _absorbing_radius(r: _Run, cfg):
    if "R1" not in r.rec.metrics:
        ball = absorbing_ball(cfg.with_epsilon(1.0), r.spec, seed=r.cfg.seed)
        r.metric("R1", ball.R1)
    return r.rec.metrics["R1"]


def _qs_fit(r: _Run, cfg, T, t=0.0):
    p = r.p
    R1 = _absorbing_radius(r, cfg)
    ball = sample_ball(int(p["sample_size"]), R1, t - T, cfg, r.cfg.seed + int(p["ball_seed_offset"]))
    return estimate_quasi_stability(ball, t, T, int(p["n_pairs"]), cfg, r.spec, seed=r.cfg.seed)


def _suite_quasistab(r: _Run):
    p = r.p
    cfg = r.model(p["epsilon"])
    rows, best = [], math.inf
    for T in p["T_list"]:
        with r.guard(f"fit_T{T}"):
            fit = _qs_fit(r, cfg, float(T), float(p["t"]))
            pk = packing_estimate(fit, cfg, seed=r.cfg.seed)
            bound = dimension_bound(fit, pk, cfg)
            rows.append((T, fit.eta, fit.L_semi, fit.kappa, fit.violations,
                         fit.holdout_violations, pk.m, bound))
            r.metric(f"eta_T{T}", fit.eta)
            r.metric(f"violations_T{T}", fit.violations)
            r.verdict(f"no_violations_T{T}", fit.violations, "lt", "violations")
            best = min(best, fit.eta)
    r.table("quasistab", ["T", "eta", "L", "kappa", "violations", "holdout_violations",
                          "packing_m", "dim_bound"], rows)
    r.metric("eta_min", best)
    r.verdict("eta_below_quarter", best, "lt", "eta_target")


def _suite_exp_attractor(r: _Run):
    p = r.p
    cfg = r.model(p["epsilon"])
    T = float(p["T"])
    fit = _qs_fit(r, cfg, T, 0.0)
    pk = packing_estimate(fit, cfg, seed=r.cfg.seed)
    bound = dimension_bound(fit, pk, cfg)
    R1 = r.rec.metrics["R1"]
    r.metric("eta", fit.eta)
    r.metric("L", fit.L_semi)
    r.metric("packing_m", pk.m)
    r.metric("dim_bound", bound)
    build = build_exponential_attractor(range(int(p["n_lo"]), int(p["n_hi"]) + 1), fit, R1, cfg,
                                        r.spec, int(p["sample_size"]), r.cfg.seed,
                                        int(p["k_cap"]), packing_m=pk.m)
    r.metric("k_max", build.k_max)
    rows = []
    n_invalid, worst_ratio, worst_semi, worst_dim = 0, 0.0, 0.0, 0.0
    for n, sec in sorted(build.sections.items()):
        valid = all(sec.cover_valid.values())
        n_invalid += sum(not v for v in sec.cover_valid.values())
        ratios = [x for _, x in sec.defect_ratios()]
        mr = max(ratios) if ratios else 0.0
        worst_ratio = max(worst_ratio, mr)
        semi_rel = sec.semi_invariance_defect / sec.resolution \
            if math.isfinite(sec.semi_invariance_defect) else 0.0
        worst_semi = max(worst_semi, semi_rel)
        dim = box_counting_dim(sec.assembled, dyadic_radii(sec.assembled))
        worst_dim = max(worst_dim, dim.estimate)
        rows.append((n, sec.time, len(sec.assembled), valid, mr, sec.semi_invariance_defect,
                     sec.resolution, dim.estimate, dim.fit_quality))
    r.table("exp_attractor", ["n", "t", "card", "covers_valid", "max_defect_ratio",
                              "semi_invariance", "resolution", "box_dim", "box_quality"], rows)
    r.metric("max_defect_ratio", worst_ratio)
    r.metric("max_semi_over_resolution", worst_semi)
    r.metric("max_box_dim", worst_dim)
    r.verdict("covers_valid", n_invalid, "lt", "invalid_covers")
    r.verdict("defect_ratio", worst_ratio, "le", "defect_ratio_slack", 2.0 * fit.eta)
    r.verdict("semi_invariance", worst_semi, "le", "semi_slack")
    r.verdict("dimension_bound", worst_dim, "le", "dim_slack", bound)
    n0 = int(p["n_hi"])
    sec0 = build.section(n0)
    with r.guard("containment"):
        att = pullback_attractor(sec0.time, float(p["epsilon"]), cfg, r.spec,
                                 PullbackParams(int(p["pullback_sample"]), 2.0,
                                                r.tol["containment"], 40, R1, r.cfg.seed))
        cont = hausdorff_semidist(att.cloud, sec0.assembled)
        r.metric("containment", cont)
        r.verdict("containment", cont, "le", "containment")
    with r.guard("transfer"):
        tr = attraction_transfer(build, n0, float(p["transfer_radius"]), p["transfer_taus"],
                                 seed=r.cfg.seed + 3)
        r.metric("transfer_beta", tr.beta)
        r.metric("transfer_quality", tr.quality)
        r.table("attraction_transfer", ["tau", "distance"], zip(tr.taus, tr.distances))
        r.verdict("transfer_rate", tr.beta, "ge", "transfer_beta_min")


def _params(r: _Run, radius=1.0) -> PullbackParams:
    p = r.p
    return PullbackParams(int(p["sample_size"]), float(p["step"]), r.tol["tol"],
                          int(p["max_depth"]), float(p.get("radius", radius)), r.cfg.seed)


def _workers(r: _Run) -> int:
    return max(int(r.cfg.evolution.threads), 1)


def _suite_attractor(r: _Run):
    p = r.p
    cfg = r.model()
    t, tol = float(p["t"]), r.tol["tol"]
    rows = []
    for eps in p["eps_grid"]:
        with r.guard(f"eps_{eps}"):
            c = cfg.with_epsilon(float(eps))
            sec = pullback_attractor(t, float(eps), cfg, r.spec, _params(r))
            nxt = pullback_attractor(t + 1.0, float(eps), cfg, r.spec, _params(r))
            U, V = evolve_arrays(sec.cloud.u, sec.cloud.v, t, t + 1.0, c, r.spec)
            fwd = symmetric_hausdorff(PointCloud(t + 1.0, U, V, nxt.cloud.metric), nxt.cloud)
            rows.append((eps, sec.pullback_depth, sec.cauchy_gap, sec.tail_energy_fraction(), fwd))
            r.metric(f"depth_eps{eps}", sec.pullback_depth)
            r.verdict(f"forward_consistent_eps{eps}", fwd, "le", "forward_factor", tol)
    r.table("attractor", ["eps", "depth", "cauchy_gap", "tail_energy_fraction",
                          "forward_distance"], rows)


def _suite_usc(r: _Run):
    p = r.p
    cfg = r.model()
    tol = r.tol["tol"]
    curve = upper_semicontinuity_scan(float(p["t"]), float(p["eps0"]), p["eps_grid"], cfg, r.spec,
                                      _params(r), float(p["a"]), _workers(r))
    for e in curve.flagged:
        r.rec.errors[f"eps_{e}"] = "pullback iteration did not converge"
    r.table("continuity", ["eps", "distance"], zip(curve.eps_grid, curve.forward))
    order = np.argsort(-curve.offsets)
    d = curve.forward[order]
    rises = float(np.max(d[1:] - np.minimum.accumulate(d)[:-1])) if d.size > 1 else 0.0
    r.metric("nearest_distance", float(curve.forward[curve.nearest_index()]))
    r.metric("farthest_distance", float(curve.forward[curve.farthest_index()]))
    r.metric("max_rise", max(rises, 0.0))
    r.verdict("nearest_small", curve.forward[curve.nearest_index()], "le", "nearest_factor", tol)
    r.verdict("decreasing_trend", max(rises, 0.0), "le", "noise_factor", tol)


def _suite_continuity(r: _Run):
    p = r.p
    cfg = r.model()
    tol = r.tol["tol"]
    grid = sorted({float(e) for e in p["eps_grid"]} | {float(p["eps0"])})
    sections = compute_sections(float(p["t"]), grid, cfg, r.spec, _params(r), _workers(r))
    curve = continuity_curve(sections, float(p["eps0"]))
    for e in curve.flagged:
        r.rec.errors[f"eps_{e}"] = "pullback iteration did not converge"
    # the reverse distances must equal the forward ones with roles swapped
    swap = 0.0
    ref = sections[float(p["eps0"])]
    for i, e in enumerate(curve.eps_grid):
        sec = sections[e]
        if sec is None:
            continue
        swapped = continuity_curve({e: sec, float(p["eps0"]): ref}, e) if e != p["eps0"] else None
        if swapped is not None:
            j = list(swapped.eps_grid).index(float(p["eps0"]))
            swap = max(swap, abs(swapped.forward[j] - curve.reverse[i]))
    r.table("continuity_symmetric", ["eps", "distance"], zip(curve.eps_grid, curve.symmetric))
    r.table("modulus", ["offset", "modulus"], zip(np.sort(curve.offsets), curve.modulus()))
    r.metric("nearest_symmetric", float(curve.symmetric[curve.nearest_index()]))
    r.metric("max_symmetric", float(np.nanmax(curve.symmetric)))
    r.metric("swap_mismatch", swap)
    r.verdict("nearest_small", curve.symmetric[curve.nearest_index()], "le", "nearest_factor",
              tol)
    r.verdict("roles_symmetric", swap, "le", "reverse_match")


def _suite_equi(r: _Run):
    p = r.p
    cfg = r.model()
    t, tol = float(p["t"]), r.tol["tol"]
    grid = [float(e) for e in p["eps_grid"]]
    sections = compute_sections(t, grid, cfg, r.spec, _params(r), _workers(r))
    missing = [e for e, s in sections.items() if s is None]
    if missing:
        raise PullbackNonConvergence(f"sections missing for eps {missing}", [])
    s_list = [t - float(d) for d in p["depths"]]
    table = equi_attraction_scan(t, grid, s_list, cfg, sections, r.spec, float(p["radius"]),
                                 int(p["sample_size"]), r.cfg.seed + 1)
    r.table("equi_attraction", ["s"] + [f"eps_{e}" for e in grid] + ["sup"],
            [[s, *row, sup] for s, row, sup in zip(table.s_list, table.distances, table.sup)])
    r.metric("final_sup", float(table.sup[-1]))
    r.metric("monotone_violation", table.monotone_violation())
    r.verdict("nonincreasing", table.monotone_violation(), "le", "monotone_factor", tol)
    r.verdict("final_small", table.sup[-1], "le", "final_factor", tol)


def _suite_holder(r: _Run):
    p = r.p
    eps0 = float(p["eps0"])
    cfg = r.model(eps0)
    fit = _qs_fit(r, cfg, float(p["T"]), float(p["t"]))
    R1 = r.rec.metrics["R1"]
    fam = holder_family(p["eps_grid"], eps0, float(p["t"]), fit, R1, r.model(), r.spec,
                        n_back=int(p["n_back"]), sample_size=int(p["sample_size"]),
                        seed=r.cfg.seed)
    h = fam.fit()
    dist = fam.distances()
    grid = sorted(dist)
    r.table("holder", ["eps", "offset", "distance", "Gamma", "shared_levels", "fitted"],
            [(e, abs(e - eps0), dist[e], fam.gammas[e], fam.shared.get(e, -1),
              float(h.predict(abs(e - eps0)))) for e in grid])
    r.metric("gamma", h.gamma)
    r.metric("slope", h.slope)
    r.metric("C_fit", h.C_fit)
    r.metric("quality", h.quality)
    # judged on the unconstrained slope so the clipping cannot hide a failure
    r.verdict("gamma_positive", h.slope, "ge", "gamma_min")
    r.verdict("gamma_at_most_one", h.slope, "le", "gamma_max")
    r.verdict("holder_quality", h.quality, "ge", "quality_min")
    # halving check on pairs of offsets that differ by a factor two
    offs = {round(abs(e - eps0), 12): dist[e] for e in grid if e != eps0}
    worst = 0.0
    for o, d in offs.items():
        half = round(o / 2, 12)
        if half in offs and d > 0:
            q = offs[half] / d
            lo, hi = 0.5, 2.0 ** (-h.gamma) * r.tol["halving_slack"]
            worst = max(worst, max(lo - q, q - hi, 0.0))
    r.metric("halving_excess", worst)
    r.verdict("halving_consistent", worst, "le", "halving_excess")


_SUITE_FUNCS = {
    "simulate": _suite_simulate,
    "decay": _suite_decay,
    "sandwich": _suite_sandwich,
    "cocycle": _suite_cocycle,
    "lipschitz": _suite_lipschitz,
    "eps-lipschitz": _suite_eps_lipschitz,
    "split": _suite_split,
    "quasistab": _suite_quasistab,
    "exp-attractor": _suite_exp_attractor,
    "attractor": _suite_attractor,
    "usc-scan": _suite_usc,
    "continuity-scan": _suite_continuity,
    "equi-attraction": _suite_equi,
    "holder": _suite_holder,
}


def run_suite(cfg: ExperimentConfig, write: bool = True) -> ResultRecord:
    """Run the configured suite; with ``write`` persist it under output_dir/<hash>/."""
    r = _Run(cfg)
    t0 = time.perf_counter()
    with r.guard("suite"):
        _SUITE_FUNCS[cfg.experiment](r)
    r.rec.wall_clock = time.perf_counter() - t0
    if write:
        persist(r.rec, cfg)
    return r.rec


# Persistence -------------------------------------------------------------------

def run_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir) / cfg.config_hash()


def persist(record: ResultRecord, cfg: ExperimentConfig) -> Path:
    """Single writer for one run directory: config.ini, record.json and the CSV tables."""
    d = run_dir(cfg)
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.ini").write_text(cfg.to_ini())
    (d / "record.json").write_text(record.to_json())
    emit_plot_data(record, d)
    return d


def emit_plot_data(record: ResultRecord, directory=None) -> list[Path]:
    """One CSV per table (header row, then data rows); returns the written paths."""
    directory = Path(directory or ".")
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for name, tab in record.tables.items():
        path = directory / f"{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(tab["header"])
            for row in tab["rows"]:
                w.writerow([repr(float(x)) if isinstance(x, float) else x for x in row])
        out.append(path)
    return out


def load_record(path) -> ResultRecord:
    return ResultRecord.from_dict(json.loads(Path(path).read_text()))


def replay(config_hash: str, output_dir="out", write: bool = False) -> ResultRecord:
    """Rerun a stored configuration and return the new record.

    Raises HashMismatchError when the stored config does not hash to the
    directory name.
    """
    d = Path(output_dir) / config_hash
    cfg_path = d / "config.ini"
    if not cfg_path.is_file():
        raise ConfigError(f"no stored config at {cfg_path}")
    cfg = ExperimentConfig.from_ini(cfg_path.read_text())
    cfg.output_dir = str(output_dir)
    if cfg.config_hash() != config_hash:
        raise HashMismatchError(f"config at {cfg_path} hashes to {cfg.config_hash()}, "
                                f"expected {config_hash}")
    return run_suite(cfg, write=write)


def metrics_equal(a: ResultRecord, b: ResultRecord) -> bool:
    """Exact equality of metrics and tables (wall clock excluded)."""
    return (json.dumps(a.metrics, sort_keys=True) == json.dumps(b.metrics, sort_keys=True)
            and json.dumps(a.tables, sort_keys=True) == json.dumps(b.tables, sort_keys=True))


def environment_threads() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else 1

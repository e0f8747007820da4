import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pullback_lab import kernels
from pullback_lab.model import (DegenerateMassError, ModalState, ModelConfig, NonlinearitySpec,
                                transform_matrix)
from pullback_lab.process import (BlowUpError, EvolutionSpec, LyapunovConfig, StepBudgetError,
                                  decay_fit, evolve, evolve_arrays, evolve_pair, evolve_trajectory,
                                  fit_exponential_envelope, fit_lipschitz_growth, lipschitz_in_eps,
                                  lyapunov_eval, lyapunov_sandwich, sample_ball, split_evolve,
                                  split_evolve_arrays, step_plan)
from pullback_lab.spaces import RhoProfile

has_compiled = True
try:
    from pullback_lab import _kernels  # noqa: F401
except ImportError:  # pragma: no cover
    has_compiled = False


def damped_oscillator(u0, v0, lam, t, alpha=1.0):
    """Closed form for u'' + alpha u' + lam u = 0 (underdamped)."""
    w = np.sqrt(lam - alpha ** 2 / 4)
    a = u0
    b = (v0 + alpha * u0 / 2) / w
    e = np.exp(-alpha * t / 2)
    u = e * (a * np.cos(w * t) + b * np.sin(w * t))
    du = -alpha / 2 * u + e * (-a * w * np.sin(w * t) + b * w * np.cos(w * t))
    return u, du


def test_identity_is_exact(cfg, rng):
    z = ModalState(rng.normal(size=cfg.n_modes), rng.normal(size=cfg.n_modes), -3.0)
    out = evolve(z, -3.0, -3.0, cfg)
    assert np.array_equal(out.u, z.u) and np.array_equal(out.v, z.v)
    assert out.u is not z.u


def test_linear_modes_match_closed_form(linear_cfg, rng):
    u0, v0 = rng.normal(size=8), rng.normal(size=8)
    out = evolve(ModalState(u0, v0), 0.0, 5.0, linear_cfg)
    u, v = damped_oscillator(u0, v0, linear_cfg.eigenvalues, 5.0)
    assert np.max(np.abs(out.u - u)) <= 1e-6
    assert np.max(np.abs(out.v - v)) <= 1e-6


def test_trapezoid_agrees_with_rk4(small_cfg, rng):
    z = ModalState(0.3 * rng.normal(size=12), 0.3 * rng.normal(size=12))
    a = evolve(z, -2.0, 0.0, small_cfg)
    b = evolve(z, -2.0, 0.0, small_cfg, EvolutionSpec(integrator="trapezoid", safety=0.02))
    assert np.max(np.abs(a.u - b.u)) <= 1e-3


@pytest.mark.parametrize("a3", [0.0, 1.0])
def test_energy_conserved_without_damping(rng, a3):
    # the model requires alpha > 0, so drive the stepping kernel directly with alpha = 0
    n, m, h, steps = 8, 1.0, 2e-3, 5000
    lam = np.arange(1, n + 1, dtype=float) ** 2
    S = transform_matrix(n)
    U = 0.5 * rng.normal(size=(1, n)) / np.arange(1, n + 1)
    V = 0.5 * rng.normal(size=(1, n)) / np.arange(1, n + 1)
    x = np.linspace(0, np.pi, 4001)
    basis = np.sin(np.outer(np.arange(1, n + 1), x))

    def energy(U, V):
        u_x = U[0] @ basis
        quartic = a3 * 2.0 / np.pi * np.trapezoid(u_x ** 4 / 4, x)
        return 0.5 * m * np.sum(V ** 2) + 0.5 * np.sum(lam * U ** 2) + quartic

    e0 = energy(U, V)
    kernels.rk4_advance(U, V, np.full(2 * steps + 1, m), h, steps, S, lam, np.zeros(n), 0.0,
                        0.0, 0.0, a3, 1)
    assert abs(energy(U, V) - e0) / e0 <= 1e-6


def test_cocycle_property(cfg, rng):
    z = ModalState(0.5 * rng.normal(size=cfg.n_modes) / np.arange(1, 33),
                   0.5 * rng.normal(size=cfg.n_modes) / np.arange(1, 33), -4.0)
    direct = evolve(z, -4.0, 1.0, cfg)
    mid = evolve(evolve(z, -4.0, -1.3, cfg), -1.3, 1.0, cfg)
    assert cfg.metric(0.0).norm_sq_arrays(direct.u - mid.u, direct.v - mid.v, 1.0) ** 0.5 <= 1e-6


@pytest.mark.skipif(not has_compiled, reason="compiled kernel not built")
def test_backends_agree(small_cfg, rng):
    U = 0.4 * rng.normal(size=(5, 12))
    V = 0.4 * rng.normal(size=(5, 12))
    a = evolve_arrays(U, V, -3.0, 0.0, small_cfg, EvolutionSpec(backend="python"))
    b = evolve_arrays(U, V, -3.0, 0.0, small_cfg, EvolutionSpec(backend="compiled"))
    c = evolve_arrays(U, V, -3.0, 0.0, small_cfg, EvolutionSpec(backend="compiled", threads=2))
    assert np.max(np.abs(a[0] - b[0])) <= 1e-12 and np.max(np.abs(a[1] - b[1])) <= 1e-12
    assert np.array_equal(b[0], c[0])


def test_unknown_backend_and_spec_validation():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
    with pytest.raises(ValueError):
        EvolutionSpec(integrator="euler")
    with pytest.raises(ValueError):
        EvolutionSpec(dt_rule="cfl")
    with pytest.raises(ValueError):
        EvolutionSpec(safety=0.0)
    s = EvolutionSpec(dt_rule="stiff", safety=0.5)
    assert EvolutionSpec.from_dict(s.to_dict()) == s


def test_step_rules():
    wave = EvolutionSpec()
    stiff = EvolutionSpec(dt_rule="stiff", safety=0.5)
    assert wave.step_limit(0.5, 1024.0, 1.0) == pytest.approx(0.05 * 0.02)
    assert wave.step_limit(0.1, 1024.0, 1.0) == pytest.approx(0.05 * math.sqrt(0.1 / 1024))
    assert stiff.step_limit(0.5, 1024.0, 1.0) == pytest.approx(0.5 * 0.5 / 1024)
    assert wave.replace(mass_ref=0.01).step_limit(0.5, 1.0, 1.0) == pytest.approx(0.05 * 0.01)


def test_step_plan_errors(cfg):
    with pytest.raises(ValueError):
        step_plan(1.0, 0.0, cfg, EvolutionSpec())
    with pytest.raises(StepBudgetError):
        step_plan(-10.0, 0.0, cfg, EvolutionSpec(max_steps=10))
    with pytest.raises(DegenerateMassError):
        step_plan(0.0, 20.0, cfg, EvolutionSpec())
    assert step_plan(0.0, 0.0, cfg, EvolutionSpec()) == (0, 0.0)


def test_blow_up_is_reported():
    bad = ModelConfig(n_modes=4, nonlinearity=NonlinearitySpec("polynomial", (0, 0, -1.0),
                                                                (0, 0, 0)))
    z = ModalState(np.array([50.0, 0, 0, 0]), np.zeros(4))
    with pytest.raises(BlowUpError), np.errstate(all="ignore"):
        evolve(z, 0.0, 2.0, bad, EvolutionSpec(backend="python"))


@settings(max_examples=15)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_superposition_in_linear_case(a, b):
    cfg = ModelConfig(n_modes=6, g_modes=(0.0,) * 6, nonlinearity=NonlinearitySpec.named("zero"))
    rng = np.random.default_rng(1)
    z1 = ModalState(rng.normal(size=6), rng.normal(size=6))
    z2 = ModalState(rng.normal(size=6), rng.normal(size=6))
    combo = ModalState(a * z1.u + b * z2.u, a * z1.v + b * z2.v)
    x1, x2, _ = evolve_pair(z1, z2, -1.0, 1.0, cfg)
    xc = evolve(combo, -1.0, 1.0, cfg)
    assert np.allclose(xc.u, a * x1.u + b * x2.u, atol=1e-12)
    assert np.allclose(xc.v, a * x1.v + b * x2.v, atol=1e-12)


def test_pair_difference_trajectory(small_cfg, rng):
    z1 = ModalState(0.1 * rng.normal(size=12), np.zeros(12))
    z2 = ModalState(0.1 * rng.normal(size=12), np.zeros(12))
    x1, x2, diff = evolve_pair(z1, z2, -1.0, 0.5, small_cfg)
    assert diff.times[0] == -1.0 and diff.times[-1] == 0.5
    assert np.allclose(diff.u[0], z1.u - z2.u)
    assert np.allclose(diff.u[-1], x1.u - x2.u)
    traj = evolve_trajectory(z1, -1.0, 0.5, small_cfg)
    assert np.allclose(traj.u[-1], x1.u, atol=1e-14)


def test_split_parts_sum_to_solution(small_cfg, rng):
    z = ModalState(0.3 * rng.normal(size=12), 0.3 * rng.normal(size=12))
    v, w = split_evolve(z, -2.0, 0.0, small_cfg)
    full = evolve(z, -2.0, 0.0, small_cfg)
    assert np.max(np.abs(v.u + w.u - full.u)) <= 1e-8


def test_split_remainder_vanishes_without_forcing_or_f1(rng):
    cfg = ModelConfig(n_modes=8, g_modes=(0.0,) * 8)
    U0 = 0.3 * rng.normal(size=(2, 8))
    rec = split_evolve_arrays(U0, 0 * U0, -2.0, 0.0, cfg)
    assert np.max(np.abs(rec.w)) == 0.0
    assert np.allclose(rec.v, rec.u)


def test_lyapunov_values(cfg, rng):
    ly = LyapunovConfig.create(cfg, 0.01, "psi")
    assert lyapunov_eval(ModalState.zeros(cfg.n_modes), 0.0, cfg, ly) == 0.0
    u = rng.normal(size=cfg.n_modes)
    z = ModalState(u, np.zeros(cfg.n_modes))
    assert lyapunov_eval(z, 0.0, cfg, ly, delta=0.0) == pytest.approx(
        np.sum(cfg.eigenvalues * u * u))
    with pytest.raises(ValueError):
        lyapunov_eval(z, 0.0, cfg, ly, delta=-1.0)
    with pytest.raises(ValueError):
        LyapunovConfig(delta=0.9)
    with pytest.raises(ValueError):
        LyapunovConfig(which="omega")


@settings(max_examples=30)
@given(arrays(np.float64, 16, elements=st.floats(-10, 10)), st.floats(-20, 10),
       st.sampled_from(["phi", "lambda", "psi"]))
def test_lyapunov_sandwich_holds(x, t, which):
    cfg = ModelConfig(n_modes=8)
    ly = LyapunovConfig.create(cfg, 0.01, which)
    lo, val, hi = lyapunov_sandwich(ModalState(x[:8], x[8:]), t, cfg, ly)
    assert lo <= val * (1 + 1e-12) + 1e-9
    assert val <= hi * (1 + 1e-12) + 1e-9


def test_sample_ball_prefix_and_radius(cfg):
    a = sample_ball(10, 2.0, -1.0, cfg, seed=4)
    b = sample_ball(4, 2.0, -1.0, cfg, seed=4)
    assert np.array_equal(a.u[:4], b.u) and np.array_equal(a.v[:4], b.v)
    assert np.all(a.norms() <= 2.0 + 1e-12)
    assert not np.array_equal(sample_ball(4, 2.0, -1.0, cfg, seed=5).u, b.u)
    with pytest.raises(ValueError):
        sample_ball(0, 1.0, 0.0, cfg, 0)
    with pytest.raises(ValueError):
        sample_ball(3, -1.0, 0.0, cfg, 0)


def test_decay_fit_linear_rate():
    # f = 0, g = 0, rho = 1: every mode decays like exp(-t/2)
    cfg = ModelConfig(n_modes=6, g_modes=(0.0,) * 6, rho=RhoProfile("constant", (1.0,)),
                      nonlinearity=NonlinearitySpec.named("zero"))
    ens = sample_ball(16, 5.0, -20.0, cfg, seed=0)
    fit = decay_fit(ens, -20.0, np.linspace(-20.0, 0.0, 81), cfg)
    assert abs(fit.kappa - 0.5) <= 0.3 * 0.5
    assert fit.R_absorb <= 0.05 and not fit.failed


def test_decay_fit_of_origin_ensemble():
    cfg = ModelConfig(n_modes=6, g_modes=(0.0,) * 6)
    ens = sample_ball(4, 0.0, -5.0, cfg, seed=0)
    fit = decay_fit(ens, -5.0, np.linspace(-5.0, 0.0, 11), cfg)
    assert fit.R_absorb == 0.0 and fit.C == 0.0
    with pytest.raises(ValueError):
        decay_fit(ens, -4.0, np.linspace(-4.0, 0.0, 11), cfg)
    with pytest.raises(ValueError):
        decay_fit(ens, -5.0, [-5.0, 0.0], cfg)


def test_envelope_and_growth_fits():
    s = np.linspace(0, 10, 50)
    C, k, R, q = fit_exponential_envelope(s, 3.0 * np.exp(-0.7 * s) + 0.4)
    assert (C, k, R) == pytest.approx((3.0, 0.7, 0.4), rel=1e-6)
    assert q > 0.999999
    Q = fit_lipschitz_growth(np.array([2.0, 5.0]), np.array([1.0, 2.0]))
    assert max(2.0 - Q * math.exp(Q), 5.0 - Q * math.exp(2 * Q)) == pytest.approx(0, abs=1e-9)


def test_lipschitz_in_eps_validation(cfg):
    z = ModalState.zeros(cfg.n_modes, -1.0)
    with pytest.raises(ValueError):
        lipschitz_in_eps(z, -1.0, 0.0, 0.5, 0.5, cfg)
    with pytest.raises(ValueError):
        lipschitz_in_eps(z, -1.0, 0.0, 0.05, 0.5, cfg)
    assert lipschitz_in_eps(z, -1.0, 0.0, 0.5, 0.6, cfg) > 0

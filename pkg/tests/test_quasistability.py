import dataclasses
import math

import numpy as np
import pytest

from pullback_lab.model import ModelConfig, NonlinearitySpec
from pullback_lab.process import sample_ball
from pullback_lab.quasistability import (CoveringBudgetError, QuasiStabilityError,
                                         QuasiStabilityFit, attraction_transfer,
                                         build_exponential_attractor, dimension_bound,
                                         dimension_bound_value, estimate_quasi_stability,
                                         gamma_distance, grid_index, holder_continuity_fit,
                                         packing_estimate, shared_level_count,
                                         transport_section)
from pullback_lab.spaces import RhoProfile, box_counting_dim, dyadic_radii, hausdorff_semidist


@pytest.fixture(scope="module")
def fit12():
    cfg = ModelConfig(n_modes=12)
    ball = sample_ball(32, 1.0, -2.0, cfg, 0)
    return cfg, estimate_quasi_stability(ball, 0.0, 2.0, 40, cfg)


@pytest.fixture(scope="module")
def build12(fit12):
    cfg, fit = fit12
    return build_exponential_attractor([-1, 0], fit, 1.0, cfg, sample_size=16, k_cap=4)


def test_linear_fit_recovers_damping_rate():
    cfg = ModelConfig(n_modes=8, g_modes=(0.0,) * 8, rho=RhoProfile("constant", (1.0,)),
                      nonlinearity=NonlinearitySpec.named("zero"))
    etas = []
    for T in (2.0, 4.0):
        fit = estimate_quasi_stability(sample_ball(32, 1.0, -T, cfg, 0), 0.0, T, 40, cfg)
        # every mode of u'' + u' + k^2 u = 0 decays like exp(-t/2)
        assert abs(fit.kappa - 0.5) <= 0.15 * 0.5
        assert fit.violations == 0
        etas.append(fit.eta)
    assert etas[1] < etas[0] < 0.5


def test_fit_envelope_holds_on_every_pair(fit12):
    _, fit = fit12
    assert fit.valid and fit.violations == 0
    assert np.all(fit.contraction <= fit.eta + fit.seminorm_scale * fit.seminorm_ratio + 1e-9)
    assert fit.L1 >= 2.0 and fit.L_semi > 0


def test_fit_input_validation(small_cfg):
    ball = sample_ball(8, 1.0, -2.0, small_cfg, 0)
    with pytest.raises(ValueError, match="identity"):
        estimate_quasi_stability(ball, -2.0, 0.0, 10, small_cfg)
    with pytest.raises(ValueError, match="t - T"):
        estimate_quasi_stability(ball, 0.0, 3.0, 10, small_cfg)
    with pytest.raises(ValueError):
        estimate_quasi_stability(ball, 1.0, 3.0, 10, small_cfg)
    with pytest.raises(QuasiStabilityError):
        estimate_quasi_stability(sample_ball(1, 1.0, -2.0, small_cfg, 0), 0.0, 2.0, 10, small_cfg)
    with pytest.raises(ValueError):
        QuasiStabilityFit(T=0.0, eta=0.1, L_semi=1.0, seminorm_scale=1.0, kappa=1.0,
                          sample_count=1)


def test_dimension_bound_formula(fit12):
    cfg, fit = fit12
    assert dimension_bound_value(0.125, 4) == pytest.approx(1.0)
    assert dimension_bound_value(0.25, 1) == 0.0
    with pytest.raises(ValueError):
        dimension_bound_value(0.5, 3)
    with pytest.raises(Exception):
        dimension_bound_value(0.2, float("inf"))
    pk = packing_estimate(fit, cfg, n_samples=400)
    assert pk.m >= 1 and pk.subspace_dim <= 3
    assert dimension_bound(fit, pk) == pytest.approx(math.log(pk.m) / math.log(1 / (2 * fit.eta)))
    assert dimension_bound(fit, 1) == 0.0


def test_sections_cover_and_attract(build12):
    sec = build12.section(0)
    assert all(sec.cover_valid.values())
    d = [sec.attraction_defects[k] for k in sorted(sec.attraction_defects)]
    assert all(b < a for a, b in zip(d, d[1:]))
    for k, r in sec.radii.items():
        assert r == pytest.approx(2.0 * (2.0 * build12.eta) ** k)
    # E_k(n) contains the level-(k-1) set carried forward from n-1
    s_prev = build12.section(-1)
    for k in range(1, sec.k_max + 1):
        assert set(s_prev.E_sets[k - 1]) <= set(sec.E_sets[k])
    assert sec.semi_invariance_defect <= sec.resolution


def test_covering_budget_violation_is_reported(fit12):
    cfg, fit = fit12
    # a tiny eta shrinks the covering radius faster than the sample can follow
    sharp = dataclasses.replace(fit, eta=0.01)
    with pytest.raises(CoveringBudgetError):
        build_exponential_attractor([0], sharp, 1.0, cfg, sample_size=16, k_cap=4, packing_m=2)
    with pytest.raises(ValueError):
        build_exponential_attractor([0], dataclasses.replace(fit, eta=0.6), 1.0, cfg)


def test_grid_index():
    assert grid_index(-0.1, 2.0) == -1
    assert grid_index(-4.0, 2.0) == -2
    assert grid_index(3.0, 2.0) == 0
    assert grid_index(7.0, 2.0, t0=6.5) == 3


def test_transport(build12, fit12):
    cfg, fit = fit12
    sec = build12.section(-1)
    moved = transport_section(sec, -1.0, cfg, T=fit.T)
    assert moved.time == -1.0 and len(moved) == len(sec.assembled)
    same = transport_section(sec, -2.0, cfg)
    assert hausdorff_semidist(same, sec.assembled) == 0.0
    with pytest.raises(ValueError):
        transport_section(sec, 0.5, cfg, T=fit.T)
    with pytest.raises(ValueError):
        transport_section(sec, -3.0, cfg)


def test_transport_does_not_raise_box_dimension(build12, fit12):
    cfg, fit = fit12
    sec = build12.section(-1)
    moved = transport_section(sec, -0.5, cfg, T=fit.T)
    d0 = box_counting_dim(sec.assembled, dyadic_radii(sec.assembled)).estimate
    d1 = box_counting_dim(moved, dyadic_radii(moved)).estimate
    assert d1 <= d0 + 0.3


def test_attraction_transfer_rate(build12):
    tr = attraction_transfer(build12, 0, 1.0, [1.0, 2.0, 3.0, 4.0], sample_size=8)
    assert tr.beta > 0
    assert np.all(np.diff(tr.distances) < 0)
    with pytest.raises(ValueError):
        attraction_transfer(build12, 0, 1.0, [0.0, 1.0])


def test_gamma_distance_is_nearly_symmetric(small_cfg):
    a = gamma_distance(0.8, 0.9, small_cfg, sample_size=6).value
    b = gamma_distance(0.9, 0.8, small_cfg, sample_size=6).value
    assert abs(a - b) <= 0.1 * (a + b) / 2
    assert gamma_distance(0.8, 0.8, small_cfg).value == 0.0
    with pytest.raises(ValueError):
        gamma_distance(0.05, 0.8, small_cfg)


def test_shared_level_count():
    assert shared_level_count(0.0, 2.0, 0.2) == 10 ** 6
    assert shared_level_count(1.0, 2.0, 0.2) == -1
    # L1^k Gamma <= (2 eta)^k  <=>  k <= ln(1/Gamma) / ln(L1 / (2 eta))
    g, L1, eta = 0.01, 2.0, 0.2
    k = shared_level_count(g, L1, eta)
    assert L1 ** k * g <= (2 * eta) ** k < L1 ** (k + 1) * g / (2 * eta)


def test_holder_fit_on_synthetic_power_law():
    eps0 = 0.5
    grid = [0.5, 0.45, 0.4, 0.3, 0.6, 0.7]
    dist = [2.0 * abs(e - eps0) ** 0.7 for e in grid]
    fit = holder_continuity_fit(grid, eps0, dist, [0.0, 0.1, 0.2, 0.5, 0.1, 2.0])
    assert fit.gamma == pytest.approx(0.7) and fit.C_fit == pytest.approx(2.0)
    assert fit.quality == pytest.approx(1.0)
    # eps0 and the Gamma >= 1 point are excluded from the fit
    assert fit.delta_validity == pytest.approx((0.05, 0.2))
    assert fit.predict(0.1) == pytest.approx(2.0 * 0.1 ** 0.7)


def test_holder_fit_clamps_slope_and_needs_two_points():
    grid = [1.0, 0.9, 0.8]
    steep = holder_continuity_fit(grid, 1.0, [0.0, 0.01, 0.04], [0.0, 0.1, 0.1])
    assert steep.slope == pytest.approx(2.0) and steep.gamma == 1.0
    with pytest.raises(ValueError):
        holder_continuity_fit(grid, 1.0, [0.0, 0.01, 0.04], [0.0, 0.1, 1.5])
    with pytest.raises(ValueError):
        holder_continuity_fit([1.0, 0.9], 1.0, {1.0: 0.0, 0.9: 0.1}, {1.0: 0.0, 0.9: 0.1})

import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pullback_lab.model import ModalState
from pullback_lab.spaces import (PhaseMetric, PointCloud, RhoProfile, box_counting_dim, distance,
                                 dyadic_radii, greedy_net, greedy_net_indices, hausdorff_semidist,
                                 is_cover, norm_sq, symmetric_hausdorff)

LAM2 = np.array([1.0, 4.0])


def metric2(eps=1.0, sigma=0.0):
    return PhaseMetric(eps, sigma, RhoProfile(), LAM2)


def brute_semidist(a: PointCloud, b: PointCloud) -> float:
    best = 0.0
    for x in a.states:
        best = max(best, min(distance(x, y, a.time, a.metric) for y in b.states))
    return best


def min_cover_size(points: np.ndarray, r: float) -> int:
    """Exhaustive minimum number of sample centres covering all points at radius r."""
    n = len(points)
    D = np.linalg.norm(points[:, None] - points[None], axis=-1)
    for k in range(1, n + 1):
        for centres in itertools.combinations(range(n), k):
            if np.all(D[:, centres].min(axis=1) <= r):
                return k
    return n


cloud_arrays = arrays(np.float64, st.tuples(st.integers(1, 20), st.just(2)),
                      elements=st.floats(-5, 5, allow_nan=False, allow_infinity=False))


def cloud_from(u, v=None, t=0.0, metric=None):
    v = np.zeros_like(u) if v is None else v
    return PointCloud(t, u, v, metric or metric2())


# rho and metric -----------------------------------------------------------------

def test_rho_profiles_decrease_and_are_bounded():
    rep = RhoProfile("logistic").check()
    assert rep["decreasing"] and rep["bounded"] and rep["positive"] and rep["tail_vanishes"]
    # arctan decays only like 1/t
    rep = RhoProfile("arctan").check()
    assert rep["decreasing"] and rep["bounded"] and rep["positive"] and not rep["tail_vanishes"]
    assert RhoProfile("arctan").check(tail_tol=1e-2)["tail_vanishes"]
    rep = RhoProfile("constant", (1.0,)).check()
    assert not rep["tail_vanishes"]
    assert RhoProfile()(0.0) == pytest.approx(0.5)
    assert RhoProfile()(-800.0) == pytest.approx(1.0)
    assert RhoProfile()(800.0) == pytest.approx(0.0)


def test_rho_first_below_locates_crossing():
    r = RhoProfile()
    t = r.first_below(1e-6, -10.0, 40.0)
    assert r(t) < 1e-6 <= r(t - 1e-9)
    assert r.first_below(1e-6, -10.0, 0.0) is None


def test_rho_rejects_unknown_kind():
    with pytest.raises(ValueError, match="unknown rho"):
        RhoProfile("cosine")


def test_metric_rejects_bad_sigma_and_eps():
    with pytest.raises(ValueError):
        PhaseMetric(1.0, 0.5, RhoProfile(), LAM2)
    with pytest.raises(ValueError):
        PhaseMetric(0.0, 0.0, RhoProfile(), LAM2)


def test_norm_of_single_mode_state():
    # u = sin x, v = 0 -> ||u||_1^2 = lambda_1 * 1 in the modal convention
    m = PhaseMetric(1.0, 0.0, RhoProfile(), np.array([1.0, 4.0, 9.0]))
    z = ModalState(np.array([1.0, 0, 0]), np.zeros(3), 0.0)
    assert norm_sq(z, 0.0, m) == 1.0
    z = ModalState(np.zeros(3), np.array([0, 2.0, 0]), 0.0)
    assert norm_sq(z, 0.0, m) == pytest.approx(0.5 * 4.0)
    assert norm_sq(z, 0.0, m.with_sigma(1.0)) == pytest.approx(0.5 * 4.0 * 4.0)


def test_norm_sq_rejects_nonfinite_time_and_mode_mismatch():
    m = metric2()
    with pytest.raises(ValueError):
        norm_sq(ModalState(np.zeros(2), np.zeros(2)), float("nan"), m)
    with pytest.raises(ValueError, match="mode count"):
        norm_sq(ModalState(np.zeros(3), np.zeros(3)), 0.0, m)


@given(arrays(np.float64, 4, elements=st.floats(-1e3, 1e3)), st.floats(-30, 30),
       st.floats(0.01, 1.0))
def test_eps_norm_sandwich(x, t, eps):
    u, v = x[:2], x[2:]
    h = metric2(1.0).norm_sq_arrays(u, v, t)
    he = metric2(eps).norm_sq_arrays(u, v, t)
    assert eps * h <= he * (1 + 1e-12) + 1e-300
    assert he <= h * (1 + 1e-12) + 1e-300


# Hausdorff --------------------------------------------------------------------

@given(cloud_arrays, cloud_arrays)
def test_semidist_matches_brute_force(a, b):
    A, B = cloud_from(a), cloud_from(b)
    assert hausdorff_semidist(A, B) == pytest.approx(brute_semidist(A, B), rel=1e-12, abs=1e-12)


@given(cloud_arrays, cloud_arrays, cloud_arrays)
def test_symmetric_hausdorff_is_a_metric_on_clouds(a, b, c):
    A, B, C = cloud_from(a), cloud_from(b), cloud_from(c)
    assert symmetric_hausdorff(A, A) == 0.0
    assert symmetric_hausdorff(A, B) == symmetric_hausdorff(B, A)
    assert symmetric_hausdorff(A, C) <= symmetric_hausdorff(A, B) + symmetric_hausdorff(B, C) \
        + 1e-9


@given(cloud_arrays)
def test_subset_has_zero_semidistance(a):
    A = cloud_from(a)
    S = A.subset(np.arange(0, len(A), 2))
    assert hausdorff_semidist(S, A) == 0.0


def test_semidist_hand_example():
    A = cloud_from(np.array([[0.0, 0.0]]))
    B = cloud_from(np.array([[3.0, 0.0], [0.0, 2.0]]))
    # second coordinate carries weight lambda_2 = 4, so (0, 2) sits at distance 4
    assert hausdorff_semidist(A, B) == pytest.approx(3.0)
    assert hausdorff_semidist(B, A) == pytest.approx(4.0)


def test_hausdorff_rejects_mismatched_clouds():
    A = cloud_from(np.ones((2, 2)))
    with pytest.raises(ValueError, match="time-stamp"):
        hausdorff_semidist(A, cloud_from(np.ones((2, 2)), t=1.0))
    with pytest.raises(ValueError, match="different metrics"):
        hausdorff_semidist(A, cloud_from(np.ones((2, 2)), metric=metric2(0.5)))
    with pytest.raises(ValueError):
        PointCloud(0.0, np.ones((2, 3)), np.ones((2, 3)), metric2())


# nets ---------------------------------------------------------------------------

@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.just(2)),
              elements=st.floats(-3, 3, allow_nan=False)),
       st.floats(0.2, 4.0))
def test_greedy_net_against_exhaustive_minimal_cover(a, r):
    A = cloud_from(a)
    pts = A.embedded()
    idx = greedy_net_indices(A, r)
    assert is_cover(A, A.subset(idx), r)
    # a valid cover can't beat the minimum; its centres are r-separated, so it
    # can't exceed the minimum cover at radius r/2
    assert min_cover_size(pts, r) <= len(idx) <= min_cover_size(pts, r / 2)


@given(cloud_arrays, st.floats(0.1, 5.0))
def test_greedy_net_centres_are_separated(a, r):
    A = cloud_from(a)
    net = greedy_net(A, r)
    e = net.embedded()
    if len(e) > 1:
        d = np.linalg.norm(e[:, None] - e[None], axis=-1)
        assert d[np.triu_indices(len(e), 1)].min() > r


def test_center_start_picks_middle_of_segment():
    A = cloud_from(np.array([[0.0, 0], [1.0, 0], [2.0, 0], [3.0, 0], [4.0, 0]]))
    idx = greedy_net_indices(A, 2.0, start="center")
    assert list(idx) == [2]
    assert len(greedy_net_indices(A, 2.0)) == 2
    with pytest.raises(ValueError):
        greedy_net_indices(A, 0.0)
    with pytest.raises(ValueError):
        greedy_net_indices(A, 1.0, start="random")


# box counting -------------------------------------------------------------------

def test_box_counting_segment_is_one_dimensional():
    s = np.linspace(0, 1, 2000)
    A = cloud_from(np.column_stack([s, 0 * s]))
    est = box_counting_dim(A, [0.2, 0.1, 0.05, 0.02, 0.01])
    assert abs(est.estimate - 1.0) <= 0.25
    assert est.fit_quality > 0.95


def test_box_counting_square_is_two_dimensional():
    g = np.linspace(0, 1, 60)
    X, Y = np.meshgrid(g, g)
    # the second modal weight is lambda_2 = 4, so halve it to embed a unit square
    A = cloud_from(np.column_stack([X.ravel(), Y.ravel() / 2]))
    est = box_counting_dim(A, [0.3, 0.15, 0.075, 0.03])
    assert abs(est.estimate - 2.0) <= 0.4


def test_box_counting_random_segment_sample():
    s = np.random.default_rng(7).random(1000)
    A = cloud_from(np.column_stack([s, 0 * s]))
    est = box_counting_dim(A, 0.5 ** np.arange(0, 11))
    assert 0.75 <= est.estimate <= 1.25


def test_box_counting_32_grid_on_modal_plane():
    g = np.linspace(0, 1, 32)
    X, Y = np.meshgrid(g, g)
    A = cloud_from(np.column_stack([X.ravel(), Y.ravel() / 2]))
    # radius 1 sits below the diameter sqrt(2) but already saturates the count
    # at 2, so the ladder starts one dyadic level lower
    est = box_counting_dim(A, 0.5 ** np.arange(1, 6))
    assert 1.6 <= est.estimate <= 2.4


@given(st.integers(0, 2**32 - 1), st.integers(1, 50))
def test_box_counting_ignores_duplicates(seed, n_dup):
    rng = np.random.default_rng(seed)
    pts = rng.random((60, 2))
    extra = pts[rng.integers(0, 60, size=n_dup)]
    radii = [0.5, 0.25, 0.1, 0.05]
    a = box_counting_dim(cloud_from(pts), radii)
    b = box_counting_dim(cloud_from(np.vstack([pts, extra])), radii)
    assert a.estimate == b.estimate and a.fit_quality == b.fit_quality


def test_box_counting_degenerate_and_bad_radii():
    A = cloud_from(np.zeros((5, 2)))
    est = box_counting_dim(A, [1.0, 0.1, 0.01])
    assert est.degenerate and est.estimate == 0.0
    B = cloud_from(np.random.default_rng(0).random((30, 2)))
    with pytest.raises(ValueError):
        box_counting_dim(B, [0.5, 0.4])
    with pytest.raises(ValueError, match="decade"):
        box_counting_dim(B, [0.5, 0.4, 0.3])
    radii = dyadic_radii(B)
    assert np.all(np.diff(radii) < 0) and radii[0] / radii[-1] >= 10


def test_point_cloud_helpers():
    A = cloud_from(np.array([[0.0, 0.0], [3.0, 0.0]]))
    assert A.diameter() == pytest.approx(3.0)
    assert len(A.union(A)) == 4
    assert np.allclose(A.norms(), [0.0, 3.0])
    states = A.states
    B = PointCloud.from_states(states, A.metric)
    assert np.array_equal(B.u, A.u)
    with pytest.raises(ValueError):
        PointCloud.from_states([], A.metric)
    assert math.isclose(distance(states[0], states[1], 0.0, A.metric), 3.0)

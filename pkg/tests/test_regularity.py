import json
import math
import time

import numpy as np
import pytest

from catproj.model_space import euclidean, sphere
from catproj.regularity import (
    IntrinsicMetricEstimate,
    Verdict,
    angle_at_intersection,
    check_finite_extrinsic_curvature,
    check_separable_intersection,
    check_super_regularity,
    check_two_convexity_ball,
    check_uag,
    chord_ratio,
    prox_regularity_cross_check,
    refute_extrinsic_curvature_by_bisection,
    refute_transversality,
    replay,
)
from catproj.sets import (
    AffineSubspace,
    Box,
    ConstraintSet,
    EuclideanBall,
    EuclideanSphere,
    GreatSubsphere,
    Halfspace,
    PointCloud,
    SmallSphere,
    TentGraph,
    circle_cloud,
    cloud_from_curve,
    power_graph,
    power_graph_map,
    tent_peak,
)

S2 = sphere(2)
E2 = euclidean(2)
ORIGIN = E2.point([0.0, 0.0])
A_AXIS = np.array([1.0, 0.0, 0.0])
B_AXIS = np.array([0.5, math.sqrt(3) / 2, 0.0])
Z_SPHERE = S2.point([0.5, -0.5 / math.sqrt(3), math.sqrt(2 / 3)])


def line(theta):
    return AffineSubspace(E2, np.zeros(2), np.array([[math.cos(theta), math.sin(theta)]]))


def segment_cloud(n=201):
    return PointCloud(E2, np.column_stack([np.linspace(-1, 1, n), np.zeros(n)]))


def circle_ratio_oracle(s):
    """(s - 2 sin(s/2)) / (2 sin(s/2))^3 for an arc of angle s on the unit circle."""
    c = 2 * math.sin(s / 2)
    return (s - c) / c ** 3


# -------------------------------------------------- extrinsic curvature
def test_circle_oracle_limit():
    assert circle_ratio_oracle(1e-3) == pytest.approx(1 / 24, rel=1e-6)


def test_circle_curvature_ratio():
    rep = check_finite_extrinsic_curvature(circle_cloud(2513), E2.point([1.0, 0.0]), 0.05,
                                           0.1, 0.01)
    assert rep.certified
    assert rep.parameters["empirical_sigma"] == pytest.approx(1 / 24, rel=0.05)


def test_segment_has_zero_curvature():
    rep = check_finite_extrinsic_curvature(segment_cloud(), ORIGIN, 1e-9, 0.5, 0.02)
    assert rep.certified
    assert rep.parameters["empirical_sigma"] < 1e-9


def test_x32_cloud_refuted_and_replayed():
    F, _ = power_graph_map(1.5)
    cloud = cloud_from_curve(F, np.linspace(-0.1, 0.1, 2001))
    rep = check_finite_extrinsic_curvature(cloud, ORIGIN, 10.0, 0.05, 0.002)
    assert rep.refuted
    assert replay(rep)


def test_disconnected_graph_is_inconclusive():
    rep = check_finite_extrinsic_curvature(circle_cloud(16), E2.point([1.0, 0.0]), 1.0,
                                           1.5, 0.01)
    assert rep.verdict is Verdict.INCONCLUSIVE


def test_chord_ratio_on_circle():
    r, _ = chord_ratio(lambda t: np.array([math.cos(t), math.sin(t)]), -0.1, 0.1, 2001)
    assert r == pytest.approx(circle_ratio_oracle(0.2), rel=1e-3)


@pytest.mark.parametrize("sigma", [1.0, 10.0, 100.0])
def test_x32_bisection_refutes(sigma):
    F, _ = power_graph_map(1.5)
    t0 = time.perf_counter()
    rep = refute_extrinsic_curvature_by_bisection(F, sigma)
    assert time.perf_counter() - t0 < 1.0
    assert rep.refuted and rep.counterexample["ratio"] > sigma
    assert replay(rep)


def test_bisection_inconclusive_for_smooth_curve():
    rep = refute_extrinsic_curvature_by_bisection(lambda t: np.array([t, t * t]), 10.0,
                                                  scale_hi=0.5)
    assert rep.verdict is Verdict.INCONCLUSIVE


# ---------------------------------------------------------- 2-convexity
def test_two_convexity_examples():
    arc = circle_cloud(2513)
    assert check_two_convexity_ball(arc, E2.point([1.0, 0.0]), 1 / 20, 0.05, 0.01).certified
    assert check_two_convexity_ball(segment_cloud(), ORIGIN, 1e-9, 0.5, 0.02).certified
    F, _ = power_graph_map(1.5)
    cloud = cloud_from_curve(F, np.linspace(-0.05, 0.05, 2001))
    rep = check_two_convexity_ball(cloud, ORIGIN, 10.0, 0.01, 0.001)
    assert rep.refuted and replay(rep)


def test_intrinsic_metric_properties():
    rng = np.random.default_rng(0)
    th = np.sort(rng.uniform(0, 2 * math.pi, 300))
    cloud = PointCloud(E2, np.column_stack([np.cos(th), np.sin(th)]))
    coarse = IntrinsicMetricEstimate(cloud, 0.1).distances(np.arange(300))
    fine = IntrinsicMetricEstimate(cloud, 0.3).distances(np.arange(300))
    d = np.linalg.norm(cloud.points[:, None] - cloud.points[None], axis=2)
    ok = np.isfinite(coarse)
    assert np.all(coarse[ok] >= d[ok] - 1e-12)
    np.testing.assert_allclose(coarse, coarse.T)
    # more edges never lengthen a shortest path
    assert np.all(fine[ok] <= coarse[ok] + 1e-12)
    i, j, k = rng.integers(0, 300, (3, 200))
    good = ok[i, j] & ok[j, k] & ok[i, k]
    assert np.all(coarse[i, k][good] <= coarse[i, j][good] + coarse[j, k][good] + 1e-12)


# ------------------------------------------------------------------ UAG
@pytest.mark.parametrize("n", [3, 5])
def test_tent_uag_certified(n):
    rep = check_uag(TentGraph(), ORIGIN, 2.0 ** -n + 1e-6, 2.0 ** -n, samples=200)
    assert rep.certified
    assert rep.parameters["worst_ratio"] <= 2.0 ** -n


def test_x32_uag_certified():
    eps = 0.1
    rep = check_uag(power_graph(1.5, -1.0, 1.0), ORIGIN, eps, (eps / 12) ** 2, samples=50)
    assert rep.certified


def test_convex_ball_uag_ratio_zero():
    rep = check_uag(EuclideanBall([0.0, 0.0], 1.0), ORIGIN, 1e-6, 0.5, samples=100)
    assert rep.certified and rep.parameters["worst_ratio"] == 0.0


def test_small_sphere_uag():
    A = SmallSphere(S2, A_AXIS, 0.5)
    z = S2.point([0.5, math.sqrt(0.75), 0.0])
    rep = check_uag(A, z, 0.1, 0.05, samples=100)
    assert rep.certified


def test_uag_without_generator_is_inconclusive():
    rep = check_uag(EuclideanSphere(E2, np.zeros(2), 1.0), E2.point([1.0, 0.0]), 0.1, 0.1)
    assert rep.verdict is Verdict.INCONCLUSIVE


def test_uag_point_cloud():
    # on the unit circle the arc deviates from the chord at rate about d / 2 <= R
    z = E2.point([1.0, 0.0])
    rep = check_uag(circle_cloud(2000), z, 0.15, 0.1, samples=50, h=0.01)
    assert rep.certified
    assert rep.parameters["worst_ratio"] <= 0.1 + 0.01


def test_uag_mfcq_witness_failure_is_inconclusive():
    # direction that points out of the set: the bulge leaves it
    G = ConstraintSet(E2, [lambda x: x[0]], Box(E2, -np.ones(2), np.ones(2)),
                      mfcq_direction=np.array([1.0, 0.0]))
    pairs = [(np.array([0.0, -0.1]), np.array([0.0, 0.1]), None, None)]
    rep = check_uag(G, ORIGIN, 0.2, 0.5, pairs=pairs)
    assert rep.verdict is Verdict.INCONCLUSIVE
    assert rep.samples["witness_failures"] == 1


# ------------------------------------------------------ super-regularity
def test_small_sphere_super_regular():
    A = SmallSphere(S2, A_AXIS, 0.5)
    eps = 0.3
    r = math.acos(math.cos(eps) ** 2) / 2
    rep = check_super_regularity(A, Z_SPHERE, eps, r, samples=500, partners=256)
    assert rep.certified


@pytest.mark.parametrize("n", [3, 4])
def test_tent_super_regularity_refuted(n):
    z = E2.point(tent_peak(n))
    eps = math.atan(2.0 ** -(n + 1))
    rep = check_super_regularity(TentGraph(), z, eps, 2.0 ** -(n + 1), samples=2000)
    assert rep.refuted
    assert rep.counterexample["angle"] < math.pi / 2 - eps
    assert replay(rep, TentGraph())


def test_halfspace_super_regular():
    H = Halfspace(E2, np.array([0.0, 1.0]), 0.0)
    rep = check_super_regularity(H, ORIGIN, 1e-9, 1.0, samples=300, partners=200)
    assert rep.certified
    assert rep.margin >= -1e-9


def test_report_json_roundtrip():
    z = E2.point(tent_peak(3))
    rep = check_super_regularity(TentGraph(), z, math.atan(2.0 ** -4), 2.0 ** -4, samples=500)
    doc = json.loads(rep.to_json())
    assert doc["verdict"] == "RefutedWithCounterexample"
    assert set(doc["counterexample"]) >= {"y", "x", "x_prime", "angle"}


def test_replay_needs_refutation():
    rep = check_super_regularity(Halfspace(E2, np.array([0.0, 1.0]), 0.0), ORIGIN, 0.1, 1.0,
                                 samples=50, partners=50)
    with pytest.raises(ValueError):
        replay(rep)


# ------------------------------------------------- separable intersection
def test_sphere_example_separable():
    A, B = SmallSphere(S2, A_AXIS, 0.5), GreatSubsphere(S2, B_AXIS)
    rep = check_separable_intersection(A, B, Z_SPHERE, 0.2, 0.1, samples=300)
    assert rep.certified


def test_identical_convex_sets_vacuous():
    H = Halfspace(E2, np.array([0.0, 1.0]), 0.0)
    rep = check_separable_intersection(H, H, ORIGIN, 1.0, 1.0, samples=100)
    assert rep.certified and rep.samples["x"] == 0


def test_two_lines_separable_trigonometry():
    # every (x, y, x') triple for two lines at angle theta has angle_y = theta
    theta = 0.4
    A, B = line(0.0), line(theta)
    ok = check_separable_intersection(A, B, ORIGIN, theta / 2, 1.0, samples=200)
    assert ok.certified
    assert ok.margin == pytest.approx(theta / 2, abs=1e-9)
    bad = check_separable_intersection(A, B, ORIGIN, theta + 0.01, 1.0, samples=200)
    assert bad.refuted and replay(bad, A, B)


# ------------------------------------------------------------- angles
def test_angle_at_intersection_lines():
    assert angle_at_intersection(line(0.0), line(math.pi / 2), ORIGIN, 1.0,
                                 samples=200) == pytest.approx(math.pi / 2)
    assert angle_at_intersection(line(0.0), line(math.pi / 6), ORIGIN, 1.0,
                                 samples=200) == pytest.approx(math.pi / 6)


def test_angle_at_intersection_sphere_example():
    A, B = SmallSphere(S2, A_AXIS, 0.5), GreatSubsphere(S2, B_AXIS)
    z = Z_SPHERE.coords
    # tangent-space oracle: the angle between the tangent lines of the circles at z
    ta, tb = np.cross(z, A_AXIS), np.cross(z, B_AXIS)
    phi = math.acos(abs(np.dot(ta, tb)) / np.linalg.norm(ta) / np.linalg.norm(tb))
    sigma = angle_at_intersection(A, B, Z_SPHERE, 0.05, samples=2000)
    assert 0 < sigma <= phi + 1e-9
    assert sigma == pytest.approx(phi, abs=0.05)


def test_angle_at_intersection_empty_class():
    H = Halfspace(E2, np.array([0.0, 1.0]), 0.0)
    assert math.isnan(angle_at_intersection(H, H, ORIGIN, 1.0, samples=50))


# ------------------------------------------------------ transversality
def test_same_line_not_transversal():
    rep = refute_transversality(line(0.0), line(0.0), ORIGIN)
    assert rep.refuted and replay(rep, line(0.0), line(0.0))


def test_crossing_lines_transversal():
    assert refute_transversality(line(0.0), line(1.0), ORIGIN).certified


def test_touching_parabolas_not_transversal():
    box = Box(E2, -np.ones(2), np.ones(2))
    A = ConstraintSet(E2, [lambda x: x[0] ** 2 - x[1]], box)
    B = ConstraintSet(E2, [lambda x: x[1] + x[0] ** 2], box)
    rep = refute_transversality(A, B, ORIGIN, directions=np.array([[0.0, 1.0]]))
    assert rep.refuted
    assert replay(rep, A, B)


# ------------------------------------------------------------ cross check
def test_prox_regularity_cross_check_circle():
    C = EuclideanSphere(E2, np.zeros(2), 1.0)
    out = prox_regularity_cross_check(C, circle_cloud(2513), E2.point([1.0, 0.0]), 0.1,
                                      0.05, 0.01, samples=100)
    assert out["consistent"] and out["prox_regular"]

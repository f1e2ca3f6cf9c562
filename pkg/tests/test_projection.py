import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from catproj.errors import GeometryError, NonUniqueProjectionError, PreconditionError
from catproj.model_space import dist, euclidean, sample_ball, sphere
from catproj.projection import (
    project,
    project_many,
    project_obtuse_check,
    project_point,
    projection_uniqueness_profile,
)
from catproj.sets import (
    AffineSubspace,
    Ball,
    Box,
    ConstraintSet,
    Epigraph,
    EuclideanBall,
    EuclideanSphere,
    GreatSubsphere,
    Halfspace,
    PointCloud,
    SmallSphere,
    TentGraph,
    interval,
    power_graph,
    tent_values,
)

from oracles import brute_small_sphere, brute_tent

S2 = sphere(2)
E1 = euclidean(1)
E2 = euclidean(2)
E1V = np.array([1.0, 0.0, 0.0])


def unit_point(rng):
    v = rng.standard_normal(3)
    return S2.point(v / np.linalg.norm(v))


# ------------------------------------------------------------ closed forms
def test_great_subsphere_example():
    B = GreatSubsphere(S2, E1V)
    th = math.pi / 6
    res = project(B, S2.point([math.cos(th), math.sin(th), 0.0]))
    np.testing.assert_allclose(res.point.coords, [0.0, 1.0, 0.0], atol=1e-15)
    assert res.distance == pytest.approx(math.pi / 3)
    assert not res.multivalued


def test_small_sphere_member_fixed():
    A = SmallSphere(S2, E1V, 0.5)
    y = S2.point([0.5, 0.0, math.sqrt(0.75)])
    res = project(A, y)
    assert res.distance < 1e-15
    np.testing.assert_allclose(res.point.coords, y.coords, atol=1e-15)


def test_small_sphere_matches_brute_force():
    A = SmallSphere(S2, E1V, 0.5)
    y = S2.point([math.cos(0.2), math.sin(0.2), 0.0])
    x, v = brute_small_sphere(E1V, 0.5, y.coords)
    res = project(A, y)
    assert np.linalg.norm(res.point.coords - x) < 1e-6
    assert abs(res.distance - v) < 1e-9
    # meridian through a and y: the answer is (1/2, sqrt(3)/2, 0)
    np.testing.assert_allclose(res.point.coords, [0.5, math.sqrt(3) / 2, 0.0], atol=1e-15)


def test_pole_queries_raise_with_representatives():
    with pytest.raises(NonUniqueProjectionError) as exc:
        project(GreatSubsphere(S2, E1V), S2.point(E1V))
    reps = exc.value.representatives
    assert len(reps) >= 2
    assert all(abs(np.dot(p.coords, E1V)) < 1e-15 for p in reps)
    with pytest.raises(NonUniqueProjectionError):
        project(SmallSphere(S2, E1V, 0.5), S2.point(-E1V))


def test_halfspace_and_balls():
    H = Halfspace(E2, np.array([1.0, 0.0]), 0.0)
    res = project(H, E2.point([1.0, 3.0]))
    np.testing.assert_allclose(res.point.coords, [0.0, 3.0])
    Bl = EuclideanBall([0.0, 0.0], 1.0)
    np.testing.assert_allclose(project_point(Bl, E2.point([3.0, 4.0])).coords, [0.6, 0.8])
    cap = Ball(S2.point([0.0, 0.0, 1.0]), 0.3)
    y = S2.point([0.0, math.sin(1.0), math.cos(1.0)])
    res = project(cap, y)
    assert res.distance == pytest.approx(0.7)


def test_spherical_ball_antipode_is_multivalued():
    cap = Ball(S2.point([0.0, 0.0, 1.0]), 0.3)
    with pytest.raises(NonUniqueProjectionError):
        project(cap, S2.point([0.0, 0.0, -1.0]))


def test_other_closed_forms():
    L = AffineSubspace(E2, np.array([0.0, 0.0]), np.array([[1.0, 1.0]]))
    np.testing.assert_allclose(project_point(L, E2.point([1.0, 0.0])).coords, [0.5, 0.5])
    C = EuclideanSphere(E2, np.zeros(2), 2.0)
    np.testing.assert_allclose(project_point(C, E2.point([0.0, 0.5])).coords, [0.0, 2.0])
    with pytest.raises(NonUniqueProjectionError):
        project(C, E2.point([0.0, 0.0]))
    Bx = Box(E2, np.zeros(2), np.ones(2))
    np.testing.assert_allclose(project_point(Bx, E2.point([2.0, -1.0])).coords, [1.0, 0.0])


def test_space_mismatch():
    with pytest.raises(GeometryError):
        project(GreatSubsphere(S2, E1V), E2.point([0.0, 0.0]))


# ----------------------------------------------------------- tent graph
def test_tent_projection_matches_brute_force():
    T = TentGraph()
    rng = np.random.default_rng(0)
    for y in rng.uniform([-0.05, -0.02], [0.3, 0.05], size=(10, 2)):
        x, v = brute_tent(y, tent_values)
        res = project(T, E2.point(y))
        assert res.distance <= v + 1e-12
        assert abs(res.distance - v) < 1e-6


def _seg_dist(p, a, b):
    a, b = np.asarray(a), np.asarray(b)
    t = np.clip(np.dot(p - a, b - a) / np.dot(b - a, b - a), 0, 1)
    return float(np.linalg.norm(p - (a + t * (b - a))))


def test_tent_tie_is_multivalued():
    # a point above the valley at t = 1/4 equidistant from both adjacent slopes
    from scipy.optimize import brentq
    left = ((3 / 16, 1 / 64), (0.25, 0.0))
    right = ((0.25, 0.0), (3 / 8, 1 / 16))

    def gap(x):
        p = np.array([x, 0.01])
        return _seg_dist(p, *left) - _seg_dist(p, *right)

    x = brentq(gap, 0.2, 0.3, xtol=1e-16)
    res = project(TentGraph(), E2.point([x, 0.01]))
    assert res.multivalued and len(res.nearest) == 2
    assert res.point.coords[0] < 0.25  # lexicographic pick is the left foot


def test_point_cloud_ties():
    C = PointCloud(E2, np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 3.0]]))
    res = project(C, E2.point([0.0, 0.0]))
    assert res.multivalued and len(res.nearest) == 2
    # lexicographic selection
    np.testing.assert_allclose(res.point.coords, [-1.0, 0.0])


# --------------------------------------------------------- generic solver
def test_power_graph_generic_solver():
    G = power_graph(1.5, -1.0, 1.0)
    res = project(G, E2.point([0.3, 0.05]))
    x = res.point.coords
    assert x[1] == pytest.approx(abs(x[0]) ** 1.5, abs=1e-9)
    ts = np.linspace(-1, 1, 2_000_001)
    d = np.hypot(ts - 0.3, np.abs(ts) ** 1.5 - 0.05)
    assert res.distance <= d.min() + 1e-9


def test_generic_solver_reports_multivalued():
    # the parabola y = x^2 seen from (0, 1) has two nearest points
    from catproj.sets import SmoothImage
    Q = SmoothImage(lambda u: np.array([u[0], u[0] ** 2]), interval(-2, 2), E2)
    res = project(Q, E2.point([0.0, 1.0]))
    assert res.multivalued
    xs = sorted(p.coords[0] for p in res.nearest)
    assert xs[0] == pytest.approx(-math.sqrt(0.5), abs=1e-5)
    assert xs[-1] == pytest.approx(math.sqrt(0.5), abs=1e-5)


def test_epigraph_projection():
    E = Epigraph(lambda x: abs(float(x[0])), E1, interval(-2, 2))
    P = E.space
    res = project(E, P.point([2.0, 0.0]))
    assert res.distance == pytest.approx(math.sqrt(2), abs=1e-7)
    np.testing.assert_allclose(res.point.coords, [1.0, 1.0], atol=1e-6)
    # below the kink the vertex is nearest
    assert project(E, P.point([0.0, -1.0])).distance == pytest.approx(1.0, abs=1e-7)
    assert project(E, P.point([0.5, 1.0])).distance == 0.0


def test_constraint_set_projection():
    G = ConstraintSet(E2, [lambda x: x[0] ** 2 + x[1] ** 2 - 1.0],
                      Box(E2, -2 * np.ones(2), 2 * np.ones(2)))
    res = project(G, E2.point([1.5, 0.0]))
    np.testing.assert_allclose(res.point.coords, [1.0, 0.0], atol=1e-6)


def test_project_many_matches_project():
    A = SmallSphere(S2, E1V, 0.3)
    rng = np.random.default_rng(2)
    Y = sample_ball(S2.point([0.0, 1.0, 0.0]), 1.0, 50, rng)
    X, ok = project_many(A, Y)
    assert ok.all()
    for x, y in zip(X, Y):
        np.testing.assert_allclose(x, project_point(A, S2.point(y)).coords, atol=1e-14)


# ------------------------------------------------------------ obtuse check
def test_obtuse_examples():
    H = Halfspace(E2, np.array([1.0, 0.0]), 0.0)
    y = E2.point([1.0, 0.0])
    assert project_obtuse_check(H, y, E2.point([0.0, 5.0])) == pytest.approx(math.pi / 2)
    # w inside the halfspace: angle between (1, 0) and (-1, 5)
    assert project_obtuse_check(H, y, E2.point([-1.0, 5.0])) == pytest.approx(
        math.acos(-1 / math.sqrt(26)))
    Bl = EuclideanBall([0.0, 0.0], 1.0)
    assert project_obtuse_check(Bl, E2.point([2.0, 0.0]), E2.point([0.0, 0.0])) == pytest.approx(
        math.pi)


def test_obtuse_great_subsphere_closed_form():
    # the angle at P(y) between y and w: y sits along the normal b, so the
    # tangent toward y is b and the angle is exactly pi/2 for w on the subsphere
    B = GreatSubsphere(S2, np.array([0.0, 0.0, 1.0]))
    rng = np.random.default_rng(4)
    for _ in range(20):
        y = unit_point(rng)
        if abs(y.coords[2]) < 1e-3 or abs(y.coords[2]) > 0.999:
            continue
        th = rng.uniform(0, 2 * math.pi)
        w = S2.point([math.cos(th), math.sin(th), 0.0])
        if dist(project_point(B, y), w) < 1e-6 or dist(project_point(B, y), w) > 3.0:
            continue
        assert project_obtuse_check(B, y, w) == pytest.approx(math.pi / 2, abs=1e-9)


def test_obtuse_preconditions():
    H = Halfspace(E2, np.array([1.0, 0.0]), 0.0)
    with pytest.raises(PreconditionError):
        project_obtuse_check(H, E2.point([-1.0, 0.0]), E2.point([-1.0, 5.0]))
    with pytest.raises(PreconditionError):
        project_obtuse_check(H, E2.point([1.0, 0.0]), E2.point([1.0, 5.0]))


# ---------------------------------------------------------- uniqueness
def test_uniqueness_profile_examples():
    H = Halfspace(E2, np.array([1.0, 0.0]), 0.0)
    prof = projection_uniqueness_profile(H, E2.point([0.0, 0.0]), [0.5, 5.0], samples=100)
    assert all(p["fraction"] == 0 for p in prof)
    C = EuclideanSphere(E2, np.zeros(2), 1.0)
    near, far = projection_uniqueness_profile(C, E2.point([1.0, 0.0]), [0.5, 1.5], samples=1000)
    assert near["fraction"] == 0.0
    assert far["fraction"] > 0.0


def test_uniqueness_profile_requires_member():
    with pytest.raises(PreconditionError):
        projection_uniqueness_profile(EuclideanSphere(E2, np.zeros(2), 1.0),
                                      E2.point([0.0, 0.0]), [0.1])


# ------------------------------------------------------------ properties
seeds = st.integers(0, 2 ** 31)
CLOSED_FORM = [
    SmallSphere(S2, E1V, 0.5), SmallSphere(S2, np.array([0.0, 0.6, 0.8]), -0.2),
    GreatSubsphere(S2, np.array([0.0, 0.0, 1.0])), Ball(S2.point([0.0, 0.0, 1.0]), 0.7),
    Halfspace(E2, np.array([1.0, 2.0]), 0.5), EuclideanBall([0.3, 0.0], 0.8), TentGraph(),
]


def _query(S, rng):
    if S.space.kind.value == "sphere":
        return unit_point(rng)
    return S.space.point(rng.uniform(-0.5, 0.5, 2))


@settings(max_examples=80, deadline=None)
@given(st.sampled_from(CLOSED_FORM), seeds)
def test_idempotence(S, seed):
    y = _query(S, np.random.default_rng(seed))
    try:
        x = project_point(S, y)
    except NonUniqueProjectionError:
        return
    assert S.contains(x, 1e-9)
    again = project(S, x)
    assert again.distance <= 1e-9
    assert dist(again.point, x) <= 1e-9


CONVEX_SPHERICAL = [Ball(S2.point([0.0, 0.0, 1.0]), 0.4), GreatSubsphere(S2, E1V),
                    Ball(S2.point([0.6, 0.0, 0.8]), 1.0)]


@settings(max_examples=80, deadline=None)
@given(st.sampled_from(CONVEX_SPHERICAL), seeds)
def test_nonexpansive_toward_members(C, seed):
    """d(P_C(x), y) <= d(x, y) for y in C with d(P_C(x), y) <= D/2."""
    rng = np.random.default_rng(seed)
    x = unit_point(rng)
    try:
        px = project_point(C, x)
    except NonUniqueProjectionError:
        return
    if dist(x, px) >= math.pi / 2:
        return
    for y in sample_ball(px, math.pi / 2, 20, rng):
        yp = S2.point(y)
        if not C.contains(yp):
            continue
        if dist(px, yp) <= math.pi / 2:
            assert dist(px, yp) <= dist(x, yp) + 1e-9

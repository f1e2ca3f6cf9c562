import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catproj.altproj import (
    StopReason,
    cauchy_sums_check,
    certificate_constants,
    estimate_linear_rate,
    induction_bounds_check,
    per_step_contraction_check,
    run_alternating_projections,
    small_sphere_eps,
    tail_bound_check,
    trace_from_csv,
    trace_to_csv,
    trace_to_json,
)
from catproj.errors import GeometryError, HypothesisViolation, InsufficientDataError
from catproj.model_space import dist, euclidean, sphere
from catproj.runner import start_point
from catproj.sets import AffineSubspace, EuclideanSphere, GreatSubsphere, SmallSphere

from oracles import certificate_mp

S2 = sphere(2)
E2 = euclidean(2)
A_AXIS = np.array([1.0, 0.0, 0.0])
B_AXIS = np.array([0.5, math.sqrt(3) / 2, 0.0])
Z = S2.point([0.5, -0.5 / math.sqrt(3), math.sqrt(2 / 3)])


def sphere_run(k):
    A, B = SmallSphere(S2, A_AXIS, 0.5), GreatSubsphere(S2, B_AXIS)
    u = np.cross(Z.coords, A_AXIS)
    x0 = start_point(A, {"z": Z, "distance": 10.0 ** -k, "direction": u / np.linalg.norm(u)})
    return A, B, run_alternating_projections(A, B, x0)


# ------------------------------------------------------------ constants
def test_certificate_formula():
    cert = certificate_constants(0.8, 0.05, 0.1, 1.0)
    cp, c = certificate_mp(0.8, 0.05, 0.1, 1.0)
    assert cert.c_prime == pytest.approx(float(cp), rel=1e-14)
    assert cert.c == pytest.approx(float(c), rel=1e-14)
    assert cert.rate == pytest.approx(math.sqrt(cert.c))
    assert cert.start_radius == pytest.approx((1 - cert.c) * 0.1 / 4)


def test_kappa_zero_gives_c_equal_c_prime():
    cert = certificate_constants(1.0, 0.1, 1e6, 0.0)
    assert cert.c == cert.c_prime


@pytest.mark.parametrize("alpha, eps, r, kappa", [
    (0.1, 0.5, 0.1, 1.0),      # c' >= 1
    (0.5, 0.3, 0.1, 1.0),      # cos 0.5 + sin 0.3 > 1 - sin 0.3
    (0.9, 0.05, 1.4, 1.0),     # c' < 1 but the curvature factor pushes c past 1
])
def test_hypothesis_violation(alpha, eps, r, kappa):
    with pytest.raises(HypothesisViolation):
        certificate_constants(alpha, eps, r, kappa)


@pytest.mark.parametrize("args", [
    (0.0, 0.1, 0.1, 1.0), (math.pi / 2, 0.1, 0.1, 1.0), (1.0, 0.0, 0.1, 1.0),
    (1.0, 1.0, 0.1, 1.0), (1.0, 0.1, 0.1, -1.0), (1.0, 0.1, math.pi / 2, 1.0),
    (1.0, 0.1, 0.0, 1.0),
])
def test_certificate_domain_errors(args):
    with pytest.raises(GeometryError):
        certificate_constants(*args)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 1.5), st.floats(0.001, 0.3), st.floats(0.001, 1.5), st.floats(0, 1))
def test_certificate_matches_mpmath(alpha, eps, r, kappa):
    cp, c = certificate_mp(alpha, eps, r, kappa)
    if cp >= 1 or c >= 1:
        with pytest.raises(HypothesisViolation):
            certificate_constants(alpha, eps, r, kappa)
    else:
        cert = certificate_constants(alpha, eps, r, kappa)
        assert abs(cert.c - float(c)) <= 1e-12


def test_small_sphere_eps_inverts_radius():
    for eps in (0.05, 0.2, 0.6):
        r = math.acos(math.cos(eps) ** 2) / 2
        assert small_sphere_eps(r) == pytest.approx(eps, rel=1e-10)
    with pytest.raises(GeometryError):
        small_sphere_eps(math.pi / 4)


# ----------------------------------------------------------------- runs
def test_start_point_distance():
    A, _, trace = sphere_run(2)
    assert A.contains(trace.iterates[0])
    assert dist(Z, trace.iterates[0]) == pytest.approx(1e-2, rel=1e-12)


def test_sphere_example_converges_at_cos_theta():
    _, B, trace = sphere_run(1)
    assert trace.stop is StopReason.CONVERGED
    assert B.contains(trace.limit, 1e-9)
    fit = estimate_linear_rate(trace)
    # both tangent lines at z meet at angle arccos(1/sqrt 3): the linear rate is its cosine
    assert fit.rate == pytest.approx(1 / math.sqrt(3), abs=1e-3)
    assert fit.residual < 1e-2


def test_sphere_example_checks_pass():
    alpha = 0.9 * 0.94
    r = 0.1
    cert = certificate_constants(alpha, small_sphere_eps(r), r, 1.0)
    _, _, trace = sphere_run(3)
    D = dist(Z, trace.iterates[0])
    assert D < cert.start_radius
    assert all(s.passed for s in per_step_contraction_check(trace, cert.c, r, Z))
    assert all(row["passed"] for row in induction_bounds_check(trace, cert.c, Z))
    assert all(row["passed"] for row in cauchy_sums_check(trace, cert.c, D))
    assert tail_bound_check(trace, cert, D)["passed"]


def test_start_must_lie_in_a():
    A = AffineSubspace(E2, np.zeros(2), np.array([[1.0, 0.0]]))
    with pytest.raises(GeometryError):
        run_alternating_projections(A, A, E2.point([0.0, 1.0]))


def test_max_iters_on_disjoint_lines():
    A = AffineSubspace(E2, np.zeros(2), np.array([[1.0, 0.0]]))
    B = AffineSubspace(E2, np.array([0.0, 1.0]), np.array([[1.0, 0.0]]))
    trace = run_alternating_projections(A, B, E2.point([0.0, 0.0]), max_iters=7)
    assert trace.stop is StopReason.MAX_ITERS
    assert len(trace.step_dists) == 7


def test_projection_failure_stops_run():
    A = AffineSubspace(E2, np.zeros(2), np.array([[1.0, 0.0]]))
    B = EuclideanSphere(E2, np.zeros(2), 1.0)
    trace = run_alternating_projections(A, B, E2.point([0.0, 0.0]))
    assert trace.stop is StopReason.PROJECTION_FAILURE
    assert trace.failure


def test_lines_step_ratio_is_cos_theta():
    theta = 0.5
    A = AffineSubspace(E2, np.zeros(2), np.array([[1.0, 0.0]]))
    B = AffineSubspace(E2, np.zeros(2), np.array([[math.cos(theta), math.sin(theta)]]))
    trace = run_alternating_projections(A, B, E2.point([1.0, 0.0]))
    ratios = np.array(trace.ratios[:20])
    np.testing.assert_allclose(ratios, math.cos(theta), rtol=1e-10)


# ------------------------------------------------------------- rate fit
def test_rate_fit_geometric_series():
    d = 0.5 ** np.arange(40)
    fit = estimate_linear_rate(d)
    assert fit.rate == pytest.approx(0.5, rel=1e-12)
    assert fit.residual < 1e-12 and fit.converging


def test_rate_fit_constant_series_not_converging():
    fit = estimate_linear_rate(np.full(30, 2.0))
    assert fit.rate == pytest.approx(1.0) and not fit.converging


def test_rate_fit_needs_data():
    with pytest.raises(InsufficientDataError):
        estimate_linear_rate(np.array([1.0, 0.5, 0.25]))


# --------------------------------------------------------------- export
def test_trace_csv_roundtrip():
    _, _, trace = sphere_run(2)
    text = trace_to_csv(trace)
    back = trace_from_csv(text, S2)
    np.testing.assert_array_equal(back.coords(), trace.coords())
    assert back.step_dists == trace.step_dists
    assert text.splitlines()[0] == "n,x0,x1,x2,step_dist,ratio"


def test_trace_json_deterministic():
    _, _, t1 = sphere_run(2)
    _, _, t2 = sphere_run(2)
    assert trace_to_json(t1) == trace_to_json(t2)

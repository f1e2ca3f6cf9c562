"""Metric projection onto closed sets.

Closed forms cover the spherical, Euclidean and tent sets. Everything else
goes through a multistart solver over the set's parameter domain, which
reports every minimizer it finds so multivalued projections stay visible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import singledispatch

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from catproj.errors import GeometryError, NonUniqueProjectionError, PreconditionError, SolverFailure
from catproj.model_space import Kind, Point, angle_at, dist, sample_ball
from catproj.sets import (
    TENT_BREAKPOINTS,
    AffineSubspace,
    Ball,
    Box,
    ConstraintSet,
    Epigraph,
    EuclideanSphere,
    GreatSubsphere,
    Halfspace,
    PointCloud,
    SetDescriptor,
    SmallSphere,
    SmoothImage,
    TentGraph,
    tent_values,
)

VALUE_TOL = 1e-8
SEPARATION = 1e-5
DISCRETE_TIE_TOL = 1e-12
POLE_TOL = 1e-12


@dataclass(frozen=True)
class ProjectionResult:
    nearest: list
    distance: float
    multivalued: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def point(self) -> Point:
        """Deterministic single-point selection: lexicographically smallest coordinates."""
        return min(self.nearest, key=lambda p: tuple(p.coords))


def _single(space, coords, y, method, **diag) -> ProjectionResult:
    x = Point(space.normalize(coords), space)
    return ProjectionResult([x], dist(x, y), False, {"method": method, **diag})


def _check_space(S: SetDescriptor, y: Point):
    if y.space != S.space:
        raise GeometryError(f"query point lives in {y.space}, set in {S.space}")


def project(S: SetDescriptor, y: Point, **opts) -> ProjectionResult:
    """Nearest-point set of S to y; see the per-type implementations."""
    _check_space(S, y)
    return _project(S, y, **opts)


def project_point(S: SetDescriptor, y: Point, **opts) -> Point:
    return project(S, y, **opts).point


@singledispatch
def _project(S, y, **opts):
    raise GeometryError(f"no projection available for {type(S).__name__}")


# ------------------------------------------------------------ closed forms
def _poles_error(what, reps, space):
    return NonUniqueProjectionError(
        f"{what}: every point of the set is nearest",
        [Point(space.normalize(r), space) for r in reps])


def _perp_basis(v):
    """Orthonormal basis of the complement of unit vector v."""
    q, _ = np.linalg.qr(np.column_stack([v, np.eye(v.size)]))
    return q[:, 1:v.size].T


@_project.register
def _(S: GreatSubsphere, y: Point, **opts):
    b = S.b
    w = y.coords - np.dot(b, y.coords) * b
    n = np.linalg.norm(w)
    if n < POLE_TOL:
        reps = [s * e for e in _perp_basis(b) for s in (1.0, -1.0)]
        raise _poles_error("query is a pole of the great subsphere", reps, S.space)
    return _single(S.space, w / n, y, "closed-form")


@_project.register
def _(S: SmallSphere, y: Point, **opts):
    a, h = S.a, S.h
    rho = math.sqrt(1.0 - h * h)
    w = y.coords - np.dot(a, y.coords) * a
    n = np.linalg.norm(w)
    if n < POLE_TOL:
        reps = [rho * s * e + h * a for e in _perp_basis(a) for s in (1.0, -1.0)]
        raise _poles_error("query lies on the axis of the small sphere", reps, S.space)
    return _single(S.space, rho * w / n + h * a, y, "closed-form")


@_project.register
def _(S: Halfspace, y: Point, **opts):
    excess = float(np.dot(S.normal, y.coords)) - S.offset
    return _single(S.space, y.coords - max(excess, 0.0) * S.normal, y, "closed-form")


@_project.register
def _(S: Ball, y: Point, **opts):
    space = S.space
    c = S.center.coords
    d = float(space.dist_coords(c, y.coords))
    if d <= S.radius:
        return ProjectionResult([y], 0.0, False, {"method": "closed-form"})
    if space.kind is Kind.SPHERE and d >= space.diameter - POLE_TOL:
        reps = [space.exp_coords(c, S.radius * e) for e in space.tangent_basis(c)]
        raise _poles_error("query is antipodal to the ball centre", reps, space)
    u = space.log_coords(c, y.coords)
    x = space.exp_coords(c, (S.radius / d) * u)
    return _single(space, x, y, "closed-form")


@_project.register
def _(S: AffineSubspace, y: Point, **opts):
    v = y.coords - S.point
    return _single(S.space, S.point + S.directions.T @ (S.directions @ v), y, "closed-form")


@_project.register
def _(S: EuclideanSphere, y: Point, **opts):
    w = y.coords - S.center
    n = np.linalg.norm(w)
    if n < POLE_TOL:
        reps = [S.center + S.radius * s * e for e in np.eye(w.size) for s in (1.0, -1.0)]
        raise _poles_error("query is the centre of the sphere", reps, S.space)
    return _single(S.space, S.center + S.radius * w / n, y, "closed-form")


@_project.register
def _(S: Box, y: Point, **opts):
    return _single(S.space, np.clip(y.coords, S.lower, S.upper), y, "closed-form")


# -------------------------------------------------------------- discrete sets
def _tie_cluster(cands: np.ndarray, dists: np.ndarray, tol: float, sep: float):
    """Indices of candidates within tol of the best distance, separated by sep."""
    best = float(np.min(dists))
    order = np.argsort(dists, kind="stable")
    keep = []
    for i in order:
        if dists[i] > best + tol:
            break
        if all(np.linalg.norm(cands[i] - cands[j]) >= sep for j in keep):
            keep.append(int(i))
    return best, keep


def _tent_segments():
    pts = TENT_BREAKPOINTS
    verts = np.column_stack([pts, tent_values(pts)])
    return verts[:-1], verts[1:]


_TENT_A, _TENT_B = _tent_segments()
_TENT_D = _TENT_B - _TENT_A
_TENT_LEN2 = np.sum(_TENT_D * _TENT_D, axis=1)


def tent_candidates(y) -> np.ndarray:
    """Nearest point of y on every linear piece of the tent graph."""
    y = np.asarray(y, dtype=float)
    num = np.einsum("ij,ij->i", y - _TENT_A, _TENT_D)
    t = np.clip(np.divide(num, _TENT_LEN2, out=np.zeros_like(num), where=_TENT_LEN2 > 0),
                0.0, 1.0)
    return _TENT_A + t[:, None] * _TENT_D


@_project.register
def _(S: TentGraph, y: Point, **opts):
    cands = tent_candidates(y.coords)
    d = np.linalg.norm(cands - y.coords, axis=1)
    best, keep = _tie_cluster(cands, d, DISCRETE_TIE_TOL, SEPARATION)
    pts = [Point(cands[i], S.space) for i in keep]
    return ProjectionResult(pts, best, len(pts) > 1,
                            {"method": "segment-scan", "segments": len(cands)})


@_project.register
def _(S: PointCloud, y: Point, **opts):
    d = S.space.dist_coords(S.points, y.coords)
    best, keep = _tie_cluster(S.points, d, DISCRETE_TIE_TOL, SEPARATION)
    pts = [Point(S.points[i], S.space) for i in keep]
    return ProjectionResult(pts, best, len(pts) > 1, {"method": "scan", "points": len(S)})


# ---------------------------------------------------------- multistart solver
def _grid(lo, hi, per_dim, max_points):
    d = lo.size
    m = max(2, min(per_dim, int(math.floor(max_points ** (1.0 / d) + 1e-9))))
    axes = [np.linspace(lo[i], hi[i], m) for i in range(d)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    spacing = (hi - lo) / (m - 1)
    return mesh, spacing


def _pick_starts(mesh, vals, spacing, n_starts):
    order = np.argsort(vals, kind="stable")
    scale = np.where(spacing > 0, spacing, 1.0)
    starts = []
    for i in order:
        if not np.isfinite(vals[i]) or len(starts) == n_starts:
            break
        if all(np.max(np.abs(mesh[i] - mesh[j]) / scale) > 1.5 for j in starts):
            starts.append(int(i))
    return starts


def multistart_minimize(obj, lo, hi, *, feasible=None, constraints=(), method="L-BFGS-B",
                        grid=64, max_grid_points=4096, n_starts=8):
    """Grid scan followed by local refinement from the best separated grid points.

    Returns a list of (u, value) pairs, one per refined start, plus diagnostics.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    mesh, spacing = _grid(lo, hi, grid, max_grid_points)
    vals = np.array([obj(u) if feasible is None or feasible(u) else np.inf for u in mesh])
    starts = _pick_starts(mesh, vals, spacing, n_starts)
    out, iters = [], 0
    for i in starts:
        u0 = mesh[i]
        if lo.size == 1 and method != "SLSQP":
            a = max(lo[0], u0[0] - spacing[0])
            b = min(hi[0], u0[0] + spacing[0])
            if b > a:
                res = minimize_scalar(lambda s: obj(np.array([s])), bounds=(a, b),
                                      method="bounded", options={"xatol": 1e-12})
                u, v = np.array([res.x]), float(res.fun)
                iters += int(res.nfev)
            else:
                u, v = u0, float(vals[i])
        else:
            bounds = list(zip(lo, hi))
            if method == "SLSQP":
                res = minimize(obj, u0, method="SLSQP", bounds=bounds, constraints=constraints,
                               options={"ftol": 1e-14, "maxiter": 500})
            elif method == "Powell":
                res = minimize(obj, u0, method="Powell", bounds=bounds,
                               options={"xtol": 1e-12, "ftol": 1e-14, "maxfev": 20000})
            else:
                res = minimize(obj, u0, method="L-BFGS-B", bounds=bounds,
                               options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 2000})
            u, v = np.asarray(res.x, dtype=float), float(res.fun)
            iters += int(getattr(res, "nit", 0))
            if feasible is not None and not feasible(u):
                u, v = u0, float(vals[i])
        if v > vals[i]:
            u, v = u0, float(vals[i])
        out.append((u, v))
    diag = {"grid_points": int(len(mesh)), "restarts": len(starts), "iterations": iters}
    return out, diag


def _collect(space, y, cands, method, diag):
    """Turn (ambient coords, value) candidates into a ProjectionResult."""
    if not cands:
        raise SolverFailure("projection solver found no feasible candidate")
    coords = np.array([c for c, _ in cands])
    vals = np.array([v for _, v in cands])
    best, keep = _tie_cluster(coords, vals, VALUE_TOL, SEPARATION)
    pts = [Point(space.normalize(coords[i]), space) for i in keep]
    achieved = max(abs(float(dist(p, y)) - best) for p in pts)
    diag = {"method": method, **diag, "achieved_tol": achieved}
    return ProjectionResult(pts, float(dist(pts[0], y)), len(pts) > 1, diag)


@_project.register
def _(S: SmoothImage, y: Point, grid: int = 64, n_starts: int = 8, **opts):
    lo, hi = S.param_bounds()
    target = y.coords

    def obj(u):
        return float(np.linalg.norm(S.image(u) - target))

    feasible = None
    constraints = ()
    method = "L-BFGS-B"
    if isinstance(S.domain, Ball):
        c, r = S.domain.center.coords, S.domain.radius
        feasible = lambda u: float(np.linalg.norm(u - c)) <= r  # noqa: E731
        constraints = ({"type": "ineq", "fun": lambda u: r * r - float(np.sum((u - c) ** 2))},)
        method = "SLSQP"
    sols, diag = multistart_minimize(obj, lo, hi, feasible=feasible, constraints=constraints,
                                     method=method, grid=grid, n_starts=n_starts)
    cands = [(S.image(u), v) for u, v in sols]
    res = _collect(S.space, y, cands, "multistart-" + method, diag)
    res.diagnostics["parameters"] = [u.tolist() for u, _ in sols]
    return res


@_project.register
def _(S: Epigraph, y: Point, grid: int = 64, n_starts: int = 8, **opts):
    x0, mu = y.coords[:-1], float(y.coords[-1])
    if S.domain.contains_coords(x0)[0] and mu >= S.value(x0):
        return ProjectionResult([y], 0.0, False, {"method": "member"})

    def lift(u):
        return np.append(u, max(S.value(u), mu))

    def obj(u):
        return float(np.linalg.norm(lift(u) - y.coords))

    sols, diag = multistart_minimize(obj, S.domain.lower, S.domain.upper, method="Powell",
                                     grid=grid, n_starts=n_starts)
    return _collect(S.space, y, [(lift(u), v) for u, v in sols], "multistart-Powell", diag)


@_project.register
def _(S: ConstraintSet, y: Point, grid: int = 64, n_starts: int = 8, **opts):
    if S._contains(y.coords, 0.0):
        return ProjectionResult([y], 0.0, False, {"method": "member"})
    target = y.coords

    def obj(u):
        return float(np.sum((u - target) ** 2))

    def feasible(u):
        return bool(np.all(S.values(u) <= 1e-10))

    cons = [{"type": "ineq", "fun": (lambda u, g=g: -float(g(u)))} for g in S.constraints]
    lo, hi = S.domain.lower, S.domain.upper
    sols, diag = multistart_minimize(obj, lo, hi, feasible=feasible, constraints=cons,
                                     method="SLSQP", grid=grid, n_starts=n_starts)
    cands = [(u, math.sqrt(max(v, 0.0))) for u, v in sols if np.all(S.values(u) <= 1e-9)]
    return _collect(S.space, y, cands, "multistart-SLSQP", diag)


# ------------------------------------------------------------ vectorized forms
def project_many(S: SetDescriptor, Y) -> tuple:
    """Closed-form projection of many query rows; returns (coords, ok-mask).

    Rows whose projection is not unique are dropped from the mask. Types
    without a vectorized closed form fall back to per-row ``project``.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if isinstance(S, (GreatSubsphere, SmallSphere)):
        axis = S.b if isinstance(S, GreatSubsphere) else S.a
        h = 0.0 if isinstance(S, GreatSubsphere) else S.h
        w = Y - (Y @ axis)[:, None] * axis
        n = np.linalg.norm(w, axis=1)
        ok = n >= POLE_TOL
        X = math.sqrt(1 - h * h) * w / np.where(ok, n, 1.0)[:, None] + h * axis
        return X, ok
    if isinstance(S, Halfspace):
        ex = np.maximum(Y @ S.normal - S.offset, 0.0)
        return Y - ex[:, None] * S.normal, np.ones(len(Y), bool)
    if isinstance(S, Box):
        return np.clip(Y, S.lower, S.upper), np.ones(len(Y), bool)
    if isinstance(S, EuclideanSphere):
        w = Y - S.center
        n = np.linalg.norm(w, axis=1)
        ok = n >= POLE_TOL
        return S.center + S.radius * w / np.where(ok, n, 1.0)[:, None], ok
    if isinstance(S, AffineSubspace):
        V = Y - S.point
        return S.point + (V @ S.directions.T) @ S.directions, np.ones(len(Y), bool)
    X = np.empty_like(Y)
    ok = np.zeros(len(Y), bool)
    for i, row in enumerate(Y):
        try:
            res = project(S, Point(row, S.space))
        except (NonUniqueProjectionError, SolverFailure):
            continue
        if not res.multivalued:
            X[i] = res.point.coords
            ok[i] = True
    return X, ok


# ----------------------------------------------------------- derived checks
def project_obtuse_check(S: SetDescriptor, y: Point, w: Point) -> float:
    """Angle at P_S(y) between y and w; at least pi/2 for convex S."""
    if S.contains(y):
        raise PreconditionError("the query point must lie outside the set")
    if not S.contains(w):
        raise PreconditionError("w must be a member of the set")
    x = project(S, y).point
    if x.same_as(w, 1e-15):
        raise PreconditionError("w coincides with the projection of y")
    return angle_at(x, y, w)


def _jump_flag(S, y_coords, space, delta, factor):
    """True when P_S is multivalued at y or jumps by more than factor * delta nearby."""
    y = Point(y_coords, space)
    try:
        base = project(S, y)
    except NonUniqueProjectionError:
        return True
    if base.multivalued:
        return True
    p0 = base.point.coords
    for u in space.tangent_basis(y_coords):
        for s in (1.0, -1.0):
            q = Point(space.exp_coords(y_coords, s * delta * u), space)
            try:
                res = project(S, q)
            except NonUniqueProjectionError:
                return True
            if res.multivalued:
                return True
            if float(space.dist_coords(res.point.coords, p0)) > factor * delta:
                return True
    return False


def projection_uniqueness_profile(S: SetDescriptor, z: Point, radii, samples: int = 1000,
                                  seed: int = 0, jump_factor: float = 4.0,
                                  delta_fraction: float = 0.02) -> list:
    """Per-radius fraction of sampled points of B(z, radius) with a non-unique projection.

    A sample is flagged when the projection is multivalued there, or when
    moving the query by delta = delta_fraction * radius moves the selected
    projection by more than jump_factor * delta (a numerical discontinuity,
    which a single-valued continuous projection cannot produce near z).
    """
    if not S.contains(z):
        raise PreconditionError("z must belong to the set")
    rng = np.random.default_rng(seed)
    out = []
    for radius in radii:
        Y = sample_ball(z, float(radius), samples, rng)
        delta = delta_fraction * float(radius)
        flags = [_jump_flag(S, y, S.space, delta, jump_factor) for y in Y]
        out.append({"radius": float(radius), "fraction": float(np.mean(flags)),
                    "flagged": int(np.sum(flags)), "samples": int(samples)})
    return out

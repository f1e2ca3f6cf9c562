"""Closed-set descriptors and the witness curves used for uniform approximation.

Every descriptor knows its ambient :class:`~catproj.model_space.ModelSpace` and
a membership test. Function-valued data (epigraph functions, constraints,
smooth maps) are plain callables with optional analytic derivatives; missing
derivatives fall back to central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from catproj.errors import GeometryError, WitnessFailure
from catproj.model_space import (
    Geodesic,
    Kind,
    ModelSpace,
    Point,
    euclidean,
    geodesic_between,
    geodesic_from,
    product_with_line,
)

FD_STEP = 1e-6
MEMBER_TOL = 1e-9
WITNESS_SAMPLES = 1024


def central_gradient(fun: Callable, u, step: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian of ``fun`` at u (gradient for scalar fun)."""
    u = np.asarray(u, dtype=float)
    f0 = np.asarray(fun(u), dtype=float)
    jac = np.empty(f0.shape + u.shape)
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = step
        jac[..., i] = (np.asarray(fun(u + e)) - np.asarray(fun(u - e))) / (2 * step)
    return jac


class SetDescriptor:
    """Base class: a closed subset of a model space."""

    space: ModelSpace
    convex = False

    def contains(self, x: Point, tol: float = MEMBER_TOL) -> bool:
        if x.space != self.space:
            raise GeometryError(f"{type(self).__name__} lives in {self.space}, point in {x.space}")
        return bool(self._contains(x.coords, tol))

    def _contains(self, coords, tol):
        raise NotImplementedError

    def contains_coords(self, coords, tol: float = MEMBER_TOL) -> np.ndarray:
        """Vectorized membership over rows of a coordinate array."""
        coords = np.atleast_2d(coords)
        return np.array([bool(self._contains(c, tol)) for c in coords])


# ------------------------------------------------------------ spherical sets
@dataclass(frozen=True, eq=False)
class GreatSubsphere(SetDescriptor):
    """{x in S^n : <x, b> = 0}."""

    space: ModelSpace
    b: np.ndarray
    convex = True

    def __post_init__(self):
        if self.space.kind is not Kind.SPHERE:
            raise GeometryError("great subspheres live on a sphere")
        b = np.asarray(self.b, dtype=float)
        if abs(np.linalg.norm(b) - 1.0) > 1e-12:
            raise GeometryError("normal b must be a unit vector")
        object.__setattr__(self, "b", b)

    def _contains(self, coords, tol):
        return abs(float(np.dot(coords, self.b))) <= tol


@dataclass(frozen=True, eq=False)
class SmallSphere(SetDescriptor):
    """{x in S^n : <x, a> = h} for |h| < 1 (nonconvex for h != 0)."""

    space: ModelSpace
    a: np.ndarray
    h: float

    def __post_init__(self):
        if self.space.kind is not Kind.SPHERE:
            raise GeometryError("small spheres live on a sphere")
        a = np.asarray(self.a, dtype=float)
        if abs(np.linalg.norm(a) - 1.0) > 1e-12:
            raise GeometryError("axis a must be a unit vector")
        if not -1.0 < self.h < 1.0:
            raise GeometryError(f"height h must lie in (-1, 1), got {self.h}")
        object.__setattr__(self, "a", a)

    def _contains(self, coords, tol):
        return abs(float(np.dot(coords, self.a)) - self.h) <= tol


# ------------------------------------------------------------ euclidean sets
def _require_euclidean(space, what):
    if space.kind is not Kind.EUCLIDEAN:
        raise GeometryError(f"{what} is defined in Euclidean space only")


@dataclass(frozen=True, eq=False)
class Halfspace(SetDescriptor):
    """{x : <normal, x> <= offset}; the normal is rescaled to unit length."""

    space: ModelSpace
    normal: np.ndarray
    offset: float
    convex = True

    def __post_init__(self):
        _require_euclidean(self.space, "Halfspace")
        n = np.asarray(self.normal, dtype=float)
        nn = np.linalg.norm(n)
        if nn == 0:
            raise GeometryError("halfspace normal must be nonzero")
        object.__setattr__(self, "normal", n / nn)
        object.__setattr__(self, "offset", float(self.offset) / nn)

    def _contains(self, coords, tol):
        return float(np.dot(self.normal, coords)) - self.offset <= tol


@dataclass(frozen=True, eq=False)
class Ball(SetDescriptor):
    """Closed geodesic ball; on the sphere it is convex while radius < D_k / 2."""

    center: Point
    radius: float
    space: ModelSpace = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "space", self.center.space)
        if self.radius <= 0:
            raise GeometryError("ball radius must be positive")
        if not self.space.is_model:
            raise GeometryError("balls are supported in model spaces only")

    @property
    def convex(self):
        return self.radius < self.space.diameter / 2

    def _contains(self, coords, tol):
        return float(self.space.dist_coords(coords, self.center.coords)) <= self.radius + tol


def EuclideanBall(center, radius, space: Optional[ModelSpace] = None) -> Ball:
    center = np.asarray(center, dtype=float)
    space = space or euclidean(center.size)
    _require_euclidean(space, "EuclideanBall")
    return Ball(space.point(center), float(radius))


@dataclass(frozen=True, eq=False)
class AffineSubspace(SetDescriptor):
    """point + span(directions) in R^n (a line for a single direction)."""

    space: ModelSpace
    point: np.ndarray
    directions: np.ndarray
    convex = True

    def __post_init__(self):
        _require_euclidean(self.space, "AffineSubspace")
        d = np.atleast_2d(np.asarray(self.directions, dtype=float))
        q, r = np.linalg.qr(d.T)
        if np.min(np.abs(np.diag(r))) < 1e-12:
            raise GeometryError("affine directions must be linearly independent")
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))
        object.__setattr__(self, "directions", q.T)

    def _contains(self, coords, tol):
        v = coords - self.point
        return float(np.linalg.norm(v - self.directions.T @ (self.directions @ v))) <= tol


@dataclass(frozen=True, eq=False)
class EuclideanSphere(SetDescriptor):
    """{x in R^n : |x - center| = radius}; the unit circle for n = 2."""

    space: ModelSpace
    center: np.ndarray
    radius: float

    def __post_init__(self):
        _require_euclidean(self.space, "EuclideanSphere")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    def _contains(self, coords, tol):
        return abs(float(np.linalg.norm(coords - self.center)) - self.radius) <= tol


@dataclass(frozen=True, eq=False)
class Box(SetDescriptor):
    """Axis-aligned box [lower, upper] in R^n."""

    space: ModelSpace
    lower: np.ndarray
    upper: np.ndarray
    convex = True

    def __post_init__(self):
        _require_euclidean(self.space, "Box")
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(lo > hi):
            raise GeometryError("box bounds must satisfy lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def _contains(self, coords, tol):
        return bool(np.all(coords >= self.lower - tol) and np.all(coords <= self.upper + tol))


def interval(lo: float, hi: float) -> Box:
    return Box(euclidean(1), [lo], [hi])


# ------------------------------------------------------------- tent graph
def _tent_branch(t):
    """Branch index n with t in (2^-(n+1), 2^-n], computed exactly via frexp."""
    m, e = np.frexp(t)
    return np.where(m == 0.5, 1 - e, -e)


def tent_values(ts) -> np.ndarray:
    """Vectorized tent function on [0, 1/2] (no range check)."""
    ts = np.asarray(ts, dtype=float)
    out = np.zeros_like(ts)
    pos = ts > 0
    t = ts[pos]
    n = _tent_branch(t)
    step = np.ldexp(1.0, -n)
    rising = t <= np.ldexp(3.0, -n - 2)
    out[pos] = np.where(rising, step * (t - np.ldexp(1.0, -n - 1)), step * (step - t))
    return out


def tent_g(t: float) -> float:
    """Zig-zag function with peaks (3/2^(n+2), 1/2^(2n+2)) on (1/2^(n+1), 1/2^n]."""
    if not 0.0 <= t <= 0.5:
        raise GeometryError(f"tent function is defined on [0, 1/2], got {t}")
    return float(tent_values(np.array([t]))[0])


def tent_peak(n: int) -> np.ndarray:
    return np.array([3.0 / 2.0 ** (n + 2), 1.0 / 2.0 ** (2 * n + 2)])


@dataclass(frozen=True, eq=False)
class TentGraph(SetDescriptor):
    """Graph {(t, g(t)) : 0 <= t <= 1/2} of the tent function, origin included."""

    space: ModelSpace = field(default_factory=lambda: euclidean(2))

    def __post_init__(self):
        _require_euclidean(self.space, "TentGraph")
        if self.space.dim != 2:
            raise GeometryError("the tent graph lives in R^2")

    def _contains(self, coords, tol):
        s, v = float(coords[0]), float(coords[1])
        if s < -tol or s > 0.5 + tol:
            return False
        return abs(v - tent_g(min(max(s, 0.0), 0.5))) <= tol

    def at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.stack([t, tent_values(t)], axis=-1)


# ---------------------------------------------------------- callback sets
@dataclass(frozen=True, eq=False)
class Epigraph(SetDescriptor):
    """{(x, lam) : lam >= f(x)} in X x R, with x restricted to a search box.

    ``domain`` bounds the projection search; ``radius`` records the
    approximate-convexity radius the caller asserts for UAG witnesses.
    """

    f: Callable
    inner: ModelSpace
    domain: Box
    gradient: Optional[Callable] = None
    radius: Optional[float] = None
    space: ModelSpace = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "space", product_with_line(self.inner))

    def value(self, x) -> float:
        return float(self.f(np.asarray(x, dtype=float)))

    def _contains(self, coords, tol):
        return float(coords[-1]) >= self.value(coords[:-1]) - tol


@dataclass(frozen=True, eq=False)
class ConstraintSet(SetDescriptor):
    """{x in R^n : g_j(x) <= 0 for all j} searched within ``domain``.

    ``mfcq_direction`` is a vector d with Dg_j(tagged_point) d < 0 for every
    j, asserted by the caller.
    """

    space: ModelSpace
    constraints: Sequence[Callable]
    domain: Box
    gradients: Optional[Sequence[Callable]] = None
    mfcq_direction: Optional[np.ndarray] = None
    tagged_point: Optional[np.ndarray] = None

    def __post_init__(self):
        _require_euclidean(self.space, "ConstraintSet")
        if self.mfcq_direction is not None:
            object.__setattr__(self, "mfcq_direction",
                               np.asarray(self.mfcq_direction, dtype=float))

    def values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([float(g(x)) for g in self.constraints])

    def grads(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.gradients is not None:
            return np.array([np.asarray(dg(x), dtype=float) for dg in self.gradients])
        return np.array([central_gradient(g, x) for g in self.constraints])

    def _contains(self, coords, tol):
        return bool(np.all(self.values(coords) <= tol))

    def mfcq_margins(self, z=None) -> np.ndarray:
        """Dg_j(z) d for every constraint; all negative under MFCQ."""
        if self.mfcq_direction is None:
            raise GeometryError("no MFCQ direction attached")
        z = self.tagged_point if z is None else z
        return self.grads(z) @ self.mfcq_direction


@dataclass(frozen=True, eq=False)
class SmoothImage(SetDescriptor):
    """F(C) for a C^1 map F : R^n -> R^m and a convex parameter set C (Box or Ball)."""

    F: Callable
    domain: SetDescriptor
    space: ModelSpace
    jacobian: Optional[Callable] = None

    def __post_init__(self):
        _require_euclidean(self.space, "SmoothImage")
        if not isinstance(self.domain, (Box, Ball)):
            raise GeometryError("SmoothImage domain must be a Box or a Euclidean Ball")

    @property
    def param_dim(self) -> int:
        return self.domain.space.dim

    def param_bounds(self):
        if isinstance(self.domain, Box):
            return self.domain.lower, self.domain.upper
        c, r = self.domain.center.coords, self.domain.radius
        return c - r, c + r

    def in_domain(self, u, tol=0.0) -> bool:
        return self.domain._contains(np.atleast_1d(np.asarray(u, dtype=float)), tol)

    def image(self, u) -> np.ndarray:
        return np.asarray(self.F(np.atleast_1d(np.asarray(u, dtype=float))), dtype=float)

    def jac(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if self.jacobian is not None:
            return np.asarray(self.jacobian(u), dtype=float).reshape(self.space.dim, u.size)
        return central_gradient(self.F, u).reshape(self.space.dim, u.size)

    def _contains(self, coords, tol):
        from catproj.projection import project
        return project(self, Point(np.asarray(coords, dtype=float), self.space)).distance <= tol


@dataclass(frozen=True, eq=False)
class PointCloud(SetDescriptor):
    """Finite sample of a set, stored as a (k, ambient) coordinate array."""

    space: ModelSpace
    points: np.ndarray

    def __post_init__(self):
        pts = self.space.validate(np.atleast_2d(np.asarray(self.points, dtype=float)))
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def _contains(self, coords, tol):
        return float(np.min(self.space.dist_coords(self.points, coords))) <= tol

    def restrict(self, center: Point, radius: float) -> np.ndarray:
        """Indices of cloud points in the open ball B(center, radius)."""
        d = self.space.dist_coords(self.points, center.coords)
        return np.flatnonzero(d < radius)


def power_graph_map(exponent: float = 1.5):
    """F(x) = (x, |x|^p) and its Jacobian."""

    def F(u):
        x = float(np.ravel(u)[0])
        return np.array([x, abs(x) ** exponent])

    def J(u):
        x = float(np.ravel(u)[0])
        return np.array([[1.0], [exponent * math.copysign(abs(x) ** (exponent - 1), x)
                                 if x != 0 else 0.0]])

    return F, J


def power_graph(exponent: float = 1.5, lo: float = -1.0, hi: float = 1.0) -> SmoothImage:
    F, J = power_graph_map(exponent)
    return SmoothImage(F, interval(lo, hi), euclidean(2), J)


def cloud_from_curve(curve: Callable, params, space: Optional[ModelSpace] = None) -> PointCloud:
    pts = np.array([np.asarray(curve(t), dtype=float) for t in np.asarray(params, dtype=float)])
    return PointCloud(space or euclidean(pts.shape[1]), pts)


def circle_cloud(count: int, radius: float = 1.0) -> PointCloud:
    th = 2 * np.pi * np.arange(count) / count
    return PointCloud(euclidean(2), radius * np.column_stack([np.cos(th), np.sin(th)]))


# ----------------------------------------------------------- witness curves
@dataclass(frozen=True, eq=False)
class WitnessCurve:
    """In-set curve f on [0, l] shadowing a geodesic from the same start."""

    length: float
    evaluator: Callable  # ts (k,) -> coords (k, ambient)
    geodesic: Geodesic

    @property
    def space(self) -> ModelSpace:
        return self.geodesic.space

    def __call__(self, t: float) -> Point:
        return Point(np.asarray(self.evaluator(np.array([t]))[0], dtype=float), self.space)

    def sample_times(self, samples: int = WITNESS_SAMPLES) -> np.ndarray:
        return self.length * np.arange(1, samples + 1) / samples

    def deviation_ratios(self, ts) -> np.ndarray:
        """d(gamma(t), f(t)) / t at the given times t > 0."""
        ts = np.asarray(ts, dtype=float)
        g = self.geodesic.coords_at(np.minimum(ts, self.geodesic.length))
        f = self.evaluator(ts)
        return self.space.dist_coords(g, f) / ts

    def sup_ratio(self, samples: int = WITNESS_SAMPLES):
        ts = self.sample_times(samples)
        r = self.deviation_ratios(ts)
        i = int(np.argmax(r))
        return float(r[i]), float(ts[i])

    def membership_violation(self, S: SetDescriptor, samples: int = WITNESS_SAMPLES,
                             tol: float = MEMBER_TOL):
        """First sampled time where f leaves S, or None."""
        ts = np.concatenate([[0.0], self.sample_times(samples)])
        for t, c in zip(ts, self.evaluator(ts)):
            if not S._contains(c, tol):
                return float(t), c
        return None


def geodesic_witness(x: Point, y: Point) -> WitnessCurve:
    """The segment itself: the witness for (weakly) convex sets."""
    g = geodesic_between(x, y)
    return WitnessCurve(g.length, g.coords_at, g)


def epigraph_uag_witness(E: Epigraph, p: Point, q: Point, eps: float) -> WitnessCurve:
    """Segment in X x R lifted by eps (t/l)(1 - t/l) d(x, x') in the height."""
    for pt in (p, q):
        if not E.contains(pt):
            raise GeometryError(f"endpoint {pt.coords} is not in the epigraph")
    if eps < 0:
        raise GeometryError("eps must be nonnegative")
    g = geodesic_between(p, q)
    l = g.length
    dx = float(E.inner.dist_coords(p.coords[:-1], q.coords[:-1]))

    def evaluator(ts):
        ts = np.asarray(ts, dtype=float)
        out = g.coords_at(np.clip(ts, 0.0, l))
        s = ts / l
        out[:, -1] += eps * s * (1.0 - s) * dx
        return out

    return WitnessCurve(l, evaluator, g)


def mfcq_uag_witness(G: ConstraintSet, x: Point, y: Point, eps: float,
                     samples: int = WITNESS_SAMPLES, tol: float = MEMBER_TOL) -> WitnessCurve:
    """Segment bulged along the MFCQ direction by eps' (t/l)(1 - t/l) |x - y| d.

    Raises WitnessFailure when a sampled point of the curve violates a constraint.
    """
    if G.mfcq_direction is None:
        raise GeometryError("constraint set carries no MFCQ direction")
    d = G.mfcq_direction
    dn = float(np.linalg.norm(d))
    eps_p = eps / dn
    g = geodesic_between(x, y)
    l = g.length
    xa, ya = x.coords, y.coords

    def evaluator(ts):
        s = np.asarray(ts, dtype=float)[:, None] / l
        return (1 - s) * xa + s * ya + eps_p * s * (1 - s) * l * d

    curve = WitnessCurve(l, evaluator, g)
    bad = curve.membership_violation(G, samples, tol)
    if bad is not None:
        t, c = bad
        viol = float(np.max(G.values(c)))
        raise WitnessFailure(f"MFCQ witness leaves the set at t={t:.6g} (g_max={viol:.3g})",
                             t=t, coords=c, violation=viol)
    return curve


def smooth_image_eval(S: SmoothImage, u):
    """F(u) and the Jacobian DF(u) for u in the parameter set."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if not S.in_domain(u, 1e-12):
        raise GeometryError(f"parameter {u} is outside the domain")
    return S.image(u), S.jac(u)


def smooth_image_uag_witness(S: SmoothImage, u, u2) -> WitnessCurve:
    """f(t) = F(u + t v/|w|) against gamma(t) = F(u) + t w/|w|, w = DF(u) v."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    u2 = np.atleast_1d(np.asarray(u2, dtype=float))
    Fu, J = smooth_image_eval(S, u)
    smooth_image_eval(S, u2)
    step = u2 - u
    sn = float(np.linalg.norm(step))
    if sn == 0:
        raise GeometryError("witness endpoints coincide")
    v = step / sn
    w = J @ v
    wn = float(np.linalg.norm(w))
    if wn == 0:
        raise GeometryError("DF(u) annihilates the chord direction")
    l = sn * wn
    g = geodesic_from(Point(Fu, S.space), w, l)

    def evaluator(ts):
        ts = np.asarray(ts, dtype=float)
        return np.array([S.image(u + t * v / wn) for t in ts])

    return WitnessCurve(l, evaluator, g)


def tent_uag_witness(s: float, s2: float) -> WitnessCurve:
    """Walk along the tent graph against the horizontal line through (s, g(s))."""
    if s == s2:
        raise GeometryError("witness endpoints coincide")
    E2 = euclidean(2)
    sign = 1.0 if s2 > s else -1.0
    l = abs(s2 - s)
    start = Point(np.array([s, tent_g(s)]), E2)
    g = geodesic_from(start, [sign, 0.0], l)

    def evaluator(ts):
        t = s + sign * np.asarray(ts, dtype=float)
        return np.stack([t, tent_values(np.clip(t, 0.0, 0.5))], axis=-1)

    return WitnessCurve(l, evaluator, g)


def _tent_breakpoints() -> np.ndarray:
    n = np.arange(1, 1073)
    pts = np.concatenate([[0.0], np.ldexp(1.0, -n - 1), np.ldexp(3.0, -n - 2), np.ldexp(1.0, -n)])
    return np.unique(pts)


TENT_BREAKPOINTS = _tent_breakpoints()


def tent_witness_sup_ratio(s: float, s2: float):
    """Exact sup over t in (0, l] of |g(s +- t) - g(s)| / t for the tent witness.

    g(s + t) - g(s) is affine in t on every linear piece, so the ratio is
    monotone on each piece and the sup is attained at a breakpoint or at the
    far endpoint. The first piece has constant ratio equal to the one-sided
    slope at s, which covers the t -> 0+ limit.
    """
    lo, hi = min(s, s2), max(s, s2)
    inner = TENT_BREAKPOINTS[(TENT_BREAKPOINTS > lo) & (TENT_BREAKPOINTS < hi)]
    cands = np.append(inner, s2)
    ts = np.abs(cands - s)
    ratios = np.abs(tent_values(cands) - tent_g(s)) / ts
    i = int(np.argmax(ratios))
    return float(ratios[i]), float(ts[i])


def small_sphere_arc_witness(A: SmallSphere, x: Point, y: Point) -> WitnessCurve:
    """Constant-speed arc of the small circle through x and y, against [x, y]."""
    for p in (x, y):
        if not A.contains(p, 1e-9):
            raise GeometryError("endpoints must lie on the small sphere")
    a, h = A.a, A.h
    rho = math.sqrt(1 - h * h)
    px = (x.coords - h * a) / rho
    py = (y.coords - h * a) / rho
    theta = 2.0 * math.atan2(np.linalg.norm(px - py), np.linalg.norm(px + py))
    if theta >= math.pi - 1e-12:
        raise GeometryError("endpoints are antipodal on the small circle")
    perp = py - np.dot(py, px) * px
    perp /= np.linalg.norm(perp)
    g = geodesic_between(x, y)
    l = g.length

    def evaluator(ts):
        phi = theta * np.asarray(ts, dtype=float)[:, None] / l
        return h * a + rho * (np.cos(phi) * px + np.sin(phi) * perp)

    return WitnessCurve(l, evaluator, g)

"""Metric geometry of the constant-curvature model spaces.

Coordinates follow the usual embeddings:

* Euclidean space R^n uses plain coordinates.
* The sphere of curvature k > 0 uses unit vectors in R^(n+1); distances are
  the great-circle angle divided by sqrt(k).
* Hyperbolic space of curvature k < 0 uses the upper sheet of the hyperboloid
  <x, x>_M = 1/k in Minkowski space R^(n,1) (time coordinate first).
* ``product_with_line(X)`` is X x R with the l2 product metric; its
  coordinates are the inner coordinates with the height appended.

Tangent vectors are stored as ambient vectors. Their metric norm is given by
:meth:`ModelSpace.inner`; a *unit* tangent has metric norm one, so a unit-speed
geodesic is ``exp(x, t * u)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from catproj.errors import (
    DegenerateGeodesicError,
    GeometryError,
    NonUniqueGeodesicError,
    PreconditionError,
)

# drift allowed before a point is pushed back onto the model
RENORM_TOL = 1e-12
# drift beyond which a coordinate vector is rejected outright
ACCEPT_TOL = 1e-6
ANTIPODAL_TOL = 1e-12
TRIANGLE_SLACK = 1e-12


class Kind(str, Enum):
    EUCLIDEAN = "euclidean"
    SPHERE = "sphere"
    HYPERBOLIC = "hyperbolic"
    PRODUCT = "product"


def minkowski(u, v):
    """Minkowski form -u0 v0 + sum ui vi, broadcast over leading axes."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return np.sum(u[..., 1:] * v[..., 1:], axis=-1) - u[..., 0] * v[..., 0]


@dataclass(frozen=True)
class ModelSpace:
    kind: Kind
    curvature: float
    dim: int
    inner_space: Optional["ModelSpace"] = None

    def __post_init__(self):
        if self.dim < 1:
            raise GeometryError(f"dimension must be positive, got {self.dim}")
        k = self.curvature
        if self.kind is Kind.SPHERE and not k > 0:
            raise GeometryError(f"sphere requires curvature > 0, got {k}")
        if self.kind is Kind.HYPERBOLIC and not k < 0:
            raise GeometryError(f"hyperbolic space requires curvature < 0, got {k}")
        if self.kind is Kind.EUCLIDEAN and k != 0:
            raise GeometryError(f"euclidean space has curvature 0, got {k}")
        if self.kind is Kind.PRODUCT and self.inner_space is None:
            raise GeometryError("product space needs an inner space")

    # ------------------------------------------------------------------ queries
    @property
    def diameter(self) -> float:
        """D_k: pi/sqrt(k) on the sphere, infinite otherwise."""
        if self.kind is Kind.SPHERE:
            return math.pi / math.sqrt(self.curvature)
        return math.inf

    @property
    def ambient_dim(self) -> int:
        if self.kind is Kind.EUCLIDEAN:
            return self.dim
        if self.kind is Kind.PRODUCT:
            return self.inner_space.ambient_dim + 1
        return self.dim + 1

    @property
    def comparison_curvature(self) -> float:
        """Curvature of the comparison plane used for angles in this space."""
        if self.kind is Kind.PRODUCT:
            return 0.0
        return self.curvature

    @property
    def is_model(self) -> bool:
        return self.kind is not Kind.PRODUCT

    def __str__(self):
        if self.kind is Kind.PRODUCT:
            return f"({self.inner_space}) x R"
        return f"{self.kind.value}(dim={self.dim}, k={self.curvature:g})"

    # -------------------------------------------------------------- coordinates
    def normalize(self, coords) -> np.ndarray:
        """Push a coordinate array (last axis = ambient) onto the model."""
        x = np.array(coords, dtype=float)
        if self.kind is Kind.SPHERE:
            return x / np.linalg.norm(x, axis=-1, keepdims=True)
        if self.kind is Kind.HYPERBOLIC:
            rad = 1.0 / math.sqrt(-self.curvature)
            q = -minkowski(x, x)
            if np.any(q <= 0):
                raise GeometryError("vector is not timelike; cannot normalize onto hyperboloid")
            return x * (rad / np.sqrt(q))[..., None]
        if self.kind is Kind.PRODUCT:
            out = x.copy()
            out[..., :-1] = self.inner_space.normalize(x[..., :-1])
            return out
        return x

    def drift(self, coords) -> np.ndarray:
        x = np.asarray(coords, dtype=float)
        if self.kind is Kind.SPHERE:
            return np.abs(np.sum(x * x, axis=-1) - 1.0)
        if self.kind is Kind.HYPERBOLIC:
            return np.abs(minkowski(x, x) - 1.0 / self.curvature) * -self.curvature
        if self.kind is Kind.PRODUCT:
            return self.inner_space.drift(x[..., :-1])
        return np.zeros(x.shape[:-1])

    def validate(self, coords) -> np.ndarray:
        x = np.array(coords, dtype=float)
        if x.shape[-1:] != (self.ambient_dim,):
            raise GeometryError(
                f"{self} expects {self.ambient_dim} coordinates, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise GeometryError("coordinates must be finite")
        if self.kind is Kind.HYPERBOLIC and np.any(x[..., 0] <= 0):
            raise GeometryError("hyperboloid points need a positive first coordinate")
        drift = self.drift(x)
        if np.any(drift > ACCEPT_TOL):
            raise GeometryError(f"coordinates are off {self} (drift {np.max(drift):.3g})")
        if np.any(drift > RENORM_TOL):
            x = self.normalize(x)
        return x

    def point(self, coords) -> "Point":
        return Point(self.validate(coords), self)

    def points(self, coords) -> list:
        arr = self.validate(np.atleast_2d(coords))
        return [Point(row, self) for row in arr]

    # ------------------------------------------------------------------ metric
    def dist_coords(self, x, y) -> np.ndarray:
        """Distance between coordinate arrays, broadcast over leading axes."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind is Kind.EUCLIDEAN:
            return np.linalg.norm(x - y, axis=-1)
        if self.kind is Kind.SPHERE:
            ang = 2.0 * np.arctan2(np.linalg.norm(x - y, axis=-1),
                                   np.linalg.norm(x + y, axis=-1))
            return ang / math.sqrt(self.curvature)
        if self.kind is Kind.HYPERBOLIC:
            rad = 1.0 / math.sqrt(-self.curvature)
            diff = x - y
            q = np.maximum(minkowski(diff, diff), 0.0)
            return 2.0 * rad * np.arcsinh(np.sqrt(q) / (2.0 * rad))
        d_in = self.inner_space.dist_coords(x[..., :-1], y[..., :-1])
        return np.hypot(d_in, x[..., -1] - y[..., -1])

    def inner(self, x, u, v) -> np.ndarray:
        """Riemannian inner product of tangent vectors u, v at x."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind is Kind.EUCLIDEAN:
            return np.sum(u * v, axis=-1)
        if self.kind is Kind.SPHERE:
            return np.sum(u * v, axis=-1) / self.curvature
        if self.kind is Kind.HYPERBOLIC:
            return minkowski(u, v)
        x = np.asarray(x, dtype=float)
        return (self.inner_space.inner(x[..., :-1], u[..., :-1], v[..., :-1])
                + u[..., -1] * v[..., -1])

    def norm(self, x, u) -> np.ndarray:
        return np.sqrt(np.maximum(self.inner(x, u, u), 0.0))

    def to_tangent(self, x, v) -> np.ndarray:
        """Orthogonal projection of an ambient vector onto the tangent space at x."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind is Kind.EUCLIDEAN:
            return v.copy()
        if self.kind is Kind.SPHERE:
            return v - np.sum(x * v, axis=-1, keepdims=True) * x
        if self.kind is Kind.HYPERBOLIC:
            return v + (minkowski(x, v) * -self.curvature)[..., None] * x
        out = np.array(v, dtype=float)
        out[..., :-1] = self.inner_space.to_tangent(x[..., :-1], v[..., :-1])
        return out

    def log_coords(self, x, y) -> np.ndarray:
        """Tangent vector at x pointing to y with metric norm d(x, y)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind is Kind.EUCLIDEAN:
            return y - x
        if self.kind is Kind.PRODUCT:
            out = np.array(y - x, dtype=float)
            out[..., :-1] = self.inner_space.log_coords(x[..., :-1], y[..., :-1])
            return out
        w = self.to_tangent(x, y)
        d = self.dist_coords(x, y)
        wn = self.norm(x, w)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(wn > 0, d / np.where(wn > 0, wn, 1.0), 0.0)
        return w * np.asarray(scale)[..., None]

    def exp_coords(self, x, u) -> np.ndarray:
        """Point reached by the geodesic from x with initial velocity u at time 1."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if self.kind is Kind.EUCLIDEAN:
            return x + u
        if self.kind is Kind.PRODUCT:
            out = np.array(x + u, dtype=float)
            out[..., :-1] = self.inner_space.exp_coords(x[..., :-1], u[..., :-1])
            return out
        m = np.asarray(self.norm(x, u))[..., None]
        safe = np.where(m > 0, m, 1.0)
        if self.kind is Kind.SPHERE:
            s = math.sqrt(self.curvature)
            ang = s * m
            # u / m is the unit tangent; its ambient length is s
            out = np.cos(ang) * x + np.sin(ang) * (u / (safe * s))
        else:
            rad = 1.0 / math.sqrt(-self.curvature)
            out = np.cosh(m / rad) * x + rad * np.sinh(m / rad) * (u / safe)
        out = np.where(m > 0, out, x)
        return self.normalize(out)

    def tangent_basis(self, x) -> np.ndarray:
        """Metric-orthonormal basis of the tangent space at x, shape (dim, ambient)."""
        x = np.asarray(x, dtype=float)
        cands = np.eye(self.ambient_dim)
        if self.kind is Kind.HYPERBOLIC:
            cands = np.vstack([cands[1:], cands[:1]])
        basis = []
        for e in cands:
            v = self.to_tangent(x, e)
            for b in basis:
                v = v - self.inner(x, v, b) * b
            n = float(self.norm(x, v))
            if n > 1e-8:
                basis.append(v / n)
            if len(basis) == self.dim:
                break
        return np.array(basis)


def euclidean(n: int) -> ModelSpace:
    return ModelSpace(Kind.EUCLIDEAN, 0.0, n)


def sphere(n: int, curvature: float = 1.0) -> ModelSpace:
    return ModelSpace(Kind.SPHERE, float(curvature), n)


def hyperbolic(n: int, curvature: float = -1.0) -> ModelSpace:
    return ModelSpace(Kind.HYPERBOLIC, float(curvature), n)


def product_with_line(inner: ModelSpace) -> ModelSpace:
    """X x R with the metric sqrt(d_X^2 + |dh|^2)."""
    if inner.kind is Kind.PRODUCT:
        raise GeometryError("nested products are not supported")
    return ModelSpace(Kind.PRODUCT, max(inner.curvature, 0.0), inner.dim + 1, inner)


@dataclass(frozen=True, eq=False)
class Point:
    coords: np.ndarray
    space: ModelSpace

    def __post_init__(self):
        self.coords.setflags(write=False)

    def __repr__(self):
        return f"Point({np.array2string(self.coords, precision=6)}, {self.space})"

    def __iter__(self):
        return iter(self.coords)

    def __len__(self):
        return len(self.coords)

    def __getitem__(self, i):
        return self.coords[i]

    def same_as(self, other: "Point", tol: float = 0.0) -> bool:
        return self.space == other.space and dist(self, other) <= tol


def _require_same(*pts: Point) -> ModelSpace:
    space = pts[0].space
    for p in pts[1:]:
        if p.space != space:
            raise GeometryError(f"points live in different spaces: {space} vs {p.space}")
    return space


def dist(x: Point, y: Point) -> float:
    space = _require_same(x, y)
    return float(space.dist_coords(x.coords, y.coords))


@dataclass(frozen=True, eq=False)
class Geodesic:
    """Unit-speed geodesic ``t -> exp(start, t * direction)`` on [0, length]."""

    start: Point
    direction: np.ndarray
    length: float
    space: ModelSpace = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "space", self.start.space)
        if self.length < 0:
            raise GeometryError("geodesic length must be nonnegative")
        n = float(self.space.norm(self.start.coords, self.direction))
        if abs(n - 1.0) > 1e-9:
            raise GeometryError(f"direction is not a unit tangent (norm {n})")
        if self.space.kind is Kind.SPHERE and self.length >= self.space.diameter:
            raise NonUniqueGeodesicError("spherical segments must be shorter than D_k")

    def __call__(self, t: float) -> Point:
        return geodesic_eval(self, t)

    @property
    def end(self) -> Point:
        return geodesic_eval(self, self.length)

    def coords_at(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        return self.space.exp_coords(self.start.coords, ts[..., None] * self.direction)

    def reversed(self) -> "Geodesic":
        return geodesic_between(self.end, self.start)


def geodesic_from(start: Point, tangent, length: float) -> Geodesic:
    """Geodesic from ``start`` along ``tangent`` (normalized to unit speed)."""
    space = start.space
    u = space.to_tangent(start.coords, np.asarray(tangent, dtype=float))
    n = float(space.norm(start.coords, u))
    if n == 0:
        raise DegenerateGeodesicError("zero tangent direction")
    return Geodesic(start, u / n, float(length))


def geodesic_between(x: Point, y: Point) -> Geodesic:
    space = _require_same(x, y)
    d = dist(x, y)
    if d == 0.0:
        raise DegenerateGeodesicError("geodesic between coincident points")
    if space.kind is Kind.SPHERE or (
            space.kind is Kind.PRODUCT and space.inner_space.kind is Kind.SPHERE):
        d_in = d if space.kind is Kind.SPHERE else float(
            space.inner_space.dist_coords(x.coords[:-1], y.coords[:-1]))
        diam = (space if space.kind is Kind.SPHERE else space.inner_space).diameter
        if d_in >= diam - ANTIPODAL_TOL:
            raise NonUniqueGeodesicError("antipodal points have no unique geodesic")
    u = space.log_coords(x.coords, y.coords)
    n = float(space.norm(x.coords, u))
    if n == 0.0:
        raise DegenerateGeodesicError("geodesic between coincident points")
    return Geodesic(x, u / n, d)


def geodesic_eval(g: Geodesic, t: float) -> Point:
    slack = 1e-12 * max(1.0, g.length)
    if not (-slack <= t <= g.length + slack):
        raise GeometryError(f"t={t} outside [0, {g.length}]")
    t = min(max(t, 0.0), g.length)
    if t == 0.0:
        return g.start
    return Point(g.space.exp_coords(g.start.coords, t * g.direction), g.space)


# ---------------------------------------------------------------- triangles
@dataclass(frozen=True)
class ComparisonTriangle:
    a: float
    b: float
    c: float
    curvature: float

    def __post_init__(self):
        _check_triangle(self.a, self.b, self.c, self.curvature)

    def angle_opposite_a(self) -> float:
        return comparison_angle(self.a, self.b, self.c, self.curvature)

    def angles(self):
        k = self.curvature
        return (comparison_angle(self.a, self.b, self.c, k),
                comparison_angle(self.b, self.c, self.a, k),
                comparison_angle(self.c, self.a, self.b, k))


def _check_triangle(a, b, c, kappa):
    if min(a, b, c) < 0:
        raise GeometryError("side lengths must be nonnegative")
    slack = TRIANGLE_SLACK * max(1.0, a + b + c)
    if a > b + c + slack or b > a + c + slack or c > a + b + slack:
        raise GeometryError(f"sides ({a}, {b}, {c}) violate the triangle inequality")
    if kappa > 0 and a + b + c >= 2.0 * math.pi / math.sqrt(kappa) - slack:
        raise GeometryError("perimeter must be below 2 D_k")


def cosine_law_side(b: float, c: float, alpha: float, kappa: float) -> float:
    """Side opposite the angle ``alpha`` enclosed by sides b and c in M^2_k.

    Uses haversine-type forms of the cosine laws so that short sides keep
    full relative precision.
    """
    if b < 0 or c < 0:
        raise GeometryError("side lengths must be nonnegative")
    if not (-1e-12 <= alpha <= math.pi + 1e-12):
        raise GeometryError(f"angle {alpha} outside [0, pi]")
    alpha = min(max(alpha, 0.0), math.pi)
    hav_alpha = math.sin(alpha / 2.0) ** 2
    if kappa == 0:
        return math.sqrt((b - c) ** 2 + 4.0 * b * c * hav_alpha)
    s = math.sqrt(abs(kappa))
    if kappa > 0:
        if max(b, c) >= math.pi / s:
            raise GeometryError("spherical sides must be shorter than D_k")
        h = math.sin(s * (b - c) / 2.0) ** 2 + math.sin(s * b) * math.sin(s * c) * hav_alpha
        return 2.0 * math.asin(math.sqrt(min(max(h, 0.0), 1.0))) / s
    h = math.sinh(s * (b - c) / 2.0) ** 2 + math.sinh(s * b) * math.sinh(s * c) * hav_alpha
    return 2.0 * math.asinh(math.sqrt(max(h, 0.0))) / s


def comparison_angle(a: float, b: float, c: float, kappa: float) -> float:
    """Angle opposite side ``a`` in the M^2_k triangle with sides a, b, c."""
    _check_triangle(a, b, c, kappa)
    if b == 0 or c == 0:
        raise GeometryError("the angle is undefined when an adjacent side vanishes")
    s_scale = math.sqrt(abs(kappa)) if kappa != 0 else 1.0
    a, b, c = a * s_scale, b * s_scale, c * s_scale
    s = 0.5 * (a + b + c)
    f = {0: lambda v: v, 1: math.sin, -1: math.sinh}[int(np.sign(kappa))]
    num = f(max(s - b, 0.0)) * f(max(s - c, 0.0))
    den = f(s) * f(max(s - a, 0.0))
    return 2.0 * math.atan2(math.sqrt(max(num, 0.0)), math.sqrt(max(den, 0.0)))


# ------------------------------------------------------------------- angles
def tangent_angle(g1: Geodesic, g2: Geodesic) -> float:
    """Exact Riemannian angle between the initial directions of two geodesics."""
    space = _require_same(g1.start, g2.start)
    if dist(g1.start, g2.start) > 1e-12:
        raise GeometryError("geodesics must share their starting point")
    x = g1.start.coords
    cos = float(space.inner(x, g1.direction, g2.direction))
    sin = float(space.norm(x, g1.direction - cos * g2.direction))
    # atan2 keeps precision near 0 and pi
    return math.atan2(sin, cos)


def default_scales(length: float, k_min: int = 4, k_max: int = 20) -> np.ndarray:
    return length * 2.0 ** -np.arange(k_min, k_max + 1, dtype=float)


def alexandrov_angle(g1: Geodesic, g2: Geodesic,
                     scales: Optional[Sequence[float]] = None) -> float:
    """Alexandrov angle estimated as the largest comparison angle on a scale ladder.

    In the model spaces comparison angles are monotone in the scale, so the
    maximum over a geometric ladder ``t = t'`` converges to the limsup.
    """
    space = _require_same(g1.start, g2.start)
    if dist(g1.start, g2.start) > 1e-12:
        raise GeometryError("geodesics must share their starting point")
    if g1.length == 0 or g2.length == 0:
        raise GeometryError("angles need nonconstant geodesics")
    lmin = min(g1.length, g2.length)
    ts = default_scales(lmin) if scales is None else np.asarray(scales, dtype=float)
    if np.any(ts <= 0) or np.any(ts > lmin * (1 + 1e-12)):
        raise GeometryError("scales must lie in (0, min(l1, l2)]")
    kappa = space.comparison_curvature
    p = g1.coords_at(ts)
    q = g2.coords_at(ts)
    a = space.dist_coords(p, q)
    best = 0.0
    for ai, t in zip(a, ts):
        ai = min(float(ai), 2.0 * t)
        best = max(best, comparison_angle(ai, float(t), float(t), kappa))
    return best


def angle_at(x: Point, y: Point, z: Point) -> float:
    """Alexandrov angle at x between the segments [x, y] and [x, z]."""
    return tangent_angle(geodesic_between(x, y), geodesic_between(x, z))


def small_angle_descent_witness(x: Point, y: Point, z: Point, t: float) -> Point:
    """A point u on [x, z] with d(x, u) < t and d(y, u) < d(y, x).

    Requires the angle at x between y and z to be acute; u is taken halfway
    between x and the foot of y on [x, z] (capped by t).
    """
    space = _require_same(x, y, z)
    if not space.is_model:
        raise PreconditionError("descent witness is defined in model spaces only")
    if t <= 0:
        raise PreconditionError("t must be positive")
    D = space.diameter
    dyx = dist(y, x)
    if not dyx < D / 2:
        raise PreconditionError("need d(y, x) < D_k / 2")
    if not dist(z, x) < D:
        raise PreconditionError("need d(z, x) < D_k")
    ang = angle_at(x, y, z)
    if ang >= math.pi / 2 - 1e-10:
        raise PreconditionError(f"angle at x is {ang:.12g}, not below pi/2")
    seg = geodesic_between(x, z)

    def obj(s):
        return float(space.dist_coords(y.coords, seg.coords_at(s)))

    res = minimize_scalar(obj, bounds=(0.0, seg.length), method="bounded",
                          options={"xatol": 1e-14 * max(1.0, seg.length)})
    foot = float(res.x)
    if foot <= 0:
        raise GeometryError("foot of y on [x, z] collapsed onto x")
    return geodesic_eval(seg, min(t, foot) / 2.0)


# ----------------------------------------------------------------- sampling
def random_unit_tangents(x: Point, n: int, rng: np.random.Generator) -> np.ndarray:
    basis = x.space.tangent_basis(x.coords)
    g = rng.standard_normal((n, basis.shape[0]))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g @ basis


def sample_ball(center: Point, radius: float, n: int,
                rng: np.random.Generator) -> np.ndarray:
    """Coordinates of n points in the open geodesic ball B(center, radius).

    Uniform in normal coordinates (exactly uniform in Euclidean space).
    """
    space = center.space
    dirs = random_unit_tangents(center, n, rng)
    radii = radius * rng.random(n) ** (1.0 / space.dim)
    return space.exp_coords(center.coords, radii[:, None] * dirs)

"""Sampling certifiers and refuters for the regularity notions.

Every check returns a :class:`RegularityReport`. ``CertifiedOnSample`` is
evidence on the drawn sample only; ``RefutedWithCounterexample`` carries a
point tuple that :func:`replay` re-evaluates against the defining inequality.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree

from catproj.errors import (
    GeometryError,
    NonUniqueProjectionError,
    SolverFailure,
    WitnessFailure,
)
from catproj.model_space import Kind, ModelSpace, Point, dist, geodesic_between, sample_ball
from catproj.projection import project, project_many, projection_uniqueness_profile
from catproj.sets import (
    AffineSubspace,
    Ball,
    Box,
    ConstraintSet,
    Epigraph,
    GreatSubsphere,
    Halfspace,
    PointCloud,
    SetDescriptor,
    SmallSphere,
    SmoothImage,
    TentGraph,
    WitnessCurve,
    epigraph_uag_witness,
    geodesic_witness,
    mfcq_uag_witness,
    small_sphere_arc_witness,
    smooth_image_uag_witness,
    tent_witness_sup_ratio,
)

DEFAULT_SAMPLES = 10_000
DEFAULT_PARTNERS = 1024
MEMBER_TOL = 1e-9


class Verdict(str, Enum):
    CERTIFIED = "CertifiedOnSample"
    REFUTED = "RefutedWithCounterexample"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class RegularityReport:
    check: str
    verdict: Verdict
    parameters: dict
    margin: float = float("nan")
    witness: Optional[dict] = None
    counterexample: Optional[dict] = None
    samples: dict = field(default_factory=dict)
    notes: str = ""

    @property
    def certified(self) -> bool:
        return self.verdict is Verdict.CERTIFIED

    @property
    def refuted(self) -> bool:
        return self.verdict is Verdict.REFUTED

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict.value
        return _jsonable(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Enum):
        return obj.value
    return obj


# ------------------------------------------------------------- angle helpers
def angles_at(space: ModelSpace, x, y, others) -> np.ndarray:
    """Angles at x between the segment to y and the segments to each row of ``others``.

    Uses the half-chord form 2 atan2(|u - v|, |u + v|) on unit tangents, which
    stays accurate near 0 and pi.
    """
    x = np.asarray(x, dtype=float)
    others = np.atleast_2d(np.asarray(others, dtype=float))
    u = space.log_coords(x, y)
    u = u / space.norm(x, u)
    V = space.log_coords(x, others)
    V = V / space.norm(x, V)[:, None]
    return 2.0 * np.arctan2(space.norm(x, V - u), space.norm(x, V + u))


def _unit_logs(space, z, P):
    V = space.log_coords(z, np.atleast_2d(P))
    return V / space.norm(z, V)[:, None]


# ------------------------------------------------------------ member samples
def _filter_ball(space, X, center, radius, open_ball=True):
    d = space.dist_coords(X, center.coords)
    return X[d < radius] if open_ball else X[d <= radius]


def sample_members(S: SetDescriptor, center: Point, radius: float, n: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Coordinates of members of S inside the open ball B(center, radius)."""
    space = S.space
    if isinstance(S, TentGraph):
        c = float(center.coords[0])
        ts = rng.uniform(max(0.0, c - radius), min(0.5, c + radius), n)
        X = S.at(ts)
        return _filter_ball(space, X, center, radius)
    if isinstance(S, PointCloud):
        return S.points[S.restrict(center, radius)]
    if isinstance(S, SmoothImage):
        return _smooth_image_members(S, center, radius, n, rng)[0]
    Y = sample_ball(center, radius, n, rng)
    if isinstance(S, (Halfspace, Box, Ball)):
        inside = S.contains_coords(Y)
        P, ok = project_many(S, Y[~inside])
        X = np.vstack([Y[inside], P[ok]])
    elif isinstance(S, Epigraph):
        rows = []
        for y in Y:
            x = y[:-1]
            if not S.domain._contains(x, 0.0):
                continue
            fx = S.value(x)
            rows.append(y if y[-1] >= fx else np.append(x, fx))
        X = np.array(rows).reshape(-1, space.ambient_dim)
    elif isinstance(S, ConstraintSet):
        X = _constraint_members(S, Y, center)
    else:
        P, ok = project_many(S, Y)
        X = P[ok]
    return _filter_ball(space, X, center, radius)


def _constraint_members(S: ConstraintSet, Y, center):
    feas = S.contains_coords(Y)
    rows = list(Y[feas])
    c = center.coords
    if S._contains(c, 0.0):
        # boundary points by bisection between the centre and infeasible samples
        for y in Y[~feas]:
            lo, hi = 0.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if S._contains(c + mid * (y - c), 0.0):
                    lo = mid
                else:
                    hi = mid
            rows.append(c + lo * (y - c))
    return np.array(rows).reshape(-1, S.space.ambient_dim)


def _preimage(S: SmoothImage, z: Point) -> np.ndarray:
    res = project(S, z)
    params = res.diagnostics.get("parameters")
    if params is None:
        raise GeometryError("cannot locate a preimage of z")
    best = min(params, key=lambda u: float(np.linalg.norm(S.image(u) - z.coords)))
    return np.atleast_1d(np.asarray(best, dtype=float))


def _smooth_image_members(S: SmoothImage, center, radius, n, rng):
    """Members of F(C) near center, drawn through the parameter domain."""
    u0 = _preimage(S, center)
    svals = np.linalg.svd(S.jac(u0), compute_uv=False)
    smin = float(svals[-1]) if svals.size else 0.0
    rho = 2.0 * radius / smin if smin > 1e-12 else radius
    lo, hi = S.param_bounds()
    U = u0 + rng.uniform(-rho, rho, (n, u0.size))
    U = U[[S.in_domain(u) for u in U]]
    if len(U) == 0:
        return np.empty((0, S.space.dim)), U
    X = np.array([S.image(u) for u in U])
    keep = S.space.dist_coords(X, center.coords) < radius
    return X[keep], U[keep]


def _outside_samples(S, center, radius, n, rng):
    Y = sample_ball(center, radius, n, rng)
    if isinstance(S, SmoothImage):
        return Y
    return Y[~S.contains_coords(Y, MEMBER_TOL)]


# ---------------------------------------------------------- intrinsic metric
@dataclass
class IntrinsicMetricEstimate:
    """Shortest paths in the h-neighbourhood graph of a point cloud.

    Edges join cloud points at ambient distance <= h with weight equal to
    that distance, so path lengths are sums of chords.
    """

    cloud: PointCloud
    h: float
    graph: object = field(init=False, repr=False)

    def __post_init__(self):
        self.graph = neighbourhood_graph(self.cloud, self.h)

    def components(self, indices=None) -> int:
        g = self.graph
        if indices is not None:
            g = g.tocsr()[indices][:, indices]
        return int(connected_components(g, directed=False)[0])

    def distances(self, sources, targets=None, return_hops=False):
        """Shortest-path lengths from sources (rows) to targets (columns)."""
        D, pred = dijkstra(self.graph, directed=False, indices=sources,
                           return_predecessors=True)
        D, pred = np.atleast_2d(D), np.atleast_2d(pred)
        hops = _hop_counts(D, pred) if return_hops else None
        if targets is not None:
            D = D[:, targets]
            hops = hops[:, targets] if return_hops else None
        return (D, hops) if return_hops else D


def _hop_counts(D, pred):
    hops = np.zeros(D.shape, dtype=int)
    for k in range(D.shape[0]):
        order = np.argsort(D[k], kind="stable")
        for j in order:
            p = pred[k, j]
            if p >= 0:
                hops[k, j] = hops[k, p] + 1
    return hops


def neighbourhood_graph(cloud: PointCloud, h: float):
    space = cloud.space
    pts = cloud.points
    if space.kind in (Kind.EUCLIDEAN, Kind.SPHERE):
        # on the sphere chord length is monotone in arc length
        chord = h if space.kind is Kind.EUCLIDEAN else 2.0 * math.sin(
            min(h * math.sqrt(space.curvature), math.pi) / 2.0)
        pairs = cKDTree(pts).query_pairs(chord * (1 + 1e-12), output_type="ndarray")
        i, j = pairs[:, 0], pairs[:, 1]
    else:
        i, j = np.triu_indices(len(pts), 1)
    w = space.dist_coords(pts[i], pts[j])
    keep = (w <= h) & (w > 0)
    i, j, w = i[keep], j[keep], w[keep]
    n = len(pts)
    return coo_matrix((w, (i, j)), shape=(n, n)).tocsr()


def _extrinsic_pairs(est, idx, slack_per_edge):
    """(d_hat, d, slack) matrices for all pairs among cloud indices idx."""
    pts = est.cloud.points[idx]
    space = est.cloud.space
    d = space.dist_coords(pts[:, None, :], pts[None, :, :])
    if slack_per_edge > 0:
        dh, hops = est.distances(idx, idx, return_hops=True)
        slack = slack_per_edge * hops
    else:
        dh = est.distances(idx, idx)
        slack = np.zeros_like(dh)
    return dh, d, slack


def _curvature_report(check, est, idx, sigma, params, slack_per_edge):
    if len(idx) < 2:
        return RegularityReport(check, Verdict.INCONCLUSIVE, params,
                                notes="fewer than two cloud points in the ball")
    dh, d, slack = _extrinsic_pairs(est, idx, slack_per_edge)
    if not np.all(np.isfinite(dh)):
        return RegularityReport(check, Verdict.INCONCLUSIVE, params,
                                samples={"points": len(idx)},
                                notes="neighbourhood graph is disconnected on the ball")
    iu = np.triu_indices(len(idx), 1)
    dh, d, slack = dh[iu], d[iu], slack[iu]
    pos = d > 0
    ratio = np.zeros_like(d)
    ratio[pos] = (dh[pos] - d[pos]) / d[pos] ** 3
    excess = dh - d - slack - sigma * d ** 3
    k = int(np.argmax(ratio))
    worst = float(ratio[k])
    samples = {"points": int(len(idx)), "pairs": int(len(d))}
    params = {**params, "empirical_sigma": worst}
    bad = int(np.argmax(excess))
    if excess[bad] > 0:
        a, b = idx[iu[0][bad]], idx[iu[1][bad]]
        ce = {"p": est.cloud.points[a], "q": est.cloud.points[b], "d_hat": float(dh[bad]),
              "d": float(d[bad]), "slack": float(slack[bad]),
              "ratio": float(ratio[bad]), "path": _path_coords(est, a, b)}
        return RegularityReport(check, Verdict.REFUTED, params, margin=-float(excess[bad]),
                                counterexample=ce, samples=samples)
    return RegularityReport(check, Verdict.CERTIFIED, params, margin=-float(np.max(excess)),
                            witness={"max_ratio": worst}, samples=samples)


def _path_coords(est, a, b):
    _, pred = dijkstra(est.graph, directed=False, indices=a, return_predecessors=True)
    path = [b]
    while path[-1] != a:
        path.append(int(pred[path[-1]]))
    return est.cloud.points[path[::-1]]


def check_finite_extrinsic_curvature(cloud: PointCloud, z: Point, sigma: float, r: float,
                                     h: float, slack_per_edge: float = 0.0) -> RegularityReport:
    """d^A(p, q) - d(p, q) <= sigma d(p, q)^3 for cloud pairs in B(z, r).

    Intrinsic distances come from the neighbourhood graph of the whole cloud.
    For samples of a curve, chord sums never exceed arc length, so a violation
    found with zero slack is a genuine violation of the set.
    """
    est = IntrinsicMetricEstimate(cloud, h)
    idx = cloud.restrict(z, r)
    params = {"sigma": sigma, "r": r, "h": h, "slack_per_edge": slack_per_edge}
    return _curvature_report("finite_extrinsic_curvature", est, idx, sigma, params,
                             slack_per_edge)


def check_two_convexity_ball(cloud: PointCloud, z: Point, sigma: float, R: float,
                             h: float, slack_per_edge: float = 0.0) -> RegularityReport:
    """(sigma, 2, 2R)-convexity of B(z, R) intersected with the cloud.

    Intrinsic distances are taken inside the ball: the graph is restricted to
    the cloud points of B(z, R).
    """
    idx = cloud.restrict(z, R)
    sub = PointCloud(cloud.space, cloud.points[idx])
    est = IntrinsicMetricEstimate(sub, h)
    params = {"sigma": sigma, "R": R, "h": h, "slack_per_edge": slack_per_edge}
    return _curvature_report("two_convexity_ball", est, np.arange(len(idx)), sigma, params,
                             slack_per_edge)


def chord_ratio(curve: Callable, t0: float, t1: float, m: int = 401):
    """(d_hat - d) / d^3 for the endpoints of a curve sampled at m points.

    d_hat is the inscribed polygon length, a lower bound for the length of
    the curve between the endpoints. Returns (ratio, polyline).
    """
    ts = np.linspace(t0, t1, m)
    pts = np.array([np.asarray(curve(t), dtype=float) for t in ts])
    dh = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
    d = float(np.linalg.norm(pts[-1] - pts[0]))
    return (dh - d) / d ** 3, pts


def refute_extrinsic_curvature_by_bisection(curve: Callable, sigma: float,
                                            scale_hi: float = 1.0, scale_lo: float = 1e-12,
                                            m: int = 401, iters: int = 60) -> RegularityReport:
    """Find a scale e where the pair curve(-e), curve(e) violates the cubic bound.

    The ratio is evaluated on an inscribed polygon (a lower bound for the
    intrinsic distance), so a violation is a violation of the set itself.
    Bisection runs on log(e) between scale_lo and scale_hi.
    """
    params = {"sigma": sigma, "scale_hi": scale_hi, "scale_lo": scale_lo, "m": m}

    def viol(e):
        return chord_ratio(curve, -e, e, m)[0] > sigma

    if viol(scale_hi):
        lo = scale_hi
    elif not viol(scale_lo):
        return RegularityReport("extrinsic_curvature_bisection", Verdict.INCONCLUSIVE, params,
                                notes="no violating scale in the bracket")
    else:
        a, b = math.log(scale_lo), math.log(scale_hi)  # viol(a), not viol(b)
        for _ in range(iters):
            mid = 0.5 * (a + b)
            if viol(math.exp(mid)):
                a = mid
            else:
                b = mid
        lo = math.exp(a)
    ratio, pts = chord_ratio(curve, -lo, lo, m)
    d = float(np.linalg.norm(pts[-1] - pts[0]))
    dh = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
    ce = {"p": pts[0], "q": pts[-1], "scale": lo, "d_hat": dh, "d": d, "ratio": ratio,
          "path": pts}
    return RegularityReport("extrinsic_curvature_bisection", Verdict.REFUTED, params,
                            margin=sigma - ratio, counterexample=ce,
                            samples={"path_points": m})


# ------------------------------------------------------------------- UAG
def _uag_sup(S, x, x2, eps, samples):
    """(sup ratio, time, witness) for the witness generator matching S."""
    if isinstance(S, TentGraph):
        r, t = tent_witness_sup_ratio(float(x[0]), float(x2[0]))
        return r, t, None
    px, px2 = Point(x, S.space), Point(x2, S.space)
    if isinstance(S, Epigraph):
        w = epigraph_uag_witness(S, px, px2, eps / 2)
    elif isinstance(S, ConstraintSet):
        w = mfcq_uag_witness(S, px, px2, eps / 2, samples)
    elif isinstance(S, SmallSphere):
        w = small_sphere_arc_witness(S, px, px2)
    elif isinstance(S, (Halfspace, Ball, Box, AffineSubspace, GreatSubsphere)):
        w = geodesic_witness(px, px2)
    else:
        raise NotImplementedError
    r, t = w.sup_ratio(samples)
    return r, t, w


def _cloud_path_witness(est, a, b):
    pts = _path_coords(est, a, b)
    space = est.cloud.space
    seg = space.dist_coords(pts[:-1], pts[1:])
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    g = geodesic_between(Point(pts[0], space), Point(pts[-1], space))
    l = g.length

    def evaluator(ts):
        s = np.clip(np.asarray(ts, dtype=float) / l, 0, 1) * cum[-1]
        k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
        frac = np.where(seg[k] > 0, (s - cum[k]) / np.where(seg[k] > 0, seg[k], 1), 0)
        out = pts[k] + frac[:, None] * (pts[k + 1] - pts[k])
        return space.normalize(out)

    return WitnessCurve(l, evaluator, g)


def check_uag(S: SetDescriptor, z: Point, eps: float, R: float, samples: int = 200,
              seed: int = 0, curve_samples: int = 1024, h: Optional[float] = None,
              pairs=None) -> RegularityReport:
    """Sampled pairs x, x' in B(z, R) with a witness curve of sup ratio < eps.

    Witnesses: tent walk, epigraph and MFCQ bulges, smooth-image pushforward,
    small-circle arcs, straight segments for convex sets, and graph shortest
    paths for point clouds (``h`` is the neighbourhood radius). A witness that
    fails cannot refute the property (another curve may work), so failures
    give Inconclusive.
    """
    params = {"eps": eps, "R": R, "samples": samples, "seed": seed}
    rng = np.random.default_rng(seed)
    est = None
    if isinstance(S, PointCloud):
        if h is None:
            raise GeometryError("point-cloud UAG checks need the neighbourhood radius h")
        est = IntrinsicMetricEstimate(S, h)
    elif not isinstance(S, (TentGraph, Epigraph, ConstraintSet, SmallSphere, SmoothImage,
                            Halfspace, Ball, Box, AffineSubspace, GreatSubsphere)):
        return RegularityReport("uag", Verdict.INCONCLUSIVE, params,
                                notes=f"no witness generator for {type(S).__name__}")
    if pairs is None:
        pairs = _uag_pairs(S, z, R, samples, rng)
    if len(pairs) == 0:
        return RegularityReport("uag", Verdict.INCONCLUSIVE, params,
                                notes="no member pairs found in the ball")
    worst, worst_rec, failures = -1.0, None, []
    for x, x2, ux, ux2 in pairs:
        try:
            if est is not None:
                w = _cloud_path_witness(est, int(ux), int(ux2))
                r, t = w.sup_ratio(curve_samples)
            elif isinstance(S, SmoothImage):
                w = smooth_image_uag_witness(S, ux, ux2)
                r, t = w.sup_ratio(curve_samples)
            else:
                r, t, _ = _uag_sup(S, x, x2, eps, curve_samples)
        except WitnessFailure as exc:
            failures.append({"x": x, "x_prime": x2, "t": exc.t, "violation": exc.violation})
            continue
        if r > worst:
            worst, worst_rec = r, {"x": x, "x_prime": x2, "t": t, "ratio": r}
    count = {"pairs": len(pairs), "witness_failures": len(failures)}
    if failures:
        return RegularityReport("uag", Verdict.INCONCLUSIVE, params, witness=worst_rec,
                                counterexample=failures[0], samples=count,
                                notes="a witness curve left the set")
    verdict = Verdict.CERTIFIED if worst < eps else Verdict.INCONCLUSIVE
    return RegularityReport("uag", verdict, {**params, "worst_ratio": worst},
                            margin=eps - worst, witness=worst_rec, samples=count,
                            notes="" if verdict is Verdict.CERTIFIED else
                            "the generated witness exceeded eps")


def _uag_pairs(S, z, R, n, rng):
    """List of (x, x', param_x, param_x') member pairs in B(z, R)."""
    if isinstance(S, SmoothImage):
        X, U = _smooth_image_members(S, z, R, 2 * n, rng)
        k = len(X) // 2
        return [(X[i], X[k + i], U[i], U[k + i]) for i in range(k)
                if np.linalg.norm(U[i] - U[k + i]) > 0]
    if isinstance(S, PointCloud):
        idx = S.restrict(z, R)
        if len(idx) < 2:
            return []
        a = rng.choice(idx, n)
        b = rng.choice(idx, n)
        return [(S.points[i], S.points[j], i, j) for i, j in zip(a, b) if i != j]
    X = sample_members(S, z, R, 2 * n, rng)
    k = len(X) // 2
    out = []
    for i in range(k):
        x, x2 = X[i], X[k + i]
        if float(S.space.dist_coords(x, x2)) > 0:
            out.append((x, x2, None, None))
    return out


# -------------------------------------------------------- super-regularity
def check_super_regularity(S: SetDescriptor, z: Point, eps: float, r: float,
                           samples: int = DEFAULT_SAMPLES, seed: int = 0,
                           partners: int = DEFAULT_PARTNERS) -> RegularityReport:
    """Angle test at projections: angle_x(y, x') >= pi/2 - eps.

    y is drawn from B(z, r/2) outside S, x ranges over P_S(y), and x' over
    sampled members of S in B(z, r) distinct from x.
    """
    params = {"eps": eps, "r": r, "samples": samples, "seed": seed, "partners": partners}
    space = S.space
    if space.kind is Kind.SPHERE and not r < space.diameter:
        raise GeometryError("r must be below the diameter of the sphere")
    rng = np.random.default_rng(seed)
    Y = _outside_samples(S, z, r / 2, samples, rng)
    Xp = sample_members(S, z, r, partners, rng)
    thresh = math.pi / 2 - eps
    worst, rec, used, failed = math.inf, None, 0, 0
    for y in Y:
        try:
            res = project(S, Point(y, space))
        except (NonUniqueProjectionError, SolverFailure):
            failed += 1
            continue
        if res.distance <= MEMBER_TOL:
            continue
        used += 1
        for xp in res.nearest:
            x = xp.coords
            others = Xp[space.dist_coords(Xp, x) > 0]
            if len(others) == 0:
                continue
            ang = angles_at(space, x, y, others)
            k = int(np.argmin(ang))
            if ang[k] < worst:
                worst = float(ang[k])
                rec = {"y": y, "x": x, "x_prime": others[k], "z": z.coords,
                       "angle": worst, "threshold": thresh}
    count = {"y": int(len(Y)), "used": used, "projection_failures": failed,
             "partners": int(len(Xp))}
    if rec is None:
        return RegularityReport("super_regularity", Verdict.INCONCLUSIVE, params,
                                samples=count, notes="no usable (y, x, x') triples")
    margin = worst - thresh
    if margin < 0:
        return RegularityReport("super_regularity", Verdict.REFUTED, params, margin=margin,
                                counterexample=rec, samples=count)
    return RegularityReport("super_regularity", Verdict.CERTIFIED, params, margin=margin,
                            witness=rec, samples=count)


# --------------------------------------------------- separable intersection
def check_separable_intersection(A: SetDescriptor, B: SetDescriptor, z: Point, alpha: float,
                                 r: float, samples: int = 2000,
                                 seed: int = 0) -> RegularityReport:
    """angle_y(x, x') >= alpha for x in A near z, y in P_B(x) outside A, x' in P_A(y)."""
    params = {"alpha": alpha, "r": r, "samples": samples, "seed": seed}
    space = A.space
    rng = np.random.default_rng(seed)
    X = sample_members(A, z, r, samples, rng)
    X = X[~B.contains_coords(X, MEMBER_TOL)] if len(X) else X
    if len(X) == 0:
        return RegularityReport("separable_intersection", Verdict.CERTIFIED, params,
                                margin=math.inf, samples={"x": 0},
                                notes="vacuous: no sampled point of A near z lies outside B")
    worst, rec, used = math.inf, None, 0
    for x in X:
        try:
            ys = project(B, Point(x, space)).nearest
        except (NonUniqueProjectionError, SolverFailure):
            continue
        for yp in ys:
            y = yp.coords
            if A._contains(y, MEMBER_TOL):
                continue
            if max(float(space.dist_coords(y, x)), float(space.dist_coords(y, z.coords))) >= r / 2:
                continue
            try:
                xps = project(A, yp).nearest
            except (NonUniqueProjectionError, SolverFailure):
                continue
            used += 1
            for xpp in xps:
                ang = float(angles_at(space, y, x, xpp.coords)[0])
                if ang < worst:
                    worst = ang
                    rec = {"x": x, "y": y, "x_prime": xpp.coords, "angle": ang}
    count = {"x": int(len(X)), "used": used}
    if rec is None:
        return RegularityReport("separable_intersection", Verdict.INCONCLUSIVE, params,
                                samples=count, notes="no valid (x, y, x') triples")
    margin = worst - alpha
    verdict = Verdict.CERTIFIED if margin >= 0 else Verdict.REFUTED
    return RegularityReport("separable_intersection", verdict, params, margin=margin,
                            witness=rec if margin >= 0 else None,
                            counterexample=rec if margin < 0 else None, samples=count)


def angle_at_intersection(A: SetDescriptor, B: SetDescriptor, z: Point, R: float,
                          samples: int = 2000, seed: int = 0) -> float:
    """Infimum of angle_z(p, q) over sampled p in A \\ B and q in B \\ A near z.

    Returns NaN when either sample class is empty.
    """
    space = A.space
    rng = np.random.default_rng(seed)
    P = sample_members(A, z, R, samples, rng)
    Q = sample_members(B, z, R, samples, rng)
    P = P[(~B.contains_coords(P, MEMBER_TOL)) & (space.dist_coords(P, z.coords) > 0)] \
        if len(P) else P
    Q = Q[(~A.contains_coords(Q, MEMBER_TOL)) & (space.dist_coords(Q, z.coords) > 0)] \
        if len(Q) else Q
    if len(P) == 0 or len(Q) == 0:
        return float("nan")
    U = _unit_logs(space, z.coords, P)
    V = _unit_logs(space, z.coords, Q)
    best = math.inf
    for u in U:
        ang = 2.0 * np.arctan2(space.norm(z.coords, V - u), space.norm(z.coords, V + u))
        best = min(best, float(np.min(ang)))
    return best


# ------------------------------------------------------------ transversality
def default_directions(space: ModelSpace, z: Point, count: int = 360) -> np.ndarray:
    """Unit tangents at z: the basis axes with both signs plus an even fan or random set."""
    basis = space.tangent_basis(z.coords)
    dirs = [s * b for b in basis for s in (1.0, -1.0)]
    if space.dim == 2:
        th = 2 * np.pi * np.arange(count) / count
        dirs += list(np.cos(th)[:, None] * basis[0] + np.sin(th)[:, None] * basis[1])
    else:
        g = np.random.default_rng(0).standard_normal((count, space.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        dirs += list(g @ basis)
    return np.array(dirs)


def _in_projection(S, p, z, tol):
    """z in P_S(p), decided by d(p, z) <= dist(p, S) + tol."""
    try:
        d = project(S, p).distance
    except NonUniqueProjectionError as exc:
        d = min(dist(p, q) for q in exc.representatives)
    return dist(p, z) <= d + tol


def refute_transversality(A: SetDescriptor, B: SetDescriptor, z: Point, directions=None,
                          lengths: Sequence[float] = (0.2, 0.05, 0.01),
                          tol: float = 1e-9) -> RegularityReport:
    """Search geodesics through z = gamma(l/2) with z in P_A(gamma(0)) and P_B(gamma(l))."""
    space = A.space
    dirs = default_directions(space, z) if directions is None else np.atleast_2d(directions)
    params = {"lengths": list(lengths), "directions": int(len(dirs)), "tol": tol}
    tried = 0
    for l in lengths:
        for u in dirs:
            u = space.to_tangent(z.coords, u)
            u = u / space.norm(z.coords, u)
            p0 = Point(space.exp_coords(z.coords, -0.5 * l * u), space)
            p1 = Point(space.exp_coords(z.coords, 0.5 * l * u), space)
            tried += 1
            if _in_projection(A, p0, z, tol) and _in_projection(B, p1, z, tol):
                ce = {"gamma_start": p0.coords, "gamma_end": p1.coords, "z": z.coords,
                      "length": l, "direction": u}
                return RegularityReport("transversality", Verdict.REFUTED, params,
                                        counterexample=ce, samples={"geodesics": tried})
    return RegularityReport("transversality", Verdict.CERTIFIED, params,
                            samples={"geodesics": tried},
                            notes="no separating geodesic among the sampled ones")


# ----------------------------------------------------- equivalence predicates
def prox_regularity_cross_check(S: SetDescriptor, cloud: PointCloud, z: Point, r: float,
                                sigma: float, h: float, samples: int = 500,
                                seed: int = 0) -> dict:
    """Three independently sampled predicates that must agree on closed subsets of R^n.

    prox_regular: uniqueness profile of P_S on B(z, r); two_convex: the cloud
    check on B(z, r); finite_curvature: the cloud check at z with radius r.
    """
    prof = projection_uniqueness_profile(S, z, [r], samples, seed)[0]
    two = check_two_convexity_ball(cloud, z, sigma, r, h)
    fin = check_finite_extrinsic_curvature(cloud, z, sigma, r, h)
    votes = {"prox_regular": prof["fraction"] == 0.0,
             "two_convex": two.certified,
             "finite_curvature": fin.certified}
    return {**votes, "consistent": len(set(votes.values())) == 1,
            "profile": prof, "reports": [two.to_dict(), fin.to_dict()]}


# ------------------------------------------------------------------- replay
def replay(report: RegularityReport, A: Optional[SetDescriptor] = None,
           B: Optional[SetDescriptor] = None, tol: float = 1e-12) -> bool:
    """Re-evaluate a refutation's counterexample; True when the violation reproduces."""
    if not report.refuted:
        raise GeometryError("only refutations carry a counterexample")
    ce, p = report.counterexample, report.parameters
    check = report.check
    if check == "super_regularity":
        space = A.space
        y, x, xp = (np.asarray(ce[k], dtype=float) for k in ("y", "x", "x_prime"))
        res = project(A, Point(y, space))
        x_ok = any(float(space.dist_coords(q.coords, x)) <= tol for q in res.nearest)
        member = A._contains(xp, tol) and A._contains(x, tol)
        z = np.asarray(ce["z"], dtype=float)
        inside = (float(space.dist_coords(y, z)) < p["r"] / 2
                  and float(space.dist_coords(xp, z)) < p["r"])
        ang = float(angles_at(space, x, y, xp)[0])
        return bool(x_ok and member and inside and ang < math.pi / 2 - p["eps"])
    if check in ("finite_extrinsic_curvature", "two_convexity_ball",
                 "extrinsic_curvature_bisection"):
        path = np.asarray(ce["path"], dtype=float)
        dh = float(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1)))
        d = float(np.linalg.norm(path[-1] - path[0]))
        on_set = A is None or all(A._contains(q, tol) for q in path)
        return bool(on_set and dh - d > p["sigma"] * d ** 3 + ce.get("slack", 0.0))
    if check == "separable_intersection":
        space = A.space
        x, y, xp = (np.asarray(ce[k], dtype=float) for k in ("x", "y", "x_prime"))
        ok_y = any(float(space.dist_coords(q.coords, y)) <= tol
                   for q in project(B, Point(x, space)).nearest)
        ok_x = any(float(space.dist_coords(q.coords, xp)) <= tol
                   for q in project(A, Point(y, space)).nearest)
        return bool(ok_y and ok_x and float(angles_at(space, y, x, xp)[0]) < p["alpha"])
    if check == "transversality":
        space = A.space
        z = Point(np.asarray(ce["z"], dtype=float), space)
        p0 = Point(np.asarray(ce["gamma_start"], dtype=float), space)
        p1 = Point(np.asarray(ce["gamma_end"], dtype=float), space)
        return bool(_in_projection(A, p0, z, p["tol"]) and _in_projection(B, p1, z, p["tol"]))
    raise GeometryError(f"no replay rule for {check}")


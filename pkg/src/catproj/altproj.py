"""Alternating projections, contraction checks and rate certificates."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np

from catproj.errors import (
    GeometryError,
    HypothesisViolation,
    InsufficientDataError,
    NonUniqueProjectionError,
    SolverFailure,
)
from catproj.model_space import Point, dist
from catproj.projection import project
from catproj.sets import SetDescriptor

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITERS = 100_000
MIN_FIT_POINTS = 6


class StopReason(str, Enum):
    CONVERGED = "Converged"
    MAX_ITERS = "MaxIters"
    PROJECTION_FAILURE = "ProjectionFailure"


@dataclass
class AltProjTrace:
    iterates: List[Point]
    step_dists: List[float]
    stop: StopReason
    multivalued_steps: List[int] = field(default_factory=list)
    failure: str = ""

    @property
    def limit(self) -> Point:
        """Limit estimate z': the final iterate."""
        return self.iterates[-1]

    @property
    def ratios(self) -> List[float]:
        """d(x_{n+1}, x_{n+2}) / d(x_n, x_{n+1}); NaN where the denominator vanishes."""
        s = self.step_dists
        return [s[i + 1] / s[i] if s[i] > 0 else float("nan") for i in range(len(s) - 1)]

    def coords(self) -> np.ndarray:
        return np.array([p.coords for p in self.iterates])

    def dists_to_limit(self) -> np.ndarray:
        z = self.limit
        return np.array([dist(p, z) for p in self.iterates])


def run_alternating_projections(A: SetDescriptor, B: SetDescriptor, x0: Point,
                                tol: float = DEFAULT_TOL,
                                max_iters: int = DEFAULT_MAX_ITERS) -> AltProjTrace:
    """x_{2n+1} in P_B(x_{2n}), x_{2n+2} in P_A(x_{2n+1}), starting from x0 in A.

    Multivalued projections are resolved by the lexicographic tie-break and
    their step indices recorded. Stops when a step is shorter than tol.
    """
    if not A.contains(x0):
        raise GeometryError("the starting point must lie in A")
    its, steps, multi = [x0], [], []
    x = x0
    for n in range(max_iters):
        target = B if n % 2 == 0 else A
        try:
            res = project(target, x)
        except (NonUniqueProjectionError, SolverFailure) as exc:
            return AltProjTrace(its, steps, StopReason.PROJECTION_FAILURE, multi, str(exc))
        if res.multivalued:
            multi.append(n + 1)
        nxt = res.point
        step = dist(x, nxt)
        its.append(nxt)
        steps.append(step)
        x = nxt
        if step < tol:
            return AltProjTrace(its, steps, StopReason.CONVERGED, multi)
    return AltProjTrace(its, steps, StopReason.MAX_ITERS, multi)


# ----------------------------------------------------------- certificate
@dataclass(frozen=True)
class RateCertificate:
    alpha: float
    eps: float
    r: float
    kappa: float
    c_prime: float
    c: float

    @property
    def rate(self) -> float:
        return math.sqrt(self.c)

    @property
    def start_radius(self) -> float:
        """Radius (1 - c) r / 4 of the admissible starting ball around z."""
        return (1.0 - self.c) * self.r / 4.0

    def tail_bound(self, D: float, n) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        return D * self.rate ** n * (1.0 + self.c) / (1.0 - self.c)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "eps": self.eps, "r": self.r, "kappa": self.kappa,
                "c_prime": self.c_prime, "c": self.c, "rate": self.rate,
                "start_radius": self.start_radius}


def certificate_constants(alpha: float, eps: float, r: float, kappa: float) -> RateCertificate:
    """c' = (cos a + sin e) / (1 - sin e) and c = c' / cos^2(r sqrt(k) / 2).

    kappa = 0 is accepted for CAT(0) spaces, where c = c'.
    """
    if not 0 < alpha < math.pi / 2:
        raise GeometryError("alpha must lie in (0, pi/2)")
    if not 0 < eps < 1:
        raise GeometryError("eps must lie in (0, 1)")
    if not kappa >= 0:
        raise GeometryError("kappa must be nonnegative")
    if not 0 < r < (math.pi / math.sqrt(kappa) / 2 if kappa > 0 else math.inf):
        raise GeometryError("r must lie in (0, D_k / 2)")
    se = math.sin(eps)
    c_prime = (math.cos(alpha) + se) / (1.0 - se)
    if c_prime >= 1:
        raise HypothesisViolation(f"c' = (cos alpha + sin eps)/(1 - sin eps) = {c_prime!r} >= 1")
    c = c_prime / math.cos(r * math.sqrt(kappa) / 2.0) ** 2
    if c >= 1:
        raise HypothesisViolation(f"c = c'/cos^2(r sqrt(kappa)/2) = {c!r} >= 1")
    return RateCertificate(alpha, eps, r, kappa, c_prime, c)


def small_sphere_eps(r: float) -> float:
    """eps for which the circle <x, a> = 1/2 on the unit sphere is (eps, r)-super-regular.

    Inverts r = arccos(cos^2 eps) / 2, valid for 0 < r < pi/4.
    """
    if not 0 < r < math.pi / 4:
        raise GeometryError("r must lie in (0, pi/4)")
    return math.acos(math.sqrt(math.cos(2.0 * r)))


# ------------------------------------------------------------------ checks
@dataclass(frozen=True)
class StepCheck:
    n: int
    in_window: bool
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return (not self.in_window) or self.lhs <= self.rhs


def per_step_contraction_check(trace: AltProjTrace, c: float, r: float,
                               z: Point) -> List[StepCheck]:
    """d(x_{2n+1}, x_{2n+2}) <= c d(x_{2n}, x_{2n+1}) wherever d(z, x_{2n+1}) < r/2
    and d(x_{2n}, x_{2n+1}) < r/2."""
    its, s = trace.iterates, trace.step_dists
    out = []
    for n in range((len(s)) // 2):
        a, b = s[2 * n], s[2 * n + 1]
        window = dist(z, its[2 * n + 1]) < r / 2 and a < r / 2
        out.append(StepCheck(n, window, b, c * a))
    return out


def induction_bounds_check(trace: AltProjTrace, c: float, z: Point) -> List[dict]:
    """The three induction bounds d(z, x_{2n+1}) <= 2D(1 - c^{n+1})/(1 - c),
    d(x_{2n}, x_{2n+1}) <= D c^n and d(x_{2n+1}, x_{2n+2}) <= D c^{n+1}."""
    its, s = trace.iterates, trace.step_dists
    D = dist(z, its[0])
    rows = []
    for n in range(len(s) // 2):
        rows.append({
            "n": n,
            "z_odd": (dist(z, its[2 * n + 1]), 2 * D * (1 - c ** (n + 1)) / (1 - c)),
            "even_step": (s[2 * n], D * c ** n),
            "odd_step": (s[2 * n + 1], D * c ** (n + 1)),
        })
    for row in rows:
        row["passed"] = all(v[0] <= v[1] for k, v in row.items() if isinstance(v, tuple))
    return rows


def cauchy_sums_check(trace: AltProjTrace, c: float, D: float) -> List[dict]:
    """Tail sums from 2m+1 and 2m against 2Dc^{m+1}/(1-c) and Dc^m(1+c)/(1-c)."""
    s = np.asarray(trace.step_dists)
    tails = np.concatenate([np.cumsum(s[::-1])[::-1], [0.0]])
    rows = []
    for m in range(len(s) // 2):
        odd = float(tails[2 * m + 1])
        even = float(tails[2 * m])
        b_odd = 2 * D * c ** (m + 1) / (1 - c)
        b_even = D * c ** m * (1 + c) / (1 - c)
        rows.append({"m": m, "odd": (odd, b_odd), "even": (even, b_even),
                     "passed": odd <= b_odd and even <= b_even})
    return rows


def tail_bound_check(trace: AltProjTrace, cert: RateCertificate, D: float) -> dict:
    """d(x_n, z') <= D sqrt(c)^n (1 + c)/(1 - c) for every n."""
    d = trace.dists_to_limit()
    n = np.arange(len(d))
    bound = cert.tail_bound(D, n)
    slack = bound - d
    return {"passed": bool(np.all(slack >= 0)), "slack": slack, "dists": d, "bounds": bound,
            "failing": [int(i) for i in np.flatnonzero(slack < 0)]}


# --------------------------------------------------------------- rate fit
@dataclass(frozen=True)
class RateFit:
    rate: float
    k: float
    residual: float
    points: int
    converging: bool


def estimate_linear_rate(trace_or_dists, steps=None, floor_factor: float = 100.0) -> RateFit:
    """Least-squares fit log d(x_n, z') ~ log k + n log a over the tail half.

    The last 10% of iterates are discarded, as are iterates whose distance
    to z' is below floor_factor times the truncation error (estimated by the
    largest of the last three steps): there d(x_n, z') measures where the run
    stopped rather than the true limit. The residual is the RMS of the
    natural-log fit.
    """
    if isinstance(trace_or_dists, AltProjTrace):
        d = trace_or_dists.dists_to_limit()
        steps = trace_or_dists.step_dists
    else:
        d = np.asarray(trace_or_dists, dtype=float)
    N = len(d)
    floor = floor_factor * max(steps[-3:]) if steps is not None and len(steps) else 0.0
    n = np.arange(N)
    usable = n[(n < N - int(math.ceil(0.1 * N))) & (d > floor)]
    sel = usable[usable >= (usable[0] + usable[-1] + 1) // 2] if len(usable) else usable
    if len(sel) < MIN_FIT_POINTS:
        # the tail half is too short; fall back to every usable point
        sel = usable
    if len(sel) < MIN_FIT_POINTS:
        raise InsufficientDataError(
            f"need at least {MIN_FIT_POINTS} usable iterates, got {len(sel)}")
    x, y = sel.astype(float), np.log(d[sel])
    slope, icpt = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + icpt)) ** 2)))
    rate = float(math.exp(slope))
    return RateFit(rate, float(math.exp(icpt)), resid, len(sel), rate < 1.0)


# ------------------------------------------------------------------ export
def trace_to_csv(trace: AltProjTrace) -> str:
    """Columns n, x_0..x_k, step_dist, ratio with 17 significant digits."""
    coords = trace.coords()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n"] + [f"x{i}" for i in range(coords.shape[1])] + ["step_dist", "ratio"])
    steps = trace.step_dists + [float("nan")]
    ratios = [float("nan")] + trace.ratios + [float("nan")]
    for i, row in enumerate(coords):
        w.writerow([i] + [_fmt(v) for v in row] + [_fmt(steps[i]), _fmt(ratios[i])])
    return buf.getvalue()


def _fmt(v) -> str:
    return "%.17g" % v


def trace_from_csv(text: str, space) -> AltProjTrace:
    rows = list(csv.reader(io.StringIO(text)))
    body = rows[1:]
    k = len(rows[0]) - 3
    its = [Point(np.array([float(v) for v in r[1:1 + k]]), space) for r in body]
    steps = [float(r[1 + k]) for r in body[:-1]]
    return AltProjTrace(its, steps, StopReason.CONVERGED)


def trace_to_json(trace: AltProjTrace, cert: Optional[RateCertificate] = None,
                  fit: Optional[RateFit] = None) -> str:
    doc = {
        "stop": trace.stop.value,
        "iterates": trace.coords().tolist(),
        "step_dists": list(trace.step_dists),
        "multivalued_steps": trace.multivalued_steps,
        "limit": trace.limit.coords.tolist(),
        "certificate": cert.to_dict() if cert else None,
        "fit": fit.__dict__ if fit else None,
    }
    return json.dumps(doc, sort_keys=True, indent=2)

"""Execute a validated experiment configuration and write its artifacts."""

from __future__ import annotations

import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
from scipy.optimize import brentq

from catproj.altproj import (
    certificate_constants,
    estimate_linear_rate,
    induction_bounds_check,
    per_step_contraction_check,
    run_alternating_projections,
    tail_bound_check,
    trace_to_csv,
)
from catproj.config import ExperimentConfig, Request
from catproj.errors import GeometryError, InsufficientDataError
from catproj.model_space import Kind, Point, dist, random_unit_tangents
from catproj.projection import project, projection_uniqueness_profile
from catproj.regularity import (
    _jsonable,
    angle_at_intersection,
    check_finite_extrinsic_curvature,
    check_separable_intersection,
    check_super_regularity,
    check_two_convexity_ball,
    check_uag,
    default_directions,
    refute_extrinsic_curvature_by_bisection,
    refute_transversality,
)
from catproj.sets import PointCloud, power_graph_map


def write_atomic(path: str, text: str) -> None:
    """Write text to path through a temporary file and a rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(doc) -> str:
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"


@dataclass
class RequestOutcome:
    id: str
    kind: str
    ok: bool
    result: str
    theoretical_rate: float = float("nan")
    empirical_rate: float = float("nan")
    margin: float = float("nan")
    error: str = ""
    files: List[str] = field(default_factory=list)
    seconds: float = 0.0


@dataclass
class ExperimentResult:
    outcomes: List[RequestOutcome]
    out_dir: str

    @property
    def ok(self) -> bool:
        return all(o.ok for o in self.outcomes)


# ------------------------------------------------------------------- runs
def start_point(A, start: dict) -> Point:
    """Point of A at distance start['distance'] from z, reached from z along a direction.

    The query exp_z(s u) is projected onto A and s is solved for by Brent's
    method so that the projection sits at the requested distance.
    """
    z, target = start["z"], start["distance"]
    space = z.space
    if "direction" in start:
        u = space.to_tangent(z.coords, start["direction"])
        nu = float(space.norm(z.coords, u))
        if nu == 0:
            raise GeometryError("start direction is normal to the space at z")
        u = u / nu
    else:
        u = random_unit_tangents(z, 1, np.random.default_rng(start["seed"]))[0]

    def proj(s):
        return project(A, Point(space.exp_coords(z.coords, s * u), space)).point

    def g(s):
        return dist(z, proj(s)) - target

    hi = target
    limit = space.diameter / 2 if math.isfinite(space.diameter) else math.inf
    while g(hi) < 0:
        hi *= 2
        if hi >= limit:
            raise GeometryError("no point of A at the requested distance along the direction")
    s = brentq(g, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return proj(s)


def _run(cfg: ExperimentConfig, req: Request, ctx: dict, out_dir: str) -> RequestOutcome:
    p = req.params
    A, B = p["A"], p["B"]
    x0 = p["x0"] if "x0" in p else start_point(A, p["start"])
    trace = run_alternating_projections(A, B, x0, tol=p.get("tol", 1e-12),
                                        max_iters=p.get("max_iters", 100_000))
    doc: Dict = {"id": req.id, "kind": "run", "stop": trace.stop.value,
                 "failure": trace.failure, "iterations": len(trace.step_dists),
                 "x0": x0.coords, "limit": trace.limit.coords,
                 "multivalued_steps": trace.multivalued_steps,
                 "step_dists": trace.step_dists}
    out = RequestOutcome(req.id, req.kind, True, trace.stop.value)
    z = p.get("z")
    if z is not None:
        doc["z"] = z.coords
        doc["D"] = dist(z, x0)
    if p.get("fit", True):
        try:
            fit = estimate_linear_rate(trace)
            doc["fit"] = fit.__dict__
            out.empirical_rate = fit.rate
        except InsufficientDataError as exc:
            doc["fit"] = {"error": str(exc)}
    if "certificate" in p:
        c = p["certificate"]
        if "alpha_from" in c:
            sigma = ctx[c["alpha_from"]]
            if not math.isfinite(sigma):
                raise GeometryError(f"angle request {c['alpha_from']!r} produced no angle")
            alpha = c["alpha_factor"] * sigma
        else:
            alpha = c["alpha"]
        kappa = cfg.space.curvature if cfg.space.kind is Kind.SPHERE else 0.0
        cert = certificate_constants(alpha, c["eps"], c["r"], kappa)
        out.theoretical_rate = cert.rate
        D = doc["D"]
        steps = per_step_contraction_check(trace, cert.c, cert.r, z)
        window = [s for s in steps if s.in_window]
        tail = tail_bound_check(trace, cert, D)
        ind = induction_bounds_check(trace, cert.c, z)
        doc["certificate"] = {**cert.to_dict(), "sqrt_cos_alpha": math.sqrt(math.cos(alpha))}
        doc["checks"] = {
            "claim_passed": all(s.passed for s in steps),
            "claim_in_window_steps": len(window),
            "claim_min_slack": min((s.slack for s in window), default=float("nan")),
            "start_in_ball": D < cert.start_radius,
            "tail_bound_passed": tail["passed"],
            "tail_bound_failing": tail["failing"],
            "induction_passed": all(r["passed"] for r in ind),
        }
        out.margin = doc["checks"]["claim_min_slack"]
    if "csv" in cfg.formats:
        write_atomic(os.path.join(out_dir, f"{req.id}.csv"), trace_to_csv(trace))
        out.files.append(f"{req.id}.csv")
    out.ok = trace.stop.value != "ProjectionFailure"
    if not out.ok:
        out.error = trace.failure
    ctx[req.id] = doc
    return _finish(cfg, out, doc, out_dir)


def _finish(cfg, out, doc, out_dir):
    if "json" in cfg.formats:
        write_atomic(os.path.join(out_dir, f"{out.id}.json"), _dumps(doc))
        out.files.append(f"{out.id}.json")
    return out


# -------------------------------------------------------------- certifiers
def _certifier(cfg: ExperimentConfig, req: Request, ctx: dict, out_dir: str) -> RequestOutcome:
    p, k = req.params, req.kind
    opt = {key: p[key] for key in ("samples", "partners") if key in p}
    if k == "angle_at_intersection":
        sigma = angle_at_intersection(p["A"], p["B"], p["z"], p["R"], seed=p["seed"], **opt)
        ctx[req.id] = sigma
        doc = {"id": req.id, "kind": k, "angle": sigma,
               "parameters": {"R": p["R"], "seed": p["seed"], **opt}}
        out = RequestOutcome(req.id, k, math.isfinite(sigma),
                             f"angle = {sigma:.6g}" if math.isfinite(sigma) else "no samples",
                             margin=sigma)
        if not out.ok:
            out.error = "a sample class was empty"
        return _finish(cfg, out, doc, out_dir)
    if k == "uniqueness_profile":
        prof = projection_uniqueness_profile(p["set"], p["z"], p["radii"], seed=p["seed"], **opt)
        doc = {"id": req.id, "kind": k, "profile": prof}
        worst = max(r["fraction"] for r in prof)
        out = RequestOutcome(req.id, k, True, f"max fraction = {worst:.6g}", margin=worst)
        return _finish(cfg, out, doc, out_dir)
    if k == "uag":
        rep = check_uag(p["set"], p["z"], p["eps"], p["R"], seed=p["seed"], h=p.get("h"),
                        **opt)
    elif k == "super_regularity":
        rep = check_super_regularity(p["set"], p["z"], p["eps"], p["r"], seed=p["seed"], **opt)
    elif k == "separable_intersection":
        rep = check_separable_intersection(p["A"], p["B"], p["z"], p["alpha"], p["r"],
                                           seed=p["seed"], **opt)
    elif k in ("finite_extrinsic_curvature", "two_convexity_ball"):
        if not isinstance(p["set"], PointCloud):
            raise GeometryError(f"{k} needs a point-cloud set")
        if k == "finite_extrinsic_curvature":
            rep = check_finite_extrinsic_curvature(p["set"], p["z"], p["sigma"], p["r"], p["h"])
        else:
            rep = check_two_convexity_ball(p["set"], p["z"], p["sigma"], p["R"], p["h"])
    elif k == "extrinsic_bisection":
        kw = {key: p[key] for key in ("scale_hi", "scale_lo", "m") if key in p}
        rep = refute_extrinsic_curvature_by_bisection(power_graph_map(p["exponent"])[0],
                                                      p["sigma"], **kw)
    else:  # transversality
        dirs = None
        if "directions" in p:
            dirs = default_directions(p["A"].space, p["z"], p["directions"])
        kw = {"lengths": p["lengths"]} if "lengths" in p else {}
        rep = refute_transversality(p["A"], p["B"], p["z"], directions=dirs, **kw)
    doc = {"id": req.id, "kind": k, "seed": p["seed"], "report": rep.to_dict()}
    result = rep.verdict.value
    if "empirical_sigma" in rep.parameters:
        result += f" (max ratio {rep.parameters['empirical_sigma']:.6g})"
    out = RequestOutcome(req.id, k, True, result, margin=rep.margin)
    return _finish(cfg, out, doc, out_dir)


# ---------------------------------------------------------------- summary
def _num(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6g}"


def summary_markdown(outcomes: List[RequestOutcome]) -> str:
    lines = ["| request | kind | status | result | theoretical rate | empirical rate | margin |",
             "|---|---|---|---|---|---|---|"]
    for o in outcomes:
        status = "ok" if o.ok else "failed"
        res = o.result if o.ok or not o.error else f"{o.result}: {o.error}"
        res = res.replace("|", "\\|").replace("\n", " ")
        lines.append(f"| {o.id} | {o.kind} | {status} | {res} | {_num(o.theoretical_rate)} | "
                     f"{_num(o.empirical_rate)} | {_num(o.margin)} |")
    return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig, out_dir: str) -> ExperimentResult:
    """Execute every request in declared order.

    A request that raises is recorded as a failure entry; later requests still
    run and outputs already written are kept.
    """
    os.makedirs(out_dir, exist_ok=True)
    ctx: dict = {}
    outcomes = []
    for req in cfg.requests:
        t0 = time.perf_counter()
        try:
            fn = _run if req.kind == "run" else _certifier
            out = fn(cfg, req, ctx, out_dir)
        except Exception as exc:  # recorded per request, never fatal to the batch
            out = RequestOutcome(req.id, req.kind, False, "error",
                                 error=f"{type(exc).__name__}: {exc}")
            ctx[req.id] = float("nan")
            if "json" in cfg.formats:
                write_atomic(os.path.join(out_dir, f"{req.id}.json"),
                             _dumps({"id": req.id, "kind": req.kind, "error": out.error}))
        out.seconds = time.perf_counter() - t0
        outcomes.append(out)
    if "md" in cfg.formats:
        write_atomic(os.path.join(out_dir, "summary.md"), summary_markdown(outcomes))
    return ExperimentResult(outcomes, out_dir)

"""Experiment configuration: YAML parsing with line-anchored validation.

Schema (unknown keys are errors)::

    space:    {kind: sphere|euclidean|hyperbolic, dim: int, curvature: float}
    sets:     {name: {type: ..., <type parameters>}}
    requests: [{id: str, kind: ..., <kind parameters>}]
    output:   {formats: [csv, json, md]}          # optional

Set types: great_subsphere(b), small_sphere(a, h), halfspace(normal, offset),
ball(center, radius), affine(point, directions), euclidean_sphere(center,
radius), box(lower, upper), tent_graph(), power_graph(exponent, lo, hi),
circle_cloud(count, radius), curve_cloud(curve: power_graph, exponent, lo,
hi, count).

Request kinds and their parameters are listed in ``REQUEST_KEYS``. Every
certifier request needs an explicit ``seed``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml

from catproj.altproj import small_sphere_eps
from catproj.errors import GeometryError
from catproj.model_space import ModelSpace, euclidean, hyperbolic, sphere
from catproj.sets import (
    AffineSubspace,
    Ball,
    Box,
    EuclideanSphere,
    GreatSubsphere,
    Halfspace,
    PointCloud,
    SmallSphere,
    TentGraph,
    circle_cloud,
    power_graph,
    power_graph_map,
)


class ConfigError(ValueError):
    """Invalid configuration; carries the 1-based source line when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


SET_KEYS = {
    "great_subsphere": {"b"},
    "small_sphere": {"a", "h"},
    "halfspace": {"normal", "offset"},
    "ball": {"center", "radius"},
    "affine": {"point", "directions"},
    "euclidean_sphere": {"center", "radius"},
    "box": {"lower", "upper"},
    "tent_graph": set(),
    "power_graph": {"exponent", "lo", "hi"},
    "circle_cloud": {"count", "radius"},
    "curve_cloud": {"curve", "exponent", "lo", "hi", "count"},
}
SET_OPTIONAL = {"power_graph": {"exponent", "lo", "hi"}, "circle_cloud": {"radius"},
                "curve_cloud": {"exponent"}}

CERTIFIERS = {"uag", "super_regularity", "separable_intersection", "angle_at_intersection",
              "finite_extrinsic_curvature", "two_convexity_ball", "extrinsic_bisection",
              "transversality", "uniqueness_profile"}

REQUEST_KEYS = {
    "run": ({"A", "B"}, {"x0", "z", "start", "tol", "max_iters", "certificate", "fit"}),
    "uag": ({"set", "z", "eps", "R", "seed"}, {"samples", "h"}),
    "super_regularity": ({"set", "z", "eps", "r", "seed"}, {"samples", "partners"}),
    "separable_intersection": ({"A", "B", "z", "alpha", "r", "seed"}, {"samples"}),
    "angle_at_intersection": ({"A", "B", "z", "R", "seed"}, {"samples"}),
    "finite_extrinsic_curvature": ({"set", "z", "sigma", "r", "h", "seed"}, set()),
    "two_convexity_ball": ({"set", "z", "sigma", "R", "h", "seed"}, set()),
    "extrinsic_bisection": ({"exponent", "sigma", "seed"}, {"scale_hi", "scale_lo", "m"}),
    "transversality": ({"A", "B", "z", "seed"}, {"lengths", "directions"}),
    "uniqueness_profile": ({"set", "z", "radii", "seed"}, {"samples"}),
}
START_KEYS = {"z", "distance", "direction", "seed"}
CERT_KEYS = {"alpha", "alpha_from", "alpha_factor", "eps", "r"}
FORMATS = {"csv", "json", "md"}


# ------------------------------------------------------------------ loading
def _to_python(node, path, lines):
    """Convert a composed YAML node, recording the line of every path."""
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            if key in out:
                raise ConfigError(f"duplicate key '{key}'", k.start_mark.line + 1)
            lines[path + (key,)] = k.start_mark.line + 1
            out[key] = _to_python(v, path + (key,), lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, path + (i,), lines) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def load_text(text: str) -> Tuple[dict, dict]:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None) from None
    if node is None:
        raise ConfigError("empty configuration", 1)
    lines: Dict[tuple, int] = {}
    data = _to_python(node, (), lines)
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1)
    return data, lines


# --------------------------------------------------------------- validation
@dataclass
class Request:
    id: str
    kind: str
    params: dict
    line: int


@dataclass
class ExperimentConfig:
    space: ModelSpace
    sets: Dict[str, Any]
    requests: List[Request]
    formats: List[str] = field(default_factory=lambda: ["csv", "json", "md"])
    raw: dict = field(default_factory=dict)


class _Ctx:
    def __init__(self, lines):
        self.lines = lines

    def line(self, path):
        path = tuple(path)
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path)

    def fail(self, path, msg):
        raise ConfigError(f"{'.'.join(map(str, path))}: {msg}", self.line(path))

    def keys(self, d, path, required, optional=()):
        if not isinstance(d, dict):
            self.fail(path, "expected a mapping")
        for k in d:
            if k not in required and k not in optional:
                self.fail(tuple(path) + (k,), f"unknown key '{k}'")
        for k in sorted(required):
            if k not in d:
                self.fail(path, f"missing required key '{k}'")

    def number(self, d, path, key, lo=-math.inf, hi=math.inf, lo_open=False, hi_open=False):
        v = d[key]
        p = tuple(path) + (key,)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(p, f"expected a number, got {v!r}")
        v = float(v)
        if not math.isfinite(v) or v < lo or v > hi or (lo_open and v == lo) or (
                hi_open and v == hi):
            lb = "(" if lo_open else "["
            rb = ")" if hi_open else "]"
            self.fail(p, f"value {v!r} outside {lb}{lo}, {hi}{rb}")
        return v

    def integer(self, d, path, key, lo=1):
        v = d[key]
        if isinstance(v, bool) or not isinstance(v, int) or v < lo:
            self.fail(tuple(path) + (key,), f"expected an integer >= {lo}, got {v!r}")
        return v

    def vector(self, d, path, key, size=None):
        v = d[key]
        p = tuple(path) + (key,)
        if not isinstance(v, list) or not v or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            self.fail(p, "expected a nonempty list of numbers")
        if size is not None and len(v) != size:
            self.fail(p, f"expected {size} coordinates, got {len(v)}")
        return np.array(v, dtype=float)


def _space(ctx, d):
    path = ("space",)
    ctx.keys(d, path, {"kind", "dim"}, {"curvature"})
    kind = d["kind"]
    dim = ctx.integer(d, path, "dim")
    if kind == "euclidean":
        if "curvature" in d and ctx.number(d, path, "curvature") != 0:
            ctx.fail(path + ("curvature",), "euclidean space has curvature 0")
        return euclidean(dim)
    if kind == "sphere":
        k = ctx.number(d, path, "curvature", lo=0, lo_open=True) if "curvature" in d else 1.0
        return sphere(dim, k)
    if kind == "hyperbolic":
        k = ctx.number(d, path, "curvature", hi=0, hi_open=True) if "curvature" in d else -1.0
        return hyperbolic(dim, k)
    ctx.fail(path + ("kind",), f"unknown space kind {kind!r}")


def _unit(ctx, path, v):
    n = float(np.linalg.norm(v))
    if abs(n - 1.0) > 1e-9:
        ctx.fail(path, f"expected a unit vector (norm {n!r})")
    return v / n


def _build_set(ctx, space, name, d):
    path = ("sets", name)
    if not isinstance(d, dict) or "type" not in d:
        ctx.fail(path, "a set needs a 'type'")
    t = d["type"]
    if t not in SET_KEYS:
        ctx.fail(path + ("type",), f"unknown set type {t!r}")
    opt = SET_OPTIONAL.get(t, set())
    ctx.keys(d, path, (SET_KEYS[t] - opt) | {"type"}, opt)
    amb = space.ambient_dim

    def need(kind):
        if space.kind.value != kind:
            ctx.fail(path + ("type",), f"{t} requires a {kind} space")

    if t == "great_subsphere":
        need("sphere")
        return GreatSubsphere(space, _unit(ctx, path + ("b",), ctx.vector(d, path, "b", amb)))
    if t == "small_sphere":
        need("sphere")
        a = _unit(ctx, path + ("a",), ctx.vector(d, path, "a", amb))
        return SmallSphere(space, a, ctx.number(d, path, "h", -1, 1, True, True))
    if t == "ball":
        c = ctx.vector(d, path, "center", amb)
        try:
            center = space.point(c)
        except ValueError as exc:
            ctx.fail(path + ("center",), str(exc))
        return Ball(center, ctx.number(d, path, "radius", lo=0, lo_open=True))
    need("euclidean")
    if t == "halfspace":
        nrm = ctx.vector(d, path, "normal", amb)
        if not np.any(nrm):
            ctx.fail(path + ("normal",), "normal must be nonzero")
        return Halfspace(space, nrm, ctx.number(d, path, "offset"))
    if t == "affine":
        dirs = d["directions"]
        if not isinstance(dirs, list) or not dirs:
            ctx.fail(path + ("directions",), "expected a list of direction vectors")
        rows = [ctx.vector({"v": v}, path + ("directions", i), "v", amb)
                for i, v in enumerate(dirs)]
        try:
            return AffineSubspace(space, ctx.vector(d, path, "point", amb), np.array(rows))
        except ValueError as exc:
            ctx.fail(path + ("directions",), str(exc))
    if t == "euclidean_sphere":
        return EuclideanSphere(space, ctx.vector(d, path, "center", amb),
                               ctx.number(d, path, "radius", lo=0, lo_open=True))
    if t == "box":
        lo, hi = ctx.vector(d, path, "lower", amb), ctx.vector(d, path, "upper", amb)
        if np.any(lo > hi):
            ctx.fail(path + ("upper",), "upper must dominate lower")
        return Box(space, lo, hi)
    if amb != 2:
        ctx.fail(path + ("type",), f"{t} lives in the plane (dim 2)")
    if t == "tent_graph":
        return TentGraph(space)
    if t == "power_graph":
        p = ctx.number(d, path, "exponent", lo=1, lo_open=True) if "exponent" in d else 1.5
        lo = ctx.number(d, path, "lo") if "lo" in d else -1.0
        hi = ctx.number(d, path, "hi") if "hi" in d else 1.0
        if not lo < hi:
            ctx.fail(path + ("hi",), "need lo < hi")
        return power_graph(p, lo, hi)
    if t == "circle_cloud":
        r = ctx.number(d, path, "radius", lo=0, lo_open=True) if "radius" in d else 1.0
        return circle_cloud(ctx.integer(d, path, "count", 3), r)
    # curve_cloud
    if d["curve"] != "power_graph":
        ctx.fail(path + ("curve",), "only the power_graph curve is available")
    p = ctx.number(d, path, "exponent", lo=1, lo_open=True) if "exponent" in d else 1.5
    lo, hi = ctx.number(d, path, "lo"), ctx.number(d, path, "hi")
    if not lo < hi:
        ctx.fail(path + ("hi",), "need lo < hi")
    F, _ = power_graph_map(p)
    ts = np.linspace(lo, hi, ctx.integer(d, path, "count", 2))
    return PointCloud(space, np.array([F(t) for t in ts]))


def _point(ctx, space, d, path, key):
    v = ctx.vector(d, path, key, space.ambient_dim)
    try:
        return space.point(v)
    except ValueError as exc:
        ctx.fail(tuple(path) + (key,), str(exc))


def _request(ctx, space, sets, i, d, seen):
    path = ("requests", i)
    if not isinstance(d, dict):
        ctx.fail(path, "a request must be a mapping")
    for k in ("id", "kind"):
        if k not in d:
            ctx.fail(path, f"missing required key '{k}'")
    rid, kind = d["id"], d["kind"]
    if not isinstance(rid, str) or not rid or any(c in rid for c in "/\\ "):
        ctx.fail(path + ("id",), "id must be a nonempty string without spaces or slashes")
    if rid in seen:
        ctx.fail(path + ("id",), f"duplicate request id {rid!r}")
    if kind not in REQUEST_KEYS:
        ctx.fail(path + ("kind",), f"unknown request kind {kind!r}")
    req, opt = REQUEST_KEYS[kind]
    ctx.keys(d, path, req | {"id", "kind"}, opt)
    if kind == "run" and "certificate" in d and "z" not in d and "start" not in d:
        ctx.fail(path + ("certificate",), "the certificate checks need 'z' or a 'start' recipe")
    p: Dict[str, Any] = {}
    for key in ("set", "A", "B"):
        if key in d:
            if d[key] not in sets:
                ctx.fail(path + (key,), f"unknown set {d[key]!r}")
            p[key] = sets[d[key]]
            p[key + "_name"] = d[key]
    if "seed" in d:
        p["seed"] = ctx.integer(d, path, "seed", 0)
    if "z" in d:
        p["z"] = _point(ctx, space, d, path, "z")
    for key in ("eps", "R", "r", "alpha", "sigma", "h", "tol", "scale_hi", "scale_lo"):
        if key in d:
            p[key] = ctx.number(d, path, key, lo=0, lo_open=True)
    if "alpha" in p and not p["alpha"] < math.pi:
        ctx.fail(path + ("alpha",), "alpha must be below pi")
    if kind == "extrinsic_bisection":
        p["exponent"] = ctx.number(d, path, "exponent", lo=1, lo_open=True)
    for key in ("samples", "partners", "max_iters", "m"):
        if key in d:
            p[key] = ctx.integer(d, path, key, 1)
    if "radii" in d:
        if not isinstance(d["radii"], list) or not d["radii"]:
            ctx.fail(path + ("radii",), "expected a nonempty list")
        p["radii"] = [ctx.number({"v": v}, path + ("radii", j), "v", lo=0, lo_open=True)
                      for j, v in enumerate(d["radii"])]
    if "lengths" in d:
        if not isinstance(d["lengths"], list) or not d["lengths"]:
            ctx.fail(path + ("lengths",), "expected a nonempty list")
        p["lengths"] = [ctx.number({"v": v}, path + ("lengths", j), "v", lo=0, lo_open=True)
                        for j, v in enumerate(d["lengths"])]
    if "directions" in d:
        dirs = d["directions"]
        if not isinstance(dirs, int) or isinstance(dirs, bool) or dirs < 1:
            ctx.fail(path + ("directions",), "expected a positive integer direction count")
        p["directions"] = dirs
    if kind == "run":
        _run_params(ctx, space, d, path, p, seen)
    seen[rid] = kind
    return Request(rid, kind, p, ctx.line(path))


def _run_params(ctx, space, d, path, p, seen):
    if ("x0" in d) == ("start" in d):
        ctx.fail(path, "give exactly one of 'x0' or 'start'")
    if "x0" in d:
        p["x0"] = _point(ctx, space, d, path, "x0")
    else:
        s = d["start"]
        sp = path + ("start",)
        ctx.keys(s, sp, {"z", "distance"}, {"direction", "seed"})
        st = {"z": _point(ctx, space, s, sp, "z"),
              "distance": ctx.number(s, sp, "distance", lo=0, lo_open=True)}
        if "direction" in s:
            st["direction"] = ctx.vector(s, sp, "direction", space.ambient_dim)
        elif "seed" in s:
            st["seed"] = ctx.integer(s, sp, "seed", 0)
        else:
            ctx.fail(sp, "give a 'direction' or a 'seed' for the start direction")
        p["start"] = st
        p.setdefault("z", st["z"])
    if "fit" in d and not isinstance(d["fit"], bool):
        ctx.fail(path + ("fit",), "expected true or false")
    p["fit"] = d.get("fit", True)
    if "certificate" in d:
        c = d["certificate"]
        cp = path + ("certificate",)
        ctx.keys(c, cp, {"eps", "r"}, {"alpha", "alpha_from", "alpha_factor"})
        if ("alpha" in c) == ("alpha_from" in c):
            ctx.fail(cp, "give exactly one of 'alpha' or 'alpha_from'")
        cert = {"r": ctx.number(c, cp, "r", lo=0, lo_open=True)}
        if c["eps"] == "auto":
            A = p["A"]
            if not (isinstance(A, SmallSphere) and A.h == 0.5 and A.space.curvature == 1.0):
                ctx.fail(cp + ("eps",), "eps: auto needs A to be a small sphere with h = 0.5 "
                         "on the unit sphere")
            try:
                cert["eps"] = small_sphere_eps(cert["r"])
            except GeometryError as exc:
                ctx.fail(cp + ("r",), str(exc))
        else:
            cert["eps"] = ctx.number(c, cp, "eps", 0, 1, True, True)
        if "alpha" in c:
            cert["alpha"] = ctx.number(c, cp, "alpha", 0, math.pi / 2, True, True)
        else:
            src = c["alpha_from"]
            if seen.get(src) != "angle_at_intersection":
                ctx.fail(cp + ("alpha_from",),
                         f"{src!r} is not an earlier angle_at_intersection request")
            cert["alpha_from"] = src
            cert["alpha_factor"] = (ctx.number(c, cp, "alpha_factor", 0, 1, True)
                                    if "alpha_factor" in c else 1.0)
        p["certificate"] = cert


def parse_config(text: str, seed_override: Optional[int] = None) -> ExperimentConfig:
    data, lines = load_text(text)
    ctx = _Ctx(lines)
    ctx.keys(data, (), {"space", "sets", "requests"}, {"output"})
    space = _space(ctx, data["space"])
    if not isinstance(data["sets"], dict) or not data["sets"]:
        ctx.fail(("sets",), "expected a nonempty mapping of named sets")
    sets = {name: _build_set(ctx, space, name, d) for name, d in data["sets"].items()}
    reqs = data["requests"]
    if not isinstance(reqs, list) or not reqs:
        ctx.fail(("requests",), "expected a nonempty list")
    seen: Dict[str, str] = {}
    requests = [_request(ctx, space, sets, i, d, seen) for i, d in enumerate(reqs)]
    formats = ["csv", "json", "md"]
    if "output" in data:
        ctx.keys(data["output"], ("output",), set(), {"formats"})
        if "formats" in data["output"]:
            formats = data["output"]["formats"]
            if not isinstance(formats, list) or not set(formats) <= FORMATS:
                ctx.fail(("output", "formats"), f"formats must be a subset of {sorted(FORMATS)}")
    if seed_override is not None:
        for r in requests:
            if "seed" in r.params:
                r.params["seed"] = seed_override
            if "start" in r.params and "seed" in r.params["start"]:
                r.params["start"]["seed"] = seed_override
    return ExperimentConfig(space, sets, requests, formats, data)


def load_config(path: str, seed_override: Optional[int] = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), seed_override)

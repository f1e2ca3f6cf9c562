"""Built-in experiment configurations reproducing the worked examples."""

from __future__ import annotations

import math
from typing import Callable, Dict, Tuple

import numpy as np
import yaml

SQRT3 = math.sqrt(3.0)
SPHERE_Z = [0.5, -0.5 / SQRT3, math.sqrt(2.0 / 3.0)]
SPHERE_B = [0.5, SQRT3 / 2.0, 0.0]
TENT_N = 4


def _yaml(doc: dict) -> str:
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None, width=100)


def sphere_example() -> str:
    """Circle <x, e1> = 1/2 and great circle orthogonal to b on S^2, started at 10^-k."""
    z = np.array(SPHERE_Z)
    a = np.array([1.0, 0.0, 0.0])
    # tangent to the circle A at z
    t = np.cross(z, a)
    t = (t / np.linalg.norm(t)).tolist()
    reqs = [{"id": "angle", "kind": "angle_at_intersection", "A": "A", "B": "B", "z": SPHERE_Z,
             "R": 0.05, "samples": 2000, "seed": 0}]
    for k in range(1, 5):
        reqs.append({"id": f"run-k{k}", "kind": "run", "A": "A", "B": "B",
                     "start": {"z": SPHERE_Z, "distance": 10.0 ** -k, "direction": t},
                     "tol": 1e-12,
                     "certificate": {"alpha_from": "angle", "alpha_factor": 0.9,
                                     "eps": "auto", "r": 0.1}})
    reqs.append({"id": "separable", "kind": "separable_intersection", "A": "A", "B": "B",
                 "z": SPHERE_Z, "alpha": 0.2, "r": 0.1, "samples": 500, "seed": 0})
    reqs.append({"id": "transversality", "kind": "transversality", "A": "A", "B": "B",
                 "z": SPHERE_Z, "seed": 0})
    return _yaml({"space": {"kind": "sphere", "dim": 2, "curvature": 1.0},
                  "sets": {"A": {"type": "small_sphere", "a": [1.0, 0.0, 0.0], "h": 0.5},
                           "B": {"type": "great_subsphere", "b": SPHERE_B}},
                  "requests": reqs})


def tent_function(n: int = TENT_N) -> str:
    """UAG at the origin and super-regularity failure at the n-th tent peak."""
    peak = [3.0 / 2 ** (n + 2), 1.0 / 2 ** (2 * n + 2)]
    reqs = [{"id": f"uag-n{n}", "kind": "uag", "set": "T", "z": [0.0, 0.0],
             "eps": 2.0 ** -n + 1e-6, "R": 2.0 ** -n, "samples": 200, "seed": 0},
            {"id": f"super-regularity-n{n}", "kind": "super_regularity", "set": "T", "z": peak,
             "eps": math.atan(2.0 ** -(n + 1)), "r": 2.0 ** -(n + 1), "samples": 2000,
             "seed": 0}]
    return _yaml({"space": {"kind": "euclidean", "dim": 2},
                  "sets": {"T": {"type": "tent_graph"}}, "requests": reqs})


def smooth_image_x32() -> str:
    """The graph of |x|^{3/2}: UAG at the origin, unbounded extrinsic curvature."""
    eps = 0.1
    reqs = [{"id": "uag", "kind": "uag", "set": "G", "z": [0.0, 0.0], "eps": eps,
             "R": (eps / 12) ** 2, "samples": 100, "seed": 0}]
    for sigma in (1, 10, 100):
        reqs.append({"id": f"bisection-sigma{sigma}", "kind": "extrinsic_bisection",
                     "exponent": 1.5, "sigma": float(sigma), "seed": 0})
    reqs.append({"id": "cloud-curvature", "kind": "finite_extrinsic_curvature", "set": "cloud",
                 "z": [0.0, 0.0], "sigma": 10.0, "r": 0.05, "h": 0.002, "seed": 0})
    return _yaml({"space": {"kind": "euclidean", "dim": 2},
                  "sets": {"G": {"type": "power_graph", "exponent": 1.5, "lo": -1.0, "hi": 1.0},
                           "cloud": {"type": "curve_cloud", "curve": "power_graph",
                                     "exponent": 1.5, "lo": -0.1, "hi": 0.1, "count": 2001}},
                  "requests": reqs})


def circle_curvature() -> str:
    """Unit circle clouds at three mesh levels; the max ratio tends to 1/24."""
    sets, reqs = {}, []
    for level, h in enumerate((0.04, 0.02, 0.01)):
        count = int(round(2 * math.pi / (h / 4)))
        sets[f"circle{level}"] = {"type": "circle_cloud", "count": count, "radius": 1.0}
        reqs.append({"id": f"curvature-h{h:g}", "kind": "finite_extrinsic_curvature",
                     "set": f"circle{level}", "z": [1.0, 0.0], "sigma": 0.05, "r": 0.1,
                     "h": h, "seed": 0})
    return _yaml({"space": {"kind": "euclidean", "dim": 2}, "sets": sets, "requests": reqs})


PRESETS: Dict[str, Tuple[str, Callable[[], str]]] = {
    "sphere-example": ("alternating projections between a circle and a great circle on S^2, "
                       "with rate certificate", sphere_example),
    "tent-function": ("UAG certified at the origin and super-regularity refuted at a tent peak "
                      f"(n = {TENT_N})", tent_function),
    "smooth-image-x32": ("graph of |x|^(3/2): UAG at the origin, curvature refuted by "
                         "bisection", smooth_image_x32),
    "circle-curvature": ("unit circle extrinsic curvature ratio under mesh refinement",
                         circle_curvature),
}


def list_presets() -> Dict[str, str]:
    """Preset names mapped to one-line descriptions."""
    return {name: desc for name, (desc, _) in PRESETS.items()}


def preset_config(name: str) -> str:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return PRESETS[name][1]()

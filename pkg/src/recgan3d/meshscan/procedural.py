"""Cuboid-assembly furniture used as a self-contained shape corpus.

+y is up.  All shapes are centered on the origin; callers normalize them.
"""
from __future__ import annotations

import numpy as np

from .mesh import TriangleMesh

# outward-facing quads of a unit cube, as corner indices into _CORNERS
_CORNERS = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=np.float64)
_QUADS = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]

DEFAULTS = {
    "box": {"width": 1.0, "height": 1.0, "depth": 1.0},
    "chair": {"seat_width": 0.5, "seat_depth": 0.5, "seat_thickness": 0.06, "leg_height": 0.45,
              "leg_thickness": 0.06, "back_height": 0.5, "back_thickness": 0.06},
    "stool": {"seat_width": 0.4, "seat_depth": 0.4, "seat_thickness": 0.06, "leg_height": 0.6,
              "leg_thickness": 0.05},
    "table": {"top_width": 1.2, "top_depth": 0.8, "top_thickness": 0.06, "leg_height": 0.7,
              "leg_thickness": 0.07},
}
KINDS = tuple(DEFAULTS)


def cuboid(lo, hi):
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    verts = lo + _CORNERS * (hi - lo)
    tris = []
    for a, b, c, d in _QUADS:
        tris += [(a, b, c), (a, c, d)]
    return verts, np.array(tris, dtype=np.int64)


def assemble(boxes):
    verts, tris, offset = [], [], 0
    for lo, hi in boxes:
        v, t = cuboid(lo, hi)
        verts.append(v)
        tris.append(t + offset)
        offset += len(v)
    return TriangleMesh(np.concatenate(verts), np.concatenate(tris))


def _legs(width, depth, thickness, y0, y1):
    xs = (-width / 2, width / 2 - thickness)
    zs = (-depth / 2, depth / 2 - thickness)
    return [((x, y0, z), (x + thickness, y1, z + thickness)) for x in xs for z in zs]


def make_procedural_mesh(kind, params=None):
    if kind not in DEFAULTS:
        raise ValueError(f"unknown shape kind {kind!r}; choose from {KINDS}")
    p = dict(DEFAULTS[kind])
    unknown = set(params or {}) - set(p)
    if unknown:
        raise ValueError(f"unknown parameters for {kind}: {sorted(unknown)}")
    p.update(params or {})
    for key, val in p.items():
        if not val > 0:
            raise ValueError(f"{kind}.{key} must be positive, got {val}")

    if kind == "box":
        w, h, d = p["width"], p["height"], p["depth"]
        return assemble([((-w / 2, -h / 2, -d / 2), (w / 2, h / 2, d / 2))])

    if kind == "chair":
        w, d, st, lh, lt = p["seat_width"], p["seat_depth"], p["seat_thickness"], p["leg_height"], p["leg_thickness"]
        _check_legs(kind, lt, w, d)
        seat = ((-w / 2, lh, -d / 2), (w / 2, lh + st, d / 2))
        # back rises from the seat along the +z edge
        back = ((-w / 2, lh + st, d / 2 - p["back_thickness"]), (w / 2, lh + st + p["back_height"], d / 2))
        return assemble([seat, back] + _legs(w, d, lt, 0.0, lh))

    if kind == "stool":
        w, d, st, lh, lt = p["seat_width"], p["seat_depth"], p["seat_thickness"], p["leg_height"], p["leg_thickness"]
        _check_legs(kind, lt, w, d)
        return assemble([((-w / 2, lh, -d / 2), (w / 2, lh + st, d / 2))] + _legs(w, d, lt, 0.0, lh))

    w, d, tt, lh, lt = p["top_width"], p["top_depth"], p["top_thickness"], p["leg_height"], p["leg_thickness"]
    _check_legs(kind, lt, w, d)
    return assemble([((-w / 2, lh, -d / 2), (w / 2, lh + tt, d / 2))] + _legs(w, d, lt, 0.0, lh))


def _check_legs(kind, thickness, width, depth):
    if 2 * thickness >= min(width, depth):
        raise ValueError(f"{kind}: legs too thick for the seat/top")


def random_params(kind, rng):
    """Jitter each default dimension by up to +/-30 %, deterministically per rng."""
    base = DEFAULTS[kind]
    return {k: float(v * rng.uniform(0.7, 1.3)) for k, v in base.items()}

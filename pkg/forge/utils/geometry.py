from __future__ import annotations

from typing import Sequence

import numpy as np
from shapely.geometry import Polygon

from ..models import Ring


def ring_array(ring: Ring) -> np.ndarray:
    return np.asarray(ring, dtype=np.float64).reshape(-1, 2)


def footprint_polygon(rings: Sequence[Ring]) -> Polygon:
    return Polygon(rings[0], holes=list(rings[1:]))


def footprint_area(rings: Sequence[Ring]) -> float:
    # shoelace area of the outer ring minus the holes
    return float(footprint_polygon(rings).area)


def bounds(rings: Sequence[Ring]) -> tuple[float, float, float, float]:
    outer = ring_array(rings[0])
    return (float(outer[:, 0].min()), float(outer[:, 1].min()),
            float(outer[:, 0].max()), float(outer[:, 1].max()))


def even_odd_mask(rings: Sequence[np.ndarray], xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Inside test for many sample points: a point is inside when a ray to +x
    crosses the boundary an odd number of times, counting every ring, so
    holes subtract. Edges are half-open in y, which settles vertices that
    sit exactly on a sample row."""
    inside = np.zeros(np.shape(xs), dtype=bool)
    for ring in rings:
        pts = np.asarray(ring, dtype=np.float64)
        for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
            if ay == by:
                continue
            crosses = (ay > ys) != (by > ys)
            if not crosses.any():
                continue
            x_at = (bx - ax) * (ys[crosses] - ay) / (by - ay) + ax
            hit = np.zeros_like(inside)
            hit[crosses] = xs[crosses] < x_at
            inside ^= hit
    return inside

"""Planar geometry: oriented rectangles, convex overlap tests, frames."""

from __future__ import annotations

import math

import numpy as np


def rect_corners(x: float, y: float, heading: float, length: float, width: float) -> np.ndarray:
    """Corners of an oriented rectangle centered at (x, y), CCW order."""
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([x, y])


def _axes(poly: np.ndarray) -> np.ndarray:
    edges = np.roll(poly, -1, axis=0) - poly
    normals = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
    norms = np.linalg.norm(normals, axis=1)
    keep = norms > 1e-12
    return normals[keep] / norms[keep, None]


def convex_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis overlap test for two convex polygons.

    Touching boundaries count as overlap.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for axis in np.concatenate([_axes(a), _axes(b)]):
        pa = a @ axis
        pb = b @ axis
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def to_frame(points: np.ndarray, origin, heading: float) -> np.ndarray:
    """World coordinates -> frame at `origin` with x along `heading`."""
    c, s = math.cos(heading), math.sin(heading)
    rel = np.asarray(points, dtype=float) - np.asarray(origin, dtype=float)
    if rel.ndim == 1:
        return np.array([c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1]])
    return np.stack([c * rel[:, 0] + s * rel[:, 1], -s * rel[:, 0] + c * rel[:, 1]], axis=1)


def from_frame(points: np.ndarray, origin, heading: float) -> np.ndarray:
    """Frame coordinates -> world, inverse of to_frame."""
    c, s = math.cos(heading), math.sin(heading)
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        return np.array(
            [c * p[0] - s * p[1] + origin[0], s * p[0] + c * p[1] + origin[1]]
        )
    return np.stack(
        [c * p[:, 0] - s * p[:, 1] + origin[0], s * p[:, 0] + c * p[:, 1] + origin[1]],
        axis=1,
    )

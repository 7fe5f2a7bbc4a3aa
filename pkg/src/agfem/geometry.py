"""Implicit interface geometry: signed level-set functions and CSG combinators.

Sign convention: value > 0 in the plus region, value < 0 in the minus region,
zero set is the interface.  CSG min/max composites are *not* signed distances;
downstream code only uses signs and root locations along segments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

SMOOTH = "smooth"
PIECEWISE_SMOOTH = "piecewise-smooth"


class DegenerateGradientError(ValueError):
    """Raised when the level-set gradient vanishes (kink or critical point)."""


def _as_points(p) -> np.ndarray:
    pts = np.asarray(p, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    return pts


@dataclass(frozen=True)
class LevelSet:
    """Signed implicit description of an interface.

    evaluator maps an (n, 2) array of points to n signed values; the optional
    gradient_evaluator maps points to (n, 2) gradients.  Both are pure and
    safe for concurrent evaluation.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    gradient_evaluator: Optional[Callable[[np.ndarray], np.ndarray]] = None
    smoothness: str = SMOOTH

    def values(self, pts) -> np.ndarray:
        return np.asarray(self.evaluator(_as_points(pts)), dtype=float)

    def value(self, p) -> float:
        return float(self.values(p)[0])

    def gradients(self, pts) -> Optional[np.ndarray]:
        if self.gradient_evaluator is None:
            return None
        return np.asarray(self.gradient_evaluator(_as_points(pts)), dtype=float)


def circle_levelset(center, radius: float) -> LevelSet:
    """Level set ``|p - center| - radius``; the disk interior is the minus side."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    cx, cy = float(center[0]), float(center[1])

    def ev(pts):
        return np.hypot(pts[:, 0] - cx, pts[:, 1] - cy) - radius

    def grad(pts):
        d = pts - np.array([cx, cy])
        r = np.hypot(d[:, 0], d[:, 1])
        r = np.where(r < 1e-300, 1.0, r)
        return d / r[:, None]

    return LevelSet(ev, grad, SMOOTH)


def halfplane_levelset(normal, offset: float) -> LevelSet:
    """Level set ``n . p - offset`` for a unit-normalized direction ``n``."""
    n = np.asarray(normal, dtype=float)
    nn = math.hypot(n[0], n[1])
    if nn == 0.0:
        raise ValueError("half-plane normal must be nonzero")
    n = n / nn
    d = float(offset) / nn

    def ev(pts):
        return pts[:, 0] * n[0] + pts[:, 1] * n[1] - d

    def grad(pts):
        return np.broadcast_to(n, (len(pts), 2)).copy()

    return LevelSet(ev, grad, SMOOTH)


def flower_levelset(center, radius: float = 0.7, amplitude: float = 0.3,
                    lobes: int = 5) -> LevelSet:
    """Polar-lobed level set ``r - radius * (1 + amplitude * sin(lobes * theta))``.

    The polar angle is defined as 0 at the center point itself.
    """
    cx, cy = float(center[0]), float(center[1])

    def ev(pts):
        dx = pts[:, 0] - cx
        dy = pts[:, 1] - cy
        r = np.hypot(dx, dy)
        theta = np.arctan2(dy, dx)
        return r - radius * (1.0 + amplitude * np.sin(lobes * theta))

    def grad(pts):
        dx = pts[:, 0] - cx
        dy = pts[:, 1] - cy
        r = np.hypot(dx, dy)
        theta = np.arctan2(dy, dx)
        safe = np.where(r < 1e-14, 1.0, r)
        er = np.stack([dx / safe, dy / safe], axis=1)
        et = np.stack([-dy / safe, dx / safe], axis=1)
        dth = -radius * amplitude * lobes * np.cos(lobes * theta) / safe
        g = er + dth[:, None] * et
        return np.where((r < 1e-14)[:, None], 0.0, g)

    return LevelSet(ev, grad, SMOOTH)


def csg_union(a: LevelSet, b: LevelSet) -> LevelSet:
    """Pointwise min; the union of the described (negative) regions."""
    return LevelSet(lambda pts: np.minimum(a.values(pts), b.values(pts)),
                    None, PIECEWISE_SMOOTH)


def csg_intersection(a: LevelSet, b: LevelSet) -> LevelSet:
    """Pointwise max; the intersection of the described regions."""
    return LevelSet(lambda pts: np.maximum(a.values(pts), b.values(pts)),
                    None, PIECEWISE_SMOOTH)


def csg_complement(a: LevelSet) -> LevelSet:
    return LevelSet(lambda pts: -a.values(pts), None, PIECEWISE_SMOOTH)


PACMAN_THETA0 = math.pi / 12.0


def pacman_levelset(center, radius: float,
                    sector=(PACMAN_THETA0, PACMAN_THETA0 + 1.5 * math.pi)) -> LevelSet:
    """Disk with a wedge removed; the kept sector is the minus region.

    ``sector = (theta0, theta1)`` in local polar coordinates about ``center``.
    The removed wedge must span less than pi so it can be written as the
    intersection of two half-planes.  The default sector is rotated off the
    coordinate axes: an axis-aligned wedge edge would coincide with mesh
    gridlines and could not be represented by in-cell interface chords.
    """
    th0, th1 = float(sector[0]), float(sector[1])
    span = th1 - th0
    if not (math.pi < span < 2.0 * math.pi):
        raise ValueError(f"sector span must lie in (pi, 2*pi), got {span}")
    cx, cy = float(center[0]), float(center[1])
    disk = circle_levelset(center, radius)
    # Removed wedge: cone from direction d1 (at th1) CCW to d0 (at th0 + 2pi).
    d1 = (math.cos(th1), math.sin(th1))
    d0 = (math.cos(th0), math.sin(th0))
    # Inside the wedge: cross(d1, p - c) >= 0 and cross(d0, p - c) <= 0.
    h1 = halfplane_levelset((d1[1], -d1[0]), d1[1] * cx - d1[0] * cy)
    h2 = halfplane_levelset((-d0[1], d0[0]), -d0[1] * cx + d0[0] * cy)
    wedge = csg_intersection(h1, h2)
    return csg_intersection(disk, csg_complement(wedge))


def normal_at(ls: LevelSet, p, domain_size: float = 1.0) -> np.ndarray:
    """Unit normal pointing from the plus region into the minus region.

    Uses the analytic gradient when available, otherwise central finite
    differences with step ``1e-6 * domain_size``.
    """
    pt = _as_points(p)
    if ls.gradient_evaluator is not None:
        g = ls.gradients(pt)[0]
    else:
        h = 1e-6 * domain_size
        off = np.array([[h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]])
        v = ls.values(pt + off)
        g = np.array([(v[0] - v[1]) / (2 * h), (v[2] - v[3]) / (2 * h)])
    norm = math.hypot(g[0], g[1])
    if norm < 1e-12:
        raise DegenerateGradientError(
            f"level-set gradient below tolerance at {tuple(pt[0])}")
    return -g / norm

"""Cut-cell geometry: classification, sub-triangulation and quadrature.

Each background cell is recursively bisected into sub-squares; cut sub-squares
are split by a straight chord obtained from marching squares on corner signs,
with edge roots located by bisection.  Volume fractions, per-subdomain bulk
rules and interface segment rules all derive from the same decomposition, so
they are mutually consistent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np

from .geometry import LevelSet, PIECEWISE_SMOOTH
from .mesh import CellId, QuadtreeMesh

WELL_POSED = "well-posed"
ILL_POSED = "ill-posed"
EXTERIOR = "exterior"

ETA_ZERO_TOL = 1e-12
_AREA_TOL = 1e-14
_BISECT_ITERS = 48


class GeometricToleranceError(RuntimeError):
    """Root bracketing or tolerance failure during cut processing."""


def default_depth(ls: LevelSet) -> int:
    return 4 if ls.smoothness == PIECEWISE_SMOOTH else 2


@dataclass
class CellClass:
    eta_plus: float
    eta_minus: float
    tag_plus: str
    tag_minus: str

    def tag(self, side: str) -> str:
        return self.tag_plus if side == "+" else self.tag_minus

    def eta(self, side: str) -> float:
        return self.eta_plus if side == "+" else self.eta_minus


@dataclass
class Segment:
    """Straight interface chord inside a cell; normal points plus -> minus."""
    p0: np.ndarray
    p1: np.ndarray
    normal: np.ndarray
    parent: Optional[CellId] = None
    h_parent: float = 0.0

    @property
    def length(self) -> float:
        return float(np.hypot(*(self.p1 - self.p0)))


@dataclass
class CellCut:
    """Sub-triangulation of one cell: labelled triangles plus chords."""
    tri_plus: np.ndarray      # (n, 3, 2)
    tri_minus: np.ndarray
    segments: List[Segment]
    eta_plus: float
    eta_minus: float


@dataclass
class QuadratureRule:
    points: np.ndarray   # (n, 2)
    weights: np.ndarray  # (n,)


@dataclass
class SegmentQuadrature:
    segment: Segment
    points: np.ndarray
    weights: np.ndarray


@dataclass
class CutDecomposition:
    """Per-cell decompositions for a whole mesh against one level set."""
    mesh: QuadtreeMesh
    levelset: LevelSet
    depth: int
    etas: Dict[CellId, Tuple[float, float]]
    cuts: Dict[CellId, CellCut] = field(default_factory=dict)

    def is_cut(self, cid: CellId) -> bool:
        return cid in self.cuts


def _tri_area(a, b, c) -> float:
    return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))


def _fan_triangulate(poly, out):
    for k in range(1, len(poly) - 1):
        a, b, c = poly[0], poly[k], poly[k + 1]
        if _tri_area(a, b, c) > _AREA_TOL:
            out.append((a, b, c))


def _edge_roots(ls: LevelSet, p0: np.ndarray, p1: np.ndarray, v0: np.ndarray):
    """Vectorized bisection for roots on sign-changing edges."""
    m = len(p0)
    lo = np.zeros(m)
    hi = np.ones(m)
    s0 = v0 >= 0
    d = p1 - p0
    for _ in range(_BISECT_ITERS):
        tm = 0.5 * (lo + hi)
        vm = ls.values(p0 + tm[:, None] * d)
        same = (vm >= 0) == s0
        lo = np.where(same, tm, lo)
        hi = np.where(same, hi, tm)
    t = 0.5 * (lo + hi)
    return p0 + t[:, None] * d


def _chord_normal(p0, p1, toward_minus) -> np.ndarray:
    """Unit perpendicular of the chord oriented toward the minus region."""
    t = p1 - p0
    n = np.array([t[1], -t[0]])
    ln = np.hypot(n[0], n[1])
    if ln == 0.0:
        return np.array([0.0, 0.0])
    n /= ln
    mid = 0.5 * (p0 + p1)
    if np.dot(n, toward_minus - mid) < 0:
        n = -n
    return n


def _process_subsquare(corners, values, center_val, tri_plus, tri_minus, segments,
                       roots_by_edge):
    """Split one sub-square by its corner signs.

    corners: 4 points in CCW order; roots_by_edge maps a local edge index to a
    precomputed crossing point.  Appends triangles and chords in place.
    """
    s = [v >= 0 for v in values]
    if all(s):
        _fan_triangulate([corners[0], corners[1], corners[2], corners[3]], tri_plus)
        return
    if not any(s):
        _fan_triangulate([corners[0], corners[1], corners[2], corners[3]], tri_minus)
        return

    entries = []  # ('c', k) or ('x', point)
    for k in range(4):
        entries.append(("c", k))
        if s[k] != s[(k + 1) % 4]:
            entries.append(("x", roots_by_edge[k]))
    xpos = [idx for idx, e in enumerate(entries) if e[0] == "x"]

    if len(xpos) == 2:
        ne = len(entries)
        chains = []
        for a, b in ((xpos[0], xpos[1]), (xpos[1], xpos[0])):
            poly = [entries[a][1]]
            sign = None
            k = (a + 1) % ne
            while k != b:
                kind, val = entries[k]
                if kind == "c":
                    poly.append(corners[val])
                    sign = s[val]
                k = (k + 1) % ne
            poly.append(entries[b][1])
            chains.append((poly, sign))
        for poly, sign in chains:
            _fan_triangulate(poly, tri_plus if sign else tri_minus)
        minus_poly = chains[0][0] if not chains[0][1] else chains[1][0]
        anchor = minus_poly[1] if len(minus_poly) > 2 else minus_poly[0]
        p0, p1 = entries[xpos[0]][1], entries[xpos[1]][1]
        if np.hypot(*(p1 - p0)) > _AREA_TOL:
            segments.append((p0, p1, np.asarray(anchor, dtype=float)))
        return

    # saddle: four crossings, alternating corner signs; centre sample tie-break
    centre_plus = center_val >= 0
    lone = [k for k in range(4) if s[k] != centre_plus]
    band = []
    for idx, e in enumerate(entries):
        if e[0] == "x":
            band.append(e[1])
        elif s[e[1]] == centre_plus:
            band.append(corners[e[1]])
    _fan_triangulate(band, tri_plus if centre_plus else tri_minus)
    for k in lone:
        prev_x = roots_by_edge[(k + 3) % 4]
        next_x = roots_by_edge[k]
        tri = [prev_x, corners[k], next_x]
        _fan_triangulate(tri, tri_minus if centre_plus else tri_plus)
        if np.hypot(*(next_x - prev_x)) > _AREA_TOL:
            if centre_plus:
                segments.append((prev_x, next_x, np.asarray(corners[k], dtype=float)))
            else:
                mid = 0.5 * (prev_x + next_x)
                away = 2.0 * mid - np.asarray(corners[k], dtype=float)
                segments.append((prev_x, next_x, away))


def subtriangulate(box, ls: LevelSet, depth: int, parent: Optional[CellId] = None) -> CellCut:
    """Decompose one square cell; box = (x0, y0, h)."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    x0, y0, h = box
    n = 1 << depth
    step = h / n
    xs = x0 + step * np.arange(n + 1)
    ys = y0 + step * np.arange(n + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    vals = ls.values(pts).reshape(n + 1, n + 1)
    return _cut_cell_from_grid(box, vals, ls, depth, parent)


def _cut_cell_from_grid(box, vals, ls: LevelSet, depth: int,
                        parent: Optional[CellId]) -> CellCut:
    x0, y0, h = box
    n = 1 << depth
    step = h / n
    tri_plus: list = []
    tri_minus: list = []
    seg_raw: list = []

    # corner order (a,b) -> CCW: (a,b), (a+1,b), (a+1,b+1), (a,b+1)
    v00 = vals[:-1, :-1]
    v10 = vals[1:, :-1]
    v11 = vals[1:, 1:]
    v01 = vals[:-1, 1:]
    s00, s10, s11, s01 = v00 >= 0, v10 >= 0, v11 >= 0, v01 >= 0
    cut_mask = ~((s00 & s10 & s11 & s01) | ~(s00 | s10 | s11 | s01))
    cut_ab = np.argwhere(cut_mask)

    # gather all sign-changing edges of cut sub-squares for one bisection pass
    edge_specs = []  # (a, b, k, P0, P1, v0)
    for a, b in cut_ab:
        cx = x0 + a * step
        cy = y0 + b * step
        corners = [np.array([cx, cy]), np.array([cx + step, cy]),
                   np.array([cx + step, cy + step]), np.array([cx, cy + step])]
        vv = [vals[a, b], vals[a + 1, b], vals[a + 1, b + 1], vals[a, b + 1]]
        for k in range(4):
            if (vv[k] >= 0) != (vv[(k + 1) % 4] >= 0):
                edge_specs.append((a, b, k, corners[k], corners[(k + 1) % 4], vv[k]))

    roots = {}
    if edge_specs:
        p0 = np.array([e[3] for e in edge_specs])
        p1 = np.array([e[4] for e in edge_specs])
        vv0 = np.array([e[5] for e in edge_specs])
        r = _edge_roots(ls, p0, p1, vv0)
        for idx, (a, b, k, *_rest) in enumerate(edge_specs):
            roots[(a, b, k)] = r[idx]

    # saddle tie-break needs the sub-square centre value
    saddles = [(a, b) for a, b in cut_ab
               if len([k for k in range(4) if (a, b, k) in roots]) == 4]
    centre_vals = {}
    if saddles:
        cpts = np.array([[x0 + (a + 0.5) * step, y0 + (b + 0.5) * step]
                         for a, b in saddles])
        cv = ls.values(cpts)
        centre_vals = {ab: cv[i] for i, ab in enumerate(saddles)}

    uncut_plus = np.argwhere(s00 & s10 & s11 & s01)
    uncut_minus = np.argwhere(~(s00 | s10 | s11 | s01))
    for a, b in uncut_plus:
        cx, cy = x0 + a * step, y0 + b * step
        _fan_triangulate([np.array([cx, cy]), np.array([cx + step, cy]),
                          np.array([cx + step, cy + step]),
                          np.array([cx, cy + step])], tri_plus)
    for a, b in uncut_minus:
        cx, cy = x0 + a * step, y0 + b * step
        _fan_triangulate([np.array([cx, cy]), np.array([cx + step, cy]),
                          np.array([cx + step, cy + step]),
                          np.array([cx, cy + step])], tri_minus)

    for a, b in cut_ab:
        cx, cy = x0 + a * step, y0 + b * step
        corners = [np.array([cx, cy]), np.array([cx + step, cy]),
                   np.array([cx + step, cy + step]), np.array([cx, cy + step])]
        vv = [vals[a, b], vals[a + 1, b], vals[a + 1, b + 1], vals[a, b + 1]]
        rbe = {k: roots[(a, b, k)] for k in range(4) if (a, b, k) in roots}
        _process_subsquare(corners, vv, centre_vals.get((a, b), 0.0),
                           tri_plus, tri_minus, seg_raw, rbe)

    tp = np.array(tri_plus, dtype=float).reshape(-1, 3, 2)
    tm = np.array(tri_minus, dtype=float).reshape(-1, 3, 2)
    area = h * h
    ap = float(np.sum(_tri_areas(tp))) if len(tp) else 0.0
    am = float(np.sum(_tri_areas(tm))) if len(tm) else 0.0
    segments = []
    for p0, p1, anchor in seg_raw:
        nrm = _chord_normal(p0, p1, anchor)
        segments.append(Segment(np.asarray(p0, float), np.asarray(p1, float),
                                nrm, parent, h))
    return CellCut(tp, tm, segments, ap / area, am / area)


def _tri_areas(tris: np.ndarray) -> np.ndarray:
    if len(tris) == 0:
        return np.zeros(0)
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    return 0.5 * np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                        - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))


def build_decomposition(mesh: QuadtreeMesh, ls: LevelSet,
                        depth: Optional[int] = None) -> CutDecomposition:
    """Classify and sub-triangulate every leaf; batched level-set evaluation."""
    if depth is None:
        depth = default_depth(ls)
    n = 1 << depth
    grid = np.stack(np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij"),
                    axis=2).reshape(-1, 2).astype(float) / n

    etas: Dict[CellId, Tuple[float, float]] = {}
    cuts: Dict[CellId, CellCut] = {}
    leaves = mesh.leaves_sorted
    chunk = 2048
    for start in range(0, len(leaves), chunk):
        batch = leaves[start:start + chunk]
        boxes = np.array([mesh.cell_box(c) for c in batch])
        pts = boxes[:, None, 0:2] + grid[None, :, :] * boxes[:, None, 2:3]
        vals = ls.values(pts.reshape(-1, 2)).reshape(len(batch), -1)
        vmin = vals.min(axis=1)
        vmax = vals.max(axis=1)
        for k, cid in enumerate(batch):
            if vmin[k] >= 0:
                etas[cid] = (1.0, 0.0)
            elif vmax[k] < 0:
                etas[cid] = (0.0, 1.0)
            else:
                cc = _cut_cell_from_grid(tuple(boxes[k]),
                                         vals[k].reshape(n + 1, n + 1),
                                         ls, depth, cid)
                cuts[cid] = cc
                etas[cid] = (cc.eta_plus, cc.eta_minus)
    return CutDecomposition(mesh, ls, depth, etas, cuts)


def classify_cells(mesh: QuadtreeMesh, ls: LevelSet, eta0: float,
                   decomp: Optional[CutDecomposition] = None) -> Dict[CellId, CellClass]:
    """Tag every leaf per subdomain as well-posed, ill-posed or exterior."""
    if not (0.0 < eta0 <= 1.0):
        raise ValueError(f"eta0 must be in (0, 1], got {eta0}")
    if decomp is None:
        decomp = build_decomposition(mesh, ls)

    def tag(eta):
        if eta < ETA_ZERO_TOL:
            return EXTERIOR
        return WELL_POSED if eta >= eta0 else ILL_POSED

    classes = {}
    for cid in mesh.leaves_sorted:
        ep, em = decomp.etas[cid]
        classes[cid] = CellClass(ep, em, tag(ep), tag(em))
    return classes


# ----------------------------------------------------------------------------
# quadrature rules
# ----------------------------------------------------------------------------

_DUNAVANT = {
    1: [((1 / 3, 1 / 3), 1.0)],
    2: [((1 / 6, 1 / 6), 1 / 3), ((2 / 3, 1 / 6), 1 / 3), ((1 / 6, 2 / 3), 1 / 3)],
}
for _deg in (3, 4):
    _a1, _w1 = 0.445948490915965, 0.223381589678011
    _a2, _w2 = 0.091576213509771, 0.109951743655322
    _DUNAVANT[_deg] = (
        [((_a1, _a1), _w1), ((1 - 2 * _a1, _a1), _w1), ((_a1, 1 - 2 * _a1), _w1),
         ((_a2, _a2), _w2), ((1 - 2 * _a2, _a2), _w2), ((_a2, 1 - 2 * _a2), _w2)])
_a1, _w1 = 0.470142064105115, 0.132394152788506
_a2, _w2 = 0.101286507323456, 0.125939180544827
_DUNAVANT[5] = (
    [((1 / 3, 1 / 3), 0.225),
     ((_a1, _a1), _w1), ((1 - 2 * _a1, _a1), _w1), ((_a1, 1 - 2 * _a1), _w1),
     ((_a2, _a2), _w2), ((1 - 2 * _a2, _a2), _w2), ((_a2, 1 - 2 * _a2), _w2)])


@lru_cache(maxsize=None)
def gauss_1d(degree: int):
    """Nodes and weights on [0, 1] exact for polynomials up to ``degree``."""
    m = degree // 2 + 1
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def triangle_rule(degree: int):
    """Reference-triangle rule on {x, y >= 0, x + y <= 1}, weights sum to 1/2."""
    if degree < 1 or degree > 10:
        raise ValueError(f"unsupported triangle quadrature degree {degree}")
    if degree in _DUNAVANT:
        data = _DUNAVANT[degree]
        pts = np.array([p for p, _ in data])
        w = 0.5 * np.array([wi for _, wi in data])
        return pts, w
    # collapsed tensor rule; exact for total degree (see mapping x=u, y=v(1-u))
    m = (degree + 3) // 2
    x, w = np.polynomial.legendre.leggauss(m)
    u, wu = 0.5 * (x + 1.0), 0.5 * w
    U, V = np.meshgrid(u, u, indexing="ij")
    WU, WV = np.meshgrid(wu, wu, indexing="ij")
    pts = np.stack([U.ravel(), (V * (1 - U)).ravel()], axis=1)
    ww = (WU * WV * (1 - U)).ravel()
    return pts, ww


@lru_cache(maxsize=None)
def square_rule(degree: int):
    """Tensor Gauss rule on the unit square."""
    if degree > 10:
        raise ValueError(f"unsupported square quadrature degree {degree}")
    t, w = gauss_1d(degree)
    X, Y = np.meshgrid(t, t, indexing="ij")
    WX, WY = np.meshgrid(w, w, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=1), (WX * WY).ravel()


_EMPTY_RULE = QuadratureRule(np.zeros((0, 2)), np.zeros(0))


def bulk_quadrature(decomp: CutDecomposition, cid: CellId, side: str,
                    degree: int) -> QuadratureRule:
    """Physical-space rule over the given subdomain's part of one cell."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    x0, y0, h = decomp.mesh.cell_box(cid)
    if cid not in decomp.cuts:
        ep, em = decomp.etas[cid]
        eta = ep if side == "+" else em
        if eta == 0.0:
            return _EMPTY_RULE
        rp, rw = square_rule(degree)
        return QuadratureRule(np.array([x0, y0]) + rp * h, rw * h * h)
    cc = decomp.cuts[cid]
    tris = cc.tri_plus if side == "+" else cc.tri_minus
    if len(tris) == 0:
        return _EMPTY_RULE
    rp, rw = triangle_rule(degree)
    a = tris[:, 0]
    e1 = tris[:, 1] - a
    e2 = tris[:, 2] - a
    # affine map per triangle; |J| = 2 * area
    pts = (a[:, None, :] + rp[None, :, 0:1] * e1[:, None, :]
           + rp[None, :, 1:2] * e2[:, None, :])
    jac = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    w = rw[None, :] * jac[:, None]
    return QuadratureRule(pts.reshape(-1, 2), w.ravel())


def interface_quadrature(decomp: CutDecomposition, degree: int) -> List[SegmentQuadrature]:
    """1D Gauss rules on every interface chord, in sorted cell order."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    t, w = gauss_1d(degree)
    out = []
    for cid in sorted(decomp.cuts):
        for seg in decomp.cuts[cid].segments:
            d = seg.p1 - seg.p0
            pts = seg.p0[None, :] + t[:, None] * d[None, :]
            out.append(SegmentQuadrature(seg, pts, w * seg.length))
    return out

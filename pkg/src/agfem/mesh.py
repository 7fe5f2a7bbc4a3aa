"""Adaptive quadtree background mesh with 2:1 balance over a square domain.

Cells are addressed by (level, i, j) with i, j in [0, 2^level).  Vertex
positions are exact on the integer lattice at max_level resolution, so
geometrically coincident points compare equal without floating-point hashing.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

SIDES = ("W", "E", "S", "N")
_SIDE_OPPOSITE = {"W": "E", "E": "W", "S": "N", "N": "S"}


class MaxLevelExceededError(RuntimeError):
    """Refinement would exceed the mesh max_level."""


@dataclass(frozen=True, order=True)
class CellId:
    level: int
    i: int
    j: int

    def parent(self) -> "CellId":
        return CellId(self.level - 1, self.i // 2, self.j // 2)

    def children(self):
        l, i, j = self.level + 1, 2 * self.i, 2 * self.j
        return (CellId(l, i, j), CellId(l, i + 1, j),
                CellId(l, i, j + 1), CellId(l, i + 1, j + 1))


@dataclass(frozen=True)
class Box:
    """Axis-aligned square domain: origin plus side extent."""
    x0: float
    y0: float
    extent: float


class QuadtreeMesh:
    """Immutable set of leaf cells tiling the domain box.

    When ``balanced`` holds, edge-adjacent leaves differ by at most one level.
    Adaptation returns a new mesh; read queries are concurrently safe.
    """

    def __init__(self, domain: Box, leaves: Iterable[CellId], max_level: int = 14,
                 balanced: bool = True):
        self.domain = domain
        self.max_level = max_level
        self.leaves = frozenset(leaves)
        self.balanced = balanced
        self._sorted = None

    @property
    def leaves_sorted(self):
        if self._sorted is None:
            self._sorted = tuple(sorted(self.leaves))
        return self._sorted

    def __len__(self):
        return len(self.leaves)

    def h(self, cid: CellId) -> float:
        return self.domain.extent / (1 << cid.level)

    def cell_box(self, cid: CellId):
        h = self.h(cid)
        return (self.domain.x0 + cid.i * h, self.domain.y0 + cid.j * h, h)

    def cell_centroid(self, cid: CellId) -> np.ndarray:
        x0, y0, h = self.cell_box(cid)
        return np.array([x0 + 0.5 * h, y0 + 0.5 * h])


def uniform_mesh(domain: Box, level: int, max_level: int = 14) -> QuadtreeMesh:
    if level < 0 or level > max_level:
        raise ValueError(f"level must be in [0, {max_level}], got {level}")
    n = 1 << level
    leaves = [CellId(level, i, j) for j in range(n) for i in range(n)]
    return QuadtreeMesh(domain, leaves, max_level)


def _same_level_neighbor(cid: CellId, side: str):
    n = 1 << cid.level
    di = {"W": -1, "E": 1, "S": 0, "N": 0}[side]
    dj = {"W": 0, "E": 0, "S": -1, "N": 1}[side]
    i, j = cid.i + di, cid.j + dj
    if not (0 <= i < n and 0 <= j < n):
        return None
    return CellId(cid.level, i, j)


def _descend_on_side(leaves, cid: CellId, side: str, max_level: int, out):
    """Collect leaves inside cid touching the given side of cid."""
    if cid in leaves:
        out.append(cid)
        return
    if cid.level >= max_level:
        return
    kids = cid.children()
    pick = {"W": (0, 2), "E": (1, 3), "S": (0, 1), "N": (2, 3)}[side]
    for k in pick:
        _descend_on_side(leaves, kids[k], side, max_level, out)


def neighbors_on_side(mesh: QuadtreeMesh, cid: CellId, side: str):
    """Leaves sharing a positive-length segment of the given edge of cid."""
    cand = _same_level_neighbor(cid, side)
    if cand is None:
        return []
    if cand in mesh.leaves:
        return [cand]
    # coarser neighbor: walk up until a leaf ancestor appears
    p = cand
    while p.level > 0:
        p = p.parent()
        if p in mesh.leaves:
            return [p]
    # finer neighbors: descend toward the shared edge
    out = []
    _descend_on_side(mesh.leaves, cand, _SIDE_OPPOSITE[side], mesh.max_level, out)
    out.sort()
    return out


def edge_neighbors(mesh: QuadtreeMesh, cid: CellId):
    """All (neighbor, side) pairs sharing a positive-length edge with cid."""
    if cid not in mesh.leaves:
        raise ValueError(f"{cid} is not a leaf")
    result = []
    for side in SIDES:
        for nb in neighbors_on_side(mesh, cid, side):
            result.append((nb, side))
    return result


def vertex_lattice_coords(mesh: QuadtreeMesh, cid: CellId):
    """Cell corners as integer pairs at 2^max_level lattice resolution."""
    step = 1 << (mesh.max_level - cid.level)
    x, y = cid.i * step, cid.j * step
    return ((x, y), (x + step, y), (x, y + step), (x + step, y + step))


def _needs_split(leaves, max_level, cid: CellId) -> bool:
    """True when an edge-adjacent leaf is more than one level finer."""
    for side in SIDES:
        cand = _same_level_neighbor(cid, side)
        if cand is None:
            continue
        # any descendant leaf of cand at level >= cid.level + 2 on the shared edge
        stack = [(cand, 0)]
        opp = _SIDE_OPPOSITE[side]
        while stack:
            cell, depth = stack.pop()
            if cell in leaves:
                if cell.level > cid.level + 1:
                    return True
                continue
            if cell.level >= max_level:
                continue
            kids = cell.children()
            pick = {"W": (0, 2), "E": (1, 3), "S": (0, 1), "N": (2, 3)}[opp]
            for k in pick:
                stack.append((kids[k], depth + 1))
    return False


def refine_and_coarsen(mesh: QuadtreeMesh, refine_set, coarsen_set) -> QuadtreeMesh:
    """Refine, merge complete sibling quadruples, then restore 2:1 balance.

    Balance is re-established by additional refinement only; requested
    refinements are never cancelled.  Sibling groups that are incomplete are
    silently kept.
    """
    refine_set = set(refine_set)
    coarsen_set = set(coarsen_set)
    if refine_set & coarsen_set:
        raise ValueError("refine_set and coarsen_set must be disjoint")
    leaves = set(mesh.leaves)

    for cid in sorted(refine_set):
        if cid not in leaves:
            raise ValueError(f"refine target {cid} is not a leaf")
        if cid.level + 1 > mesh.max_level:
            raise MaxLevelExceededError(f"cannot refine {cid} beyond max_level")
        leaves.remove(cid)
        leaves.update(cid.children())

    by_parent = {}
    for cid in coarsen_set:
        if cid.level == 0:
            continue
        by_parent.setdefault(cid.parent(), []).append(cid)
    for parent, group in sorted(by_parent.items()):
        if len(group) == 4 and all(c in leaves for c in group):
            for c in group:
                leaves.remove(c)
            leaves.add(parent)

    # balance closure fixpoint
    changed = True
    while changed:
        changed = False
        for cid in sorted(leaves):
            if _needs_split(leaves, mesh.max_level, cid):
                if cid.level + 1 > mesh.max_level:
                    raise MaxLevelExceededError(
                        f"balance closure cannot refine {cid} beyond max_level")
                leaves.remove(cid)
                leaves.update(cid.children())
                changed = True
    return QuadtreeMesh(mesh.domain, leaves, mesh.max_level)

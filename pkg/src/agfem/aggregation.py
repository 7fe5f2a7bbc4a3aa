"""Cell aggregation: map every ill-posed active cell to a well-posed root.

Aggregation runs independently per subdomain on its active mesh; there is no
coupling between the two sides.  Aggregates grow by breadth-first sweeps, so
each aggregate is edge-connected and contains exactly one well-posed root.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List

from .cutgeom import EXTERIOR, ILL_POSED, WELL_POSED
from .mesh import CellId, QuadtreeMesh, edge_neighbors


class IsolatedIllPosedError(RuntimeError):
    """Ill-posed cells not edge-reachable from any well-posed cell."""


@dataclass
class RootMap:
    subdomain: str
    root_of: Dict[CellId, CellId]
    aggregates: Dict[CellId, List[CellId]] = field(default_factory=dict)


def build_root_map(mesh: QuadtreeMesh, classes, subdomain: str) -> RootMap:
    """Grow aggregates from well-posed seeds by deterministic sweeps.

    Each sweep only reads assignments from the previous sweep, so the result
    matches a breadth-first trace.  Ties between assigned neighbors go to the
    one whose root centroid is nearest to the candidate cell centroid, then to
    the lexicographically smallest root and neighbor ids.
    """
    active = [cid for cid in mesh.leaves_sorted
              if classes[cid].tag(subdomain) != EXTERIOR]
    root_of: Dict[CellId, CellId] = {}
    unassigned = []
    for cid in active:
        if classes[cid].tag(subdomain) == WELL_POSED:
            root_of[cid] = cid
        else:
            unassigned.append(cid)

    active_set = set(active)
    nbrs = {cid: [nb for nb, _ in edge_neighbors(mesh, cid) if nb in active_set]
            for cid in unassigned}

    sweeps = 0
    while unassigned:
        sweeps += 1
        if sweeps > len(active) + 1:
            raise IsolatedIllPosedError(
                f"isolated ill-posed island in subdomain {subdomain}: "
                f"{sorted(unassigned)}")
        prev = dict(root_of)
        still = []
        for cid in unassigned:
            cand = [nb for nb in nbrs[cid] if nb in prev]
            if not cand:
                still.append(cid)
                continue
            cc = mesh.cell_centroid(cid)
            best = min(cand, key=lambda nb: (
                _dist2(mesh.cell_centroid(prev[nb]), cc),
                (prev[nb].level, prev[nb].i, prev[nb].j),
                (nb.level, nb.i, nb.j)))
            root_of[cid] = prev[best]
        if len(still) == len(unassigned):
            raise IsolatedIllPosedError(
                f"isolated ill-posed island in subdomain {subdomain}: "
                f"{sorted(still)}")
        unassigned = still

    aggregates: Dict[CellId, List[CellId]] = {}
    for cid in active:
        aggregates.setdefault(root_of[cid], []).append(cid)
    for members in aggregates.values():
        members.sort()
    return RootMap(subdomain, root_of, aggregates)


def _dist2(a, b) -> float:
    return float((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2)


def aggregate_diagnostics(root_map: RootMap, mesh: QuadtreeMesh) -> dict:
    """Aggregate size statistics; the diameter ratio is a robustness monitor."""
    max_members = 0
    max_ratio = 0.0
    for root, members in root_map.aggregates.items():
        max_members = max(max_members, len(members))
        xs, ys = [], []
        for cid in members:
            x0, y0, h = mesh.cell_box(cid)
            xs += [x0, x0 + h]
            ys += [y0, y0 + h]
        diam = math.hypot(max(xs) - min(xs), max(ys) - min(ys))
        h_root = mesh.h(root)
        max_ratio = max(max_ratio, diam / (math.sqrt(2.0) * h_root))
    return {"count": len(root_map.aggregates),
            "max_members": max_members,
            "max_diameter_ratio": max_ratio}

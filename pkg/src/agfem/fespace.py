"""Lagrangian Q1/Q2 spaces on active meshes with aggregation and hanging
constraints resolved to free masters.

Nodes are keyed on an integer lattice at twice the max-level resolution, so
Q2 mid-edge nodes are exact integers and geometric coincidence implies key
equality.  The global space is the Cartesian product of the two subdomain
spaces; cut cells carry nodes of both sides.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .cutgeom import EXTERIOR, ILL_POSED, WELL_POSED
from .mesh import CellId, QuadtreeMesh, neighbors_on_side

SIDES = ("+", "-")

WELL_FREE = "well-posed-free"
ILL = "ill-posed"
HANGING = "hanging"
DIRICHLET = "dirichlet"


class ConstraintCycleError(RuntimeError):
    """Constraint graph is not a DAG."""


class AggregationDistanceError(RuntimeError):
    """Constrained node lies implausibly far from its root cell."""


# ----------------------------------------------------------------------------
# reference shape functions (unit square, nodes x-fastest)
# ----------------------------------------------------------------------------

def _lagrange_1d(order: int, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if order == 1:
        return np.stack([1.0 - t, t], axis=-1)
    if order == 2:
        return np.stack([2.0 * (t - 0.5) * (t - 1.0),
                         -4.0 * t * (t - 1.0),
                         2.0 * t * (t - 0.5)], axis=-1)
    raise ValueError(f"order must be 1 or 2, got {order}")


def _lagrange_1d_deriv(order: int, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if order == 1:
        one = np.ones_like(t)
        return np.stack([-one, one], axis=-1)
    if order == 2:
        return np.stack([4.0 * t - 3.0, -8.0 * t + 4.0, 4.0 * t - 1.0], axis=-1)
    raise ValueError(f"order must be 1 or 2, got {order}")


def shape_values(order: int, pts) -> np.ndarray:
    """Tensor-product Lagrange values; valid outside [0,1]^2 (extrapolation).

    Returns (npts, (order+1)^2) with nodes ordered x-fastest, e.g. Q1:
    (0,0), (1,0), (0,1), (1,1).  Rows always sum to 1.
    """
    p = np.atleast_2d(np.asarray(pts, dtype=float))
    lx = _lagrange_1d(order, p[:, 0])
    ly = _lagrange_1d(order, p[:, 1])
    return (ly[:, :, None] * lx[:, None, :]).reshape(len(p), -1)


def shape_gradients(order: int, pts) -> np.ndarray:
    """Reference-space gradients, shape (npts, nloc, 2)."""
    p = np.atleast_2d(np.asarray(pts, dtype=float))
    lx = _lagrange_1d(order, p[:, 0])
    ly = _lagrange_1d(order, p[:, 1])
    dx = _lagrange_1d_deriv(order, p[:, 0])
    dy = _lagrange_1d_deriv(order, p[:, 1])
    gx = (ly[:, :, None] * dx[:, None, :]).reshape(len(p), -1)
    gy = (dy[:, :, None] * lx[:, None, :]).reshape(len(p), -1)
    return np.stack([gx, gy], axis=2)


@lru_cache(maxsize=None)
def _node_offsets(order: int) -> Tuple[Tuple[int, int], ...]:
    rng = range(order + 1)
    return tuple((a, b) for b in rng for a in rng)


def cell_node_keys(cid: CellId, order: int, max_level: int):
    """Lattice keys of a cell's nodes at scale 2^(max_level + 1), x-fastest."""
    step2 = 1 << (max_level + 1 - cid.level)   # cell size in doubled lattice
    sub = step2 // order
    ox, oy = cid.i * step2, cid.j * step2
    return [(ox + a * sub, oy + b * sub) for a, b in _node_offsets(order)]


# ----------------------------------------------------------------------------
# constraints
# ----------------------------------------------------------------------------

@dataclass
class Constraint:
    """value = sum(coef * master) + offset, offset has one entry per component."""
    masters: List[int]
    coefs: List[float]
    offset: np.ndarray
    kind: str


@dataclass
class AgFESpace:
    order: int
    mode: str                      # "aggregated" | "standard"
    ncomp: int
    mesh: QuadtreeMesh
    nodes: Dict[str, List[Tuple[int, int]]]
    node_index: Dict[str, Dict[Tuple[int, int], int]]
    node_coords: Dict[str, np.ndarray]
    cell_nodes: Dict[str, Dict[CellId, np.ndarray]]
    dof_class: Dict[str, List[str]]
    side_offset: Dict[str, int]
    n_active: int
    constraints: Dict[int, Constraint]          # closed, by global active id
    free_ids: List[int]                         # global active ids of free nodes
    free_index: Dict[int, int]
    expansion: List[Tuple[np.ndarray, np.ndarray, np.ndarray]] = field(repr=False, default=None)

    @property
    def n_free_nodes(self) -> int:
        return len(self.free_ids)

    @property
    def n_free(self) -> int:
        return self.n_free_nodes * self.ncomp

    def sigma_active(self, side: str) -> int:
        return len(self.nodes[side])

    def global_id(self, side: str, key) -> int:
        return self.side_offset[side] + self.node_index[side][key]

    def coords_of(self, gid: int) -> np.ndarray:
        for side in SIDES:
            off = self.side_offset[side]
            if off <= gid < off + len(self.nodes[side]):
                return self.node_coords[side][gid - off]
        raise KeyError(gid)

    def expand_solution(self, x_free: np.ndarray) -> np.ndarray:
        """Nodal values at all active nodes, constraints applied."""
        ncomp = self.ncomp
        vals = np.zeros((self.n_active, ncomp))
        xf = x_free.reshape(self.n_free_nodes, ncomp)
        for gid in range(self.n_active):
            masters, coefs, offset = self.expansion[gid]
            vals[gid] = offset.copy()
            for m, c in zip(masters, coefs):
                vals[gid] += c * xf[m]
        return vals


def _coord_of_key(mesh: QuadtreeMesh, key) -> np.ndarray:
    scale = 1 << (mesh.max_level + 1)
    u = mesh.domain.extent / scale
    return np.array([mesh.domain.x0 + key[0] * u, mesh.domain.y0 + key[1] * u])


def _on_domain_boundary(mesh: QuadtreeMesh, key) -> bool:
    top = 1 << (mesh.max_level + 1)
    return key[0] in (0, top) or key[1] in (0, top)


def hanging_constraints(mesh: QuadtreeMesh, order: int, active_cells,
                        node_key_set) -> Dict[Tuple[int, int], Tuple[list, list]]:
    """Raw hanging entries for one subdomain: key -> (master keys, coefs).

    A fine-edge node absent from the coarse side is constrained by the coarse
    edge trace evaluated at its position.  Only edges between two active cells
    are considered.
    """
    out: Dict[Tuple[int, int], Tuple[list, list]] = {}
    active = set(active_cells)
    for cid in sorted(active):
        for side in ("W", "E", "S", "N"):
            nbs = neighbors_on_side(mesh, cid, side)
            if len(nbs) != 1 or nbs[0].level >= cid.level:
                continue
            coarse = nbs[0]
            if coarse not in active:
                continue
            fine_keys = _edge_keys(cid, side, order, mesh.max_level)
            coarse_keys = _edge_keys(coarse, _opp(side), order, mesh.max_level)
            cset = set(coarse_keys)
            k0, k1 = coarse_keys[0], coarse_keys[-1]
            # parameter along the coarse edge from exact lattice arithmetic
            span = ((k1[0] - k0[0]) or (k1[1] - k0[1]))
            for fk in fine_keys:
                if fk in cset or fk in out:
                    continue
                num = (fk[0] - k0[0]) or (fk[1] - k0[1])
                t = num / span
                coefs = _lagrange_1d(order, np.array([t]))[0]
                out[fk] = (list(coarse_keys), [float(c) for c in coefs])
    return out


def _opp(side: str) -> str:
    return {"W": "E", "E": "W", "S": "N", "N": "S"}[side]


def _edge_keys(cid: CellId, side: str, order: int, max_level: int):
    """Node keys along one edge of a cell, sorted along the edge direction."""
    keys = cell_node_keys(cid, order, max_level)
    step2 = 1 << (max_level + 1 - cid.level)
    ox, oy = cid.i * step2, cid.j * step2
    if side == "W":
        sel = [k for k in keys if k[0] == ox]
    elif side == "E":
        sel = [k for k in keys if k[0] == ox + step2]
    elif side == "S":
        sel = [k for k in keys if k[1] == oy]
    else:
        sel = [k for k in keys if k[1] == oy + step2]
    return sorted(sel)


def aggregation_constraints(mesh: QuadtreeMesh, classes, root_map, order: int,
                            subdomain: str, ill_keys, key_cells):
    """Raw aggregation entries: ill-posed node key -> (root cell keys, coefs).

    The owning ill-posed cell is the one whose root centroid is nearest to the
    node, ties by smallest cell id; coefficients are root-cell shape functions
    evaluated at the node position (extrapolation).
    """
    out = {}
    for key in sorted(ill_keys):
        x = _coord_of_key(mesh, key)
        owners = [c for c in key_cells[key]
                  if classes[c].tag(subdomain) == ILL_POSED]
        if not owners:
            raise RuntimeError(f"ill-posed node {key} has no ill-posed cell")
        owner = min(owners, key=lambda c: (
            float(np.sum((mesh.cell_centroid(root_map.root_of[c]) - x) ** 2)),
            (c.level, c.i, c.j)))
        root = root_map.root_of[owner]
        x0, y0, h = mesh.cell_box(root)
        ref = (x - np.array([x0, y0])) / h
        if max(abs(ref[0] - 0.5), abs(ref[1] - 0.5)) > 10.0:
            raise AggregationDistanceError(
                f"node {key} is {ref} cell widths from root {root}")
        coefs = shape_values(order, ref[None, :])[0]
        out[key] = (cell_node_keys(root, order, mesh.max_level),
                    [float(c) for c in coefs])
    return out


def close_constraints(raw: Dict[int, Constraint], n_active: int) -> Dict[int, Constraint]:
    """Transitive substitution until all masters are free; detects cycles.

    Dirichlet masters fold into the affine offset; coefficients multiply along
    chains.  Idempotent: closing a closed set returns it unchanged.
    """
    closed: Dict[int, Constraint] = {}
    state = {}  # 0 visiting, 1 done

    def resolve(gid: int):
        if gid in closed or gid not in raw:
            return
        if state.get(gid) == 0:
            raise ConstraintCycleError(f"constraint cycle through node {gid}")
        state[gid] = 0
        con = raw[gid]
        masters: Dict[int, float] = {}
        offset = con.offset.astype(float).copy()
        for m, c in zip(con.masters, con.coefs):
            if m in raw:
                resolve(m)
                sub = closed[m]
                offset = offset + c * sub.offset
                for mm, cc in zip(sub.masters, sub.coefs):
                    masters[mm] = masters.get(mm, 0.0) + c * cc
            else:
                masters[m] = masters.get(m, 0.0) + c
        items = sorted(masters.items())
        closed[gid] = Constraint([m for m, _ in items], [c for _, c in items],
                                 offset, con.kind)
        state[gid] = 1

    for gid in sorted(raw):
        resolve(gid)
    return closed


def classify_dofs(mesh, classes, subdomain, order, dirichlet: bool,
                  hanging_keys, nodes, well_keys):
    """Tag per the precedence dirichlet > ill-posed > hanging > free."""
    tags = []
    for key in nodes:
        if dirichlet and _on_domain_boundary(mesh, key):
            tags.append(DIRICHLET)
        elif key not in well_keys:
            tags.append(ILL)
        elif key in hanging_keys:
            tags.append(HANGING)
        else:
            tags.append(WELL_FREE)
    return tags


def build_space(mesh: QuadtreeMesh, classes, root_maps, order: int,
                mode: str = "aggregated", ncomp: int = 1,
                dirichlet_fn: Optional[Callable] = None) -> AgFESpace:
    """Assemble the product space over both subdomains and number free DOFs.

    In standard mode aggregation constraints are omitted (ill-posed DOFs stay
    free); hanging and Dirichlet constraints are kept in both modes.
    """
    if mode not in ("aggregated", "standard"):
        raise ValueError(f"mode must be aggregated or standard, got {mode}")
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")

    nodes = {}
    node_index = {}
    node_coords = {}
    cell_nodes = {}
    dof_class = {}
    side_offset = {}
    raw: Dict[int, Constraint] = {}
    offset = 0
    zeros = np.zeros(ncomp)

    for side in SIDES:
        active = [cid for cid in mesh.leaves_sorted
                  if classes[cid].tag(side) != EXTERIOR]
        key_cells: Dict[Tuple[int, int], List[CellId]] = {}
        for cid in active:
            for key in cell_node_keys(cid, order, mesh.max_level):
                key_cells.setdefault(key, []).append(cid)
        side_nodes = sorted(key_cells)
        index = {k: i for i, k in enumerate(side_nodes)}
        well_keys = set()
        for cid in active:
            if classes[cid].tag(side) == WELL_POSED:
                well_keys.update(cell_node_keys(cid, order, mesh.max_level))

        hang = hanging_constraints(mesh, order, active, set(side_nodes))
        # Masters of well-posed hanging nodes carry local support in well-posed
        # cells through the conforming basis, so they are well-posed too; this
        # closure also keeps the constraint graph acyclic.
        changed = True
        while changed:
            changed = False
            for hk, (mk, _mc) in hang.items():
                if hk in well_keys:
                    for mkey in mk:
                        if mkey not in well_keys:
                            well_keys.add(mkey)
                            changed = True
        # Dirichlet wins over aggregation, so skip boundary nodes here
        ill_keys = [k for k in side_nodes if k not in well_keys
                    and not (dirichlet_fn is not None
                             and _on_domain_boundary(mesh, k))]
        agg = {}
        if mode == "aggregated" and ill_keys:
            agg = aggregation_constraints(mesh, classes, root_maps[side], order,
                                          side, ill_keys, key_cells)

        tags = classify_dofs(mesh, classes, side, order,
                             dirichlet_fn is not None, set(hang), side_nodes,
                             well_keys)

        coords = np.array([_coord_of_key(mesh, k) for k in side_nodes]) \
            if side_nodes else np.zeros((0, 2))
        for i, key in enumerate(side_nodes):
            gid = offset + i
            tag = tags[i]
            if tag == DIRICHLET:
                val = np.atleast_1d(np.asarray(
                    dirichlet_fn(coords[i], side), dtype=float))
                raw[gid] = Constraint([], [], val, DIRICHLET)
            elif tag == ILL and mode == "aggregated":
                mk, mc = agg[key]
                raw[gid] = Constraint([offset + index[m] for m in mk], mc,
                                      zeros.copy(), ILL)
            elif key in hang:
                # in standard mode ill-posed hanging nodes keep conformity
                mk, mc = hang[key]
                raw[gid] = Constraint([offset + index[m] for m in mk], mc,
                                      zeros.copy(), HANGING)

        nodes[side] = side_nodes
        node_index[side] = index
        node_coords[side] = coords
        cell_nodes[side] = {
            cid: np.array([index[k] for k in
                           cell_node_keys(cid, order, mesh.max_level)],
                          dtype=np.int64)
            for cid in active}
        dof_class[side] = tags
        side_offset[side] = offset
        offset += len(side_nodes)

    n_active = offset
    closed = close_constraints(raw, n_active)
    free_ids = [gid for gid in range(n_active) if gid not in closed]
    free_index = {gid: i for i, gid in enumerate(free_ids)}

    expansion = []
    for gid in range(n_active):
        if gid in closed:
            con = closed[gid]
            expansion.append((np.array([free_index[m] for m in con.masters],
                                       dtype=np.int64),
                              np.array(con.coefs),
                              con.offset))
        else:
            expansion.append((np.array([free_index[gid]], dtype=np.int64),
                              np.array([1.0]), zeros))

    return AgFESpace(order, mode, ncomp, mesh, nodes, node_index, node_coords,
                     cell_nodes, dof_class, side_offset, n_active, closed,
                     free_ids, free_index, expansion)

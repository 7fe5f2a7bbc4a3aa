"""Assembly of the interior-penalty interface formulation.

Builds the symmetric bilinear form (bulk stiffness plus interface penalty,
consistency and symmetrizing terms with harmonically weighted averages) and
the load functional over the cut quadratures, distributing every local
contribution through the closed constraint chains straight into the reduced
free-DOF system.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .cutgeom import CutDecomposition, SegmentQuadrature, bulk_quadrature, \
    interface_quadrature
from .fespace import AgFESpace, SIDES, shape_gradients, shape_values
from .linalg import SparseSystem

POISSON = "poisson"
ELASTICITY = "elasticity"


@dataclass
class MaterialParams:
    problem: str = POISSON
    k_plus: float = 1.0
    k_minus: float = 1.0
    mu_plus: float = 1.0
    mu_minus: float = 1.0
    nu: float = 0.3

    def __post_init__(self):
        if self.problem not in (POISSON, ELASTICITY):
            raise ValueError(f"unknown problem {self.problem}")
        if not (0.0 <= self.nu < 0.5):
            raise ValueError("nu must lie in [0, 0.5) (compressible)")
        for c in (self.k_plus, self.k_minus, self.mu_plus, self.mu_minus):
            if c <= 0:
                raise ValueError("material coefficients must be positive")

    @property
    def ncomp(self) -> int:
        return 1 if self.problem == POISSON else 2

    def lam(self, side: str) -> float:
        mu = self.mu_plus if side == "+" else self.mu_minus
        return 2.0 * self.nu * mu / (1.0 - 2.0 * self.nu)

    def coefficient(self, side: str) -> float:
        """Coefficient entering the interface weights: k or mu."""
        if self.problem == POISSON:
            return self.k_plus if side == "+" else self.k_minus
        return self.mu_plus if side == "+" else self.mu_minus


def harmonic_weights(c_plus: float, c_minus: float):
    """Contrast-robust averaging weights and the harmonic mean."""
    if c_plus <= 0 or c_minus <= 0:
        raise ValueError("coefficients must be positive")
    s = c_plus + c_minus
    return c_minus / s, c_plus / s, 2.0 * c_plus * c_minus / s


@dataclass
class NitscheParams:
    beta: float
    w_plus: float
    w_minus: float
    mu_bar: float

    @classmethod
    def from_material(cls, material: MaterialParams, beta: float) -> "NitscheParams":
        wp, wm, mb = harmonic_weights(material.coefficient("+"),
                                      material.coefficient("-"))
        return cls(beta, wp, wm, mb)


@dataclass
class InterfaceData:
    """Manufactured interface and volume data.

    j_gamma(points) -> (n, ncomp) solution jump; g_gamma(points, normals) ->
    (n, ncomp) flux/traction jump against the plus-side normal; f(side,
    points) -> (n, ncomp) body force.
    """
    j_gamma: Callable
    g_gamma: Callable
    f: Callable


def zero_interface_data(ncomp: int) -> InterfaceData:
    return InterfaceData(
        j_gamma=lambda pts: np.zeros((len(pts), ncomp)),
        g_gamma=lambda pts, n: np.zeros((len(pts), ncomp)),
        f=lambda side, pts: np.zeros((len(pts), ncomp)))


def _elastic_d(mu: float, lam: float) -> np.ndarray:
    return np.array([[lam + 2 * mu, lam, 0.0],
                     [lam, lam + 2 * mu, 0.0],
                     [0.0, 0.0, mu]])


def local_stiffness(box, rule, material: MaterialParams, side: str,
                    order: int) -> np.ndarray:
    """Element stiffness over one cell's subdomain part; empty rule -> zeros.

    Rows/columns are node-major with ncomp components per node.
    """
    x0, y0, h = box
    nloc = (order + 1) ** 2
    n = nloc * material.ncomp
    K = np.zeros((n, n))
    if len(rule.weights) == 0:
        return K
    ref = (rule.points - np.array([x0, y0])) / h
    grads = shape_gradients(order, ref) / h      # (npts, nloc, 2) physical
    w = rule.weights
    if material.problem == POISSON:
        k = material.coefficient(side)
        K = k * np.einsum("p,pid,pjd->ij", w, grads, grads)
    else:
        mu = material.coefficient(side)
        D = _elastic_d(mu, material.lam(side))
        npts = len(w)
        B = np.zeros((npts, 3, n))
        B[:, 0, 0::2] = grads[:, :, 0]
        B[:, 1, 1::2] = grads[:, :, 1]
        B[:, 2, 0::2] = grads[:, :, 1]
        B[:, 2, 1::2] = grads[:, :, 0]
        K = np.einsum("p,pai,ab,pbj->ij", w, B, D, B)
    return 0.5 * (K + K.T)


def _traction_rows(grads, normal, material: MaterialParams, side: str):
    """Flux (Poisson) or traction (elasticity) of each basis function.

    grads: (npts, nloc, 2) physical gradients.  Returns (npts, ncomp, ndof).
    """
    npts, nloc, _ = grads.shape
    if material.problem == POISSON:
        k = material.coefficient(side)
        t = k * (grads[:, :, 0] * normal[0] + grads[:, :, 1] * normal[1])
        return t[:, None, :]
    mu = material.coefficient(side)
    lam = material.lam(side)
    n = nloc * 2
    out = np.zeros((npts, 2, n))
    gx = grads[:, :, 0]
    gy = grads[:, :, 1]
    nx, ny = normal
    # basis (phi, 0): sigma = [ (lam+2mu)gx, lam... ] etc.
    out[:, 0, 0::2] = (lam + 2 * mu) * gx * nx + mu * gy * ny
    out[:, 1, 0::2] = mu * gy * nx + lam * gx * ny
    out[:, 0, 1::2] = lam * gy * nx + mu * gx * ny
    out[:, 1, 1::2] = mu * gx * nx + (lam + 2 * mu) * gy * ny
    return out


def interface_terms(segq: SegmentQuadrature, box, space_order: int,
                    material: MaterialParams, nitsche: NitscheParams,
                    data: Optional[InterfaceData] = None):
    """Local interface matrix block and load for one chord.

    The block couples plus and minus DOFs of the parent cell, ordered
    [plus nodes | minus nodes] node-major.  The load carries the penalty and
    symmetrizing terms against the prescribed jump plus the weighted flux-jump
    term (weights swapped across sides).
    """
    seg = segq.segment
    x0, y0, h = box
    ncomp = material.ncomp
    nloc = (space_order + 1) ** 2
    nd = nloc * ncomp
    ref = (segq.points - np.array([x0, y0])) / h
    vals = shape_values(space_order, ref)                 # (npts, nloc)
    grads = shape_gradients(space_order, ref) / h
    w = segq.weights
    npts = len(w)
    pen = nitsche.beta * nitsche.mu_bar / seg.h_parent

    # jump rows: [v+, -v-] per component
    jump = np.zeros((npts, ncomp, 2 * nd))
    for c in range(ncomp):
        jump[:, c, c:nd:ncomp] = vals
        jump[:, c, nd + c::ncomp] = -vals

    tp = _traction_rows(grads, seg.normal, material, "+")
    tm = _traction_rows(grads, seg.normal, material, "-")
    favg = np.zeros((npts, ncomp, 2 * nd))
    favg[:, :, :nd] = nitsche.w_plus * tp
    favg[:, :, nd:] = nitsche.w_minus * tm

    K = pen * np.einsum("p,pci,pcj->ij", w, jump, jump)
    cons = np.einsum("p,pci,pcj->ij", w, favg, jump)
    K -= cons + cons.T

    b = np.zeros(2 * nd)
    if data is not None:
        jg = np.atleast_2d(data.j_gamma(segq.points))
        gg = np.atleast_2d(data.g_gamma(segq.points,
                                        np.broadcast_to(seg.normal, (npts, 2))))
        b += pen * np.einsum("p,pc,pci->i", w, jg, jump)
        b -= np.einsum("p,pc,pci->i", w, jg, favg)
        vweight = np.zeros((npts, ncomp, 2 * nd))
        for c in range(ncomp):
            vweight[:, c, c:nd:ncomp] = nitsche.w_minus * vals
            vweight[:, c, nd + c::ncomp] = nitsche.w_plus * vals
        b += np.einsum("p,pc,pci->i", w, gg, vweight)
    return 0.5 * (K + K.T), b


class _Accumulator:
    """COO accumulation with constraint-chain expansion per local block."""

    def __init__(self, space: AgFESpace):
        self.space = space
        self.ncomp = space.ncomp
        self.n = space.n_free
        self.rows = []
        self.cols = []
        self.data = []
        self.rhs = np.zeros(self.n)

    def _expand(self, gids):
        """Expanded (system rows, coefficients, local system rows, offsets)."""
        ncomp = self.ncomp
        exp = self.space.expansion
        masters = []
        coefs = []
        locs = []
        offsets = np.zeros(len(gids) * ncomp)
        for li, g in enumerate(gids):
            m, c, off = exp[g]
            masters.append(m)
            coefs.append(c)
            locs.append(np.full(len(m), li, dtype=np.int64))
            offsets[li * ncomp:(li + 1) * ncomp] = off[:ncomp]
        m = np.concatenate(masters)
        c = np.concatenate(coefs)
        l = np.concatenate(locs)
        comp = np.arange(ncomp, dtype=np.int64)
        rows_sys = (m[:, None] * ncomp + comp).ravel()
        coef_sys = np.repeat(c, ncomp)
        loc_sys = (l[:, None] * ncomp + comp).ravel()
        return rows_sys, coef_sys, loc_sys, offsets

    def add_block(self, gids, K, b=None):
        rows_sys, coef_sys, loc_sys, offsets = self._expand(gids)
        if b is None:
            b = np.zeros(len(gids) * self.ncomp)
        b_eff = b - K @ offsets
        sub = K[np.ix_(loc_sys, loc_sys)] * (coef_sys[:, None] * coef_sys[None, :])
        m = len(rows_sys)
        self.rows.append(np.repeat(rows_sys, m))
        self.cols.append(np.tile(rows_sys, m))
        self.data.append(sub.ravel())
        np.add.at(self.rhs, rows_sys, coef_sys * b_eff[loc_sys])

    def add_rhs(self, gids, b):
        rows_sys, coef_sys, loc_sys, _ = self._expand(gids)
        np.add.at(self.rhs, rows_sys, coef_sys * b[loc_sys])

    def finish(self) -> SparseSystem:
        if self.rows:
            rows = np.concatenate(self.rows)
            cols = np.concatenate(self.cols)
            data = np.concatenate(self.data)
            A = sp.coo_matrix((data, (rows, cols)),
                              shape=(self.n, self.n)).tocsr()
        else:
            A = sp.csr_matrix((self.n, self.n))
        A = (A + A.T) * 0.5
        A.sum_duplicates()
        return SparseSystem(self.n, A.tocsr(), self.rhs)


def assemble(space: AgFESpace, decomp: CutDecomposition, classes,
             material: MaterialParams, nitsche: NitscheParams,
             data: Optional[InterfaceData] = None,
             beta_per_cell=None) -> SparseSystem:
    """Assemble the reduced symmetric system over free DOFs.

    ``beta_per_cell`` optionally overrides the penalty factor on a cell's
    interface chords (used by the standard-space conditioning baseline).
    """
    mesh = space.mesh
    order = space.order
    ncomp = material.ncomp
    if ncomp != space.ncomp:
        raise ValueError("space and material component counts differ")
    acc = _Accumulator(space)
    degree = 2 * order

    for side in SIDES:
        gid0 = space.side_offset[side]
        for cid in sorted(space.cell_nodes[side]):
            rule = bulk_quadrature(decomp, cid, side, degree)
            if len(rule.weights) == 0:
                continue
            box = mesh.cell_box(cid)
            gids = space.cell_nodes[side][cid] + gid0
            K = local_stiffness(box, rule, material, side, order)
            b = _local_load(box, rule, material, side, order, data)
            acc.add_block(gids, K, b)

    for segq in interface_quadrature(decomp, 2 * order + 1):
        cid = segq.segment.parent
        if cid not in space.cell_nodes["+"] or cid not in space.cell_nodes["-"]:
            # chord bounding a sliver below the volume-fraction tolerance
            continue
        nit = nitsche
        if beta_per_cell is not None and cid in beta_per_cell:
            nit = NitscheParams(beta_per_cell[cid], nitsche.w_plus,
                                nitsche.w_minus, nitsche.mu_bar)
        box = mesh.cell_box(cid)
        K, b = interface_terms(segq, box, order, material, nit, data)
        gp = space.cell_nodes["+"][cid] + space.side_offset["+"]
        gm = space.cell_nodes["-"][cid] + space.side_offset["-"]
        gids = np.concatenate([gp, gm])
        acc.add_block(gids, K, b)

    return acc.finish()


def _local_load(box, rule, material, side, order, data):
    nloc = (order + 1) ** 2
    n = nloc * material.ncomp
    if data is None or len(rule.weights) == 0:
        return np.zeros(n)
    x0, y0, h = box
    ref = (rule.points - np.array([x0, y0])) / h
    vals = shape_values(order, ref)
    fv = np.atleast_2d(data.f(side, rule.points))
    b = np.zeros(n)
    for c in range(material.ncomp):
        b[c::material.ncomp] = np.einsum("p,pc,pi->i", rule.weights,
                                         fv[:, c:c + 1], vals)
    return b


def stdfe_beta(decomp: CutDecomposition, cid, material: MaterialParams,
               nitsche: NitscheParams, order: int, default_beta: float):
    """Per-cell penalty factor for the standard (non-aggregated) space.

    Solves the local generalized eigenproblem between the weighted interface
    flux term and the (shift-regularized) cut stiffness by power iteration and
    returns twice the largest eigenvalue.  Falls back to a cut-size-scaled
    default when the iteration stalls.
    """
    cc = decomp.cuts.get(cid)
    if cc is None:
        raise ValueError(f"{cid} is not a cut cell")
    box = decomp.mesh.cell_box(cid)
    nloc = (order + 1) ** 2
    nd = nloc * material.ncomp

    K = np.zeros((2 * nd, 2 * nd))
    for k, side in enumerate(SIDES):
        rule = bulk_quadrature(decomp, cid, side, 2 * order)
        Ks = local_stiffness(box, rule, material, side, order)
        K[k * nd:(k + 1) * nd, k * nd:(k + 1) * nd] = Ks
    shift = 1e-12 * np.trace(K) / (2 * nd) if np.trace(K) > 0 else 1e-12
    A = K + shift * np.eye(2 * nd)

    x0, y0, h = box
    B = np.zeros((2 * nd, 2 * nd))
    t, w = np.polynomial.legendre.leggauss(order + 1)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    total_len = 0.0
    for seg in cc.segments:
        d = seg.p1 - seg.p0
        pts = seg.p0[None, :] + t[:, None] * d[None, :]
        total_len += seg.length
        ref = (pts - np.array([x0, y0])) / h
        grads = shape_gradients(order, ref) / h
        tp = _traction_rows(grads, seg.normal, material, "+")
        tm = _traction_rows(grads, seg.normal, material, "-")
        favg = np.zeros((len(t), material.ncomp, 2 * nd))
        favg[:, :, :nd] = nitsche.w_plus * tp
        favg[:, :, nd:] = nitsche.w_minus * tm
        B += (seg.h_parent / nitsche.mu_bar) * np.einsum(
            "p,pci,pcj->ij", w * seg.length, favg, favg)

    rng = np.random.default_rng(1234)
    x = rng.standard_normal(2 * nd)
    x /= np.linalg.norm(x)
    lam = 0.0
    try:
        solve = np.linalg.solve
        for it in range(500):
            y = solve(A, B @ x)
            ny = np.linalg.norm(y)
            if ny == 0.0:
                return 0.0
            y /= ny
            lam_new = float(y @ B @ y) / float(y @ A @ y)
            if it > 2 and abs(lam_new - lam) <= 1e-10 * max(1.0, abs(lam_new)):
                return 2.0 * lam_new
            lam = lam_new
            x = y
    except np.linalg.LinAlgError:
        pass
    if total_len > 0:
        import warnings
        warnings.warn(f"power iteration stalled on {cid}; using scaled default")
        return default_beta * (h / total_len)
    return default_beta


def stdfe_beta_map(decomp: CutDecomposition, material, nitsche, order: int):
    default = 10.0 * order ** 2
    out = {}
    for cid in sorted(decomp.cuts):
        if decomp.cuts[cid].segments:
            out[cid] = max(stdfe_beta(decomp, cid, material, nitsche, order,
                                      default), default)
    return out

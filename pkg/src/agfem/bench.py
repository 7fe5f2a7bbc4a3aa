"""Manufactured interface problems, error norms and the adaptive marking rule.

Every case carries exact value/gradient evaluators per subdomain; body force,
solution jump and flux/traction jump are derived from those fields, so the
interface data is consistent with the governing equations by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .assembly import ELASTICITY, POISSON, InterfaceData, MaterialParams, \
    harmonic_weights
from .cutgeom import CutDecomposition, bulk_quadrature, interface_quadrature
from .fespace import AgFESpace, SIDES, shape_gradients, shape_values
from .mesh import CellId, QuadtreeMesh


@dataclass
class ManufacturedCase:
    name: str
    ncomp: int
    material: MaterialParams
    u: Callable          # (side, pts) -> (n, ncomp)
    grad: Callable       # (side, pts) -> (n, ncomp, 2)
    f: Callable          # (side, pts) -> (n, ncomp)
    j_gamma: Callable    # (pts) -> (n, ncomp)
    g_gamma: Callable    # (pts, normals) -> (n, ncomp)

    def dirichlet(self, p, side):
        return self.u(side, np.asarray(p, dtype=float)[None, :])[0]

    def interface_data(self) -> InterfaceData:
        return InterfaceData(self.j_gamma, self.g_gamma, self.f)


def out_fe_space_case(q: int, k_plus: float, k_minus: float) -> ManufacturedCase:
    """One-dimensional-in-x solution of degree q+1, discontinuous across the
    interface but with continuous normal flux."""
    if q not in (1, 2):
        raise ValueError("q must be 1 or 2")
    if k_plus <= 0 or k_minus <= 0:
        raise ValueError("diffusion coefficients must be positive")
    ks = k_plus + k_minus
    lin_p = (3 * k_minus + k_plus) / (4 * k_plus * ks)
    const_p = (k_plus - k_minus) / (4 * k_plus * ks)
    lin_m = (3 * k_minus + k_plus) / (4 * k_minus * ks)

    def u(side, pts):
        x = pts[:, 0]
        if side == "+":
            vals = const_p + lin_p * x - x ** (q + 1) / ((q + 1) * k_plus)
        else:
            vals = lin_m * x - x ** (q + 1) / ((q + 1) * k_minus)
        return vals[:, None]

    def grad(side, pts):
        x = pts[:, 0]
        k = k_plus if side == "+" else k_minus
        lin = lin_p if side == "+" else lin_m
        g = np.zeros((len(pts), 1, 2))
        g[:, 0, 0] = lin - x ** q / k
        return g

    def f(side, pts):
        return (q * pts[:, 0] ** (q - 1))[:, None]

    def j_gamma(pts):
        return u("+", pts) - u("-", pts)

    def g_gamma(pts, normals):
        # normal flux is continuous for this solution
        return np.zeros((len(pts), 1))

    mat = MaterialParams(POISSON, k_plus=k_plus, k_minus=k_minus)
    return ManufacturedCase("out_fe_space", 1, mat, u, grad, f, j_gamma, g_gamma)


def fichera2d_case(center, k_plus: float, k_minus: float,
                   theta0: Optional[float] = None) -> ManufacturedCase:
    """Reentrant-corner problem: smooth quartic harmonic outside, singular
    r^(2/3) harmonic inside the sector; both sides satisfy f = 0.

    ``theta0`` is the sector start angle and must match the interface shape.
    The polar branch cut is placed on the bisector of the removed wedge, so
    evaluations near either wedge edge use the correct one-sided limits.
    """
    from .geometry import PACMAN_THETA0
    if theta0 is None:
        theta0 = PACMAN_THETA0
    cx, cy = float(center[0]), float(center[1])
    om_minus = 2.0 / 3.0
    om_plus = 4.0

    def _polar(pts):
        dx = pts[:, 0] - cx
        dy = pts[:, 1] - cy
        r = np.hypot(dx, dy)
        th = np.arctan2(dy, dx) - theta0
        # branch window [-pi/4, 7pi/4): cut on the removed wedge bisector
        th = np.mod(th + 0.25 * np.pi, 2.0 * np.pi) - 0.25 * np.pi
        return r, th

    def _omega(side):
        return om_plus if side == "+" else om_minus

    def u(side, pts):
        r, th = _polar(pts)
        om = _omega(side)
        return (r ** om * np.sin(om * th))[:, None]

    def grad(side, pts):
        r, th = _polar(pts)
        om = _omega(side)
        g = np.zeros((len(pts), 1, 2))
        safe = np.where(r < 1e-14, 1.0, r)
        amp = om * safe ** (om - 1.0)
        ang = th + theta0
        er = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        et = np.stack([-np.sin(ang), np.cos(ang)], axis=1)
        gm = amp[:, None] * (np.sin(om * th)[:, None] * er
                             + np.cos(om * th)[:, None] * et)
        # minus-side gradient is singular at the corner; report zero there
        g[:, 0, :] = np.where((r < 1e-14)[:, None], 0.0, gm)
        return g

    def f(side, pts):
        return np.zeros((len(pts), 1))

    def j_gamma(pts):
        return u("+", pts) - u("-", pts)

    def g_gamma(pts, normals):
        gp = grad("+", pts)[:, 0, :]
        gm = grad("-", pts)[:, 0, :]
        flux = k_plus * gp - k_minus * gm
        return np.einsum("pd,pd->p", flux, normals)[:, None]

    mat = MaterialParams(POISSON, k_plus=k_plus, k_minus=k_minus)
    return ManufacturedCase("fichera2d", 1, mat, u, grad, f, j_gamma, g_gamma)


def disk_inclusion_case(mu_plus: float, mu_minus: float, nu: float,
                        a: float = 0.4, b: float = 2.0) -> ManufacturedCase:
    """Radial two-material displacement field; continuous across the circle
    r = a with continuous traction, so jumps vanish and f = 0."""
    mat = MaterialParams(ELASTICITY, mu_plus=mu_plus, mu_minus=mu_minus, nu=nu)
    lam_p, lam_m = mat.lam("+"), mat.lam("-")
    c = ((lam_m + mu_minus + mu_plus) * b * b
         / ((lam_p + mu_plus) * a * a + (lam_m + mu_minus) * (b * b - a * a)
            + mu_plus * b * b))
    A_in = (1.0 - b * b / (a * a)) * c + b * b / (a * a)
    A_out = c
    B_out = (1.0 - c) * b * b

    def _AB(side):
        return (A_out, B_out) if side == "+" else (A_in, 0.0)

    def u(side, pts):
        A, B = _AB(side)
        r2 = pts[:, 0] ** 2 + pts[:, 1] ** 2
        safe = np.where(r2 < 1e-300, 1.0, r2)
        fac = A + B / safe
        return fac[:, None] * pts

    def grad(side, pts):
        A, B = _AB(side)
        r2 = pts[:, 0] ** 2 + pts[:, 1] ** 2
        safe = np.where(r2 < 1e-300, 1.0, r2)
        g = np.zeros((len(pts), 2, 2))
        fac = A + B / safe
        g[:, 0, 0] = fac
        g[:, 1, 1] = fac
        quad = 2.0 * B / (safe * safe)
        g[:, 0, 0] -= quad * pts[:, 0] * pts[:, 0]
        g[:, 0, 1] -= quad * pts[:, 0] * pts[:, 1]
        g[:, 1, 0] -= quad * pts[:, 1] * pts[:, 0]
        g[:, 1, 1] -= quad * pts[:, 1] * pts[:, 1]
        return g

    def stress(side, pts):
        mu = mu_plus if side == "+" else mu_minus
        lam = lam_p if side == "+" else lam_m
        gu = grad(side, pts)
        eps = 0.5 * (gu + np.transpose(gu, (0, 2, 1)))
        tr = eps[:, 0, 0] + eps[:, 1, 1]
        sig = 2.0 * mu * eps
        sig[:, 0, 0] += lam * tr
        sig[:, 1, 1] += lam * tr
        return sig

    def f(side, pts):
        return np.zeros((len(pts), 2))

    def j_gamma(pts):
        return np.zeros((len(pts), 2))

    def g_gamma(pts, normals):
        ds = stress("+", pts) - stress("-", pts)
        return np.einsum("pab,pb->pa", ds, normals)

    case = ManufacturedCase("disk_inclusion", 2, mat, u, grad, f, j_gamma,
                            g_gamma)
    case.stress = stress
    return case


# ----------------------------------------------------------------------------
# error norms
# ----------------------------------------------------------------------------

@dataclass
class ErrorReport:
    l2: float
    h1_semi: float
    energy: float
    energy_density_l2: float
    per_cell_energy: Dict[CellId, float]   # squared per-cell contributions
    jump_sq: float
    u_l2: float
    u_h1_semi: float
    u_energy: float

    @property
    def rel_l2(self) -> float:
        return self.l2 / self.u_l2 if self.u_l2 > 0 else self.l2

    @property
    def rel_h1(self) -> float:
        return self.h1_semi / self.u_h1_semi if self.u_h1_semi > 0 else self.h1_semi

    @property
    def rel_energy(self) -> float:
        return self.energy / self.u_energy if self.u_energy > 0 else self.energy


def error_norms(x_free: np.ndarray, space: AgFESpace, case: ManufacturedCase,
                decomp: CutDecomposition, material: MaterialParams) -> ErrorReport:
    """Broken norms of the discrete error and of the exact solution.

    The energy norm weighs each subdomain gradient by its coefficient and adds
    the interface jump penalty with the harmonic mean over the chord's parent
    cell size.  Quadrature of degree 2q+3 avoids sampling only at stiffness
    Gauss points.
    """
    mesh = space.mesh
    order = space.order
    ncomp = space.ncomp
    nodal = space.expand_solution(x_free)
    degree = min(2 * order + 3, 10)
    _, _, mu_bar = harmonic_weights(material.coefficient("+"),
                                    material.coefficient("-"))

    l2 = h1 = en = ed = 0.0
    u_l2 = u_h1 = u_en = 0.0
    per_cell: Dict[CellId, float] = {}

    for side in SIDES:
        coef = material.coefficient(side)
        gid0 = space.side_offset[side]
        for cid in sorted(space.cell_nodes[side]):
            rule = bulk_quadrature(decomp, cid, side, degree)
            if len(rule.weights) == 0:
                continue
            x0, y0, h = mesh.cell_box(cid)
            ref = (rule.points - np.array([x0, y0])) / h
            vals = shape_values(order, ref)
            grads = shape_gradients(order, ref) / h
            nv = nodal[space.cell_nodes[side][cid] + gid0]     # (nloc, ncomp)
            uh = vals @ nv                                      # (npts, ncomp)
            guh = np.einsum("pid,ic->pcd", grads, nv)
            ue = case.u(side, rule.points)
            gue = case.grad(side, rule.points)
            e = uh - ue
            ge = guh - gue
            w = rule.weights
            l2 += float(np.einsum("p,pc,pc->", w, e, e))
            h1c = float(np.einsum("p,pcd,pcd->", w, ge, ge))
            h1 += h1c
            en += coef * h1c
            u_l2 += float(np.einsum("p,pc,pc->", w, ue, ue))
            uh1c = float(np.einsum("p,pcd,pcd->", w, gue, gue))
            u_h1 += uh1c
            u_en += coef * uh1c
            per_cell[cid] = per_cell.get(cid, 0.0) + coef * h1c
            if material.problem == ELASTICITY:
                ed += _energy_density_sq(ge, w, material, side)

    jump_sq = 0.0
    for segq in interface_quadrature(decomp, degree):
        cid = segq.segment.parent
        if (cid not in space.cell_nodes["+"]
                or cid not in space.cell_nodes["-"]):
            continue
        fac = mu_bar / segq.segment.h_parent
        uhp = _trace(space, nodal, "+", cid, segq.points)
        uhm = _trace(space, nodal, "-", cid, segq.points)
        je = (uhp - uhm) - case.j_gamma(segq.points)
        jump_sq += fac * float(np.einsum("p,pc,pc->", segq.weights, je, je))

    energy = math.sqrt(max(en + jump_sq, 0.0))
    # normalizer deliberately omits the mesh-dependent jump penalty of u,
    # which would otherwise grow like 1/sqrt(h) for nonzero prescribed jumps
    u_energy = math.sqrt(max(u_en, 0.0))
    return ErrorReport(math.sqrt(max(l2, 0.0)), math.sqrt(max(h1, 0.0)),
                       energy, math.sqrt(max(ed, 0.0)), per_cell, jump_sq,
                       math.sqrt(max(u_l2, 0.0)), math.sqrt(max(u_h1, 0.0)),
                       u_energy)


def _trace(space, nodal, side, cid, pts):
    x0, y0, h = space.mesh.cell_box(cid)
    ref = (pts - np.array([x0, y0])) / h
    vals = shape_values(space.order, ref)
    nv = nodal[space.cell_nodes[side][cid] + space.side_offset[side]]
    return vals @ nv


def _energy_density_sq(ge, w, material, side):
    mu = material.coefficient(side)
    lam = material.lam(side)
    eps = 0.5 * (ge + np.transpose(ge, (0, 2, 1)))
    tr = eps[:, 0, 0] + eps[:, 1, 1]
    sig = 2.0 * mu * eps
    sig[:, 0, 0] += lam * tr
    sig[:, 1, 1] += lam * tr
    dens = np.einsum("pab,pab->p", sig, eps)
    return float(np.einsum("p,p->", w, dens))


def li_bettess_mark(per_cell_energy: Dict[CellId, float], u_energy: float,
                    target_rel_error: float, mesh: QuadtreeMesh):
    """Equidistribution marking from squared per-cell energies.

    Permissible per-cell error is target * |u| / sqrt(n_cells); cells above it
    are refined, complete sibling quadruples entirely below a tenth of it are
    coarsened.
    """
    n = len(mesh.leaves)
    e_perm = target_rel_error * u_energy / math.sqrt(n)
    refine = []
    for cid in mesh.leaves_sorted:
        if math.sqrt(per_cell_energy.get(cid, 0.0)) > e_perm:
            refine.append(cid)
    coarsen = []
    by_parent: Dict[CellId, list] = {}
    for cid in mesh.leaves_sorted:
        if cid.level == 0:
            continue
        by_parent.setdefault(cid.parent(), []).append(cid)
    for parent, group in sorted(by_parent.items()):
        if len(group) == 4 and all(
                math.sqrt(per_cell_energy.get(c, 0.0)) < 0.1 * e_perm
                for c in group):
            coarsen.extend(group)
    refine_set = set(refine)
    coarsen = [c for c in coarsen if c not in refine_set]
    return refine, coarsen

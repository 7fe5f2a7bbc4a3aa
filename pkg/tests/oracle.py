"""Independent brute-force reference implementations used only by tests.

These never share code with the production paths they verify: dense loop
assembly with its own hand-written bases and explicit prolongation, a cyclic
Jacobi eigensolver, a stratified Monte Carlo region integrator, a
repeated-substitution constraint-closure fixpoint and a pairwise balance
checker.
"""
from __future__ import annotations

import math

import numpy as np

from agfem.cutgeom import bulk_quadrature, interface_quadrature
from agfem.fespace import SIDES


# ---------------------------------------------------------------------------
# hand-written Lagrange bases (kept separate from the production tensor code)
# ---------------------------------------------------------------------------

def _q1_vals(x, y):
    return [(1 - x) * (1 - y), x * (1 - y), (1 - x) * y, x * y]


def _q1_grads(x, y):
    return [(-(1 - y), -(1 - x)), ((1 - y), -x), (-y, (1 - x)), (y, x)]


def _l2(t):
    return [2 * (t - 0.5) * (t - 1), -4 * t * (t - 1), 2 * t * (t - 0.5)]


def _dl2(t):
    return [4 * t - 3, -8 * t + 4, 4 * t - 1]


def _q2_vals(x, y):
    lx, ly = _l2(x), _l2(y)
    return [lx[a] * ly[b] for b in range(3) for a in range(3)]


def _q2_grads(x, y):
    lx, ly = _l2(x), _l2(y)
    dx, dy = _dl2(x), _dl2(y)
    return [(dx[a] * ly[b], lx[a] * dy[b]) for b in range(3) for a in range(3)]


def basis(order, x, y):
    return _q1_vals(x, y) if order == 1 else _q2_vals(x, y)


def basis_grads(order, x, y):
    return _q1_grads(x, y) if order == 1 else _q2_grads(x, y)


# ---------------------------------------------------------------------------
# dense assembly via explicit prolongation
# ---------------------------------------------------------------------------

def dense_assemble(space, decomp, classes, material, nitsche, data=None):
    """Straightforward dense loop assembly, reduced as P^T A P densely."""
    n_active = space.n_active
    ncomp = material.ncomp
    na = n_active * ncomp
    if na > 2000 * ncomp:
        raise ValueError(f"dense assembly capped at 2000 nodes, got {n_active}")
    A = np.zeros((na, na))
    b = np.zeros(na)
    order = space.order
    mesh = space.mesh

    for side in SIDES:
        g0 = space.side_offset[side]
        for cid in sorted(space.cell_nodes[side]):
            rule = bulk_quadrature(decomp, cid, side, 2 * order)
            if len(rule.weights) == 0:
                continue
            x0, y0, h = mesh.cell_box(cid)
            gids = [g + g0 for g in space.cell_nodes[side][cid]]
            for p, w in zip(rule.points, rule.weights):
                xr, yr = (p[0] - x0) / h, (p[1] - y0) / h
                grads = [(gx / h, gy / h) for gx, gy in
                         basis_grads(order, xr, yr)]
                vals = basis(order, xr, yr)
                if material.problem == "poisson":
                    k = material.coefficient(side)
                    for i, gi in enumerate(gids):
                        for j, gj in enumerate(gids):
                            A[gi, gj] += w * k * (grads[i][0] * grads[j][0]
                                                  + grads[i][1] * grads[j][1])
                else:
                    mu = material.coefficient(side)
                    lam = material.lam(side)
                    for i, gi in enumerate(gids):
                        for j, gj in enumerate(gids):
                            gi_x, gi_y = grads[i]
                            gj_x, gj_y = grads[j]
                            # component blocks of sigma(phi_j e_b):eps(phi_i e_a)
                            A[2 * gi, 2 * gj] += w * ((lam + 2 * mu) * gi_x * gj_x
                                                      + mu * gi_y * gj_y)
                            A[2 * gi, 2 * gj + 1] += w * (lam * gi_x * gj_y
                                                          + mu * gi_y * gj_x)
                            A[2 * gi + 1, 2 * gj] += w * (lam * gi_y * gj_x
                                                          + mu * gi_x * gj_y)
                            A[2 * gi + 1, 2 * gj + 1] += w * (
                                (lam + 2 * mu) * gi_y * gj_y + mu * gi_x * gj_x)
                if data is not None:
                    fv = np.atleast_2d(data.f(side, p[None, :]))[0]
                    for i, gi in enumerate(gids):
                        for c in range(ncomp):
                            b[ncomp * gi + c] += w * fv[c] * vals[i]

    for segq in interface_quadrature(decomp, 2 * order + 1):
        cid = segq.segment.parent
        if cid not in space.cell_nodes["+"] or cid not in space.cell_nodes["-"]:
            continue
        x0, y0, h = mesh.cell_box(cid)
        gp = [g + space.side_offset["+"] for g in space.cell_nodes["+"][cid]]
        gm = [g + space.side_offset["-"] for g in space.cell_nodes["-"][cid]]
        nrm = segq.segment.normal
        pen = nitsche.beta * nitsche.mu_bar / segq.segment.h_parent
        for p, w in zip(segq.points, segq.weights):
            xr, yr = (p[0] - x0) / h, (p[1] - y0) / h
            vals = basis(order, xr, yr)
            grads = [(gx / h, gy / h) for gx, gy in basis_grads(order, xr, yr)]
            jump_rows, favg_rows, gw_rows = _interface_rows(
                gids_p=gp, gids_m=gm, vals=vals, grads=grads, nrm=nrm,
                material=material, nitsche=nitsche, na=na)
            for c in range(ncomp):
                jr, fr = jump_rows[c], favg_rows[c]
                A += pen * w * np.outer(jr, jr)
                A -= w * (np.outer(fr, jr) + np.outer(jr, fr))
            if data is not None:
                jg = np.atleast_2d(data.j_gamma(p[None, :]))[0]
                gg = np.atleast_2d(data.g_gamma(p[None, :], nrm[None, :]))[0]
                for c in range(ncomp):
                    b += pen * w * jg[c] * jump_rows[c]
                    b -= w * jg[c] * favg_rows[c]
                    b += w * gg[c] * gw_rows[c]

    P = np.zeros((na, space.n_free))
    offs = np.zeros(na)
    for gid in range(n_active):
        masters, coefs, off = space.expansion[gid]
        for c in range(ncomp):
            for m, cf in zip(masters, coefs):
                P[ncomp * gid + c, ncomp * m + c] = cf
            offs[ncomp * gid + c] = off[c] if len(off) == ncomp else 0.0
    Ar = P.T @ A @ P
    br = P.T @ (b - A @ offs)
    return 0.5 * (Ar + Ar.T), br


def _interface_rows(gids_p, gids_m, vals, grads, nrm, material, nitsche, na):
    ncomp = material.ncomp
    jump = [np.zeros(na) for _ in range(ncomp)]
    favg = [np.zeros(na) for _ in range(ncomp)]
    gw = [np.zeros(na) for _ in range(ncomp)]
    for c in range(ncomp):
        for i, g in enumerate(gids_p):
            jump[c][ncomp * g + c] += vals[i]
            gw[c][ncomp * g + c] += nitsche.w_minus * vals[i]
        for i, g in enumerate(gids_m):
            jump[c][ncomp * g + c] -= vals[i]
            gw[c][ncomp * g + c] += nitsche.w_plus * vals[i]
    if material.problem == "poisson":
        for side, gids, wgt in (("+", gids_p, nitsche.w_plus),
                                ("-", gids_m, nitsche.w_minus)):
            k = material.coefficient(side)
            for i, g in enumerate(gids):
                favg[0][g] += wgt * k * (grads[i][0] * nrm[0]
                                         + grads[i][1] * nrm[1])
    else:
        nx, ny = nrm
        for side, gids, wgt in (("+", gids_p, nitsche.w_plus),
                                ("-", gids_m, nitsche.w_minus)):
            mu = material.coefficient(side)
            lam = material.lam(side)
            for i, g in enumerate(gids):
                gx, gy = grads[i]
                favg[0][2 * g] += wgt * ((lam + 2 * mu) * gx * nx + mu * gy * ny)
                favg[1][2 * g] += wgt * (mu * gy * nx + lam * gx * ny)
                favg[0][2 * g + 1] += wgt * (lam * gy * nx + mu * gx * ny)
                favg[1][2 * g + 1] += wgt * (mu * gx * nx + (lam + 2 * mu) * gy * ny)
    return jump, favg, gw


# ---------------------------------------------------------------------------
# cyclic Jacobi symmetric eigensolver
# ---------------------------------------------------------------------------

def dense_sym_eig(A):
    """All eigenvalues by cyclic Jacobi rotations, sorted ascending."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    if not np.allclose(A, A.T, atol=1e-12 * max(1.0, abs(A).max())):
        raise ValueError("matrix must be symmetric")
    if n > 4000:
        raise ValueError("cyclic Jacobi capped at n = 4000")
    target = 1e-12 * np.linalg.norm(A, "fro")
    for _sweep in range(100):
        off = math.sqrt(max(0.0, (A * A).sum() - (np.diag(A) ** 2).sum()))
        if off < target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = 0.5 * (A[q, q] - A[p, p]) / apq
                t = math.copysign(1.0, theta) / (
                    abs(theta) + math.sqrt(1.0 + theta * theta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                cp = A[:, p].copy()
                cq = A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
    return np.sort(np.diag(A))


# ---------------------------------------------------------------------------
# stratified Monte Carlo region integral
# ---------------------------------------------------------------------------

def mc_region_integral(ls, box, integrand, n_samples, seed):
    """Stratified sampling over ``box = (x0, y0, w, h)`` restricted to the
    minus region of ``ls``; returns (estimate, standard error)."""
    if n_samples < 10 ** 4:
        raise ValueError("need at least 1e4 samples")
    x0, y0, w, h = box
    m = int(math.sqrt(n_samples))
    rng = np.random.default_rng(seed)
    ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    u = (ii.ravel() + rng.random(m * m)) / m
    v = (jj.ravel() + rng.random(m * m)) / m
    pts = np.stack([x0 + u * w, y0 + v * h], axis=1)
    inside = ls.values(pts) < 0
    fv = np.where(inside, integrand(pts), 0.0)
    area = w * h
    est = area * float(fv.mean())
    se = area * float(fv.std(ddof=1)) / math.sqrt(len(fv))
    return est, se


# ---------------------------------------------------------------------------
# constraint closure fixpoint and mesh balance oracles
# ---------------------------------------------------------------------------

def closure_fixpoint(raw):
    """Repeated substitution until no master is itself constrained.

    ``raw`` maps id -> (list of (master, coef), offset).  Returns the same
    structure with only unconstrained masters.
    """
    out = {k: (list(ms), float(off)) for k, (ms, off) in raw.items()}
    for _ in range(len(raw) + 1):
        changed = False
        for k in sorted(out):
            ms, off = out[k]
            new = []
            for m, c in ms:
                if m in out:
                    sub_ms, sub_off = out[m]
                    off += c * sub_off
                    new.extend((mm, c * cc) for mm, cc in sub_ms)
                    changed = True
                else:
                    new.append((m, c))
            agg = {}
            for m, c in new:
                agg[m] = agg.get(m, 0.0) + c
            out[k] = (sorted(agg.items()), off)
        if not changed:
            return out
    raise RuntimeError("cycle in constraint graph")


def balanced_closure(leaves, max_level):
    """Split any leaf with an edge-adjacent leaf 2+ levels finer (fixpoint).

    Adjacency is decided from exact integer extents, independently of the
    production neighbor search.
    """
    def bounds(cid):
        s = 1 << (max_level - cid.level)
        return cid.i * s, cid.j * s, s

    leaves = set(leaves)
    while True:
        worst = None
        ls = sorted(leaves)
        for a in ls:
            ax, ay, asz = bounds(a)
            for b in ls:
                if b.level <= a.level + 1:
                    continue
                bx, by, bsz = bounds(b)
                share_x = max(ax, bx) < min(ax + asz, bx + bsz)
                share_y = max(ay, by) < min(ay + asz, by + bsz)
                touch_x = ax + asz == bx or bx + bsz == ax
                touch_y = ay + asz == by or by + bsz == ay
                if (touch_x and share_y) or (touch_y and share_x):
                    worst = a
                    break
            if worst:
                break
        if worst is None:
            return leaves
        leaves.remove(worst)
        leaves.update(worst.children())

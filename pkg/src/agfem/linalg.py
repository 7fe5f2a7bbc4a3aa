"""Sparse symmetric systems: Jacobi-preconditioned CG and 2-norm condition
number estimation with diagonal scaling.

The dense path (n <= 4000) uses a symmetric eigendecomposition; larger
systems use Lanczos with full reorthogonalization for the top of the spectrum
and inverse power iteration for the bottom.  Estimates of numerically singular
matrices are capped and flagged as lower bounds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

CAP = 1e30


class IndefiniteMatrixError(RuntimeError):
    """Negative eigenvalue beyond tolerance: coercivity lost."""


@dataclass
class SparseSystem:
    n: int
    matrix: sp.csr_matrix
    rhs: np.ndarray

    @property
    def diag(self) -> np.ndarray:
        return self.matrix.diagonal()


@dataclass
class SolveReport:
    iterations: int
    final_relres: float
    converged: bool


@dataclass
class CondEstimate:
    value: float
    capped: bool
    method: str


def pcg(system: SparseSystem, tol: float = 1e-9, maxit: int = 20000):
    """Conjugate gradients with Jacobi preconditioning from x0 = 0."""
    A = system.matrix
    b = system.rhs
    nb = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if nb == 0.0:
        return x, SolveReport(0, 0.0, True)
    d = system.diag.copy()
    d[d <= 0] = 1.0
    minv = 1.0 / d
    r = b.copy()
    z = minv * r
    p = z.copy()
    rz = float(r @ z)
    relres = 1.0
    for it in range(1, maxit + 1):
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        relres = float(np.linalg.norm(r)) / nb
        if relres < tol:
            return x, SolveReport(it, relres, True)
        z = minv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, SolveReport(maxit, relres, False)


def _scaled_matrix(system: SparseSystem, scaling: str) -> sp.csr_matrix:
    if scaling == "none":
        return system.matrix
    if scaling != "symmetric-diagonal":
        raise ValueError(f"unknown scaling {scaling}")
    d = system.diag.copy()
    d[d <= 0] = 1.0
    s = 1.0 / np.sqrt(d)
    D = sp.diags(s)
    return (D @ system.matrix @ D).tocsr()


def _lanczos_extreme(A: sp.csr_matrix, which: str, steps: int = 300,
                     seed: int = 20406):
    """Extremal Ritz value by Lanczos with full reorthogonalization."""
    n = A.shape[0]
    steps = min(steps, n)
    rng = np.random.default_rng(seed)
    Q = np.zeros((n, steps))
    alphas = np.zeros(steps)
    betas = np.zeros(max(steps - 1, 0))
    q = rng.standard_normal(n)
    q /= np.linalg.norm(q)
    Q[:, 0] = q
    u = A @ q
    alphas[0] = float(q @ u)
    for i in range(1, steps):
        r = u - alphas[i - 1] * Q[:, i - 1]
        if i > 1:
            r -= betas[i - 2] * Q[:, i - 2]
        r -= Q[:, :i] @ (Q[:, :i].T @ r)
        beta = np.linalg.norm(r)
        if beta < 1e-14:
            steps = i
            break
        betas[i - 1] = beta
        q = r / beta
        Q[:, i] = q
        u = A @ q
        alphas[i] = float(q @ u)
    T = np.diag(alphas[:steps])
    if steps > 1:
        T += np.diag(betas[:steps - 1], 1) + np.diag(betas[:steps - 1], -1)
    ev = np.linalg.eigvalsh(T)
    return float(ev[-1] if which == "max" else ev[0])


def _inverse_power_min(A: sp.csr_matrix, lam_max: float, seed: int = 20407):
    """Smallest eigenvalue by inverse iteration with inner PCG solves."""
    n = A.shape[0]
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    lam = lam_max
    sysA = SparseSystem(n, A, x)
    for _ in range(60):
        sysA = SparseSystem(n, A, x)
        y, rep = pcg(sysA, tol=1e-10, maxit=20000)
        ny = np.linalg.norm(y)
        if not rep.converged or ny == 0.0:
            break
        y /= ny
        lam_new = float(y @ (A @ y))
        if abs(lam_new - lam) <= 1e-4 * abs(lam_new):
            return lam_new
        lam = lam_new
        x = y
    return lam


def cond2_estimate(system: SparseSystem, scaling: str = "none",
                   force_iterative: bool = False) -> CondEstimate:
    """2-norm condition number of the (optionally diagonally scaled) matrix.

    Raises IndefiniteMatrixError when a clearly negative eigenvalue shows up;
    near-singular matrices return a capped lower-bound estimate instead.
    """
    A = _scaled_matrix(system, scaling)
    n = A.shape[0]
    if n == 0:
        return CondEstimate(1.0, False, "empty")
    if n <= 4000 and not force_iterative:
        ev = np.linalg.eigvalsh(A.toarray())
        lam_min, lam_max = float(ev[0]), float(ev[-1])
        method = "dense"
    else:
        lam_max = _lanczos_extreme(A, "max")
        lam_min = _inverse_power_min(A, lam_max)
        method = "lanczos"
    if lam_max <= 0:
        raise IndefiniteMatrixError("matrix has non-positive spectrum")
    if lam_min < -1e-10 * lam_max:
        raise IndefiniteMatrixError(
            f"negative eigenvalue {lam_min} (lam_max {lam_max})")
    if lam_min <= 1e-14 * lam_max:
        return CondEstimate(CAP, True, method)
    value = lam_max / lam_min
    if value > CAP:
        return CondEstimate(CAP, True, method)
    return CondEstimate(value, False, method)


def save_matrix_market(system: SparseSystem, path) -> None:
    from scipy.io import mmwrite
    mmwrite(str(path), system.matrix.tocoo())

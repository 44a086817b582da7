"""Linear-solve helpers shared by the forward and inversion modules.

Symmetric positive (semi)definite systems at desk scale: direct sparse
factorization below a size threshold, diagonally preconditioned conjugate
gradients above it, with a direct fallback when the iteration stalls.
Every solve is residual-checked; SolverDivergence is raised when the
requested tolerance is not met.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverDivergence

DIRECT_THRESHOLD = 2500


def _residual(A, x, b) -> float:
    bn = np.linalg.norm(b)
    if bn == 0.0:
        return float(np.linalg.norm(A @ x))
    return float(np.linalg.norm(A @ x - b) / bn)


def solve_spd(
    A: sp.spmatrix,
    b: np.ndarray,
    tol: float = 1e-10,
    direct_threshold: int = DIRECT_THRESHOLD,
    maxiter: int = 20000,
) -> np.ndarray:
    """Solve an SPD sparse system to the requested relative residual."""
    n = A.shape[0]
    if np.linalg.norm(b) == 0.0:
        return np.zeros(n)
    if n <= direct_threshold:
        x = spla.spsolve(sp.csc_matrix(A), b)
    else:
        d = A.diagonal()
        d = np.where(np.abs(d) > 0, d, 1.0)
        M = spla.LinearOperator((n, n), matvec=lambda v: v / d)
        x, info = spla.cg(A, b, rtol=min(tol, 1e-12), atol=0.0, maxiter=maxiter, M=M)
        if info != 0 or _residual(A, x, b) > tol:
            x = spla.spsolve(sp.csc_matrix(A), b)
    res = _residual(A, x, b)
    if not np.isfinite(res) or res > tol:
        raise SolverDivergence(f"linear solve residual {res:.3e} exceeds {tol:.1e}")
    return x


class FactorizedSPD:
    """Cached sparse LU of an SPD matrix for repeated right-hand sides."""

    def __init__(self, A: sp.spmatrix, tol: float = 1e-10):
        self.A = sp.csr_matrix(A)
        self.tol = tol
        self._lu = spla.splu(sp.csc_matrix(A))

    def solve(self, b: np.ndarray) -> np.ndarray:
        if np.linalg.norm(b) == 0.0:
            return np.zeros(self.A.shape[0])
        x = self._lu.solve(b)
        res = _residual(self.A, x, b)
        if not np.isfinite(res) or res > self.tol:
            raise SolverDivergence(f"factorized solve residual {res:.3e}")
        return x


def largest_eigenvalue(A: sp.spmatrix, iters: int = 60) -> float:
    """Deterministic power-iteration estimate of the top eigenvalue (PSD A)."""
    n = A.shape[0]
    v = np.ones(n) + 1e-3 * np.sin(np.arange(n))
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        lam = float(v @ w)
        v = w / nw
    return abs(lam)


def smallest_singular_probe(
    A: sp.spmatrix, N: sp.spmatrix | None = None, iters: int = 8
) -> tuple[float, float]:
    """Estimate (smallest, largest) singular values of A.

    Inverse-power iteration on the shifted normal matrix N + tau*I drives a
    deterministic start vector toward the bottom of the spectrum; the probe
    value is then the direct Rayleigh quotient ||A w|| / ||w||, which resolves
    structurally null directions far below the eigenvalue round-off floor.
    """
    if N is None:
        N = (A.T @ A).tocsr()
    lam_max = largest_eigenvalue(N)
    sig_max = float(np.sqrt(max(lam_max, 0.0)))
    if sig_max == 0.0:
        return 0.0, 0.0
    tau = 1e-10 * lam_max
    lu = spla.splu(sp.csc_matrix(N + tau * sp.identity(N.shape[0], format="csr")))
    w = np.ones(N.shape[0]) + 1e-3 * np.cos(np.arange(N.shape[0]))
    w /= np.linalg.norm(w)
    for _ in range(iters):
        w = lu.solve(w)
        w /= np.linalg.norm(w)
    probe = float(np.linalg.norm(A @ w))
    return probe, sig_max

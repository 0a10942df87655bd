"""Sparse kernels, flexible GMRES and small dense helpers.

Sparse storage is scipy's CSR.  FGMRES is written out because the
preconditioner changes between iterations (inner Krylov solves, multigrid
with nonsymmetric transfer) and because we need per-iteration true residual
histories.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp


def spmv(A, x):
    return A @ x


def as_operator(A):
    """Return a callable x -> A x for matrices, LinearOperators or callables."""
    if callable(A) and not hasattr(A, "shape"):
        return A
    if hasattr(A, "matvec") and not sp.issparse(A):
        return A.matvec
    return lambda x: A @ x


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residuals: list = field(default_factory=list)   # true residual 2-norms, index 0 = initial
    seconds: float = 0.0
    reason: str = ""

    @property
    def relative_residual(self) -> float:
        if not self.residuals or self.residuals[0] == 0:
            return 0.0
        return self.residuals[-1] / self.residuals[0]


def fgmres(A, b, M=None, x0=None, tol=1e-6, maxiter=300, restart=None, callback=None):
    """Right-preconditioned flexible GMRES (Saad's FGMRES).

    Convergence is tested on the true residual ||b - A x_j|| / ||b - A x_0||,
    recomputed every iteration from the current iterate.  ``restart=None``
    means no restarting.  Returns (x, SolveReport).
    """
    t0 = time.perf_counter()
    Aop = as_operator(A)
    Mop = (lambda v: v) if M is None else as_operator(M)
    b = np.asarray(b, dtype=float)
    n = len(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - Aop(x)
    r0 = np.linalg.norm(r)
    rep = SolveReport(False, 0, [r0])
    if r0 == 0.0:
        rep.converged, rep.reason = True, "zero initial residual"
        rep.seconds = time.perf_counter() - t0
        return x, rep
    m = maxiter if restart is None else min(restart, maxiter)
    total = 0
    while True:
        beta = np.linalg.norm(r)
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        j_done = 0
        breakdown = False
        for j in range(m):
            Z[j] = Mop(V[j])
            w = Aop(Z[j])
            # modified Gram-Schmidt with one reorthogonalisation pass
            for _ in range(2):
                h = V[: j + 1] @ w
                w = w - h @ V[: j + 1]
                H[: j + 1, j] += h
            H[j + 1, j] = np.linalg.norm(w)
            if H[j + 1, j] > 1e-14 * max(1.0, np.abs(H[: j + 1, j]).max()):
                V[j + 1] = w / H[j + 1, j]
            else:
                breakdown = True
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            j_done = j + 1
            total += 1
            y = sla.solve_triangular(H[:j_done, :j_done], g[:j_done])
            xt = x + y @ Z[:j_done]
            res = np.linalg.norm(b - Aop(xt))
            rep.residuals.append(res)
            if callback is not None:
                callback(total, res / r0)
            if res <= tol * r0:
                rep.converged, rep.iterations, rep.reason = True, total, "converged"
                rep.seconds = time.perf_counter() - t0
                return xt, rep
            if breakdown or total >= maxiter:
                break
        x = xt
        r = b - Aop(x)
        if breakdown:
            rep.reason = "breakdown"
            break
        if total >= maxiter:
            rep.reason = "maxiter"
            break
    rep.iterations = total
    rep.seconds = time.perf_counter() - t0
    return x, rep


def dense_lu_factor(A):
    """Partial-pivoting LU of a small dense matrix (LAPACK getrf)."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(np.asarray(A, dtype=float))
    if np.any(np.abs(np.diag(lu)) == 0):
        raise np.linalg.LinAlgError("singular matrix")
    return lu, piv


def dense_lu_solve(factors, b):
    return sla.lu_solve(factors, b)


def generalized_sym_eig(A, M):
    """Eigenvalues of A v = lambda M v for symmetric A and SPD M, ascending.

    Uses the Cholesky reduction L^{-1} A L^{-T}; raises LinAlgError if M is
    not positive definite.
    """
    A = np.asarray(A, dtype=float)
    M = np.asarray(M, dtype=float)
    L = np.linalg.cholesky(0.5 * (M + M.T))
    X = sla.solve_triangular(L, 0.5 * (A + A.T), lower=True)
    C = sla.solve_triangular(L, X.T, lower=True)
    return np.linalg.eigvalsh(0.5 * (C + C.T))


class SparseLU:
    """Sparse direct solve wrapper (SuperLU) usable as an operator."""

    def __init__(self, A):
        import scipy.sparse.linalg as spla

        self.shape = A.shape
        self._lu = spla.splu(sp.csc_matrix(A))

    def solve(self, b):
        return self._lu.solve(np.asarray(b, dtype=float))

    __call__ = solve

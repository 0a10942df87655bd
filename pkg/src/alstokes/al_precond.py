"""Block-triangular augmented Lagrangian preconditioner for the Stokes system.

The outer solve is FGMRES on

    [A_gamma  B^T] [u]   [f + gamma B^T W^{-1} g]
    [B        0  ] [p] = [g                     ]

preconditioned by the LDU-factored approximation with A_gamma^{-1} replaced by
an inner solver (sparse LU or one multigrid cycle) and S_gamma^{-1} replaced
by a mass-matrix based approximation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import BlockDiagonal, StokesBlocks
from .sparse_linalg import SolveReport, SparseLU, fgmres

VARIANTS = ("P1", "P2", "baseline")


def default_W(variant: str) -> str:
    """Weight matrix used for the augmentation when none is requested.

    P2 is exact when W = M_p(1/mu); P1 and the baseline pair with M_p.
    """
    return "Mp_invvisc" if variant == "P2" else "Mp"


class MeanProjector:
    """Handles the constant pressure mode for enclosed flows.

    Residual-like vectors are projected to be Euclidean-orthogonal to the
    coefficient vector e of the constant function (that is range(B)), and
    pressure-like vectors to have zero mean, e^T M_p z = 0.
    """

    def __init__(self, Mp: BlockDiagonal, e: np.ndarray):
        self.e = e
        self.Me = Mp.matvec(e)
        self.eMe = float(e @ self.Me)

    def residual(self, q):
        return q - (self.e @ q) / self.eMe * self.Me

    def pressure(self, z):
        return z - (self.Me @ z) / self.eMe * self.e


@dataclass
class SchurApprox:
    """Inverse Schur complement approximation.

    P1:        M_p(1/mu)^{-1} + gamma M_p^{-1}
    P2:        (1 + gamma) M_p(1/mu)^{-1}
    baseline:  M_p(1/mu)^{-1}

    ``scale`` multiplies the approximation S_hat itself (so divides the
    inverse); it exists only to build deliberately wrong preconditioners.
    """

    variant: str
    gamma: float
    Mp: BlockDiagonal
    Mp_invvisc: BlockDiagonal
    projector: MeanProjector | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown Schur variant {self.variant!r}")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    def _raw(self, q):
        if self.variant == "P1":
            z = self.Mp_invvisc.solve(q) + self.gamma * self.Mp.solve(q)
        elif self.variant == "P2":
            z = (1.0 + self.gamma) * self.Mp_invvisc.solve(q)
        else:
            z = self.Mp_invvisc.solve(q)
        return z / self.scale

    def apply(self, q):
        if self.projector is None:
            return self._raw(q)
        return self.projector.pressure(self._raw(self.projector.residual(q)))

    __call__ = apply

    def dense_inverse(self) -> np.ndarray:
        """Dense matrix of the (unprojected) inverse approximation."""
        n = self.Mp.shape[0]
        return np.column_stack([self._raw(c) for c in np.eye(n)])


def make_schur(blocks: StokesBlocks, variant: str, gamma: float | None = None, scale: float = 1.0):
    gamma = blocks.gamma if gamma is None else gamma
    proj = MeanProjector(blocks.Mp, blocks.Q.mean_vector()) if blocks.Q.mean_constraint else None
    return SchurApprox(variant, gamma, blocks.Mp, blocks.Mp_invvisc, proj, scale)


class BlockPreconditioner:
    """z = U^{-1} diag(A_hat^{-1}, -S_hat^{-1}) L^{-1} r with inner solver A_hat^{-1}."""

    def __init__(self, schur: SchurApprox, inner, B):
        self.schur = schur
        self.inner = inner
        self.B = B
        self.BT = B.T.tocsr()
        self.n_u = B.shape[1]

    def apply_split(self, r_u, r_p):
        y = self.inner(r_u)
        z_p = -self.schur(r_p - self.B @ y)
        z_u = self.inner(r_u - self.BT @ z_p)
        return z_u, z_p

    def __call__(self, r):
        z_u, z_p = self.apply_split(r[: self.n_u], r[self.n_u:])
        return np.concatenate([z_u, z_p])


def saddle_operator(blocks: StokesBlocks):
    A, B, BT = blocks.A_gamma, blocks.B, blocks.B.T.tocsr()
    n = blocks.n_u

    def op(x):
        u, p = x[:n], x[n:]
        return np.concatenate([A @ u + BT @ p, B @ u])

    return op


@dataclass
class StokesSolution:
    u: np.ndarray       # free velocity dofs
    p: np.ndarray
    report: SolveReport

    @property
    def iterations(self):
        return self.report.iterations


def solve_stokes(blocks: StokesBlocks, variant: str = "P1", inner="lu", tol: float = 1e-6,
                 maxiter: int = 300, schur_scale: float = 1.0, rhs=None, x0=None) -> StokesSolution:
    """Solve the augmented saddle-point system with preconditioned FGMRES.

    ``inner`` is ``"lu"`` (sparse direct solve of A_gamma) or a callable
    r -> approx A_gamma^{-1} r such as a multigrid hierarchy.  ``rhs`` may
    override the (un-augmented) pair (r_u, r_p); the augmentation is applied
    here.
    """
    if isinstance(inner, str):
        if inner != "lu":
            raise ValueError(f"unknown inner solver {inner!r}")
        inner = SparseLU(blocks.A_gamma)
    schur = make_schur(blocks, variant, scale=schur_scale)
    P = BlockPreconditioner(schur, inner, blocks.B)
    if rhs is None:
        b_u, b_p = blocks.augmented_rhs(), blocks.rhs_p
    else:
        r_u, r_p = rhs
        b_u = r_u + (blocks.gamma * (blocks.B.T @ blocks.W.solve(r_p)) if blocks.gamma else 0.0)
        b_p = r_p
    b = np.concatenate([b_u, b_p])
    x, rep = fgmres(saddle_operator(blocks), b, M=P, x0=x0, tol=tol, maxiter=maxiter)
    u, p = x[: blocks.n_u], x[blocks.n_u:]
    if schur.projector is not None:
        p = schur.projector.pressure(p)
    return StokesSolution(u, p, rep)

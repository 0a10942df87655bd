"""Dense verification harness for the augmented Schur complement.

Everything here forms small dense matrices.  For enclosed flows the
pressure is only defined up to a constant, so all pressure matrices are
reduced to the complement of the constant mode:

* Z is an orthonormal basis of the Euclidean complement of e, the
  coefficient vector of the constant function.  That complement is exactly
  range(B), so Z^T S Z is nonsingular.
* Operators given through their inverses (S_hat, W) are reduced as
  inv(Z^T S_hat^{-1} Z).  With this choice the Sherman-Morrison identity
  S_gamma^{-1} = S^{-1} + gamma W^{-1} holds exactly on the reduced space.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg as sla

from .al_precond import BlockPreconditioner, make_schur, saddle_operator
from .assembly import StokesBlocks
from .sparse_linalg import generalized_sym_eig

MAX_DENSE = 3000


def _check_size(blocks: StokesBlocks):
    n = blocks.n_u + blocks.n_p
    if n > MAX_DENSE:
        raise ValueError(f"{n} unknowns is too many for dense spectral work (limit {MAX_DENSE})")


def deflation_basis(blocks: StokesBlocks) -> np.ndarray:
    """Orthonormal basis of the pressure space modulo constants (identity if none)."""
    n = blocks.n_p
    if not blocks.Q.mean_constraint:
        return np.eye(n)
    e = blocks.Q.mean_vector()
    return sla.null_space(e[None, :])


def _sym(M):
    return 0.5 * (M + M.T)


def dense_schur(blocks: StokesBlocks, gamma: float | None = None, reduce: bool = True) -> np.ndarray:
    """S_gamma = B A_gamma^{-1} B^T, formed with a dense Cholesky factorization."""
    _check_size(blocks)
    if gamma is not None and gamma != blocks.gamma:
        blocks = blocks.with_gamma(gamma)
    A = blocks.A_gamma.toarray()
    B = blocks.B.toarray()
    if reduce:
        B = deflation_basis(blocks).T @ B
    cf = sla.cho_factor(_sym(A))
    return _sym(B @ sla.cho_solve(cf, B.T))


def reduce_inverse(inv_dense: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Reduced operator whose inverse is Z^T M^{-1} Z."""
    return _sym(np.linalg.inv(_sym(Z.T @ inv_dense @ Z)))


def dense_inverse(bd) -> np.ndarray:
    return bd.inverse_sparse().toarray()


@dataclass
class EquivalenceConstants:
    c_mu: float
    C_mu: float
    d_mu: float
    D_mu: float
    e_mu: float
    E_mu: float


def measure_constants(S, S_hat, W) -> EquivalenceConstants:
    """Extreme generalized eigenvalues of (S, S_hat), (S, W) and (S_hat, W)."""
    a = generalized_sym_eig(S, S_hat)
    b = generalized_sym_eig(S, W)
    c = generalized_sym_eig(S_hat, W)
    for name, ev in (("S/S_hat", a), ("S/W", b), ("S_hat/W", c)):
        if ev[0] <= 0:
            raise np.linalg.LinAlgError(f"pencil {name} is not positive definite")
    return EquivalenceConstants(a[0], a[-1], b[0], b[-1], c[0], c[-1])


def lemma_bounds(k: EquivalenceConstants, gamma: float):
    """Lower and upper eigenvalue bounds (f, F) for S_hat_gamma^{-1} S_gamma."""
    c, C, d, D, e, E = k.c_mu, k.C_mu, k.d_mu, k.D_mu, k.e_mu, k.E_mu
    g = gamma
    f = max(c / (1 + g * c * E) + g * d / (1 + g * d), (1 + g * e) / (max(1.0, 1 / c) + g * e))
    F = min(C / (1 + g * C * e) + g * D / (1 + g * D), (1 + g * e) / (min(1.0, 1 / C) + g * e))
    return f, F


@dataclass
class BoundReport:
    gamma: float
    variant: str
    c_mu: float
    C_mu: float
    d_mu: float
    D_mu: float
    e_mu: float
    E_mu: float
    f_mu: float
    F_mu: float
    lam_min: float
    lam_max: float
    holds: bool
    remark_error: float = float("nan")   # only when S_hat == W

    def row(self):
        return asdict(self)


def schur_pieces(blocks: StokesBlocks, variant: str, W_choice: str | None = None):
    """Dense inverses (S_hat^{-1}, W^{-1}) for a variant, before gamma is added.

    ``variant`` is P1, P2, or "Mp" (S_hat = M_p).  For P1, S_hat = M_p(1/mu)
    and W = M_p; for P2, S_hat = W = M_p(1/mu).
    """
    Mp_inv = dense_inverse(blocks.Mp)
    Mv_inv = dense_inverse(blocks.Mp_invvisc)
    if variant == "P1":
        Shat, W = Mv_inv, Mp_inv
    elif variant == "P2":
        Shat, W = Mv_inv, Mv_inv
    elif variant == "Mp":
        Shat, W = Mp_inv, Mp_inv
    else:
        raise ValueError(f"unknown variant {variant!r}")
    if W_choice is not None:
        W = Mp_inv if W_choice == "Mp" else Mv_inv
    return Shat, W


def W_name(blocks, variant, W_choice):
    if W_choice is not None:
        return W_choice
    return "Mp_invvisc" if variant == "P2" else "Mp"


def verify_lemma(blocks: StokesBlocks, variant: str, gammas, W_choice: str | None = None,
                 tol: float = 1e-9, shat_scale: float = 1.0) -> list[BoundReport]:
    """Spectrum of S_hat_gamma^{-1} S_gamma against the lemma bounds, per gamma.

    ``shat_scale`` multiplies the S_hat used in the spectrum while the
    bounds keep the constants of the intended S_hat (debug use: a wrong
    S_hat must be reported as a violation).
    """
    _check_size(blocks)
    Z = deflation_basis(blocks)
    Shat_inv, W_inv = schur_pieces(blocks, variant, W_choice)
    Wn = W_name(blocks, variant, W_choice)
    base = blocks.with_gamma(0.0, Wn)
    S = dense_schur(base)
    Shat_r = reduce_inverse(Shat_inv, Z)
    W_r = reduce_inverse(W_inv, Z)
    consts = measure_constants(S, Shat_r, W_r)
    same = variant in ("P2", "Mp") and W_choice in (None, Wn) and shat_scale == 1.0
    nu = generalized_sym_eig(S, Shat_r) if same else None
    out = []
    for g in gammas:
        Sg = dense_schur(blocks.with_gamma(g, Wn)) if g > 0 else S
        Shat_g = _sym(np.linalg.inv(_sym(Z.T @ (Shat_inv + g * W_inv) @ Z))) * shat_scale
        lam = generalized_sym_eig(Sg, Shat_g)
        f, F = lemma_bounds(consts, g)
        holds = bool(lam[0] >= f - tol and lam[-1] <= F + tol)
        rep = BoundReport(g, variant, consts.c_mu, consts.C_mu, consts.d_mu, consts.D_mu, consts.e_mu,
                          consts.E_mu, f, F, lam[0], lam[-1], holds)
        if nu is not None:
            pred = np.sort((1 + g) / (1 / nu + g))
            rep.remark_error = float(np.max(np.abs(pred - lam)))
        out.append(rep)
    return out


def sherman_morrison_error(blocks: StokesBlocks, gamma: float, W_choice: str = "Mp") -> float:
    """||S_gamma^{-1} - (S^{-1} + gamma W^{-1})||_2 / ||S_gamma^{-1}||_2 on the reduced space."""
    Z = deflation_basis(blocks)
    S = dense_schur(blocks.with_gamma(0.0, W_choice))
    Sg = dense_schur(blocks.with_gamma(gamma, W_choice))
    W = blocks.Mp if W_choice == "Mp" else blocks.Mp_invvisc
    Winv_r = _sym(Z.T @ dense_inverse(W) @ Z)
    Sg_inv = np.linalg.inv(Sg)
    diff = Sg_inv - (np.linalg.inv(S) + gamma * Winv_r)
    return float(np.linalg.norm(diff, 2) / np.linalg.norm(Sg_inv, 2))


def preconditioned_spectrum(blocks: StokesBlocks, variant: str) -> np.ndarray:
    """Eigenvalues of P K with exact inner solves (constant pressure mode removed)."""
    _check_size(blocks)
    A = blocks.A_gamma.toarray()
    cf = sla.cho_factor(_sym(A))
    P = BlockPreconditioner(make_schur(blocks, variant), lambda r: sla.cho_solve(cf, r), blocks.B)
    K = saddle_operator(blocks)
    n = blocks.n_u + blocks.n_p
    PK = np.column_stack([P(K(c)) for c in np.eye(n)])
    lam = np.linalg.eigvals(PK)
    return lam[np.abs(lam) > 1e-10]


def condition_bound_check(blocks: StokesBlocks, variant: str):
    """Spectral condition number of P K next to max(1, F)/min(1, f)."""
    rep = verify_lemma(blocks, variant, [blocks.gamma])[0]
    lam = np.abs(preconditioned_spectrum(blocks, variant))
    return lam.max() / lam.min(), max(1.0, rep.F_mu) / min(1.0, rep.f_mu)


CSV_FIELDS = ["gamma", "variant", "c_mu", "C_mu", "d_mu", "D_mu", "e_mu", "E_mu",
              "f_mu", "F_mu", "lam_min", "lam_max", "holds"]


def write_reports_csv(reports, stream):
    w = csv.DictWriter(stream, fieldnames=CSV_FIELDS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.row().items()})

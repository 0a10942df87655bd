"""Geometric multigrid for the augmented velocity block A_gamma.

Two smoothers (additive vertex-star patches, damped point Jacobi) and two
transfers (plain Q_k interpolation, and the divergence-corrected robust
prolongation) can be mixed freely.  Everything acts on the free
(non-Dirichlet) velocity dofs of each level.  Patch inverses and the robust
prolongation are materialized as sparse matrices once at setup so that a
cycle is a sequence of sparse matvecs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elements import FunctionSpace
from .mesh import StarPatch, vertex_stars
from .sparse_linalg import SparseLU


def free_index(space: FunctionSpace) -> np.ndarray:
    """Map full dof -> position among free dofs (-1 for Dirichlet dofs)."""
    pos = -np.ones(space.n_dofs, dtype=int)
    pos[space.free_dofs] = np.arange(space.n_free)
    return pos


def _batched_spd_inverse(blocks: np.ndarray) -> np.ndarray:
    """Inverses of a stack of SPD matrices, computed after symmetric diagonal scaling."""
    d = np.sqrt(np.einsum("bii->bi", blocks))
    if np.any(~np.isfinite(d)) or np.any(d <= 0):
        raise np.linalg.LinAlgError("patch matrix with non-positive diagonal")
    scaled = blocks / (d[:, :, None] * d[:, None, :])
    L = np.linalg.cholesky(scaled)  # raises LinAlgError when not SPD
    Linv = np.linalg.inv(L)
    inv = np.einsum("bki,bkj->bij", Linv, Linv)
    return inv / (d[:, :, None] * d[:, None, :])


def _block_sparse(index_sets, inverses, n) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for idx, inv in zip(index_sets, inverses):
        m = len(idx)
        rows.append(np.repeat(idx, m))
        cols.append(np.tile(idx, m))
        vals.append(inv.ravel())
    if not rows:
        return sp.csr_matrix((n, n))
    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    M.sum_duplicates()
    return M


def _grouped_inverses(A: sp.csr_matrix, index_sets):
    """Dense principal submatrices of A, inverted batch-wise by size."""
    by_size: dict[int, list[int]] = {}
    for i, idx in enumerate(index_sets):
        by_size.setdefault(len(idx), []).append(i)
    out = [None] * len(index_sets)
    for m, members in by_size.items():
        sub = np.stack([A[index_sets[i]][:, index_sets[i]].toarray() for i in members])
        for i, inv in zip(members, _batched_spd_inverse(sub)):
            out[i] = inv
    return out


@dataclass
class PatchSmoother:
    """Damped additive Schwarz over vertex-star patches: x += tau D^{-1}(b - A x)."""

    patches: list          # free-dof index arrays, one per kept patch
    Dinv: sp.csr_matrix
    tau: float
    overlap: int

    def precondition(self, r):
        return self.Dinv @ r


@dataclass
class JacobiSmoother:
    diag_inv: np.ndarray
    tau: float

    @property
    def Dinv(self):
        return sp.diags(self.diag_inv)

    def precondition(self, r):
        return self.diag_inv * r


def build_smoother(A_gamma, patches, tau: float | None = None) -> PatchSmoother:
    """Factor the star-patch submatrices of A_gamma.

    ``patches`` is a list of StarPatch (dofs in full numbering are then
    translated by the caller) or plain arrays of free-dof indices.  Empty
    patches are dropped.  The default damping is 1/(maximum overlap).
    """
    A = sp.csr_matrix(A_gamma)
    sets = [np.asarray(p.dofs if isinstance(p, StarPatch) else p, dtype=int) for p in patches]
    sets = [s for s in sets if len(s)]
    count = np.zeros(A.shape[0], dtype=int)
    for s in sets:
        count[s] += 1
    if np.any(count == 0):
        raise ValueError("patches do not cover all dofs")
    overlap = int(count.max())
    invs = _grouped_inverses(A, sets)
    Dinv = _block_sparse(sets, invs, A.shape[0])
    return PatchSmoother(sets, Dinv, 1.0 / overlap if tau is None else tau, overlap)


def star_smoother(A_gamma, space: FunctionSpace, tau: float | None = None) -> PatchSmoother:
    pos = free_index(space)
    patches = [pos[p.dofs] for p in vertex_stars(space.mesh, space, free_only=True)]
    return build_smoother(A_gamma, patches, tau)


def jacobi_smoother(A_gamma, damping: float | None = None) -> JacobiSmoother:
    """Point Jacobi.  Without an explicit damping, tau = 1/lambda_max(D^{-1}A)."""
    A = sp.csr_matrix(A_gamma)
    d = A.diagonal()
    if np.any(d == 0):
        raise ValueError("zero diagonal entry")
    dinv = 1.0 / d
    if damping is None:
        s = np.sqrt(dinv)
        S = sp.diags(s) @ A @ sp.diags(s)
        if S.shape[0] <= 2:
            lam = np.linalg.eigvalsh(S.toarray()).max()
        else:
            lam = spla.eigsh(S, k=1, which="LA", return_eigenvectors=False, tol=1e-3,
                             v0=np.ones(S.shape[0]))[0]
        damping = 1.0 / lam
    return JacobiSmoother(dinv, damping)


def smooth(smoother, A, x, b, steps: int):
    for _ in range(steps):
        x = x + smoother.tau * smoother.precondition(b - A @ x)
    return x


def standard_prolongation(Vc: FunctionSpace, Vf: FunctionSpace) -> sp.csr_matrix:
    """Q_k interpolation from coarse to fine free velocity dofs (uniform refinement)."""
    k = Vc.degree
    mc = Vc.mesh
    fnnx = k * 2 * mc.nx + 1
    t = np.arange(2 * k + 1)
    I, J = np.meshgrid(t, t)
    I, J = I.ravel(), J.ravel()
    ref = np.column_stack([-1.0 + I / k, -1.0 + J / k])
    vals, _ = Vc.element.eval(ref)  # (nf_local, nb)
    vals[np.abs(vals) < 1e-14] = 0.0
    cx, cy = mc.cell_index_2d(np.arange(mc.n_cells))
    frow = (2 * k * cy[:, None] + J[None, :]) * fnnx + (2 * k * cx[:, None] + I[None, :])
    shape = frow.shape + (vals.shape[1],)
    rows = np.broadcast_to(frow[:, :, None], shape).ravel()
    cols = np.broadcast_to(Vc.node_map[:, None, :], shape).ravel()
    v = np.broadcast_to(vals[None], shape).ravel()
    keep = v != 0
    rows, cols, v = rows[keep], cols[keep], v[keep]
    key = rows.astype(np.int64) * Vc.n_nodes + cols
    _, first = np.unique(key, return_index=True)
    Pn = sp.csr_matrix((v[first], (rows[first], cols[first])), shape=(Vf.n_nodes, Vc.n_nodes))
    P = sp.kron(Pn, sp.identity(2), format="csr")
    return P[Vf.free_dofs][:, Vc.free_dofs].tocsr()


def coarse_cell_interiors(Vc: FunctionSpace, Vf: FunctionSpace) -> list[np.ndarray]:
    """Free fine dofs strictly inside each coarse cell."""
    k = Vc.degree
    mc = Vc.mesh
    fnnx = k * 2 * mc.nx + 1
    t = np.arange(1, 2 * k)
    I, J = np.meshgrid(t, t)
    cx, cy = mc.cell_index_2d(np.arange(mc.n_cells))
    nodes = (2 * k * cy[:, None] + J.ravel()[None, :]) * fnnx + (2 * k * cx[:, None] + I.ravel()[None, :])
    dofs = np.stack([2 * nodes, 2 * nodes + 1], axis=-1).reshape(mc.n_cells, -1)
    pos = free_index(Vf)
    return list(pos[dofs])


@dataclass
class RobustTransfer:
    """P_tilde = P - E A_loc^{-1} E^T G P with G = gamma B^T W^{-1} B on the fine level."""

    P_standard: sp.csr_matrix
    P: sp.csr_matrix
    local_dofs: list
    gamma: float

    def prolong(self, u_coarse):
        return self.P @ u_coarse

    def restrict(self, r_fine):
        return self.P.T @ r_fine


def build_robust_transfer(Vc, Vf, A_gamma_fine, G_fine, gamma: float | None = None) -> RobustTransfer:
    P = standard_prolongation(Vc, Vf)
    G = sp.csr_matrix(G_fine)
    if G.nnz == 0 or not np.any(G.data):
        return RobustTransfer(P, P, [], 0.0 if gamma is None else gamma)
    sets = coarse_cell_interiors(Vc, Vf)
    invs = _grouped_inverses(sp.csr_matrix(A_gamma_fine), sets)
    Aloc_inv = _block_sparse(sets, invs, P.shape[0])
    Pt = (P - Aloc_inv @ (G @ P)).tocsr()
    Pt.eliminate_zeros()
    return RobustTransfer(P, Pt, sets, gamma if gamma is not None else float("nan"))


def standard_transfer(Vc, Vf) -> RobustTransfer:
    P = standard_prolongation(Vc, Vf)
    return RobustTransfer(P, P, [], 0.0)


def prolong_robust(t: RobustTransfer, u_coarse):
    return t.prolong(u_coarse)


def restrict(t: RobustTransfer, r_fine):
    return t.restrict(r_fine)


@dataclass
class MGLevel:
    A: sp.csr_matrix
    smoother: object = None
    transfer: RobustTransfer | None = None   # from the next coarser level to this one


class MultigridHierarchy:
    """Multigrid preconditioner for A_gamma; levels are ordered coarse to fine."""

    def __init__(self, levels: list[MGLevel], cycle: str = "F", pre: int = 5, post: int = 5):
        if cycle not in ("V", "F"):
            raise ValueError(f"unknown cycle {cycle!r}")
        self.levels = levels
        self.cycle = cycle
        self.pre = pre
        self.post = post
        self.coarse = SparseLU(levels[0].A)

    def __len__(self):
        return len(self.levels)

    def _v(self, lev, b):
        if lev == 0:
            return self.coarse.solve(b)
        L = self.levels[lev]
        x = smooth(L.smoother, L.A, np.zeros_like(b), b, self.pre)
        rc = L.transfer.restrict(b - L.A @ x)
        x = x + L.transfer.prolong(self._v(lev - 1, rc))
        return smooth(L.smoother, L.A, x, b, self.post)

    def _f(self, lev, b):
        if lev == 0:
            return self.coarse.solve(b)
        L = self.levels[lev]
        x = smooth(L.smoother, L.A, np.zeros_like(b), b, self.pre)
        rc = L.transfer.restrict(b - L.A @ x)
        ec = self._f(lev - 1, rc)
        if lev - 1 > 0:
            Ac = self.levels[lev - 1].A
            ec = ec + self._v(lev - 1, rc - Ac @ ec)
        x = x + L.transfer.prolong(ec)
        return smooth(L.smoother, L.A, x, b, self.post)

    def __call__(self, b):
        top = len(self.levels) - 1
        return self._f(top, b) if self.cycle == "F" else self._v(top, b)


def mg_cycle(h: MultigridHierarchy, b, cycle: str | None = None):
    if cycle is None or cycle == h.cycle:
        return h(b)
    top = len(h.levels) - 1
    return h._f(top, b) if cycle == "F" else h._v(top, b)


def build_multigrid(level_blocks, smoother: str = "star", transfer: str = "robust", cycle: str = "F",
                    steps: int = 5, jacobi_damping: float | None = None) -> MultigridHierarchy:
    """Build a hierarchy from per-level StokesBlocks (coarse to fine, rediscretized)."""
    levels = []
    for i, blk in enumerate(level_blocks):
        lev = MGLevel(blk.A_gamma)
        if i > 0:
            if smoother == "star":
                lev.smoother = star_smoother(blk.A_gamma, blk.V)
            elif smoother == "jacobi":
                lev.smoother = jacobi_smoother(blk.A_gamma, jacobi_damping)
            else:
                raise ValueError(f"unknown smoother {smoother!r}")
            Vc = level_blocks[i - 1].V
            if transfer == "robust":
                lev.transfer = build_robust_transfer(Vc, blk.V, blk.A_gamma, blk.aug, blk.gamma)
            elif transfer == "standard":
                lev.transfer = standard_transfer(Vc, blk.V)
            else:
                raise ValueError(f"unknown transfer {transfer!r}")
        levels.append(lev)
    return MultigridHierarchy(levels, cycle, steps, steps)


@dataclass
class KernelReport:
    dim_kernel: int
    rank_patch_sum: int
    n_patches: int

    @property
    def holds(self):
        return self.dim_kernel == self.rank_patch_sum


def _null_space(M: np.ndarray, rtol: float, ref: float | None = None):
    if M.shape[0] == 0:
        return np.eye(M.shape[1])
    U, s, Vt = np.linalg.svd(M)
    smax = s.max() if ref is None else ref
    rank = int(np.sum(s > rtol * smax)) if s.size else 0
    return Vt[rank:].T


def kernel_decomposition_check(B, patches, rtol: float = 1e-8, max_dofs: int = 2000) -> KernelReport:
    """Compare dim null(B) with the rank of the sum of per-patch kernels.

    ``B`` is the divergence matrix on free dofs; ``patches`` are free-dof
    index arrays.  Rank decisions use rtol * sigma_max(B).
    """
    Bd = B.toarray() if sp.issparse(B) else np.asarray(B)
    n = Bd.shape[1]
    if n > max_dofs:
        raise ValueError(f"{n} velocity dofs is too many for a dense kernel check")
    smax = np.linalg.svd(Bd, compute_uv=False).max()
    N = _null_space(Bd, rtol, smax)
    cols = []
    for idx in patches:
        idx = np.asarray(idx, dtype=int)
        if len(idx) == 0:
            continue
        Bi = Bd[:, idx]
        Bi = Bi[np.any(Bi != 0, axis=1)]
        Ni = _null_space(Bi, rtol, smax)
        if Ni.shape[1]:
            emb = np.zeros((n, Ni.shape[1]))
            emb[idx] = Ni
            cols.append(emb)
    if not cols:
        return KernelReport(N.shape[1], 0, len(patches))
    Z = np.hstack(cols)
    sz = np.linalg.svd(Z, compute_uv=False)
    rank = int(np.sum(sz > rtol * sz.max()))
    return KernelReport(N.shape[1], rank, len(patches))

"""Assembly of the Stokes operators and the augmented (1,1)-block.

All element integrals are vectorized over cells.  Viscosities are either plain
callables ``mu(points) -> (n,)`` or objects with a ``scalar(points)`` method
and, for linearized nonlinear rheologies, a ``tensor(points)`` method
returning the fourth-order tensor C with stress = C : strain_rate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp

from .elements import FunctionSpace, quadrature


class AssemblyError(RuntimeError):
    pass


def scalar_viscosity(visc, points: np.ndarray) -> np.ndarray:
    f = getattr(visc, "scalar", visc)
    mu = np.asarray(f(points), dtype=float)
    if mu.shape == ():
        mu = np.full(len(points), float(mu))
    return mu


def _geometry(space: FunctionSpace, qdeg: int):
    mesh = space.mesh
    qr = quadrature(qdeg)
    h = mesh.cell_sizes
    wdet = qr.weights[None, :] * (0.25 * h[:, 0] * h[:, 1])[:, None]
    pts = mesh.map_to_physical(qr.points)
    return qr, h, wdet, pts


def _velocity_gradients(space: FunctionSpace, qr, h):
    vals, dref = space.element.eval(qr.points)
    G = dref[None, :, :, :] * (2.0 / h)[:, None, None, :]
    return vals, G


def _scatter(rows_map, cols_map, local, shape):
    nr, nc = rows_map.shape[1], cols_map.shape[1]
    rows = np.broadcast_to(rows_map[:, :, None], (len(local), nr, nc)).ravel()
    cols = np.broadcast_to(cols_map[:, None, :], (len(local), nr, nc)).ravel()
    M = sp.csr_matrix((local.ravel(), (rows, cols)), shape=shape)
    M.sum_duplicates()
    M.sort_indices()
    return M


def strain_basis(G: np.ndarray) -> np.ndarray:
    """Symmetric gradients of the vector basis: (..., nb*2, 2, 2) from (..., nb, 2)."""
    shp = G.shape[:-1]
    E = np.zeros(shp + (2, 2, 2))
    for c in range(2):
        E[..., c, c, :] += 0.5 * G
        E[..., c, :, c] += 0.5 * G
    return E.reshape(shp[:-1] + (shp[-1] * 2, 2, 2))


def viscous_local_matrices(space: FunctionSpace, visc, qdeg: int | None = None) -> np.ndarray:
    k = space.degree
    qdeg = 2 * k + 2 if qdeg is None else qdeg
    qr, h, wdet, pts = _geometry(space, qdeg)
    _, G = _velocity_gradients(space, qr, h)
    nc, nq, nb = G.shape[0], G.shape[1], G.shape[2]
    flat = pts.reshape(-1, 2)
    tensor = getattr(visc, "tensor", None)
    if tensor is None:
        mu = scalar_viscosity(visc, flat).reshape(nc, nq)
        if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
            raise AssemblyError("viscosity must be finite and strictly positive at quadrature points")
        wm = wdet * mu
        S1 = np.einsum("cq,cqai,cqbi->cab", wm, G, G, optimize=True)
        T = np.einsum("cq,cqad,cqbe->cabde", wm, G, G, optimize=True)
        K = np.zeros((nc, nb, 2, nb, 2))
        K[:, :, 0, :, 0] = S1 + T[..., 0, 0]
        K[:, :, 0, :, 1] = T[..., 1, 0]
        K[:, :, 1, :, 0] = T[..., 0, 1]
        K[:, :, 1, :, 1] = S1 + T[..., 1, 1]
        return K.reshape(nc, 2 * nb, 2 * nb)
    C = np.asarray(tensor(flat), dtype=float).reshape(nc, nq, 2, 2, 2, 2)
    if not np.all(np.isfinite(C)):
        raise AssemblyError("non-finite viscosity tensor")
    E = strain_basis(G)
    CE = np.einsum("cqijkl,cqbkl->cqbij", C, E, optimize=True)
    return np.einsum("cq,cqaij,cqbij->cab", wdet, E, CE, optimize=True)


def assemble_viscous_block(V: FunctionSpace, visc, qdeg: int | None = None) -> sp.csr_matrix:
    """A_ij = (2 mu eps(phi_i), eps(phi_j)) on the full (unconstrained) space.

    For tensor viscosities the integrand is eps(phi_j) : C : eps(phi_i).
    """
    if V.kind != "velocity":
        raise ValueError("viscous block needs a velocity space")
    K = viscous_local_matrices(V, visc, qdeg)
    return _scatter(V.dof_map, V.dof_map, K, (V.n_dofs, V.n_dofs))


def assemble_divergence(V: FunctionSpace, Q: FunctionSpace, qdeg: int | None = None) -> sp.csr_matrix:
    """B_ij = -(psi_i, div phi_j), shape (n_p, n_u)."""
    if V.mesh is not Q.mesh:
        raise ValueError("velocity and pressure spaces live on different meshes")
    k = V.degree
    qdeg = 2 * k if qdeg is None else qdeg
    qr, h, wdet, _ = _geometry(V, qdeg)
    _, G = _velocity_gradients(V, qr, h)
    psi = Q.element.eval(qr.points)
    nc, nq, nb = G.shape[:3]
    loc = -np.einsum("cq,qp,cqai->cpai", wdet, psi, G, optimize=True).reshape(nc, psi.shape[1], 2 * nb)
    return _scatter(Q.dof_map, V.dof_map, loc, (Q.n_dofs, V.n_dofs))


@dataclass
class BlockDiagonal:
    """Block-diagonal matrix with one dense block per cell (cell-contiguous dofs)."""

    blocks: np.ndarray
    _inv: np.ndarray | None = field(default=None, repr=False)

    @property
    def shape(self):
        n = self.blocks.shape[0] * self.blocks.shape[1]
        return (n, n)

    @property
    def inv_blocks(self) -> np.ndarray:
        if self._inv is None:
            np.linalg.cholesky(self.blocks)  # raises if a block is not SPD
            self._inv = np.linalg.inv(self.blocks)
        return self._inv

    def matvec(self, x):
        nb, m = self.blocks.shape[:2]
        return np.einsum("cij,cj->ci", self.blocks, x.reshape(nb, m)).ravel()

    def solve(self, x):
        nb, m = self.blocks.shape[:2]
        return np.einsum("cij,cj->ci", self.inv_blocks, x.reshape(nb, m)).ravel()

    def __matmul__(self, x):
        return self.matvec(x)

    def scaled(self, s: float) -> "BlockDiagonal":
        return BlockDiagonal(s * self.blocks)

    @staticmethod
    def _to_sparse(blocks):
        return sp.block_diag(list(blocks), format="csr")

    def to_sparse(self) -> sp.csr_matrix:
        return self._to_sparse(self.blocks)

    def inverse_sparse(self) -> sp.csr_matrix:
        return self._to_sparse(self.inv_blocks)

    def toarray(self):
        return self.to_sparse().toarray()


def assemble_pressure_mass(Q: FunctionSpace, viscosity=None, qdeg: int | None = None) -> BlockDiagonal:
    """Pressure mass matrix, optionally weighted by 1/mu (viscosity given)."""
    k = Q.degree
    qdeg = 2 * k if qdeg is None else qdeg
    qr, h, wdet, pts = _geometry(Q, qdeg)
    psi = Q.element.eval(qr.points)
    w = wdet
    if viscosity is not None:
        mu = scalar_viscosity(viscosity, pts.reshape(-1, 2)).reshape(wdet.shape)
        if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
            raise AssemblyError("inverse-viscosity weight needs strictly positive viscosity")
        w = wdet / mu
    return BlockDiagonal(np.einsum("cq,qi,qj->cij", w, psi, psi, optimize=True))


def assemble_load(V: FunctionSpace, force, qdeg: int | None = None) -> np.ndarray:
    """Load vector (f, phi_i) for a body force f(points) -> (n, 2)."""
    k = V.degree
    qdeg = 2 * k + 2 if qdeg is None else qdeg
    qr, h, wdet, pts = _geometry(V, qdeg)
    vals, _ = V.element.eval(qr.points)
    f = np.asarray(force(pts.reshape(-1, 2)), dtype=float).reshape(pts.shape)
    loc = np.einsum("cq,qa,cqi->cai", wdet, vals, f, optimize=True).reshape(V.mesh.n_cells, -1)
    out = np.zeros(V.n_dofs)
    np.add.at(out, V.dof_map.ravel(), loc.ravel())
    return out


def assemble_augmented(A: sp.spmatrix, B: sp.spmatrix, W: BlockDiagonal, gamma: float):
    """A + gamma B^T W^{-1} B with W^{-1} formed blockwise."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if gamma == 0:
        return sp.csr_matrix(A, copy=True)
    return (A + gamma * augmentation_term(B, W)).tocsr()


def augmentation_term(B, W: BlockDiagonal) -> sp.csr_matrix:
    """B^T W^{-1} B (without gamma)."""
    G = (B.T @ W.inverse_sparse() @ B).tocsr()
    G.sum_duplicates()
    return G


def augmented_rhs(r1, r2, B, W: BlockDiagonal, gamma: float):
    """r1 + gamma B^T W^{-1} r2."""
    if gamma == 0 or not np.any(r2):
        return np.array(r1, dtype=float, copy=True)
    return r1 + gamma * (B.T @ W.solve(r2))


@dataclass
class StokesBlocks:
    """Discrete operators of one (linearized) Stokes problem on the free dofs."""

    V: FunctionSpace
    Q: FunctionSpace
    A: sp.csr_matrix
    B: sp.csr_matrix
    Mp: BlockDiagonal
    Mp_invvisc: BlockDiagonal
    gamma: float
    W_choice: str
    A_gamma: sp.csr_matrix
    aug: sp.csr_matrix          # gamma * B^T W^{-1} B
    rhs_u: np.ndarray           # r1 (un-augmented)
    rhs_p: np.ndarray           # r2
    u_dirichlet: np.ndarray     # full-length boundary values

    @property
    def W(self) -> BlockDiagonal:
        return self.Mp if self.W_choice == "Mp" else self.Mp_invvisc

    @property
    def n_u(self):
        return self.A.shape[0]

    @property
    def n_p(self):
        return self.B.shape[0]

    def augmented_rhs(self):
        return augmented_rhs(self.rhs_u, self.rhs_p, self.B, self.W, self.gamma)

    def full_velocity(self, u_free):
        u = self.u_dirichlet.copy()
        u[self.V.free_dofs] = u_free
        return u

    def with_gamma(self, gamma: float, W_choice: str | None = None) -> "StokesBlocks":
        W_choice = self.W_choice if W_choice is None else W_choice
        W = self.Mp if W_choice == "Mp" else self.Mp_invvisc
        aug = augmentation_term(self.B, W) * gamma if gamma > 0 else sp.csr_matrix(self.A.shape)
        return StokesBlocks(self.V, self.Q, self.A, self.B, self.Mp, self.Mp_invvisc, gamma,
                            W_choice, (self.A + aug).tocsr(), aug, self.rhs_u, self.rhs_p,
                            self.u_dirichlet)

    def saddle_matrix(self, augmented: bool = True) -> sp.csr_matrix:
        A = self.A_gamma if augmented else self.A
        return sp.bmat([[A, self.B.T], [self.B, None]], format="csr")


def assemble_stokes(V: FunctionSpace, Q: FunctionSpace, viscosity, force=None, gamma: float = 0.0,
                    W: str = "Mp", schur_viscosity=None, u_dirichlet=None) -> StokesBlocks:
    """Assemble and Dirichlet-eliminate all blocks of the (augmented) Stokes system.

    ``schur_viscosity`` is the scalar viscosity weighting M_p(1/mu); by
    default the scalar part of ``viscosity``.  ``u_dirichlet`` overrides the
    boundary values of V (full-length vector).
    """
    if W not in ("Mp", "Mp_invvisc"):
        raise ValueError(f"unknown W choice {W!r}")
    A_full = assemble_viscous_block(V, viscosity)
    B_full = assemble_divergence(V, Q)
    Mp = assemble_pressure_mass(Q)
    Mpv = assemble_pressure_mass(Q, viscosity if schur_viscosity is None else schur_viscosity)
    f = np.zeros(V.n_dofs) if force is None else assemble_load(V, force)
    ud = V.dirichlet_vector() if u_dirichlet is None else np.asarray(u_dirichlet, dtype=float)
    free = V.free_dofs
    A = A_full[free][:, free].tocsr()
    B = B_full[:, free].tocsr()
    rhs_u = f[free] - A_full[free] @ ud
    rhs_p = -(B_full @ ud)
    Wm = Mp if W == "Mp" else Mpv
    aug = gamma * augmentation_term(B, Wm) if gamma > 0 else sp.csr_matrix(A.shape)
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return StokesBlocks(V, Q, A, B, Mp, Mpv, gamma, W, (A + aug).tocsr(), aug, rhs_u, rhs_p, ud)


def export_matrix_market(blocks: StokesBlocks, directory) -> list[str]:
    """Write A, B, A_gamma, Mp and Mp(1/mu) as Matrix Market files."""
    import os

    os.makedirs(directory, exist_ok=True)
    out = []
    for name, M in [("A", blocks.A), ("B", blocks.B), ("A_gamma", blocks.A_gamma),
                    ("Mp", blocks.Mp.to_sparse()), ("Mp_invvisc", blocks.Mp_invvisc.to_sparse())]:
        path = os.path.join(directory, f"{name}.mtx")
        scipy.io.mmwrite(path, sp.coo_matrix(M))
        out.append(path)
    return out

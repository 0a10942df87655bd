import numpy as np
import pytest
import scipy.io
import scipy.linalg as sla

from alstokes.assembly import (AssemblyError, BlockDiagonal, assemble_augmented, assemble_divergence,
                               assemble_load, assemble_pressure_mass, assemble_stokes,
                               assemble_viscous_block, augmented_rhs, export_matrix_market)
from alstokes.elements import make_pressure_space, make_velocity_space
from alstokes.mesh import Mesh, build_rect_mesh


def spaces(n=2, k=2, mesh=None):
    m = build_rect_mesh(nx=n, ny=n) if mesh is None else mesh
    return make_velocity_space(m, k), make_pressure_space(m, k)


def test_rigid_motion_in_kernel():
    V, _ = spaces(3, 3)
    A = assemble_viscous_block(V, lambda p: 1.0 + p[:, 0])
    for f in (lambda p: np.column_stack([-p[:, 1], p[:, 0]]),
              lambda p: np.column_stack([np.ones(len(p)), np.zeros(len(p))])):
        u = V.interpolate(f)
        assert abs(u @ A @ u) < 1e-12


def test_viscous_block_linear_in_mu():
    V, _ = spaces()
    A1 = assemble_viscous_block(V, lambda p: np.ones(len(p)))
    A2 = assemble_viscous_block(V, lambda p: 2.0 * np.ones(len(p)))
    assert np.allclose(A2.toarray(), 2 * A1.toarray(), rtol=0, atol=1e-13)


def test_viscous_quadratic_form_pure_shear():
    V, _ = spaces(2, 2)
    A = assemble_viscous_block(V, lambda p: np.ones(len(p)))
    u = V.interpolate(lambda p: np.column_stack([p[:, 0], -p[:, 1]]))
    assert u @ A @ u == pytest.approx(4.0, rel=1e-13)


def test_viscous_block_rejects_nonpositive_mu():
    V, _ = spaces()
    with pytest.raises(AssemblyError):
        assemble_viscous_block(V, lambda p: p[:, 0] - 0.5)


def test_tensor_viscosity_matches_scalar():
    V, _ = spaces(2, 3)
    I4 = 0.5 * (np.einsum("ik,jl->ijkl", np.eye(2), np.eye(2)) + np.einsum("il,jk->ijkl", np.eye(2), np.eye(2)))

    class Tensor:
        def scalar(self, p):
            return 3.0 + p[:, 0]

        def tensor(self, p):
            return 2 * self.scalar(p)[:, None, None, None, None] * I4

    A_s = assemble_viscous_block(V, Tensor().scalar)
    A_t = assemble_viscous_block(V, Tensor())
    assert np.allclose(A_s.toarray(), A_t.toarray(), atol=1e-12)


def test_constrained_A_is_spd(sinker_4x4):
    A = sinker_4x4.A.toarray()
    assert np.allclose(A, A.T, atol=1e-12 * abs(A).max())
    sla.cholesky(A)


def test_divergence_examples():
    V, Q = spaces(2, 2, Mesh([0.0, 0.4, 1.0], [0.0, 0.7, 1.0]))
    B = assemble_divergence(V, Q)
    const = V.interpolate(lambda p: np.column_stack([np.full(len(p), 2.0), np.full(len(p), -1.0)]))
    assert np.allclose(B @ const, 0.0, atol=1e-14)
    u = V.interpolate(lambda p: p)
    assert Q.mean_vector() @ (B @ u) == pytest.approx(-2.0, rel=1e-13)
    assert np.array_equal(B.T.T.toarray(), B.toarray())


def test_divergence_theorem_per_cell():
    V, Q = spaces(3, 3)
    B = assemble_divergence(V, Q)
    u = V.interpolate(lambda p: np.column_stack([p[:, 0] ** 2, p[:, 0] * p[:, 1]]))
    Bu = B @ u
    m = V.mesh
    for c in range(m.n_cells):
        (x0, y0), (x1, y1) = m.vertices[m.cells[c, 0]], m.vertices[m.cells[c, 2]]
        # div u = 3x, integrated over the cell
        exact = 1.5 * (x1 ** 2 - x0 ** 2) * (y1 - y0)
        assert Bu[Q.dof_map[c, 0]] == pytest.approx(-exact, rel=1e-12)


def test_divergence_rejects_mixed_meshes():
    V, _ = spaces(2)
    _, Q = spaces(2)
    with pytest.raises(ValueError):
        assemble_divergence(V, Q)


def test_pressure_mass_examples():
    _, Q = spaces(2, 3)
    Mp = assemble_pressure_mass(Q)
    M1 = assemble_pressure_mass(Q, lambda p: np.ones(len(p)))
    M4 = assemble_pressure_mass(Q, lambda p: np.full(len(p), 4.0))
    assert np.allclose(Mp.toarray(), M1.toarray(), rtol=0, atol=1e-15)
    assert np.allclose(M4.toarray(), Mp.toarray() / 4, rtol=1e-14)
    one = assemble_pressure_mass(make_pressure_space(build_rect_mesh(nx=1, ny=1), 2),
                                 lambda p: np.full(len(p), 4.0))
    assert one.blocks[0, 0, 0] == pytest.approx(0.25)
    for blk in Mp.blocks:
        assert np.allclose(blk, blk.T) and np.linalg.eigvalsh(blk).min() > 0


def test_pressure_mass_rejects_bad_weight():
    _, Q = spaces()
    with pytest.raises(AssemblyError):
        assemble_pressure_mass(Q, lambda p: np.zeros(len(p)))


def test_block_diagonal_solve_and_inverse(rng):
    blocks = rng.standard_normal((3, 2, 2))
    blocks = blocks @ blocks.transpose(0, 2, 1) + np.eye(2)
    bd = BlockDiagonal(blocks)
    x = rng.standard_normal(6)
    assert np.allclose(bd.solve(bd.matvec(x)), x)
    assert np.allclose(bd.inverse_sparse().toarray() @ bd.toarray(), np.eye(6))
    assert np.allclose(bd.scaled(3.0).toarray(), 3 * bd.toarray())


def test_augmented_matches_dense_oracle():
    V, Q = spaces(2, 2)
    A = assemble_viscous_block(V, lambda p: 1 + p[:, 1])
    B = assemble_divergence(V, Q)
    W = assemble_pressure_mass(Q)
    dense = A.toarray() + 7.0 * B.toarray().T @ np.linalg.inv(W.toarray()) @ B.toarray()
    Ag = assemble_augmented(A, B, W, 7.0)
    assert np.allclose(Ag.toarray(), dense, rtol=0, atol=1e-12 * abs(dense).max())
    assert (assemble_augmented(A, B, W, 0.0) != A).nnz == 0
    with pytest.raises(ValueError):
        assemble_augmented(A, B, W, -1.0)


def test_augmentation_vanishes_on_discrete_kernel(sinker_4x4):
    b = sinker_4x4
    Bd = b.B.toarray()
    kernel = sla.null_space(Bd)
    u = kernel @ np.ones(kernel.shape[1])
    assert u @ (b.A_gamma @ u) == pytest.approx(u @ (b.A @ u), rel=1e-10)


def test_augmented_rhs_examples(rng):
    V, Q = spaces(2, 2)
    B = assemble_divergence(V, Q)
    W = assemble_pressure_mass(Q)
    r1, r2 = rng.standard_normal(V.n_dofs), rng.standard_normal(Q.n_dofs)
    assert np.array_equal(augmented_rhs(r1, np.zeros_like(r2), B, W, 5.0), r1)
    assert np.array_equal(augmented_rhs(r1, r2, B, W, 0.0), r1)
    dense = r1 + 5.0 * B.toarray().T @ np.linalg.solve(W.toarray(), r2)
    assert np.allclose(augmented_rhs(r1, r2, B, W, 5.0), dense)


@pytest.mark.parametrize("gamma", [0.0, 1.0, 1e4])
def test_A_gamma_spd(sinker_4x4, gamma):
    Ag = sinker_4x4.with_gamma(gamma).A_gamma.toarray()
    sla.cholesky(0.5 * (Ag + Ag.T))


def test_solution_independent_of_gamma():
    m = build_rect_mesh(nx=3, ny=3)
    V, Q = make_velocity_space(m, 2), make_pressure_space(m, 2)
    force = lambda p: np.column_stack([np.sin(3 * p[:, 1]), p[:, 0] ** 2])
    sols = []
    for g in (0.0, 10.0, 1e3):
        blk = assemble_stokes(V, Q, lambda p: 1 + 10 * p[:, 0], force=force, gamma=g)
        K = blk.saddle_matrix().toarray()
        # fix the pressure mean through a bordered system
        e = np.concatenate([np.zeros(blk.n_u), blk.Mp.matvec(Q.mean_vector())])
        Kb = np.block([[K, e[:, None]], [e[None, :], np.zeros((1, 1))]])
        rhs = np.concatenate([blk.augmented_rhs(), blk.rhs_p, [0.0]])
        sols.append(np.linalg.solve(Kb, rhs)[:-1])
    assert np.allclose(sols[1], sols[0], atol=1e-9)
    assert np.allclose(sols[2], sols[0], atol=1e-8)


def test_inf_sup_stable_under_refinement():
    vals = []
    for n in (2, 4):
        V, Q = spaces(n, 2)
        B = assemble_divergence(V, Q)[:, V.free_dofs].toarray()
        A = assemble_viscous_block(V, lambda p: np.ones(len(p)))[V.free_dofs][:, V.free_dofs].toarray()
        Mp = assemble_pressure_mass(Q).toarray()
        S = B @ np.linalg.solve(A, B.T)
        ev = sla.eigh(S, Mp, eigvals_only=True)
        vals.append(ev[ev > 1e-10].min())
    assert vals[1] > 0.5 * vals[0] > 0


def test_load_vector_integrates_force():
    V, _ = spaces(2, 3, Mesh([0.0, 0.3, 2.0], [0.0, 1.0, 1.5]))
    f = assemble_load(V, lambda p: np.column_stack([np.ones(len(p)), p[:, 0]]))
    assert f[0::2].sum() == pytest.approx(3.0)
    assert f[1::2].sum() == pytest.approx(3.0)     # integral of x over [0,2]x[0,1.5]


def test_matrix_market_export(tmp_path, sinker_4x4):
    paths = export_matrix_market(sinker_4x4, tmp_path / "mm")
    assert len(paths) == 5
    A = scipy.io.mmread(paths[0])
    assert np.allclose(A.toarray(), sinker_4x4.A.toarray())

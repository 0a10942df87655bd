"""Acceptance criteria.  Each test prints one PASS/FAIL line (also repeated in
the terminal summary).  Run with ``pytest tests/test_acceptance.py -v``.
"""
import time

import numpy as np
import pytest
import scipy.linalg as sla

from alstokes.al_precond import default_W, solve_stokes
from alstokes.mesh import build_rect_mesh, vertex_stars
from alstokes.multigrid import (build_multigrid, build_robust_transfer, free_index, jacobi_smoother,
                                kernel_decomposition_check, star_smoother)
from alstokes.problems.sinker import SinkerConfig, sinker_blocks, sinker_hierarchy_blocks
from alstokes.problems.viscoplastic import ViscoplasticConfig, newton_solve
from alstokes.sparse_linalg import fgmres
from alstokes.spectral_analysis import sherman_morrison_error, verify_lemma

pytestmark = pytest.mark.acceptance


def sinkers(DR, fine_cells):
    """Sinker setup used throughout: 24 inclusions once the mesh resolves them."""
    return SinkerConfig(DR=DR, n=24 if fine_cells >= 32 else 8)


def velocity_block_iterations(blocks, **mg):
    """FGMRES on A_gamma u = f preconditioned by one multigrid cycle."""
    fine = blocks[-1]
    _, rep = fgmres(fine.A_gamma, fine.augmented_rhs(), M=build_multigrid(blocks, **mg), tol=1e-6,
                    maxiter=300)
    return rep


def test_c01_sherman_morrison(verdict):
    blk = sinker_blocks(build_rect_mesh(nx=4, ny=4), 2, sinkers(1e4, 4))
    errs = [sherman_morrison_error(blk, g, "Mp") for g in (1.0, 10.0, 100.0)]
    verdict("C1 Sherman-Morrison identity", max(errs) <= 1e-9,
            "relative errors " + ", ".join(f"{e:.2e}" for e in errs) + " (tol 1e-9)")


def test_c02_lemma_bounds(verdict):
    gammas = [0.0, 1.0, 10.0, 100.0, 1e4]
    violations, gaps = [], {}
    for n in (4, 8):
        for DR in (1e2, 1e4):
            blk = sinker_blocks(build_rect_mesh(nx=n, ny=n), 2, sinkers(DR, n))
            for variant in ("P1", "P2"):
                for r in verify_lemma(blk, variant, gammas):
                    if not r.holds:
                        violations.append((n, DR, variant, r.gamma))
                    if r.gamma == 1e4:
                        gaps[(n, DR, variant)] = r.F_mu - r.f_mu
    worst = max(gaps, key=gaps.get)
    ok = not violations and max(gaps.values()) <= 0.05
    verdict("C2 lemma bounds", ok,
            f"{len(violations)} spectrum violations in 40 cases; max F-f at gamma=1e4 is "
            f"{gaps[worst]:.3f} (mesh {worst[0]}x{worst[0]}, DR={worst[1]:g}, {worst[2]}; tol 0.05); "
            f"P1 max {max(v for k, v in gaps.items() if k[2] == 'P1'):.2e}")


def test_c03_remark_formula(verdict):
    blk = sinker_blocks(build_rect_mesh(nx=4, ny=4), 2, sinkers(1e4, 4))
    rep = verify_lemma(blk, "Mp", [5.0])[0]
    verdict("C3 exact eigenvalue formula", rep.remark_error <= 1e-8,
            f"max deviation {rep.remark_error:.2e} (tol 1e-8)")


def test_c04_exact_inner_trend(verdict):
    t0 = time.perf_counter()
    rows, ok = [], True
    for DR in (1e4, 1e6):
        cfg = sinkers(DR, 32)
        blk = sinker_blocks(build_rect_mesh(nx=32, ny=32), 3, cfg)
        its = [solve_stokes(blk.with_gamma(g, "Mp"), "P1").iterations for g in (0.0, 10.0, 1000.0)]
        ok &= its[0] > its[1] > its[2] and its[2] <= 8
        rows.append(f"DR={DR:g}: {'/'.join(map(str, its))}")
    dt = time.perf_counter() - t0
    verdict("C4 exact-LU iterations vs gamma", ok and dt < 300,
            "; ".join(rows) + f" for gamma 0/10/1000 (Q3, 32x32, {dt:.0f} s)")


def test_c05_jacobi_failure(verdict):
    blocks = sinker_hierarchy_blocks(8, 3, 3, sinkers(1e4, 32), gamma=10.0)
    jac = velocity_block_iterations(blocks, smoother="jacobi", transfer="standard")
    rob = velocity_block_iterations(blocks)
    ok = not jac.converged and jac.iterations >= 300 and rob.converged and rob.iterations <= 40
    verdict("C5 Jacobi vs robust multigrid", ok,
            f"jacobi+standard {'converged' if jac.converged else 'not converged'} after {jac.iterations}; "
            f"robust {rob.iterations} (Q3, 8->16->32, gamma=10, DR=1e4)")


def test_c06_gamma_robust_mg(verdict):
    its = []
    for g in (0.0, 10.0, 1000.0):
        rep = velocity_block_iterations(sinker_hierarchy_blocks(32, 2, 3, sinkers(1e8, 64), gamma=g, W="Mp"))
        its.append(rep.iterations if rep.converged else 10 ** 6)
    ok = all(1 <= i <= 40 for i in its) and max(its) / min(its) <= 2
    verdict("C6 gamma-robust multigrid", ok,
            f"iterations {'/'.join(map(str, its))} for gamma 0/10/1000 (Q3, 32->64, DR=1e8, W=Mp)")


def test_c07_kernel_decomposition(verdict):
    rows, ok = [], True
    for k in (2, 3):
        blk = sinker_blocks(build_rect_mesh(nx=3, ny=3), k, sinkers(1e4, 3))
        pos = free_index(blk.V)
        patches = [pos[p.dofs] for p in vertex_stars(blk.V.mesh, blk.V, free_only=True)]
        rep = kernel_decomposition_check(blk.B, patches, rtol=1e-8)
        ok &= rep.holds
        rows.append(f"Q{k}: dim N_h={rep.dim_kernel}, patch rank={rep.rank_patch_sum}")
    verdict("C7 kernel decomposition", ok, "; ".join(rows))


def _smoother_condition(blk, sm):
    A = blk.A_gamma.toarray()
    D = np.linalg.inv(sm.Dinv.toarray())
    lam = sla.eigh(A, 0.5 * (D + D.T), eigvals_only=True)
    return lam[-1] / lam[0]


def test_c08_smoother_robustness(verdict):
    rows, ok = [], True
    for k in (2, 3):
        growth = {}
        for name, make in (("star", lambda b: star_smoother(b.A_gamma, b.V)),
                           ("jacobi", lambda b: jacobi_smoother(b.A_gamma))):
            c = [_smoother_condition(b, make(b)) for b in
                 (sinker_blocks(build_rect_mesh(nx=5, ny=5), k, sinkers(1e4, 5), gamma=g) for g in (0.0, 1e4))]
            growth[name] = c[1] / c[0]
        ok &= growth["star"] <= 5 and growth["jacobi"] >= 50
        rows.append(f"Q{k}: star x{growth['star']:.2f}, jacobi x{growth['jacobi']:.0f}")
    verdict("C8 smoother condition growth 0 -> 1e4", ok, "; ".join(rows) + " (5x5 sinker, DR=1e4)")


def test_c09_robust_prolongation(verdict):
    cfg = SinkerConfig(DR=1.0, n=8)
    ratios = {}
    for g in (0.0, 1000.0):
        coarse, fine = sinker_hierarchy_blocks(4, 2, 2, cfg, gamma=g)
        t = build_robust_transfer(coarse.V, fine.V, fine.A_gamma, fine.aug, g)
        # coarse fields that are discretely divergence free: their coarse energy does
        # not depend on gamma, so any growth of the ratio comes from the transfer
        N = sla.null_space(coarse.B.toarray(), rcond=1e-8)
        U = N @ np.random.default_rng(0).standard_normal((N.shape[1], 20))
        Ac, Af = coarse.A_gamma, fine.A_gamma
        energy = lambda M, V: np.sqrt(np.einsum("ij,ij->j", V, M @ V))
        ratios[g] = (energy(Af, t.P @ U) / energy(Ac, U), energy(Af, t.P_standard @ U) / energy(Ac, U))
    robust = ratios[1000.0][0] / ratios[0.0][0]
    plain = ratios[1000.0][1] / ratios[0.0][1]
    ok = robust.max() <= 3 and plain.min() > 10
    verdict("C9 robust prolongation", ok,
            f"robust growth {robust.min():.2f}..{robust.max():.2f} (<= 3), "
            f"standard growth {plain.min():.1f}..{plain.max():.1f} (> 10), 20 fields, 4->8")


def _full_solve(k, DR, gamma, variant, coarse, levels):
    cfg = sinkers(DR, coarse * 2 ** (levels - 1))
    blocks = sinker_hierarchy_blocks(coarse, levels, k, cfg, gamma=gamma, W=default_W(variant))
    return solve_stokes(blocks[-1], variant, inner=build_multigrid(blocks)).report


def test_c10_order_robustness(verdict):
    reps = [_full_solve(k, 1e6, 1000.0, "P2", 24, 2) for k in (2, 3, 4)]
    its = [r.iterations if r.converged else 10 ** 6 for r in reps]
    ok = its[0] >= its[1] >= its[2] and max(its) <= 40
    verdict("C10 order robustness", ok,
            f"iterations {'/'.join(map(str, its))} for k=2/3/4 (P2, gamma=1000, DR=1e6, 24->48)")


def test_c11_viscoplastic_newton(verdict):
    t0 = time.perf_counter()
    cfg = ViscoplasticConfig(levels=3)
    r10 = newton_solve(cfg, gamma=10.0, variant="P2")
    r0 = newton_solve(cfg, gamma=0.0, variant="P2", stop_on_linear_failure=True)
    dt = time.perf_counter() - t0
    its10 = r10.linear_iterations
    ok10 = r10.converged and len(r10.steps) <= 15 and max(its10) <= 150 and not r10.any_linear_failure
    hit_cap = any(s.linear_iterations >= 300 and not s.linear_converged for s in r0.steps)
    verdict("C11 viscoplastic Newton", ok10 and hit_cap and dt < 900,
            f"gamma=10: {len(its10)} Newton steps, converged={r10.converged}, linear iterations "
            f"{'/'.join(map(str, its10))}; gamma=0: linear iterations "
            f"{'/'.join(map(str, r0.linear_iterations))}, cap reached={hit_cap} ({dt:.0f} s)")


def test_c12_level_stability(verdict):
    reps = [_full_solve(2, 1e6, 10.0, "P1", 16, L) for L in (2, 3)]
    its = [r.iterations if r.converged else 10 ** 6 for r in reps]
    verdict("C12 level stability", abs(its[0] - its[1]) <= 10,
            f"iterations {its[0]} (2 levels) vs {its[1]} (3 levels), P1, gamma=10, DR=1e6, Q2 coarse 16")

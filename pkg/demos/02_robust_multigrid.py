# %% [markdown]
# # Multigrid for the augmented velocity block
#
# For large gamma the operator A + gamma B^T W^{-1} B is nearly singular:
# divergence-free fields are cheap, everything else is expensive.  Point
# smoothers cannot see that split.  Vertex-star patches can, because every
# discretely divergence-free field is a sum of divergence-free pieces that
# each live on one star.  The prolongation needs a matching fix so that
# coarse divergence-free fields stay (nearly) divergence free on the fine grid.
# %%
from alstokes.multigrid import build_multigrid
from alstokes.problems import sinker_hierarchy_blocks, SinkerConfig
from alstokes.sparse_linalg import fgmres

cfg = SinkerConfig(DR=1e4, n=8)


def iterations(gamma, smoother, transfer):
    blocks = sinker_hierarchy_blocks(4, 3, 2, cfg, gamma=gamma)
    fine = blocks[-1]
    mg = build_multigrid(blocks, smoother=smoother, transfer=transfer)
    _, rep = fgmres(fine.A_gamma, fine.augmented_rhs(), M=mg, tol=1e-6, maxiter=300)
    return rep.iterations if rep.converged else "-"


# %%
print(f"{'gamma':>7} {'star+robust':>12} {'star+standard':>14} {'jacobi+standard':>16}")
for gamma in (0.0, 10.0, 100.0, 1000.0):
    print(f"{gamma:>7g} {iterations(gamma, 'star', 'robust'):>12} "
          f"{iterations(gamma, 'star', 'standard'):>14} {iterations(gamma, 'jacobi', 'standard'):>16}")

# %% [markdown]
# The robust pair grows slowly; here the sinkers are barely resolved on the
# 4x4 base mesh.  With plain interpolation the star smoother degrades
# faster, and Jacobi fails outright ("-" means no convergence in 300
# iterations).

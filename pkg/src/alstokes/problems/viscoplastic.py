"""Two-layer compression with a viscoplastic lower layer and a weak notch.

Cross-section of a 120 km x 30 km box, nondimensionalized by H0 = 30 km,
U0 = 2.5 mm/yr and eta0 = 1e21 Pa s.  Walls push inward with speed (1 + z),
the bottom is free-slip, the top is traction free.  The lower layer obeys
the composite law

    mu(II) = 2 eta_r tau_y / (2 eta_r II + tau_y),   II = sqrt(eps : eps / 2),

and Newton's method is run in the stress-velocity form, where an independent
stress field tau replaces 2 mu eps in the linearized tensor viscosity.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from ..al_precond import default_W, solve_stokes
from ..assembly import assemble_divergence, assemble_stokes, assemble_viscous_block
from ..elements import FunctionSpace, lagrange_1d, make_pressure_space, make_velocity_space
from ..mesh import Mesh, build_hierarchy
from ..multigrid import build_multigrid
from ..sparse_linalg import SparseLU

SECONDS_PER_YEAR = 3600 * 24 * 365.25
II_FLOOR = 1e-12


def _reference_strain_rate(u0_m_per_yr=2.5e-3, H0=3e4):
    return u0_m_per_yr / SECONDS_PER_YEAR / H0


@dataclass
class ViscoplasticConfig:
    eta_r: float = 1e3                 # mu_1 / eta0
    tau_y: float = 1e8 / (1e21 * _reference_strain_rate())
    mu2: float = 1.0                   # upper layer
    mu3: float = 1e-4                  # notch
    length: float = 4.0
    height: float = 1.0
    interface: float = 0.75
    notch: tuple = (23.0 / 12.0, 25.0 / 12.0, 2.0 / 3.0, 0.75)   # x0, x1, z0, z1
    u0: float = 1.0
    # coarse grid lines, graded towards the notch; they must contain the
    # interface and notch edges so every cell has a single material
    mesh_x: tuple = (0.0, 0.5, 1.0, 1.4, 1.7, 23.0 / 12.0, 2.0, 25.0 / 12.0, 2.3, 2.6, 3.0, 3.5, 4.0)
    mesh_z: tuple = (0.0, 0.25, 0.5, 2.0 / 3.0, 0.75, 0.875, 1.0)
    levels: int = 3
    k: int = 2
    linear: bool = False               # constant mu_1 = 2 eta_r everywhere in the lower layer

    def __post_init__(self):
        if min(self.eta_r, self.tau_y, self.mu2, self.mu3) <= 0:
            raise ValueError("viscosities and yield stress must be positive")

    def region(self, x) -> np.ndarray:
        """0 = viscoplastic lower layer, 1 = upper layer, 2 = notch."""
        x = np.atleast_2d(x)
        r = np.zeros(len(x), dtype=int)
        r[x[:, 1] > self.interface] = 1
        x0, x1, z0, z1 = self.notch
        r[(x[:, 0] > x0) & (x[:, 0] < x1) & (x[:, 1] > z0) & (x[:, 1] < z1)] = 2
        return r

    def effective_viscosity(self, II):
        """Composite law in the lower layer (no region logic)."""
        II = np.asarray(II, dtype=float)
        if self.linear:
            return np.full_like(II, 2 * self.eta_r)
        return 2 * self.eta_r * self.tau_y / (2 * self.eta_r * II + self.tau_y)

    @property
    def stress_cap(self) -> float:
        """Limit of II of 2 mu eps as II -> infinity for this law."""
        return 2 * self.tau_y

    def mesh(self) -> Mesh:
        xs, zs = np.asarray(self.mesh_x, float), np.asarray(self.mesh_z, float)
        for v, lines in ((self.notch[0], xs), (self.notch[1], xs), (self.notch[2], zs),
                         (self.notch[3], zs), (self.interface, zs)):
            if not np.any(np.isclose(lines, v)):
                raise ValueError(f"grid lines do not resolve material boundary at {v:g}")
        if not (np.isclose(xs[0], 0) and np.isclose(xs[-1], self.length)
                and np.isclose(zs[0], 0) and np.isclose(zs[-1], self.height)):
            raise ValueError("grid lines must span the domain")
        return Mesh(xs, zs)

    def inflow(self, pts):
        pts = np.atleast_2d(pts)
        out = np.zeros((len(pts), 2))
        side = np.where(pts[:, 0] < 0.5 * self.length, 1.0, -1.0)
        out[:, 0] = side * self.u0 * (1.0 + pts[:, 1])
        return out


def viscoplastic_effective_viscosity(cfg: ViscoplasticConfig, II):
    return cfg.effective_viscosity(II)


BOUNDARY = {"left": (0,), "right": (0,), "bottom": (1,)}


def make_spaces(cfg: ViscoplasticConfig, mesh: Mesh):
    V = make_velocity_space(mesh, cfg.k, dirichlet=BOUNDARY, dirichlet_value=cfg.inflow)
    Q = make_pressure_space(mesh, cfg.k, mean_constraint=False)
    return V, Q


# ---------------------------------------------------------------------------
# field evaluation


def velocity_gradient(V: FunctionSpace, u_full: np.ndarray, points: np.ndarray) -> np.ndarray:
    """grad u at arbitrary points, shape (n, 2, 2) with [i, j] = d u_i / d x_j."""
    cells, ref = V.mesh.locate(points)
    _, dref = V.element.eval(ref)                       # (n, nb, 2)
    h = V.mesh.cell_sizes[cells]
    G = dref * (2.0 / h)[:, None, :]
    coef = u_full[V.dof_map[cells]].reshape(len(cells), -1, 2)   # (n, nb, comp)
    return np.einsum("nac,naj->ncj", coef, G)


def strain_rate(V, u_full, points):
    g = velocity_gradient(V, u_full, points)
    return 0.5 * (g + np.swapaxes(g, 1, 2))


def second_invariant(t: np.ndarray) -> np.ndarray:
    return np.sqrt(0.5 * np.einsum("nij,nij->n", t, t))


def pressure_values(Q: FunctionSpace, p: np.ndarray, points) -> np.ndarray:
    cells, ref = Q.mesh.locate(points)
    psi = Q.element.eval(ref)
    return np.einsum("na,na->n", psi, p[Q.dof_map[cells]])


class QuadratureTensorField:
    """Symmetric tensor field stored per cell at tensor Gauss-Legendre nodes.

    Values between nodes come from the cellwise Lagrange interpolant.
    """

    def __init__(self, mesh: Mesh, n1d: int, values: np.ndarray):
        self.mesh = mesh
        self.nodes_1d, _ = np.polynomial.legendre.leggauss(n1d)
        self.values = values            # (n_cells, n1d**2, 2, 2)

    @classmethod
    def nodes(cls, mesh: Mesh, n1d: int) -> np.ndarray:
        x, _ = np.polynomial.legendre.leggauss(n1d)
        X, Y = np.meshgrid(x, x)
        ref = np.column_stack([X.ravel(), Y.ravel()])
        return mesh.map_to_physical(ref)

    def __call__(self, points):
        cells, ref = self.mesh.locate(points)
        vx, _ = lagrange_1d(self.nodes_1d, ref[:, 0])
        vy, _ = lagrange_1d(self.nodes_1d, ref[:, 1])
        w = (vy[:, :, None] * vx[:, None, :]).reshape(len(cells), -1)
        return np.einsum("nq,nqij->nij", w, self.values[cells])


def _sym_identity():
    d = np.eye(2)
    return 0.5 * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d))


I4 = _sym_identity()


class PicardViscosity:
    """Scalar effective viscosity of the current velocity field."""

    def __init__(self, cfg: ViscoplasticConfig, V: FunctionSpace, u_full: np.ndarray):
        self.cfg, self.V, self.u = cfg, V, u_full

    def scalar(self, points):
        reg = self.cfg.region(points)
        mu = np.empty(len(points))
        mu[reg == 1] = self.cfg.mu2
        mu[reg == 2] = self.cfg.mu3
        low = reg == 0
        if np.any(low):
            II = np.maximum(second_invariant(strain_rate(self.V, self.u, points[low])), II_FLOOR)
            mu[low] = self.cfg.effective_viscosity(II)
        return mu


class StressVelocityViscosity(PicardViscosity):
    """Fourth-order tensor of the stress-velocity Newton linearization.

    C = 2 mu [ I - (eps (x) tau)_sym / (2 II max(cap, II_tau)) ] in the lower
    layer, 2 mu I elsewhere; cap is the limiting stress invariant 2 tau_y.
    With tau = 2 mu eps this is exactly the standard Newton tensor.
    """

    def __init__(self, cfg, V, u_full, tau_field):
        super().__init__(cfg, V, u_full)
        self.tau = tau_field

    def tensor(self, points):
        n = len(points)
        mu = self.scalar(points)
        C = 2 * mu[:, None, None, None, None] * np.broadcast_to(I4, (n, 2, 2, 2, 2))
        if self.cfg.linear:
            return C
        low = self.cfg.region(points) == 0
        if np.any(low):
            p = points[low]
            eps = strain_rate(self.V, self.u, p)
            II = np.maximum(second_invariant(eps), II_FLOOR)
            tau = self.tau(p)
            IIt = second_invariant(tau)
            denom = 2 * II * np.maximum(self.cfg.stress_cap, IIt)
            outer = 0.5 * (np.einsum("nij,nkl->nijkl", eps, tau) + np.einsum("nij,nkl->nijkl", tau, eps))
            C = C.copy()
            C[low] = 2 * mu[low, None, None, None, None] * (I4[None] - outer / denom[:, None, None, None, None])
        return C


def consistent_stress(cfg, V, u_full, points):
    eps = strain_rate(V, u_full, points)
    mu = PicardViscosity(cfg, V, u_full).scalar(points)
    return 2 * mu[:, None, None] * eps


def bound_stress(tau, cap):
    IIt = second_invariant(tau)
    s = np.where(IIt > cap, cap / np.maximum(IIt, 1e-300), 1.0)
    return tau * s[:, None, None]


# ---------------------------------------------------------------------------
# Newton solver


class ViscoplasticProblem:
    """Mesh hierarchy, spaces and residual evaluation for the compression setup."""

    def __init__(self, cfg: ViscoplasticConfig):
        self.cfg = cfg
        self.hierarchy = build_hierarchy(cfg.mesh(), cfg.levels - 1)
        self.spaces = [make_spaces(cfg, m) for m in self.hierarchy.levels]
        self.V, self.Q = self.spaces[-1]
        self.B_full = assemble_divergence(self.V, self.Q)
        self.n1d = cfg.k + 2           # nodes of the assembly quadrature (degree 2k+2)
        self.stress_points = QuadratureTensorField.nodes(self.V.mesh, self.n1d).reshape(-1, 2)

    def residual(self, u_full, p):
        """Nonlinear residual (r_u on free dofs, r_p); body force is zero."""
        A = assemble_viscous_block(self.V, PicardViscosity(self.cfg, self.V, u_full))
        r_u = (A @ u_full + self.B_full.T @ p)[self.V.free_dofs]
        r_p = self.B_full @ u_full
        return r_u, r_p

    def consistent_stress(self, u_full):
        tau = consistent_stress(self.cfg, self.V, u_full, self.stress_points)
        return tau.reshape(self.V.mesh.n_cells, -1, 2, 2)

    def tau_field(self, values):
        return QuadratureTensorField(self.V.mesh, self.n1d, values)

    def lift(self):
        return self.V.dirichlet_vector(), np.zeros(self.Q.n_dofs)

    def picard_initial(self):
        """Solve the linear problem with mu = 2 eta_r in the lower layer (direct solve)."""
        cfg = self.cfg

        def mu(points):
            reg = cfg.region(points)
            return np.choose(reg, [2 * cfg.eta_r, cfg.mu2, cfg.mu3]).astype(float)

        blk = assemble_stokes(self.V, self.Q, mu)
        K = blk.saddle_matrix(augmented=False)
        x = SparseLU(K).solve(np.concatenate([blk.rhs_u, blk.rhs_p]))
        return blk.full_velocity(x[: blk.n_u]), x[blk.n_u:]


@dataclass
class NewtonState:
    u: np.ndarray              # full velocity (boundary values included)
    p: np.ndarray
    tau: np.ndarray            # (n_cells, n_nodes, 2, 2) at the stress nodes
    r_u: np.ndarray
    r_p: np.ndarray

    @property
    def residual_norm(self) -> float:
        return float(np.sqrt(self.r_u @ self.r_u + self.r_p @ self.r_p))

    def check(self):
        for name in ("u", "p", "tau"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise FloatingPointError(f"non-finite values in Newton state field {name}")


def initial_state(prob: ViscoplasticProblem, start: str = "picard") -> NewtonState:
    u, p = prob.picard_initial() if start == "picard" else prob.lift()
    return NewtonState(u, p, prob.consistent_stress(u), *prob.residual(u, p))


def assemble_newton_system(prob: ViscoplasticProblem, state: NewtonState, gamma: float = 0.0,
                           W: str = "Mp_invvisc"):
    """Per-level blocks of the linearized system, coarse to fine.

    The fine-level fields are evaluated at each level's quadrature points, so
    coarse operators are rediscretizations of the same linearization.
    The returned blocks carry homogeneous boundary data; the Newton right-hand
    side is (-r_u, -r_p) of the state.
    """
    state.check()
    visc = StressVelocityViscosity(prob.cfg, prob.V, state.u, prob.tau_field(state.tau))
    schur = PicardViscosity(prob.cfg, prob.V, state.u)
    return [assemble_stokes(V, Q, visc, gamma=gamma, W=W, schur_viscosity=schur,
                            u_dirichlet=np.zeros(V.n_dofs)) for V, Q in prob.spaces]


@dataclass
class NewtonStep:
    step: int
    linear_iterations: int
    linear_converged: bool
    residual: float
    relative_residual: float
    step_length: float
    seconds: float


@dataclass
class NewtonResult:
    state: NewtonState
    steps: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    converged: bool = False
    initial_residual: float = 0.0

    @property
    def u(self):
        return self.state.u

    @property
    def p(self):
        return self.state.p

    @property
    def linear_iterations(self):
        return [s.linear_iterations for s in self.steps]

    @property
    def any_linear_failure(self):
        return any(not r.converged for r in self.reports)


def newton_solve(cfg: ViscoplasticConfig, gamma: float = 10.0, variant: str = "P2", W: str | None = None,
                 tol: float = 1e-8, maxit: int = 15, linear_tol: float = 1e-6, linear_maxit: int = 300,
                 stress_update: str = "linearized", stop_on_linear_failure: bool = False,
                 smoother: str = "star", transfer: str = "robust", log=None) -> NewtonResult:
    """Damped stress-velocity Newton iteration with AL-preconditioned linear solves.

    The iteration starts from the Picard solution with mu = 2 eta_r, and the
    relative residual is measured against that starting point.  With
    ``cfg.linear`` the start is the boundary lift instead, so the single
    Newton step is the linear solve itself (done to 0.1 * tol).

    ``stress_update`` is "linearized", tau_k = bound(2 mu eps(u_{k-1}) +
    alpha C : eps(du)), or "consistent", tau_k = 2 mu(u_k) eps(u_k), which
    makes every step a standard Newton step.  Plain Newton needs heavy
    damping once the notch yields, so "linearized" is the default.
    Linear-solve failures are recorded, not raised.
    """
    if stress_update not in ("linearized", "consistent"):
        raise ValueError(f"unknown stress update {stress_update!r}")
    W = default_W(variant) if W is None else W
    prob = ViscoplasticProblem(cfg)
    V = prob.V
    if cfg.linear:
        state = initial_state(prob, "lift")
        linear_tol = min(linear_tol, 0.1 * tol)
    else:
        state = initial_state(prob, "picard")
    res0 = state.residual_norm
    out = NewtonResult(state, initial_residual=res0)
    if res0 == 0.0:
        out.converged = True
        return out
    pts = prob.stress_points
    for it in range(1, maxit + 1):
        t0 = time.perf_counter()
        blocks = assemble_newton_system(prob, state, gamma, W)
        mg = build_multigrid(blocks, smoother=smoother, transfer=transfer)
        sol = solve_stokes(blocks[-1], variant, inner=mg, tol=linear_tol, maxiter=linear_maxit,
                           rhs=(-state.r_u, -state.r_p))
        out.reports.append(sol.report)
        du = np.zeros(V.n_dofs)
        du[V.free_dofs] = sol.u
        dp = sol.p

        res = state.residual_norm
        alpha = 1.0
        for _ in range(9):                      # full step plus at most 8 halvings
            u_try, p_try = state.u + alpha * du, state.p + alpha * dp
            r_try = prob.residual(u_try, p_try)
            res_try = float(np.linalg.norm(np.concatenate(r_try)))
            if res_try < res:
                break
            alpha *= 0.5
        else:
            alpha *= 2.0                        # no decrease: keep the smallest step tried

        if stress_update == "linearized":
            visc = StressVelocityViscosity(cfg, V, state.u, prob.tau_field(state.tau))
            dtau = np.einsum("nijkl,nkl->nij", visc.tensor(pts), strain_rate(V, du, pts))
            base = consistent_stress(cfg, V, state.u, pts)
            tau = bound_stress(base + alpha * dtau, cfg.stress_cap).reshape(state.tau.shape)
        else:
            tau = prob.consistent_stress(u_try)
        state = NewtonState(u_try, p_try, tau, *r_try)

        step = NewtonStep(it, sol.report.iterations, sol.report.converged, res_try, res_try / res0, alpha,
                          time.perf_counter() - t0)
        out.steps.append(step)
        out.state = state
        if log is not None:
            log(step)
        if stop_on_linear_failure and not sol.report.converged:
            break
        if res_try <= tol * res0:
            out.converged = True
            break
    return out


def write_fields_csv(cfg: ViscoplasticConfig, V, Q, u_full, p, stream):
    """Sample (x, y, mu_eff, II, u, v, p) at the velocity nodes."""
    pts = V.node_points
    eps = strain_rate(V, u_full, pts)
    II = second_invariant(eps)
    mu = PicardViscosity(cfg, V, u_full).scalar(pts)
    pv = pressure_values(Q, p, pts)
    U = u_full.reshape(-1, 2)
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["x", "y", "mu_eff", "II", "u", "v", "p"])
    for i in range(len(pts)):
        w.writerow([f"{v:.10g}" for v in (pts[i, 0], pts[i, 1], mu[i], II[i], U[i, 0], U[i, 1], pv[i])])

"""Reference elements, quadrature and function spaces.

Velocity: continuous [Q_k]^2 with equispaced tensor-product nodes.
Pressure: discontinuous P_{k-1}, monomials of total degree <= k-1 in the
reference coordinates of each cell.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .mesh import Mesh

SIDES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int


@lru_cache(maxsize=None)
def quadrature(degree: int) -> QuadratureRule:
    """Tensor-product Gauss-Legendre rule on (-1, 1)^2 exact to ``degree``."""
    if degree < 0:
        raise ValueError("quadrature degree must be non-negative")
    n = degree // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    X, Y = np.meshgrid(x, x)
    W = np.outer(w, w)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return QuadratureRule(pts, W.ravel(), degree)


def lagrange_1d(nodes: np.ndarray, x: np.ndarray):
    """Values and derivatives of the 1D Lagrange basis on ``nodes`` at ``x``.

    Returns arrays of shape (len(x), len(nodes)).
    """
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = len(nodes)
    diff = x[:, None] - nodes[None, :]
    val = np.ones((len(x), n))
    der = np.zeros((len(x), n))
    for i in range(n):
        denom = np.prod([nodes[i] - nodes[j] for j in range(n) if j != i])
        others = [j for j in range(n) if j != i]
        val[:, i] = np.prod(diff[:, others], axis=1) / denom
        d = np.zeros(len(x))
        for m in others:
            rest = [j for j in others if j != m]
            d += np.prod(diff[:, rest], axis=1) if rest else 1.0
        der[:, i] = d / denom
    return val, der


class QkElement:
    """Scalar Q_k Lagrange element on (-1, 1)^2; node (i, j) has index j*(k+1)+i."""

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("Q_k needs k >= 1")
        self.degree = k
        self.nodes_1d = np.linspace(-1.0, 1.0, k + 1)
        X, Y = np.meshgrid(self.nodes_1d, self.nodes_1d)
        self.node_points = np.column_stack([X.ravel(), Y.ravel()])
        self.n_basis = (k + 1) ** 2

    def eval(self, points: np.ndarray):
        """Basis values (npts, nb) and reference gradients (npts, nb, 2)."""
        points = np.atleast_2d(points)
        vx, dx = lagrange_1d(self.nodes_1d, points[:, 0])
        vy, dy = lagrange_1d(self.nodes_1d, points[:, 1])
        vals = (vy[:, :, None] * vx[:, None, :]).reshape(len(points), -1)
        gx = (vy[:, :, None] * dx[:, None, :]).reshape(len(points), -1)
        gy = (dy[:, :, None] * vx[:, None, :]).reshape(len(points), -1)
        return vals, np.stack([gx, gy], axis=-1)


class PdiscElement:
    """Monomials xi^a eta^b with a + b <= degree; the constant comes first."""

    def __init__(self, degree: int):
        if degree < 0:
            raise ValueError("degree must be non-negative")
        self.degree = degree
        self.exponents = [(a, t - a) for t in range(degree + 1) for a in range(t, -1, -1)]
        self.n_basis = len(self.exponents)

    def eval(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.column_stack([points[:, 0] ** a * points[:, 1] ** b for a, b in self.exponents])


class FunctionSpace:
    """Degree-of-freedom layout of a velocity or pressure space on a mesh.

    Velocity dofs are interleaved by node: dof = 2 * node + component.
    Pressure dofs are cell-contiguous: dof = cell * n_local + local.
    """

    def __init__(self, mesh: Mesh, kind: str, degree: int, dirichlet=None, dirichlet_value=None,
                 mean_constraint: bool = False):
        self.mesh = mesh
        self.kind = kind
        self.degree = degree
        self.mean_constraint = mean_constraint
        if kind == "velocity":
            self.element = QkElement(degree)
            k = degree
            nnx, nny = k * mesh.nx + 1, k * mesh.ny + 1
            self.n_nodes = nnx * nny
            self.n_dofs = 2 * self.n_nodes
            cx, cy = mesh.cell_index_2d(np.arange(mesh.n_cells))
            i = np.tile(np.arange(k + 1), k + 1)
            j = np.repeat(np.arange(k + 1), k + 1)
            self.node_map = (k * cy[:, None] + j[None, :]) * nnx + (k * cx[:, None] + i[None, :])
            self.dof_map = np.stack([2 * self.node_map, 2 * self.node_map + 1], axis=-1).reshape(
                mesh.n_cells, -1)
            gx, gy = np.meshgrid(np.arange(nnx), np.arange(nny))
            self._node_grid = (gx.ravel(), gy.ravel())
            self.dirichlet = {s: (0, 1) for s in SIDES} if dirichlet is None else dict(dirichlet)
            self.dirichlet_value = dirichlet_value
            self.dirichlet_dofs = self._collect_dirichlet()
        elif kind == "pressure":
            self.element = PdiscElement(degree - 1)
            m = self.element.n_basis
            self.n_dofs = mesh.n_cells * m
            self.dof_map = np.arange(self.n_dofs).reshape(mesh.n_cells, m)
            self.dirichlet = {}
            self.dirichlet_dofs = np.zeros(0, dtype=int)
        else:
            raise ValueError(f"unknown space kind {kind!r}")
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.dirichlet_dofs] = False
        self.free_dofs = np.flatnonzero(mask)
        self.n_free = len(self.free_dofs)

    @property
    def node_points(self) -> np.ndarray:
        """Physical coordinates of velocity nodes."""
        k = self.degree
        gx, gy = self._node_grid
        xs_f = _subdivide(self.mesh.xs, k)
        ys_f = _subdivide(self.mesh.ys, k)
        return np.column_stack([xs_f[gx], ys_f[gy]])

    def side_nodes(self, side: str) -> np.ndarray:
        k = self.degree
        nnx, nny = k * self.mesh.nx + 1, k * self.mesh.ny + 1
        nodes = np.arange(nnx * nny).reshape(nny, nnx)
        return {"left": nodes[:, 0], "right": nodes[:, -1],
                "bottom": nodes[0, :], "top": nodes[-1, :]}[side]

    def _collect_dirichlet(self) -> np.ndarray:
        dofs = set()
        for side, comps in self.dirichlet.items():
            if side not in SIDES:
                raise ValueError(f"unknown boundary side {side!r}")
            for c in comps:
                dofs.update((2 * self.side_nodes(side) + c).tolist())
        return np.array(sorted(dofs), dtype=int)

    def dirichlet_vector(self) -> np.ndarray:
        """Full-length velocity vector holding boundary values (zero elsewhere)."""
        u = np.zeros(self.n_dofs)
        if self.dirichlet_value is None or len(self.dirichlet_dofs) == 0:
            return u
        vals = np.asarray(self.dirichlet_value(self.node_points), dtype=float).ravel()
        u[self.dirichlet_dofs] = vals[self.dirichlet_dofs]
        return u

    def interpolate(self, func) -> np.ndarray:
        """Nodal interpolant of a vector field func(points) -> (n, 2)."""
        if self.kind != "velocity":
            raise ValueError("nodal interpolation only for velocity spaces")
        return np.asarray(func(self.node_points), dtype=float).ravel()

    def mean_vector(self) -> np.ndarray:
        """Coefficients of the constant function 1 (pressure only)."""
        e = np.zeros(self.n_dofs)
        e[self.dof_map[:, 0]] = 1.0
        return e


def _subdivide(lines: np.ndarray, k: int) -> np.ndarray:
    out = np.empty(k * (len(lines) - 1) + 1)
    t = np.arange(k) / k
    out[:-1] = (lines[:-1, None] + t[None, :] * np.diff(lines)[:, None]).ravel()
    out[-1] = lines[-1]
    return out


def make_velocity_space(mesh: Mesh, k: int, dirichlet=None, dirichlet_value=None) -> FunctionSpace:
    """Continuous [Q_k]^2 space; homogeneous Dirichlet on all sides by default.

    ``dirichlet`` maps side names to constrained components, e.g.
    ``{"left": (0,), "bottom": (1,)}``.  ``dirichlet_value(points)`` returns
    (n, 2) boundary values; only constrained components are used.
    """
    if k < 2:
        raise NotImplementedError("velocity degree k must be >= 2")
    return FunctionSpace(mesh, "velocity", k, dirichlet, dirichlet_value)


def make_pressure_space(mesh: Mesh, k: int, mean_constraint: bool = True) -> FunctionSpace:
    """Discontinuous P_{k-1} space paired with [Q_k]^2 velocity."""
    if k < 2:
        raise NotImplementedError("pressure space pairs with k >= 2")
    return FunctionSpace(mesh, "pressure", k, mean_constraint=mean_constraint)

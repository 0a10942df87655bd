"""Structured quadrilateral meshes, refinement hierarchies and vertex stars.

Meshes are tensor products of two strictly increasing coordinate arrays, so
every cell is a rectangle and its reference map is affine.  Vertices and cells
are numbered lexicographically with x running fastest.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class Mesh:
    """Rectilinear quadrilateral mesh given by its grid lines."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        if xs.ndim != 1 or ys.ndim != 1 or len(xs) < 2 or len(ys) < 2:
            raise ValueError("need at least two grid lines per direction")
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
            raise ValueError("grid lines must be strictly increasing")
        xs.setflags(write=False)
        ys.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def nx(self) -> int:
        return len(self.xs) - 1

    @property
    def ny(self) -> int:
        return len(self.ys) - 1

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_vertices(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def vertices(self) -> np.ndarray:
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    @property
    def cells(self) -> np.ndarray:
        """Counterclockwise vertex 4-tuples, one row per cell."""
        cx, cy = self.cell_index_2d(np.arange(self.n_cells))
        v0 = cy * (self.nx + 1) + cx
        return np.column_stack([v0, v0 + 1, v0 + self.nx + 2, v0 + self.nx + 1])

    def cell_index_2d(self, cells):
        cells = np.asarray(cells)
        return cells % self.nx, cells // self.nx

    @property
    def cell_sizes(self) -> np.ndarray:
        """(n_cells, 2) array of cell widths and heights."""
        hx, hy = np.meshgrid(np.diff(self.xs), np.diff(self.ys))
        return np.column_stack([hx.ravel(), hy.ravel()])

    @property
    def cell_centers(self) -> np.ndarray:
        mx = 0.5 * (self.xs[1:] + self.xs[:-1])
        my = 0.5 * (self.ys[1:] + self.ys[:-1])
        X, Y = np.meshgrid(mx, my)
        return np.column_stack([X.ravel(), Y.ravel()])

    @property
    def cell_jacobians(self) -> np.ndarray:
        """Jacobians of the affine maps (-1, 1)^2 -> K, shape (n_cells, 2, 2)."""
        h = self.cell_sizes
        J = np.zeros((self.n_cells, 2, 2))
        J[:, 0, 0] = 0.5 * h[:, 0]
        J[:, 1, 1] = 0.5 * h[:, 1]
        return J

    @property
    def cell_map(self):
        """Per-cell affine map as (jacobian, offset) with x = J @ xi + offset."""
        return self.cell_jacobians, self.cell_centers

    def map_to_physical(self, ref_points: np.ndarray, cells=None) -> np.ndarray:
        """Map reference points (npts, 2) into every cell: (n_cells, npts, 2)."""
        if cells is None:
            cells = np.arange(self.n_cells)
        h = self.cell_sizes[cells]
        c = self.cell_centers[cells]
        return c[:, None, :] + 0.5 * h[:, None, :] * np.asarray(ref_points)[None, :, :]

    @property
    def boundary_vertices(self) -> np.ndarray:
        V = np.arange(self.n_vertices).reshape(self.ny + 1, self.nx + 1)
        mask = np.zeros_like(V, dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return V[mask]

    @property
    def bounds(self):
        return (self.xs[0], self.xs[-1]), (self.ys[0], self.ys[-1])

    def locate(self, points: np.ndarray):
        """Cell index and reference coordinates of physical points.

        Points on an interior grid line are assigned to the cell on the
        upper/right side.
        """
        points = np.atleast_2d(points)
        ix = np.clip(np.searchsorted(self.xs, points[:, 0], side="right") - 1, 0, self.nx - 1)
        iy = np.clip(np.searchsorted(self.ys, points[:, 1], side="right") - 1, 0, self.ny - 1)
        cells = iy * self.nx + ix
        hx = self.xs[ix + 1] - self.xs[ix]
        hy = self.ys[iy + 1] - self.ys[iy]
        xi = 2.0 * (points[:, 0] - self.xs[ix]) / hx - 1.0
        eta = 2.0 * (points[:, 1] - self.ys[iy]) / hy - 1.0
        return cells, np.column_stack([xi, eta])

    def vertex_cells(self, v: int) -> list[int]:
        """Cells of star(v), i.e. all cells containing vertex v."""
        vx, vy = v % (self.nx + 1), v // (self.nx + 1)
        out = []
        for cy in (vy - 1, vy):
            for cx in (vx - 1, vx):
                if 0 <= cx < self.nx and 0 <= cy < self.ny:
                    out.append(cy * self.nx + cx)
        return out

    def dump(self) -> str:
        """Plain-text dump: ``v x y`` per vertex then ``c i0 i1 i2 i3`` per cell."""
        lines = [f"v {x!r} {y!r}" for x, y in self.vertices]
        lines += ["c " + " ".join(str(i) for i in c) for c in self.cells]
        return "\n".join(lines) + "\n"


def build_rect_mesh(domain=((0.0, 1.0), (0.0, 1.0)), nx: int = 1, ny: int = 1) -> Mesh:
    """Uniform nx-by-ny mesh of an axis-aligned rectangle."""
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be positive integers, got nx={nx}, ny={ny}")
    (x0, x1), (y0, y1) = domain
    if not (x1 > x0 and y1 > y0):
        raise ValueError("degenerate domain")
    return Mesh(np.linspace(x0, x1, int(nx) + 1), np.linspace(y0, y1, int(ny) + 1))


def refine(mesh: Mesh):
    """Uniform 1 -> 4 refinement.

    Returns the fine mesh and the child map, an (n_coarse_cells, 4) array of
    fine cell indices ordered (lower-left, lower-right, upper-right, upper-left).
    """
    xs = np.empty(2 * mesh.nx + 1)
    xs[0::2] = mesh.xs
    xs[1::2] = 0.5 * (mesh.xs[:-1] + mesh.xs[1:])
    ys = np.empty(2 * mesh.ny + 1)
    ys[0::2] = mesh.ys
    ys[1::2] = 0.5 * (mesh.ys[:-1] + mesh.ys[1:])
    fine = Mesh(xs, ys)
    cx, cy = mesh.cell_index_2d(np.arange(mesh.n_cells))
    base = (2 * cy) * fine.nx + 2 * cx
    child_map = np.column_stack([base, base + 1, base + fine.nx + 1, base + fine.nx])
    return fine, child_map


@dataclass
class MeshHierarchy:
    """Nested meshes, coarsest first."""

    levels: list[Mesh]
    child_maps: list[np.ndarray] = field(default_factory=list)
    vertex_embeddings: list[np.ndarray] = field(default_factory=list)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]


def _vertex_embedding(coarse: Mesh) -> np.ndarray:
    vx, vy = np.meshgrid(np.arange(coarse.nx + 1), np.arange(coarse.ny + 1))
    return ((2 * vy) * (2 * coarse.nx + 1) + 2 * vx).ravel()


def build_hierarchy(coarse: Mesh, n_refine: int) -> MeshHierarchy:
    levels, child_maps, embeds = [coarse], [], []
    for _ in range(n_refine):
        fine, cmap = refine(levels[-1])
        embeds.append(_vertex_embedding(levels[-1]))
        child_maps.append(cmap)
        levels.append(fine)
    return MeshHierarchy(levels, child_maps, embeds)


@dataclass(frozen=True)
class StarPatch:
    vertex: int
    cells: tuple
    dofs: np.ndarray  # velocity dofs with support inside star(vertex), Dirichlet removed

    @property
    def interior_velocity_dofs(self):
        return self.dofs


def vertex_stars(mesh: Mesh, space, free_only: bool = True) -> list[StarPatch]:
    """Vertex-star subspaces for a Q_k velocity space.

    A dof belongs to the patch of vertex v when the support of its basis
    function is contained in star(v).  On a tensor grid the support of a node
    is the set of cells touching it, so this reduces to a node-index window
    test.  ``free_only`` drops Dirichlet dofs.
    """
    k = space.degree
    if k < 2:
        raise NotImplementedError("vertex-star patches need k >= 2")
    nnx = k * mesh.nx + 1
    nny = k * mesh.ny + 1
    nodes = np.arange(nnx * nny).reshape(nny, nnx)
    dirichlet = np.zeros(space.n_dofs, dtype=bool)
    dirichlet[space.dirichlet_dofs] = True
    patches = []
    for v in range(mesh.n_vertices):
        vx, vy = v % (mesh.nx + 1), v // (mesh.nx + 1)
        # Node window: strictly inside the star, plus star edges lying on the
        # domain boundary (their support is still inside the star).
        lo_x = k * (vx - 1) + 1 if vx > 0 else 0
        hi_x = k * (vx + 1) - 1 if vx < mesh.nx else k * vx
        lo_y = k * (vy - 1) + 1 if vy > 0 else 0
        hi_y = k * (vy + 1) - 1 if vy < mesh.ny else k * vy
        win = nodes[lo_y:hi_y + 1, lo_x:hi_x + 1].ravel()
        dofs = np.column_stack([2 * win, 2 * win + 1]).ravel()
        if free_only:
            dofs = dofs[~dirichlet[dofs]]
        patches.append(StarPatch(v, tuple(mesh.vertex_cells(v)), np.sort(dofs)))
    return patches

"""Multi-sinker benchmark: smoothed high-viscosity inclusions pulled downward."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..assembly import StokesBlocks, assemble_stokes
from ..elements import make_pressure_space, make_velocity_space
from ..mesh import Mesh, build_hierarchy, build_rect_mesh


def place_sinkers(n: int, omega: float, seed: int) -> np.ndarray:
    """Deterministic centers drawn uniformly from [omega, 1 - omega]^2."""
    if n < 1:
        raise ValueError("need at least one sinker")
    rng = np.random.default_rng(seed)
    return rng.uniform(omega, 1.0 - omega, size=(n, 2))


@dataclass
class SinkerConfig:
    DR: float = 1e4
    n: int = 8
    omega: float = 0.1
    delta: float = 200.0
    beta: float = 10.0
    seed: int = 0
    centers: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.DR < 1 or self.omega <= 0 or self.delta <= 0 or self.beta <= 0:
            raise ValueError("invalid sinker parameters")
        if self.centers is None:
            self.centers = place_sinkers(self.n, self.omega, self.seed)
        else:
            self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
            self.n = len(self.centers)

    @property
    def mu_max(self) -> float:
        return float(np.sqrt(self.DR))

    @property
    def mu_min(self) -> float:
        return float(1.0 / np.sqrt(self.DR))

    def chi(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.ones(len(x))
        for c in self.centers:
            dist = np.linalg.norm(x - c, axis=1)
            out *= 1.0 - np.exp(-self.delta * np.maximum(0.0, dist - 0.5 * self.omega))
        return out

    def viscosity(self, x) -> np.ndarray:
        return (self.mu_max - self.mu_min) * (1.0 - self.chi(x)) + self.mu_min

    def rhs(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        f = np.zeros((len(x), 2))
        f[:, 1] = self.beta * (self.chi(x) - 1.0)
        return f


def sinker_chi(cfg: SinkerConfig, x):
    return cfg.chi(x)


def sinker_viscosity(cfg: SinkerConfig, x):
    return cfg.viscosity(x)


def sinker_rhs(cfg: SinkerConfig, x):
    return cfg.rhs(x)


def default_sinker_count(coarse_cells_per_side: int) -> int:
    """24 sinkers once the mesh can resolve them, otherwise 8."""
    return 24 if coarse_cells_per_side >= 32 else 8


def sinker_blocks(mesh: Mesh, k: int, cfg: SinkerConfig, gamma: float = 0.0, W: str = "Mp") -> StokesBlocks:
    V = make_velocity_space(mesh, k)
    Q = make_pressure_space(mesh, k)
    return assemble_stokes(V, Q, cfg.viscosity, cfg.rhs, gamma=gamma, W=W)


def sinker_hierarchy_blocks(coarse_n: int, levels: int, k: int, cfg: SinkerConfig, gamma: float = 0.0,
                            W: str = "Mp") -> list[StokesBlocks]:
    """Rediscretized blocks on ``levels`` nested meshes, coarse to fine."""
    hier = build_hierarchy(build_rect_mesh(nx=coarse_n, ny=coarse_n), levels - 1)
    return [sinker_blocks(m, k, cfg, gamma, W) for m in hier.levels]

"""Geo-dense random geometric graph over a square, plus its cell hierarchy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree


class ConfigError(ValueError):
    pass


# Base of the logarithm in R^2 = 2c log(N) / density.
GEO_DENSE_LOG_BASE = 15.0

# Nodes per m^2 used by the experiments; sets link churn per m/s of speed.
DEFAULT_DENSITY = 6e-3


@dataclass(frozen=True)
class WorldConfig:
    n_nodes: int
    area_side: float
    density: float
    comm_range: float
    geo_dense_c: float = 2.0
    rng_seed: int = 0
    log_base: float = GEO_DENSE_LOG_BASE

    @classmethod
    def geo_dense(cls, n_nodes: int, density: float, c: float = 2.0, rng_seed: int = 0, log_base: float = GEO_DENSE_LOG_BASE) -> "WorldConfig":
        """Size the area from ``density`` and pick R with R^2 = 2c log(N) / density."""
        side = math.sqrt(n_nodes / density)
        r = math.sqrt(2.0 * c * math.log(n_nodes, log_base) / density) if n_nodes > 1 else side
        return cls(n_nodes, side, density, r, c, rng_seed, log_base)

    @property
    def min_range_sq(self) -> float:
        return 2.0 * self.geo_dense_c * math.log(self.n_nodes, self.log_base) / self.density

    def validate(self) -> None:
        if self.n_nodes < 1:
            raise ConfigError("n_nodes must be >= 1")
        for name in ("area_side", "density", "comm_range", "geo_dense_c", "log_base"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if not math.isclose(self.area_side ** 2 * self.density, self.n_nodes, rel_tol=1e-9):
            raise ConfigError("area_side^2 * density must equal n_nodes")
        if self.log_base == 1:
            raise ConfigError("log_base must not be 1")
        need = self.min_range_sq
        if self.comm_range ** 2 < need * (1 - 1e-12):
            raise ConfigError(
                f"geo-dense condition violated: comm_range^2={self.comm_range ** 2:.6g} < 2c log(N)/density={need:.6g}"
            )


@dataclass(frozen=True)
class CellGrid:
    level: int
    cell_side: float
    cols: int
    rows: int

    @property
    def n_cells(self) -> int:
        return self.cols * self.rows


class World:
    """Node positions and velocities with lazily cached disk-graph neighborhoods.

    The neighbor cache is tied to ``version``; anything that moves nodes must go
    through :meth:`set_positions` (or call :meth:`touch`).
    """

    def __init__(self, config: WorldConfig, positions: np.ndarray, velocities: np.ndarray | None = None):
        self.config = config
        self.n = config.n_nodes
        self.side = float(config.area_side)
        self.comm_range = float(config.comm_range)
        self.positions = np.asarray(positions, dtype=float).reshape(self.n, 2).copy()
        self.velocities = np.zeros((self.n, 2)) if velocities is None else np.asarray(velocities, float).copy()
        self.version = 0
        self._tree = None
        self._nbr_cache: dict[int, list[int]] = {}
        self._all_nbrs: list[list[int]] | None = None
        self.base_cell_side = self.comm_range / math.sqrt(2.0)
        self._cols0 = max(1, math.ceil(self.side / self.base_cell_side - 1e-9))
        self.max_level = 0
        while ((self._cols0 - 1) >> self.max_level) > 0:
            self.max_level += 1

    @classmethod
    def from_positions(cls, positions, comm_range: float, area_side: float | None = None) -> "World":
        """Hand-placed topology; the geo-dense condition is not checked."""
        pos = np.asarray(positions, dtype=float).reshape(-1, 2)
        n = len(pos)
        side = float(area_side) if area_side is not None else max(float(pos.max(initial=0.0)), comm_range)
        cfg = WorldConfig(n, side, n / side ** 2, float(comm_range), geo_dense_c=1e-12)
        return cls(cfg, pos)

    def copy(self) -> "World":
        w = World(self.config, self.positions, self.velocities)
        if self.version == 0 and self._all_nbrs is not None:
            w._all_nbrs = self._all_nbrs
        return w

    # -- geometry -----------------------------------------------------------

    def touch(self) -> None:
        self.version += 1
        self._tree = None
        self._nbr_cache = {}
        self._all_nbrs = None

    def set_positions(self, positions: np.ndarray) -> None:
        self.positions = positions
        self.touch()

    def _kdtree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.positions)
        return self._tree

    def neighbors(self, node_id: int) -> list[int]:
        """Ids within distance <= R of ``node_id`` (self excluded), ascending."""
        if not 0 <= node_id < self.n:
            raise KeyError(f"unknown node {node_id}")
        if self._all_nbrs is not None:
            return self._all_nbrs[node_id]
        out = self._nbr_cache.get(node_id)
        if out is None:
            found = self._kdtree().query_ball_point(self.positions[node_id], self.comm_range)
            out = sorted(j for j in found if j != node_id)
            self._nbr_cache[node_id] = out
        return out

    def all_neighbors(self) -> list[list[int]]:
        if self._all_nbrs is None:
            lists = self._kdtree().query_ball_point(self.positions, self.comm_range)
            self._all_nbrs = [sorted(j for j in lst if j != i) for i, lst in enumerate(lists)]
        return self._all_nbrs

    def edges(self) -> np.ndarray:
        return self._kdtree().query_pairs(self.comm_range, output_type="ndarray")

    def mean_degree(self) -> float:
        return 2.0 * len(self.edges()) / self.n

    # -- cells --------------------------------------------------------------

    def grid(self, level: int) -> CellGrid:
        self._check_level(level)
        cols = ((self._cols0 - 1) >> level) + 1
        return CellGrid(level, self.base_cell_side * (1 << level), cols, cols)

    def _check_level(self, level: int) -> None:
        if not 0 <= level <= self.max_level:
            raise IndexError(f"level {level} outside 0..{self.max_level}")

    def cell_of(self, position, level: int) -> int:
        self._check_level(level)
        x, y = position
        c0 = min(int(x / self.base_cell_side), self._cols0 - 1)
        r0 = min(int(y / self.base_cell_side), self._cols0 - 1)
        cols = ((self._cols0 - 1) >> level) + 1
        return (r0 >> level) * cols + (c0 >> level)

    def cells(self, level: int) -> np.ndarray:
        """Cell index of every node at ``level`` (vectorised :meth:`cell_of`)."""
        self._check_level(level)
        cr = np.minimum((self.positions / self.base_cell_side).astype(np.int64), self._cols0 - 1)
        cols = ((self._cols0 - 1) >> level) + 1
        return (cr[:, 1] >> level) * cols + (cr[:, 0] >> level)


def build_world(config: WorldConfig) -> World:
    config.validate()
    rng = np.random.default_rng(config.rng_seed)
    positions = rng.uniform(0.0, config.area_side, size=(config.n_nodes, 2))
    return World(config, positions)


def neighbors(world: World, node_id: int) -> list[int]:
    return world.neighbors(node_id)


def cell_of(world: World, position, level: int) -> int:
    return world.cell_of(position, level)


def is_connected(world: World) -> bool:
    if world.n <= 1:
        return True
    e = world.edges()
    adj = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])) if len(e) else ([], ([], [])), shape=(world.n, world.n))
    k, _ = connected_components(adj, directed=False)
    return k == 1


def component_of(world: World, node_id: int) -> set[int]:
    seen = {node_id}
    stack = [node_id]
    while stack:
        u = stack.pop()
        for v in world.neighbors(u):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen

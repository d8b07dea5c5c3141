"""Block-hash spatial indexing: fixed-depth octree cell grids per block.

Space is partitioned into cubic blocks of edge resolution * 2**depth meters,
keyed by integer lattice coordinates.  Each block holds a dense grid of
2**depth cells per axis in Morton (octree) order; cell centroids are the
query points of the map.  Positions exactly on a boundary belong to the
higher-indexed block/cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING

import numpy as np

from .core import DirichletParams, TrainingPoints, as_training

if TYPE_CHECKING:
    from .config import MapConfig

__all__ = [
    "BlockKey",
    "CellGrid",
    "ExtendedBlock",
    "block_key_of",
    "block_keys_of",
    "cell_index_of",
    "gather_training",
    "morton_decode_table",
    "morton_encode",
]

BlockKey = tuple[int, int, int]


@lru_cache(maxsize=None)
def morton_decode_table(depth: int) -> np.ndarray:
    """(8**depth, 3) lattice coordinates for each Morton cell index.

    Bit j of x/y/z sits at index bit 3j / 3j+1 / 3j+2.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    idx = np.arange(1 << (3 * depth), dtype=np.int64)
    lattice = np.zeros((len(idx), 3), dtype=np.int64)
    for b in range(depth):
        lattice[:, 0] |= ((idx >> (3 * b)) & 1) << b
        lattice[:, 1] |= ((idx >> (3 * b + 1)) & 1) << b
        lattice[:, 2] |= ((idx >> (3 * b + 2)) & 1) << b
    return lattice


@lru_cache(maxsize=None)
def _morton_encode_table(depth: int) -> np.ndarray:
    """Flat lookup from linearized lattice (x*n*n + y*n + z) to Morton index."""
    lattice = morton_decode_table(depth)
    n = 1 << depth
    table = np.empty(n**3, dtype=np.int64)
    table[lattice[:, 0] * n * n + lattice[:, 1] * n + lattice[:, 2]] = np.arange(len(lattice))
    return table


def morton_encode(lattice: np.ndarray, depth: int) -> np.ndarray:
    """Morton cell index for (..., 3) lattice coordinates in [0, 2**depth)."""
    lattice = np.asarray(lattice, dtype=np.int64)
    n = 1 << depth
    if np.any(lattice < 0) or np.any(lattice >= n):
        raise ValueError(f"lattice coordinates outside [0, {n})")
    flat = lattice[..., 0] * n * n + lattice[..., 1] * n + lattice[..., 2]
    return _morton_encode_table(depth)[flat]


def block_keys_of(positions: np.ndarray, config: "MapConfig") -> np.ndarray:
    """(N, 3) integer block keys for (N, 3) positions."""
    positions = np.asarray(positions, dtype=np.float64)
    return np.floor(positions / config.block_size).astype(np.int64)


def block_key_of(position, config: "MapConfig") -> BlockKey:
    """Block key containing a position (boundary goes to the higher block)."""
    key = block_keys_of(np.asarray(position, dtype=np.float64).reshape(1, 3), config)[0]
    return (int(key[0]), int(key[1]), int(key[2]))


class CellGrid:
    """Dense Morton-ordered cell grid for one block.

    Belief state is kept as a base (the prior, or previously loaded alpha
    values) plus accumulated evidence, so alpha reads materialize with a
    single rounding regardless of how updates were batched.
    """

    __slots__ = ("key", "depth", "resolution", "num_classes", "base", "evidence")

    def __init__(self, key: BlockKey, depth: int, resolution: float, num_classes: int,
                 base=0.001, evidence: np.ndarray | None = None):
        self.key = (int(key[0]), int(key[1]), int(key[2]))
        self.depth = depth
        self.resolution = resolution
        self.num_classes = num_classes
        size = 1 << (3 * depth)
        if isinstance(base, np.ndarray):
            if base.shape != (size, num_classes):
                raise ValueError("base array shape mismatch")
            self.base = base
        else:
            self.base = float(base)
        self.evidence = np.zeros((size, num_classes)) if evidence is None else evidence

    @property
    def num_cells(self) -> int:
        return 1 << (3 * self.depth)

    @property
    def block_size(self) -> float:
        return self.resolution * (1 << self.depth)

    @property
    def origin(self) -> np.ndarray:
        return np.array(self.key, dtype=np.float64) * self.block_size

    def alphas(self) -> np.ndarray:
        """(S, K) concentration matrix, one row per cell in Morton order."""
        return self.base + self.evidence

    def centroids(self) -> np.ndarray:
        """(S, 3) cell centroids in Morton order."""
        lattice = morton_decode_table(self.depth)
        return self.origin + (lattice + 0.5) * self.resolution

    def centroid(self, index: int) -> np.ndarray:
        lattice = morton_decode_table(self.depth)[index]
        return self.origin + (lattice + 0.5) * self.resolution

    def cell(self, index: int) -> DirichletParams:
        if isinstance(self.base, np.ndarray):
            base = self.base[index]
        else:
            base = np.full(self.num_classes, self.base)
        return DirichletParams(base, self.evidence[index].copy())


def cell_index_of(position, grid: CellGrid) -> int:
    """Morton index of the cell containing a position inside the grid's block.

    Boundary positions go to the higher-indexed cell; positions outside the
    block are an error.
    """
    position = np.asarray(position, dtype=np.float64).reshape(3)
    key = np.floor(position / grid.block_size).astype(np.int64)
    if tuple(int(k) for k in key) != grid.key:
        raise ValueError(f"position {position} is outside block {grid.key}")
    local = np.floor((position - grid.origin) / grid.resolution).astype(np.int64)
    np.clip(local, 0, (1 << grid.depth) - 1, out=local)
    return int(morton_encode(local, grid.depth))


@dataclass(frozen=True)
class ExtendedBlock:
    """A block key plus its six face-adjacent neighbors."""

    center: BlockKey
    neighbors: tuple[BlockKey, ...]

    @classmethod
    def of(cls, center: BlockKey) -> "ExtendedBlock":
        cx, cy, cz = center
        neighbors = (
            (cx - 1, cy, cz), (cx + 1, cy, cz),
            (cx, cy - 1, cz), (cx, cy + 1, cz),
            (cx, cy, cz - 1), (cx, cy, cz + 1),
        )
        return cls((cx, cy, cz), neighbors)

    @property
    def keys(self) -> tuple[BlockKey, ...]:
        return (self.center,) + self.neighbors


def gather_training(scan_points, target: ExtendedBlock, config: "MapConfig") -> TrainingPoints:
    """Points lying inside the 7-block union of an extended block.

    Corner- and edge-adjacent neighbors are not part of the union; a point
    there is excluded even if it is close to the center block.
    """
    tp = as_training(scan_points)
    if len(tp) == 0:
        return tp
    keys = block_keys_of(tp.positions, config)
    mask = np.zeros(len(tp), dtype=bool)
    for key in target.keys:
        mask |= np.all(keys == np.asarray(key, dtype=np.int64), axis=1)
    return tp.subset(mask)

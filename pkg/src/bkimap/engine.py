"""The semantic map: scan ingestion, per-block parallel updates, queries.

Each update epoch has two phases: training points are bucketed per target
block (for kernel updates, a block's bucket is every point within the kernel
length-scale of the block's box, so the result matches a global all-pairs
update on every cell), then blocks update independently.  A block's update
depends only on its own bucket, processed in a fixed order, so results are
identical for any thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from .config import MODE_BKI, MODE_CSM, MapConfig
from .core import CellState, CellStats, TrainingPoints, batch_cell_stats, cell_stats
from .kernel import accumulate_batch
from .sensor import Scan, expand_scan
from .spatial import BlockKey, CellGrid, cell_index_of, morton_decode_table, morton_encode

__all__ = ["SemanticMap", "ExportBatch"]

_KEY_BITS = 21
_KEY_BIAS = 1 << (_KEY_BITS - 1)
_KEY_LIMIT = 1 << _KEY_BITS


def _pack_keys(keys: np.ndarray) -> np.ndarray:
    """Pack (N, 3) block keys into sortable int64 scalars."""
    shifted = keys + _KEY_BIAS
    if np.any(shifted < 0) or np.any(shifted >= _KEY_LIMIT):
        raise ValueError("position too far from the origin to index")
    return (shifted[:, 0] << (2 * _KEY_BITS)) | (shifted[:, 1] << _KEY_BITS) | shifted[:, 2]


def _unpack_key(packed: int) -> BlockKey:
    mask = _KEY_LIMIT - 1
    return (
        int((packed >> (2 * _KEY_BITS)) & mask) - _KEY_BIAS,
        int((packed >> _KEY_BITS) & mask) - _KEY_BIAS,
        int(packed & mask) - _KEY_BIAS,
    )


@dataclass(frozen=True)
class ExportBatch:
    """Flat arrays over exported cells, ordered by block key then cell index."""

    centroids: np.ndarray  # (M, 3)
    alphas: np.ndarray  # (M, K)
    means: np.ndarray  # (M, K)
    variances: np.ndarray  # (M, K)
    occupied_prob: np.ndarray  # (M,)
    argmax_class: np.ndarray  # (M,)
    states: np.ndarray  # (M,) CellState codes

    def __len__(self) -> int:
        return len(self.centroids)


class SemanticMap:
    """Voxel map of Dirichlet beliefs, updated scan by scan."""

    def __init__(self, config: MapConfig):
        config.validate()
        self.config = config
        self._blocks: dict[BlockKey, CellGrid] = {}
        self.scan_counter = 0
        # reach of the kernel in whole blocks; 1 for every valid bki config
        self._reach = max(1, int(np.ceil(config.kernel.length_scale / config.block_size - 1e-12)))

    @property
    def num_blocks(self) -> int:
        return len(self._blocks)

    @property
    def num_cells(self) -> int:
        return len(self._blocks) * self.config.cells_per_block

    # ------------------------------------------------------------------ ingest

    def insert_scan(self, scan: Scan) -> None:
        """Expand a posed scan and fuse it into the map."""
        training = expand_scan(scan, self.config)
        self.insert_training(training)
        self.scan_counter += 1

    def insert_training(self, training: TrainingPoints) -> None:
        """Fuse already-expanded map-frame training points (no beam model)."""
        if training.num_classes != self.config.num_classes:
            raise ValueError(
                f"training labels have {training.num_classes} classes, map has "
                f"{self.config.num_classes}"
            )
        if len(training) == 0:
            return
        if self.config.mode == MODE_CSM:
            self._insert_csm(training)
        else:
            self._insert_bki(training)

    def _grouped_by_block(self, positions: np.ndarray):
        """Stable grouping of point indices by containing block."""
        keys = np.floor(positions / self.config.block_size).astype(np.int64)
        packed = _pack_keys(keys)
        order = np.argsort(packed, kind="stable")
        unique, starts = np.unique(packed[order], return_index=True)
        bounds = np.append(starts, len(order))
        return keys, order, unique, bounds

    def _block(self, key: BlockKey) -> CellGrid:
        grid = self._blocks.get(key)
        if grid is None:
            grid = CellGrid(key, self.config.block_depth, self.config.resolution,
                            self.config.num_classes, base=self.config.prior)
            self._blocks[key] = grid
        return grid

    def _cell_indices(self, grid: CellGrid, positions: np.ndarray) -> np.ndarray:
        local = np.floor((positions - grid.origin) / self.config.resolution).astype(np.int64)
        np.clip(local, 0, self.config.cells_per_side - 1, out=local)
        return morton_encode(local, self.config.block_depth)

    def _insert_csm(self, training: TrainingPoints) -> None:
        k = self.config.num_classes
        cells_per_block = self.config.cells_per_block
        _, order, unique, bounds = self._grouped_by_block(training.positions)

        tasks = []
        for g, packed in enumerate(unique):
            grid = self._block(_unpack_key(int(packed)))
            idx = order[bounds[g] : bounds[g + 1]]

            def task(grid=grid, idx=idx):
                cells = self._cell_indices(grid, training.positions[idx])
                counts = np.bincount(cells * k + training.class_ids[idx],
                                     minlength=cells_per_block * k)
                grid.evidence += counts.reshape(cells_per_block, k).astype(np.float64)

            tasks.append(task)
        self._run_tasks(tasks)

    def _insert_bki(self, training: TrainingPoints) -> None:
        cfg = self.config
        block_size = cfg.block_size
        l = cfg.kernel.length_scale
        keys, order, unique, bounds = self._grouped_by_block(training.positions)
        positions = training.positions
        local = positions - keys * block_size

        # face-proximity condition per axis and block offset, evaluated lazily
        conds: dict[tuple[int, int], np.ndarray] = {}

        def cond(axis: int, off: int) -> np.ndarray | None:
            if off == 0:
                return None
            c = conds.get((axis, off))
            if c is None:
                if off > 0:
                    c = local[:, axis] >= off * block_size - l
                else:
                    c = local[:, axis] < (off + 1) * block_size + l
                conds[(axis, off)] = c
            return c

        r = self._reach
        span = range(-r, r + 1)
        offsets = [
            (ox, oy, oz)
            for ox in span for oy in span for oz in span
            if np.hypot(np.hypot(max(abs(ox) - 1, 0), max(abs(oy) - 1, 0)),
                        max(abs(oz) - 1, 0)) * block_size < l or (ox, oy, oz) == (0, 0, 0)
        ]
        offset_packed = [
            (np.int64(ox) << (2 * _KEY_BITS)) + (np.int64(oy) << _KEY_BITS) + np.int64(oz)
            for ox, oy, oz in offsets
        ]

        # phase 1: bucket point indices per target block
        buckets: dict[int, list[np.ndarray]] = {}
        for g, packed in enumerate(unique):
            idx = order[bounds[g] : bounds[g + 1]]
            for (ox, oy, oz), delta in zip(offsets, offset_packed):
                mask = None
                for axis, off in ((0, ox), (1, oy), (2, oz)):
                    c = cond(axis, off)
                    if c is None:
                        continue
                    part = c[idx]
                    mask = part if mask is None else (mask & part)
                sel = idx if mask is None else idx[mask]
                if len(sel):
                    buckets.setdefault(int(packed + delta), []).append(sel)

        # phase 2: blocks update independently
        tasks = []
        for packed in sorted(buckets):
            grid = self._block(_unpack_key(packed))
            idx = np.concatenate(buckets[packed])

            def task(grid=grid, idx=idx):
                center = grid.origin + 0.5 * block_size
                accumulate_batch(
                    grid.centroids(),
                    positions[idx],
                    training.class_ids[idx],
                    cfg.num_classes,
                    cfg.kernel,
                    out=grid.evidence,
                    center=center,
                )

            tasks.append(task)
        self._run_tasks(tasks)

    def _run_tasks(self, tasks: list[Callable[[], None]]) -> None:
        if self.config.thread_count == 1 or len(tasks) <= 1:
            for task in tasks:
                task()
            return
        with ThreadPoolExecutor(max_workers=self.config.thread_count) as pool:
            for done in pool.map(lambda f: f(), tasks):
                pass

    # ------------------------------------------------------------------ query

    def query_point(self, position) -> CellStats | None:
        """Cell statistics at a position, or None for unobserved space."""
        position = np.asarray(position, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(position)):
            raise ValueError("position must be finite")
        key = tuple(np.floor(position / self.config.block_size).astype(np.int64))
        grid = self._blocks.get(key)
        if grid is None:
            return None
        return cell_stats(grid.cell(cell_index_of(position, grid)), self.config)

    def sorted_keys(self) -> list[BlockKey]:
        return sorted(self._blocks)

    def block(self, key: BlockKey) -> CellGrid | None:
        return self._blocks.get(key)

    def block_items(self) -> Iterator[tuple[BlockKey, CellGrid]]:
        """Blocks in deterministic key order."""
        for key in self.sorted_keys():
            yield key, self._blocks[key]

    def export_arrays(self, state_filter: str = "all") -> ExportBatch:
        """Batch statistics over stored cells, ordered by block then cell.

        state_filter: 'all', 'occupied', or 'free'.
        """
        if state_filter not in ("all", "occupied", "free"):
            raise ValueError(f"unknown filter {state_filter!r}")
        centroids, alphas = [], []
        for _, grid in self.block_items():
            centroids.append(grid.centroids())
            alphas.append(grid.alphas())
        k = self.config.num_classes
        if not centroids:
            empty = np.empty((0, k))
            return ExportBatch(np.empty((0, 3)), empty, empty, empty,
                               np.empty(0), np.empty(0, dtype=np.int64),
                               np.empty(0, dtype=np.int8))
        centroids = np.concatenate(centroids)
        alphas = np.concatenate(alphas)
        means, variances, occupied, argmax, states = batch_cell_stats(alphas, self.config)
        if state_filter == "occupied":
            mask = states == int(CellState.OCCUPIED)
        elif state_filter == "free":
            mask = states == int(CellState.FREE)
        else:
            mask = slice(None)
        return ExportBatch(centroids[mask], alphas[mask], means[mask], variances[mask],
                           occupied[mask], argmax[mask], states[mask])

    def export_cells(self, state_filter: str = "all") -> Iterator[tuple[np.ndarray, CellStats]]:
        """Yield (centroid, CellStats) per cell in deterministic order."""
        batch = self.export_arrays(state_filter)
        k = self.config.num_classes
        defined = np.all(batch.alphas > 1.0, axis=1)
        for i in range(len(batch)):
            mode = None
            if defined[i]:
                mode = (batch.alphas[i] - 1.0) / (batch.alphas[i].sum() - k)
            yield batch.centroids[i], CellStats(
                mean=batch.means[i],
                variance=batch.variances[i],
                mode=mode,
                argmax_class=int(batch.argmax_class[i]),
                occupied_prob=float(batch.occupied_prob[i]),
                state=CellState(int(batch.states[i])),
            )

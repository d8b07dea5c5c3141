"""Map configuration: resolution, class count, priors, kernel, thresholds."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

from .kernel import KernelConfig

__all__ = ["ConfigError", "MapConfig", "MODE_CSM", "MODE_BKI"]

MODE_CSM = "csm"
MODE_BKI = "bki"

# default octree depth per update mode: counting updates stay cell-local so a
# shallow block suffices; kernel updates want block_size > length_scale
_DEFAULT_DEPTH = {MODE_CSM: 1, MODE_BKI: 3}


class ConfigError(ValueError):
    pass


@dataclass
class MapConfig:
    """Everything a map needs to discretize space and fuse measurements.

    Defaults: resolution 0.1 m, free/occupied thresholds 0.47/0.6, Dirichlet
    prior 0.001 per class, kernel length-scale 0.3 m with scale 0.1.
    """

    num_classes: int
    resolution: float = 0.1
    block_depth: int | None = None  # None resolves per mode: bki -> 3, csm -> 1
    prior: float = 0.001
    kernel: KernelConfig = field(default_factory=KernelConfig)
    mode: str = MODE_BKI
    free_thresh: float = 0.47
    occ_thresh: float = 0.6
    spacing: float | None = None  # free-point spacing along beams; None -> resolution
    min_range: float = 0.5
    max_range: float = 30.0
    ds_resolution: float | None = None  # voxel downsampling of scan hits; None -> off
    evidence_threshold: float = 0.1
    variance_threshold: float | None = None  # argmax-class variance filter; None -> off
    thread_count: int = 0  # 0 -> all available cores

    def __post_init__(self):
        if self.block_depth is None:
            self.block_depth = _DEFAULT_DEPTH.get(self.mode, 3)
        if self.spacing is None:
            self.spacing = self.resolution
        if self.thread_count < 1:
            self.thread_count = os.cpu_count() or 1

    @property
    def block_size(self) -> float:
        """Block edge length: resolution * 2**block_depth meters."""
        return self.resolution * (1 << self.block_depth)

    @property
    def cells_per_side(self) -> int:
        return 1 << self.block_depth

    @property
    def cells_per_block(self) -> int:
        return 1 << (3 * self.block_depth)

    def validate(self) -> "MapConfig":
        if self.mode not in (MODE_CSM, MODE_BKI):
            raise ConfigError(f"mode must be '{MODE_CSM}' or '{MODE_BKI}', got {self.mode!r}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2 (free space plus one occupied class)")
        if not self.resolution > 0:
            raise ConfigError("resolution must be > 0")
        if self.block_depth < 0:
            raise ConfigError("block_depth must be >= 0")
        if not self.prior > 0:
            raise ConfigError("prior must be > 0")
        if not 0 < self.free_thresh < self.occ_thresh < 1:
            raise ConfigError(
                f"thresholds must satisfy 0 < free < occupied < 1, got "
                f"{self.free_thresh}/{self.occ_thresh}"
            )
        if not self.spacing > 0:
            raise ConfigError("spacing must be > 0")
        if not 0 <= self.min_range < self.max_range:
            raise ConfigError("need 0 <= min_range < max_range")
        if self.ds_resolution is not None and not self.ds_resolution > 0:
            raise ConfigError("ds_resolution must be > 0 when set")
        if self.evidence_threshold < 0:
            raise ConfigError("evidence_threshold must be >= 0")
        if self.variance_threshold is not None and self.variance_threshold < 0:
            raise ConfigError("variance_threshold must be >= 0 when set")
        if self.thread_count < 1:
            raise ConfigError("thread_count must be >= 1")
        if self.mode == MODE_BKI and self.kernel.length_scale > self.block_size:
            raise ConfigError(
                f"kernel length-scale {self.kernel.length_scale} exceeds block size "
                f"{self.block_size:g}; increase block_depth so kernel support stays "
                f"within the neighbor blocks"
            )
        return self

    def copy(self, **changes) -> "MapConfig":
        return replace(self, **changes)

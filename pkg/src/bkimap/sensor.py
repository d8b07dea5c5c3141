"""Scan expansion: posed, labeled hits into map-frame training points.

A scan is a sensor pose plus labeled endpoints in the sensor frame.  Expansion
transforms endpoints into the map frame, emits one labeled point per kept hit,
and interpolates free-space points along each beam between the origin and the
endpoint (endpoint excluded).  Hits beyond the maximum range are truncated and
contribute free points only; hits labeled free (class 0) act as free-ray
markers and contribute free evidence at their endpoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .core import FREE_CLASS, TrainingPoints, one_hot

if TYPE_CHECKING:
    from .config import MapConfig

__all__ = ["Pose", "Scan", "to_one_hot", "sample_free_points", "expand_scan", "downsample_hits"]


@dataclass(frozen=True)
class Pose:
    """Rigid transform: unit quaternion (x, y, z, w) applied, then translation."""

    translation: np.ndarray  # (3,)
    rotation: np.ndarray  # (4,) quaternion, unit norm

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(4))
        norm = np.linalg.norm(self.rotation)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {norm} is not 1 within 1e-9")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([0.0, 0.0, 0.0, 1.0]))

    @classmethod
    def from_yaw(cls, translation, yaw: float) -> "Pose":
        return cls(np.asarray(translation, dtype=np.float64),
                   np.array([0.0, 0.0, np.sin(yaw / 2.0), np.cos(yaw / 2.0)]))

    def rotation_matrix(self) -> np.ndarray:
        x, y, z, w = self.rotation
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (N, 3) or (3,) sensor-frame points into the map frame."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation_matrix().T + self.translation


@dataclass(frozen=True)
class Scan:
    """Sensor pose plus labeled beam endpoints in the sensor frame.

    Labels are either an (N,) integer class-id array or an (N, K) matrix of
    soft scores per endpoint (rows summing to 1).
    """

    origin: Pose
    positions: np.ndarray  # (N, 3) sensor frame
    labels: np.ndarray  # (N,) int class ids, or (N, K) soft vectors

    def __post_init__(self):
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=np.float64).reshape(-1, 3))
        labels = np.asarray(self.labels)
        if labels.ndim not in (1, 2) or len(labels) != len(self.positions):
            raise ValueError("labels must be (N,) ids or (N, K) soft vectors")
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.positions)


def to_one_hot(label, num_classes: int) -> np.ndarray:
    """Harden a label to a one-hot vector.

    Integer ids map to the matching unit vector.  Soft score vectors map to
    the unit vector of their argmax (lowest index wins ties); they must be
    finite and sum to 1 within 1e-6.
    """
    if np.ndim(label) == 0:
        return one_hot(int(label), num_classes)
    vec = np.asarray(label, dtype=np.float64)
    if len(vec) != num_classes:
        raise ValueError(f"soft label has {len(vec)} entries, expected {num_classes}")
    if not np.all(np.isfinite(vec)):
        raise ValueError("soft label contains non-finite values")
    if abs(vec.sum() - 1.0) > 1e-6:
        raise ValueError(f"soft label sums to {vec.sum()}, expected 1")
    return one_hot(int(np.argmax(vec)), num_classes)


def _harden_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Vectorized to_one_hot, returning class ids."""
    labels = np.asarray(labels)
    if labels.ndim == 1:
        ids = labels.astype(np.int64)
        if len(ids) and (ids.min() < 0 or ids.max() >= num_classes):
            raise ValueError(f"label id outside [0, {num_classes})")
        return ids
    if labels.shape[1] != num_classes:
        raise ValueError(f"soft labels have {labels.shape[1]} columns, expected {num_classes}")
    soft = labels.astype(np.float64)
    if not np.all(np.isfinite(soft)):
        raise ValueError("soft labels contain non-finite values")
    sums = soft.sum(axis=1)
    bad = np.abs(sums - 1.0) > 1e-6
    if np.any(bad):
        row = int(np.argmax(bad))
        raise ValueError(f"soft label row {row} sums to {sums[row]}, expected 1")
    return soft.argmax(axis=1).astype(np.int64)


def sample_free_points(origin, endpoint, spacing: float, num_classes: int = 2) -> TrainingPoints:
    """Free-labeled points along a beam at fixed spacing, endpoint excluded.

    Points sit at origin + t (endpoint - origin) for t = spacing/L, 2
    spacing/L, ... strictly before the endpoint (L the beam length).  A beam
    shorter than the spacing, or of zero length, yields no points.
    """
    if not spacing > 0:
        raise ValueError("spacing must be > 0")
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    endpoint = np.asarray(endpoint, dtype=np.float64).reshape(3)
    length = float(np.linalg.norm(endpoint - origin))
    n = int(np.floor((length - 1e-9) / spacing))
    if n <= 0:
        return TrainingPoints.empty(num_classes)
    t = np.arange(1, n + 1, dtype=np.float64) * (spacing / length)
    positions = origin + t[:, None] * (endpoint - origin)
    return TrainingPoints(positions, np.full(n, FREE_CLASS, dtype=np.int64), num_classes)


def downsample_hits(positions: np.ndarray, class_ids: np.ndarray, voxel: float,
                    num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Voxel-grid downsampling of hits at the given voxel size.

    Keeps the point nearest each occupied voxel's center; the voxel label is
    the majority class (lowest index wins ties).
    """
    if len(positions) == 0:
        return positions, class_ids
    cells = np.floor(positions / voxel).astype(np.int64)
    uniq, inverse = np.unique(cells, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    n_groups = len(uniq)
    centers = (cells + 0.5) * voxel
    dist = np.linalg.norm(positions - centers, axis=1)
    # majority label per voxel
    votes = np.zeros((n_groups, num_classes), dtype=np.int64)
    np.add.at(votes, (inverse, class_ids), 1)
    labels = votes.argmax(axis=1).astype(np.int64)
    # representative point: nearest to the voxel center, earliest on ties
    order = np.lexsort((np.arange(len(positions)), dist, inverse))
    first_pos = np.unique(inverse[order], return_index=True)[1]
    keep = np.sort(order[first_pos])
    # majority label follows the voxel, not the representative point
    return positions[keep], labels[inverse[keep]]


def expand_scan(scan: Scan, config: "MapConfig") -> TrainingPoints:
    """Turn a posed scan into map-frame training points.

    Emits the labeled endpoint of every hit within [min_range, max_range],
    then free points along each kept beam at the configured spacing.  Hits
    beyond max_range are truncated to max_range and contribute free points
    only; hits closer than min_range are dropped entirely.  When
    ds_resolution is set, hits are voxel-downsampled before expansion (free
    points are interpolated afterwards and never downsampled).
    """
    k = config.num_classes
    if len(scan) == 0:
        return TrainingPoints.empty(k)
    class_ids = _harden_labels(scan.labels, k)
    positions = scan.positions
    if config.ds_resolution is not None:
        positions, class_ids = downsample_hits(positions, class_ids, config.ds_resolution, k)

    ranges = np.linalg.norm(positions, axis=1)
    kept = ranges >= config.min_range
    positions, class_ids, ranges = positions[kept], class_ids[kept], ranges[kept]
    if len(positions) == 0:
        return TrainingPoints.empty(k)
    truncated = ranges > config.max_range

    origin = scan.origin.translation
    endpoints = scan.origin.apply(positions)
    beams = endpoints - origin
    scale = np.where(truncated, config.max_range / ranges, 1.0)
    effective_end = origin + beams * scale[:, None]
    effective_len = np.minimum(ranges, config.max_range)

    occupied = TrainingPoints(endpoints[~truncated], class_ids[~truncated], k)

    n_free = np.floor((effective_len - 1e-9) / config.spacing).astype(np.int64)
    n_free = np.maximum(n_free, 0)
    total = int(n_free.sum())
    if total == 0:
        return occupied
    beam_idx = np.repeat(np.arange(len(positions)), n_free)
    offsets = np.concatenate([[0], np.cumsum(n_free)[:-1]])
    step = np.arange(total, dtype=np.float64) - np.repeat(offsets, n_free) + 1.0
    t = step * config.spacing / effective_len[beam_idx]
    free_positions = origin + t[:, None] * (effective_end - origin)[beam_idx]
    free = TrainingPoints(free_positions, np.full(total, FREE_CLASS, dtype=np.int64), k)
    return TrainingPoints.concat([occupied, free])

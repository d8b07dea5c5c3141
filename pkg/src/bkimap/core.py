"""Dirichlet cell beliefs over semantic classes and their closed-form statistics.

Every map cell carries a concentration vector alpha over K classes
(pseudo-counts).  Class 0 is reserved for free space; classes 1..K-1 are
semantic occupied classes.  Updates only ever add evidence, so alpha entries
never decrease.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Iterator, TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .config import MapConfig

FREE_CLASS = 0  # fixed convention: class id 0 means free space

__all__ = [
    "FREE_CLASS",
    "CellState",
    "CellStats",
    "DirichletParams",
    "LabeledPoint",
    "TrainingPoints",
    "as_training",
    "batch_means",
    "batch_variances",
    "cell_stats",
    "csm_update",
    "one_hot",
    "posterior_mean",
    "posterior_mode",
    "posterior_variance",
]


def one_hot(class_id: int, num_classes: int) -> np.ndarray:
    """Unit basis vector for a class id."""
    if not 0 <= class_id < num_classes:
        raise ValueError(f"class id {class_id} outside [0, {num_classes})")
    y = np.zeros(num_classes, dtype=np.float64)
    y[class_id] = 1.0
    return y


@dataclass(frozen=True)
class LabeledPoint:
    """A 3D position in the map frame with a one-hot class measurement."""

    position: np.ndarray  # (3,) meters
    label: np.ndarray  # (K,) one-hot

    @property
    def class_id(self) -> int:
        return int(np.argmax(self.label))

    @property
    def num_classes(self) -> int:
        return len(self.label)


class TrainingPoints:
    """Column-oriented batch of labeled points.

    Positions are (N, 3) float64 in the map frame; labels are stored as
    integer class ids because measurements are one-hot.
    """

    __slots__ = ("positions", "class_ids", "num_classes")

    def __init__(self, positions, class_ids, num_classes: int):
        positions = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
        class_ids = np.ascontiguousarray(class_ids, dtype=np.int64).reshape(-1)
        if len(positions) != len(class_ids):
            raise ValueError("positions and class_ids length mismatch")
        if num_classes < 2:
            raise ValueError("need at least 2 classes (free + one occupied)")
        if len(class_ids) and (class_ids.min() < 0 or class_ids.max() >= num_classes):
            raise ValueError(f"class id outside [0, {num_classes})")
        self.positions = positions
        self.class_ids = class_ids
        self.num_classes = num_classes

    @classmethod
    def empty(cls, num_classes: int) -> "TrainingPoints":
        return cls(np.empty((0, 3)), np.empty(0, dtype=np.int64), num_classes)

    @classmethod
    def from_points(cls, points: Iterable[LabeledPoint], num_classes: int | None = None) -> "TrainingPoints":
        points = list(points)
        if not points:
            if num_classes is None:
                raise ValueError("cannot infer class count from an empty collection")
            return cls.empty(num_classes)
        k = num_classes if num_classes is not None else points[0].num_classes
        for p in points:
            if p.num_classes != k:
                raise ValueError("inconsistent label dimensions")
        pos = np.stack([np.asarray(p.position, dtype=np.float64) for p in points])
        ids = np.array([p.class_id for p in points], dtype=np.int64)
        return cls(pos, ids, k)

    @classmethod
    def concat(cls, batches: Iterable["TrainingPoints"]) -> "TrainingPoints":
        batches = list(batches)
        if not batches:
            raise ValueError("nothing to concatenate")
        k = batches[0].num_classes
        if any(b.num_classes != k for b in batches):
            raise ValueError("inconsistent class counts")
        return cls(
            np.concatenate([b.positions for b in batches]),
            np.concatenate([b.class_ids for b in batches]),
            k,
        )

    def one_hot_labels(self) -> np.ndarray:
        """Labels as an (N, K) one-hot matrix."""
        return np.eye(self.num_classes, dtype=np.float64)[self.class_ids]

    def subset(self, index) -> "TrainingPoints":
        return TrainingPoints(self.positions[index], self.class_ids[index], self.num_classes)

    def __len__(self) -> int:
        return len(self.class_ids)

    def __getitem__(self, i: int) -> LabeledPoint:
        return LabeledPoint(self.positions[i].copy(), one_hot(int(self.class_ids[i]), self.num_classes))

    def __iter__(self) -> Iterator[LabeledPoint]:
        for i in range(len(self)):
            yield self[i]


def as_training(points, num_classes: int | None = None) -> TrainingPoints:
    """Normalize a point collection to a TrainingPoints batch."""
    if isinstance(points, TrainingPoints):
        if num_classes is not None and points.num_classes != num_classes:
            raise ValueError(f"label dimension {points.num_classes} does not match K={num_classes}")
        return points
    return TrainingPoints.from_points(points, num_classes)


class DirichletParams:
    """Concentration vector alpha of a cell's Dirichlet belief.

    Stored as a base part plus accumulated evidence, so that splitting an
    update into batches cannot change the result: integer-count evidence is
    exact, and alpha is materialized with a single rounding.
    """

    __slots__ = ("base", "evidence")

    def __init__(self, alpha, evidence=None):
        base = np.asarray(alpha, dtype=np.float64)
        if base.ndim != 1 or len(base) < 2:
            raise ValueError("alpha must be a vector of at least 2 entries")
        self.base = base
        if evidence is None:
            evidence = np.zeros_like(base)
        else:
            evidence = np.asarray(evidence, dtype=np.float64)
            if evidence.shape != base.shape:
                raise ValueError("evidence shape must match alpha")
        self.evidence = evidence
        if not np.all(self.alpha > 0):
            raise ValueError("all concentration entries must be positive")

    @property
    def alpha(self) -> np.ndarray:
        return self.base + self.evidence

    @property
    def num_classes(self) -> int:
        return len(self.base)

    def __repr__(self) -> str:
        return f"DirichletParams({self.alpha!r})"


def _as_params(cell) -> DirichletParams:
    if isinstance(cell, DirichletParams):
        return cell
    return DirichletParams(cell)


def csm_update(cell, points) -> DirichletParams:
    """Counting update: add one pseudo-count per point to its class entry.

    alpha_k becomes alpha_k + sum_i y_i^k.  Commutative and associative over
    points, and independent of how the point set is split into batches.
    """
    cell = _as_params(cell)
    tp = as_training(points, cell.num_classes)
    counts = np.bincount(tp.class_ids, minlength=cell.num_classes).astype(np.float64)
    return DirichletParams(cell.base, cell.evidence + counts)


def posterior_mean(cell) -> np.ndarray:
    """Expected class probabilities: alpha_k / sum(alpha)."""
    alpha = _as_params(cell).alpha
    return alpha / alpha.sum()


def posterior_variance(cell) -> np.ndarray:
    """Per-class variance: m_k (1 - m_k) / (sum(alpha) + 1), with m the mean."""
    alpha = _as_params(cell).alpha
    m = alpha / alpha.sum()
    return m * (1.0 - m) / (alpha.sum() + 1.0)


def posterior_mode(cell) -> np.ndarray | None:
    """Mode (alpha_k - 1) / (sum(alpha) - K); None unless every alpha_k > 1."""
    alpha = _as_params(cell).alpha
    if not np.all(alpha > 1.0):
        return None
    return (alpha - 1.0) / (alpha.sum() - len(alpha))


def batch_means(alphas: np.ndarray) -> np.ndarray:
    """posterior_mean over rows of an (N, K) alpha matrix."""
    alphas = np.asarray(alphas, dtype=np.float64)
    return alphas / alphas.sum(axis=-1, keepdims=True)


def batch_variances(alphas: np.ndarray) -> np.ndarray:
    """posterior_variance over rows of an (N, K) alpha matrix."""
    alphas = np.asarray(alphas, dtype=np.float64)
    totals = alphas.sum(axis=-1, keepdims=True)
    m = alphas / totals
    return m * (1.0 - m) / (totals + 1.0)


class CellState(IntEnum):
    FREE = 0
    OCCUPIED = 1
    UNKNOWN = 2


@dataclass(frozen=True)
class CellStats:
    """Closed-form summary of one cell's belief."""

    mean: np.ndarray  # (K,) sums to 1
    variance: np.ndarray  # (K,) each in [0, 0.25]
    mode: np.ndarray | None  # defined only when all alpha_k > 1
    argmax_class: int
    occupied_prob: float
    state: CellState


def batch_cell_stats(alphas: np.ndarray, config: "MapConfig"):
    """Vectorized cell statistics for an (N, K) alpha matrix.

    Returns (means, variances, occupied_prob, argmax, states) where states
    holds CellState integer codes.  A cell is UNKNOWN when its accumulated
    evidence is below the configured threshold, when the variance filter is
    enabled and the argmax-class variance exceeds it, or when the occupancy
    probability falls between the free and occupied thresholds.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    means = batch_means(alphas)
    variances = batch_variances(alphas)
    occupied = means[:, 1:].sum(axis=1)
    argmax = means.argmax(axis=1)
    total_evidence = alphas.sum(axis=1) - config.num_classes * config.prior

    states = np.full(len(alphas), int(CellState.UNKNOWN), dtype=np.int8)
    decided = total_evidence >= config.evidence_threshold
    if config.variance_threshold is not None:
        var_of_argmax = variances[np.arange(len(alphas)), argmax]
        decided &= var_of_argmax <= config.variance_threshold
    states[decided & (occupied < config.free_thresh)] = int(CellState.FREE)
    states[decided & (occupied > config.occ_thresh)] = int(CellState.OCCUPIED)
    return means, variances, occupied, argmax, states


def cell_stats(cell, config: "MapConfig") -> CellStats:
    """Full closed-form statistics of a single cell under a map config."""
    cell = _as_params(cell)
    means, variances, occupied, argmax, states = batch_cell_stats(cell.alpha[None, :], config)
    return CellStats(
        mean=means[0],
        variance=variances[0],
        mode=posterior_mode(cell),
        argmax_class=int(argmax[0]),
        occupied_prob=float(occupied[0]),
        state=CellState(int(states[0])),
    )

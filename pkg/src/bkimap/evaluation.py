"""Map quality metrics: per-class IoU over occupied ground truth, and
occupancy AUC over every ground-truth cell the map has touched.

Cells the map failed to decide (unknown or never observed) count against the
ground-truth class as misses; excluding them would hide exactly the gaps a
continuous map is supposed to fill.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CellState, batch_cell_stats
from .engine import SemanticMap
from .spatial import morton_encode
from .worldgen import GroundTruthGrid

__all__ = ["EvalResult", "evaluate_map", "iou", "occupancy_auc"]


def iou(cm: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-class IoU = diag / (row + col - diag), and the mean over classes
    present in the ground truth (nonzero row).

    Rows are ground truth, columns are predictions.  Degenerate 0/0 entries
    report 0; with no present class the mean is NaN.
    """
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError("confusion matrix must be square")
    if np.any(cm < 0):
        raise ValueError("confusion matrix entries must be non-negative")
    diag = np.diag(cm).astype(np.float64)
    rows = cm.sum(axis=1).astype(np.float64)
    cols = cm.sum(axis=0).astype(np.float64)
    denom = rows + cols - diag
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(denom > 0, diag / np.where(denom > 0, denom, 1.0), 0.0)
    present = rows > 0
    mean = float(per_class[present].mean()) if np.any(present) else float("nan")
    return per_class, mean


def occupancy_auc(scores, occupied) -> float:
    """Area under the ROC curve from occupancy scores.

    Rank statistic: the probability that a random occupied cell outscores a
    random free cell, ties counted half.  Needs at least one of each.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    occupied = np.asarray(occupied, dtype=bool).reshape(-1)
    if len(scores) != len(occupied):
        raise ValueError("scores and labels length mismatch")
    n_pos = int(occupied.sum())
    n_neg = len(occupied) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one occupied and one free cell")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    ranks[order] = np.arange(1, len(scores) + 1)
    # average ranks within tied groups
    sorted_scores = scores[order]
    boundaries = np.flatnonzero(np.diff(sorted_scores) != 0) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(scores)]])
    for s, e in zip(starts, ends):
        if e - s > 1:
            ranks[order[s:e]] = 0.5 * (s + 1 + e)
    rank_sum = ranks[occupied].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass(frozen=True)
class EvalResult:
    confusion: np.ndarray  # (K, K) rows = ground truth, cols = prediction
    iou_per_class: np.ndarray  # (K,)
    mean_iou: float  # over classes present in the ground truth
    auc: float
    n_occupied_cells: int
    n_missed: int  # occupied ground-truth cells left unknown or unobserved
    n_scored: int  # cells entering the AUC


def evaluate_map(semantic_map: SemanticMap, gt: GroundTruthGrid) -> EvalResult:
    """Compare a map against a dense ground-truth grid of cell labels.

    For every occupied ground-truth cell, the prediction is the argmax class
    of the map cell when its state is occupied; unknown, free, or unobserved
    cells count as misses (folded into the free column).  The AUC scores
    occupancy probability against ground-truth occupancy over every cell
    whose block exists in the map.
    """
    cfg = semantic_map.config
    if abs(cfg.resolution - gt.resolution) > 1e-12:
        raise ValueError(
            f"resolution mismatch: map {cfg.resolution} vs ground truth {gt.resolution}"
        )
    k = cfg.num_classes
    lattice = gt.cell_lattice()
    labels = gt.flat_labels()
    centroids = (lattice + 0.5) * cfg.resolution

    # group ground-truth cells by the block containing their centroid
    block_keys = np.floor(centroids / cfg.block_size).astype(np.int64)
    packed = (
        (block_keys[:, 0] + (1 << 20)) * (1 << 42)
        + (block_keys[:, 1] + (1 << 20)) * (1 << 21)
        + (block_keys[:, 2] + (1 << 20))
    )
    order = np.argsort(packed, kind="stable")
    unique, starts = np.unique(packed[order], return_index=True)
    bounds = np.append(starts, len(order))

    pred = np.full(len(labels), -1, dtype=np.int64)  # -1: unobserved
    occ_prob = np.full(len(labels), np.nan)
    for g in range(len(unique)):
        idx = order[bounds[g] : bounds[g + 1]]
        key = tuple(int(v) for v in block_keys[idx[0]])
        grid = semantic_map.block(key)
        if grid is None:
            continue
        local = lattice[idx] - np.asarray(key, dtype=np.int64) * cfg.cells_per_side
        cells = morton_encode(local, cfg.block_depth)
        _, _, occupied, argmax, states = batch_cell_stats(grid.alphas()[cells], cfg)
        occ_prob[idx] = occupied
        cell_pred = np.where(states == int(CellState.OCCUPIED), argmax, 0)
        pred[idx] = cell_pred

    gt_occupied = labels >= 1
    cm = np.zeros((k, k), dtype=np.int64)
    eval_mask = gt_occupied
    pred_eval = np.where(pred[eval_mask] >= 0, pred[eval_mask], 0)
    np.add.at(cm, (labels[eval_mask], pred_eval), 1)
    n_missed = int(np.sum(pred_eval == 0))

    scored = ~np.isnan(occ_prob)
    if scored.sum() == 0 or len(np.unique(gt_occupied[scored])) < 2:
        auc = float("nan")
    else:
        auc = occupancy_auc(occ_prob[scored], gt_occupied[scored])

    per_class, mean = iou(cm)
    return EvalResult(
        confusion=cm,
        iou_per_class=per_class,
        mean_iou=mean,
        auc=auc,
        n_occupied_cells=int(gt_occupied.sum()),
        n_missed=n_missed,
        n_scored=int(scored.sum()),
    )

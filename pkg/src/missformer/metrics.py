"""Segmentation loss and evaluation metrics (Dice overlap, Hausdorff distance).

The loss is an equal-weight sum of pixel cross-entropy and soft-Dice over the
foreground classes. Hard-mask metrics operate on integer label grids;
Hausdorff compares boundary pixel sets at a percentile (95 by default, 100 is
the classical maximum).
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

DICE_SMOOTH = 1e-5


def seg_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """0.5 * cross-entropy + 0.5 * (1 - mean soft-Dice over foreground classes)."""
    b, k, h, w = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (b, h, w):
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ShapeError(f"labels out of range [0, {k}): min={labels.min()}, max={labels.max()}")

    one_hot = np.zeros((b, k, h, w), dtype=logits.data.dtype)
    np.put_along_axis(one_hot, labels[:, None], 1.0, axis=1)
    one_hot_t = Tensor(one_hot)

    ls = T.log_softmax(logits, axis=1)
    ce = T.mul(T.sum_(T.mul(ls, one_hot_t)), -1.0 / (b * h * w))

    probs = T.softmax(logits, axis=1)
    dice_total = None
    for c in range(1, k):
        p = T.narrow(probs, 1, c, 1)
        g = Tensor(one_hot[:, c : c + 1])
        inter = T.sum_(T.mul(p, g))
        denom = T.sum_(p) + T.sum_(g)
        dice = T.div(T.mul(inter, 2.0) + DICE_SMOOTH, denom + DICE_SMOOTH)
        dice_total = dice if dice_total is None else dice_total + dice
    dice_mean = T.mul(dice_total, 1.0 / (k - 1))
    return T.mul(ce, 0.5) + T.mul(T.mul(dice_mean, -1.0) + 1.0, 0.5)


def _check_masks(pred: np.ndarray, gt: np.ndarray):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ShapeError(f"mask shapes differ or are not 2-D: {pred.shape} vs {gt.shape}")
    return pred, gt


def dice_score(pred: np.ndarray, gt: np.ndarray, k: int) -> float:
    """2|P & G| / (|P| + |G|) for class ``k``; both empty counts as 1.0."""
    pred, gt = _check_masks(pred, gt)
    p = pred == k
    g = gt == k
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / total


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """(M, 2) coordinates of class pixels with a 4-neighbor outside the class
    (image border counts as outside)."""
    m = np.asarray(mask, dtype=bool)
    inner = np.pad(m, 1, constant_values=False)
    neighbors = (
        inner[:-2, 1:-1] & inner[2:, 1:-1] & inner[1:-1, :-2] & inner[1:-1, 2:]
    )
    return np.argwhere(m & ~neighbors)


def _directed_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """For each point of ``src``, Euclidean distance to the nearest ``dst``."""
    diff = src[:, None, :] - dst[None, :, :]
    sq = (diff * diff).sum(axis=2)
    return np.sqrt(sq.min(axis=1).astype(np.float64))


def hausdorff(pred: np.ndarray, gt: np.ndarray, k: int, percentile: float = 95.0) -> float:
    """Symmetric percentile of boundary-to-boundary distances, in pixels.

    percentile=100 is the classical maximum. Conventions: class absent from
    both masks -> 0; absent from exactly one -> the image diagonal (the worst
    achievable pixel distance).
    """
    pred, gt = _check_masks(pred, gt)
    if not 0 < percentile <= 100:
        raise ShapeError(f"percentile must be in (0, 100], got {percentile}")
    bp = boundary_pixels(pred == k)
    bg = boundary_pixels(gt == k)
    if len(bp) == 0 and len(bg) == 0:
        return 0.0
    if len(bp) == 0 or len(bg) == 0:
        h, w = pred.shape
        return float(math.hypot(h - 1, w - 1))
    fwd = np.percentile(_directed_distances(bp, bg), percentile)
    bwd = np.percentile(_directed_distances(bg, bp), percentile)
    return float(max(fwd, bwd))


@dataclass
class MetricRow:
    epoch: int
    split: str
    class_id: str  # "1".."K-1" or "mean"
    dsc: float
    hd95: float
    hd100: float


CSV_HEADER = ("epoch", "split", "class", "dsc", "hd95", "hd100")


def evaluate_masks(pred_masks, gt_masks, num_classes: int) -> dict:
    """Per-class and mean DSC/HD95/HD100 over paired mask lists.

    Per-sample metrics are averaged with ``math.fsum`` so the result does not
    depend on sample order. Background (class 0) is excluded.
    """
    per_class = {}
    for k in range(1, num_classes):
        dscs, hd95s, hd100s = [], [], []
        for p, g in zip(pred_masks, gt_masks):
            dscs.append(dice_score(p, g, k))
            hd95s.append(hausdorff(p, g, k, 95.0))
            hd100s.append(hausdorff(p, g, k, 100.0))
        n = len(dscs)
        per_class[k] = (
            math.fsum(dscs) / n,
            math.fsum(hd95s) / n,
            math.fsum(hd100s) / n,
        )
    nk = num_classes - 1
    mean = tuple(math.fsum(per_class[k][i] for k in per_class) / nk for i in range(3))
    return {"per_class": per_class, "mean": mean}


def metric_rows(result: dict, epoch: int, split: str) -> list[MetricRow]:
    rows = [
        MetricRow(epoch, split, str(k), *vals) for k, vals in sorted(result["per_class"].items())
    ]
    rows.append(MetricRow(epoch, split, "mean", *result["mean"]))
    return rows


def append_metrics_csv(path: str, rows: list[MetricRow]) -> None:
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(CSV_HEADER)
        for r in rows:
            writer.writerow(
                (r.epoch, r.split, r.class_id, repr(r.dsc), repr(r.hd95), repr(r.hd100))
            )

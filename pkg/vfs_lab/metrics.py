"""
Segmentation and tracking metrics.

Masks are boolean H x W arrays; boxes are (x, y, w, h) rows with (x, y) the
top-left corner in pixels.
"""

from typing import Dict, Sequence

import numpy as np
from scipy import ndimage
from skimage.morphology import disk
from skimage.segmentation import find_boundaries

from .errors import ContractError

SUCCESS_THRESHOLDS = np.round(np.arange(0.0, 1.0001, 0.05), 2)


def _masks(a: np.ndarray, b: np.ndarray):
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ContractError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def iou(mask_a: np.ndarray, mask_b: np.ndarray) -> float:
    """|A & B| / |A | B|; two empty masks score 1."""
    a, b = _masks(mask_a, mask_b)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def _boundary(mask: np.ndarray) -> np.ndarray:
    return find_boundaries(mask, mode="inner") & mask


def boundary_f(mask_a: np.ndarray, mask_b: np.ndarray, tol: int = 1) -> float:
    """F-measure of boundary pixels matched within `tol` pixels (disk dilation)."""
    a, b = _masks(mask_a, mask_b)
    ba, bb = _boundary(a), _boundary(b)
    if not ba.any() and not bb.any():
        return 1.0
    if not ba.any() or not bb.any():
        return 0.0
    footprint = disk(max(0, int(tol)))
    near_a = ndimage.binary_dilation(ba, structure=footprint) if tol > 0 else ba
    near_b = ndimage.binary_dilation(bb, structure=footprint) if tol > 0 else bb
    precision = (ba & near_b).sum() / ba.sum()
    recall = (bb & near_a).sum() / bb.sum()
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def _boxes(boxes, gt):
    boxes, gt = np.asarray(boxes, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if boxes.shape != gt.shape or boxes.ndim != 2 or boxes.shape[1] != 4:
        raise ContractError(f"box lists must be congruent N x 4 arrays, got {boxes.shape} and {gt.shape}")
    return boxes, gt


def center_error(boxes: Sequence, gt: Sequence) -> np.ndarray:
    """Euclidean distance between box centres per frame."""
    boxes, gt = _boxes(boxes, gt)
    centers = boxes[:, :2] + boxes[:, 2:] / 2.0
    gt_centers = gt[:, :2] + gt[:, 2:] / 2.0
    return np.linalg.norm(centers - gt_centers, axis=1)


def box_iou(boxes: Sequence, gt: Sequence) -> np.ndarray:
    boxes, gt = _boxes(boxes, gt)
    x1 = np.maximum(boxes[:, 0], gt[:, 0])
    y1 = np.maximum(boxes[:, 1], gt[:, 1])
    x2 = np.minimum(boxes[:, 0] + boxes[:, 2], gt[:, 0] + gt[:, 2])
    y2 = np.minimum(boxes[:, 1] + boxes[:, 3], gt[:, 1] + gt[:, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    union = boxes[:, 2] * boxes[:, 3] + gt[:, 2] * gt[:, 3] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def precision_at(boxes: Sequence, gt: Sequence, threshold: float = 20.0) -> float:
    """Fraction of frames whose centre error is strictly below `threshold`."""
    errors = center_error(boxes, gt)
    if errors.size == 0:
        return 0.0
    return float(np.mean(errors < threshold))


def success_auc(boxes: Sequence, gt: Sequence) -> float:
    """Mean over IoU thresholds 0, 0.05, ..., 1 of the fraction of frames with IoU > threshold."""
    overlaps = box_iou(boxes, gt)
    if overlaps.size == 0:
        return 0.0
    return float(np.mean([np.mean(overlaps > t) for t in SUCCESS_THRESHOLDS]))


def segmentation_scores(pred_masks: np.ndarray, gt_masks: np.ndarray, num_objects: int,
                        tol: int = 1, skip_first: bool = True) -> Dict[str, float]:
    """Region (J) and boundary (F) scores averaged over objects and frames.

    Args:
        pred_masks: (T, H, W) integer label maps
        gt_masks: (T, H, W) integer label maps
        num_objects: Objects are labels 1..num_objects
        tol: Boundary tolerance in pixels
        skip_first: Exclude frame 0, whose labels are given

    Returns:
        Dict with "J", "F" and "J&F"
    """
    pred_masks, gt_masks = np.asarray(pred_masks), np.asarray(gt_masks)
    if pred_masks.shape != gt_masks.shape:
        raise ContractError(f"mask stacks differ: {pred_masks.shape} vs {gt_masks.shape}")
    frames = range(1 if skip_first and len(gt_masks) > 1 else 0, len(gt_masks))
    j_scores, f_scores = [], []
    for obj in range(1, num_objects + 1):
        j_scores.append(np.mean([iou(pred_masks[t] == obj, gt_masks[t] == obj) for t in frames]))
        f_scores.append(np.mean([boundary_f(pred_masks[t] == obj, gt_masks[t] == obj, tol) for t in frames]))
    j = float(np.mean(j_scores)) if j_scores else 1.0
    f = float(np.mean(f_scores)) if f_scores else 1.0
    return {"J": j, "F": f, "J&F": (j + f) / 2.0}

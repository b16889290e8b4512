"""Pure numpy/python implementations of the matching and AP kernels.

Used when the compiled extension is unavailable or disabled via
COTRAINBOX_PURE=1. Semantics here are the contract; the compiled module
mirrors them exactly (including tie-breaking on equal IoU).
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"

OUTCOME_FP = 0
OUTCOME_TP = 1
OUTCOME_IGNORED = 2


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise intersection-over-union of two (n, 4) / (m, 4) box arrays."""
    boxes_a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    boxes_b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    if boxes_a.shape[0] == 0 or boxes_b.shape[0] == 0:
        return np.zeros((boxes_a.shape[0], boxes_b.shape[0]), dtype=np.float64)
    ix1 = np.maximum(boxes_a[:, None, 0], boxes_b[None, :, 0])
    iy1 = np.maximum(boxes_a[:, None, 1], boxes_b[None, :, 1])
    ix2 = np.minimum(boxes_a[:, None, 2], boxes_b[None, :, 2])
    iy2 = np.minimum(boxes_a[:, None, 3], boxes_b[None, :, 3])
    inter = np.clip(ix2 - ix1, 0.0, None) * np.clip(iy2 - iy1, 0.0, None)
    area_a = (boxes_a[:, 2] - boxes_a[:, 0]) * (boxes_a[:, 3] - boxes_a[:, 1])
    area_b = (boxes_b[:, 2] - boxes_b[:, 0]) * (boxes_b[:, 3] - boxes_b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)


def greedy_match(
    det_boxes: np.ndarray,
    gt_boxes: np.ndarray,
    gt_ignored: np.ndarray,
    iou_thr: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Greedily match detections (already in confidence order) to ground truth.

    Each detection claims the unmatched evaluated GT of maximal IoU >= iou_thr
    (ties broken by lowest GT index) and becomes a TP; failing that, if any
    ignored GT overlaps with IoU >= iou_thr the detection is ignored; else FP.
    Ignored GT are never consumed.

    Returns (det_outcomes, det_match, gt_matched): outcome code per detection,
    matched GT index per detection (-1 if none), and a matched flag per GT.
    """
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    gt_ignored = np.asarray(gt_ignored, dtype=np.uint8).reshape(-1)
    n_det, n_gt = det_boxes.shape[0], gt_boxes.shape[0]
    outcomes = np.zeros(n_det, dtype=np.int8)
    det_match = np.full(n_det, -1, dtype=np.int64)
    gt_matched = np.zeros(n_gt, dtype=np.uint8)
    if n_det == 0:
        return outcomes, det_match, gt_matched
    ious = iou_matrix(det_boxes, gt_boxes) if n_gt else np.zeros((n_det, 0))
    for i in range(n_det):
        best_j = -1
        best_iou = -1.0
        hit_ignored = False
        for j in range(n_gt):
            v = ious[i, j]
            if v < iou_thr:
                continue
            if gt_ignored[j]:
                hit_ignored = True
            elif not gt_matched[j] and v > best_iou:
                best_j = j
                best_iou = v
        if best_j >= 0:
            outcomes[i] = OUTCOME_TP
            det_match[i] = best_j
            gt_matched[best_j] = 1
        elif hit_ignored:
            outcomes[i] = OUTCOME_IGNORED
    return outcomes, det_match, gt_matched


def interpolated_ap(flags: np.ndarray, num_gt: int, recall_points: int = 11) -> float:
    """Interpolated average precision over evenly spaced recall levels.

    `flags` holds 1 for TP and 0 for FP, in confidence order, with ignored
    detections already removed. With no evaluated ground truth the value is
    0.0 when spurious detections exist and 1.0 when there are none.
    """
    flags = np.asarray(flags, dtype=np.uint8).reshape(-1)
    if recall_points < 2:
        raise ValueError("recall_points must be >= 2")
    if num_gt < 0:
        raise ValueError("num_gt must be >= 0")
    if num_gt == 0:
        return 0.0 if flags.shape[0] else 1.0
    tp_cum = np.cumsum(flags, dtype=np.float64)
    ranks = np.arange(1, flags.shape[0] + 1, dtype=np.float64)
    recalls = tp_cum / num_gt
    precisions = tp_cum / ranks
    total = 0.0
    for j in range(recall_points):
        level = j / (recall_points - 1)
        mask = recalls >= level
        total += float(precisions[mask].max()) if mask.any() else 0.0
    return total / recall_points

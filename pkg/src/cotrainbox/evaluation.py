"""KITTI-style detection evaluation: greedy matching, interpolated AP, audits.

Protocol summary. Ground truth below the minimum pixel height is ignored
rather than evaluated: detections overlapping only ignored boxes count
neither as true nor as false positives. Detections are processed in
descending confidence order; each claims the unmatched evaluated ground
truth of maximal IoU at or above the category threshold (ties to the lowest
index). Average precision interpolates precision at evenly spaced recall
levels (11 by default). Reported AP and mAP are percentages on the 0-100
scale; `average_precision` itself stays in [0, 1].

Tie handling is part of the protocol: within an image, equal-confidence
detections keep their input order; pooled across images they order by
(confidence desc, image id asc, per-image position asc).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from . import _kernels
from .errors import DataError
from .types import BoundingBox, DetectionRecord, LabelRecord, PseudoLabelSet

GTRecord = Union[LabelRecord, DetectionRecord]

DEFAULT_IOU_THRESHOLDS: Mapping[str, float] = {"vehicle": 0.7, "pedestrian": 0.5}


@dataclass(frozen=True)
class EvalProtocol:
    """Evaluation settings: per-category IoU thresholds, the minimum pixel
    height under which ground truth is ignored, and the recall grid size."""

    iou_thresholds: Mapping[str, float]
    min_height: float = 25.0
    recall_points: int = 11
    default_iou: float = 0.5

    def __post_init__(self) -> None:
        if self.recall_points < 2:
            raise DataError("recall_points must be >= 2")
        if self.min_height < 0:
            raise DataError("min_height must be >= 0")

    def iou_for(self, category: str) -> float:
        return self.iou_thresholds.get(category, self.default_iou)


def default_protocol(min_height: float = 25.0, recall_points: int = 11) -> EvalProtocol:
    return EvalProtocol(
        iou_thresholds=dict(DEFAULT_IOU_THRESHOLDS),
        min_height=min_height,
        recall_points=recall_points,
    )


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes."""
    m = _kernels.iou_matrix(
        np.array([a.as_list()], dtype=np.float64),
        np.array([b.as_list()], dtype=np.float64),
    )
    return float(m[0, 0])


def filter_difficulty(
    gt: Sequence[GTRecord], min_height: float
) -> tuple[list[GTRecord], list[GTRecord]]:
    """Partition ground truth into (evaluated, ignored) by box height.

    Boxes with height >= min_height are evaluated; shorter ones are ignored
    and only serve as don't-care regions during matching.
    """
    evaluated = [g for g in gt if g.box.height >= min_height]
    ignored = [g for g in gt if g.box.height < min_height]
    return evaluated, ignored


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching one image's detections of one category.

    det_outcomes / det_matched_gt are aligned with the input detection order;
    `order` lists input indices in the processing (confidence) order.
    gt_matched is aligned with the evaluated ground-truth list.
    """

    det_outcomes: tuple[str, ...]
    det_matched_gt: tuple[int, ...]
    gt_matched: tuple[bool, ...]
    order: tuple[int, ...]


_OUTCOME_NAMES = {
    _kernels.OUTCOME_FP: "FP",
    _kernels.OUTCOME_TP: "TP",
    _kernels.OUTCOME_IGNORED: "ignored",
}


def _boxes_array(records: Iterable[GTRecord]) -> np.ndarray:
    rows = [r.box.as_list() for r in records]
    if not rows:
        return np.zeros((0, 4), dtype=np.float64)
    return np.asarray(rows, dtype=np.float64)


def match_detections(
    dets: Sequence[DetectionRecord],
    gt_evaluated: Sequence[GTRecord],
    gt_ignored: Sequence[GTRecord],
    iou_thr: float,
) -> MatchResult:
    """Greedily match one image's detections of a single category.

    Detections are processed by descending confidence (equal confidences in
    input order). A detection claims the unmatched evaluated GT of maximal
    IoU >= iou_thr as a TP; failing that, overlap with any ignored GT at
    IoU >= iou_thr makes it ignored; otherwise it is an FP.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    det_arr = _boxes_array([dets[i] for i in order])
    n_eval = len(gt_evaluated)
    gt_arr = np.concatenate([_boxes_array(gt_evaluated), _boxes_array(gt_ignored)], axis=0)
    ignored_mask = np.zeros(gt_arr.shape[0], dtype=np.uint8)
    ignored_mask[n_eval:] = 1
    outcomes_sorted, match_sorted, gt_matched = _kernels.greedy_match(
        det_arr, gt_arr, ignored_mask, iou_thr
    )
    det_outcomes = [""] * len(dets)
    det_matched_gt = [-1] * len(dets)
    for pos, input_idx in enumerate(order):
        det_outcomes[input_idx] = _OUTCOME_NAMES[int(outcomes_sorted[pos])]
        det_matched_gt[input_idx] = int(match_sorted[pos])
    return MatchResult(
        det_outcomes=tuple(det_outcomes),
        det_matched_gt=tuple(det_matched_gt),
        gt_matched=tuple(bool(v) for v in gt_matched[:n_eval]),
        order=tuple(order),
    )


def average_precision(
    tp_flags: Sequence[int], num_gt: int, recall_points: int = 11
) -> float:
    """Interpolated AP in [0, 1] from confidence-ordered TP/FP flags.

    Ignored detections must already be removed from `tp_flags`. With zero
    evaluated ground truth the result is 0.0 if any flags remain (all are
    spurious) and 1.0 if none do.
    """
    flags = np.asarray(list(tp_flags), dtype=np.uint8)
    return float(_kernels.interpolated_ap(flags, num_gt, recall_points))


def mean_ap(ap_by_category: Mapping[str, float]) -> float:
    """Unweighted mean over categories; input and output share one scale."""
    if not ap_by_category:
        raise DataError("mean_ap requires at least one category")
    return sum(ap_by_category.values()) / len(ap_by_category)


@dataclass(frozen=True)
class CategoryReport:
    ap: float  # percentage, 0-100
    num_gt: int  # evaluated ground-truth boxes
    num_gt_ignored: int
    tp: int
    fp: int
    fn: int
    num_dets: int
    num_dets_ignored: int


@dataclass(frozen=True)
class EvalReport:
    mean_ap: float  # percentage, 0-100
    per_category: dict[str, CategoryReport]
    min_height: float
    recall_points: int

    def to_obj(self) -> dict:
        return {
            "mean_ap": self.mean_ap,
            "min_height": self.min_height,
            "recall_points": self.recall_points,
            "per_category": {
                cat: {
                    "ap": rep.ap,
                    "num_gt": rep.num_gt,
                    "num_gt_ignored": rep.num_gt_ignored,
                    "tp": rep.tp,
                    "fp": rep.fp,
                    "fn": rep.fn,
                    "num_dets": rep.num_dets,
                    "num_dets_ignored": rep.num_dets_ignored,
                }
                for cat, rep in sorted(self.per_category.items())
            },
        }


def evaluate(
    dets_by_image: Mapping[str, Sequence[DetectionRecord]],
    gt_by_image: Mapping[str, Sequence[GTRecord]],
    protocol: EvalProtocol | None = None,
) -> EvalReport:
    """Evaluate detections against ground truth over a set of images.

    Categories are the union of those in the detections and the ground
    truth; each is matched per image at its IoU threshold, pooled across
    images in confidence order, and scored with interpolated AP. The mean
    is unweighted over categories; with no category present at all the
    report is vacuously perfect (mean AP 100).
    """
    if protocol is None:
        protocol = default_protocol()
    image_ids = sorted(set(dets_by_image) | set(gt_by_image))
    categories = sorted(
        {d.category for dets in dets_by_image.values() for d in dets}
        | {g.category for gts in gt_by_image.values() for g in gts}
    )
    per_category: dict[str, CategoryReport] = {}
    for category in categories:
        thr = protocol.iou_for(category)
        pooled: list[tuple[float, str, int, int]] = []  # (-conf, image, pos, flag)
        num_gt = 0
        num_gt_ignored = 0
        tp = fp = n_dets = n_ignored = 0
        for image_id in image_ids:
            gts = [g for g in gt_by_image.get(image_id, ()) if g.category == category]
            dets = [d for d in dets_by_image.get(image_id, ()) if d.category == category]
            evaluated, ignored = filter_difficulty(gts, protocol.min_height)
            num_gt += len(evaluated)
            num_gt_ignored += len(ignored)
            n_dets += len(dets)
            result = match_detections(dets, evaluated, ignored, thr)
            for pos, input_idx in enumerate(result.order):
                outcome = result.det_outcomes[input_idx]
                if outcome == "ignored":
                    n_ignored += 1
                    continue
                flag = 1 if outcome == "TP" else 0
                tp += flag
                fp += 1 - flag
                pooled.append((-dets[input_idx].confidence, image_id, pos, flag))
        pooled.sort()
        flags = [entry[3] for entry in pooled]
        ap = average_precision(flags, num_gt, protocol.recall_points)
        per_category[category] = CategoryReport(
            ap=ap * 100.0,
            num_gt=num_gt,
            num_gt_ignored=num_gt_ignored,
            tp=tp,
            fp=fp,
            fn=num_gt - tp,
            num_dets=n_dets,
            num_dets_ignored=n_ignored,
        )
    if per_category:
        overall = mean_ap({cat: rep.ap for cat, rep in per_category.items()})
    else:
        overall = 100.0
    return EvalReport(
        mean_ap=overall,
        per_category=per_category,
        min_height=protocol.min_height,
        recall_points=protocol.recall_points,
    )


def resize_boxes_per_category(
    dets: Sequence[DetectionRecord], factors: Mapping[str, float]
) -> tuple[DetectionRecord, ...]:
    """Scale every box about its center by its category's factor.

    Every category present must have a factor; a missing one raises rather
    than silently passing boxes through unscaled.
    """
    out = []
    for det in dets:
        if det.category not in factors:
            raise DataError(f"no resize factor for category {det.category!r}")
        f = factors[det.category]
        if f <= 0:
            raise DataError(f"resize factor for {det.category!r} must be > 0")
        cx = (det.box.x1 + det.box.x2) / 2.0
        cy = (det.box.y1 + det.box.y2) / 2.0
        hw = det.box.width * f / 2.0
        hh = det.box.height * f / 2.0
        out.append(
            DetectionRecord(
                BoundingBox(cx - hw, cy - hh, cx + hw, cy + hh),
                det.category,
                det.confidence,
            )
        )
    return tuple(out)


DetsByImage = Mapping[str, Sequence[DetectionRecord]]


def _as_entries(value: PseudoLabelSet | DetsByImage) -> Mapping[str, Sequence[DetectionRecord]]:
    if isinstance(value, PseudoLabelSet):
        return value.entries
    return value


def stop_metric_map(
    old: PseudoLabelSet | DetsByImage,
    new: PseudoLabelSet | DetsByImage,
    iou_thresholds: Mapping[str, float] | None = None,
    recall_points: int = 11,
) -> float:
    """Agreement between consecutive self-label snapshots, as mAP on 0-100.

    The older snapshot plays ground truth (confidences ignored), the newer
    one plays detections. No difficulty filtering applies. Two snapshots
    with no boxes at all agree perfectly, by definition 100.0.
    """
    old_entries = _as_entries(old)
    new_entries = _as_entries(new)
    protocol = EvalProtocol(
        iou_thresholds=dict(iou_thresholds or DEFAULT_IOU_THRESHOLDS),
        min_height=0.0,
        recall_points=recall_points,
    )
    report = evaluate(new_entries, old_entries, protocol)
    return report.mean_ap


@dataclass(frozen=True)
class AuditReport:
    """Pseudo-label audit against held-back ground truth.

    `corrected` holds three cleaned variants of the audited set: "fp" with
    unmatched boxes removed, "bb" with matched boxes snapped to their
    ground-truth geometry, and "fp_bb" with both applied.
    """

    num_pseudo_boxes: int
    num_false_positive: int
    fp_percent: float
    corrected: dict[str, PseudoLabelSet]

    def to_obj(self) -> dict:
        return {
            "num_pseudo_boxes": self.num_pseudo_boxes,
            "num_false_positive": self.num_false_positive,
            "fp_percent": self.fp_percent,
        }


def audit_pseudo_labels(
    pseudo: PseudoLabelSet,
    gt_by_image: Mapping[str, Sequence[GTRecord]],
    labeled_pool_size: int,
    iou_thresholds: Mapping[str, float] | None = None,
) -> AuditReport:
    """Match pseudo boxes to ground truth and derive corrected variants.

    All ground truth is evaluated (no difficulty filtering here; the truth
    is the truth). The FP rate is num_false_positive over the total box
    budget labeled_pool_size + num_pseudo_boxes, as a percentage.
    """
    thresholds = dict(iou_thresholds or DEFAULT_IOU_THRESHOLDS)
    if labeled_pool_size < 0:
        raise DataError("labeled_pool_size must be >= 0")
    keep_fp: dict[str, tuple[DetectionRecord, ...]] = {}
    keep_bb: dict[str, tuple[DetectionRecord, ...]] = {}
    keep_fp_bb: dict[str, tuple[DetectionRecord, ...]] = {}
    num_boxes = 0
    num_fp = 0
    for image_id in pseudo.image_ids():
        if image_id not in gt_by_image:
            raise DataError(f"audit: no ground truth for image {image_id!r}")
        dets = list(pseudo.entries[image_id])
        num_boxes += len(dets)
        categories = sorted({d.category for d in dets})
        fixed: dict[int, DetectionRecord] = {}
        is_fp = [False] * len(dets)
        for category in categories:
            idxs = [i for i, d in enumerate(dets) if d.category == category]
            gts = [g for g in gt_by_image[image_id] if g.category == category]
            thr = thresholds.get(category, 0.5)
            result = match_detections([dets[i] for i in idxs], gts, [], thr)
            for local_idx, det_idx in enumerate(idxs):
                if result.det_outcomes[local_idx] == "TP":
                    gt_box = gts[result.det_matched_gt[local_idx]].box
                    fixed[det_idx] = DetectionRecord(
                        gt_box, dets[det_idx].category, dets[det_idx].confidence
                    )
                else:
                    is_fp[det_idx] = True
                    num_fp += 1
        keep_fp[image_id] = tuple(d for i, d in enumerate(dets) if not is_fp[i])
        keep_bb[image_id] = tuple(fixed.get(i, d) for i, d in enumerate(dets))
        keep_fp_bb[image_id] = tuple(fixed[i] for i in range(len(dets)) if i in fixed)
    denominator = labeled_pool_size + num_boxes
    fp_percent = 0.0 if denominator == 0 else num_fp / denominator * 100.0
    corrected = {
        "fp": PseudoLabelSet(pseudo.view, pseudo.cycle, keep_fp),
        "bb": PseudoLabelSet(pseudo.view, pseudo.cycle, keep_bb),
        "fp_bb": PseudoLabelSet(pseudo.view, pseudo.cycle, keep_fp_bb),
    }
    return AuditReport(
        num_pseudo_boxes=num_boxes,
        num_false_positive=num_fp,
        fp_percent=fp_percent,
        corrected=corrected,
    )

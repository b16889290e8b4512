"""Core record types: boxes, detections, labels, view transforms, pseudo-label sets.

Boxes are continuous ``[x1, y1, x2, y2]`` in pixel units with ``x1 < x2``
and ``y1 < y2`` strictly. There is no +1 pixel convention anywhere; box
height is plain ``y2 - y1``. All confidences live in ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import DataError

LABEL_SOURCES = ("human", "virtual", "pseudo")
TRANSFORM_KINDS = ("identity", "horizontal_mirror")


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        # normalize to float so serialized coordinates look the same no
        # matter how the box was constructed
        for name in ("x1", "y1", "x2", "y2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DataError(
                f"degenerate box [{self.x1}, {self.y1}, {self.x2}, {self.y2}]: "
                "requires x1 < x2 and y1 < y2"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


def box_from_obj(obj: object, where: str = "bbox") -> BoundingBox:
    """Build a BoundingBox from a decoded JSON value, naming `where` on failure."""
    if (
        not isinstance(obj, (list, tuple))
        or len(obj) != 4
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj)
    ):
        raise DataError(f"{where}: expected [x1, y1, x2, y2] numbers, got {obj!r}")
    try:
        return BoundingBox(float(obj[0]), float(obj[1]), float(obj[2]), float(obj[3]))
    except DataError as exc:
        raise DataError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class DetectionRecord:
    box: BoundingBox
    category: str
    confidence: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "confidence", float(self.confidence))
        if not self.category:
            raise DataError("detection with empty category")
        if not 0.0 <= self.confidence <= 1.0:
            raise DataError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class LabelRecord:
    box: BoundingBox
    category: str
    source: str
    cycle: int | None = None  # producing cycle, pseudo labels only

    def __post_init__(self) -> None:
        if self.source not in LABEL_SOURCES:
            raise DataError(f"unknown label source {self.source!r}")
        if self.source == "pseudo":
            if self.cycle is None or self.cycle < 0:
                raise DataError("pseudo label requires a producing cycle >= 0")
        elif self.cycle is not None:
            raise DataError(f"{self.source} label must not carry a cycle")


@dataclass(frozen=True)
class ViewTransform:
    """Geometric relation of view 2 to view 1. Applying twice is the identity."""

    kind: str
    image_width: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in TRANSFORM_KINDS:
            raise DataError(f"unknown transform kind {self.kind!r}")
        if self.kind == "horizontal_mirror":
            if self.image_width is None or self.image_width <= 0:
                raise DataError("horizontal_mirror transform requires a positive image_width")

    def to_obj(self) -> dict:
        obj: dict = {"kind": self.kind}
        if self.image_width is not None:
            obj["image_width"] = self.image_width
        return obj

    @staticmethod
    def from_obj(obj: object, where: str = "view2_transform") -> "ViewTransform":
        if not isinstance(obj, dict) or "kind" not in obj:
            raise DataError(f"{where}: expected an object with a 'kind' field")
        kind = obj["kind"]
        width = obj.get("image_width")
        if not isinstance(kind, str):
            raise DataError(f"{where}.kind: expected a string")
        if width is not None and (not isinstance(width, (int, float)) or isinstance(width, bool)):
            raise DataError(f"{where}.image_width: expected a number")
        try:
            return ViewTransform(kind, None if width is None else float(width))
        except DataError as exc:
            raise DataError(f"{where}: {exc}") from None


def transform_box(box: BoundingBox, transform: ViewTransform) -> BoundingBox:
    """Map a box between view frames. The mirror maps x to image_width - x."""
    if transform.kind == "identity":
        return box
    w = transform.image_width
    assert w is not None
    return BoundingBox(w - box.x2, box.y1, w - box.x1, box.y2)


def image_confidence(detections: Iterable[DetectionRecord]) -> float:
    """Arithmetic mean of detection confidences; 0.0 for an empty list."""
    confs = [d.confidence for d in detections]
    if not confs:
        return 0.0
    return sum(confs) / len(confs)


def apply_confidence_thresholds(
    detections: Sequence[DetectionRecord], thresholds: Mapping[str, float]
) -> tuple[DetectionRecord, ...]:
    """Keep detections with confidence >= the per-category threshold.

    Every category present in `detections` must have a threshold; a missing
    entry raises DataError rather than silently passing everything through.
    """
    for det in detections:
        if det.category not in thresholds:
            raise DataError(f"no confidence threshold for category {det.category!r}")
    return tuple(d for d in detections if d.confidence >= thresholds[d.category])


@dataclass(frozen=True)
class PseudoLabelSet:
    """Self-labeled detections for a set of images, in one view's frame.

    `view` is the view frame of the box coordinates; for fresh detection
    snapshots it is also the view of the model that produced them. `cycle`
    is the co-training cycle the set was assembled in (0 for the initial
    detection pass).
    """

    view: int
    cycle: int
    entries: dict[str, tuple[DetectionRecord, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.view not in (1, 2):
            raise DataError(f"view must be 1 or 2, got {self.view}")
        if self.cycle < 0:
            raise DataError(f"cycle must be >= 0, got {self.cycle}")

    @property
    def num_images(self) -> int:
        return len(self.entries)

    @property
    def num_boxes(self) -> int:
        return sum(len(dets) for dets in self.entries.values())

    def image_ids(self) -> list[str]:
        return sorted(self.entries)

    def to_obj(self) -> dict:
        return {
            "view": self.view,
            "cycle": self.cycle,
            "entries": {
                image_id: [
                    {
                        "category": d.category,
                        "bbox": d.box.as_list(),
                        "confidence": d.confidence,
                    }
                    for d in dets
                ]
                for image_id, dets in sorted(self.entries.items())
            },
        }

    @staticmethod
    def from_obj(obj: object, where: str = "pseudo label set") -> "PseudoLabelSet":
        if not isinstance(obj, dict):
            raise DataError(f"{where}: expected an object")
        for key in ("view", "cycle", "entries"):
            if key not in obj:
                raise DataError(f"{where}: missing field {key!r}")
        if not isinstance(obj["entries"], dict):
            raise DataError(f"{where}.entries: expected an object")
        entries: dict[str, tuple[DetectionRecord, ...]] = {}
        for image_id, raw_dets in obj["entries"].items():
            if not isinstance(raw_dets, list):
                raise DataError(f"{where}.entries[{image_id!r}]: expected a list")
            dets = []
            for i, raw in enumerate(raw_dets):
                here = f"{where}.entries[{image_id!r}][{i}]"
                if not isinstance(raw, dict):
                    raise DataError(f"{here}: expected an object")
                for field_name in ("category", "bbox", "confidence"):
                    if field_name not in raw:
                        raise DataError(f"{here}.{field_name}: missing")
                if not isinstance(raw["category"], str):
                    raise DataError(f"{here}.category: expected a string")
                conf = raw["confidence"]
                if not isinstance(conf, (int, float)) or isinstance(conf, bool):
                    raise DataError(f"{here}.confidence: expected a number")
                box = box_from_obj(raw["bbox"], where=f"{here}.bbox")
                try:
                    dets.append(DetectionRecord(box, raw["category"], float(conf)))
                except DataError as exc:
                    raise DataError(f"{here}: {exc}") from None
            entries[str(image_id)] = tuple(dets)
        try:
            return PseudoLabelSet(int(obj["view"]), int(obj["cycle"]), entries)
        except (DataError, TypeError, ValueError) as exc:
            raise DataError(f"{where}: {exc}") from None


def transform_detections(
    dets: Sequence[DetectionRecord], transform: ViewTransform
) -> tuple[DetectionRecord, ...]:
    return tuple(
        DetectionRecord(transform_box(d.box, transform), d.category, d.confidence) for d in dets
    )

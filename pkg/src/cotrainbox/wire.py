"""Worker wire protocol: request/response JSON schemas and codecs.

Three payloads cross the process boundary, all carrying ``"version": 1``:

* train request: view plus images with labels and a per-image
  negative-mining flag,
* detect request: view, per-category confidence thresholds, images,
* detections response: mapping image id -> detection list.

Decoding tolerates unknown fields (forward compatibility) and reports
schema violations with the path of the offending field, e.g.
``results["img_003"][2].confidence``. The engine never trusts a response:
thresholds are re-applied and unknown image ids rejected by the caller.
"""

from __future__ import annotations

from typing import Mapping, Sequence

from .errors import DataError
from .types import BoundingBox, DetectionRecord, LabelRecord, box_from_obj

WIRE_VERSION = 1


def _check_version(obj: object, where: str) -> dict:
    if not isinstance(obj, dict):
        raise DataError(f"{where}: expected a JSON object")
    if "version" not in obj:
        raise DataError(f"{where}.version: missing")
    if obj["version"] != WIRE_VERSION:
        raise DataError(
            f"{where}.version: unsupported version {obj['version']!r}, expected {WIRE_VERSION}"
        )
    return obj


def _require(obj: dict, key: str, where: str) -> object:
    if key not in obj:
        raise DataError(f"{where}.{key}: missing")
    return obj[key]


def _check_view(value: object, where: str) -> int:
    if value not in (1, 2):
        raise DataError(f"{where}: expected view 1 or 2, got {value!r}")
    return int(value)  # type: ignore[arg-type]


def encode_train_request(
    view: int,
    images: Sequence[tuple[str, str, Sequence[LabelRecord], bool]],
) -> dict:
    """Build the train-request object.

    `images` holds (image_id, payload_ref, labels, mine_negatives) tuples.
    Label order and image order are preserved as given; callers pass a
    deterministic order so encoded bytes are reproducible.
    """
    encoded = []
    for image_id, payload_ref, labels, mine_negatives in images:
        if mine_negatives and any(rec.source == "pseudo" for rec in labels):
            raise DataError(
                f"image {image_id!r}: negative mining requested on pseudo-labeled image"
            )
        raw_labels = []
        for rec in labels:
            raw: dict = {
                "category": rec.category,
                "bbox": rec.box.as_list(),
                "source": rec.source,
            }
            if rec.cycle is not None:
                raw["cycle"] = rec.cycle
            raw_labels.append(raw)
        encoded.append(
            {
                "id": image_id,
                "payload_ref": payload_ref,
                "labels": raw_labels,
                "mine_negatives": bool(mine_negatives),
            }
        )
    return {"version": WIRE_VERSION, "view": view, "images": encoded}


def decode_train_request(obj: object, where: str = "train request") -> dict:
    """Validate and normalize a train request; returns the parsed structure.

    The result is {"view": int, "images": [{"id", "payload_ref", "labels":
    [LabelRecord], "mine_negatives": bool}]}.
    """
    body = _check_version(obj, where)
    view = _check_view(_require(body, "view", where), f"{where}.view")
    raw_images = _require(body, "images", where)
    if not isinstance(raw_images, list):
        raise DataError(f"{where}.images: expected a list")
    images = []
    for i, raw in enumerate(raw_images):
        here = f"{where}.images[{i}]"
        if not isinstance(raw, dict):
            raise DataError(f"{here}: expected an object")
        image_id = _require(raw, "id", here)
        payload_ref = _require(raw, "payload_ref", here)
        mine_negatives = _require(raw, "mine_negatives", here)
        if not isinstance(image_id, str):
            raise DataError(f"{here}.id: expected a string")
        if not isinstance(payload_ref, str):
            raise DataError(f"{here}.payload_ref: expected a string")
        if not isinstance(mine_negatives, bool):
            raise DataError(f"{here}.mine_negatives: expected a boolean")
        raw_labels = _require(raw, "labels", here)
        if not isinstance(raw_labels, list):
            raise DataError(f"{here}.labels: expected a list")
        labels = []
        for j, raw_label in enumerate(raw_labels):
            label_where = f"{here}.labels[{j}]"
            if not isinstance(raw_label, dict):
                raise DataError(f"{label_where}: expected an object")
            category = _require(raw_label, "category", label_where)
            source = _require(raw_label, "source", label_where)
            if not isinstance(category, str):
                raise DataError(f"{label_where}.category: expected a string")
            if not isinstance(source, str):
                raise DataError(f"{label_where}.source: expected a string")
            cycle = raw_label.get("cycle")
            if cycle is not None and (not isinstance(cycle, int) or isinstance(cycle, bool)):
                raise DataError(f"{label_where}.cycle: expected an integer")
            box = box_from_obj(_require(raw_label, "bbox", label_where), f"{label_where}.bbox")
            try:
                labels.append(LabelRecord(box, category, source, cycle))
            except DataError as exc:
                raise DataError(f"{label_where}: {exc}") from None
        if mine_negatives and any(rec.source == "pseudo" for rec in labels):
            raise DataError(f"{here}: negative mining requested on pseudo-labeled image")
        images.append(
            {
                "id": image_id,
                "payload_ref": payload_ref,
                "labels": labels,
                "mine_negatives": mine_negatives,
            }
        )
    return {"view": view, "images": images}


def encode_detect_request(
    view: int,
    thresholds: Mapping[str, float],
    images: Sequence[tuple[str, str]],
) -> dict:
    """Build the detect-request object from (image_id, payload_ref) pairs."""
    return {
        "version": WIRE_VERSION,
        "view": view,
        "thresholds": dict(sorted(thresholds.items())),
        "images": [{"id": image_id, "payload_ref": ref} for image_id, ref in images],
    }


def decode_detect_request(obj: object, where: str = "detect request") -> dict:
    body = _check_version(obj, where)
    view = _check_view(_require(body, "view", where), f"{where}.view")
    raw_thresholds = _require(body, "thresholds", where)
    if not isinstance(raw_thresholds, dict):
        raise DataError(f"{where}.thresholds: expected an object")
    thresholds = {}
    for category, value in raw_thresholds.items():
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise DataError(f"{where}.thresholds[{category!r}]: expected a number")
        thresholds[str(category)] = float(value)
    raw_images = _require(body, "images", where)
    if not isinstance(raw_images, list):
        raise DataError(f"{where}.images: expected a list")
    images = []
    for i, raw in enumerate(raw_images):
        here = f"{where}.images[{i}]"
        if not isinstance(raw, dict):
            raise DataError(f"{here}: expected an object")
        image_id = _require(raw, "id", here)
        payload_ref = _require(raw, "payload_ref", here)
        if not isinstance(image_id, str):
            raise DataError(f"{here}.id: expected a string")
        if not isinstance(payload_ref, str):
            raise DataError(f"{here}.payload_ref: expected a string")
        images.append((image_id, payload_ref))
    return {"view": view, "thresholds": thresholds, "images": images}


def encode_detections(results: Mapping[str, Sequence[DetectionRecord]]) -> dict:
    return {
        "version": WIRE_VERSION,
        "results": {
            image_id: [
                {"category": d.category, "bbox": d.box.as_list(), "confidence": d.confidence}
                for d in dets
            ]
            for image_id, dets in sorted(results.items())
        },
    }


def decode_detections(
    obj: object, where: str = "detections"
) -> dict[str, tuple[DetectionRecord, ...]]:
    body = _check_version(obj, where)
    raw_results = _require(body, "results", where)
    if not isinstance(raw_results, dict):
        raise DataError(f"{where}.results: expected an object")
    results: dict[str, tuple[DetectionRecord, ...]] = {}
    for image_id, raw_dets in raw_results.items():
        here = f"{where}.results[{image_id!r}]"
        if not isinstance(raw_dets, list):
            raise DataError(f"{here}: expected a list")
        dets = []
        for i, raw in enumerate(raw_dets):
            det_where = f"{here}[{i}]"
            if not isinstance(raw, dict):
                raise DataError(f"{det_where}: expected an object")
            category = _require(raw, "category", det_where)
            confidence = _require(raw, "confidence", det_where)
            if not isinstance(category, str):
                raise DataError(f"{det_where}.category: expected a string")
            if not isinstance(confidence, (int, float)) or isinstance(confidence, bool):
                raise DataError(f"{det_where}.confidence: expected a number")
            box = box_from_obj(_require(raw, "bbox", det_where), f"{det_where}.bbox")
            try:
                dets.append(DetectionRecord(box, category, float(confidence)))
            except DataError as exc:
                raise DataError(f"{det_where}: {exc}") from None
        results[str(image_id)] = tuple(dets)
    return results

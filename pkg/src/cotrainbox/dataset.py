"""Datasets of view-paired images, manifest IO, and the KITTI label importer.

A dataset manifest is a JSON object with three fields:

* ``images``: list of image records (id, width, height, optional
  sequence_id/frame_index, per-view payload references),
* ``labels``: mapping image id -> label records, in the view-1 frame.
  Presence of the key marks the image as labeled, even with an empty list;
  absence marks it as unlabeled,
* ``view2_transform``: geometric relation of view 2 to view 1.

Ground-truth labels stay in the view-1 frame throughout; backends receive
view-2 boxes through the transform at request-building time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DataError
from .jsonio import read_json, write_json
from .seeding import child_rng
from .types import BoundingBox, LabelRecord, ViewTransform, box_from_obj


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    width: int
    height: int
    sequence_id: str | None = None
    frame_index: int | None = None
    view_refs: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.image_id:
            raise DataError("image with empty id")
        if self.width <= 0 or self.height <= 0:
            raise DataError(f"image {self.image_id!r}: non-positive dimensions")
        if (self.sequence_id is None) != (self.frame_index is None):
            raise DataError(
                f"image {self.image_id!r}: sequence_id and frame_index must be given together"
            )


@dataclass
class ViewPairedDataset:
    """Images with an optional second view plus view-1-frame labels.

    Membership in the labeled split is defined by presence of the image id
    as a key of `labels`; an empty label list still means labeled (an image
    known to contain no objects).
    """

    images: list[ImageRecord]
    labels: dict[str, tuple[LabelRecord, ...]]
    view2_transform: ViewTransform

    def __post_init__(self) -> None:
        index: dict[str, ImageRecord] = {}
        seq_frames: dict[str, set[int]] = {}
        for rec in self.images:
            if rec.image_id in index:
                raise DataError(f"duplicate image id {rec.image_id!r}")
            index[rec.image_id] = rec
            if rec.sequence_id is not None:
                frames = seq_frames.setdefault(rec.sequence_id, set())
                if rec.frame_index in frames:
                    raise DataError(
                        f"sequence {rec.sequence_id!r}: duplicate frame index {rec.frame_index}"
                    )
                frames.add(rec.frame_index)
        for image_id in self.labels:
            if image_id not in index:
                raise DataError(f"labels reference unknown image id {image_id!r}")
        self._index = index

    def by_id(self) -> dict[str, ImageRecord]:
        return self._index

    def labeled_ids(self) -> list[str]:
        return sorted(self.labels)

    def unlabeled_ids(self) -> list[str]:
        return sorted(rec.image_id for rec in self.images if rec.image_id not in self.labels)


def _image_from_obj(obj: object, where: str) -> ImageRecord:
    if not isinstance(obj, dict):
        raise DataError(f"{where}: expected an object")
    for key in ("id", "width", "height"):
        if key not in obj:
            raise DataError(f"{where}: missing field {key!r}")
    views = obj.get("views", {})
    if not isinstance(views, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in views.items()
    ):
        raise DataError(f"{where}.views: expected string-to-string mapping")
    seq = obj.get("sequence_id")
    frame = obj.get("frame_index")
    if seq is not None and not isinstance(seq, str):
        raise DataError(f"{where}.sequence_id: expected a string")
    if frame is not None and (not isinstance(frame, int) or isinstance(frame, bool)):
        raise DataError(f"{where}.frame_index: expected an integer")
    try:
        return ImageRecord(
            image_id=str(obj["id"]),
            width=int(obj["width"]),
            height=int(obj["height"]),
            sequence_id=seq,
            frame_index=frame,
            view_refs=dict(views),
        )
    except (DataError, TypeError, ValueError) as exc:
        raise DataError(f"{where}: {exc}") from None


def _label_from_obj(obj: object, where: str) -> LabelRecord:
    if not isinstance(obj, dict):
        raise DataError(f"{where}: expected an object")
    for key in ("category", "bbox", "source"):
        if key not in obj:
            raise DataError(f"{where}: missing field {key!r}")
    if not isinstance(obj["category"], str) or not isinstance(obj["source"], str):
        raise DataError(f"{where}: category and source must be strings")
    cycle = obj.get("cycle")
    if cycle is not None and (not isinstance(cycle, int) or isinstance(cycle, bool)):
        raise DataError(f"{where}.cycle: expected an integer")
    box = box_from_obj(obj["bbox"], where=f"{where}.bbox")
    try:
        return LabelRecord(box, obj["category"], obj["source"], cycle)
    except DataError as exc:
        raise DataError(f"{where}: {exc}") from None


def load_dataset(path: str | Path) -> ViewPairedDataset:
    """Read a dataset manifest, validating structure and split invariants."""
    obj = read_json(path)
    return dataset_from_obj(obj, where=str(path))


def dataset_from_obj(obj: object, where: str = "manifest") -> ViewPairedDataset:
    if not isinstance(obj, dict):
        raise DataError(f"{where}: expected a JSON object")
    for key in ("images", "labels", "view2_transform"):
        if key not in obj:
            raise DataError(f"{where}: missing field {key!r}")
    if not isinstance(obj["images"], list):
        raise DataError(f"{where}.images: expected a list")
    if not isinstance(obj["labels"], dict):
        raise DataError(f"{where}.labels: expected an object")
    images = [
        _image_from_obj(raw, where=f"{where}.images[{i}]") for i, raw in enumerate(obj["images"])
    ]
    labels: dict[str, tuple[LabelRecord, ...]] = {}
    for image_id, raw_list in obj["labels"].items():
        if not isinstance(raw_list, list):
            raise DataError(f"{where}.labels[{image_id!r}]: expected a list")
        labels[str(image_id)] = tuple(
            _label_from_obj(raw, where=f"{where}.labels[{image_id!r}][{i}]")
            for i, raw in enumerate(raw_list)
        )
    transform = ViewTransform.from_obj(
        obj["view2_transform"], where=f"{where}.view2_transform"
    )
    try:
        return ViewPairedDataset(images=images, labels=labels, view2_transform=transform)
    except DataError as exc:
        raise DataError(f"{where}: {exc}") from None


def dataset_to_obj(dataset: ViewPairedDataset) -> dict:
    images = []
    for rec in dataset.images:
        entry: dict = {
            "id": rec.image_id,
            "width": rec.width,
            "height": rec.height,
            "views": dict(rec.view_refs),
        }
        if rec.sequence_id is not None:
            entry["sequence_id"] = rec.sequence_id
            entry["frame_index"] = rec.frame_index
        images.append(entry)
    labels = {}
    for image_id, recs in sorted(dataset.labels.items()):
        out = []
        for rec in recs:
            raw: dict = {"category": rec.category, "bbox": rec.box.as_list(), "source": rec.source}
            if rec.cycle is not None:
                raw["cycle"] = rec.cycle
            out.append(raw)
        labels[image_id] = out
    return {
        "images": images,
        "labels": labels,
        "view2_transform": dataset.view2_transform.to_obj(),
    }


def save_dataset(dataset: ViewPairedDataset, path: str | Path) -> None:
    write_json(path, dataset_to_obj(dataset))


def split_labeled(
    dataset: ViewPairedDataset, percent: float, seed: int
) -> ViewPairedDataset:
    """Keep labels for a random `percent` of the labeled images, drop the rest.

    The number kept is round(percent / 100 * n_labeled). Selection is uniform
    without replacement over the labeled ids in sorted order, so a given
    (dataset, percent, seed) always yields the same split.
    """
    if not 0 < percent <= 100:
        raise DataError(f"labeled percent must be in (0, 100], got {percent}")
    labeled = dataset.labeled_ids()
    n_keep = int(round(percent / 100 * len(labeled)))
    if percent > 0 and labeled:
        n_keep = max(n_keep, 1)
    rng = child_rng(seed, "split_labeled")
    keep = set(rng.choice(labeled, size=n_keep, replace=False)) if n_keep < len(labeled) else set(labeled)
    return ViewPairedDataset(
        images=list(dataset.images),
        labels={i: dataset.labels[i] for i in labeled if i in keep},
        view2_transform=dataset.view2_transform,
    )


DEFAULT_KITTI_CATEGORIES: Mapping[str, str] = {
    "Car": "vehicle",
    "Van": "vehicle",
    "Truck": "vehicle",
    "Pedestrian": "pedestrian",
    "Person_sitting": "pedestrian",
}


def parse_kitti_labels(
    text: str,
    category_map: Mapping[str, str] | None = None,
    source: str = "human",
) -> list[LabelRecord]:
    """Parse one KITTI-format label file.

    Fields are whitespace-separated; the object type is the first column and
    the 2D box occupies columns 5 to 8 (x1 y1 x2 y2). Types missing from
    `category_map` are skipped, which is how DontCare regions and unmapped
    classes fall out.
    """
    if category_map is None:
        category_map = DEFAULT_KITTI_CATEGORIES
    records: list[LabelRecord] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) < 8:
            raise DataError(f"KITTI label line {lineno}: expected at least 8 fields")
        category = category_map.get(fields[0])
        if category is None:
            continue
        try:
            coords = [float(v) for v in fields[4:8]]
        except ValueError:
            raise DataError(f"KITTI label line {lineno}: non-numeric box coordinates") from None
        try:
            box = BoundingBox(*coords)
        except DataError as exc:
            raise DataError(f"KITTI label line {lineno}: {exc}") from None
        records.append(LabelRecord(box, category, source))
    return records


def load_kitti_labels(
    directory: str | Path,
    category_map: Mapping[str, str] | None = None,
) -> dict[str, tuple[LabelRecord, ...]]:
    """Read every .txt label file in a directory; image id is the file stem."""
    directory = Path(directory)
    out: dict[str, tuple[LabelRecord, ...]] = {}
    for path in sorted(directory.glob("*.txt")):
        try:
            out[path.stem] = tuple(parse_kitti_labels(path.read_text(), category_map))
        except DataError as exc:
            raise DataError(f"{path}: {exc}") from None
    return out

"""Dataset manifests, splits, and the KITTI label importer."""

import json

import pytest

from cotrainbox.dataset import (
    DEFAULT_KITTI_CATEGORIES,
    ImageRecord,
    ViewPairedDataset,
    dataset_from_obj,
    dataset_to_obj,
    load_dataset,
    load_kitti_labels,
    parse_kitti_labels,
    save_dataset,
    split_labeled,
)
from cotrainbox.errors import DataError
from cotrainbox.types import BoundingBox, LabelRecord, ViewTransform

MANIFEST_TEXT = """
{
  "images": [
    {"id": "a", "width": 100, "height": 80, "views": {"v1": "a_rgb.png", "v2": "a_d.png"}},
    {"id": "b", "width": 100, "height": 80, "views": {"v1": "b_rgb.png"}}
  ],
  "labels": {
    "a": [{"category": "vehicle", "bbox": [1.0, 2.0, 30.0, 26.0], "source": "human"}]
  },
  "view2_transform": {"kind": "identity"}
}
"""


def test_manifest_parses_to_expected_splits(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text(MANIFEST_TEXT)
    dataset = load_dataset(path)
    # hand-parse the same text independently
    raw = json.loads(MANIFEST_TEXT)
    assert [r.image_id for r in dataset.images] == [img["id"] for img in raw["images"]]
    assert dataset.labeled_ids() == ["a"]
    assert dataset.unlabeled_ids() == ["b"]
    label = dataset.labels["a"][0]
    assert label.box.as_list() == raw["labels"]["a"][0]["bbox"]
    assert label.category == "vehicle"
    assert label.source == "human"
    assert dataset.by_id()["a"].view_refs == {"v1": "a_rgb.png", "v2": "a_d.png"}


def test_duplicate_image_id_rejected():
    rec = ImageRecord("x", 10, 10)
    with pytest.raises(DataError, match="duplicate image id"):
        ViewPairedDataset(images=[rec, rec], labels={}, view2_transform=ViewTransform("identity"))


def test_labels_must_reference_known_images():
    rec = ImageRecord("x", 10, 10)
    with pytest.raises(DataError, match="unknown image id"):
        ViewPairedDataset(
            images=[rec],
            labels={"y": ()},
            view2_transform=ViewTransform("identity"),
        )


def test_duplicate_sequence_frame_rejected():
    a = ImageRecord("a", 10, 10, sequence_id="s0", frame_index=3)
    b = ImageRecord("b", 10, 10, sequence_id="s0", frame_index=3)
    with pytest.raises(DataError, match="duplicate frame index"):
        ViewPairedDataset(images=[a, b], labels={}, view2_transform=ViewTransform("identity"))


def test_sequence_fields_come_together():
    with pytest.raises(DataError):
        ImageRecord("a", 10, 10, sequence_id="s0")


def test_round_trip_with_sequences_and_mirror(tmp_path):
    dataset = ViewPairedDataset(
        images=[
            ImageRecord("s0_f0", 64, 48, sequence_id="s0", frame_index=0, view_refs={"v1": "p"}),
            ImageRecord("s0_f5", 64, 48, sequence_id="s0", frame_index=5),
            ImageRecord("solo", 64, 48),
        ],
        labels={
            "solo": (),
            "s0_f0": (
                LabelRecord(BoundingBox(1, 1, 9, 9), "vehicle", "human"),
                LabelRecord(BoundingBox(2, 2, 8, 8), "pedestrian", "pseudo", cycle=2),
            ),
        },
        view2_transform=ViewTransform("horizontal_mirror", 64.0),
    )
    again = dataset_from_obj(dataset_to_obj(dataset))
    assert again.images == dataset.images
    assert again.labels == dataset.labels
    assert again.view2_transform == dataset.view2_transform

    path = tmp_path / "m.json"
    save_dataset(dataset, path)
    first = path.read_bytes()
    save_dataset(load_dataset(path), path)
    assert path.read_bytes() == first


def test_manifest_decode_errors_name_paths(tmp_path):
    raw = json.loads(MANIFEST_TEXT)
    del raw["images"][1]["width"]
    with pytest.raises(DataError, match="images\\[1\\]"):
        dataset_from_obj(raw)
    raw = json.loads(MANIFEST_TEXT)
    raw["labels"]["a"][0]["bbox"] = [5, 5, 5, 5]
    with pytest.raises(DataError, match="labels\\['a'\\]\\[0\\].bbox"):
        dataset_from_obj(raw)


def _labeled_dataset(n):
    images = [ImageRecord(f"img_{i:03d}", 10, 10) for i in range(n)]
    labels = {
        rec.image_id: (LabelRecord(BoundingBox(0, 0, 5, 5), "vehicle", "human"),)
        for rec in images
    }
    return ViewPairedDataset(images=images, labels=labels, view2_transform=ViewTransform("identity"))


def test_split_keeps_percent_of_labeled():
    dataset = _labeled_dataset(200)
    out = split_labeled(dataset, 5.0, seed=0)
    assert len(out.labeled_ids()) == 10
    assert len(out.unlabeled_ids()) == 190
    assert out.images == dataset.images
    # frozen under seed
    again = split_labeled(dataset, 5.0, seed=0)
    assert again.labeled_ids() == out.labeled_ids()
    other = split_labeled(dataset, 5.0, seed=1)
    assert other.labeled_ids() != out.labeled_ids()


def test_split_everything_and_minimum():
    dataset = _labeled_dataset(40)
    assert len(split_labeled(dataset, 100.0, seed=0).labeled_ids()) == 40
    assert len(split_labeled(dataset, 0.01, seed=0).labeled_ids()) == 1
    with pytest.raises(DataError):
        split_labeled(dataset, 0.0, seed=0)
    with pytest.raises(DataError):
        split_labeled(dataset, 101.0, seed=0)


KITTI_TEXT = """Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59
Van 0.00 2 1.85 387.63 181.54 423.81 203.12 1.67 1.87 3.69 -16.53 2.39 58.49 1.57
DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10
Pedestrian 0.00 0 0.12 100.00 150.00 120.00 190.00 1.78 0.60 0.90 -5.00 1.80 20.00 0.10
Cyclist 0.00 0 0.12 10.0 10.0 20.0 20.0 1.7 0.6 1.8 -5.0 1.8 20.0 0.1
"""


def test_kitti_parse_against_hand_parse():
    records = parse_kitti_labels(KITTI_TEXT)
    # independent parse: split columns, keep mapped types, box at 5..8
    expected = []
    for line in KITTI_TEXT.splitlines():
        fields = line.split()
        if fields and fields[0] in DEFAULT_KITTI_CATEGORIES:
            expected.append(
                (DEFAULT_KITTI_CATEGORIES[fields[0]], [float(v) for v in fields[4:8]])
            )
    assert [(r.category, r.box.as_list()) for r in records] == expected
    assert len(records) == 3  # DontCare and Cyclist dropped
    assert all(r.source == "human" for r in records)


def test_kitti_custom_mapping_and_errors():
    records = parse_kitti_labels(KITTI_TEXT, category_map={"Cyclist": "rider"})
    assert [r.category for r in records] == ["rider"]
    with pytest.raises(DataError, match="line 1"):
        parse_kitti_labels("Car 0 0 0 1 2 3\n")
    with pytest.raises(DataError, match="non-numeric"):
        parse_kitti_labels("Car a b c x y z w 0 0 0 0 0 0 0\n")
    with pytest.raises(DataError, match="line 1"):
        parse_kitti_labels("Car 0 0 0 10 10 5 20 0 0 0 0 0 0 0\n")


def test_kitti_directory_import(tmp_path):
    (tmp_path / "000001.txt").write_text(KITTI_TEXT)
    (tmp_path / "000002.txt").write_text("")
    out = load_kitti_labels(tmp_path)
    assert sorted(out) == ["000001", "000002"]
    assert len(out["000001"]) == 3
    assert out["000002"] == ()

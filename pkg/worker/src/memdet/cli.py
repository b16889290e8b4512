#!/usr/bin/env python3
"""Memorizing detector worker for the co-training engine's worker protocol.

``train`` stores every label from the request (human, pseudo, virtual)
keyed by image id; ``detect`` replays the stored boxes for images it has
seen, at a fixed confidence and with optional deterministic corner jitter,
and returns empty lists for everything else. No learning happens: the
point is a fully predictable counterpart for exercising the wire protocol.

Command line (the engine's worker contract):

    memdet train  --request train.json --model-out DIR [--confidence C] [--jitter J]
    memdet detect --model DIR --request detect.json --out detections.json

Only categories present in the detect request's thresholds are reported,
and only when the model confidence clears the threshold. Jitter offsets
are seeded per image and box slot, so repeated detections are
byte-identical.

Exit codes: 0 success, 2 usage, 3 malformed request (schema version
mismatches, negative mining over pseudo labels), 4 unusable model
directory.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

WIRE_VERSION = 1
MODEL_FILE = "model.json"
DEFAULT_CONFIDENCE = 0.9


class RequestError(Exception):
    """The request file is missing, unreadable, or violates the schema."""


class ModelError(Exception):
    """The model directory does not hold a usable model."""


def load_json(path, error=RequestError):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise error(f"cannot read {path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise error(f"{path}: invalid JSON: {exc}") from None


def dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def checked_request(obj, where):
    if not isinstance(obj, dict):
        raise RequestError(f"{where}: expected a JSON object")
    version = obj.get("version")
    if version != WIRE_VERSION:
        raise RequestError(f"{where}: unsupported version {version!r}, expected {WIRE_VERSION}")
    return obj


def request_images(obj, where):
    images = obj.get("images")
    if not isinstance(images, list):
        raise RequestError(f"{where}.images: expected a list")
    for i, raw in enumerate(images):
        if not isinstance(raw, dict):
            raise RequestError(f"{where}.images[{i}]: expected an object")
        image_id = raw.get("id")
        if not isinstance(image_id, str) or not image_id:
            raise RequestError(f"{where}.images[{i}].id: expected a non-empty string")
        yield image_id, raw, f"{where}.images[{i}]"


def parse_bbox(raw, where):
    ok = (
        isinstance(raw, list)
        and len(raw) == 4
        and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw)
    )
    if not ok:
        raise RequestError(f"{where}: expected [x1, y1, x2, y2]")
    return [float(v) for v in raw]


def cmd_train(args):
    obj = checked_request(load_json(args.request), args.request)
    stored = {}
    for image_id, raw, where in request_images(obj, args.request):
        mine_negatives = raw.get("mine_negatives", False)
        if not isinstance(mine_negatives, bool):
            raise RequestError(f"{where}.mine_negatives: expected a boolean")
        labels = raw.get("labels", [])
        if not isinstance(labels, list):
            raise RequestError(f"{where}.labels: expected a list")
        kept = []
        for j, label in enumerate(labels):
            here = f"{where}.labels[{j}]"
            if not isinstance(label, dict):
                raise RequestError(f"{here}: expected an object")
            category = label.get("category")
            source = label.get("source")
            if not isinstance(category, str) or not category:
                raise RequestError(f"{here}.category: expected a non-empty string")
            if not isinstance(source, str) or not source:
                raise RequestError(f"{here}.source: expected a non-empty string")
            if mine_negatives and source == "pseudo":
                raise RequestError(
                    f"{where}: negative mining requested over pseudo labels"
                )
            kept.append({"bbox": parse_bbox(label.get("bbox"), f"{here}.bbox"), "category": category})
        stored[image_id] = kept

    model_dir = Path(args.model_out)
    model_dir.mkdir(parents=True, exist_ok=True)
    dump_json(
        model_dir / MODEL_FILE,
        {
            "version": WIRE_VERSION,
            "confidence": args.confidence,
            "jitter": args.jitter,
            "images": stored,
        },
    )
    return 0


def load_model(model_dir):
    path = Path(model_dir) / MODEL_FILE
    if not path.is_file():
        raise ModelError(f"no model at {model_dir}")
    model = load_json(path, error=ModelError)
    usable = (
        isinstance(model, dict)
        and model.get("version") == WIRE_VERSION
        and isinstance(model.get("images"), dict)
        and all(
            isinstance(labels, list)
            and all(
                isinstance(l, dict) and isinstance(l.get("category"), str) and isinstance(l.get("bbox"), list)
                for l in labels
            )
            for labels in model["images"].values()
        )
    )
    if not usable:
        raise ModelError(f"{path}: not a memorized model")
    return model


def cmd_detect(args):
    model = load_model(args.model)
    confidence = float(model.get("confidence", DEFAULT_CONFIDENCE))
    jitter = float(model.get("jitter", 0.0))

    obj = checked_request(load_json(args.request), args.request)
    thresholds = obj.get("thresholds", {})
    if not isinstance(thresholds, dict):
        raise RequestError(f"{args.request}.thresholds: expected an object")

    results = {}
    for image_id, _, _ in request_images(obj, args.request):
        detections = []
        for index, label in enumerate(model["images"].get(image_id, [])):
            category = label["category"]
            if category not in thresholds or confidence < float(thresholds[category]):
                continue
            box = [float(v) for v in label["bbox"]]
            if jitter > 0:
                rng = random.Random(f"{image_id}:{index}")
                box = [v + rng.uniform(-jitter, jitter) for v in box]
            detections.append({"bbox": box, "category": category, "confidence": confidence})
        results[image_id] = detections
    dump_json(args.out, {"results": results, "version": WIRE_VERSION})
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="memdet",
        description="memorizing detector worker: replays training labels for seen images",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="memorize the labels of a train request")
    train.add_argument("--request", required=True, help="train request (JSON)")
    train.add_argument("--model-out", required=True, help="directory to write the model into")
    train.add_argument(
        "--confidence", type=float, default=DEFAULT_CONFIDENCE,
        help=f"confidence reported for every replayed box (default {DEFAULT_CONFIDENCE})",
    )
    train.add_argument(
        "--jitter", type=float, default=0.0,
        help="max per-coordinate offset applied to replayed boxes (default 0)",
    )
    train.set_defaults(func=cmd_train)

    detect = sub.add_parser("detect", help="replay stored boxes for the requested images")
    detect.add_argument("--model", required=True, help="model directory from a train call")
    detect.add_argument("--request", required=True, help="detect request (JSON)")
    detect.add_argument("--out", required=True, help="path for the detections response (JSON)")
    detect.set_defaults(func=cmd_detect)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "train":
        if not 0.0 <= args.confidence <= 1.0:
            parser.error("--confidence must be in [0, 1]")
        if args.jitter < 0:
            parser.error("--jitter must be >= 0")
    try:
        return args.func(args)
    except RequestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

"""Detector-agnostic co-training engine for self-labeling 2D bounding boxes.

Core modules:

* `types` / `dataset` / `config`: records, view-paired datasets, run configs
* `evaluation`: KITTI-style matching, interpolated AP, stop metric, audits
* `loop`: selection operators, fusion, stop rule, and the co-training run
* `backends` / `wire`: detector contract and the external worker protocol
* `simulator`: seeded synthetic worlds and the closed-form detector model
* `cli`: the `cotrainbox` command line
"""

from .config import CoTrainConfig, FrameGapRule, StopRule, default_config
from .dataset import ImageRecord, ViewPairedDataset, load_dataset, split_labeled
from .errors import BackendError, CoTrainError, DataError
from .evaluation import EvalProtocol, default_protocol, evaluate, mean_ap, stop_metric_map
from .types import (
    BoundingBox,
    DetectionRecord,
    LabelRecord,
    PseudoLabelSet,
    ViewTransform,
    apply_confidence_thresholds,
    image_confidence,
    transform_box,
)

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "BoundingBox",
    "CoTrainConfig",
    "CoTrainError",
    "DataError",
    "DetectionRecord",
    "EvalProtocol",
    "FrameGapRule",
    "ImageRecord",
    "LabelRecord",
    "PseudoLabelSet",
    "StopRule",
    "ViewPairedDataset",
    "ViewTransform",
    "apply_confidence_thresholds",
    "default_config",
    "default_protocol",
    "evaluate",
    "image_confidence",
    "load_dataset",
    "mean_ap",
    "split_labeled",
    "stop_metric_map",
    "transform_box",
]

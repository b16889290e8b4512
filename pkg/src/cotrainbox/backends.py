"""Detector backend contract and the external worker adapter.

A backend trains models and runs detection; the engine never sees weights,
only opaque `ModelHandle`s. Two implementations ship: the in-process
simulator (`cotrainbox.simulator.SimulatedBackend`) and
`ExternalWorkerBackend`, which shells out to a worker executable speaking
the wire protocol:

    <worker> train  --request train.json --model-out <dir>
    <worker> detect --model <dir> --request detect.json --out detections.json

The engine re-applies confidence thresholds to whatever a worker returns
and rejects detections for images it never asked about.
"""

from __future__ import annotations

import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .errors import BackendError, DataError
from .jsonio import read_json, write_json
from .types import DetectionRecord, LabelRecord, apply_confidence_thresholds
from .wire import encode_detect_request, encode_train_request, decode_detections

WORKER_ENV_VAR = "COTRAIN_WORKER"


@dataclass(frozen=True)
class ModelHandle:
    """Opaque reference to a trained model.

    `payload` is backend-private but JSON-serializable so handles survive
    checkpointing; `path` points at worker-owned storage for external
    backends.
    """

    backend: str
    view: int
    cycle: int
    token: str
    path: str | None = None
    payload: Mapping | None = None

    def to_obj(self) -> dict:
        obj: dict = {
            "backend": self.backend,
            "view": self.view,
            "cycle": self.cycle,
            "token": self.token,
        }
        if self.path is not None:
            obj["path"] = self.path
        if self.payload is not None:
            obj["payload"] = self.payload
        return obj

    @staticmethod
    def from_obj(obj: object, where: str = "model handle") -> "ModelHandle":
        if not isinstance(obj, dict):
            raise DataError(f"{where}: expected an object")
        for key in ("backend", "view", "cycle", "token"):
            if key not in obj:
                raise DataError(f"{where}: missing field {key!r}")
        return ModelHandle(
            backend=str(obj["backend"]),
            view=int(obj["view"]),
            cycle=int(obj["cycle"]),
            token=str(obj["token"]),
            path=obj.get("path"),
            payload=obj.get("payload"),
        )


@dataclass(frozen=True)
class TrainImage:
    """One training image: payload reference, labels, negative-mining flag.

    Negative mining (treating unannotated regions as background) is only
    sound on images whose labels are exhaustive, i.e. human or virtual
    ground truth. Requesting it on an image carrying pseudo labels is a
    contract violation and rejected here, before anything reaches a worker.
    """

    image_id: str
    payload_ref: str
    labels: tuple[LabelRecord, ...]
    mine_negatives: bool

    def __post_init__(self) -> None:
        if self.mine_negatives and any(rec.source == "pseudo" for rec in self.labels):
            raise DataError(
                f"image {self.image_id!r}: negative mining requested on pseudo-labeled image"
            )


@dataclass(frozen=True)
class TrainRequest:
    view: int
    images: tuple[TrainImage, ...]

    def __post_init__(self) -> None:
        if self.view not in (1, 2):
            raise DataError(f"view must be 1 or 2, got {self.view}")
        seen: set[str] = set()
        for img in self.images:
            if img.image_id in seen:
                raise DataError(f"duplicate training image {img.image_id!r}")
            seen.add(img.image_id)


class DetectorBackend:
    """Interface both backends implement."""

    name = "abstract"

    def train(self, request: TrainRequest, cycle: int = 0) -> ModelHandle:
        raise NotImplementedError

    def detect(
        self,
        handle: ModelHandle,
        images: Sequence[tuple[str, str]],
        thresholds: Mapping[str, float],
        stream: tuple | None = None,
    ) -> dict[str, tuple[DetectionRecord, ...]]:
        """Detect on (image_id, payload_ref) pairs; returns an entry per image.

        Results are already threshold-filtered. `stream` is a determinism
        hint consumed by the simulator (which draws per-cycle observation
        noise from it); file-based workers ignore it.
        """
        raise NotImplementedError


def _threshold_results(
    results: Mapping[str, Sequence[DetectionRecord]],
    requested_ids: Sequence[str],
    thresholds: Mapping[str, float],
    where: str,
) -> dict[str, tuple[DetectionRecord, ...]]:
    requested = set(requested_ids)
    unknown = sorted(set(results) - requested)
    if unknown:
        raise BackendError(f"{where}: detections for unrequested image ids {unknown[:5]}")
    out: dict[str, tuple[DetectionRecord, ...]] = {}
    for image_id in requested_ids:
        dets = results.get(image_id, ())
        try:
            out[image_id] = apply_confidence_thresholds(tuple(dets), thresholds)
        except DataError as exc:
            raise BackendError(f"{where}: results[{image_id!r}]: {exc}") from None
    return out


class ExternalWorkerBackend(DetectorBackend):
    """Runs a worker executable per train/detect call.

    Request and response files live under `work_dir`; model directories are
    handed to the worker and treated as opaque afterwards.
    """

    name = "external"

    def __init__(self, worker: str, work_dir: str | Path):
        if not worker:
            raise DataError("external backend requires a worker executable")
        self.worker = worker
        self.work_dir = Path(work_dir)
        self._serial = 0

    def _next_serial(self) -> int:
        self._serial += 1
        return self._serial

    def _run(self, args: list[str], what: str) -> None:
        try:
            proc = subprocess.run(
                [self.worker, *args], capture_output=True, text=True, check=False
            )
        except OSError as exc:
            raise BackendError(f"cannot run worker {self.worker!r}: {exc}") from None
        if proc.returncode != 0:
            tail = (proc.stderr or proc.stdout or "").strip()[-2000:]
            raise BackendError(
                f"worker {what} failed with exit code {proc.returncode}: {tail}"
            )

    def train(self, request: TrainRequest, cycle: int = 0) -> ModelHandle:
        serial = self._next_serial()
        token = f"v{request.view}-c{cycle}-{serial:04d}"
        model_dir = self.work_dir / "models" / token
        request_path = self.work_dir / "requests" / f"train-{token}.json"
        request_path.parent.mkdir(parents=True, exist_ok=True)
        model_dir.mkdir(parents=True, exist_ok=True)
        write_json(
            request_path,
            encode_train_request(
                request.view,
                [
                    (img.image_id, img.payload_ref, img.labels, img.mine_negatives)
                    for img in request.images
                ],
            ),
        )
        self._run(
            ["train", "--request", str(request_path), "--model-out", str(model_dir)],
            what="train",
        )
        return ModelHandle(
            backend=self.name,
            view=request.view,
            cycle=cycle,
            token=token,
            path=str(model_dir),
        )

    def detect(
        self,
        handle: ModelHandle,
        images: Sequence[tuple[str, str]],
        thresholds: Mapping[str, float],
        stream: tuple | None = None,
    ) -> dict[str, tuple[DetectionRecord, ...]]:
        if handle.backend != self.name or handle.path is None:
            raise BackendError(f"handle {handle.token!r} does not belong to this backend")
        serial = self._next_serial()
        request_path = self.work_dir / "requests" / f"detect-{handle.token}-{serial:04d}.json"
        out_path = self.work_dir / "requests" / f"detections-{handle.token}-{serial:04d}.json"
        request_path.parent.mkdir(parents=True, exist_ok=True)
        write_json(request_path, encode_detect_request(handle.view, thresholds, images))
        self._run(
            [
                "detect",
                "--model",
                handle.path,
                "--request",
                str(request_path),
                "--out",
                str(out_path),
            ],
            what="detect",
        )
        try:
            raw = read_json(out_path)
        except DataError as exc:
            raise BackendError(f"worker detect output: {exc}") from None
        try:
            results = decode_detections(raw, where=out_path.name)
        except DataError as exc:
            raise BackendError(str(exc)) from None
        return _threshold_results(results, [i for i, _ in images], thresholds, out_path.name)

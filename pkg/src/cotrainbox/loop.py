"""The disagreement-based co-training loop over two detector views.

Both views start from the labeled split. Each cycle, every view offers a
random slice of its fresh self-labels (subject to frame-gap rules on video
sequences, capped at its most confident `m`), the other view re-detects
those images itself and keeps the `n` it scores lowest, the received labels
are fused into its accumulated pool (newer labels replace older ones per
image), both detectors retrain on labeled data plus their pools, and the
pools' sources are refreshed by re-detecting the whole unlabeled split.
The loop stops once the agreement between consecutive view-1 snapshots has
been stable for enough cycles past the minimum, or at the hard cap.

Checkpoints are written per cycle and runs resume from the latest one;
everything random is derived from the run seed, so a resumed run is
byte-identical to an uninterrupted one.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .backends import DetectorBackend, ModelHandle, TrainImage, TrainRequest
from .checkpoint import (
    CycleMetrics,
    CycleState,
    append_log_row,
    latest_cycle,
    load_checkpoint,
    save_checkpoint,
    truncate_log,
)
from .config import CoTrainConfig, FrameGapRule
from .dataset import ViewPairedDataset
from .errors import DataError
from .evaluation import stop_metric_map
from .seeding import child_rng
from .types import (
    LabelRecord,
    PseudoLabelSet,
    image_confidence,
    transform_box,
    transform_detections,
)

FrameKey = tuple[str, int]


def _payload_ref(dataset: ViewPairedDataset, image_id: str, view: int) -> str:
    refs = dataset.by_id()[image_id].view_refs
    if view == 2:
        return refs.get("v2") or refs.get("v1") or ""
    return refs.get("v1") or ""


def _view_labels(dataset: ViewPairedDataset, image_id: str, view: int) -> tuple[LabelRecord, ...]:
    labels = dataset.labels[image_id]
    if view == 1:
        return tuple(labels)
    transform = dataset.view2_transform
    return tuple(
        LabelRecord(transform_box(rec.box, transform), rec.category, rec.source, rec.cycle)
        for rec in labels
    )


def build_train_request(
    dataset: ViewPairedDataset,
    view: int,
    pool: PseudoLabelSet | None = None,
) -> TrainRequest:
    """Labeled split plus an optional pseudo-label pool, in one view's frame.

    Labeled images carry their (transformed) annotations and allow negative
    mining; pseudo images never do. The pool must not overlap the labeled
    split.
    """
    images = []
    labeled = dataset.labeled_ids()
    for image_id in labeled:
        images.append(
            TrainImage(
                image_id=image_id,
                payload_ref=_payload_ref(dataset, image_id, view),
                labels=_view_labels(dataset, image_id, view),
                mine_negatives=True,
            )
        )
    if pool is not None:
        if pool.view != view:
            raise DataError(f"pool is in view {pool.view} frame, request wants view {view}")
        overlap = set(pool.entries) & set(labeled)
        if overlap:
            raise DataError(
                f"pseudo-label pool overlaps the labeled split: {sorted(overlap)[:3]}"
            )
        known = dataset.by_id()
        for image_id in pool.image_ids():
            if image_id not in known:
                raise DataError(f"pseudo-label pool references unknown image {image_id!r}")
            labels = tuple(
                LabelRecord(det.box, det.category, "pseudo", cycle=pool.cycle)
                for det in pool.entries[image_id]
            )
            images.append(
                TrainImage(
                    image_id=image_id,
                    payload_ref=_payload_ref(dataset, image_id, view),
                    labels=labels,
                    mine_negatives=False,
                )
            )
    return TrainRequest(view=view, images=tuple(images))


def detect_pool(
    backend: DetectorBackend,
    handle: ModelHandle,
    dataset: ViewPairedDataset,
    thresholds: Mapping[str, float],
    stream: tuple | None = None,
) -> PseudoLabelSet:
    """Detect on the whole unlabeled split; images with no detections left
    above threshold are dropped from the resulting set."""
    ids = dataset.unlabeled_ids()
    images = [(image_id, _payload_ref(dataset, image_id, handle.view)) for image_id in ids]
    results = backend.detect(handle, images, thresholds, stream=stream)
    entries = {image_id: dets for image_id, dets in results.items() if dets}
    return PseudoLabelSet(view=handle.view, cycle=handle.cycle, entries=entries)


def rand_select(
    candidates: PseudoLabelSet,
    dataset: ViewPairedDataset,
    pool_size: int,
    gap: FrameGapRule | None,
    history: set[FrameKey],
    rng,
) -> tuple[PseudoLabelSet, set[FrameKey]]:
    """Random candidate slice with frame-gap thinning on sequences.

    Sequence frames are scanned in ascending frame order; a frame survives
    only if it is at least `min_gap_new` frames from the previously kept
    frame of the same sequence in this pass and at least `min_gap_history`
    frames from every frame of that sequence selected in earlier cycles.
    Images without sequence structure always survive. At most `pool_size`
    survivors are kept, uniformly at random. Selected sequence frames are
    added to the returned history.
    """
    table = dataset.by_id()
    survivors: list[str] = []
    by_sequence: dict[str, list[tuple[int, str]]] = {}
    for image_id in candidates.image_ids():
        record = table.get(image_id)
        if record is None:
            raise DataError(f"candidate set references unknown image {image_id!r}")
        if gap is None or record.sequence_id is None:
            survivors.append(image_id)
        else:
            by_sequence.setdefault(record.sequence_id, []).append(
                (record.frame_index, image_id)
            )
    for sequence_id in sorted(by_sequence):
        frames = sorted(by_sequence[sequence_id])
        past = [f for (s, f) in history if s == sequence_id]
        last_kept: int | None = None
        for frame_index, image_id in frames:
            if last_kept is not None and frame_index - last_kept < gap.min_gap_new:
                continue
            if any(abs(frame_index - h) < gap.min_gap_history for h in past):
                continue
            survivors.append(image_id)
            last_kept = frame_index
    survivors.sort()
    if len(survivors) > pool_size:
        picked = rng.choice(len(survivors), size=pool_size, replace=False)
        selected = sorted(survivors[i] for i in picked)
    else:
        selected = survivors
    new_history = set(history)
    for image_id in selected:
        record = table[image_id]
        if record.sequence_id is not None:
            new_history.add((record.sequence_id, record.frame_index))
    entries = {image_id: candidates.entries[image_id] for image_id in selected}
    return (
        PseudoLabelSet(view=candidates.view, cycle=candidates.cycle, entries=entries),
        new_history,
    )


def select_top_m(candidates: PseudoLabelSet, share_limit: float) -> PseudoLabelSet:
    """Keep the `share_limit` images with highest mean confidence (ties by
    image id). An infinite limit shares everything."""
    if math.isinf(share_limit):
        return candidates
    limit = int(share_limit)
    ranked = sorted(
        candidates.entries,
        key=lambda image_id: (-image_confidence(candidates.entries[image_id]), image_id),
    )
    entries = {image_id: candidates.entries[image_id] for image_id in ranked[:limit]}
    return PseudoLabelSet(view=candidates.view, cycle=candidates.cycle, entries=entries)


def cross_score(
    backend: DetectorBackend,
    handle: ModelHandle,
    offered: PseudoLabelSet,
    dataset: ViewPairedDataset,
    thresholds: Mapping[str, float],
    stream: tuple | None = None,
):
    """Receiver re-detects the offered images in its own view.

    Returns (scores, results): per-image mean confidence of the receiver's
    own thresholded detections (0.0 where it sees nothing), plus the raw
    detection mapping for receiver-label exchanges.
    """
    ids = offered.image_ids()
    images = [(image_id, _payload_ref(dataset, image_id, handle.view)) for image_id in ids]
    results = backend.detect(handle, images, thresholds, stream=stream)
    scores = {image_id: image_confidence(results[image_id]) for image_id in ids}
    return scores, results


def select_bottom_n(
    offered: PseudoLabelSet,
    scores: Mapping[str, float],
    receiver_results: Mapping[str, tuple],
    exchange_size: int,
    dataset: ViewPairedDataset,
    receiver_view: int,
    exchange_labels: str = "sender",
) -> PseudoLabelSet:
    """The exchange: keep the `exchange_size` images the receiver scored
    lowest (ties by image id) and label them for the receiver's frame.

    With `exchange_labels="sender"` the sender's boxes are carried over,
    transformed between view frames if needed; with `"receiver"` the
    receiver's own re-detections are used instead and images where it saw
    nothing are dropped.
    """
    ranked = sorted(offered.image_ids(), key=lambda image_id: (scores[image_id], image_id))
    chosen = ranked[:exchange_size]
    entries = {}
    if exchange_labels == "sender":
        transform = dataset.view2_transform
        for image_id in chosen:
            dets = offered.entries[image_id]
            if offered.view != receiver_view:
                dets = transform_detections(dets, transform)
            entries[image_id] = tuple(dets)
    elif exchange_labels == "receiver":
        for image_id in chosen:
            dets = tuple(receiver_results.get(image_id, ()))
            if dets:
                entries[image_id] = dets
    else:
        raise DataError(f"unknown exchange_labels mode {exchange_labels!r}")
    return PseudoLabelSet(view=receiver_view, cycle=offered.cycle, entries=entries)


def fuse(old: PseudoLabelSet, new: PseudoLabelSet) -> PseudoLabelSet:
    """Merge two pools in the same view frame; on images present in both,
    the newer labels win outright."""
    if old.view != new.view:
        raise DataError(f"cannot fuse pools from views {old.view} and {new.view}")
    entries = dict(old.entries)
    entries.update(new.entries)
    return PseudoLabelSet(view=old.view, cycle=new.cycle, entries=entries)


def update_stability(
    config: CoTrainConfig, last_metric: float | None, metric: float, counter: int
) -> int:
    """Consecutive-stable-cycle counter: the first cycle has nothing to
    compare against and keeps the counter; afterwards a jump resets it."""
    if last_metric is None:
        return counter
    if abs(metric - last_metric) < config.stop.map_tolerance:
        return counter + 1
    return 0


def should_stop(config: CoTrainConfig, cycle: int, stability_counter: int) -> bool:
    stop = config.stop
    if cycle >= stop.max_cycles:
        return True
    return cycle >= stop.min_cycles and stability_counter >= stop.stability_cycles


def initialize(
    config: CoTrainConfig,
    dataset: ViewPairedDataset,
    backend: DetectorBackend,
) -> CycleState:
    """Cycle 0: train each view on the labeled split and take the first
    full-pool detection snapshots."""
    model1 = backend.train(build_train_request(dataset, 1), cycle=0)
    model2 = backend.train(build_train_request(dataset, 2), cycle=0)
    fresh1 = detect_pool(backend, model1, dataset, config.thresholds)
    fresh2 = detect_pool(backend, model2, dataset, config.thresholds)
    return CycleState(
        cycle=0,
        rng_seed=config.rng_seed,
        model1=model1,
        model2=model2,
        pool1=PseudoLabelSet(view=1, cycle=0),
        pool2=PseudoLabelSet(view=2, cycle=0),
        fresh1=fresh1,
        fresh2=fresh2,
        history1=set(),
        history2=set(),
        stability_counter=0,
        last_stop_metric=None,
        metrics=[],
    )


@dataclass
class RunResult:
    """Outcome of a co-training run: the final view-1 self-label snapshot
    (the deliverable), the final state, and how many cycles actually ran."""

    final: PseudoLabelSet
    state: CycleState
    cycles_run: int


def run_cycle(
    config: CoTrainConfig,
    dataset: ViewPairedDataset,
    backend: DetectorBackend,
    state: CycleState,
) -> CycleState:
    """Advance the loop by one cycle and return the new state."""
    k = state.cycle + 1
    old_fresh1 = state.fresh1

    rng1 = child_rng(config.rng_seed, "rand", k, 1)
    rng2 = child_rng(config.rng_seed, "rand", k, 2)
    picked1, history1 = rand_select(
        state.fresh1, dataset, config.candidate_pool_size, config.frame_gap, state.history1, rng1
    )
    picked2, history2 = rand_select(
        state.fresh2, dataset, config.candidate_pool_size, config.frame_gap, state.history2, rng2
    )
    up1 = select_top_m(picked1, config.share_limit)
    up2 = select_top_m(picked2, config.share_limit)

    # Each view scores the other's offer with its own detector and keeps
    # the images it handles worst.
    scores1, results1 = cross_score(backend, state.model1, up2, dataset, config.thresholds)
    scores2, results2 = cross_score(backend, state.model2, up1, dataset, config.thresholds)
    down1 = select_bottom_n(
        up2, scores1, results1, config.exchange_size, dataset, 1, config.exchange_labels
    )
    down2 = select_bottom_n(
        up1, scores2, results2, config.exchange_size, dataset, 2, config.exchange_labels
    )

    pool1 = fuse(state.pool1, down1)
    pool2 = fuse(state.pool2, down2)

    model1 = backend.train(build_train_request(dataset, 1, pool1), cycle=k)
    model2 = backend.train(build_train_request(dataset, 2, pool2), cycle=k)
    fresh1 = detect_pool(backend, model1, dataset, config.thresholds)
    fresh2 = detect_pool(backend, model2, dataset, config.thresholds)

    stop_map = stop_metric_map(old_fresh1, fresh1)
    counter = update_stability(config, state.last_stop_metric, stop_map, state.stability_counter)
    metrics = CycleMetrics(
        cycle=k,
        stop_map=stop_map,
        n_img_1=fresh1.num_images,
        n_box_1=fresh1.num_boxes,
        n_img_2=fresh2.num_images,
        n_box_2=fresh2.num_boxes,
        n_up=up1.num_images + up2.num_images,
        n_down=down1.num_images + down2.num_images,
    )
    return CycleState(
        cycle=k,
        rng_seed=state.rng_seed,
        model1=model1,
        model2=model2,
        pool1=pool1,
        pool2=pool2,
        fresh1=fresh1,
        fresh2=fresh2,
        history1=history1,
        history2=history2,
        stability_counter=counter,
        last_stop_metric=stop_map,
        metrics=list(state.metrics) + [metrics],
    )


def run(
    config: CoTrainConfig,
    dataset: ViewPairedDataset,
    backend: DetectorBackend,
    run_dir: str | Path | None = None,
    resume: bool = True,
) -> RunResult:
    """Run the loop to its stop condition, checkpointing every cycle.

    With `run_dir` set, each cycle writes a checkpoint and a log row, and
    an interrupted run picks up from the latest checkpoint when `resume`
    is true. The returned snapshot is the view-1 fresh set at stop time.
    """
    state: CycleState | None = None
    if run_dir is not None and resume:
        last = latest_cycle(run_dir)
        if last is not None:
            state = load_checkpoint(run_dir, last)
            if state.rng_seed != config.rng_seed:
                raise DataError(
                    f"checkpoint at {run_dir} was written with seed {state.rng_seed}, "
                    f"config says {config.rng_seed}"
                )
            truncate_log(run_dir, state.cycle)
    if state is None:
        state = initialize(config, dataset, backend)
    while not should_stop(config, state.cycle, state.stability_counter):
        started = time.monotonic()
        state = run_cycle(config, dataset, backend, state)
        seconds = time.monotonic() - started
        if run_dir is not None:
            save_checkpoint(state, run_dir)
            append_log_row(run_dir, state.metrics[-1], seconds)
    return RunResult(final=state.fresh1, state=state, cycles_run=state.cycle)


def train_final(
    backend: DetectorBackend,
    dataset: ViewPairedDataset,
    pseudo: PseudoLabelSet | None = None,
    view: int = 1,
    cycle: int = 0,
) -> ModelHandle:
    """Train one detector on the labeled split plus an optional finished
    self-label set (the downstream consumer of a co-training run)."""
    if pseudo is not None and pseudo.view != view:
        raise DataError(f"pseudo labels are in view {pseudo.view} frame, wanted view {view}")
    return backend.train(build_train_request(dataset, view, pseudo), cycle=cycle)

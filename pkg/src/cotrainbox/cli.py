"""Command-line front end: experiment runner and report emitter.

Subcommands:

  gen-world    write a synthetic world (dataset manifest + truth.json)
  run          execute the cells of an experiment manifest
  eval         score a detections file against ground truth
  audit        measure pseudo-label quality and write corrected variants
  cycle-curve  retrain the final detector from each checkpointed cycle

Everything is deterministic under explicit seeds and emits reports as
both JSON and plot-ready CSV; no plotting happens in-process. Exit codes:
2 for usage errors (argparse), 3 for data errors, 4 for backend errors.
The COTRAIN_WORKER environment variable, when set, forces the external
worker backend with that executable for `run`, overriding the manifest.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .backends import DetectorBackend, ExternalWorkerBackend
from .checkpoint import LOG_COLUMNS, checkpointed_cycles, cycle_dir
from .config import CoTrainConfig, default_config, load_config
from .dataset import ViewPairedDataset, dataset_from_obj, load_dataset, save_dataset, split_labeled
from .errors import BackendError, DataError
from .evaluation import (
    EvalProtocol,
    EvalReport,
    audit_pseudo_labels,
    default_protocol,
    evaluate,
    resize_boxes_per_category,
)
from .jsonio import read_json, write_json
from .loop import run, train_final
from .simulator import (
    SequenceLayout,
    SimDetectorParams,
    SimWorld,
    SimulatedBackend,
    WorldConfig,
    evaluate_on_holdout,
    generate_world,
    load_world,
    save_world,
)
from .types import DetectionRecord, PseudoLabelSet, box_from_obj


# ---------------------------------------------------------------------------
# shared file helpers


def _load_detections(path: str | Path) -> dict[str, tuple[DetectionRecord, ...]]:
    """Read a detections file: {image_id: [{category, bbox, confidence}]}.

    A pseudo-label set file (with view/cycle/entries) is accepted too; its
    entries are used directly.
    """
    obj = read_json(path)
    where = str(path)
    if isinstance(obj, dict) and "entries" in obj and "view" in obj:
        return dict(PseudoLabelSet.from_obj(obj, where=where).entries)
    if not isinstance(obj, dict):
        raise DataError(f"{where}: expected an object mapping image ids to detections")
    out: dict[str, tuple[DetectionRecord, ...]] = {}
    for image_id, raw_dets in obj.items():
        if not isinstance(raw_dets, list):
            raise DataError(f"{where}[{image_id!r}]: expected a list")
        dets = []
        for i, raw in enumerate(raw_dets):
            here = f"{where}[{image_id!r}][{i}]"
            if not isinstance(raw, dict):
                raise DataError(f"{here}: expected an object")
            for key in ("category", "bbox", "confidence"):
                if key not in raw:
                    raise DataError(f"{here}.{key}: missing")
            conf = raw["confidence"]
            if not isinstance(conf, (int, float)) or isinstance(conf, bool):
                raise DataError(f"{here}.confidence: expected a number")
            dets.append(
                DetectionRecord(
                    box_from_obj(raw["bbox"], where=f"{here}.bbox"),
                    str(raw["category"]),
                    float(conf),
                )
            )
        out[str(image_id)] = tuple(dets)
    return out


def _load_ground_truth(path: str | Path, image_ids: Sequence[str]):
    """Ground truth for `image_ids` from a truth file, a dataset manifest,
    or a plain {image_id: [{category, bbox}]} mapping.

    Truth files and manifests usually cover far more images than one
    detections file, so the ground truth is restricted to the ids under
    evaluation; an image missing from the source counts as empty.
    """
    obj = read_json(path)
    where = str(path)
    if isinstance(obj, dict) and "config" in obj and "version" in obj:
        world = load_world(path)
        known = {img.record.image_id for img in world.images}
        missing = [i for i in image_ids if i not in known]
        if missing:
            raise DataError(f"{where}: no ground truth for image {missing[0]!r}")
        return world.gt_by_image(list(image_ids))
    if isinstance(obj, dict) and isinstance(obj.get("images"), list):
        dataset = dataset_from_obj(obj, where=where)
        return {i: dataset.labels.get(i, ()) for i in image_ids}
    dets = _load_detections(path)
    return {i: dets.get(i, ()) for i in image_ids} if image_ids else dets


def _write_report(report: EvalReport, out_dir: Path, stem: str = "eval") -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / f"{stem}.json", report.to_obj())
    with (out_dir / f"{stem}.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["category", "ap", "num_gt", "num_gt_ignored", "tp", "fp", "fn", "num_dets", "num_dets_ignored"]
        )
        for cat, rep in sorted(report.per_category.items()):
            writer.writerow(
                [
                    cat,
                    f"{rep.ap:.6f}",
                    rep.num_gt,
                    rep.num_gt_ignored,
                    rep.tp,
                    rep.fp,
                    rep.fn,
                    rep.num_dets,
                    rep.num_dets_ignored,
                ]
            )
        writer.writerow(["mean", f"{report.mean_ap:.6f}", "", "", "", "", "", "", ""])


def _parse_pairs(pairs: Sequence[str], flag: str, parser: argparse.ArgumentParser) -> dict[str, float]:
    out: dict[str, float] = {}
    for pair in pairs:
        name, sep, value = pair.partition("=")
        if not sep or not name:
            parser.error(f"{flag} expects CATEGORY=NUMBER, got {pair!r}")
        try:
            out[name] = float(value)
        except ValueError:
            parser.error(f"{flag} {pair!r}: {value!r} is not a number")
    return out


def _protocol_from_args(args: argparse.Namespace, parser: argparse.ArgumentParser) -> EvalProtocol:
    base = default_protocol()
    thresholds = dict(base.iou_thresholds)
    thresholds.update(_parse_pairs(args.iou or [], "--iou", parser))
    return EvalProtocol(
        min_height=args.min_height,
        iou_thresholds=thresholds,
        default_iou=args.default_iou,
        recall_points=args.recall_points,
    )


def _empty_log(run_dir: Path) -> None:
    path = run_dir / "log.csv"
    if not path.exists():
        with path.open("w", newline="") as fh:
            csv.writer(fh).writerow(LOG_COLUMNS)


# ---------------------------------------------------------------------------
# gen-world


def cmd_gen_world(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    sequences = None
    if args.sequences:
        count, sep, length = args.sequences.partition("x")
        if not sep or not count.isdigit() or not length.isdigit():
            parser.error(f"--sequences expects COUNTxLENGTH, got {args.sequences!r}")
        sequences = SequenceLayout(int(count), int(length), frame_jitter=args.frame_jitter)
    config = WorldConfig(
        num_images=args.images,
        holdout_images=args.holdout,
        view_correlation=args.rho,
        view2_kind=args.view2,
        view2_difficulty_offset=args.view2_offset,
        sequences=sequences,
        seed=args.seed,
    )
    world = generate_world(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_world(world, out / "truth.json")
    save_dataset(world.dataset(), out / "manifest.json")
    pool = [img for img in world.images if not img.holdout]
    n_boxes = sum(len(img.objects) for img in pool)
    print(f"world {args.seed}: {len(pool)} pool images ({n_boxes} boxes), "
          f"{len(world.images) - len(pool)} holdout, rho {args.rho} -> {out}")
    return 0


# ---------------------------------------------------------------------------
# run


@dataclass(frozen=True)
class ExperimentCell:
    name: str
    dataset: str  # key into ExperimentManifest.datasets
    labeled_percent: float
    seed: int
    cotrain: bool = True


@dataclass(frozen=True)
class ExperimentManifest:
    """One experiment grid: shared dataset/config/backend, one row per cell."""

    datasets: dict[str, str]
    cells: tuple[ExperimentCell, ...]
    out: str | None = None
    config_path: str | None = None
    backend: str = "simulated"
    sim_params: SimDetectorParams | None = None


def _experiment_from_obj(obj: object, where: str) -> ExperimentManifest:
    if not isinstance(obj, dict):
        raise DataError(f"{where}: expected a JSON object")
    if obj.get("version") != 1:
        raise DataError(f"{where}: expected version 1")
    raw_datasets = obj.get("datasets")
    if not isinstance(raw_datasets, dict) or not raw_datasets:
        raise DataError(f"{where}.datasets: expected a non-empty object of name -> path")
    datasets = {str(k): str(v) for k, v in raw_datasets.items()}
    raw_cells = obj.get("cells")
    if not isinstance(raw_cells, list) or not raw_cells:
        raise DataError(f"{where}.cells: expected a non-empty list")
    cells = []
    names: set[str] = set()
    for i, raw in enumerate(raw_cells):
        here = f"{where}.cells[{i}]"
        if not isinstance(raw, dict):
            raise DataError(f"{here}: expected an object")
        for key in ("name", "dataset", "labeled_percent", "seed"):
            if key not in raw:
                raise DataError(f"{here}: missing field {key!r}")
        name = str(raw["name"])
        if name in names:
            raise DataError(f"{here}: duplicate cell name {name!r}")
        names.add(name)
        dataset = str(raw["dataset"])
        if dataset not in datasets:
            raise DataError(f"{here}.dataset: unknown dataset {dataset!r}")
        try:
            cells.append(
                ExperimentCell(
                    name=name,
                    dataset=dataset,
                    labeled_percent=float(raw["labeled_percent"]),
                    seed=int(raw["seed"]),
                    cotrain=bool(raw.get("cotrain", True)),
                )
            )
        except (TypeError, ValueError) as exc:
            raise DataError(f"{here}: {exc}") from None
    sim_params = None
    if "sim_params" in obj:
        sim_params = SimDetectorParams.from_obj(obj["sim_params"], where=f"{where}.sim_params")
    config_path = obj.get("config")
    backend = obj.get("backend", "simulated")
    if not isinstance(backend, str) or not backend:
        raise DataError(f"{where}.backend: expected 'simulated' or a worker executable path")
    out = obj.get("out")
    return ExperimentManifest(
        datasets=datasets,
        cells=tuple(cells),
        out=str(out) if out is not None else None,
        config_path=str(config_path) if config_path is not None else None,
        backend=backend,
        sim_params=sim_params,
    )


def _load_dataset_source(path: str | Path) -> tuple[ViewPairedDataset, SimWorld | None]:
    """Resolve a dataset reference: a world directory (with truth.json), a
    truth file, or a plain dataset manifest. Returns the world when there
    is one so the simulated backend and holdout evaluation can use it."""
    p = Path(path)
    if p.is_dir():
        if (p / "truth.json").exists():
            world = load_world(p / "truth.json")
            return world.dataset(), world
        if (p / "manifest.json").exists():
            return load_dataset(p / "manifest.json"), None
        raise DataError(f"{p}: no truth.json or manifest.json in directory")
    obj = read_json(p)
    if isinstance(obj, dict) and "config" in obj and "version" in obj:
        world = load_world(p)
        return world.dataset(), world
    return dataset_from_obj(obj, where=str(p)), None


def _resolve_backend(
    spec: str,
    world: SimWorld | None,
    sim_params: SimDetectorParams | None,
    work_dir: Path,
) -> DetectorBackend:
    worker = os.environ.get("COTRAIN_WORKER")
    if worker:
        return ExternalWorkerBackend(worker, work_dir)
    if spec == "simulated":
        if world is None:
            raise DataError(
                "the simulated backend needs a world (truth.json); "
                "point the cell's dataset at a gen-world output"
            )
        return SimulatedBackend(world, sim_params or SimDetectorParams())
    return ExternalWorkerBackend(spec, work_dir)


def _run_cell(
    cell: ExperimentCell,
    manifest: ExperimentManifest,
    base_dir: Path,
    cell_dir: Path,
) -> dict:
    dataset_path = base_dir / manifest.datasets[cell.dataset]
    full, world = _load_dataset_source(dataset_path)
    if manifest.config_path is not None:
        config = load_config(base_dir / manifest.config_path)
        if config.view2_transform != full.view2_transform:
            raise DataError(
                "config view2_transform does not match the dataset's "
                f"({config.view2_transform.kind!r} vs {full.view2_transform.kind!r})"
            )
    else:
        config = default_config(
            view2_transform=full.view2_transform,
            with_frame_gaps=any(r.sequence_id is not None for r in full.images),
        )
    config = replace(config, rng_seed=cell.seed)
    data = split_labeled(full, cell.labeled_percent, seed=cell.seed)
    backend = _resolve_backend(
        manifest.backend, world, manifest.sim_params, cell_dir / "worker"
    )
    cell_dir.mkdir(parents=True, exist_ok=True)

    cycles_run = 0
    pseudo = None
    if cell.cotrain and data.unlabeled_ids():
        result = run(config, data, backend, run_dir=cell_dir)
        cycles_run = result.cycles_run
        pseudo = result.final
        write_json(cell_dir / "dpl1.json", result.state.fresh1.to_obj())
        write_json(cell_dir / "dpl2.json", result.state.fresh2.to_obj())
    else:
        _empty_log(cell_dir)

    final = train_final(backend, data, pseudo)
    mean_ap = None
    if isinstance(backend, SimulatedBackend):
        report = evaluate_on_holdout(backend, final)
        _write_report(report, cell_dir)
        mean_ap = report.mean_ap

    labeled = data.labeled_ids()
    summary = {
        "name": cell.name,
        "dataset": str(dataset_path),
        "labeled_percent": cell.labeled_percent,
        "seed": cell.seed,
        "cotrain": cell.cotrain,
        "backend": "external" if not isinstance(backend, SimulatedBackend) else "simulated",
        "config": config.to_obj(),
        "cycles_run": cycles_run,
        "labeled_images": len(labeled),
        "labeled_boxes": sum(len(data.labels[i]) for i in labeled),
        "pseudo_images": pseudo.num_images if pseudo is not None else 0,
        "pseudo_boxes": pseudo.num_boxes if pseudo is not None else 0,
        "mean_ap": mean_ap,
    }
    write_json(cell_dir / "cell.json", summary)
    return summary


def cmd_run(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    manifest_path = Path(args.manifest)
    manifest = _experiment_from_obj(read_json(manifest_path), where=str(manifest_path))
    out = args.out or manifest.out
    if out is None:
        parser.error("no output directory: pass --out or set 'out' in the manifest")
    out_dir = Path(out)
    base_dir = manifest_path.parent
    summaries = []
    for cell in manifest.cells:
        try:
            summary = _run_cell(cell, manifest, base_dir, out_dir / "cells" / cell.name)
        except DataError as exc:
            raise DataError(f"cell {cell.name!r}: {exc}") from None
        except BackendError as exc:
            raise BackendError(f"cell {cell.name!r}: {exc}") from None
        summaries.append(summary)
        shown = "-" if summary["mean_ap"] is None else f"{summary['mean_ap']:.2f}"
        print(
            f"cell {cell.name}: p={cell.labeled_percent:g} seed={cell.seed} "
            f"cycles={summary['cycles_run']} "
            f"pseudo={summary['pseudo_images']}/{summary['pseudo_boxes']} mAP={shown}"
        )
    write_json(out_dir / "experiment.json", summaries)
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    dets = _load_detections(args.dets)
    gt = _load_ground_truth(args.gt, sorted(dets))
    if args.resize:
        categories = {d.category for entry in dets.values() for d in entry}
        factors = {cat: 1.0 for cat in categories}
        factors.update(_parse_pairs(args.resize, "--resize", parser))
        dets = {i: resize_boxes_per_category(entry, factors) for i, entry in dets.items()}
    report = evaluate(dets, gt, _protocol_from_args(args, parser))
    if args.out:
        _write_report(report, Path(args.out))
    for cat, rep in sorted(report.per_category.items()):
        print(f"{cat}: AP {rep.ap:.2f} (gt {rep.num_gt}, tp {rep.tp}, fp {rep.fp}, fn {rep.fn})")
    print(f"mean AP: {report.mean_ap:.2f}")
    return 0


# ---------------------------------------------------------------------------
# audit


def cmd_audit(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    obj = read_json(args.dpl)
    pseudo = PseudoLabelSet.from_obj(obj, where=str(args.dpl))
    world = load_world(args.truth)
    known = {img.record.image_id for img in world.images}
    missing = [i for i in pseudo.image_ids() if i not in known]
    if missing:
        raise DataError(f"{args.truth}: no ground truth for image {missing[0]!r}")
    gt = world.gt_by_image(pseudo.image_ids(), view=pseudo.view)
    thresholds = None
    if args.iou:
        thresholds = dict(default_protocol().iou_thresholds)
        thresholds.update(_parse_pairs(args.iou, "--iou", parser))
    report = audit_pseudo_labels(pseudo, gt, args.labeled_boxes, thresholds)
    out_dir = Path(args.out) if args.out else Path(args.dpl).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "audit.json", report.to_obj())
    for setting, variant in report.corrected.items():
        write_json(out_dir / f"dpl_{setting.replace('_', '')}.json", variant.to_obj())
    print(
        f"{report.num_pseudo_boxes} pseudo boxes, {report.num_false_positive} FP "
        f"({report.fp_percent:.2f}% of labeled+pseudo) -> {out_dir}"
    )
    return 0


# ---------------------------------------------------------------------------
# cycle-curve


def _curve_defaults(run_dir: Path, args: argparse.Namespace) -> tuple[str, float, int]:
    """Fill truth/percent/seed from the cell summary when flags are absent."""
    truth, percent, seed = args.truth, args.percent, args.seed
    cell_path = run_dir / "cell.json"
    if cell_path.exists():
        cell = read_json(cell_path)
        if isinstance(cell, dict):
            if truth is None and isinstance(cell.get("dataset"), str):
                truth = cell["dataset"]
            if percent is None and isinstance(cell.get("labeled_percent"), (int, float)):
                percent = float(cell["labeled_percent"])
            if seed is None and isinstance(cell.get("seed"), int):
                seed = cell["seed"]
    if truth is None:
        raise DataError("no world to retrain against: pass --truth or run from a cell directory")
    if percent is None or seed is None:
        raise DataError("pass --percent and --seed (not recoverable from this run directory)")
    return truth, percent, seed


def cmd_cycle_curve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    run_dir = Path(args.run)
    truth, percent, seed = _curve_defaults(run_dir, args)
    _, world = _load_dataset_source(truth)
    if world is None:
        raise DataError(f"{truth}: cycle-curve needs a world (truth.json) to evaluate against")
    params = SimDetectorParams()
    if args.sim_params:
        params = SimDetectorParams.from_obj(read_json(args.sim_params), where=str(args.sim_params))
    backend = SimulatedBackend(world, params)
    data = split_labeled(world.dataset(), percent, seed=seed)

    cycles = checkpointed_cycles(run_dir)
    if cycles:
        gaps = sorted(set(range(1, max(cycles) + 1)) - set(cycles))
        for k in gaps:
            print(f"warning: no checkpoint for cycle {k}, row skipped", file=sys.stderr)

    rows: list[tuple[int, EvalReport]] = []
    baseline = train_final(backend, data)
    rows.append((0, evaluate_on_holdout(backend, baseline)))
    for k in cycles:
        pseudo_path = cycle_dir(run_dir, k) / "dpl1.json"
        pseudo = PseudoLabelSet.from_obj(read_json(pseudo_path), where=str(pseudo_path))
        handle = train_final(backend, data, pseudo)
        rows.append((k, evaluate_on_holdout(backend, handle)))

    categories = sorted(rows[0][1].per_category)
    out_path = Path(args.out) if args.out else run_dir / "cycle_curve.csv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cycle", "mean_ap", *(f"ap_{cat}" for cat in categories)])
        for k, report in rows:
            writer.writerow(
                [
                    k,
                    f"{report.mean_ap:.6f}",
                    *(f"{report.per_category[cat].ap:.6f}" for cat in categories),
                ]
            )
    write_json(
        out_path.with_suffix(".json"),
        [{"cycle": k, **report.to_obj()} for k, report in rows],
    )
    last = rows[-1]
    print(f"{len(rows)} rows (cycles 0..{last[0]}), final mAP {last[1].mean_ap:.2f} -> {out_path}")
    return 0


# ---------------------------------------------------------------------------
# parser wiring


def _add_protocol_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--min-height", type=float, default=25.0, help="minimum GT box height in pixels (default 25)")
    sub.add_argument("--iou", action="append", metavar="CATEGORY=THR", help="per-category IoU threshold override (repeatable)")
    sub.add_argument("--default-iou", type=float, default=0.5, help="IoU threshold for categories not listed (default 0.5)")
    sub.add_argument("--recall-points", type=int, default=11, help="AP interpolation points (default 11)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cotrainbox",
        description="Co-training engine for self-labeling 2D bounding boxes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-world", help="generate a synthetic two-view world")
    gen.add_argument("--out", required=True, help="output directory (manifest.json + truth.json)")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--images", type=int, default=WorldConfig.num_images)
    gen.add_argument("--holdout", type=int, default=WorldConfig.holdout_images)
    gen.add_argument("--rho", type=float, default=WorldConfig.view_correlation, help="per-view difficulty correlation in [-1, 1]")
    gen.add_argument("--view2", choices=["identity", "horizontal_mirror"], default="identity")
    gen.add_argument("--view2-offset", type=float, default=0.0, help="additive difficulty offset for view 2")
    gen.add_argument("--sequences", metavar="COUNTxLENGTH", help="generate sequences instead of independent images")
    gen.add_argument("--frame-jitter", type=float, default=4.0, help="per-frame box jitter inside a sequence")
    gen.set_defaults(func=cmd_gen_world)

    runp = sub.add_parser("run", help="run the cells of an experiment manifest")
    runp.add_argument("--manifest", required=True, help="experiment manifest (JSON)")
    runp.add_argument("--out", help="output directory (overrides the manifest's)")
    runp.set_defaults(func=cmd_run)

    evalp = sub.add_parser("eval", help="score detections against ground truth")
    evalp.add_argument("--dets", required=True, help="detections file or pseudo-label set (JSON)")
    evalp.add_argument("--gt", required=True, help="truth.json, dataset manifest, or detections-shaped GT file")
    evalp.add_argument("--out", help="directory for eval.json and eval.csv")
    evalp.add_argument("--resize", action="append", metavar="CATEGORY=FACTOR", help="scale boxes about their centers before scoring (repeatable)")
    _add_protocol_flags(evalp)
    evalp.set_defaults(func=cmd_eval)

    auditp = sub.add_parser("audit", help="audit pseudo-labels against a world's truth")
    auditp.add_argument("--dpl", required=True, help="pseudo-label set file (JSON)")
    auditp.add_argument("--truth", required=True, help="truth.json from gen-world")
    auditp.add_argument("--labeled-boxes", required=True, type=int, help="human-labeled box count (FP%% denominator)")
    auditp.add_argument("--out", help="output directory (default: next to the dpl file)")
    auditp.add_argument("--iou", action="append", metavar="CATEGORY=THR", help="per-category matching IoU override (repeatable)")
    auditp.set_defaults(func=cmd_audit)

    curvep = sub.add_parser("cycle-curve", help="final-detector mAP as a function of the stopping cycle")
    curvep.add_argument("--run", required=True, help="run directory with cycles/<k>/ checkpoints")
    curvep.add_argument("--truth", help="world to retrain and evaluate against (default: from cell.json)")
    curvep.add_argument("--percent", type=float, help="labeled split percentage (default: from cell.json)")
    curvep.add_argument("--seed", type=int, help="split seed (default: from cell.json)")
    curvep.add_argument("--sim-params", help="detector parameter overrides (JSON file)")
    curvep.add_argument("--out", help="output CSV path (default: <run>/cycle_curve.csv)")
    curvep.set_defaults(func=cmd_cycle_curve)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

"""Command line tests: exit codes, report files, and the full experiment flow.

The expensive part (gen-world -> run on a small world) happens once per
module; the flow tests then pick apart the output tree. Everything runs
in-process through cli.main except one subprocess test that pins the
interpreter-level exit codes.
"""

import csv
import shutil
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import pytest

import instances
from cotrainbox.cli import main
from cotrainbox.config import StopRule, default_config, save_config
from cotrainbox.evaluation import audit_pseudo_labels
from cotrainbox.jsonio import read_json, write_json
from cotrainbox.simulator import load_world
from cotrainbox.types import PseudoLabelSet, ViewTransform


def det_obj(category, box, confidence):
    return {"category": category, "bbox": list(box), "confidence": confidence}


def write_instance(seed, dets_path, gt_path):
    """Write one random evaluation instance as CLI-shaped JSON files.

    Ground-truth-only images get an empty detections entry so the CLI
    evaluates the same image set as the reference scorer.
    """
    dets_by_image, gt_by_image = instances.random_instance(seed)
    all_ids = sorted(set(dets_by_image) | set(gt_by_image))
    write_json(
        dets_path,
        {i: [det_obj(c, b, conf) for c, b, conf in dets_by_image.get(i, [])] for i in all_ids},
    )
    write_json(
        gt_path,
        {i: [det_obj(c, b, 1.0) for c, b in gt_by_image.get(i, [])] for i in all_ids},
    )
    return dets_by_image, gt_by_image


# ---------------------------------------------------------------------------
# usage and error exit codes


def test_missing_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_missing_required_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--gt", "somewhere.json"])
    assert exc.value.code == 2


def test_malformed_resize_pair_exits_2(tmp_path):
    write_json(tmp_path / "dets.json", {"im0": []})
    write_json(tmp_path / "gt.json", {"im0": []})
    with pytest.raises(SystemExit) as exc:
        main([
            "eval",
            "--dets", str(tmp_path / "dets.json"),
            "--gt", str(tmp_path / "gt.json"),
            "--resize", "vehicle",
        ])
    assert exc.value.code == 2


def test_malformed_sequences_flag_exits_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["gen-world", "--out", str(tmp_path / "w"), "--sequences", "3y4"])
    assert exc.value.code == 2


def test_missing_dets_file_exits_3(tmp_path, capsys):
    rc = main(["eval", "--dets", str(tmp_path / "nope.json"), "--gt", str(tmp_path / "nope.json")])
    assert rc == 3
    err = capsys.readouterr().err
    assert err.startswith("error: cannot read")


def test_unknown_image_in_truth_exits_3(tmp_path, world_dir, capsys):
    write_json(tmp_path / "dets.json", {"bogus": [det_obj("vehicle", (0, 0, 10, 30), 0.9)]})
    rc = main(["eval", "--dets", str(tmp_path / "dets.json"), "--gt", str(world_dir / "truth.json")])
    assert rc == 3
    assert "no ground truth for image 'bogus'" in capsys.readouterr().err


def test_broken_worker_exits_4(tmp_path, world_dir, monkeypatch, capsys):
    monkeypatch.setenv("COTRAIN_WORKER", str(tmp_path / "no-such-worker"))
    manifest = {
        "version": 1,
        "datasets": {"tiny": str(world_dir)},
        "cells": [
            {"name": "lb", "dataset": "tiny", "labeled_percent": 50.0, "seed": 1, "cotrain": False}
        ],
    }
    write_json(tmp_path / "exp.json", manifest)
    rc = main(["run", "--manifest", str(tmp_path / "exp.json"), "--out", str(tmp_path / "out")])
    assert rc == 4
    err = capsys.readouterr().err
    assert err.startswith("backend error: cell 'lb':")
    assert "cannot run worker" in err


def test_mismatched_view_transform_exits_3(tmp_path, world_dir, capsys):
    config = default_config(view2_transform=ViewTransform("horizontal_mirror", 1240.0))
    save_config(config, tmp_path / "config.json")
    manifest = {
        "version": 1,
        "datasets": {"tiny": str(world_dir)},
        "config": "config.json",
        "cells": [{"name": "cot", "dataset": "tiny", "labeled_percent": 10.0, "seed": 1}],
    }
    write_json(tmp_path / "exp.json", manifest)
    rc = main(["run", "--manifest", str(tmp_path / "exp.json"), "--out", str(tmp_path / "out")])
    assert rc == 3
    err = capsys.readouterr().err
    assert err.startswith("error: cell 'cot':")
    assert "view2_transform does not match" in err


def test_cycle_curve_without_context_exits_3(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    rc = main(["cycle-curve", "--run", str(tmp_path / "empty")])
    assert rc == 3
    assert "no world to retrain against" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# gen-world


@pytest.fixture(scope="module")
def world_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("world") / "w"
    rc = main([
        "gen-world", "--out", str(out),
        "--seed", "5", "--images", "36", "--holdout", "6", "--rho", "0.3",
    ])
    assert rc == 0
    return out


def test_gen_world_outputs_are_deterministic(tmp_path, world_dir, capsys):
    rc = main([
        "gen-world", "--out", str(tmp_path / "again"),
        "--seed", "5", "--images", "36", "--holdout", "6", "--rho", "0.3",
    ])
    assert rc == 0
    out = capsys.readouterr().out
    assert "36 pool images" in out
    assert "6 holdout" in out
    for name in ("truth.json", "manifest.json"):
        assert (tmp_path / "again" / name).read_bytes() == (world_dir / name).read_bytes()


# ---------------------------------------------------------------------------
# eval


def test_eval_matches_reference_scorer(tmp_path, capsys):
    dets_by_image, gt_by_image = write_instance(7, tmp_path / "dets.json", tmp_path / "gt.json")
    rc = main([
        "eval",
        "--dets", str(tmp_path / "dets.json"),
        "--gt", str(tmp_path / "gt.json"),
        "--out", str(tmp_path / "report"),
    ])
    assert rc == 0

    expected = ref_evaluate_default(dets_by_image, gt_by_image)
    report = read_json(tmp_path / "report" / "eval.json")
    assert report["mean_ap"] == pytest.approx(expected["mean_ap"], abs=1e-9)
    assert sorted(report["per_category"]) == sorted(expected["per_category"])
    for cat, ap in expected["per_category"].items():
        assert report["per_category"][cat]["ap"] == pytest.approx(ap, abs=1e-9)

    out = capsys.readouterr().out
    assert f"mean AP: {report['mean_ap']:.2f}" in out

    with (tmp_path / "report" / "eval.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "category"
    assert rows[-1][0] == "mean"
    assert float(rows[-1][1]) == pytest.approx(report["mean_ap"], abs=1e-6)


def ref_evaluate_default(dets_by_image, gt_by_image):
    import reference_eval

    return reference_eval.ref_evaluate(
        dets_by_image, gt_by_image, {"vehicle": 0.7, "pedestrian": 0.5}
    )


def test_eval_resize_turns_a_near_miss_into_a_hit(tmp_path, capsys):
    write_json(tmp_path / "dets.json", {"im0": [det_obj("vehicle", (10, 10, 30, 30), 0.9)]})
    write_json(tmp_path / "gt.json", {"im0": [det_obj("vehicle", (0, 0, 40, 40), 1.0)]})
    args = ["eval", "--dets", str(tmp_path / "dets.json"), "--gt", str(tmp_path / "gt.json")]

    assert main(args) == 0
    assert "mean AP: 0.00" in capsys.readouterr().out

    assert main(args + ["--resize", "vehicle=2.0"]) == 0
    assert "mean AP: 100.00" in capsys.readouterr().out


def test_eval_empty_detections_file_is_vacuous(tmp_path, capsys):
    write_json(tmp_path / "dets.json", {})
    write_json(tmp_path / "gt.json", {})
    rc = main(["eval", "--dets", str(tmp_path / "dets.json"), "--gt", str(tmp_path / "gt.json")])
    assert rc == 0
    assert "mean AP: 100.00" in capsys.readouterr().out


def test_eval_accepts_dataset_manifest_as_truth(tmp_path, world_dir, capsys):
    manifest = read_json(world_dir / "manifest.json")
    image_id, entries = next(
        (i, labels) for i, labels in sorted(manifest["labels"].items()) if labels
    )
    dets = {image_id: [det_obj(e["category"], e["bbox"], 0.9) for e in entries]}
    write_json(tmp_path / "dets.json", dets)
    rc = main(["eval", "--dets", str(tmp_path / "dets.json"), "--gt", str(world_dir / "manifest.json")])
    assert rc == 0
    assert "mean AP: 100.00" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# the full flow: run, then audit and cycle-curve on its outputs


@pytest.fixture(scope="module")
def flow(tmp_path_factory, world_dir):
    root = tmp_path_factory.mktemp("flow")
    config = replace(
        default_config(),
        stop=StopRule(min_cycles=2, max_cycles=4, stability_cycles=1, map_tolerance=2.0),
        candidate_pool_size=40,
        exchange_size=4,
    )
    save_config(config, root / "config.json")
    manifest = {
        "version": 1,
        "datasets": {"tiny": str(world_dir)},
        "config": "config.json",
        "cells": [
            {"name": "lb", "dataset": "tiny", "labeled_percent": 12.5, "seed": 4, "cotrain": False},
            {"name": "cot", "dataset": "tiny", "labeled_percent": 12.5, "seed": 4},
            {"name": "ub", "dataset": "tiny", "labeled_percent": 100.0, "seed": 4},
        ],
    }
    write_json(root / "experiment.json", manifest)
    out = root / "out"
    rc = main(["run", "--manifest", str(root / "experiment.json"), "--out", str(out)])
    assert rc == 0
    return out


def read_log(path):
    with path.open(newline="") as fh:
        return list(csv.reader(fh))


def test_flow_baseline_cell_skips_cotraining(flow):
    cell_dir = flow / "cells" / "lb"
    cell = read_json(cell_dir / "cell.json")
    assert cell["cotrain"] is False
    assert cell["cycles_run"] == 0
    assert cell["pseudo_images"] == 0 and cell["pseudo_boxes"] == 0
    assert cell["backend"] == "simulated"
    assert isinstance(cell["mean_ap"], float)
    assert cell["labeled_images"] > 0
    assert read_log(cell_dir / "log.csv") == [list(read_log_header())]
    assert not (cell_dir / "cycles").exists()
    assert not (cell_dir / "dpl1.json").exists()
    assert (cell_dir / "eval.json").exists() and (cell_dir / "eval.csv").exists()


def read_log_header():
    from cotrainbox.checkpoint import LOG_COLUMNS

    return LOG_COLUMNS


def test_flow_fully_labeled_cell_has_nothing_to_mine(flow):
    cell = read_json(flow / "cells" / "ub" / "cell.json")
    assert cell["cotrain"] is True
    assert cell["cycles_run"] == 0
    assert cell["labeled_images"] == 36
    assert read_log(flow / "cells" / "ub" / "log.csv") == [list(read_log_header())]
    lb = read_json(flow / "cells" / "lb" / "cell.json")
    assert cell["mean_ap"] > lb["mean_ap"]


def test_flow_cotrain_cell_outputs(flow):
    cell_dir = flow / "cells" / "cot"
    cell = read_json(cell_dir / "cell.json")
    assert 2 <= cell["cycles_run"] <= 4
    assert cell["pseudo_boxes"] > 0

    rows = read_log(cell_dir / "log.csv")
    assert len(rows) == 1 + cell["cycles_run"]
    assert [r[0] for r in rows[1:]] == [str(k) for k in range(1, cell["cycles_run"] + 1)]

    last = cell_dir / "cycles" / str(cell["cycles_run"])
    assert (cell_dir / "dpl1.json").read_bytes() == (last / "dpl1.json").read_bytes()
    assert (cell_dir / "dpl2.json").read_bytes() == (last / "dpl2.json").read_bytes()

    summaries = read_json(flow / "experiment.json")
    assert [s["name"] for s in summaries] == ["lb", "cot", "ub"]
    for summary in summaries:
        cell = read_json(flow / "cells" / summary["name"] / "cell.json")
        assert summary == cell


def test_flow_rerun_is_byte_identical(flow, capsys):
    tracked = [
        flow / "experiment.json",
        flow / "cells" / "cot" / "dpl1.json",
        flow / "cells" / "cot" / "log.csv",
        flow / "cells" / "cot" / "eval.json",
        flow / "cells" / "cot" / "cell.json",
        flow / "cells" / "lb" / "eval.json",
    ]
    before = {p: p.read_bytes() for p in tracked}
    rc = main([
        "run",
        "--manifest", str(flow.parent / "experiment.json"),
        "--out", str(flow),
    ])
    assert rc == 0
    out = capsys.readouterr().out
    assert "cell lb:" in out and "cell cot:" in out and "cell ub:" in out
    for path, content in before.items():
        assert path.read_bytes() == content, path


def test_audit_reports_and_corrected_variants(flow, world_dir, tmp_path, capsys):
    cell_dir = flow / "cells" / "cot"
    cell = read_json(cell_dir / "cell.json")
    rc = main([
        "audit",
        "--dpl", str(cell_dir / "dpl1.json"),
        "--truth", str(world_dir / "truth.json"),
        "--labeled-boxes", str(cell["labeled_boxes"]),
        "--out", str(tmp_path / "audit"),
    ])
    assert rc == 0

    pseudo = PseudoLabelSet.from_obj(read_json(cell_dir / "dpl1.json"))
    world = load_world(world_dir / "truth.json")
    expected = audit_pseudo_labels(
        pseudo, world.gt_by_image(pseudo.image_ids()), cell["labeled_boxes"]
    )
    report = read_json(tmp_path / "audit" / "audit.json")
    assert report == {
        "num_pseudo_boxes": expected.num_pseudo_boxes,
        "num_false_positive": expected.num_false_positive,
        "fp_percent": expected.fp_percent,
    }
    assert report["num_pseudo_boxes"] == pseudo.num_boxes > 0

    for name, key in (("dpl_fp", "fp"), ("dpl_bb", "bb"), ("dpl_fpbb", "fp_bb")):
        variant = PseudoLabelSet.from_obj(read_json(tmp_path / "audit" / f"{name}.json"))
        assert variant.to_obj() == expected.corrected[key].to_obj()

    out = capsys.readouterr().out
    assert f"{expected.num_pseudo_boxes} pseudo boxes" in out


def test_cycle_curve_brackets_the_run(flow, capsys):
    cell_dir = flow / "cells" / "cot"
    cell = read_json(cell_dir / "cell.json")
    rc = main(["cycle-curve", "--run", str(cell_dir)])
    assert rc == 0
    assert f"(cycles 0..{cell['cycles_run']})" in capsys.readouterr().out

    curve = read_json(cell_dir / "cycle_curve.json")
    assert [row["cycle"] for row in curve] == list(range(cell["cycles_run"] + 1))

    # cycle 0 is the plain baseline: identical to the lb cell's report
    baseline = dict(curve[0])
    baseline.pop("cycle")
    assert baseline == read_json(flow / "cells" / "lb" / "eval.json")

    # the last cycle retrains from the final snapshot: identical to this cell
    final = dict(curve[-1])
    final.pop("cycle")
    assert final == read_json(cell_dir / "eval.json")

    with (cell_dir / "cycle_curve.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["cycle", "mean_ap"]
    assert len(rows) == 2 + cell["cycles_run"]
    assert float(rows[1][1]) == pytest.approx(curve[0]["mean_ap"], abs=1e-6)


# ---------------------------------------------------------------------------
# process-level entry points


def test_console_script_is_installed():
    assert shutil.which("cotrainbox") is not None


def test_process_exit_codes(tmp_path):
    run = lambda args: subprocess.run(
        [sys.executable, "-m", "cotrainbox.cli", *args],
        capture_output=True, text=True, cwd=tmp_path,
    )

    usage = run([])
    assert usage.returncode == 2
    assert "usage:" in usage.stderr

    missing = run(["eval", "--dets", "nope.json", "--gt", "nope.json"])
    assert missing.returncode == 3
    assert missing.stderr.startswith("error:")

    ok = run(["gen-world", "--out", "w", "--seed", "1", "--images", "10", "--holdout", "2"])
    assert ok.returncode == 0
    assert (tmp_path / "w" / "truth.json").exists()

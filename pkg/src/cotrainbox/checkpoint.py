"""Run state, per-cycle checkpoints, and the metrics log.

Layout under a run directory:

    cycles/<k>/dpl1.json    fresh view-1 detection snapshot at cycle k
    cycles/<k>/dpl2.json    fresh view-2 detection snapshot at cycle k
    cycles/<k>/state.json   everything needed to resume after cycle k
    log.csv                 one row per cycle, including wall-clock seconds

The fresh snapshots are the run's output if it stopped at k, which is what
the cycle-curve command retrains from. state.json holds only deterministic
state: identical seeds produce byte-identical checkpoint trees. Wall-clock
timing exists solely in log.csv.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from .backends import ModelHandle
from .errors import DataError
from .jsonio import read_json, write_json
from .types import PseudoLabelSet

STATE_VERSION = 1

LOG_COLUMNS = (
    "k",
    "stop_map",
    "n_img_1",
    "n_box_1",
    "n_img_2",
    "n_box_2",
    "n_up",
    "n_down",
    "seconds",
)


@dataclass(frozen=True)
class CycleMetrics:
    """Deterministic per-cycle numbers, kept in run state."""

    cycle: int
    stop_map: float
    n_img_1: int
    n_box_1: int
    n_img_2: int
    n_box_2: int
    n_up: int  # images offered by the confidence-ranked selection, both views
    n_down: int  # images handed over after cross-scoring, both views

    def to_obj(self) -> dict:
        return {
            "cycle": self.cycle,
            "stop_map": self.stop_map,
            "n_img_1": self.n_img_1,
            "n_box_1": self.n_box_1,
            "n_img_2": self.n_img_2,
            "n_box_2": self.n_box_2,
            "n_up": self.n_up,
            "n_down": self.n_down,
        }

    @staticmethod
    def from_obj(obj: dict) -> "CycleMetrics":
        return CycleMetrics(
            cycle=int(obj["cycle"]),
            stop_map=float(obj["stop_map"]),
            n_img_1=int(obj["n_img_1"]),
            n_box_1=int(obj["n_box_1"]),
            n_img_2=int(obj["n_img_2"]),
            n_box_2=int(obj["n_box_2"]),
            n_up=int(obj["n_up"]),
            n_down=int(obj["n_down"]),
        )


@dataclass
class CycleState:
    """Complete resumable loop state after a cycle.

    `pool1`/`pool2` are the accumulated training pools (fused over cycles),
    `fresh1`/`fresh2` the latest whole-pool detection snapshots. Histories
    hold (sequence_id, frame_index) pairs consumed by the frame-gap rule.
    """

    cycle: int
    rng_seed: int
    model1: ModelHandle
    model2: ModelHandle
    pool1: PseudoLabelSet
    pool2: PseudoLabelSet
    fresh1: PseudoLabelSet
    fresh2: PseudoLabelSet
    history1: set[tuple[str, int]] = field(default_factory=set)
    history2: set[tuple[str, int]] = field(default_factory=set)
    stability_counter: int = 0
    last_stop_metric: float | None = None
    metrics: list[CycleMetrics] = field(default_factory=list)


def _history_to_obj(history: set[tuple[str, int]]) -> list[list]:
    return [[seq, frame] for seq, frame in sorted(history)]


def _history_from_obj(obj: object, where: str) -> set[tuple[str, int]]:
    if not isinstance(obj, list):
        raise DataError(f"{where}: expected a list")
    out = set()
    for entry in obj:
        if not isinstance(entry, list) or len(entry) != 2:
            raise DataError(f"{where}: expected [sequence_id, frame_index] pairs")
        out.add((str(entry[0]), int(entry[1])))
    return out


def state_to_obj(state: CycleState) -> dict:
    return {
        "version": STATE_VERSION,
        "cycle": state.cycle,
        "rng_seed": state.rng_seed,
        "model1": state.model1.to_obj(),
        "model2": state.model2.to_obj(),
        "pool1": state.pool1.to_obj(),
        "pool2": state.pool2.to_obj(),
        "history1": _history_to_obj(state.history1),
        "history2": _history_to_obj(state.history2),
        "stability_counter": state.stability_counter,
        "last_stop_metric": state.last_stop_metric,
        "metrics": [m.to_obj() for m in state.metrics],
    }


def state_from_obj(obj: object, fresh1: PseudoLabelSet, fresh2: PseudoLabelSet, where: str) -> CycleState:
    if not isinstance(obj, dict):
        raise DataError(f"{where}: expected a JSON object")
    if obj.get("version") != STATE_VERSION:
        raise DataError(f"{where}: unsupported state version {obj.get('version')!r}")
    try:
        return CycleState(
            cycle=int(obj["cycle"]),
            rng_seed=int(obj["rng_seed"]),
            model1=ModelHandle.from_obj(obj["model1"], f"{where}.model1"),
            model2=ModelHandle.from_obj(obj["model2"], f"{where}.model2"),
            pool1=PseudoLabelSet.from_obj(obj["pool1"], f"{where}.pool1"),
            pool2=PseudoLabelSet.from_obj(obj["pool2"], f"{where}.pool2"),
            fresh1=fresh1,
            fresh2=fresh2,
            history1=_history_from_obj(obj["history1"], f"{where}.history1"),
            history2=_history_from_obj(obj["history2"], f"{where}.history2"),
            stability_counter=int(obj["stability_counter"]),
            last_stop_metric=(
                None if obj["last_stop_metric"] is None else float(obj["last_stop_metric"])
            ),
            metrics=[CycleMetrics.from_obj(m) for m in obj.get("metrics", [])],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{where}: malformed state: {exc}") from None


def cycle_dir(run_dir: str | Path, cycle: int) -> Path:
    return Path(run_dir) / "cycles" / str(cycle)


def save_checkpoint(state: CycleState, run_dir: str | Path) -> Path:
    """Write dpl1/dpl2/state for `state.cycle` under the run directory."""
    target = cycle_dir(run_dir, state.cycle)
    target.mkdir(parents=True, exist_ok=True)
    write_json(target / "dpl1.json", state.fresh1.to_obj())
    write_json(target / "dpl2.json", state.fresh2.to_obj())
    write_json(target / "state.json", state_to_obj(state))
    return target


def load_checkpoint(run_dir: str | Path, cycle: int) -> CycleState:
    target = cycle_dir(run_dir, cycle)
    state_path = target / "state.json"
    if not state_path.exists():
        raise DataError(f"no checkpoint at {state_path}")
    fresh1 = PseudoLabelSet.from_obj(read_json(target / "dpl1.json"), f"{target}/dpl1.json")
    fresh2 = PseudoLabelSet.from_obj(read_json(target / "dpl2.json"), f"{target}/dpl2.json")
    return state_from_obj(read_json(state_path), fresh1, fresh2, str(state_path))


def checkpointed_cycles(run_dir: str | Path) -> list[int]:
    """Cycle indices with a complete checkpoint, ascending."""
    root = Path(run_dir) / "cycles"
    if not root.is_dir():
        return []
    cycles = []
    for entry in root.iterdir():
        if entry.is_dir() and entry.name.isdigit() and (entry / "state.json").exists():
            cycles.append(int(entry.name))
    return sorted(cycles)


def latest_cycle(run_dir: str | Path) -> int | None:
    cycles = checkpointed_cycles(run_dir)
    return cycles[-1] if cycles else None


def append_log_row(run_dir: str | Path, metrics: CycleMetrics, seconds: float) -> None:
    """Append one row to log.csv, writing the header on first use."""
    path = Path(run_dir) / "log.csv"
    new = not path.exists()
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(LOG_COLUMNS)
        writer.writerow(
            [
                metrics.cycle,
                f"{metrics.stop_map:.6f}",
                metrics.n_img_1,
                metrics.n_box_1,
                metrics.n_img_2,
                metrics.n_box_2,
                metrics.n_up,
                metrics.n_down,
                f"{seconds:.3f}",
            ]
        )


def truncate_log(run_dir: str | Path, cycle: int) -> None:
    """Drop log rows beyond `cycle`, so a resumed run does not double-log
    the cycles it re-executes."""
    path = Path(run_dir) / "log.csv"
    if not path.exists():
        return
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    kept = rows[:1] + [r for r in rows[1:] if r and int(r[0]) <= cycle]
    if len(kept) == len(rows):
        return
    with path.open("w", newline="") as fh:
        csv.writer(fh).writerows(kept)


def read_log(run_dir: str | Path) -> list[dict]:
    path = Path(run_dir) / "log.csv"
    if not path.exists():
        return []
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))

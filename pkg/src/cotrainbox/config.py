"""Run configuration: selection sizes, stop rule, sequence constraints.

The JSON form keeps the conventional short key names (T, N, n, m, K_min,
K_max, delta_K, T_delta_map, delta_t1, delta_t2, view2_transform,
rng_seed); the in-memory form spells out what each knob does. `m` accepts
the string "inf" for an unbounded share limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .errors import DataError
from .jsonio import read_json, write_json
from .types import ViewTransform

EXCHANGE_LABEL_MODES = ("sender", "receiver")


@dataclass(frozen=True)
class StopRule:
    """Stability-based stop: run at least min_cycles, at most max_cycles,
    and stop once the cycle-over-cycle stop-metric change stayed below
    map_tolerance for stability_cycles consecutive comparisons."""

    min_cycles: int
    max_cycles: int
    stability_cycles: int
    map_tolerance: float

    def __post_init__(self) -> None:
        if self.min_cycles < 1:
            raise DataError("K_min must be >= 1")
        if self.max_cycles < self.min_cycles:
            raise DataError("K_max must be >= K_min")
        if not 1 <= self.stability_cycles <= self.min_cycles:
            raise DataError("delta_K must satisfy 1 <= delta_K <= K_min")
        if self.map_tolerance < 0:
            raise DataError("T_delta_map must be >= 0")


@dataclass(frozen=True)
class FrameGapRule:
    """Minimum frame-index gaps inside a sequence: min_gap_new against frames
    kept in the current selection, min_gap_history against frames selected in
    earlier cycles."""

    min_gap_new: int
    min_gap_history: int

    def __post_init__(self) -> None:
        if self.min_gap_new < 0 or self.min_gap_history < 0:
            raise DataError("frame gaps must be >= 0")


@dataclass(frozen=True)
class CoTrainConfig:
    thresholds: Mapping[str, float]
    candidate_pool_size: int  # N: random candidates drawn per view and cycle
    exchange_size: int  # n: lowest-scored images handed to each view
    share_limit: float  # m: most-confident images offered; math.inf for all
    stop: StopRule
    view2_transform: ViewTransform
    rng_seed: int
    frame_gap: FrameGapRule | None = None
    exchange_labels: str = "sender"

    def __post_init__(self) -> None:
        if not self.thresholds:
            raise DataError("T must map at least one category to a threshold")
        for category, value in self.thresholds.items():
            if not 0.0 <= value <= 1.0:
                raise DataError(f"T[{category!r}] = {value} outside [0, 1]")
        if self.candidate_pool_size < 1:
            raise DataError("N must be >= 1")
        if not 0 <= self.exchange_size <= self.candidate_pool_size:
            raise DataError("n must satisfy 0 <= n <= N")
        if not (self.share_limit == math.inf or self.share_limit >= 0):
            raise DataError("m must be >= 0 or inf")
        if self.exchange_labels not in EXCHANGE_LABEL_MODES:
            raise DataError(f"exchange_labels must be one of {EXCHANGE_LABEL_MODES}")

    def to_obj(self) -> dict:
        obj: dict = {
            "T": dict(sorted(self.thresholds.items())),
            "N": self.candidate_pool_size,
            "n": self.exchange_size,
            "m": "inf" if self.share_limit == math.inf else self.share_limit,
            "K_min": self.stop.min_cycles,
            "K_max": self.stop.max_cycles,
            "delta_K": self.stop.stability_cycles,
            "T_delta_map": self.stop.map_tolerance,
            "view2_transform": self.view2_transform.to_obj(),
            "rng_seed": self.rng_seed,
        }
        if self.frame_gap is not None:
            obj["delta_t1"] = self.frame_gap.min_gap_new
            obj["delta_t2"] = self.frame_gap.min_gap_history
        if self.exchange_labels != "sender":
            obj["exchange_labels"] = self.exchange_labels
        return obj


def _require_number(obj: Mapping, key: str, where: str) -> float:
    if key not in obj:
        raise DataError(f"{where}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise DataError(f"{where}.{key}: expected a number")
    return value


def config_from_obj(obj: object, where: str = "config") -> CoTrainConfig:
    if not isinstance(obj, dict):
        raise DataError(f"{where}: expected a JSON object")
    if "T" not in obj or not isinstance(obj["T"], dict):
        raise DataError(f"{where}.T: expected a category-to-threshold object")
    thresholds = {}
    for category, value in obj["T"].items():
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise DataError(f"{where}.T[{category!r}]: expected a number")
        thresholds[str(category)] = float(value)
    m_raw = obj.get("m")
    if m_raw == "inf":
        share_limit = math.inf
    elif isinstance(m_raw, (int, float)) and not isinstance(m_raw, bool):
        share_limit = float(m_raw)
    else:
        raise DataError(f"{where}.m: expected a number or \"inf\"")
    frame_gap = None
    if "delta_t1" in obj or "delta_t2" in obj:
        frame_gap = FrameGapRule(
            min_gap_new=int(_require_number(obj, "delta_t1", where)),
            min_gap_history=int(_require_number(obj, "delta_t2", where)),
        )
    exchange_labels = obj.get("exchange_labels", "sender")
    if not isinstance(exchange_labels, str):
        raise DataError(f"{where}.exchange_labels: expected a string")
    try:
        return CoTrainConfig(
            thresholds=thresholds,
            candidate_pool_size=int(_require_number(obj, "N", where)),
            exchange_size=int(_require_number(obj, "n", where)),
            share_limit=share_limit,
            stop=StopRule(
                min_cycles=int(_require_number(obj, "K_min", where)),
                max_cycles=int(_require_number(obj, "K_max", where)),
                stability_cycles=int(_require_number(obj, "delta_K", where)),
                map_tolerance=_require_number(obj, "T_delta_map", where),
            ),
            view2_transform=ViewTransform.from_obj(
                obj.get("view2_transform", {"kind": "identity"}),
                where=f"{where}.view2_transform",
            ),
            rng_seed=int(_require_number(obj, "rng_seed", where)),
            frame_gap=frame_gap,
            exchange_labels=exchange_labels,
        )
    except DataError as exc:
        msg = str(exc)
        raise DataError(msg if msg.startswith(where) else f"{where}: {msg}") from None


def load_config(path: str | Path) -> CoTrainConfig:
    return config_from_obj(read_json(path), where=str(path))


def save_config(config: CoTrainConfig, path: str | Path) -> None:
    write_json(path, config.to_obj())


def default_config(
    rng_seed: int = 0,
    view2_transform: ViewTransform | None = None,
    with_frame_gaps: bool = False,
) -> CoTrainConfig:
    """The stock configuration: T=0.8 for both categories, N=500, n=100,
    m unbounded, stop rule (K_min=20, K_max=30, delta_K=5, tolerance 2.0),
    and optionally the stock frame gaps (5, 10)."""
    return CoTrainConfig(
        thresholds={"vehicle": 0.8, "pedestrian": 0.8},
        candidate_pool_size=500,
        exchange_size=100,
        share_limit=math.inf,
        stop=StopRule(min_cycles=20, max_cycles=30, stability_cycles=5, map_tolerance=2.0),
        view2_transform=view2_transform or ViewTransform("identity"),
        rng_seed=rng_seed,
        frame_gap=FrameGapRule(5, 10) if with_frame_gaps else None,
    )

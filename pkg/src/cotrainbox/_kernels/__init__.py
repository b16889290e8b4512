"""Matching and AP kernels with backend selection at import time.

The compiled extension is preferred when present; setting COTRAINBOX_PURE=1
in the environment forces the pure numpy/python fallback. Both expose the
same functions with identical semantics; `KERNEL_BACKEND` names the one in
use ("compiled" or "python").
"""

from __future__ import annotations

import os

from . import fallback as _fallback

if os.environ.get("COTRAINBOX_PURE"):
    _impl = _fallback
else:
    try:
        from . import _matchx as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _fallback

KERNEL_BACKEND: str = _impl.BACKEND_NAME

OUTCOME_FP = _fallback.OUTCOME_FP
OUTCOME_TP = _fallback.OUTCOME_TP
OUTCOME_IGNORED = _fallback.OUTCOME_IGNORED

iou_matrix = _impl.iou_matrix
greedy_match = _impl.greedy_match
interpolated_ap = _impl.interpolated_ap

__all__ = [
    "KERNEL_BACKEND",
    "OUTCOME_FP",
    "OUTCOME_TP",
    "OUTCOME_IGNORED",
    "iou_matrix",
    "greedy_match",
    "interpolated_ap",
]

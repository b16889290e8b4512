# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled matching and AP kernels. Semantics mirror fallback.py exactly."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "compiled"

cdef cnp.int8_t _FP = 0
cdef cnp.int8_t _TP = 1
cdef cnp.int8_t _IGNORED = 2

OUTCOME_FP = 0
OUTCOME_TP = 1
OUTCOME_IGNORED = 2


cdef inline double _pair_iou(const double[:, ::1] a, Py_ssize_t i,
                             const double[:, ::1] b, Py_ssize_t j) nogil:
    cdef double ix1 = a[i, 0] if a[i, 0] > b[j, 0] else b[j, 0]
    cdef double iy1 = a[i, 1] if a[i, 1] > b[j, 1] else b[j, 1]
    cdef double ix2 = a[i, 2] if a[i, 2] < b[j, 2] else b[j, 2]
    cdef double iy2 = a[i, 3] if a[i, 3] < b[j, 3] else b[j, 3]
    cdef double iw = ix2 - ix1
    cdef double ih = iy2 - iy1
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    cdef double inter = iw * ih
    cdef double area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
    cdef double area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
    cdef double uni = area_a + area_b - inter
    if uni <= 0.0:
        return 0.0
    return inter / uni


def iou_matrix(boxes_a, boxes_b):
    """Pairwise intersection-over-union of two (n, 4) / (m, 4) box arrays."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] arr_a = np.ascontiguousarray(
        np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] arr_b = np.ascontiguousarray(
        np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4))
    cdef Py_ssize_t n = arr_a.shape[0]
    cdef Py_ssize_t m = arr_b.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((n, m), dtype=np.float64)
    if n == 0 or m == 0:
        return out
    cdef const double[:, ::1] a = arr_a
    cdef const double[:, ::1] b = arr_b
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(n):
            for j in range(m):
                o[i, j] = _pair_iou(a, i, b, j)
    return out


def greedy_match(det_boxes, gt_boxes, gt_ignored, double iou_thr):
    """Greedily match detections (already in confidence order) to ground truth.

    Same contract as the fallback: claim the unmatched evaluated GT of
    maximal IoU >= iou_thr (ties to the lowest GT index) as a TP, else be
    ignored on overlap with an ignored GT, else count as an FP.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dets = np.ascontiguousarray(
        np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gts = np.ascontiguousarray(
        np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4))
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] ignored = np.ascontiguousarray(
        np.asarray(gt_ignored, dtype=np.uint8).reshape(-1))
    cdef Py_ssize_t n_det = dets.shape[0]
    cdef Py_ssize_t n_gt = gts.shape[0]
    cdef cnp.ndarray[cnp.int8_t, ndim=1] outcomes = np.zeros(n_det, dtype=np.int8)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] det_match = np.full(n_det, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] gt_matched = np.zeros(n_gt, dtype=np.uint8)
    if n_det == 0:
        return outcomes, det_match, gt_matched
    cdef const double[:, ::1] d = dets
    cdef const double[:, ::1] g = gts
    cdef const cnp.uint8_t[::1] ign = ignored
    cdef cnp.int8_t[::1] out = outcomes
    cdef cnp.int64_t[::1] match = det_match
    cdef cnp.uint8_t[::1] used = gt_matched
    cdef Py_ssize_t i, j, best_j
    cdef double v, best_iou
    cdef bint hit_ignored
    with nogil:
        for i in range(n_det):
            best_j = -1
            best_iou = -1.0
            hit_ignored = False
            for j in range(n_gt):
                v = _pair_iou(d, i, g, j)
                if v < iou_thr:
                    continue
                if ign[j]:
                    hit_ignored = True
                elif not used[j] and v > best_iou:
                    best_j = j
                    best_iou = v
            if best_j >= 0:
                out[i] = _TP
                match[i] = best_j
                used[best_j] = 1
            elif hit_ignored:
                out[i] = _IGNORED
    return outcomes, det_match, gt_matched


def interpolated_ap(flags, int num_gt, int recall_points=11):
    """Interpolated average precision over evenly spaced recall levels."""
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] arr = np.ascontiguousarray(
        np.asarray(flags, dtype=np.uint8).reshape(-1))
    if recall_points < 2:
        raise ValueError("recall_points must be >= 2")
    if num_gt < 0:
        raise ValueError("num_gt must be >= 0")
    cdef Py_ssize_t n = arr.shape[0]
    if num_gt == 0:
        return 0.0 if n else 1.0
    cdef const cnp.uint8_t[::1] f = arr
    cdef Py_ssize_t i, j
    cdef double tp = 0.0
    cdef double level, best, recall, precision, total
    total = 0.0
    for j in range(recall_points):
        level = j / <double>(recall_points - 1)
        best = -1.0
        tp = 0.0
        for i in range(n):
            tp += f[i]
            recall = tp / num_gt
            if recall >= level:
                precision = tp / <double>(i + 1)
                if precision > best:
                    best = precision
        if best >= 0.0:
            total += best
    return total / recall_points

"""Absolute trajectory error and length-weighted aggregation."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def associate(est_t: np.ndarray, gt_t: np.ndarray, tol: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbour timestamp matching; returns index arrays (est, gt) of pairs within ``tol`` s."""
    est_t = np.asarray(est_t, dtype=np.float64)
    gt_t = np.asarray(gt_t, dtype=np.float64)
    if gt_t.size == 0 or est_t.size == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    order = np.argsort(gt_t, kind="stable")
    sorted_t = gt_t[order]
    pos = np.clip(np.searchsorted(sorted_t, est_t), 1, max(sorted_t.size - 1, 1))
    left = np.clip(pos - 1, 0, sorted_t.size - 1)
    right = np.clip(pos, 0, sorted_t.size - 1)
    pick = np.where(np.abs(sorted_t[left] - est_t) <= np.abs(sorted_t[right] - est_t), left, right)
    ok = np.abs(sorted_t[pick] - est_t) <= tol
    return np.nonzero(ok)[0], order[pick[ok]]


def ate_rmse(est_t, est_xy, gt_t, gt_xy, tol: float = 0.05) -> float:
    """sqrt( sum over associated poses of (dx^2 + dy^2) / (2 T) ), no alignment applied."""
    est_xy = np.asarray(est_xy, dtype=np.float64).reshape(-1, 2)
    gt_xy = np.asarray(gt_xy, dtype=np.float64).reshape(-1, 2)
    ie, ig = associate(est_t, gt_t, tol)
    if ie.size == 0:
        raise ValueError(f"no estimate timestamps within {tol} s of any ground-truth timestamp")
    d = est_xy[ie] - gt_xy[ig]
    return float(np.sqrt(np.sum(d * d) / (2 * ie.size)))


def overall_weighted(ates: Sequence[float], lengths: Sequence[float]) -> float:
    """Travel-length weighted mean of per-trajectory ATEs."""
    a = np.asarray(ates, dtype=np.float64)
    w = np.asarray(lengths, dtype=np.float64)
    if a.shape != w.shape or a.ndim != 1:
        raise ValueError(f"need equal-length 1-D lists, got {a.shape} ATEs and {w.shape} lengths")
    if a.size == 0:
        raise ValueError("need at least one trajectory")
    if np.any(w <= 0):
        raise ValueError("trajectory lengths must be positive")
    return float(np.sum(w * a) / np.sum(w))


def path_length(xy: np.ndarray) -> float:
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    return float(np.sum(np.hypot(*np.diff(xy, axis=0).T)))

"""SVG figures for trajectories, training curves, ablation tables and B-scans."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed ids and no timestamp so reruns produce identical files
plt.rcParams["svg.hashsalt"] = "gprodom"
_META = {"Date": None, "Creator": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata=_META, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_trajectories(path, ground_truth: np.ndarray, estimates: Mapping[str, np.ndarray],
                      title: str = "") -> Path:
    """Ground-truth path against any number of estimated (N, 2) paths."""
    fig, ax = plt.subplots(figsize=(6, 5))
    gt = np.asarray(ground_truth)
    ax.plot(gt[:, 0], gt[:, 1], "k-", lw=2, label="ground truth")
    for label, xy in estimates.items():
        xy = np.asarray(xy)
        ax.plot(xy[:, 0], xy[:, 1], lw=1.2, label=label)
    ax.plot(gt[0, 0], gt[0, 1], "ko", ms=5)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal", adjustable="datalim")
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_history(path, rows: Sequence[Mapping[str, float]], title: str = "") -> Path:
    """Per-epoch training loss and validation RMSE, in centimeters."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ep = [int(r["epoch"]) for r in rows]
    ax.plot(ep, [100 * float(r["train_loss_m"]) for r in rows], "o-", ms=3, label="train loss")
    ev = [100 * float(r["eval_rmse_m"]) for r in rows]
    if not all(np.isnan(ev)):
        ax.plot(ep, ev, "s-", ms=3, label="validation RMSE")
    ax.set_xlabel("epoch")
    ax.set_ylabel("RMSE (cm)")
    ax.grid(alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_ablation(path, labels: Sequence[str], overall_cm: Sequence[float],
                  reference_cm: float | None = None) -> Path:
    """Overall RMSE per network configuration, optionally with a baseline line."""
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(labels))
    ax.bar(x, overall_cm, color="tab:blue")
    for xi, v in zip(x, overall_cm):
        ax.text(xi, v, f"{v:.2f}", ha="center", va="bottom", fontsize=8)
    if reference_cm is not None:
        ax.axhline(reference_cm, color="tab:red", ls="--", label="mean predictor")
        ax.legend()
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=15)
    ax.set_ylabel("overall RMSE (cm)")
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, path)


def plot_bscan(path, matrix: np.ndarray, title: str = "", extent=None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    m = np.asarray(matrix)
    lim = float(np.max(np.abs(m))) or 1.0
    ax.imshow(m, aspect="auto", cmap="gray", vmin=-lim, vmax=lim, extent=extent, interpolation="nearest")
    ax.set_xlabel("trace" if extent is None else "along track (m)")
    ax.set_ylabel("sample")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def _read_rows(path: Path) -> tuple[list[str], list[dict]]:
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        return list(reader.fieldnames or []), rows


def plot_file(src: str | Path, dst: str | Path) -> Path:
    """Render a known CSV or B-scan store to SVG, choosing the figure from its layout."""
    from .preprocess import load_bscans

    src = Path(src)
    if not src.exists():
        raise FileNotFoundError(f"plot input {src} does not exist")
    if src.suffix == ".bin":
        scans = load_bscans(src)
        if not scans:
            raise ValueError(f"{src}: no B-scans stored")
        b = scans[0]
        return plot_bscan(dst, b.traces, f"{src.name} [0]", (b.origin, b.origin + b.width * b.trace_spacing,
                                                              b.traces.shape[0], 0))
    header, rows = _read_rows(src)
    if not rows:
        raise ValueError(f"{src}: no data rows")
    if "epoch" in header and "train_loss_m" in header:
        return plot_history(dst, rows, src.stem)
    if header and header[0] == "network_configuration":
        return plot_ablation(dst, [r["network_configuration"] for r in rows],
                             [float(r["overall_rmse_cm"]) for r in rows])
    if header[:3] == ["time_s", "x_m", "y_m"]:
        xy = np.array([[float(r["x_m"]), float(r["y_m"])] for r in rows])
        gt_path = src.with_name("ground_truth.csv")
        gt = np.loadtxt(gt_path, delimiter=",", skiprows=1, ndmin=2)[:, 1:3] if gt_path.exists() else xy
        return plot_trajectories(dst, gt, {src.stem: xy}, src.stem)
    raise ValueError(f"{src}: unrecognised columns {header}")

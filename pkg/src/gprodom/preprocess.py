"""Radar trace conditioning and distance-uniform B-scan assembly.

Chain order: Butterworth bandpass -> SEC gain -> dewow -> wavelet denoise.
Each step has an array form working down axis 0 (time) so a whole
samples x traces matrix can be processed at once, plus an :class:`AScan`
wrapper.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pywt
from scipy import signal

from .autonn.checkpoint import load_tensors, save_tensors


@dataclass
class AScan:
    samples: np.ndarray
    dt: float
    t0: float = 0.0
    position: float | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"A-scan samples must be 1-D, got shape {self.samples.shape}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.samples.size < 16:
            raise ValueError(f"A-scan needs at least 16 samples, got {self.samples.size}")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)

    def with_samples(self, samples: np.ndarray) -> "AScan":
        return replace(self, samples=samples)


@dataclass
class BScan:
    """Samples x L matrix of time-aligned traces on a uniform along-track grid."""

    traces: np.ndarray
    trace_spacing: float
    origin: float = 0.0
    dt: float | None = None

    def __post_init__(self):
        self.traces = np.asarray(self.traces, dtype=np.float64)
        if self.traces.ndim != 2:
            raise ValueError(f"B-scan must be 2-D (samples x traces), got {self.traces.shape}")
        if self.trace_spacing <= 0:
            raise ValueError(f"trace spacing must be positive, got {self.trace_spacing}")

    @property
    def width(self) -> int:
        return self.traces.shape[1]

    @property
    def positions(self) -> np.ndarray:
        return self.origin + self.trace_spacing * np.arange(self.width)


@dataclass(frozen=True)
class PreprocessConfig:
    """Knobs for the four conditioning steps and B-scan assembly.

    ``f_lo``/``f_hi``/``sec_alpha`` left as ``None`` resolve against the trace
    sampling: band = [0.1, 0.8] x Nyquist and alpha such that the exponential
    term reaches 20 dB at the last sample.
    """

    f_lo: float | None = None
    f_hi: float | None = None
    filter_order: int = 4
    sec_alpha: float | None = None
    sec_power: float = 1.0
    sec_t0: float | None = None
    dewow_window: int = 15
    wavelet: str = "db4"
    levels: int = 4
    threshold: str | float = "universal"
    L: int = 64
    trace_spacing: float = 0.02
    stride: int | None = None

    def __post_init__(self):
        errors = []
        if self.filter_order < 1:
            errors.append(f"filter_order must be >= 1, got {self.filter_order}")
        if self.f_lo is not None and self.f_hi is not None and not 0 < self.f_lo < self.f_hi:
            errors.append(f"band must satisfy 0 < f_lo < f_hi, got ({self.f_lo}, {self.f_hi})")
        if self.sec_alpha is not None and self.sec_alpha < 0:
            errors.append(f"sec_alpha must be >= 0, got {self.sec_alpha}")
        if self.sec_power < 0:
            errors.append(f"sec_power must be >= 0, got {self.sec_power}")
        if self.dewow_window < 3 or self.dewow_window % 2 == 0:
            errors.append(f"dewow_window must be odd and >= 3, got {self.dewow_window}")
        if self.levels < 1:
            errors.append(f"levels must be >= 1, got {self.levels}")
        if self.wavelet not in pywt.wavelist(kind="discrete"):
            errors.append(f"unknown discrete wavelet {self.wavelet!r}")
        if isinstance(self.threshold, str) and self.threshold != "universal":
            errors.append(f"threshold must be 'universal' or a number, got {self.threshold!r}")
        if not isinstance(self.threshold, str) and self.threshold < 0:
            errors.append(f"threshold must be non-negative, got {self.threshold}")
        if self.L < 1:
            errors.append(f"L must be >= 1, got {self.L}")
        if self.trace_spacing <= 0:
            errors.append(f"trace_spacing must be positive, got {self.trace_spacing}")
        if self.stride is not None and self.stride < 1:
            errors.append(f"stride must be >= 1, got {self.stride}")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def window_stride(self) -> int:
        return self.stride if self.stride is not None else max(1, self.L // 2)

    def band(self, dt: float) -> tuple[float, float]:
        nyq = 0.5 / dt
        lo = self.f_lo if self.f_lo is not None else 0.1 * nyq
        hi = self.f_hi if self.f_hi is not None else 0.8 * nyq
        if not 0 < lo < hi < nyq:
            raise ValueError(f"band ({lo:g}, {hi:g}) Hz must lie inside (0, Nyquist={nyq:g} Hz)")
        return lo, hi

    def alpha(self, t_max: float) -> float:
        if self.sec_alpha is not None:
            return self.sec_alpha
        return math.log(10.0) / t_max if t_max > 0 else 0.0


# ------------------------------------------------------------------ array forms

def butterworth_sos(cfg: PreprocessConfig, dt: float) -> np.ndarray:
    lo, hi = cfg.band(dt)
    return signal.butter(cfg.filter_order, [lo, hi], btype="bandpass", fs=1.0 / dt, output="sos")


def bandpass_array(x: np.ndarray, dt: float, cfg: PreprocessConfig) -> np.ndarray:
    """Zero-phase (forward-backward) bandpass down axis 0."""
    return signal.sosfiltfilt(butterworth_sos(cfg, dt), x, axis=0)


def sec_gain_curve(n: int, dt: float, t0: float, alpha: float, power: float) -> np.ndarray:
    if alpha < 0 or power < 0:
        raise ValueError(f"SEC needs alpha >= 0 and power >= 0, got alpha={alpha}, power={power}")
    t = t0 + dt * np.arange(n)
    positive = t[t > 0]
    if power == 0:
        spread = np.ones(n)
    elif positive.size == 0:
        spread = np.zeros(n)
    else:
        t_ref = positive[0]
        spread = np.where(t > 0, np.maximum(t, 0.0) / t_ref, 0.0) ** power
    return spread * np.exp(alpha * t)


def sec_gain_array(x: np.ndarray, dt: float, t0: float, cfg: PreprocessConfig) -> np.ndarray:
    n = x.shape[0]
    start = cfg.sec_t0 if cfg.sec_t0 is not None else t0
    g = sec_gain_curve(n, dt, start, cfg.alpha(start + dt * (n - 1)), cfg.sec_power)
    return x * g.reshape((n,) + (1,) * (x.ndim - 1))


def dewow_array(x: np.ndarray, window: int) -> np.ndarray:
    """Subtract a centred running mean of ``window`` samples down axis 0.

    Near the ends the window is shifted to stay inside the trace, so a
    window equal to the (odd) trace length removes the global mean.
    """
    n = x.shape[0]
    if window < 3 or window % 2 == 0 or window > n:
        raise ValueError(f"dewow window must be odd with 3 <= window <= {n}, got {window}")
    half = window // 2
    start = np.clip(np.arange(n) - half, 0, n - window)
    cs = np.concatenate([np.zeros((1,) + x.shape[1:]), np.cumsum(x, axis=0)], axis=0)
    mean = (cs[start + window] - cs[start]) / window
    return x - mean


def universal_threshold(finest_detail: np.ndarray, n: int) -> np.ndarray:
    sigma = np.median(np.abs(finest_detail), axis=0) / 0.6745
    return sigma * math.sqrt(2.0 * math.log(n))


def wavelet_denoise_array(x: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    n = x.shape[0]
    if n < 2 ** cfg.levels:
        raise ValueError(f"wavelet denoising with {cfg.levels} levels needs >= {2 ** cfg.levels} samples, got {n}")
    with warnings.catch_warnings():
        # pywt warns when levels exceed its boundary-effect heuristic; periodization is exact anyway
        warnings.simplefilter("ignore", UserWarning)
        coeffs = pywt.wavedec(x, cfg.wavelet, mode="periodization", level=cfg.levels, axis=0)
    if isinstance(cfg.threshold, str):
        thr = universal_threshold(coeffs[-1], n)
    else:
        thr = np.full(x.shape[1:], float(cfg.threshold))
    if np.any(thr > 0):
        coeffs = [coeffs[0]] + [pywt.threshold(d, thr, mode="soft") for d in coeffs[1:]]
    out = pywt.waverec(coeffs, cfg.wavelet, mode="periodization", axis=0)
    return out[:n]


def preprocess_array(x: np.ndarray, dt: float, cfg: PreprocessConfig, t0: float = 0.0) -> np.ndarray:
    x = bandpass_array(x, dt, cfg)
    x = sec_gain_array(x, dt, t0, cfg)
    x = dewow_array(x, cfg.dewow_window)
    return wavelet_denoise_array(x, cfg)


# ------------------------------------------------------------------ A-scan API

def butterworth_bandpass(trace: AScan, cfg: PreprocessConfig) -> AScan:
    return trace.with_samples(bandpass_array(trace.samples, trace.dt, cfg))


def sec_gain(trace: AScan, cfg: PreprocessConfig) -> AScan:
    return trace.with_samples(sec_gain_array(trace.samples, trace.dt, trace.t0, cfg))


def dewow(trace: AScan, window: int) -> AScan:
    return trace.with_samples(dewow_array(trace.samples, window))


def wavelet_denoise(trace: AScan, cfg: PreprocessConfig) -> AScan:
    return trace.with_samples(wavelet_denoise_array(trace.samples, cfg))


def preprocess_chain(trace: AScan, cfg: PreprocessConfig) -> AScan:
    return trace.with_samples(preprocess_array(trace.samples, trace.dt, cfg, trace.t0))


# ------------------------------------------------------------------ B-scans

def resample_columns(matrix: np.ndarray, positions: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Linear interpolation of each sample row onto ``grid`` (positions increasing)."""
    positions = np.asarray(positions, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size and (grid[0] < positions[0] or grid[-1] > positions[-1]):
        raise ValueError(f"grid [{grid[0]:g}, {grid[-1]:g}] extends beyond traces "
                         f"[{positions[0]:g}, {positions[-1]:g}]")
    idx = np.clip(np.searchsorted(positions, grid, side="right") - 1, 0, positions.size - 2)
    left, right = positions[idx], positions[idx + 1]
    w = (grid - left) / (right - left)
    return matrix[:, idx] * (1.0 - w) + matrix[:, idx + 1] * w


def assemble_bscan(traces: Sequence[AScan], cfg: PreprocessConfig,
                   origin: float | None = None) -> list[BScan]:
    """Resample positioned traces to ``cfg.trace_spacing`` and cut width-L windows.

    Windows start every ``cfg.window_stride`` columns from ``origin`` (default:
    first trace position).
    """
    if len(traces) < 2:
        raise ValueError("need at least two positioned traces")
    if any(t.position is None for t in traces):
        raise ValueError("every trace needs an along-track position")
    pos = np.array([t.position for t in traces], dtype=np.float64)
    bad = np.nonzero(np.diff(pos) <= 0)[0]
    if bad.size:
        raise ValueError(f"trace positions must be strictly increasing; first violation at index {bad[0] + 1}")
    n = traces[0].samples.size
    if any(t.samples.size != n for t in traces):
        raise ValueError("all traces must have the same sample count")
    start = pos[0] if origin is None else float(origin)
    span = pos[-1] - start
    if span < cfg.L * cfg.trace_spacing - 1e-12 * max(1.0, abs(pos[-1])):
        raise ValueError(f"trace span {span:g} m is shorter than L x spacing = "
                         f"{cfg.L * cfg.trace_spacing:g} m")
    n_cols = int(math.floor(span / cfg.trace_spacing + 1e-9)) + 1
    grid = start + cfg.trace_spacing * np.arange(n_cols)
    grid = grid[grid <= pos[-1]]
    matrix = np.stack([t.samples for t in traces], axis=1)
    uniform = resample_columns(matrix, pos, grid)
    out = []
    stride = cfg.window_stride
    for k in range(0, uniform.shape[1] - cfg.L + 1, stride):
        out.append(BScan(uniform[:, k:k + cfg.L].copy(), cfg.trace_spacing, float(grid[k]), traces[0].dt))
    return out


def normalize_bscan(matrix: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance over the whole image (constant images map to 0)."""
    mu = matrix.mean()
    sd = matrix.std()
    return (matrix - mu) / sd if sd > 0 else np.zeros_like(matrix)


def resample_rows(matrix: np.ndarray, rows: int) -> np.ndarray:
    """Block-average (or linearly interpolate) the time axis down to ``rows``."""
    n = matrix.shape[0]
    if rows == n:
        return matrix.copy()
    if n % rows == 0:
        return matrix.reshape(rows, n // rows, *matrix.shape[1:]).mean(axis=1)
    src = np.linspace(0.0, 1.0, n)
    dst = np.linspace(0.0, 1.0, rows)
    return np.stack([np.interp(dst, src, matrix[:, j]) for j in range(matrix.shape[1])], axis=1)


# ------------------------------------------------------------------ file formats

def read_trace_csv(path: str | Path, positions_path: str | Path | None = None) -> list[AScan]:
    """Read ``time_s`` + one column per trace, with optional ``positions.csv`` sidecar."""
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    with path.open(newline="") as fh:
        header = next(csv.reader(fh))
    if not header or header[0] != "time_s":
        raise ValueError(f"{path}: first column must be 'time_s', got {header[:1]}")
    t = data[:, 0]
    dt = float(np.median(np.diff(t)))
    positions: dict[int, float] = {}
    if positions_path is not None:
        pos = np.loadtxt(positions_path, delimiter=",", skiprows=1, ndmin=2)
        positions = {int(i): float(x) for i, x in pos}
    return [AScan(data[:, j + 1], dt, float(t[0]), positions.get(j)) for j in range(data.shape[1] - 1)]


def write_trace_csv(path: str | Path, traces: Sequence[AScan], positions_path: str | Path | None = None) -> None:
    path = Path(path)
    t = traces[0].times
    cols = np.column_stack([t] + [tr.samples for tr in traces])
    header = "time_s," + ",".join(f"trace_{j}" for j in range(len(traces)))
    np.savetxt(path, cols, delimiter=",", header=header, comments="", fmt="%.17g")
    if positions_path is not None:
        rows = [(j, tr.position) for j, tr in enumerate(traces)]
        np.savetxt(positions_path, np.array(rows, dtype=float), delimiter=",",
                   header="trace_index,along_track_m", comments="", fmt=["%d", "%.17g"])


def save_bscans(path: str | Path, bscans: Sequence[BScan]) -> None:
    tensors = {f"bscan_{i:06d}": b.traces for i, b in enumerate(bscans)}
    tensors["origins"] = np.array([b.origin for b in bscans])
    tensors["trace_spacing"] = np.array([b.trace_spacing for b in bscans])
    save_tensors(path, tensors)


def load_bscans(path: str | Path) -> list[BScan]:
    t = load_tensors(path)
    keys = sorted(k for k in t if k.startswith("bscan_"))
    return [BScan(t[k], float(t["trace_spacing"][i]), float(t["origins"][i])) for i, k in enumerate(keys)]

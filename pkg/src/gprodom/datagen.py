"""Synthetic point-scatterer radar scenes, labelled B-scan pairs, and trajectory I/O.

Echo model: a scatterer at (x0, d) seen from along-track position x arrives
after the two-way time tau = 2 sqrt(d^2 + (x - x0)^2) / v with geometric
spreading amplitude reflectivity / (v tau), rendered as a Ricker wavelet.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autonn.checkpoint import load_tensors, save_tensors
from .preprocess import (
    AScan, PreprocessConfig, assemble_bscan, normalize_bscan, preprocess_array, resample_rows,
)


@dataclass(frozen=True)
class Scatterer:
    x0: float
    depth: float
    reflectivity: float


@dataclass
class Scene:
    scatterers: list[Scatterer]
    velocity: float = 1.0e8
    frequency: float = 400e6
    noise: float = 0.0

    def __post_init__(self):
        self.scatterers = [s if isinstance(s, Scatterer) else Scatterer(*s) for s in self.scatterers]
        if self.velocity <= 0:
            raise ValueError(f"propagation velocity must be positive, got {self.velocity}")
        if not self.scatterers:
            raise ValueError("scene needs at least one scatterer")
        if any(s.depth <= 0 for s in self.scatterers):
            raise ValueError("scatterer depths must be positive")
        if self.noise < 0:
            raise ValueError("noise level must be non-negative")

    def delay(self, x) -> np.ndarray:
        """Two-way travel times, shape (n_scatterers, len(x))."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        x0 = np.array([s.x0 for s in self.scatterers])[:, None]
        d = np.array([s.depth for s in self.scatterers])[:, None]
        return 2.0 * np.sqrt(d * d + (x[None, :] - x0) ** 2) / self.velocity


def ricker(t: np.ndarray, frequency: float) -> np.ndarray:
    a = (math.pi * frequency * t) ** 2
    return (1.0 - 2.0 * a) * np.exp(-a)


def simulate_section(scene: Scene, xs: Sequence[float], dt: float, n_samples: int,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Traces at along-track positions ``xs`` as an (n_samples, len(xs)) matrix.

    Echoes whose wavelet lies wholly past the trace window are dropped.
    """
    xs = np.asarray(xs, dtype=np.float64)
    t = dt * np.arange(n_samples)
    out = np.zeros((n_samples, xs.size))
    tau = scene.delay(xs)
    refl = np.array([s.reflectivity for s in scene.scatterers])
    support = 1.5 / scene.frequency
    t_end = t[-1] + support
    for k in range(tau.shape[0]):
        if refl[k] == 0.0:
            continue
        cols = np.nonzero(tau[k] <= t_end)[0]
        if cols.size == 0:
            continue
        tk = tau[k, cols]
        amp = refl[k] / (scene.velocity * tk)
        out[:, cols] += amp[None, :] * ricker(t[:, None] - tk[None, :], scene.frequency)
    if scene.noise > 0:
        if rng is None:
            raise ValueError("a random generator is required when the scene has noise")
        out += rng.normal(0.0, scene.noise, size=out.shape)
    return out


def simulate_ascan(scene: Scene, x: float, dt: float, n_samples: int, seed=None) -> AScan:
    rng = np.random.default_rng(seed)
    return AScan(simulate_section(scene, [x], dt, n_samples, rng)[:, 0], dt, 0.0, float(x))


# ------------------------------------------------------------------ pair generation

@dataclass(frozen=True)
class SceneConfig:
    track_length: float = 40.0
    density: float = 4.0
    depth_min: float = 0.2
    depth_max: float = 1.3
    velocity: float = 1.0e8
    frequency: float = 400e6
    noise: float = 0.05
    dt: float = 0.25e-9
    n_samples: int = 128
    rows: int = 64

    def __post_init__(self):
        errors = []
        if self.track_length <= 0 or self.density <= 0:
            errors.append("track_length and density must be positive")
        if not 0 < self.depth_min <= self.depth_max:
            errors.append(f"need 0 < depth_min <= depth_max, got ({self.depth_min}, {self.depth_max})")
        if self.velocity <= 0 or self.frequency <= 0 or self.dt <= 0:
            errors.append("velocity, frequency and dt must be positive")
        if self.noise < 0:
            errors.append("noise must be non-negative")
        if self.n_samples < 16 or self.rows < 1 or self.rows > self.n_samples:
            errors.append(f"need n_samples >= 16 and 1 <= rows <= n_samples, got {self.n_samples}, {self.rows}")
        elif 2 * self.depth_max / self.velocity > self.dt * (self.n_samples - 1):
            errors.append("n_samples * dt does not cover the deepest apex echo")
        if errors:
            raise ValueError("; ".join(errors))


@dataclass(frozen=True)
class MotionConfig:
    step_min: float = 0.0
    step_max: float = 0.3
    jitter: float = 0.3

    def __post_init__(self):
        if not 0 <= self.step_min <= self.step_max:
            raise ValueError(f"need 0 <= step_min <= step_max, got ({self.step_min}, {self.step_max})")
        if not 0 <= self.jitter < 1:
            raise ValueError(f"jitter must lie in [0, 1), got {self.jitter}")

    @property
    def mean(self) -> float:
        return 0.5 * (self.step_min + self.step_max)


def random_scene(cfg: SceneConfig, rng: np.random.Generator) -> Scene:
    n = max(1, int(rng.poisson(cfg.density * cfg.track_length)))
    x0 = rng.uniform(0.0, cfg.track_length, n)
    depth = rng.uniform(cfg.depth_min, cfg.depth_max, n)
    refl = rng.uniform(0.3, 1.0, n) * rng.choice([-1.0, 1.0], n)
    return Scene([Scatterer(*v) for v in zip(x0, depth, refl)], cfg.velocity, cfg.frequency, cfg.noise)


def sample_steps(motion: MotionConfig, count: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(motion.step_min, motion.step_max, count)


@dataclass
class OdomPair:
    b_prev: np.ndarray
    b_cur: np.ndarray
    label: float
    trajectory: str = ""

    def __post_init__(self):
        if self.b_prev.shape != self.b_cur.shape:
            raise ValueError(f"B-scan extents differ: {self.b_prev.shape} vs {self.b_cur.shape}")
        if self.label < 0:
            raise ValueError(f"label must be non-negative, got {self.label}")


def _pass_positions(start: float, stop: float, spacing: float, jitter: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Irregular acquisition positions covering [start, stop] with both ends included."""
    steps = spacing * rng.uniform(1.0 - jitter, 1.0 + jitter, int((stop - start) / (spacing * (1 - jitter))) + 4)
    pos = start + np.concatenate([[0.0], np.cumsum(steps)])
    pos = pos[pos < stop]
    return np.append(pos, stop) if pos[-1] < stop else pos


def make_pair(scene: Scene, s: float, step: float, scene_cfg: SceneConfig, motion: MotionConfig,
              pre: PreprocessConfig, rng: np.random.Generator, trajectory: str = "") -> OdomPair:
    """Simulate one pass covering both windows, condition it, cut B_{t-1} at s and B_t at s + step."""
    width = pre.L * pre.trace_spacing
    pos = _pass_positions(s - pre.trace_spacing, s + step + width + pre.trace_spacing,
                          pre.trace_spacing, motion.jitter, rng)
    raw = simulate_section(scene, pos, scene_cfg.dt, scene_cfg.n_samples, rng)
    clean = preprocess_array(raw, scene_cfg.dt, pre)
    traces = [AScan(clean[:, j], scene_cfg.dt, 0.0, float(p)) for j, p in enumerate(pos)]
    single = PreprocessConfig(**{**asdict(pre), "stride": pre.L})
    prev = assemble_bscan(traces, single, origin=s)[0].traces
    cur = assemble_bscan(traces, single, origin=s + step)[0].traces
    prev = normalize_bscan(resample_rows(prev, scene_cfg.rows))
    cur = normalize_bscan(resample_rows(cur, scene_cfg.rows))
    return OdomPair(prev, cur, float(step), trajectory)


def generate_pairs(scene_cfg: SceneConfig, motion: MotionConfig, count: int, seed: int,
                   pre: PreprocessConfig | None = None, trajectory: str = "traj_00",
                   scene: Scene | None = None) -> list[OdomPair]:
    """``count`` labelled pairs from one synthetic trajectory (one scene)."""
    pre = pre or PreprocessConfig()
    width = pre.L * pre.trace_spacing
    if motion.step_max >= width / 2:
        raise ValueError(f"step_max {motion.step_max} must be below half the B-scan width ({width / 2:g} m)")
    margin = 2 * pre.trace_spacing
    if scene_cfg.track_length < width + motion.step_max + 2 * margin:
        raise ValueError("track_length too short for one pair of B-scans")
    base = np.random.default_rng(seed)
    scene = scene or random_scene(scene_cfg, base)
    steps = sample_steps(motion, count, base)
    starts = base.uniform(margin, scene_cfg.track_length - width - motion.step_max - margin, count)
    pairs = []
    for i in range(count):
        # per-pair generator so pairs can be built independently
        rng = np.random.default_rng([seed, i])
        pairs.append(make_pair(scene, starts[i], steps[i], scene_cfg, motion, pre, rng, trajectory))
    return pairs


# ------------------------------------------------------------------ datasets

@dataclass
class PairDataset:
    prev: np.ndarray
    cur: np.ndarray
    labels: np.ndarray
    trajectory_index: np.ndarray
    trajectory_names: list[str]

    def __len__(self) -> int:
        return self.labels.size

    @property
    def pair_trajectories(self) -> list[str]:
        return [self.trajectory_names[i] for i in self.trajectory_index]

    def subset(self, names: Iterable[str]) -> "PairDataset":
        names = list(names)
        unknown = [n for n in names if n not in self.trajectory_names]
        if unknown:
            raise ValueError(f"unknown trajectories {unknown}")
        keep_idx = [self.trajectory_names.index(n) for n in names]
        mask = np.isin(self.trajectory_index, keep_idx)
        return PairDataset(self.prev[mask], self.cur[mask], self.labels[mask],
                           self.trajectory_index[mask], list(self.trajectory_names))

    def take(self, idx) -> "PairDataset":
        idx = np.asarray(idx)
        return PairDataset(self.prev[idx], self.cur[idx], self.labels[idx],
                           self.trajectory_index[idx], list(self.trajectory_names))

    def present_trajectories(self) -> list[str]:
        return [self.trajectory_names[i] for i in sorted(set(self.trajectory_index.tolist()))]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.prev, self.cur, self.labels, self.trajectory_index.astype(np.float64)):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        h.update(json.dumps(self.trajectory_names).encode())
        return h.hexdigest()

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_tensors(directory / "pairs.bin", {
            "b_prev": self.prev, "b_cur": self.cur, "labels": self.labels,
            "trajectory_index": self.trajectory_index.astype(np.float64),
        })
        (directory / "trajectories.json").write_text(json.dumps(self.trajectory_names, indent=2) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> "PairDataset":
        directory = Path(directory)
        for name in ("pairs.bin", "trajectories.json"):
            if not (directory / name).exists():
                raise FileNotFoundError(f"missing dataset file {directory / name}")
        t = load_tensors(directory / "pairs.bin")
        names = json.loads((directory / "trajectories.json").read_text())
        return cls(t["b_prev"], t["b_cur"], t["labels"], t["trajectory_index"].astype(np.int64), names)

    @classmethod
    def from_pairs(cls, pairs: Sequence[OdomPair]) -> "PairDataset":
        names = sorted({p.trajectory for p in pairs})
        return cls(np.stack([p.b_prev for p in pairs]), np.stack([p.b_cur for p in pairs]),
                   np.array([p.label for p in pairs]),
                   np.array([names.index(p.trajectory) for p in pairs], dtype=np.int64), names)


def generate_dataset(scene_cfg: SceneConfig, motion: MotionConfig, pre: PreprocessConfig,
                     n_pairs: int, n_trajectories: int, seed: int) -> PairDataset:
    """Pairs spread as evenly as possible over independent synthetic trajectories."""
    if n_pairs < 1 or n_trajectories < 1:
        raise ValueError("need at least one pair and one trajectory")
    counts = [n_pairs // n_trajectories + (1 if i < n_pairs % n_trajectories else 0)
              for i in range(n_trajectories)]
    pairs: list[OdomPair] = []
    for i, c in enumerate(counts):
        pairs += generate_pairs(scene_cfg, motion, c, seed * 1000 + i, pre, f"traj_{i:02d}")
    return PairDataset.from_pairs(pairs)


# ------------------------------------------------------------------ splits

@dataclass(frozen=True)
class SplitSpec:
    train: tuple[str, ...] | None = None
    test: tuple[str, ...] = ()
    n_train: int | None = None
    n_test: int | None = None


def split(names: Sequence[str], spec: SplitSpec) -> tuple[list[str], list[str]]:
    """Partition trajectory names; explicit names win over counts.

    Counts take the first ``n_train`` names (in given order) for training and
    the next ``n_test`` for testing.
    """
    names = list(names)
    if spec.train is None and not spec.test and spec.n_train is not None:
        n_test = spec.n_test if spec.n_test is not None else len(names) - spec.n_train
        if spec.n_train + n_test > len(names):
            raise ValueError(f"split {spec.n_train}/{n_test} exceeds {len(names)} trajectories")
        return names[:spec.n_train], names[spec.n_train:spec.n_train + n_test]
    test = list(spec.test)
    train = list(spec.train) if spec.train is not None else [n for n in names if n not in test]
    unknown = [n for n in train + test if n not in names]
    if unknown:
        raise ValueError(f"split names unknown trajectories: {unknown}")
    overlap = sorted(set(train) & set(test))
    if overlap:
        raise ValueError(f"trajectories in both train and test: {overlap}")
    return train, test


# ------------------------------------------------------------------ trajectory records

@dataclass
class TrajectoryRecord:
    name: str
    gpr_time: np.ndarray
    gpr_position: np.ndarray
    gpr_traces: np.ndarray          # (n_traces, n_samples)
    imu: np.ndarray                 # columns: time_s, yaw_rate, ax, ay
    wheel: np.ndarray               # columns: time_s, speed_mps
    ground_truth: np.ndarray        # columns: time_s, x_m, y_m
    meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        for label, t in (("gpr", self.gpr_time), ("imu", self.imu[:, 0]),
                         ("wheel", self.wheel[:, 0]), ("ground_truth", self.ground_truth[:, 0])):
            _check_monotone(t, f"{self.name}/{label}")
        gt = self.ground_truth[:, 0]
        starts = [a[0] for a in (self.gpr_time, self.imu[:, 0], self.wheel[:, 0]) if a.size]
        ends = [a[-1] for a in (self.gpr_time, self.imu[:, 0], self.wheel[:, 0]) if a.size]
        if starts and (gt[0] > min(starts) + 1e-9 or gt[-1] < max(ends) - 1e-9):
            raise ValueError(f"{self.name}: ground truth [{gt[0]:g}, {gt[-1]:g}] does not cover "
                             f"sensor span [{min(starts):g}, {max(ends):g}]")


def _check_monotone(t: np.ndarray, label: str) -> None:
    bad = np.nonzero(np.diff(t) <= 0)[0]
    if bad.size:
        # +2: 1-based data rows after the header line, and diff points at the later row
        raise ValueError(f"{label}: timestamps not strictly increasing at data row {bad[0] + 2}")


def _read_csv(path: Path, expected: Sequence[str] | None = None) -> tuple[list[str], np.ndarray]:
    if not path.exists():
        raise FileNotFoundError(f"missing trajectory file {path}")
    with path.open(newline="") as fh:
        header = next(csv.reader(fh), None)
    if not header:
        raise ValueError(f"{path}: header row required")
    if expected is not None and header[:len(expected)] != list(expected):
        raise ValueError(f"{path}: expected columns {list(expected)}, got {header}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        data = np.zeros((0, len(header)))
    return header, data


def _write_csv(path: Path, header: Sequence[str], data: np.ndarray) -> None:
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def write_trajectory(directory: str | Path, rec: TrajectoryRecord) -> Path:
    d = Path(directory) / rec.name
    d.mkdir(parents=True, exist_ok=True)
    n_s = rec.gpr_traces.shape[1] if rec.gpr_traces.size else 0
    gpr = np.column_stack([rec.gpr_time, rec.gpr_position, rec.gpr_traces]) if rec.gpr_time.size \
        else np.zeros((0, 2 + n_s))
    _write_csv(d / "gpr.csv", ["time_s", "along_track_m"] + [f"s{i}" for i in range(n_s)], gpr)
    _write_csv(d / "imu.csv", ["time_s", "yaw_rate", "ax", "ay"], rec.imu)
    _write_csv(d / "wheel.csv", ["time_s", "speed_mps"], rec.wheel)
    _write_csv(d / "ground_truth.csv", ["time_s", "x_m", "y_m"], rec.ground_truth)
    return d


def read_trajectory(d: Path) -> TrajectoryRecord:
    _, gpr = _read_csv(d / "gpr.csv", ["time_s", "along_track_m"])
    _, imu = _read_csv(d / "imu.csv", ["time_s", "yaw_rate", "ax", "ay"])
    _, wheel = _read_csv(d / "wheel.csv", ["time_s", "speed_mps"])
    _, gt = _read_csv(d / "ground_truth.csv", ["time_s", "x_m", "y_m"])
    rec = TrajectoryRecord(d.name, gpr[:, 0], gpr[:, 1], gpr[:, 2:], imu, wheel, gt)
    rec.validate()
    return rec


def load_trajectories(directory: str | Path) -> list[TrajectoryRecord]:
    """Every sub-directory is one trajectory; returned sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"trajectory directory {directory} does not exist")
    return [read_trajectory(d) for d in sorted(p for p in directory.iterdir() if p.is_dir())]

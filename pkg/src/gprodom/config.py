"""Run configuration: JSON sections mapped onto the module config dataclasses.

Every key is validated; unknown keys and invalid values are collected over
all sections and reported together.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, is_dataclass
from pathlib import Path
from typing import Any

from .autonn.optim import OptimizerConfig
from .datagen import MotionConfig, SceneConfig, SplitSpec
from .fusion import FusionConfig, SimConfig
from .odomnet import NetConfig
from .preprocess import PreprocessConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every offending key."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid config: " + "; ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class DataConfig:
    n_pairs: int = 2000
    n_trajectories: int = 6
    n_train: int | None = 4
    n_test: int | None = 2
    train: tuple[str, ...] | None = None
    test: tuple[str, ...] = ()
    n_runs: int = 3
    raw_traces: int = 200

    def __post_init__(self):
        if self.train is not None:
            object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "test", tuple(self.test))
        errors = []
        if self.n_pairs < 1 or self.n_trajectories < 1:
            errors.append("n_pairs and n_trajectories must be >= 1")
        if self.n_runs < 1:
            errors.append(f"n_runs must be >= 1, got {self.n_runs}")
        if self.raw_traces < 2:
            errors.append(f"raw_traces must be >= 2, got {self.raw_traces}")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def split_spec(self) -> SplitSpec:
        if self.train is not None or self.test:
            return SplitSpec(train=self.train, test=self.test)
        return SplitSpec(n_train=self.n_train, n_test=self.n_test)


@dataclass(frozen=True)
class PathsConfig:
    dataset: str | None = None
    checkpoint: str | None = None
    runs: str | None = None
    input: str | None = None
    positions: str | None = None


SECTIONS: dict[str, type] = {
    "scene": SceneConfig,
    "motion": MotionConfig,
    "preprocess": PreprocessConfig,
    "data": DataConfig,
    "net": NetConfig,
    "train": TrainConfig,
    "sim": SimConfig,
    "fusion": FusionConfig,
    "paths": PathsConfig,
}

HELP: dict[str, dict[str, str]] = {
    "scene": {
        "track_length": "length of each synthetic survey line (m)",
        "density": "buried scatterers per meter of track",
        "depth_min": "shallowest scatterer depth (m)",
        "depth_max": "deepest scatterer depth (m)",
        "velocity": "wave speed in the ground (m/s)",
        "frequency": "Ricker wavelet centre frequency (Hz)",
        "noise": "additive noise std relative to unit echo amplitude",
        "dt": "trace sample interval (s)",
        "n_samples": "samples per simulated trace",
        "rows": "B-scan rows after block averaging",
    },
    "motion": {
        "step_min": "smallest inter-frame distance label (m)",
        "step_max": "largest inter-frame distance label (m)",
        "jitter": "relative jitter of trace positions within a pass",
    },
    "preprocess": {
        "f_lo": "bandpass low cutoff (Hz); null means 0.1 x Nyquist",
        "f_hi": "bandpass high cutoff (Hz); null means 0.8 x Nyquist",
        "filter_order": "Butterworth order per pass",
        "sec_alpha": "exponential gain rate (1/s); null gives 20 dB at the last sample",
        "sec_power": "spreading exponent of the gain",
        "sec_t0": "gain reference time (s); null uses the first positive sample time",
        "dewow_window": "odd running-mean window (samples)",
        "wavelet": "PyWavelets discrete wavelet name",
        "levels": "wavelet decomposition levels",
        "threshold": "'universal' or a fixed soft threshold",
        "L": "traces per B-scan",
        "trace_spacing": "resampling grid spacing along track (m)",
        "stride": "window stride in traces; null means L / 2",
    },
    "data": {
        "n_pairs": "total labelled B-scan pairs to generate",
        "n_trajectories": "independent synthetic trajectories (one scene each)",
        "n_train": "first n_train trajectories train the network",
        "n_test": "next n_test trajectories evaluate it",
        "train": "explicit training trajectory names (overrides counts)",
        "test": "explicit test trajectory names (overrides counts)",
        "n_runs": "simulated fusion runs written by simulate",
        "raw_traces": "raw traces per trajectory written for preprocess",
    },
    "net": {
        "height": "B-scan rows fed to the network (multiple of 32)",
        "width": "B-scan columns fed to the network (multiple of 32)",
        "in_channels": "input channels",
        "widths": "channel widths of the four residual stages",
        "blocks": "residual blocks per stage",
        "block": "'basic' or 'bottleneck'",
        "stem_kernel": "odd kernel size of the stem convolution",
        "compressed_channels": "channels of the compressed low-level map",
        "similarity_channels": "length of the similarity descriptor",
        "head_widths": "hidden widths of the two regression layers",
        "dropout": "dropout probability in the head",
        "reduction": "channel-attention reduction ratio",
        "spatial_kernel": "odd kernel size of the spatial-attention conv",
        "variant": "full | difference_only | similarity_only | feature_concat",
        "init_seed": "seed of the weight initialisation",
    },
    "train": {
        "epochs": "maximum training epochs",
        "batch_size": "mini-batch size",
        "optimizer": "object with kind (adam|sgd), lr, beta1, beta2, eps, weight_decay, momentum",
        "seed": "seed of shuffling, dropout and the validation hold-out",
        "eval_every": "validate every n epochs",
        "patience": "validations without improvement before stopping",
        "val_fraction": "share of training pairs held out for model selection",
        "checkpoint": "path written whenever validation improves",
        "variant": "network variant to train",
    },
    "sim": {
        "duration": "run length (s)",
        "frame_interval": "GPR frame (state) interval (s)",
        "imu_rate": "IMU rate (Hz)",
        "wheel_rate": "wheel encoder rate (Hz)",
        "gt_rate": "ground-truth rate (Hz)",
        "speed_mean": "mean forward speed (m/s)",
        "speed_amp": "speed oscillation amplitude (m/s)",
        "speed_period": "speed oscillation period (s)",
        "yaw_offset": "constant yaw rate (rad/s)",
        "yaw_amp": "yaw-rate oscillation amplitude (rad/s)",
        "yaw_period": "yaw-rate oscillation period (s)",
        "gyro_bias": "true gyro bias (rad/s)",
        "accel_bias": "true forward accel bias (m/s^2)",
        "gyro_noise": "gyro noise std per sample (rad/s)",
        "accel_noise": "accel noise std per sample (m/s^2)",
        "wheel_noise": "wheel speed noise std (m/s)",
        "wheel_slip": "relative wheel speed scale error",
        "gpr_std": "noise std of simulated GPR distances (m)",
    },
    "fusion": {
        "prior_std": "prior stds of x, y, theta, v, b_g, b_a at the first state",
        "gyro_noise": "assumed gyro noise std per sample",
        "accel_noise": "assumed accel noise std per sample",
        "gyro_walk": "gyro bias random walk (rad/s/sqrt(s))",
        "accel_walk": "accel bias random walk (m/s^2/sqrt(s))",
        "wheel_std": "wheel speed factor std (m/s)",
        "gpr_std": "GPR distance factor std (m); a network checkpoint overrides it",
        "gpr_form": "'distance' or 'speed' residual form",
        "use_gpr": "include GPR factors",
        "assoc_tol": "timestamp association tolerance (s)",
        "max_iterations": "solver iteration cap",
        "rel_tol": "relative cost change that stops the solver",
    },
    "paths": {
        "dataset": "pair dataset directory (from simulate)",
        "checkpoint": "trained model checkpoint file (from train)",
        "runs": "directory of fusion runs (from simulate)",
        "input": "input file for preprocess or plot",
        "positions": "optional along-track positions CSV for preprocess",
    },
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    scene: SceneConfig = SceneConfig()
    motion: MotionConfig = MotionConfig()
    preprocess: PreprocessConfig = PreprocessConfig()
    data: DataConfig = DataConfig()
    net: NetConfig = NetConfig()
    train: TrainConfig = TrainConfig()
    sim: SimConfig = SimConfig()
    fusion: FusionConfig = FusionConfig()
    paths: PathsConfig = PathsConfig()

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls: type, values: dict, where: str, problems: list[str]):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - names)
    problems += [f"unknown key {where}.{k}" for k in unknown]
    kwargs = {k: v for k, v in values.items() if k in names}
    if cls is TrainConfig and isinstance(kwargs.get("optimizer"), dict):
        opt = _build(OptimizerConfig, kwargs["optimizer"], f"{where}.optimizer", problems)
        if opt is None:
            return None
        kwargs["optimizer"] = opt
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        problems.append(f"{where}: {exc}")
        return None


def resolve(doc: dict | None = None, seed: int | None = None) -> RunConfig:
    """Merge a JSON document over the defaults; ``seed`` overrides the document."""
    if doc is not None and not isinstance(doc, dict):
        raise ConfigError(["config root must be a JSON object"])
    doc = dict(doc or {})
    problems: list[str] = []
    unknown = sorted(set(doc) - set(SECTIONS) - {"seed"})
    problems += [f"unknown section {k}" for k in unknown]
    built = {}
    for name, cls in SECTIONS.items():
        values = doc.get(name, {})
        if not isinstance(values, dict):
            problems.append(f"section {name} must be a JSON object")
            continue
        built[name] = _build(cls, values, name, problems)
    s = doc.get("seed", 42) if seed is None else seed
    if not isinstance(s, int) or isinstance(s, bool) or s < 0:
        problems.append(f"seed must be a non-negative integer, got {s!r}")
    if problems:
        raise ConfigError(problems)
    return RunConfig(seed=s, **built)


def load_config(path: str | Path | None, seed: int | None = None) -> RunConfig:
    if path is None:
        return resolve({}, seed)
    p = Path(path)
    if not p.exists():
        raise ConfigError([f"config file {p} does not exist"])
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{p}: invalid JSON ({exc.msg} at line {exc.lineno})"]) from exc
    if not isinstance(doc, dict):
        raise ConfigError([f"{p}: config root must be a JSON object"])
    return resolve(doc, seed)


def describe_keys() -> str:
    """Every config key with its default and meaning, for ``--help``."""
    defaults = RunConfig().to_dict()
    lines = ["config keys (JSON sections; unknown keys are rejected):",
             f"  seed = {defaults['seed']}: global seed for data, training and simulation"]
    for name, cls in SECTIONS.items():
        lines.append(f"  [{name}]")
        for f in fields(cls):
            default = defaults[name][f.name]
            lines.append(f"    {f.name} = {json.dumps(default)}: {HELP[name][f.name]}")
    return "\n".join(lines)


def section_dict(cfg: Any) -> dict:
    return _plain(asdict(cfg)) if is_dataclass(cfg) else cfg

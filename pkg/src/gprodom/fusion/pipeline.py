"""Synthetic fusion runs, graph construction, and the fuse-and-score pipeline."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid

from ..datagen import TrajectoryRecord, read_trajectory, write_trajectory
from .factors import STATE_DIM, bias_factor, gpr_factor, imu_factor, prior_factor, wheel_factor
from .metrics import ate_rmse, path_length
from .preint import preintegrate_imu, wrap_angle
from .solver import FactorGraph, SolveResult, SolverConfig, optimize


@dataclass(frozen=True)
class SimConfig:
    """Ground robot driving a smooth planar path with biased, noisy sensors."""

    duration: float = 60.0
    frame_interval: float = 0.5
    imu_rate: float = 100.0
    wheel_rate: float = 20.0
    gt_rate: float = 20.0
    speed_mean: float = 0.3
    speed_amp: float = 0.08
    speed_period: float = 23.0
    yaw_offset: float = 0.05
    yaw_amp: float = 0.2
    yaw_period: float = 31.0
    gyro_bias: float = 0.003
    accel_bias: float = 0.02
    gyro_noise: float = 0.002
    accel_noise: float = 0.03
    wheel_noise: float = 0.02
    wheel_slip: float = 0.06
    gpr_std: float = 0.02

    def __post_init__(self):
        if self.duration <= 0 or self.frame_interval <= 0:
            raise ValueError("duration and frame_interval must be positive")
        if min(self.imu_rate, self.wheel_rate, self.gt_rate) <= 0:
            raise ValueError("sensor rates must be positive")
        if self.speed_amp >= self.speed_mean:
            raise ValueError("speed_amp must stay below speed_mean so the robot keeps moving forward")
        if min(self.gyro_noise, self.accel_noise, self.wheel_noise, self.gpr_std) < 0:
            raise ValueError("noise levels must be non-negative")


@dataclass(frozen=True)
class FusionConfig:
    prior_std: tuple[float, ...] = (0.01, 0.01, 0.01, 0.01, 0.01, 0.1)
    gyro_noise: float = 0.002
    accel_noise: float = 0.03
    gyro_walk: float = 1e-4
    accel_walk: float = 1e-3
    wheel_std: float = 0.05
    gpr_std: float = 0.02
    gpr_form: str = "distance"
    use_gpr: bool = True
    assoc_tol: float = 0.05
    max_iterations: int = 100
    rel_tol: float = 1e-9

    def __post_init__(self):
        object.__setattr__(self, "prior_std", tuple(self.prior_std))
        errors = []
        if len(self.prior_std) != STATE_DIM or min(self.prior_std) <= 0:
            errors.append(f"prior_std needs {STATE_DIM} positive entries")
        for name in ("wheel_std", "gpr_std", "gyro_walk", "accel_walk", "assoc_tol"):
            if getattr(self, name) <= 0:
                errors.append(f"{name} must be positive")
        if self.gyro_noise < 0 or self.accel_noise < 0:
            errors.append("IMU noise levels must be non-negative")
        if self.gpr_form not in ("distance", "speed"):
            errors.append(f"gpr_form must be 'distance' or 'speed', got {self.gpr_form!r}")
        if self.max_iterations < 1 or self.rel_tol <= 0:
            errors.append("max_iterations must be >= 1 and rel_tol > 0")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def solver(self) -> SolverConfig:
        return SolverConfig(max_iterations=self.max_iterations, rel_tol=self.rel_tol)


@dataclass
class FusionRun:
    """Sensor streams of one trajectory plus the state (frame) timestamps."""

    name: str
    frame_times: np.ndarray
    imu: np.ndarray                 # time, yaw_rate, ax, ay
    wheel: np.ndarray               # time, speed
    ground_truth: np.ndarray        # time, x, y
    gpr_odom: np.ndarray            # t_prev, t_cur, distance
    initial_state: np.ndarray       # (x, y, theta, v, b_g, b_a) at the first frame
    frame_positions: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def length(self) -> float:
        return path_length(self.ground_truth[:, 1:3])

    def to_record(self) -> TrajectoryRecord:
        pos = self.frame_positions if self.frame_positions.size else np.zeros(self.frame_times.size)
        return TrajectoryRecord(self.name, self.frame_times, pos, np.zeros((self.frame_times.size, 0)),
                                self.imu, self.wheel, self.ground_truth,
                                {"initial_state": self.initial_state.tolist()})


# ------------------------------------------------------------------ simulation

def _truth(cfg: SimConfig, t: np.ndarray):
    ws, wy = 2 * np.pi / cfg.speed_period, 2 * np.pi / cfg.yaw_period
    v = cfg.speed_mean + cfg.speed_amp * np.sin(ws * t)
    dv = cfg.speed_amp * ws * np.cos(ws * t)
    omega = cfg.yaw_offset + cfg.yaw_amp * np.sin(wy * t + 0.3)
    theta = cfg.yaw_offset * t - cfg.yaw_amp / wy * (np.cos(wy * t + 0.3) - np.cos(0.3))
    return v, dv, omega, theta


def simulate_run(cfg: SimConfig, seed: int, name: str = "sim_00",
                 gpr_distances: np.ndarray | None = None) -> FusionRun:
    """Simulate truth, IMU, wheel and GPR-distance streams.

    GPR distances default to true inter-frame displacement plus Gaussian
    noise of ``cfg.gpr_std``; ``gpr_distances`` overrides them (e.g. with
    network predictions computed from the true steps).
    """
    rng = np.random.default_rng(seed)
    fine = np.arange(0.0, cfg.duration + 1e-9, 1e-3)
    v, dv, omega, theta = _truth(cfg, fine)
    x = cumulative_trapezoid(v * np.cos(theta), fine, initial=0.0)
    y = cumulative_trapezoid(v * np.sin(theta), fine, initial=0.0)

    def at(times, arr):
        return np.interp(times, fine, arr)

    t_imu = np.arange(0.0, cfg.duration + 1e-9, 1.0 / cfg.imu_rate)
    vi, dvi, wi, _ = _truth(cfg, t_imu)
    imu = np.column_stack([
        t_imu,
        wi + cfg.gyro_bias + rng.normal(0, cfg.gyro_noise, t_imu.size),
        dvi + cfg.accel_bias + rng.normal(0, cfg.accel_noise, t_imu.size),
        vi * wi + rng.normal(0, cfg.accel_noise, t_imu.size),
    ])
    t_wh = np.arange(0.0, cfg.duration + 1e-9, 1.0 / cfg.wheel_rate)
    wheel = np.column_stack([t_wh, _truth(cfg, t_wh)[0] * (1 + cfg.wheel_slip)
                             + rng.normal(0, cfg.wheel_noise, t_wh.size)])
    t_gt = np.arange(0.0, cfg.duration + 1e-9, 1.0 / cfg.gt_rate)
    gt = np.column_stack([t_gt, at(t_gt, x), at(t_gt, y)])

    frames = np.arange(0.0, cfg.duration + 1e-9, cfg.frame_interval)
    fx, fy = at(frames, x), at(frames, y)
    true_steps = np.hypot(np.diff(fx), np.diff(fy))
    if gpr_distances is None:
        meas = true_steps + rng.normal(0, cfg.gpr_std, true_steps.size)
    else:
        meas = np.asarray(gpr_distances, dtype=np.float64)
        if meas.shape != true_steps.shape:
            raise ValueError(f"need {true_steps.size} GPR distances, got {meas.shape}")
    gpr = np.column_stack([frames[:-1], frames[1:], meas])
    arc = cumulative_trapezoid(v, fine, initial=0.0)
    init = np.array([0.0, 0.0, 0.0, cfg.speed_mean, 0.0, 0.0])
    return FusionRun(name, frames, imu, wheel, gt, gpr, init, at(frames, arc))


def true_frame_steps(cfg: SimConfig) -> np.ndarray:
    """Noise-free inter-frame distances of the simulated path (seed independent)."""
    fine = np.arange(0.0, cfg.duration + 1e-9, 1e-3)
    v, _, _, theta = _truth(cfg, fine)
    x = cumulative_trapezoid(v * np.cos(theta), fine, initial=0.0)
    y = cumulative_trapezoid(v * np.sin(theta), fine, initial=0.0)
    frames = np.arange(0.0, cfg.duration + 1e-9, cfg.frame_interval)
    return np.hypot(np.diff(np.interp(frames, fine, x)), np.diff(np.interp(frames, fine, y)))


# ------------------------------------------------------------------ graph building

def dead_reckoning(run: FusionRun) -> np.ndarray:
    """Initial states from raw gyro heading and wheel speed; biases start at zero."""
    t = run.frame_times
    states = np.zeros((t.size, STATE_DIM))
    states[0] = run.initial_state
    imu_t = run.imu[:, 0]
    heading = run.initial_state[2] + cumulative_trapezoid(run.imu[:, 1], imu_t, initial=0.0)
    theta = np.interp(t, imu_t, heading)
    speed = np.interp(t, run.wheel[:, 0], run.wheel[:, 1])
    speed[0] = run.initial_state[3]
    for k in range(1, t.size):
        dt = t[k] - t[k - 1]
        mid = 0.5 * (theta[k - 1] + theta[k])
        vm = 0.5 * (speed[k - 1] + speed[k])
        states[k, 0] = states[k - 1, 0] + vm * dt * np.cos(mid)
        states[k, 1] = states[k - 1, 1] + vm * dt * np.sin(mid)
    states[:, 2] = wrap_angle(theta)
    states[:, 3] = speed
    return states


def build_graph(run: FusionRun, cfg: FusionConfig, use_gpr: bool | None = None) -> FactorGraph:
    use_gpr = cfg.use_gpr if use_gpr is None else use_gpr
    t = run.frame_times
    if t.size < 2:
        raise ValueError("need at least two frames to fuse")
    graph = FactorGraph(t, dead_reckoning(run))
    graph.add(prior_factor(0, run.initial_state, cfg.prior_std))
    wt, ws = run.wheel[:, 0], run.wheel[:, 1]
    for k in range(t.size):
        if wt[0] - cfg.assoc_tol <= t[k] <= wt[-1] + cfg.assoc_tol:
            graph.add(wheel_factor(k, float(np.interp(t[k], wt, ws)), cfg.wheel_std))
    for k in range(1, t.size):
        pre = preintegrate_imu(run.imu, t[k - 1], t[k], bias=(0.0, 0.0),
                               gyro_noise=cfg.gyro_noise, accel_noise=cfg.accel_noise)
        graph.add(imu_factor(k - 1, k, pre))
        dt = t[k] - t[k - 1]
        graph.add(bias_factor(k - 1, k, cfg.gyro_walk * np.sqrt(dt), cfg.accel_walk * np.sqrt(dt)))
    if use_gpr:
        for t0, t1, dist in run.gpr_odom:
            i, j = int(np.argmin(np.abs(t - t0))), int(np.argmin(np.abs(t - t1)))
            if abs(t[i] - t0) > cfg.assoc_tol or abs(t[j] - t1) > cfg.assoc_tol or j <= i:
                continue
            graph.add(gpr_factor(i, j, float(dist), cfg.gpr_std, cfg.gpr_form, dt=t[j] - t[i]))
    return graph


@dataclass
class FusionResult:
    name: str
    times: np.ndarray
    states: np.ndarray
    ate: float
    length: float
    solve: SolveResult
    factor_counts: dict

    def trajectory_rows(self) -> np.ndarray:
        s = self.states
        return np.column_stack([self.times, s[:, 0], s[:, 1], s[:, 2], s[:, 3]])


def fuse(run: FusionRun, cfg: FusionConfig, use_gpr: bool | None = None) -> FusionResult:
    graph = build_graph(run, cfg, use_gpr)
    solve = optimize(graph, cfg.solver)
    gt = run.ground_truth
    ate = ate_rmse(graph.times, solve.states[:, :2], gt[:, 0], gt[:, 1:3], cfg.assoc_tol)
    return FusionResult(run.name, graph.times, solve.states, ate, run.length, solve, graph.kinds())


# ------------------------------------------------------------------ persistence

def save_run(directory: str | Path, run: FusionRun) -> Path:
    d = write_trajectory(directory, run.to_record())
    np.savetxt(d / "gpr_odom.csv", run.gpr_odom, delimiter=",", header="t_prev_s,t_cur_s,distance_m",
               comments="", fmt="%.17g")
    (d / "initial_state.json").write_text(json.dumps(
        dict(zip(("x_m", "y_m", "theta_rad", "v_mps", "b_g", "b_a"), run.initial_state.tolist())), indent=2) + "\n")
    return d


def load_run(directory: str | Path) -> FusionRun:
    """Read a trajectory directory; gpr.csv rows give frame times, gpr_odom.csv the distances.

    Without ``initial_state.json`` the first-frame pose is taken from the
    ground truth (heading and speed from its first displacement).
    """
    d = Path(directory)
    rec = read_trajectory(d)
    odom_path = d / "gpr_odom.csv"
    gpr = np.loadtxt(odom_path, delimiter=",", skiprows=1, ndmin=2) if odom_path.exists() else np.zeros((0, 3))
    init_path = d / "initial_state.json"
    if init_path.exists():
        init = np.array(list(json.loads(init_path.read_text()).values()), dtype=np.float64)
    else:
        gt = rec.ground_truth
        dx, dy = gt[1, 1] - gt[0, 1], gt[1, 2] - gt[0, 2]
        x0 = np.interp(rec.gpr_time[0], gt[:, 0], gt[:, 1])
        y0 = np.interp(rec.gpr_time[0], gt[:, 0], gt[:, 2])
        init = np.array([x0, y0, np.arctan2(dy, dx), np.hypot(dx, dy) / (gt[1, 0] - gt[0, 0]), 0.0, 0.0])
    return FusionRun(rec.name, rec.gpr_time, rec.imu, rec.wheel, rec.ground_truth, gpr, init, rec.gpr_position)


def write_trajectory_csv(path: str | Path, result: FusionResult) -> None:
    np.savetxt(path, result.trajectory_rows(), delimiter=",", header="time_s,x_m,y_m,theta_rad,v_mps",
               comments="", fmt="%.17g")


def metrics_dict(results: dict[str, FusionResult]) -> dict:
    return {k: {"trajectory": r.name, "ate_m": r.ate, "length_m": r.length, "iterations": r.solve.iterations,
                "converged": r.solve.converged, "final_cost": r.solve.cost_history[-1],
                "factors": r.factor_counts} for k, r in results.items()}


def config_dict(cfg) -> dict:
    return asdict(cfg)

"""Factor kinds, whitened residuals and their analytic Jacobians.

State layout per time step: (x, y, theta, v, b_g, b_a) with v the forward
speed along the heading.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .preint import E1, Preintegrated, rot, wrap_angle

STATE_DIM = 6
STATE_NAMES = ("x", "y", "theta", "v", "b_g", "b_a")
X, Y, TH, V, BG, BA = range(STATE_DIM)
RESIDUAL_DIM = {"prior": 6, "imu": 4, "wheel": 1, "gpr_odom": 1, "bias": 2}
COINCIDENT = 1e-9


@dataclass
class Factor:
    kind: str
    states: tuple[int, ...]
    measurement: np.ndarray
    std: np.ndarray
    preint: Preintegrated | None = None
    form: str = "distance"          # gpr_odom only: "distance" or "speed"
    dt: float = 0.0                 # gpr_odom speed form and bias factors
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in RESIDUAL_DIM:
            raise ValueError(f"unknown factor kind {self.kind!r}")
        self.measurement = np.atleast_1d(np.asarray(self.measurement, dtype=np.float64))
        self.std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        if self.std.size != RESIDUAL_DIM[self.kind]:
            raise ValueError(f"{self.kind} factor needs {RESIDUAL_DIM[self.kind]} noise stds, got {self.std.size}")
        if np.any(~(self.std > 0)):
            raise ValueError(f"{self.kind} factor noise stds must be > 0, got {self.std}")
        n_states = 1 if self.kind in ("prior", "wheel") else 2
        if len(self.states) != n_states:
            raise ValueError(f"{self.kind} factor connects {n_states} state(s), got {self.states}")
        if self.kind == "imu" and self.preint is None:
            raise ValueError("imu factor needs a preintegrated measurement")
        if self.kind == "gpr_odom" and self.form not in ("distance", "speed"):
            raise ValueError(f"gpr_odom form must be 'distance' or 'speed', got {self.form!r}")
        if self.kind == "gpr_odom" and self.form == "speed" and self.dt <= 0:
            raise ValueError("speed-form gpr_odom factor needs dt > 0")

    @property
    def dim(self) -> int:
        return RESIDUAL_DIM[self.kind]


def prior_factor(state: int, value, std) -> Factor:
    return Factor("prior", (state,), value, std)


def wheel_factor(state: int, speed: float, std: float) -> Factor:
    return Factor("wheel", (state,), speed, std)


def gpr_factor(i: int, j: int, distance: float, std: float, form: str = "distance", dt: float = 0.0) -> Factor:
    return Factor("gpr_odom", (i, j), distance, std, form=form, dt=dt)


def bias_factor(i: int, j: int, std_g: float, std_a: float) -> Factor:
    return Factor("bias", (i, j), np.zeros(2), np.array([std_g, std_a]))


def imu_factor(i: int, j: int, pre: Preintegrated, min_std: float = 1e-9) -> Factor:
    """Residual rows: heading, forward speed at j, position (2) in frame i."""
    c = pre.cov
    u = np.array([np.cos(pre.dtheta), np.sin(pre.dtheta)])
    var = np.array([c[0, 0], u @ c[1:3, 1:3] @ u, c[3, 3], c[4, 4]])
    return Factor("imu", (i, j), np.zeros(4), np.maximum(np.sqrt(np.maximum(var, 0.0)), min_std), preint=pre)


# ------------------------------------------------------------------ residuals

def _prior(f: Factor, s: np.ndarray):
    r = s - f.measurement
    r[TH] = wrap_angle(r[TH])
    return r / f.std, {f.states[0]: np.diag(1.0 / f.std)}


def _wheel(f: Factor, s: np.ndarray):
    J = np.zeros((1, STATE_DIM))
    J[0, V] = 1.0 / f.std[0]
    return np.array([(s[V] - f.measurement[0]) / f.std[0]]), {f.states[0]: J}


def _bias(f: Factor, si: np.ndarray, sj: np.ndarray):
    r = np.array([sj[BG] - si[BG], sj[BA] - si[BA]]) / f.std
    Ji, Jj = np.zeros((2, STATE_DIM)), np.zeros((2, STATE_DIM))
    Ji[0, BG], Ji[1, BA] = -1.0 / f.std[0], -1.0 / f.std[1]
    Jj[0, BG], Jj[1, BA] = 1.0 / f.std[0], 1.0 / f.std[1]
    return r, {f.states[0]: Ji, f.states[1]: Jj}


def _gpr(f: Factor, si: np.ndarray, sj: np.ndarray):
    Ji, Jj = np.zeros((1, STATE_DIM)), np.zeros((1, STATE_DIM))
    sd = f.std[0]
    if f.form == "speed":
        # mean forward speed over the interval against distance / dt
        scale = f.dt / sd
        r = (0.5 * (si[V] + sj[V]) - f.measurement[0] / f.dt) * scale
        Ji[0, V] = Jj[0, V] = 0.5 * scale
        return np.array([r]), {f.states[0]: Ji, f.states[1]: Jj}
    d = sj[X:Y + 1] - si[X:Y + 1]
    n = float(np.hypot(d[0], d[1]))
    if n < COINCIDENT:
        # direction undefined at coincident poses: damped gradient of sqrt(|d|^2 + eps^2)
        g = d / np.sqrt(n * n + COINCIDENT ** 2)
    else:
        g = d / n
    Jj[0, X:Y + 1] = g / sd
    Ji[0, X:Y + 1] = -g / sd
    return np.array([(n - f.measurement[0]) / sd]), {f.states[0]: Ji, f.states[1]: Jj}


def _imu(f: Factor, si: np.ndarray, sj: np.ndarray):
    pre = f.preint
    dth, dv, dp = pre.corrected(si[BG], si[BA])
    phi = sj[TH] - si[TH]
    u = np.array([np.cos(phi), np.sin(phi)])
    du = np.array([-np.sin(phi), np.cos(phi)])
    w = si[V] * E1 + dv
    Rt = rot(si[TH]).T
    dRt = np.array([[-np.sin(si[TH]), np.cos(si[TH])], [-np.cos(si[TH]), -np.sin(si[TH])]])
    dpos = sj[X:Y + 1] - si[X:Y + 1]

    r = np.empty(4)
    r[0] = wrap_angle(phi - dth)
    r[1] = sj[V] - u @ w
    r[2:4] = Rt @ dpos - si[V] * E1 * pre.dt - dp

    Ji, Jj = np.zeros((4, STATE_DIM)), np.zeros((4, STATE_DIM))
    Ji[0, TH], Jj[0, TH] = -1.0, 1.0
    Ji[0, BG] = -pre.j_theta_bg

    dphi = -du @ w
    Jj[1, V] = 1.0
    Jj[1, TH], Ji[1, TH] = dphi, -dphi
    Ji[1, V] = -u[0]
    Ji[1, BG] = -u @ pre.j_v_bg
    Ji[1, BA] = -u @ pre.j_v_ba

    Jj[2:4, X:Y + 1] = Rt
    Ji[2:4, X:Y + 1] = -Rt
    Ji[2:4, TH] = dRt @ dpos
    Ji[2:4, V] = -E1 * pre.dt
    Ji[2:4, BG] = -pre.j_p_bg
    Ji[2:4, BA] = -pre.j_p_ba

    inv = 1.0 / f.std
    return r * inv, {f.states[0]: Ji * inv[:, None], f.states[1]: Jj * inv[:, None]}


_DISPATCH = {"prior": _prior, "wheel": _wheel, "bias": _bias, "gpr_odom": _gpr, "imu": _imu}


def residual(f: Factor, states: np.ndarray) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Whitened residual and per-state Jacobian blocks (dim x 6) for one factor."""
    args = [np.asarray(states[k], dtype=np.float64).copy() for k in f.states]
    return _DISPATCH[f.kind](f, *args)

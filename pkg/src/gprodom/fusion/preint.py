"""Planar IMU preintegration with midpoint integration and bias Jacobians.

Deltas are expressed in the body frame at the start of the interval.  The
IMU measures yaw rate and body-frame acceleration (ax forward, ay left);
the accelerometer bias is a single forward-axis offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

E1 = np.array([1.0, 0.0])
SKEW = np.array([[0.0, -1.0], [1.0, 0.0]])  # d/dtheta R(theta) = SKEW @ R(theta)


def rot(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    out = np.mod(np.asarray(a, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    out = np.where(out == -np.pi, np.pi, out)
    return out if out.ndim else float(out)


@dataclass
class Preintegrated:
    dtheta: float
    dv: np.ndarray          # (2,) velocity change in the start frame
    dp: np.ndarray          # (2,) position change beyond v0 * dt, start frame
    dt: float
    # first-order sensitivities to (gyro bias, accel bias) at the linearisation point
    j_theta_bg: float
    j_v_bg: np.ndarray
    j_v_ba: np.ndarray
    j_p_bg: np.ndarray
    j_p_ba: np.ndarray
    bias_lin: np.ndarray    # (bg, ba) used during integration
    cov: np.ndarray         # (5, 5) over (theta, v_x, v_y, p_x, p_y)

    def corrected(self, bg: float, ba: float) -> tuple[float, np.ndarray, np.ndarray]:
        """Deltas re-linearised to a new bias estimate."""
        dbg, dba = bg - self.bias_lin[0], ba - self.bias_lin[1]
        return (self.dtheta + self.j_theta_bg * dbg,
                self.dv + self.j_v_bg * dbg + self.j_v_ba * dba,
                self.dp + self.j_p_bg * dbg + self.j_p_ba * dba)


def interval_samples(imu: np.ndarray, t0: float, t1: float) -> np.ndarray:
    """IMU rows over [t0, t1] with linearly interpolated rows at both endpoints.

    ``imu`` columns: time, yaw_rate, ax, ay.  Requires at least one recorded
    sample inside the closed interval.
    """
    if not t1 > t0:
        raise ValueError(f"preintegration interval must have t1 > t0, got [{t0}, {t1}]")
    t = imu[:, 0]
    if np.any(np.diff(t) <= 0):
        raise ValueError("IMU timestamps must be strictly increasing")
    inside = (t >= t0) & (t <= t1)
    if not inside.any():
        raise ValueError(f"no IMU samples in interval [{t0:.6f}, {t1:.6f}]")
    interior = imu[(t > t0) & (t < t1)]
    ends = np.array([[tt] + [np.interp(tt, t, imu[:, c]) for c in (1, 2, 3)] for tt in (t0, t1)])
    return np.vstack([ends[:1], interior, ends[1:]])


def preintegrate(samples: np.ndarray, bias=(0.0, 0.0), gyro_noise: float = 0.0,
                 accel_noise: float = 0.0) -> Preintegrated:
    """Midpoint integration of bias-corrected rows (time, yaw_rate, ax, ay).

    Noise values are per-sample standard deviations used to propagate a
    first-order covariance of the deltas.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 2 or samples.shape[1] != 4:
        raise ValueError("preintegration needs at least two (time, yaw_rate, ax, ay) rows")
    bg, ba = float(bias[0]), float(bias[1])
    theta, v, p = 0.0, np.zeros(2), np.zeros(2)
    jt_g = 0.0
    jv_g, jv_a, jp_g, jp_a = np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2)
    cov = np.zeros((5, 5))
    q = np.diag([gyro_noise ** 2, accel_noise ** 2, accel_noise ** 2])
    for k in range(samples.shape[0] - 1):
        t_a, w_a, ax_a, ay_a = samples[k]
        t_b, w_b, ax_b, ay_b = samples[k + 1]
        dt = t_b - t_a
        if dt <= 0:
            raise ValueError("IMU timestamps must be strictly increasing")
        a_a = np.array([ax_a - ba, ay_a])
        a_b = np.array([ax_b - ba, ay_b])
        theta_b = theta + 0.5 * ((w_a - bg) + (w_b - bg)) * dt
        jt_g_b = jt_g - dt
        r_a, r_b = rot(theta), rot(theta_b)
        aw = 0.5 * (r_a @ a_a + r_b @ a_b)
        e_a, e_b = SKEW @ r_a @ a_a * jt_g, SKEW @ r_b @ a_b * jt_g_b
        daw_g = 0.5 * (e_a + e_b)
        daw_a = -0.5 * (r_a[:, 0] + r_b[:, 0])
        # exact double integral of a linearly varying world acceleration
        ap = r_a @ a_a / 3.0 + r_b @ a_b / 6.0
        dap_g = e_a / 3.0 + e_b / 6.0
        dap_a = -(r_a[:, 0] / 3.0 + r_b[:, 0] / 6.0)

        # covariance: error state (theta, v, p), noise (gyro, accel x, accel y)
        A = np.eye(5)
        dth = SKEW @ aw
        A[1:3, 0] = dth * dt
        A[3:5, 0] = 0.5 * dth * dt * dt
        A[3:5, 1:3] = np.eye(2) * dt
        B = np.zeros((5, 3))
        B[0, 0] = dt
        rm = 0.5 * (r_a + r_b)
        B[1:3, 1:3] = rm * dt
        B[3:5, 1:3] = 0.5 * rm * dt * dt
        cov = A @ cov @ A.T + B @ q @ B.T

        p = p + v * dt + ap * dt * dt
        jp_g = jp_g + jv_g * dt + dap_g * dt * dt
        jp_a = jp_a + jv_a * dt + dap_a * dt * dt
        v = v + aw * dt
        jv_g = jv_g + daw_g * dt
        jv_a = jv_a + daw_a * dt
        theta, jt_g = theta_b, jt_g_b
    return Preintegrated(theta, v, p, float(samples[-1, 0] - samples[0, 0]), jt_g, jv_g, jv_a, jp_g, jp_a,
                         np.array([bg, ba]), cov)


def preintegrate_imu(imu: np.ndarray, t0: float, t1: float, bias=(0.0, 0.0),
                     gyro_noise: float = 0.0, accel_noise: float = 0.0) -> Preintegrated:
    """Preintegrate the recorded IMU stream between two state times."""
    return preintegrate(interval_samples(imu, t0, t1), bias, gyro_noise, accel_noise)

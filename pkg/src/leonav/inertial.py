"""Strapdown mechanization in a local ENU frame and synthetic IMU data.

Attitude is roll/pitch/yaw with body-to-ENU rotation Rz(yaw) Ry(pitch)
Rx(roll); yaw = pi/2 points the body x axis north. Earth rate and
transport rate are ignored (short windows).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GimbalLock
from .frames import wrap_angle

GRAVITY = np.array([0.0, 0.0, -9.80665])
G0 = 9.80665
_GIMBAL_MARGIN = 1e-3
_MAX_DT = 0.5


@dataclass(frozen=True)
class NavState:
    p_enu: np.ndarray
    v_enu: np.ndarray
    theta: np.ndarray  # roll, pitch, yaw
    t: float = 0.0

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p_enu, self.v_enu, self.theta])

    @classmethod
    def from_vector(cls, x, t: float = 0.0) -> "NavState":
        x = np.asarray(x, dtype=float)
        theta = x[6:9].copy()
        theta[2] = wrap_angle(theta[2])
        return cls(x[0:3].copy(), x[3:6].copy(), theta, float(t))


@dataclass(frozen=True)
class ImuSample:
    t: float
    accel: np.ndarray  # specific force, body, m/s^2
    gyro: np.ndarray  # body rates, rad/s


@dataclass(frozen=True)
class ImuNoiseModel:
    accel_noise_std: float = 0.0  # m/s^2 per sample
    gyro_noise_std: float = 0.0  # rad/s per sample
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.accel_noise_std < 0 or self.gyro_noise_std < 0:
            raise ValueError("noise std must be non-negative")

    @classmethod
    def tactical(cls, rate: float = 10.0, gyro_arw_deg: float = 0.005, accel_vrw_ug: float = 50.0) -> "ImuNoiseModel":
        """Tactical-grade white noise from densities (deg/s/rtHz, ug/rtHz)."""
        root = math.sqrt(rate)
        return cls(accel_vrw_ug * 1e-6 * G0 * root, math.radians(gyro_arw_deg) * root)

    def scaled(self, factor: float) -> "ImuNoiseModel":
        return ImuNoiseModel(self.accel_noise_std * factor, self.gyro_noise_std * factor,
                             self.accel_bias, self.gyro_bias)


def body_to_enu(theta) -> np.ndarray:
    """Rotation matrices for Euler angles of shape (..., 3)."""
    theta = np.asarray(theta, dtype=float)
    r, p, y = theta[..., 0], theta[..., 1], theta[..., 2]
    cr, sr, cp, sp, cy, sy = np.cos(r), np.sin(r), np.cos(p), np.sin(p), np.cos(y), np.sin(y)
    return np.stack([
        np.stack([cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr], axis=-1),
        np.stack([sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr], axis=-1),
        np.stack([-sp, cp * sr, cp * cr], axis=-1),
    ], axis=-2)


def euler_rate_matrix(theta) -> np.ndarray:
    """Map from body rates to roll/pitch/yaw rates."""
    theta = np.asarray(theta, dtype=float)
    r, p = theta[..., 0], theta[..., 1]
    if np.any(np.abs(np.abs(p) - math.pi / 2) < _GIMBAL_MARGIN):
        raise GimbalLock("pitch within 1e-3 rad of +/-pi/2")
    cr, sr, cp, tp = np.cos(r), np.sin(r), np.cos(p), np.tan(p)
    one, zero = np.ones_like(r), np.zeros_like(r)
    return np.stack([
        np.stack([one, sr * tp, cr * tp], axis=-1),
        np.stack([zero, cr, -sr], axis=-1),
        np.stack([zero, sr / cp, cr / cp], axis=-1),
    ], axis=-2)


def mechanize_vec(x, accel, gyro, dt: float) -> np.ndarray:
    """One mechanization step on stacked 9-vectors ``x`` of shape (..., 9).

    ``accel`` and ``gyro`` broadcast against the leading axes.
    """
    x = np.asarray(x, dtype=float)
    p, v, th = x[..., 0:3], x[..., 3:6], x[..., 6:9]
    dtheta = np.einsum("...ij,...j->...i", euler_rate_matrix(th), np.broadcast_to(gyro, th.shape)) * dt
    th_mid = th + 0.5 * dtheta
    th_new = th + dtheta
    f_enu = np.einsum("...ij,...j->...i", body_to_enu(th_mid), np.broadcast_to(accel, th.shape))
    v_new = v + (f_enu + GRAVITY) * dt
    p_new = p + 0.5 * (v + v_new) * dt
    th_new = th_new.copy()
    th_new[..., 2] = wrap_angle(th_new[..., 2])
    return np.concatenate([p_new, v_new, th_new], axis=-1)


def mechanize(state: NavState, sample: ImuSample, dt: float) -> NavState:
    """Advance the navigation state over one IMU interval.

    Attitude uses explicit Euler-angle kinematics, velocity rotates the
    specific force with the mid-interval attitude and adds gravity, and
    position integrates velocity with the trapezoid rule.
    """
    if not 0.0 < dt <= _MAX_DT:
        raise ValueError(f"dt must be in (0, {_MAX_DT}] s, got {dt}")
    x = mechanize_vec(state.as_vector(), sample.accel, sample.gyro, dt)
    return NavState(x[0:3], x[3:6], x[6:9], state.t + dt)


def dead_reckon(init: NavState, samples, dt: float | None = None) -> list[NavState]:
    out = [init]
    state = init
    for k, s in enumerate(samples):
        step = dt if dt is not None else (samples[k + 1].t - s.t if k + 1 < len(samples) else samples[k].t - samples[k - 1].t)
        state = mechanize(state, s, step)
        out.append(state)
    return out


def synthesize_imu(truth, noise: ImuNoiseModel = ImuNoiseModel(), rate: float = 10.0, seed=0) -> list[ImuSample]:
    """IMU samples that drive :func:`mechanize` along ``truth``.

    Sample k covers [t_k, t_k+1] and is the exact inverse of the discrete
    attitude and velocity updates, so noiseless samples reproduce the
    truth attitude and velocity at every node and the position up to the
    trapezoid error of the truth curve. White noise and constant biases are
    then added per ``noise``.
    """
    truth = list(truth)
    if len(truth) < 2:
        return []
    dts = np.diff([s.t for s in truth])
    if np.any(np.abs(dts * rate - 1.0) > 1e-6):
        raise ValueError("truth trajectory step does not match the IMU rate")
    rng = np.random.default_rng(seed)
    samples = []
    for a, b, dt in zip(truth[:-1], truth[1:], dts):
        dth = b.theta - a.theta
        dth[2] = wrap_angle(dth[2])
        gyro = np.linalg.solve(euler_rate_matrix(a.theta), dth / dt)
        C = body_to_enu(a.theta + 0.5 * dth)
        accel = C.T @ ((b.v_enu - a.v_enu) / dt - GRAVITY)
        samples.append((a.t, accel, gyro))
    n = len(samples)
    acc_noise = noise.accel_noise_std * rng.standard_normal((n, 3))
    gyr_noise = noise.gyro_noise_std * rng.standard_normal((n, 3))
    return [
        ImuSample(t, accel + noise.accel_bias + acc_noise[k], gyro + noise.gyro_bias + gyr_noise[k])
        for k, (t, accel, gyro) in enumerate(samples)
    ]


# ---------------------------------------------------------------------------
# reference trajectories


def static_trajectory(duration: float, rate: float, theta=(0.0, 0.0, math.pi / 2), p=(0.0, 0.0, 0.0), t0: float = 0.0):
    n = int(round(duration * rate))
    theta = np.asarray(theta, dtype=float)
    return [NavState(np.array(p, dtype=float), np.zeros(3), theta.copy(), t0 + k / rate) for k in range(n + 1)]


def constant_velocity_trajectory(duration, rate, v=(1.0, 0.5, 0.0), theta=(0.0, 0.0, math.pi / 2), t0=0.0):
    n = int(round(duration * rate))
    v = np.asarray(v, dtype=float)
    return [NavState(v * (k / rate), v.copy(), np.asarray(theta, dtype=float), t0 + k / rate) for k in range(n + 1)]


def circular_trajectory(duration, rate, radius=100.0, speed=5.0, t0=0.0):
    """Level circle about the origin, counter-clockwise, nose along velocity."""
    n = int(round(duration * rate))
    w = speed / radius
    out = []
    for k in range(n + 1):
        tau = k / rate
        ang = w * tau
        p = radius * np.array([math.cos(ang), math.sin(ang), 0.0])
        v = speed * np.array([-math.sin(ang), math.cos(ang), 0.0])
        yaw = wrap_angle(ang + math.pi / 2)
        out.append(NavState(p, v, np.array([0.0, 0.0, yaw]), t0 + tau))
    return out

"""9D extended Kalman filter: IMU propagation with GPS / LEO updates.

State x = [p_enu (3), v_enu (3), roll, pitch, yaw]. Full-state EKF, no
clock or IMU-bias states. Jacobians of the mechanization and of every
measurement model are central differences with fixed per-component steps.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from . import observables as obs
from .errors import CovarianceBlowup, KindModeMismatch, NumericalError, SingularInnovation
from .frames import EnuFrame, wrap_angle
from .inertial import ImuNoiseModel, ImuSample, NavState, mechanize_vec
from .observables import Measurement, MeasurementKind

STATE_STEPS = np.array([1e-3] * 3 + [1e-4] * 3 + [1e-6] * 3)
INPUT_STEPS = np.array([1e-4] * 3 + [1e-6] * 3)
GATE_SIGMAS = 5.0
YAW = 8

K = MeasurementKind


class FusionMode(enum.Enum):
    GPS_IMU = "gps+imu"
    LEO_ALPHA_IMU = "leo-alpha+imu"
    GPS_LEO_ALPHA_IMU = "gps+leo-alpha+imu"
    LEO_OFDM_IMU = "leo-ofdm+imu"
    LEO_ALPHA_OFDM_IMU = "leo-alpha-ofdm+imu"

    @property
    def kinds(self) -> frozenset:
        return _MODE_KINDS[self]

    @property
    def uses_gps(self) -> bool:
        return K.GPS_PSEUDORANGE in self.kinds

    @property
    def uses_leo(self) -> bool:
        return bool(self.kinds & {K.LEO_DOPPLER_RATE, K.OFDM_DIFF_RANGE})


_MODE_KINDS = {
    FusionMode.GPS_IMU: frozenset({K.GPS_PSEUDORANGE, K.GPS_POSITION}),
    FusionMode.LEO_ALPHA_IMU: frozenset({K.LEO_DOPPLER_RATE}),
    FusionMode.GPS_LEO_ALPHA_IMU: frozenset({K.GPS_PSEUDORANGE, K.GPS_POSITION, K.LEO_DOPPLER_RATE}),
    FusionMode.LEO_OFDM_IMU: frozenset({K.OFDM_DIFF_RANGE}),
    FusionMode.LEO_ALPHA_OFDM_IMU: frozenset({K.LEO_DOPPLER_RATE, K.OFDM_DIFF_RANGE}),
}


@dataclass(frozen=True)
class InitSigmas:
    position: float = 5.0  # m per axis
    velocity: float = 0.5  # m/s per axis
    attitude: float = math.radians(1.0)  # rad per axis

    def covariance(self) -> np.ndarray:
        return np.diag([self.position**2] * 3 + [self.velocity**2] * 3 + [self.attitude**2] * 3)


@dataclass
class FilterState:
    nav: NavState
    P: np.ndarray
    frame: EnuFrame
    mode: FusionMode
    gated: int = 0
    carrier: obs.BeaconCarrier = obs.BeaconCarrier()
    p_cap: float = 1e12

    @property
    def x(self) -> np.ndarray:
        return self.nav.as_vector()


# ---------------------------------------------------------------------------
# generic EKF pieces


def numerical_jacobian(fn, x, steps, angle_rows=()):
    """Central-difference Jacobian of a stack-aware function.

    ``fn`` maps an array of shape (k, n) to (k, m). ``angle_rows`` lists
    output components whose differences are wrapped to (-pi, pi].
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    steps = np.broadcast_to(steps, (n,))
    D = np.diag(steps)
    out = fn(np.concatenate([x + D, x - D]))
    diff = out[:n] - out[n:]
    for row in angle_rows:
        diff[:, row] = wrap_angle(diff[:, row])
    return (diff / (2.0 * steps[:, None])).T


def covariance_predict(P, F, Qd):
    P = F @ P @ F.T + Qd
    return 0.5 * (P + P.T)


def joseph_update(x, P, h, r, innovation):
    """Scalar Kalman update in Joseph form.

    ``h`` is the (n,) measurement row, ``r`` the measurement variance.
    Returns the new state, covariance and innovation variance.
    """
    Ph = P @ h
    s = float(h @ Ph + r)
    if not s > 0.0:
        raise SingularInnovation(f"innovation variance {s:g} is not positive")
    k = Ph / s
    A = np.eye(len(x)) - np.outer(k, h)
    P = A @ P @ A.T + r * np.outer(k, k)
    return x + k * innovation, 0.5 * (P + P.T), s


def kalman_update(x, P, H, R, z, hx=None):
    """Vector EKF update with a linearized model; Joseph covariance."""
    H = np.atleast_2d(H)
    R = np.atleast_2d(R)
    hx = H @ x if hx is None else hx
    S = H @ P @ H.T + R
    Kg = np.linalg.solve(S.T, (P @ H.T).T).T
    A = np.eye(len(x)) - Kg @ H
    P = A @ P @ A.T + Kg @ R @ Kg.T
    return x + Kg @ (np.atleast_1d(z) - hx), 0.5 * (P + P.T)


# ---------------------------------------------------------------------------
# propagation


def transition_jacobians(x, imu: ImuSample, dt: float):
    """F (9x9) and noise-input G (9x6) of one mechanization step at x."""
    u = np.concatenate([imu.accel, imu.gyro])
    n = 9
    D = np.diag(STATE_STEPS)
    Du = np.diag(INPUT_STEPS)
    X = np.concatenate([x + D, x - D, np.broadcast_to(x, (12, 9))])
    U = np.concatenate([np.broadcast_to(u, (18, 6)), u + Du, u - Du])
    out = mechanize_vec(X, U[:, 0:3], U[:, 3:6], dt)
    dF = out[:n] - out[n:2 * n]
    dG = out[2 * n:2 * n + 6] - out[2 * n + 6:]
    dF[:, YAW] = wrap_angle(dF[:, YAW])
    dG[:, YAW] = wrap_angle(dG[:, YAW])
    F = (dF / (2.0 * STATE_STEPS[:, None])).T
    G = (dG / (2.0 * INPUT_STEPS[:, None])).T
    return F, G


def process_noise(G, noise: ImuNoiseModel) -> np.ndarray:
    """Discrete process covariance from per-sample IMU white noise."""
    S = np.array([noise.accel_noise_std**2] * 3 + [noise.gyro_noise_std**2] * 3)
    return (G * S) @ G.T


def predict(fs: FilterState, imu: ImuSample, dt: float, Q) -> FilterState:
    """Propagate state and covariance over ``dt`` with one IMU sample.

    ``Q`` is either an ImuNoiseModel (per-sample white noise, mapped through
    the numerical input Jacobian) or a 9x9 matrix used as ``Q * dt``.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    x = fs.x
    F, G = transition_jacobians(x, imu, dt)
    Qd = process_noise(G, Q) if isinstance(Q, ImuNoiseModel) else np.asarray(Q) * dt
    x_new = mechanize_vec(x, imu.accel, imu.gyro, dt)
    P = covariance_predict(fs.P, F, Qd)
    if not np.isfinite(P).all() or np.trace(P) > fs.p_cap:
        raise CovarianceBlowup(f"trace(P) = {np.trace(P):.3g} exceeds cap {fs.p_cap:.3g}")
    return replace(fs, nav=NavState.from_vector(x_new, fs.nav.t + dt), P=P)


# ---------------------------------------------------------------------------
# measurement models on state stacks


def _sat_arrays(sat):
    return np.asarray(sat.r_S), np.asarray(sat.v_S), np.asarray(sat.a_S)


def measurement_model(kind: MeasurementKind, X, frame: EnuFrame, r_S=None, v_S=None, a_S=None,
                      r_ref=None, axis=None, carrier=obs.BeaconCarrier()):
    """h evaluated for states X (k, 9) against m satellites -> (k, m)."""
    X = np.asarray(X, dtype=float)
    Xb = X[:, None, :]
    if kind is K.GPS_POSITION:
        return X[:, np.atleast_1d(axis)]
    r_U, v_U = obs.frames.enu_to_ecef_state(frame, Xb[..., 0:3], Xb[..., 3:6])
    if kind is K.GPS_PSEUDORANGE:
        return np.linalg.norm(r_S - r_U, axis=-1)
    if kind is K.LEO_DOPPLER_RATE:
        return obs.doppler_rate(obs.line_of_sight(r_S, v_S, a_S, r_U, v_U), carrier)
    if kind is K.OFDM_DIFF_RANGE:
        return np.linalg.norm(r_S - r_U, axis=-1) - np.linalg.norm(r_ref - r_U, axis=-1)
    raise ValueError(kind)


def _check_kind(fs: FilterState, m: Measurement):
    if m.kind not in fs.mode.kinds:
        raise KindModeMismatch(f"{m.kind.value} measurements are disabled in mode {fs.mode.value}")


def update(fs: FilterState, m: Measurement, sat=None, sat_ref=None) -> FilterState:
    """Scalar EKF update; gated-out measurements only bump ``fs.gated``."""
    _check_kind(fs, m)
    if (m.kind is K.OFDM_DIFF_RANGE) != (sat_ref is not None):
        raise ValueError("sat_ref must be given exactly for OFDM differenced range")
    if abs(m.t - fs.nav.t) > 1e-6:
        raise ValueError(f"measurement time {m.t} does not match filter time {fs.nav.t}")
    provider = {}
    if sat is not None:
        provider[m.sat_id] = sat
    if sat_ref is not None:
        provider[m.ref_sat_id] = sat_ref
    order, hx, H = measurement_jacobians(fs.x, fs.frame, [m], lambda i, t: provider[i], fs.nav.t, fs.carrier)
    return _apply(fs, order, hx, H)


def _apply(fs: FilterState, ms, hx, H) -> FilterState:
    """Sequential scalar updates sharing one linearization point."""
    x0 = fs.x
    x, P = x0.copy(), fs.P
    gated = fs.gated
    for j, m in enumerate(ms):
        dx = x - x0
        dx[YAW] = wrap_angle(dx[YAW])
        innovation = m.value - (hx[j] + H[j] @ dx)
        s = float(H[j] @ P @ H[j] + m.sigma**2)
        if not s > 0.0:
            raise SingularInnovation(f"innovation variance {s:g} is not positive")
        if abs(innovation) > GATE_SIGMAS * math.sqrt(s):
            gated += 1
            continue
        x, P, _ = joseph_update(x, P, H[j], m.sigma**2, innovation)
    return replace(fs, nav=NavState.from_vector(x, fs.nav.t), P=P, gated=gated)


def measurement_jacobians(x, frame: EnuFrame, ms, sat_provider, t, carrier=obs.BeaconCarrier()):
    """Model values and Jacobian rows for measurements ``ms`` at state x.

    Returns (ordered measurements, hx, H); one vectorized pass per kind.
    """
    by_kind: dict = {}
    for m in ms:
        by_kind.setdefault(m.kind, []).append(m)
    x = np.asarray(x, dtype=float)
    D = np.diag(STATE_STEPS)
    X = np.concatenate([x[None, :], x + D, x - D])
    hx_all, H_all, order = [], [], []
    for kind, group in by_kind.items():
        if kind is K.GPS_POSITION:
            kw = {"axis": [m.sat_id for m in group]}
        else:
            r, v, a = _provider_states(sat_provider, [m.sat_id for m in group], t)
            kw = {"r_S": r, "v_S": v, "a_S": a}
            if kind is K.OFDM_DIFF_RANGE:
                kw["r_ref"] = _provider_states(sat_provider, [m.ref_sat_id for m in group], t)[0]
        if kind is K.GPS_PSEUDORANGE:
            # row 0 carries the model value, the rest only feed differences
            rho0, out = _range_offsets(kw["r_S"], frame, X, x)
            out[0] = rho0
        elif kind is K.OFDM_DIFF_RANGE:
            rho0, d = _range_offsets(kw["r_S"], frame, X, x)
            ref0, d_ref = _range_offsets(kw["r_ref"], frame, X, x)
            out = d - d_ref
            out[0] = rho0 - ref0
        else:
            out = measurement_model(kind, X, frame, carrier=carrier, **kw)
        hx_all.append(out[0])
        H_all.append(((out[1:10] - out[10:19]) / (2.0 * STATE_STEPS[:, None])).T)
        order.extend(group)
    return order, np.concatenate(hx_all), np.concatenate(H_all)


def _range_offsets(r_S, frame: EnuFrame, X, x0):
    """Ranges at x0 and their changes for the states X, without cancellation.

    Differencing two ~2e7 m norms over a 1e-3 m step loses ~1e-6 of the
    Jacobian; here rho - rho0 = delta.(delta - 2 d) / (rho + rho0) with
    delta taken straight from the ENU offsets.
    """
    r0, _ = obs.frames.enu_to_ecef_state(frame, x0[0:3], x0[3:6])
    d = np.asarray(r_S) - r0
    rho0 = np.linalg.norm(d, axis=-1)
    delta = ((X[:, 0:3] - x0[0:3]) @ frame.rotation_enu_to_ecef.T)[:, None, :]
    rho = np.linalg.norm(d - delta, axis=-1)
    return rho0, np.einsum("kmi,kmi->km", delta, delta - 2.0 * d) / (rho + rho0)


def update_batch(fs: FilterState, ms, sat_provider) -> FilterState:
    """Apply all measurements stamped at the filter's current time.

    Jacobians for a kind are evaluated in one vectorized pass at the prior
    estimate; the scalar updates then run sequentially (equivalent to a
    batch update with diagonal R).
    """
    if not ms:
        return fs
    for m in ms:
        _check_kind(fs, m)
    order, hx, H = measurement_jacobians(fs.x, fs.frame, ms, sat_provider, fs.nav.t, fs.carrier)
    return _apply(fs, order, hx, H)


def _provider_states(provider, ids, t):
    if hasattr(provider, "states"):
        return provider.states(ids, t)
    sats = [provider(i, t) for i in ids]
    return tuple(np.array(c) for c in zip(*(_sat_arrays(s) for s in sats)))


# ---------------------------------------------------------------------------
# driver


@dataclass
class FilterResult:
    times: np.ndarray
    states: np.ndarray  # (T, 9)
    covariances: np.ndarray  # (T, 9, 9)
    gated: int = 0
    mode: FusionMode | None = None

    @property
    def P_diag(self) -> np.ndarray:
        return np.einsum("kii->ki", self.covariances)

    def trajectory(self) -> list[NavState]:
        return [NavState.from_vector(x, t) for t, x in zip(self.times, self.states)]


def check_covariance(P, where=""):
    scale = max(np.linalg.norm(P), 1e-300)
    if np.linalg.norm(P - P.T) >= 1e-9 * scale:
        raise NumericalError(f"covariance lost symmetry {where}")
    if np.linalg.eigvalsh(P).min() < -1e-9 * np.trace(P):
        raise NumericalError(f"covariance lost positive semidefiniteness {where}")


def run_filter(imu, meas, sat_provider, init: FilterState, Q=ImuNoiseModel(), dt_last: float | None = None,
               check_invariants: bool = False) -> FilterResult:
    """Event-driven fusion loop over time-sorted IMU and measurement streams.

    Each IMU sample drives the interval up to the next sample. Measurements
    are applied at their own timestamps, splitting an interval when they
    fall inside it. One output epoch per IMU sample time plus the final one.
    """
    imu = list(imu)
    meas = list(meas)
    fs = init
    times, states, covs = [], [], []
    j = 0
    tol = 1e-9

    def consume(fs, j):
        group = []
        while j < len(meas) and meas[j].t <= fs.nav.t + tol:
            if meas[j].t >= fs.nav.t - tol:
                group.append(meas[j])
            j += 1
        return (update_batch(fs, group, sat_provider) if group else fs), j

    def record(fs):
        times.append(fs.nav.t)
        states.append(fs.x)
        covs.append(fs.P)

    if not imu:
        fs, j = consume(fs, j)
        record(fs)
        return FilterResult(np.array(times), np.array(states), np.array(covs), fs.gated, fs.mode)

    if dt_last is None:
        dt_last = imu[-1].t - imu[-2].t if len(imu) > 1 else 0.1
    for k, sample in enumerate(imu):
        t_end = imu[k + 1].t if k + 1 < len(imu) else sample.t + dt_last
        try:
            fs, j = consume(fs, j)
            record(fs)
            while j < len(meas) and meas[j].t < t_end - tol:
                fs = predict(fs, sample, meas[j].t - fs.nav.t, Q) if meas[j].t > fs.nav.t + tol else fs
                fs, j = consume(fs, j)
            fs = predict(fs, sample, t_end - fs.nav.t, Q)
            fs = replace(fs, nav=replace(fs.nav, t=t_end))
            if check_invariants:
                check_covariance(fs.P, f"after predict at epoch {k}")
        except NumericalError as exc:
            raise type(exc)(f"epoch {k} (t={sample.t:.3f}): {exc}") from exc
    fs, j = consume(fs, j)
    if check_invariants:
        check_covariance(fs.P, "after final update")
    record(fs)
    return FilterResult(np.array(times), np.array(states), np.array(covs), fs.gated, fs.mode)


def initial_filter_state(truth0: NavState, frame: EnuFrame, mode: FusionMode, sigmas: InitSigmas = InitSigmas(),
                         rng=None, carrier=obs.BeaconCarrier(), scale: float = 1.0) -> FilterState:
    """Filter start perturbed from truth by scale * N(0, P0); rng=None means perfect init."""
    P0 = sigmas.covariance()
    x = truth0.as_vector()
    if rng is not None:
        x = x + scale * np.sqrt(np.diag(P0)) * rng.standard_normal(9)
    return FilterState(NavState.from_vector(x, truth0.t), P0, frame, mode, carrier=carrier)

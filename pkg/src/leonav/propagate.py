"""Satellite propagation to ECEF and elevation-mask visibility.

The propagator is a Keplerian two-body solution of the TLE mean elements
with first-order secular J2 rates on RAAN, argument of perigee and mean
anomaly. It is *not* SGP4; anything with a ``states(records, t)`` method
returning ``(r, v, a)`` arrays can stand in for it.

Velocity and acceleration are analytic time derivatives of the same ECEF
trajectory the position comes from (rotating-frame terms included), so
range, range-rate and range-acceleration derived from one state are
mutually consistent to rounding.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import frames
from .errors import DecayedOrbit, StaleElements
from .frames import EnuFrame, GeodeticPosition
from .tle import MU_EARTH, Constellation, TleCatalog, TleRecord

log = logging.getLogger(__name__)

J2 = 1.08262668e-3
R_EARTH = frames.WGS84_A
MAX_AGE = 7 * 86400.0
MIN_PERIGEE_ALT = 100e3
GPS_MASK_DEG = 10.0
LEO_MASK_DEG = 28.0

_KEPLER_TOL = 1e-12
_KEPLER_MAX_ITER = 30


@dataclass(frozen=True)
class SatStateEcef:
    norad_id: int
    t: float
    r_S: np.ndarray
    v_S: np.ndarray
    a_S: np.ndarray


@dataclass
class VisibilityReport:
    t: float
    visible_starlink: list[tuple[int, float]] = field(default_factory=list)
    visible_navstar: list[tuple[int, float]] = field(default_factory=list)
    errors: list[tuple[int, str]] = field(default_factory=list)


def solve_kepler(M, e):
    """Eccentric anomaly for mean anomaly M (rad), vectorized.

    Newton iteration; any element that fails to converge within the cap is
    finished by bisection on [M - e, M + e].
    """
    M = np.asarray(M, dtype=float)
    e = np.broadcast_to(np.asarray(e, dtype=float), M.shape)
    E = np.where(e < 0.8, M, np.pi * np.ones_like(M))
    done = np.zeros(M.shape, dtype=bool)
    for _ in range(_KEPLER_MAX_ITER):
        f = E - e * np.sin(E) - M
        step = f / (1.0 - e * np.cos(E))
        E = np.where(done, E, E - step)
        done |= np.abs(step) < _KEPLER_TOL
        if done.all():
            return E
    for idx in zip(*np.nonzero(~done)):
        lo, hi = M[idx] - e[idx], M[idx] + e[idx]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid - e[idx] * math.sin(mid) - M[idx] > 0.0:
                hi = mid
            else:
                lo = mid
            if hi - lo < _KEPLER_TOL:
                break
        E[idx] = 0.5 * (lo + hi)
    return E


def _spin(x, xd, xdd, angle, rate):
    """Rotate about z by ``angle`` that advances at constant ``rate``.

    Returns the rotated position and its first two time derivatives.
    """
    c, s = np.cos(angle), np.sin(angle)

    def rz(vec):
        return np.stack([c * vec[..., 0] - s * vec[..., 1], s * vec[..., 0] + c * vec[..., 1], vec[..., 2]], axis=-1)

    def zx(vec):  # z_hat cross vec
        return np.stack([-vec[..., 1], vec[..., 0], np.zeros_like(vec[..., 2])], axis=-1)

    w = np.asarray(rate)[..., None]
    return rz(x), rz(xd + w * zx(x)), rz(xdd + 2.0 * w * zx(xd) + w * w * zx(zx(x)))


@dataclass(frozen=True)
class ElementArrays:
    """Column-stacked mean elements and secular rates for a satellite set."""

    norad_id: np.ndarray
    epoch: np.ndarray
    a: np.ndarray
    e: np.ndarray
    inc: np.ndarray
    raan0: np.ndarray
    argp0: np.ndarray
    m0: np.ndarray
    raan_rate: np.ndarray
    argp_rate: np.ndarray
    m_rate: np.ndarray

    @classmethod
    def from_records(cls, records, j2: bool = True) -> "ElementArrays":
        recs = list(records)
        n = np.array([r.mean_motion_rad_s for r in recs])
        a = (MU_EARTH / n**2) ** (1.0 / 3.0)
        e = np.array([r.eccentricity for r in recs])
        inc = np.array([r.inclination for r in recs])
        if j2:
            p = a * (1.0 - e**2)
            k = J2 * (R_EARTH / p) ** 2
            ci = np.cos(inc)
            raan_rate = -1.5 * n * k * ci
            argp_rate = 0.75 * n * k * (5.0 * ci**2 - 1.0)
            m_rate = n * (1.0 + 0.75 * k * np.sqrt(1.0 - e**2) * (3.0 * ci**2 - 1.0))
        else:
            raan_rate = argp_rate = np.zeros_like(n)
            m_rate = n
        return cls(
            norad_id=np.array([r.norad_id for r in recs], dtype=int),
            epoch=np.array([r.epoch for r in recs]),
            a=a, e=e, inc=inc,
            raan0=np.array([r.raan for r in recs]),
            argp0=np.array([r.arg_perigee for r in recs]),
            m0=np.array([r.mean_anomaly for r in recs]),
            raan_rate=raan_rate, argp_rate=argp_rate, m_rate=m_rate,
        )

    def check(self, t) -> np.ndarray:
        """Per-satellite error message ('' when usable) at instant(s) t."""
        t = np.broadcast_to(np.asarray(t, dtype=float), self.epoch.shape)
        msgs = np.full(self.epoch.shape, "", dtype=object)
        msgs[np.abs(t - self.epoch) > MAX_AGE] = "stale"
        msgs[self.a * (1.0 - self.e) - R_EARTH < MIN_PERIGEE_ALT] = "decayed"
        return msgs


def states_ecef(el: ElementArrays, t, frame: str = "ecef"):
    """Position, velocity, acceleration for every satellite at t.

    ``t`` broadcasts against the satellite axis, e.g. shape (T, 1) yields
    (T, N, 3) outputs. ``frame='inertial'`` skips the Earth rotation.
    """
    t = np.asarray(t, dtype=float)
    dt = t - el.epoch
    raan = el.raan0 + el.raan_rate * dt
    argp = el.argp0 + el.argp_rate * dt
    M = np.remainder(el.m0 + el.m_rate * dt, 2.0 * np.pi)
    a, e = np.broadcast_arrays(el.a, dt)[0], np.broadcast_arrays(el.e, dt)[0]
    E = solve_kepler(M, e)
    cE, sE = np.cos(E), np.sin(E)
    b = a * np.sqrt(1.0 - e**2)
    Edot = el.m_rate / (1.0 - e * cE)
    zeros = np.zeros_like(E)
    p = np.stack([a * (cE - e), b * sE, zeros], axis=-1)
    pd = np.stack([-a * sE * Edot, b * cE * Edot, zeros], axis=-1)
    # Keplerian motion at the J2-adjusted mean motion: mu_eff = n_bar^2 a^3
    rp = np.linalg.norm(p, axis=-1, keepdims=True)
    mu_eff = (el.m_rate**2 * el.a**3)[..., None]
    pdd = -mu_eff * p / rp**3

    q, qd, qdd = _spin(p, pd, pdd, argp, np.broadcast_to(el.argp_rate, dt.shape))
    ci, si = np.cos(el.inc)[..., None], np.sin(el.inc)[..., None]

    def rx(vec):
        return np.stack([vec[..., 0], ci[..., 0] * vec[..., 1] - si[..., 0] * vec[..., 2],
                         si[..., 0] * vec[..., 1] + ci[..., 0] * vec[..., 2]], axis=-1)

    s, sd, sdd = rx(q), rx(qd), rx(qdd)
    r, v, acc = _spin(s, sd, sdd, raan, np.broadcast_to(el.raan_rate, dt.shape))
    if frame == "inertial":
        return r, v, acc
    theta = frames.gmst(t)
    theta = np.broadcast_to(theta, dt.shape)
    return _spin(r, v, acc, -theta, np.full(dt.shape, -frames.OMEGA_EARTH))


def propagate(rec: TleRecord, t: float, j2: bool = True) -> SatStateEcef:
    el = ElementArrays.from_records([rec], j2=j2)
    msg = el.check(t)[0]
    if msg == "stale":
        raise StaleElements(f"NORAD {rec.norad_id}: |t - epoch| = {abs(t - rec.epoch) / 86400:.2f} d exceeds 7 d")
    if msg == "decayed":
        raise DecayedOrbit(f"NORAD {rec.norad_id}: perigee below {MIN_PERIGEE_ALT / 1e3:.0f} km")
    r, v, a = states_ecef(el, t)
    return SatStateEcef(rec.norad_id, float(t), r[0], v[0], a[0])


def propagate_inertial(rec: TleRecord, t, j2: bool = True):
    """(r, v, a) in the inertial (TEME-like) frame, for energy checks."""
    el = ElementArrays.from_records([rec], j2=j2)
    r, v, a = states_ecef(el, np.asarray(t, dtype=float)[..., None], frame="inertial")
    return r[..., 0, :], v[..., 0, :], a[..., 0, :]


class SimplifiedPropagator:
    """Two-body + secular J2 propagator over a set of TLE records."""

    def __init__(self, records, j2: bool = True):
        self.records = list(records)
        self.elements = ElementArrays.from_records(self.records, j2=j2)
        self._index = {int(n): i for i, n in enumerate(self.elements.norad_id)}

    def states(self, t):
        """(r, v, a) arrays, shape (..., N, 3) for t of shape (...)."""
        t = np.asarray(t, dtype=float)
        return states_ecef(self.elements, t[..., None])

    def index(self, norad_id: int) -> int:
        return self._index[norad_id]


def elevation(sat: SatStateEcef, user_ecef, frame: EnuFrame) -> float:
    return float(elevations(sat.r_S, user_ecef, frame))


def elevations(r_sat, user_ecef, frame: EnuFrame):
    los = np.asarray(r_sat, dtype=float) - np.asarray(user_ecef, dtype=float)
    up = frame.rotation_enu_to_ecef[:, 2]
    rng = np.linalg.norm(los, axis=-1)
    return np.arcsin(np.clip(los @ up / rng, -1.0, 1.0))


def visible_satellites(cat: TleCatalog, user: GeodeticPosition, t: float,
                       mask_gps: float = math.radians(GPS_MASK_DEG),
                       mask_leo: float = math.radians(LEO_MASK_DEG)) -> VisibilityReport:
    """Satellites above each constellation's mask, highest first."""
    report = VisibilityReport(t=float(t))
    if not cat.records:
        return report
    frame = frames.enu_frame_at(user)
    el = ElementArrays.from_records(cat.records)
    msgs = el.check(t)
    r, _, _ = states_ecef(el, t)
    elev = elevations(r, frame.origin_ecef, frame)
    for rec, msg, e in zip(cat.records, msgs, elev):
        if msg:
            report.errors.append((rec.norad_id, msg))
            continue
        if rec.constellation is Constellation.STARLINK and e >= mask_leo:
            report.visible_starlink.append((rec.norad_id, float(e)))
        elif rec.constellation is Constellation.NAVSTAR and e >= mask_gps:
            report.visible_navstar.append((rec.norad_id, float(e)))
    order = lambda item: (-item[1], item[0])  # noqa: E731
    report.visible_starlink.sort(key=order)
    report.visible_navstar.sort(key=order)
    if report.errors:
        log.warning("%d satellites skipped during visibility", len(report.errors))
    return report


class SatelliteEphemeris:
    """Satellite states cached on a time grid, with direct fallback.

    This is the ``sat_provider`` the filter and simulator consume.
    """

    def __init__(self, records, times=(), propagator=None):
        self.propagator = propagator or SimplifiedPropagator(records)
        self.records = self.propagator.records
        self.times = np.asarray(times, dtype=float)
        self._slot = {self._key(t): k for k, t in enumerate(self.times)}
        if len(self.times):
            self._r, self._v, self._a = self.propagator.states(self.times)

    @staticmethod
    def _key(t):
        return round(float(t) * 1e6)

    def states(self, ids, t):
        """(r, v, a) arrays of shape (len(ids), 3) at instant t."""
        cols = [self.propagator.index(int(i)) for i in ids]
        k = self._slot.get(self._key(t))
        if k is not None:
            return self._r[k, cols], self._v[k, cols], self._a[k, cols]
        r, v, a = self.propagator.states(float(t))
        return r[cols], v[cols], a[cols]

    def state(self, sat_id: int, t: float) -> SatStateEcef:
        r, v, a = self.states([sat_id], t)
        return SatStateEcef(int(sat_id), float(t), r[0], v[0], a[0])

    __call__ = state

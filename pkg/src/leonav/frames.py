"""WGS-84 geodetic, ECEF and local ENU frames, plus TEME -> ECEF.

Instants are UTC seconds since 2000-01-01T12:00:00Z (J2000, leap seconds
ignored). Vectors are numpy arrays in SI units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from .errors import ConvergenceError

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)
OMEGA_EARTH = 7.2921159e-5  # rad/s

J2000 = datetime(2000, 1, 1, 12, 0, 0, tzinfo=timezone.utc)
_MAX_GEODETIC_ITER = 20


def utc_seconds(when: datetime | str) -> float:
    """Seconds since J2000 for a datetime or ISO-8601 string (naive = UTC)."""
    if isinstance(when, str):
        when = datetime.fromisoformat(when.replace("Z", "+00:00"))
    if when.tzinfo is None:
        when = when.replace(tzinfo=timezone.utc)
    delta = when - J2000
    return delta.days * 86400.0 + delta.seconds + delta.microseconds * 1e-6


def to_datetime(t: float) -> datetime:
    return J2000 + timedelta(seconds=float(t))


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.remainder(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class GeodeticPosition:
    lat: float  # rad
    lon: float  # rad
    alt: float  # m above ellipsoid

    def __post_init__(self):
        if not abs(self.lat) <= math.pi / 2 + 1e-15:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not math.isfinite(self.alt):
            raise ValueError("altitude must be finite")
        object.__setattr__(self, "lon", wrap_angle(self.lon))

    @classmethod
    def from_degrees(cls, lat_deg: float, lon_deg: float, alt: float) -> "GeodeticPosition":
        return cls(math.radians(lat_deg), math.radians(lon_deg), alt)


@dataclass(frozen=True)
class EnuFrame:
    origin_ecef: np.ndarray
    rotation_enu_to_ecef: np.ndarray  # columns: East, North, Up in ECEF

    @property
    def R(self) -> np.ndarray:
        return self.rotation_enu_to_ecef


def geodetic_to_ecef(g: GeodeticPosition) -> np.ndarray:
    slat, clat = math.sin(g.lat), math.cos(g.lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * slat * slat)
    return np.array([
        (n + g.alt) * clat * math.cos(g.lon),
        (n + g.alt) * clat * math.sin(g.lon),
        (n * (1.0 - WGS84_E2) + g.alt) * slat,
    ])


def ecef_to_geodetic(r) -> GeodeticPosition:
    """Iterative inverse of :func:`geodetic_to_ecef`.

    Raises ConvergenceError when the latitude iteration fails to settle to
    1e-12 rad within the cap, which happens for points near the Earth centre.
    """
    x, y, z = (float(c) for c in r)
    p = math.hypot(x, y)
    if math.hypot(p, z) < 1.0:
        raise ConvergenceError("position too close to the Earth centre")
    lon = math.atan2(y, x)
    lat = math.atan2(z, p * (1.0 - WGS84_E2))
    for _ in range(_MAX_GEODETIC_ITER):
        slat = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * slat * slat)
        new = math.atan2(z + WGS84_E2 * n * slat, p)
        if abs(new - lat) < 1e-12:
            lat = new
            break
        lat = new
    else:
        raise ConvergenceError("geodetic latitude iteration did not converge")
    slat, clat = math.sin(lat), math.cos(lat)
    # valid at any latitude, unlike p / cos(lat) - N
    h = p * clat + z * slat - WGS84_A * math.sqrt(1.0 - WGS84_E2 * slat * slat)
    return GeodeticPosition(lat, lon, h)


def enu_rotation(lat: float, lon: float) -> np.ndarray:
    sl, cl = math.sin(lat), math.cos(lat)
    so, co = math.sin(lon), math.cos(lon)
    east = [-so, co, 0.0]
    north = [-sl * co, -sl * so, cl]
    up = [cl * co, cl * so, sl]
    return np.array([east, north, up]).T


def enu_frame_at(g: GeodeticPosition) -> EnuFrame:
    return EnuFrame(geodetic_to_ecef(g), enu_rotation(g.lat, g.lon))


def enu_to_ecef_state(frame: EnuFrame, p_enu, v_enu):
    """User ECEF position and velocity from ENU ones about the frame origin.

    Works on single 3-vectors or stacks of shape (..., 3).
    """
    R = frame.rotation_enu_to_ecef
    r_u = frame.origin_ecef + np.asarray(p_enu) @ R.T
    v_u = np.asarray(v_enu) @ R.T
    return r_u, v_u


def ecef_to_enu(frame: EnuFrame, r_ecef) -> np.ndarray:
    return (np.asarray(r_ecef) - frame.origin_ecef) @ frame.rotation_enu_to_ecef


def _gmst_iau82(t):
    T = np.asarray(t, dtype=float) / (86400.0 * 36525.0)
    sec = 67310.54841 + (876600.0 * 3600.0 + 8640184.812866) * T + 0.093104 * T**2 - 6.2e-6 * T**3
    return np.deg2rad(np.remainder(sec, 86400.0) / 240.0)


def gmst(t) -> np.ndarray | float:
    """Greenwich mean sidereal time (IAU-82), UT1 taken equal to UTC.

    The polynomial is evaluated at the preceding J2000 day boundary and
    advanced at OMEGA_EARTH, which keeps the angle smooth in t to rounding.
    """
    t = np.asarray(t, dtype=float)
    day0 = np.floor(t / 86400.0) * 86400.0
    theta = np.remainder(_gmst_iau82(day0) + OMEGA_EARTH * (t - day0), 2.0 * np.pi)
    return float(theta) if np.ndim(theta) == 0 else theta


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def teme_to_ecef(r_teme, v_teme, t: float, theta: float | None = None):
    """Rotate a TEME state into ECEF by GMST about the spin axis.

    No polar motion or nutation. ``theta`` overrides the GMST angle.
    """
    theta = gmst(t) if theta is None else theta
    R = rot_z(-theta)
    r = R @ np.asarray(r_teme, dtype=float)
    v = R @ np.asarray(v_teme, dtype=float) - np.cross([0.0, 0.0, OMEGA_EARTH], r)
    return r, v

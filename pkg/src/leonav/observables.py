"""Measurement models: LOS geometry, Doppler rate, pseudorange, OFDM range.

All model functions broadcast over leading axes so the filter can evaluate
a measurement for a stack of perturbed states in one call.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from . import frames
from .errors import ZeroRange
from .propagate import SatStateEcef

log = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299792458.0
DEFAULT_FC = 11.7e9


class MeasurementKind(enum.Enum):
    GPS_PSEUDORANGE = "gps_pseudorange"
    LEO_DOPPLER_RATE = "leo_doppler_rate"
    OFDM_DIFF_RANGE = "ofdm_diff_range"
    # replay of receiver position fixes; sat_id holds the ENU axis (0, 1, 2)
    GPS_POSITION = "gps_position"


_KIND_CODE = {
    MeasurementKind.GPS_PSEUDORANGE: 1,
    MeasurementKind.LEO_DOPPLER_RATE: 2,
    MeasurementKind.OFDM_DIFF_RANGE: 3,
    MeasurementKind.GPS_POSITION: 4,
}


@dataclass(frozen=True)
class BeaconCarrier:
    f_c: float = DEFAULT_FC
    c: float = SPEED_OF_LIGHT

    @property
    def scale(self) -> float:
        return self.f_c / self.c


@dataclass(frozen=True)
class Measurement:
    kind: MeasurementKind
    t: float
    sat_id: int
    value: float
    sigma: float
    ref_sat_id: int | None = None

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ValueError("measurement sigma must be positive")
        if (self.kind is MeasurementKind.OFDM_DIFF_RANGE) != (self.ref_sat_id is not None):
            raise ValueError("ref_sat_id is required for, and only for, OFDM differenced range")

    def sort_key(self):
        return (self.t, self.sat_id, _KIND_CODE[self.kind])


@dataclass
class GeometryObservables:
    rho: np.ndarray
    u: np.ndarray
    v_rel: np.ndarray
    rho_dot: np.ndarray
    rho_ddot: np.ndarray


def line_of_sight(r_S, v_S, a_S, r_U, v_U) -> GeometryObservables:
    """Relative geometry and range derivatives for a static-acceleration user.

    rho_ddot = u.a_S + (|v_rel|^2 - (u.v_rel)^2) / rho; the user's own
    acceleration is not modelled.
    """
    r = np.asarray(r_S) - np.asarray(r_U)
    rho = np.linalg.norm(r, axis=-1)
    if np.any(rho <= 0.0):
        raise ZeroRange("satellite and user positions coincide")
    u = r / rho[..., None]
    v_rel = np.asarray(v_S) - np.asarray(v_U)
    rho_dot = np.einsum("...i,...i->...", u, v_rel)
    radial_acc = np.einsum("...i,...i->...", u, np.asarray(a_S))
    transverse = np.einsum("...i,...i->...", v_rel, v_rel) - rho_dot**2
    return GeometryObservables(rho, u, v_rel, rho_dot, radial_acc + transverse / rho)


def geometry(sat: SatStateEcef, r_U, v_U) -> GeometryObservables:
    return line_of_sight(sat.r_S, sat.v_S, sat.a_S, r_U, v_U)


def doppler_rate(geom: GeometryObservables, carrier: BeaconCarrier = BeaconCarrier()):
    return -carrier.scale * geom.rho_ddot


def doppler(geom: GeometryObservables, carrier: BeaconCarrier = BeaconCarrier()):
    """Doppler shift in Hz; negative for a receding satellite."""
    return -carrier.scale * geom.rho_dot


def gps_pseudorange(sat: SatStateEcef, r_U, clock_bias: float = 0.0):
    return np.linalg.norm(np.asarray(sat.r_S) - np.asarray(r_U), axis=-1) + clock_bias


def ofdm_diff_range(sat_i: SatStateEcef, sat_ref: SatStateEcef, r_U):
    r_U = np.asarray(r_U)
    return np.linalg.norm(sat_i.r_S - r_U, axis=-1) - np.linalg.norm(sat_ref.r_S - r_U, axis=-1)


# ---------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class MeasurementConfig:
    sigma_gps: float = 3.0  # m
    sigma_alpha: float = 1.5  # Hz/s
    sigma_ofdm: float = 3.0  # m, same as the pseudorange sigma
    sigma_gps_fix: float = 1.5  # m, position-fix replay only
    rate_gps: float = 10.0  # Hz
    rate_leo: float = 1.0  # Hz
    mask_gps: float = np.radians(10.0)
    mask_leo: float = np.radians(28.0)
    carrier: BeaconCarrier = BeaconCarrier()
    # multiplies the injected noise only; sigmas still weight the filter
    noise_scale: float = 1.0
    kinds: tuple = (MeasurementKind.GPS_PSEUDORANGE, MeasurementKind.LEO_DOPPLER_RATE,
                    MeasurementKind.OFDM_DIFF_RANGE)

    def sigma(self, kind: MeasurementKind) -> float:
        return {
            MeasurementKind.GPS_PSEUDORANGE: self.sigma_gps,
            MeasurementKind.LEO_DOPPLER_RATE: self.sigma_alpha,
            MeasurementKind.OFDM_DIFF_RANGE: self.sigma_ofdm,
            MeasurementKind.GPS_POSITION: self.sigma_gps_fix,
        }[kind]


class MeasurementLog(list):
    """Time-ordered measurements plus any visibility warnings."""

    def __init__(self, items=(), warnings=None):
        super().__init__(items)
        self.warnings: list[str] = list(warnings or [])


def _epoch_mask(times, rate, t0):
    phase = (np.asarray(times) - t0) * rate
    return np.abs(phase - np.round(phase)) < 1e-6


def _seed_tuple(seed) -> tuple:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def noise_stream(seed, kind: MeasurementKind, sat_id: int, size: int) -> np.ndarray:
    """Unit normal draws owned by one (seed, kind, satellite) triple.

    Keying by satellite keeps a satellite's noise identical whichever
    subset it is simulated in.
    """
    rng = np.random.default_rng([*_seed_tuple(seed), _KIND_CODE[kind], int(sat_id)])
    return rng.standard_normal(size)


@dataclass
class ModelTable:
    """Noiseless model values per measurement kind: rows are epochs."""

    times: np.ndarray
    values: dict = field(default_factory=dict)  # kind -> (sat_ids, array[T, S]) NaN when not visible
    refs: np.ndarray | None = None  # OFDM reference satellite id per epoch
    warnings: list = field(default_factory=list)


def model_table(truth, frame, ephemeris, gps_ids, leo_ids, config: MeasurementConfig = MeasurementConfig()) -> ModelTable:
    """Noiseless measurement values for a truth trajectory.

    ``truth`` is a sequence of NavState; ``ephemeris`` provides
    ``states(ids, t)`` -> (r, v, a) arrays of shape (len(ids), 3).
    """
    times = np.array([s.t for s in truth])
    t0 = times[0]
    gps_ids, leo_ids = list(gps_ids), list(leo_ids)
    gps_on = MeasurementKind.GPS_PSEUDORANGE in config.kinds
    alpha_on = MeasurementKind.LEO_DOPPLER_RATE in config.kinds
    ofdm_on = MeasurementKind.OFDM_DIFF_RANGE in config.kinds
    gps_epochs = _epoch_mask(times, config.rate_gps, t0)
    leo_epochs = _epoch_mask(times, config.rate_leo, t0)
    T = len(times)
    pr = np.full((T, len(gps_ids)), np.nan)
    alpha = np.full((T, len(leo_ids)), np.nan)
    ofdm = np.full((T, len(leo_ids)), np.nan)
    refs = np.full(T, -1, dtype=int)
    warnings = []
    for k, state in enumerate(truth):
        r_u, v_u = frames.enu_to_ecef_state(frame, state.p_enu, state.v_enu)
        if gps_on and gps_epochs[k] and gps_ids:
            r, _, _ = ephemeris.states(gps_ids, state.t)
            el = _elev(r, r_u, frame)
            vis = el >= config.mask_gps
            pr[k, vis] = np.linalg.norm(r[vis] - r_u, axis=-1)
            if vis.sum() < 4:
                warnings.append(f"t={state.t - t0:.3f}s: only {vis.sum()} GPS satellites visible")
        if (alpha_on or ofdm_on) and leo_epochs[k] and leo_ids:
            r, v, a = ephemeris.states(leo_ids, state.t)
            el = _elev(r, r_u, frame)
            vis = el >= config.mask_leo
            if vis.sum() < 4:
                warnings.append(f"t={state.t - t0:.3f}s: only {vis.sum()} LEO satellites visible")
            if alpha_on:
                geom = line_of_sight(r[vis], v[vis], a[vis], r_u, v_u)
                alpha[k, vis] = doppler_rate(geom, config.carrier)
            if ofdm_on and vis.any():
                rng = np.linalg.norm(r - r_u, axis=-1)
                j_ref = int(np.argmax(np.where(vis, el, -np.inf)))
                refs[k] = leo_ids[j_ref]
                d = rng - rng[j_ref]
                vis_ofdm = vis.copy()
                vis_ofdm[j_ref] = False
                ofdm[k, vis_ofdm] = d[vis_ofdm]
    for w in warnings[:3]:
        log.warning(w)
    table = ModelTable(times, refs=refs, warnings=warnings)
    if gps_on:
        table.values[MeasurementKind.GPS_PSEUDORANGE] = (gps_ids, pr)
    if alpha_on:
        table.values[MeasurementKind.LEO_DOPPLER_RATE] = (leo_ids, alpha)
    if ofdm_on:
        table.values[MeasurementKind.OFDM_DIFF_RANGE] = (leo_ids, ofdm)
    return table


def _elev(r_sat, r_user, frame):
    los = r_sat - r_user
    return np.arcsin(los @ frame.rotation_enu_to_ecef[:, 2] / np.linalg.norm(los, axis=-1))


def realize(table: ModelTable, config: MeasurementConfig, seed, kinds=None) -> MeasurementLog:
    """Add per-kind Gaussian noise to a model table; deterministic in seed."""
    kinds = table.values.keys() if kinds is None else kinds
    out = []
    for kind in kinds:
        if kind not in table.values:
            continue
        ids, vals = table.values[kind]
        sigma = config.sigma(kind)
        for j, sat_id in enumerate(ids):
            noise = config.noise_scale * noise_stream(seed, kind, sat_id, len(table.times))
            col = vals[:, j]
            for k in np.nonzero(~np.isnan(col))[0]:
                ref = int(table.refs[k]) if kind is MeasurementKind.OFDM_DIFF_RANGE else None
                out.append(Measurement(kind, float(table.times[k]), int(sat_id),
                                       float(col[k] + sigma * noise[k]), sigma, ref))
    out.sort(key=Measurement.sort_key)
    return MeasurementLog(out, table.warnings)


def simulate_measurements(truth, frame, ephemeris, gps_ids, leo_ids,
                          config: MeasurementConfig = MeasurementConfig(), seed=0) -> MeasurementLog:
    """Noisy measurements over a truth trajectory.

    Measurement epochs are the truth epochs that fall on each sensor's rate
    grid. The OFDM reference is the highest-elevation visible LEO satellite
    at each epoch.
    """
    table = model_table(truth, frame, ephemeris, gps_ids, leo_ids, config)
    return realize(table, config, seed)

"""Scenario configuration, Monte Carlo sweep, RMSE / NEES, and log replay.

A sweep runs every (mode, n_leo, run) combination over one static-user
scenario, reduces the per-run squared errors in key order and pairs each
RMSE row with the matching PCRB. Per-run randomness is derived from
(seed, run) only, so results do not depend on how runs are scheduled.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import bound as bd
from . import frames
from . import fusion as fu
from . import observables as obs
from . import spectral
from . import tle
from .errors import (AssociationRejected, ConfigError, DataError, InsufficientVisibility, NeverVisible,
                     TimestampMismatch)
from .frames import GeodeticPosition
from .fusion import FusionMode
from .inertial import ImuNoiseModel, ImuSample, NavState, static_trajectory, synthesize_imu
from .observables import Measurement, MeasurementKind
from .propagate import SatelliteEphemeris, visible_satellites

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ROCHESTER = GeodeticPosition.from_degrees(43.0848638, -77.6786127, 170.0)
BOUND_SLACK = 0.9
_FMT = "{:.9g}"


def _fmt(x) -> str:
    return _FMT.format(float(x))


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ScenarioConfig:
    user: GeodeticPosition = ROCHESTER
    attitude0: tuple = (0.0, 0.0, math.pi / 2)
    start: str = "2026-01-30T15:00:00Z"
    duration: float = 20.0  # s
    tle_path: str | None = None  # None: synthetic catalog at the start epoch
    mask_gps: float = math.radians(10.0)
    mask_leo: float = math.radians(28.0)
    n_leo: tuple = (5, 15, 25, 35, 45)
    modes: tuple = tuple(FusionMode)
    sigma_gps: float = 3.0
    sigma_alpha: float = 1.5
    sigma_ofdm: float = 3.0
    sigma_gps_fix: float = 1.5
    rate_imu: float = 10.0
    rate_gps: float = 10.0
    rate_leo: float = 1.0
    gyro_arw_deg: float = 0.005  # deg/s/rtHz
    accel_vrw_ug: float = 50.0  # ug/rtHz
    init_position: float = 5.0
    init_velocity: float = 0.5
    init_attitude_deg: float = 1.0
    carrier_hz: float = obs.DEFAULT_FC
    noise_scale: float = 1.0  # scales injected measurement, IMU and init noise
    n_runs: int = 50
    seed: int = 12345
    reference: GeodeticPosition | None = None  # surveyed point for replay
    f_ref: float = 0.0  # ridge reference frequency, Hz

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be at least 1")
        if not self.n_leo or min(self.n_leo) < 1:
            raise ConfigError("n_leo must list positive satellite counts")
        if not self.modes:
            raise ConfigError("at least one fusion mode is required")
        if len(self.attitude0) != 3:
            raise ConfigError("attitude0 must have three angles")
        for name in ("sigma_gps", "sigma_alpha", "sigma_ofdm", "sigma_gps_fix", "rate_imu", "rate_gps",
                     "rate_leo", "init_position", "init_velocity", "init_attitude_deg", "carrier_hz"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.noise_scale < 0 or self.gyro_arw_deg < 0 or self.accel_vrw_ug < 0:
            raise ConfigError("noise levels must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        try:
            frames.utc_seconds(self.start)
        except ValueError as exc:
            raise ConfigError(f"bad start instant {self.start!r}") from exc

    @property
    def t0(self) -> float:
        return frames.utc_seconds(self.start)

    @property
    def carrier(self) -> obs.BeaconCarrier:
        return obs.BeaconCarrier(self.carrier_hz)

    def measurement_config(self, kinds=None) -> obs.MeasurementConfig:
        kw = {} if kinds is None else {"kinds": tuple(kinds)}
        return obs.MeasurementConfig(self.sigma_gps, self.sigma_alpha, self.sigma_ofdm, self.sigma_gps_fix,
                                     self.rate_gps, self.rate_leo, self.mask_gps, self.mask_leo, self.carrier,
                                     self.noise_scale, **kw)

    @property
    def imu_noise(self) -> ImuNoiseModel:
        return ImuNoiseModel.tactical(self.rate_imu, self.gyro_arw_deg, self.accel_vrw_ug)

    @property
    def init_sigmas(self) -> fu.InitSigmas:
        return fu.InitSigmas(self.init_position, self.init_velocity, math.radians(self.init_attitude_deg))

    # -- JSON ----------------------------------------------------------------

    def to_dict(self) -> dict:
        def geo(g):
            return None if g is None else {"lat_deg": math.degrees(g.lat), "lon_deg": math.degrees(g.lon),
                                           "alt_m": g.alt}
        return {
            "schema_version": SCHEMA_VERSION,
            "user": geo(self.user),
            "attitude0_rad": list(self.attitude0),
            "start": self.start,
            "duration_s": self.duration,
            "tle_path": self.tle_path,
            "mask_gps_deg": math.degrees(self.mask_gps),
            "mask_leo_deg": math.degrees(self.mask_leo),
            "n_leo": list(self.n_leo),
            "modes": [m.value for m in self.modes],
            "sigmas": {"gps_m": self.sigma_gps, "alpha_hz_per_s": self.sigma_alpha, "ofdm_m": self.sigma_ofdm,
                       "gps_fix_m": self.sigma_gps_fix},
            "rates_hz": {"imu": self.rate_imu, "gps": self.rate_gps, "leo": self.rate_leo},
            "imu": {"gyro_arw_deg_per_s_rthz": self.gyro_arw_deg, "accel_vrw_ug_rthz": self.accel_vrw_ug},
            "init_sigmas": {"position_m": self.init_position, "velocity_mps": self.init_velocity,
                            "attitude_deg": self.init_attitude_deg},
            "carrier_hz": self.carrier_hz,
            "noise_scale": self.noise_scale,
            "n_runs": self.n_runs,
            "seed": self.seed,
            "reference": geo(self.reference),
            "f_ref_hz": self.f_ref,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        version = d.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        kw = {}

        def take(key, conv, target):
            if key in d:
                kw[target] = conv(d.pop(key))

        def geo(v):
            if v is None:
                return None
            try:
                return GeodeticPosition.from_degrees(float(v["lat_deg"]), float(v["lon_deg"]), float(v["alt_m"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad geodetic position {v!r}") from exc

        def group(key, mapping):
            sub = d.pop(key, None)
            if sub is None:
                return
            sub = dict(sub)
            for k, target in mapping.items():
                if k in sub:
                    kw[target] = float(sub.pop(k))
            if sub:
                raise ConfigError(f"unknown keys in {key}: {sorted(sub)}")

        def modes(v):
            try:
                return tuple(FusionMode(m) for m in v)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc

        take("user", geo, "user")
        take("attitude0_rad", lambda v: tuple(float(a) for a in v), "attitude0")
        take("start", str, "start")
        take("duration_s", float, "duration")
        take("tle_path", lambda v: None if v is None else str(v), "tle_path")
        take("mask_gps_deg", lambda v: math.radians(float(v)), "mask_gps")
        take("mask_leo_deg", lambda v: math.radians(float(v)), "mask_leo")
        take("n_leo", lambda v: tuple(int(n) for n in v), "n_leo")
        take("modes", modes, "modes")
        group("sigmas", {"gps_m": "sigma_gps", "alpha_hz_per_s": "sigma_alpha", "ofdm_m": "sigma_ofdm",
                         "gps_fix_m": "sigma_gps_fix"})
        group("rates_hz", {"imu": "rate_imu", "gps": "rate_gps", "leo": "rate_leo"})
        group("imu", {"gyro_arw_deg_per_s_rthz": "gyro_arw_deg", "accel_vrw_ug_rthz": "accel_vrw_ug"})
        group("init_sigmas", {"position_m": "init_position", "velocity_mps": "init_velocity",
                              "attitude_deg": "init_attitude_deg"})
        take("carrier_hz", float, "carrier_hz")
        take("noise_scale", float, "noise_scale")
        take("n_runs", int, "n_runs")
        take("seed", int, "seed")
        take("reference", geo, "reference")
        take("f_ref_hz", float, "f_ref")
        if d:
            raise ConfigError(f"unknown config keys: {sorted(d)}")
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        cfg = cls.from_dict(data)
        if cfg.tle_path and not os.path.isabs(cfg.tle_path):
            cfg = replace(cfg, tle_path=str(Path(path).parent / cfg.tle_path))
        return cfg

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def load_catalog(cfg: ScenarioConfig) -> tle.TleCatalog:
    if cfg.tle_path is None:
        return tle.synthetic_catalog(cfg.t0)
    try:
        text = Path(cfg.tle_path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read TLE file {cfg.tle_path}: {exc}") from exc
    return tle.parse_tle_file(text, strict=False)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class RmseResult:
    times: np.ndarray
    pos: np.ndarray  # per-epoch RMSE over runs
    vel: np.ndarray
    att: np.ndarray
    aggregate: tuple  # RMSE over all epochs and runs
    final: tuple  # final-epoch RMSE


def state_errors(est, truth) -> np.ndarray:
    """(T, 9) estimate - truth with wrapped yaw; both (T, 9) arrays."""
    e = np.asarray(est, dtype=float) - np.asarray(truth, dtype=float)
    e[..., 6:9] = frames.wrap_angle(e[..., 6:9])
    return e


def squared_errors(est, truth) -> np.ndarray:
    """(T, 3) squared error norms for position, velocity and attitude."""
    e = state_errors(est, truth)
    return np.stack([(e[..., 0:3] ** 2).sum(-1), (e[..., 3:6] ** 2).sum(-1), (e[..., 6:9] ** 2).sum(-1)], axis=-1)


def _as_arrays(traj):
    if isinstance(traj, fu.FilterResult):
        return traj.times, traj.states
    traj = list(traj)
    return np.array([s.t for s in traj]), np.array([s.as_vector() for s in traj])


def _check_times(ta, tb):
    if len(ta) != len(tb) or np.any(np.abs(np.asarray(ta) - np.asarray(tb)) > 1e-6):
        raise TimestampMismatch("estimate and truth timestamps differ")


def compute_rmse(est, truth) -> RmseResult:
    """Per-epoch and aggregate RMSE; ``est`` may be one trajectory or a list of runs.

    Position and velocity use ENU error norms, attitude the norm of the
    wrapped angle differences.
    """
    t_truth, x_truth = _as_arrays(truth)
    runs = est if isinstance(est, (list, tuple)) and est and not isinstance(est[0], NavState) else [est]
    sq = []
    for run in runs:
        t_est, x_est = _as_arrays(run)
        _check_times(t_est, t_truth)
        sq.append(squared_errors(x_est, x_truth))
    return rmse_from_squared(t_truth, np.array(sq))


def rmse_from_squared(times, sq) -> RmseResult:
    """``sq`` holds (runs, T, 3) squared error norms."""
    per_epoch = np.sqrt(sq.mean(axis=0))
    agg = tuple(float(v) for v in np.sqrt(sq.mean(axis=(0, 1))))
    final = tuple(float(v) for v in per_epoch[-1])
    return RmseResult(np.asarray(times), per_epoch[:, 0], per_epoch[:, 1], per_epoch[:, 2], agg, final)


def nees(est, covs, truth) -> np.ndarray:
    """Per-epoch e^T P^-1 e."""
    e = state_errors(est, truth)
    return np.einsum("ki,ki->k", e, np.linalg.solve(covs, e[..., None])[..., 0])


def chi2_band(dof: int, runs: int, prob: float = 0.95) -> tuple[float, float]:
    """Two-sided band for the run-averaged NEES of a consistent filter."""
    from scipy.stats import chi2
    lo, hi = chi2.ppf([(1 - prob) / 2, (1 + prob) / 2], dof * runs)
    return float(lo / runs), float(hi / runs)


# ---------------------------------------------------------------------------
# scenario


@dataclass
class Scenario:
    """Immutable inputs shared by every run of a sweep."""

    cfg: ScenarioConfig
    frame: frames.EnuFrame
    truth: list
    gps_ids: list
    leo_ids: list  # visible Starlink, highest elevation at the midpoint first
    ephemeris: SatelliteEphemeris
    imu_nominal: list
    tables: dict  # n_leo -> ModelTable

    @classmethod
    def build(cls, cfg: ScenarioConfig, catalog: tle.TleCatalog | None = None) -> "Scenario":
        catalog = load_catalog(cfg) if catalog is None else catalog
        t0 = cfg.t0
        frame = frames.enu_frame_at(cfg.user)
        truth = static_trajectory(cfg.duration, cfg.rate_imu, cfg.attitude0, t0=t0)
        vis = visible_satellites(catalog, cfg.user, t0 + cfg.duration / 2, cfg.mask_gps, cfg.mask_leo)
        gps_ids = [i for i, _ in vis.visible_navstar]
        leo_ids = [i for i, _ in vis.visible_starlink]
        if any(m.uses_gps for m in cfg.modes) and len(gps_ids) < 4:
            raise InsufficientVisibility(f"only {len(gps_ids)} GPS satellites above the mask at the midpoint")
        n_max = max(cfg.n_leo) if any(m.uses_leo for m in cfg.modes) else 0
        if n_max and len(leo_ids) < max(4, n_max):
            raise InsufficientVisibility(f"{len(leo_ids)} Starlink satellites visible at the midpoint, "
                                         f"sweep needs {max(4, n_max)}")
        leo_ids = leo_ids[:n_max]
        ephemeris = SatelliteEphemeris([catalog.by_id(i) for i in gps_ids + leo_ids], [s.t for s in truth])
        kinds = set().union(*(m.kinds for m in cfg.modes)) - {MeasurementKind.GPS_POSITION}
        mcfg = cfg.measurement_config(sorted(kinds, key=lambda k: k.value))
        gps_used = gps_ids if MeasurementKind.GPS_PSEUDORANGE in kinds else []
        tables = {}
        for n in sorted(set(cfg.n_leo)) if n_max else [0]:
            tables[n] = obs.model_table(truth, frame, ephemeris, gps_used, leo_ids[:n], mcfg)
        imu_nominal = synthesize_imu(truth, ImuNoiseModel(), cfg.rate_imu)
        return cls(cfg, frame, truth, gps_ids, leo_ids, ephemeris, imu_nominal, tables)

    def table(self, mode: FusionMode, n: int) -> obs.ModelTable:
        return self.tables[n] if mode.uses_leo else next(iter(self.tables.values()))

    def kinds(self, mode: FusionMode, n: int):
        return [k for k in sorted(mode.kinds, key=lambda k: k.value) if k in self.table(mode, n).values]

    def measurements(self, mode: FusionMode, n: int, run: int):
        return obs.realize(self.table(mode, n), self.cfg.measurement_config(), (self.cfg.seed, run),
                           self.kinds(mode, n))

    @property
    def truth_array(self) -> np.ndarray:
        return np.array([s.as_vector() for s in self.truth])


@dataclass
class RunOutput:
    sq: np.ndarray  # (T, 3)
    nees: np.ndarray  # (T,)
    gated: int
    result: fu.FilterResult | None = None


def run_once(sc: Scenario, mode: FusionMode, n: int, run: int, keep: bool = False) -> RunOutput:
    cfg = sc.cfg
    meas = sc.measurements(mode, n, run)
    imu = synthesize_imu(sc.truth, cfg.imu_noise.scaled(cfg.noise_scale), cfg.rate_imu, seed=[cfg.seed, run, 1])
    init = fu.initial_filter_state(sc.truth[0], sc.frame, mode, cfg.init_sigmas,
                                   rng=np.random.default_rng([cfg.seed, run, 0]), carrier=cfg.carrier,
                                   scale=cfg.noise_scale)
    res = fu.run_filter(imu, meas, sc.ephemeris, init, cfg.imu_noise)
    x_truth = sc.truth_array
    _check_times(res.times, [s.t for s in sc.truth])
    return RunOutput(squared_errors(res.states, x_truth), nees(res.states, res.covariances, x_truth), res.gated,
                     res if keep else None)


def run_bound(sc: Scenario, mode: FusionMode, n: int) -> bd.BoundResult:
    cfg = sc.cfg
    schedule = obs.realize(sc.table(mode, n), cfg.measurement_config(), (cfg.seed, 0), sc.kinds(mode, n))
    J0 = np.linalg.inv(cfg.init_sigmas.covariance())
    return bd.pcrb_trajectory(sc.truth, sc.imu_nominal, schedule, sc.ephemeris, sc.frame, J0, cfg.imu_noise,
                              cfg.carrier)


# -- parallel plumbing: each worker builds its own Scenario once ------------

_WORKER: dict = {}


def _worker_init(cfg: ScenarioConfig):
    _WORKER["sc"] = Scenario.build(cfg)


def _worker_task(args):
    mode, n, run, keep = args
    return (mode, n, run), run_once(_WORKER["sc"], FusionMode(mode), n, run, keep)


# ---------------------------------------------------------------------------
# sweep


@dataclass
class RmseRow:
    mode: str
    n_sats: int
    epoch: str  # "aggregate" or "final"
    pos_rmse_m: float
    vel_rmse_mps: float
    att_rmse_rad: float
    pos_bound_m: float
    vel_bound_mps: float
    att_bound_rad: float

    @property
    def bound_ok(self) -> bool:
        return all(r >= BOUND_SLACK * b for r, b in ((self.pos_rmse_m, self.pos_bound_m),
                                                    (self.vel_rmse_mps, self.vel_bound_mps),
                                                    (self.att_rmse_rad, self.att_bound_rad)))


@dataclass
class RmseTable:
    rows: list = field(default_factory=list)

    HEADER = ["mode", "n_sats", "epoch", "pos_rmse_m", "vel_rmse_mps", "att_rmse_rad", "pos_bound_m",
              "vel_bound_mps", "att_bound_rad", "bound_ok"]

    def get(self, mode, n, epoch="aggregate") -> RmseRow:
        mode = FusionMode(mode).value
        for r in self.rows:
            if r.mode == mode and r.n_sats == n and r.epoch == epoch:
                return r
        raise KeyError((mode, n, epoch))

    def violations(self, epoch="aggregate"):
        """Rows below the slackened bound; epoch=None checks every row."""
        return [r for r in self.rows if (epoch is None or r.epoch == epoch) and not r.bound_ok]

    def write(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.HEADER)
            for r in self.rows:
                w.writerow([r.mode, r.n_sats, r.epoch] + [_fmt(v) for v in (
                    r.pos_rmse_m, r.vel_rmse_mps, r.att_rmse_rad, r.pos_bound_m, r.vel_bound_mps,
                    r.att_bound_rad)] + [int(r.bound_ok)])


@dataclass
class SweepResult:
    cfg: ScenarioConfig
    times: np.ndarray  # relative to start
    table: RmseTable
    rmse: dict  # (mode, n) -> RmseResult
    bounds: dict  # (mode, n) -> BoundResult
    nees: dict  # (mode, n) -> run-averaged NEES per epoch
    gated: dict  # (mode, n) -> total gated measurements
    trajectories: dict  # (mode, n) -> FilterResult of run 0
    n_visible: tuple = (0, 0)


def _task_keys(cfg: ScenarioConfig):
    """(mode, n_eff) groups; modes without LEO share one group (n_eff = 0)."""
    keys = []
    for mode in cfg.modes:
        for n in (sorted(set(cfg.n_leo)) if mode.uses_leo else [0]):
            keys.append((mode, n))
    return keys


def run_sweep(cfg: ScenarioConfig, threads: int = 1, scenario: Scenario | None = None,
              progress=None) -> SweepResult:
    """Monte Carlo over modes x n_leo x runs, plus the PCRB for each cell.

    GPS-only modes do not depend on n_leo; they run once and their rows are
    repeated for every n_leo.
    """
    sc = scenario or Scenario.build(cfg)
    groups = _task_keys(cfg)
    tasks = [(mode.value, n if mode.uses_leo else next(iter(sc.tables)), run, run == 0)
             for mode, n in groups for run in range(cfg.n_runs)]
    outputs = {}
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads, initializer=_worker_init, initargs=(cfg,)) as pool:
            for key, out in pool.map(_worker_task, tasks, chunksize=max(1, len(tasks) // (8 * threads))):
                outputs[key] = out
                if progress:
                    progress(len(outputs), len(tasks))
    else:
        for mode, n, run, keep in tasks:
            outputs[(mode, n, run)] = run_once(sc, FusionMode(mode), n, run, keep)
            if progress:
                progress(len(outputs), len(tasks))

    times = np.array([s.t for s in sc.truth]) - cfg.t0
    table = RmseTable()
    rmse, bounds, nees_avg, gated, trajs = {}, {}, {}, {}, {}
    for mode, n_group in groups:
        n_task = n_group if mode.uses_leo else next(iter(sc.tables))
        runs = [outputs[(mode.value, n_task, r)] for r in range(cfg.n_runs)]
        res = rmse_from_squared(times, np.array([o.sq for o in runs]))
        b = run_bound(sc, mode, n_task)
        ne = np.mean([o.nees for o in runs], axis=0)
        for n in ([n_group] if mode.uses_leo else sorted(set(cfg.n_leo))):
            key = (mode, n)
            rmse[key], bounds[key], nees_avg[key] = res, b, ne
            gated[key] = sum(o.gated for o in runs)
            trajs[key] = runs[0].result
    for mode in cfg.modes:
        for n in sorted(set(cfg.n_leo)):
            res, b = rmse[(mode, n)], bounds[(mode, n)]
            agg_b = b.aggregate()
            fin_b = (float(b.pos[-1]), float(b.vel[-1]), float(b.att[-1]))
            table.rows.append(RmseRow(mode.value, n, "aggregate", *res.aggregate, *agg_b))
            table.rows.append(RmseRow(mode.value, n, "final", *res.final, *fin_b))
    return SweepResult(cfg, times, table, rmse, bounds, nees_avg, gated, trajs,
                       (len(sc.gps_ids), len(sc.leo_ids)))


# ---------------------------------------------------------------------------
# output


TRAJ_HEADER = (["t_s", "e_m", "n_m", "u_m", "ve", "vn", "vu", "roll", "pitch", "yaw"]
               + [f"p{i}{i}" for i in range(1, 10)])
BOUND_HEADER = ["t_s", "pos_bound_m", "vel_bound_mps", "att_bound_rad", "mode", "n_sats"]


def write_trajectory(path, res: fu.FilterResult, t0: float = 0.0):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJ_HEADER)
        for t, x, p in zip(res.times, res.states, res.P_diag):
            w.writerow([_fmt(t - t0)] + [_fmt(v) for v in x] + [_fmt(v) for v in p])


def write_bounds(path, items, t0: float = 0.0):
    """``items``: iterable of (mode, n_sats, BoundResult)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BOUND_HEADER)
        for mode, n, b in items:
            for k, t in enumerate(b.times):
                w.writerow([_fmt(t - t0), _fmt(b.pos[k]), _fmt(b.vel[k]), _fmt(b.att[k]), FusionMode(mode).value, n])


def write_sweep(result: SweepResult, out) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.cfg
    t0 = cfg.t0
    keys = [(m, n) for m in cfg.modes for n in sorted(set(cfg.n_leo))]
    written = [out / "rmse.csv", out / "bounds.csv", out / "rmse_epochs.csv", out / "nees.csv"]
    result.table.write(written[0])
    write_bounds(written[1], ((m, n, result.bounds[(m, n)]) for m, n in keys), t0)
    with open(written[2], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "mode", "n_sats", "pos_rmse_m", "vel_rmse_mps", "att_rmse_rad"])
        for m, n in keys:
            r = result.rmse[(m, n)]
            for k, t in enumerate(r.times):
                w.writerow([_fmt(t), m.value, n, _fmt(r.pos[k]), _fmt(r.vel[k]), _fmt(r.att[k])])
    with open(written[3], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "mode", "n_sats", "nees_avg", "runs"])
        for m, n in keys:
            for t, v in zip(result.times, result.nees[(m, n)]):
                w.writerow([_fmt(t), m.value, n, _fmt(v), cfg.n_runs])
    for m, n in keys:
        path = out / "trajectories" / f"{m.value.replace('+', '_')}_n{n:02d}_run0.csv"
        write_trajectory(path, result.trajectories[(m, n)], t0)
        written.append(path)
    (out / "scenario.json").write_text(cfg.dumps())
    (out / "plot_sweep.py").write_text(PLOT_SCRIPT)
    written += [out / "scenario.json", out / "plot_sweep.py"]
    return written


PLOT_SCRIPT = '''"""RMSE and bound versus number of LEO satellites, from rmse.csv.

Usage: python plot_sweep.py [rmse.csv] [out.png]
"""
import csv
import sys
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

src = sys.argv[1] if len(sys.argv) > 1 else "rmse.csv"
dst = sys.argv[2] if len(sys.argv) > 2 else "rmse.png"
data = defaultdict(list)
with open(src) as fh:
    for row in csv.DictReader(fh):
        if row["epoch"] == "aggregate":
            data[row["mode"]].append(row)

panels = [("pos", "position RMSE [m]", "pos_rmse_m", "pos_bound_m"),
          ("vel", "velocity RMSE [m/s]", "vel_rmse_mps", "vel_bound_mps"),
          ("att", "attitude RMSE [rad]", "att_rmse_rad", "att_bound_rad")]
fig, axes = plt.subplots(1, 3, figsize=(15, 4.5))
for ax, (_, label, col, bcol) in zip(axes, panels):
    for k, (mode, rows) in enumerate(sorted(data.items())):
        n = [int(r["n_sats"]) for r in rows]
        c = f"C{k}"
        ax.plot(n, [float(r[col]) for r in rows], "o-", color=c, label=mode)
        ax.plot(n, [float(r[bcol]) for r in rows], "--", color=c)
    ax.set_xlabel("number of Starlink satellites")
    ax.set_ylabel(label)
    ax.set_yscale("log")
    ax.grid(True, which="both", alpha=0.3)
axes[0].legend(fontsize=8)
fig.tight_layout()
fig.savefig(dst, dpi=150)
print("wrote", dst)
'''


# ---------------------------------------------------------------------------
# single simulation and bound (CLI helpers)


def simulate(cfg: ScenarioConfig, mode: FusionMode, n: int, run: int = 0, scenario: Scenario | None = None):
    sc = scenario or Scenario.build(replace(cfg, modes=(mode,), n_leo=(n,)))
    out = run_once(sc, mode, n if mode.uses_leo else next(iter(sc.tables)), run, keep=True)
    return sc, out


# ---------------------------------------------------------------------------
# hardware-log replay


def read_imu_csv(path, t0: float = 0.0) -> list[ImuSample]:
    rows = _read_rows(path, ["t_s", "ax", "ay", "az", "gx", "gy", "gz"])
    out = []
    for r in rows:
        v = [float(r[k]) for k in ("ax", "ay", "az", "gx", "gy", "gz")]
        out.append(ImuSample(t0 + float(r["t_s"]), np.array(v[:3]), np.array(v[3:])))
    if any(b.t <= a.t for a, b in zip(out, out[1:])):
        raise DataError(f"{path}: IMU timestamps must be strictly increasing")
    return out


def read_gps_csv(path):
    """('fix', rows of t, lat_deg, lon_deg, alt_m) or ('raw', rows of t, sat_id, pseudorange_m)."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    if header[:4] == ["t_s", "lat_deg", "lon_deg", "alt_m"]:
        rows = _read_rows(path, header[:4])
        return "fix", [(float(r["t_s"]), float(r["lat_deg"]), float(r["lon_deg"]), float(r["alt_m"])) for r in rows]
    if header[:3] == ["t_s", "sat_id", "pseudorange_m"]:
        rows = _read_rows(path, header[:3])
        return "raw", [(float(r["t_s"]), int(r["sat_id"]), float(r["pseudorange_m"])) for r in rows]
    raise DataError(f"{path}: unrecognised GPS CSV header {header}")


def _read_rows(path, required):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(k not in reader.fieldnames for k in required):
            raise DataError(f"{path}: expected columns {','.join(required)}")
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return rows


@dataclass
class ReplayResult:
    results: dict  # mode -> FilterResult
    associations: list  # (ridge path, AssociationResult | None, reason)
    alpha_measurements: list
    reference_source: str  # "survey" or "gps+imu"
    pos_error: dict  # mode -> per-epoch position error norm vs reference
    vel_error: dict  # mode -> per-epoch velocity error norm (survey reference only)
    t0: float = 0.0

    def rmse(self, mode) -> float:
        return float(np.sqrt(np.mean(self.pos_error[FusionMode(mode)] ** 2)))


REPLAY_MODES = (FusionMode.GPS_IMU, FusionMode.LEO_ALPHA_IMU, FusionMode.GPS_LEO_ALPHA_IMU)


def associate_ridges(ridge_paths, catalog: tle.TleCatalog, cfg: ScenarioConfig, user: GeodeticPosition):
    """One Doppler-rate measurement per accepted ridge file.

    Candidates are the Starlink satellites above the LEO mask at the ridge
    midpoint; rejected or unmatched ridges are logged and dropped.
    """
    t0 = cfg.t0
    starlink = [r for r in catalog.records if r.constellation is tle.Constellation.STARLINK]
    assoc, meas = [], []
    for path in ridge_paths:
        trace = spectral.read_ridge_csv(path, cfg.f_ref)
        t_mid = t0 + 0.5 * (trace.t[0] + trace.t[-1])
        vis = visible_satellites(tle.TleCatalog(starlink), user, t_mid, cfg.mask_gps, cfg.mask_leo)
        window = (t0 + trace.t[0] - 1.0, t0 + trace.t[-1] + 1.0)
        cands = []
        for sat_id, _ in vis.visible_starlink:
            try:
                cands.append(spectral.predict_signature(catalog.by_id(sat_id), user, window, cfg.carrier,
                                                        step=0.1, mask=cfg.mask_leo))
            except NeverVisible:
                continue
        if not cands:
            log.warning("%s: no visible Starlink candidates", path)
            assoc.append((str(path), None, "no candidates"))
            continue
        res = spectral.associate(trace, cands, t0=t0)
        if not res.accepted:
            err = AssociationRejected(f"{path}: best match {res.sat_id} has |dalpha| = {res.residual_alpha:.2f} Hz/s")
            log.warning("%s", err)
            assoc.append((str(path), res, "rejected"))
            continue
        assoc.append((str(path), res, "accepted"))
        meas.append(Measurement(MeasurementKind.LEO_DOPPLER_RATE, float(res.t_mid), res.sat_id, float(res.alpha_hat),
                                cfg.sigma_alpha))
    return assoc, meas


def replay_hardware(gps_csv, imu_csv, ridge_csvs, tle_path, cfg: ScenarioConfig, modes=REPLAY_MODES) -> ReplayResult:
    """Fuse logged GPS, IMU and beacon ridges per mode.

    Log timestamps are seconds after ``cfg.start``. The filter starts at the
    first GPS fix (zero velocity, ``cfg.attitude0``); that fix is not reused
    as an update. Errors are taken against ``cfg.reference`` when given,
    else against the GPS+IMU solution.
    """
    t0 = cfg.t0
    catalog = tle.parse_tle_file(Path(tle_path).read_text(), strict=False)
    imu = read_imu_csv(imu_csv, t0)
    gps_kind, gps_rows = read_gps_csv(gps_csv) if gps_csv else ("none", [])
    if gps_kind == "fix":
        g0 = gps_rows[0]
        origin = GeodeticPosition.from_degrees(g0[1], g0[2], g0[3])
    else:
        origin = cfg.user
    frame = frames.enu_frame_at(origin)
    user = cfg.reference or origin

    gps_meas, p0, t_init = [], np.zeros(3), imu[0].t
    if gps_kind == "fix":
        for t, lat, lon, alt in gps_rows:
            enu = frames.ecef_to_enu(frame, frames.geodetic_to_ecef(GeodeticPosition.from_degrees(lat, lon, alt)))
            if abs(t0 + t - t_init) < 1e-9:
                p0 = enu
                continue
            for axis in range(3):
                gps_meas.append(Measurement(MeasurementKind.GPS_POSITION, t0 + t, axis, float(enu[axis]),
                                            cfg.sigma_gps_fix))
    elif gps_kind == "raw":
        gps_meas = [Measurement(MeasurementKind.GPS_PSEUDORANGE, t0 + t, s, v, cfg.sigma_gps) for t, s, v in gps_rows]

    assoc, alpha_meas = associate_ridges(ridge_csvs, catalog, cfg, user)
    ids = sorted({m.sat_id for m in alpha_meas} | {m.sat_id for m in gps_meas if m.kind is MeasurementKind.GPS_PSEUDORANGE})
    ephemeris = SatelliteEphemeris([catalog.by_id(i) for i in ids]) if ids else None

    nav0 = NavState(p0, np.zeros(3), np.asarray(cfg.attitude0, dtype=float), t_init)
    results = {}
    for mode in modes:
        meas = [m for m in gps_meas + alpha_meas if m.kind in mode.kinds and m.t >= t_init - 1e-9]
        meas.sort(key=Measurement.sort_key)
        init = fu.initial_filter_state(nav0, frame, mode, cfg.init_sigmas, carrier=cfg.carrier)
        results[mode] = fu.run_filter(imu, meas, ephemeris, init, cfg.imu_noise)

    if cfg.reference is not None:
        ref_p = frames.ecef_to_enu(frame, frames.geodetic_to_ecef(cfg.reference))
        source = "survey"
        pos_err = {m: np.linalg.norm(r.states[:, 0:3] - ref_p, axis=1) for m, r in results.items()}
        vel_err = {m: np.linalg.norm(r.states[:, 3:6], axis=1) for m, r in results.items()}
    else:
        if FusionMode.GPS_IMU not in results:
            raise ConfigError("replay without a surveyed reference needs the gps+imu mode")
        ref = results[FusionMode.GPS_IMU].states
        source = "gps+imu"
        pos_err = {m: np.linalg.norm(r.states[:, 0:3] - ref[:, 0:3], axis=1) for m, r in results.items()}
        vel_err = {m: np.linalg.norm(r.states[:, 3:6] - ref[:, 3:6], axis=1) for m, r in results.items()}
    return ReplayResult(results, assoc, alpha_meas, source, pos_err, vel_err, t0)


def write_replay(result: ReplayResult, out) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for mode, res in result.results.items():
        path = out / f"replay_{mode.value.replace('+', '_')}.csv"
        write_trajectory(path, res, result.t0)
        written.append(path)
    with open(out / "replay_errors.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        modes = list(result.results)
        w.writerow(["t_s"] + [f"pos_err_{m.value}" for m in modes] + [f"vel_err_{m.value}" for m in modes])
        times = next(iter(result.results.values())).times
        for k, t in enumerate(times):
            w.writerow([_fmt(t - result.t0)] + [_fmt(result.pos_error[m][k]) for m in modes]
                       + [_fmt(result.vel_error[m][k]) for m in modes])
    with open(out / "associations.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ridge", "status", "sat_id", "residual_alpha", "residual_doppler", "accepted", "alpha_hat", "t_s"])
        for path, res, status in result.associations:
            if res is None:
                w.writerow([Path(path).name, status, "", "", "", "", "", ""])
            else:
                w.writerow([Path(path).name, status, res.sat_id, _fmt(res.residual_alpha), _fmt(res.residual_doppler),
                            int(res.accepted), _fmt(res.alpha_hat), _fmt(res.t_mid - result.t0)])
    meta = {"reference": result.reference_source,
            "reference_note": ("errors against the surveyed static point" if result.reference_source == "survey"
                               else "no survey truth: errors against the GPS+IMU solution"),
            "alpha_updates": len(result.alpha_measurements),
            "rmse_m": {m.value: result.rmse(m) for m in result.results}}
    (out / "replay_meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return written + [out / "replay_errors.csv", out / "associations.csv", out / "replay_meta.json"]


# ---------------------------------------------------------------------------
# synthetic replay fixture


def make_replay_fixture(out, cfg: ScenarioConfig | None = None, seed: int = 7, n_ridges: int = 5,
                        sample_rate: float = 64000.0, snr_db: float = 10.0, lo_offset: float = 2000.0) -> Path:
    """Write a synthetic stand-in for a 20 s hardware capture.

    Static user at ``cfg.user``: 10 Hz GPS fixes with sigma_gps_fix noise
    per ENU axis, 10 Hz IMU with ``cfg.imu_noise``, and ``n_ridges`` beacon
    ridges from distinct satellites, each over its own slice of the window,
    produced by the spectral pipeline at ``snr_db``. Returns the fixture
    config path, whose ``reference`` is the true position.
    """
    cfg = cfg or ScenarioConfig()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = cfg.t0
    catalog = load_catalog(cfg)
    (out / "catalog.tle").write_text(tle.format_catalog(catalog.records))
    frame = frames.enu_frame_at(cfg.user)
    truth = static_trajectory(cfg.duration, cfg.rate_imu, cfg.attitude0, t0=t0)

    imu = synthesize_imu(truth, cfg.imu_noise, cfg.rate_imu, seed=[seed, 1])
    with open(out / "imu.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "ax", "ay", "az", "gx", "gy", "gz"])
        for s in imu:
            w.writerow([f"{s.t - t0:.3f}"] + [f"{v:.9e}" for v in (*s.accel, *s.gyro)])

    rng = np.random.default_rng([seed, 2])
    with open(out / "gps.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "lat_deg", "lon_deg", "alt_m"])
        for s in truth:
            enu = s.p_enu + cfg.sigma_gps_fix * rng.standard_normal(3)
            g = frames.ecef_to_geodetic(frames.enu_to_ecef_state(frame, enu, np.zeros(3))[0])
            w.writerow([f"{s.t - t0:.3f}", f"{math.degrees(g.lat):.10f}", f"{math.degrees(g.lon):.10f}", f"{g.alt:.4f}"])

    span = cfg.duration / n_ridges
    used = set()
    for k in range(n_ridges):
        a, b = k * span, (k + 1) * span
        vis = visible_satellites(catalog, cfg.user, t0 + 0.5 * (a + b), cfg.mask_gps, cfg.mask_leo)
        sat_id = next(i for i, _ in vis.visible_starlink if i not in used)
        used.add(sat_id)
        sig = spectral.predict_signature(catalog.by_id(sat_id), cfg.user, (t0 + a - 1.0, t0 + b + 1.0),
                                         cfg.carrier, step=0.05, mask=cfg.mask_leo)
        f_mid = float(np.interp(t0 + 0.5 * (a + b), sig.t, sig.f_d))
        spec = spectral.synthesize_tone(lambda t: np.interp(t0 + a + t, sig.t, sig.f_d) - f_mid + lo_offset,
                                        b - a, sample_rate, snr_db, seed=[seed, 3, k])
        trace = spectral.extract_ridge(spec, cfg.f_ref)
        spectral.write_ridge_csv(out / f"ridge_{k + 1}.csv",
                                 spectral.RidgeTrace(trace.t + a, trace.f, trace.f_ref))

    fixture_cfg = replace(cfg, tle_path="catalog.tle", reference=cfg.user, modes=REPLAY_MODES)
    path = out / "fixture.json"
    path.write_text(fixture_cfg.dumps())
    return path


def fixture_paths(directory):
    d = Path(directory)
    return {"config": d / "fixture.json", "gps": d / "gps.csv", "imu": d / "imu.csv",
            "ridges": sorted(d.glob("ridge_*.csv")), "tle": d / "catalog.tle"}

"""Beacon spectrograms, Doppler ridge tracking, Doppler-rate estimation and
TLE-based satellite association."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal, stats
from scipy.integrate import cumulative_trapezoid

from . import frames
from .errors import DegenerateTimes, NeverVisible, NoRidge, NyquistViolation
from .observables import BeaconCarrier, line_of_sight
from .propagate import LEO_MASK_DEG, SimplifiedPropagator, propagate
from .tle import TleRecord

NPERSEG = 1024
PEAK_THRESHOLD_DB = 15.0
W_F = 1.0 / 100.0  # 1 / Hz
W_ALPHA = 1.0  # 1 / (Hz/s)
ALPHA_THRESHOLD = 3.5  # Hz/s


@dataclass(frozen=True)
class Spectrogram:
    t_axis: np.ndarray  # s, slice centres
    f_axis: np.ndarray  # Hz, ascending
    power: np.ndarray  # dB, (time, frequency); per-bin power

    def __post_init__(self):
        if self.power.shape != (len(self.t_axis), len(self.f_axis)):
            raise ValueError("power matrix does not match the axes")
        for name, ax in (("t_axis", self.t_axis), ("f_axis", self.f_axis)):
            if len(ax) > 1 and np.any(np.diff(ax) <= 0):
                raise ValueError(f"{name} must be strictly increasing")

    @property
    def linear(self) -> np.ndarray:
        return 10.0 ** (self.power / 10.0)

    @property
    def bin_width(self) -> float:
        return float(self.f_axis[1] - self.f_axis[0])


@dataclass(frozen=True)
class RidgeTrace:
    t: np.ndarray  # s
    f: np.ndarray  # Hz, absolute (including f_ref)
    f_ref: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        f = np.asarray(self.f, dtype=float)
        if t.shape != f.shape or t.ndim != 1:
            raise ValueError("ridge times and frequencies must be 1-D and equal length")
        if len(t) > 1 and np.all(t == t[0]):
            raise DegenerateTimes("all ridge times are equal")
        if np.any(np.diff(t) <= 0):
            raise ValueError("ridge times must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "f", f)

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.t.tolist(), self.f.tolist()))

    @property
    def doppler(self) -> np.ndarray:
        return self.f - self.f_ref

    def __len__(self):
        return len(self.t)


@dataclass(frozen=True)
class Signature:
    """Predicted Doppler and Doppler-rate curves of one satellite."""

    sat_id: int
    t: np.ndarray
    f_d: np.ndarray
    alpha: np.ndarray
    elevation: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def rows(self):
        return list(zip(self.t.tolist(), self.f_d.tolist(), self.alpha.tolist()))


@dataclass(frozen=True)
class AssociationResult:
    sat_id: int
    residual_alpha: float  # |alpha_hat - alpha_pred(t_mid)|, Hz/s
    residual_doppler: float  # offset-removed RMS, Hz
    accepted: bool
    alpha_hat: float = math.nan
    alpha_sigma: float = math.nan
    cost: float = math.nan
    t_mid: float = math.nan


# ---------------------------------------------------------------------------
# synthesis


def spectrogram(x, sample_rate: float, nperseg: int = NPERSEG, t0: float = 0.0) -> Spectrogram:
    """Hann STFT of complex samples with 50% overlap.

    Per-bin power is |X|^2 / (N sum w^2), so each slice sums to the
    window-weighted mean power of its samples.
    """
    f, t, sxx = signal.spectrogram(np.asarray(x), fs=sample_rate, window="hann", nperseg=nperseg,
                                   noverlap=nperseg // 2, detrend=False, return_onesided=False,
                                   scaling="density", mode="psd")
    f = np.fft.fftshift(f)
    sxx = np.fft.fftshift(sxx, axes=0) * (sample_rate / nperseg)
    with np.errstate(divide="ignore"):
        power = 10.0 * np.log10(sxx.T)
    return Spectrogram(t + t0, f, power)


def synthesize_tone(freq, duration: float, sample_rate: float, snr_db: float = math.inf, seed=0,
                    nperseg: int = NPERSEG, return_samples: bool = False):
    """Spectrogram of a unit-amplitude complex tone following ``freq(t)`` Hz.

    ``snr_db`` is the per-sample ratio of tone power to complex white noise
    power. Phase is the cumulative trapezoid of the sampled frequency, which
    is exact for a linear chirp.
    """
    if not duration > 0 or not sample_rate > 0:
        raise ValueError("duration and sample_rate must be positive")
    n = int(round(duration * sample_rate))
    if n < nperseg:
        raise ValueError(f"need at least {nperseg} samples, got {n}")
    t = np.arange(n) / sample_rate
    f = np.broadcast_to(np.asarray(freq(t), dtype=float), t.shape)
    if np.max(np.abs(f)) >= sample_rate / 2:
        raise NyquistViolation(f"tone reaches {np.max(np.abs(f)):.1f} Hz, Nyquist is {sample_rate / 2:.1f} Hz")
    phase = 2.0 * np.pi * cumulative_trapezoid(f, t, initial=0.0)
    x = np.exp(1j * phase)
    if math.isfinite(snr_db):
        rng = np.random.default_rng(seed)
        sigma = math.sqrt(10.0 ** (-snr_db / 10.0) / 2.0)
        x = x + sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    spec = spectrogram(x, sample_rate, nperseg)
    return (spec, x) if return_samples else spec


def synthesize_beacon(alpha_true: float, f_d0: float, duration: float, sample_rate: float,
                      snr_db: float = math.inf, seed=0, nperseg: int = NPERSEG) -> Spectrogram:
    """Linear chirp f_d0 + alpha_true * t with white noise at ``snr_db``."""
    return synthesize_tone(lambda t: f_d0 + alpha_true * t, duration, sample_rate, snr_db, seed, nperseg)


# ---------------------------------------------------------------------------
# ridge and rate


def extract_ridge(spec: Spectrogram, f_ref: float = 0.0, threshold_db: float = PEAK_THRESHOLD_DB) -> RidgeTrace:
    """Peak bin per slice, refined by a parabola through the dB values of
    the peak and its neighbours. Slices whose peak is less than
    ``threshold_db`` above the slice median are dropped."""
    P = spec.power
    if P.size == 0:
        raise NoRidge("empty spectrogram")
    k = np.argmax(P, axis=1)
    rows = np.arange(P.shape[0])
    peak = P[rows, k]
    keep = peak - np.median(P, axis=1) >= threshold_db
    keep &= (k > 0) & (k < P.shape[1] - 1)
    if not keep.any():
        raise NoRidge(f"no slice has a peak {threshold_db:g} dB above its median")
    rows, k = rows[keep], k[keep]
    a, b, c = P[rows, k - 1], P[rows, k], P[rows, k + 1]
    den = a - 2.0 * b + c
    delta = np.where(den < 0, 0.5 * (a - c) / np.where(den < 0, den, -1.0), 0.0)
    f = spec.f_axis[k] + delta * spec.bin_width
    return RidgeTrace(spec.t_axis[rows], f + f_ref, f_ref)


def estimate_doppler_rate(trace: RidgeTrace) -> tuple[float, float]:
    """Least-squares slope of (f_i - f_ref) against t_i and its standard error.

    Two points give the plain first difference (sigma is NaN: no residual
    degrees of freedom).
    """
    t, f = np.asarray(trace.t, dtype=float), np.asarray(trace.f, dtype=float)
    if len(t) < 2:
        raise ValueError("need at least two ridge points")
    if np.all(t == t[0]):
        raise DegenerateTimes("all ridge times are equal")
    if len(t) == 2:
        return ((f[1] - trace.f_ref) - (f[0] - trace.f_ref)) / (t[1] - t[0]), math.nan
    fit = stats.linregress(t - t.mean(), f - trace.f_ref)
    return float(fit.slope), float(fit.stderr)


def read_ridge_csv(path, f_ref: float = 0.0) -> RidgeTrace:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "t_s" not in rows[0] or "f_hz" not in rows[0]:
        raise ValueError(f"{path}: expected header t_s,f_hz")
    return RidgeTrace(np.array([float(r["t_s"]) for r in rows]), np.array([float(r["f_hz"]) for r in rows]), f_ref)


def write_ridge_csv(path, trace: RidgeTrace):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "f_hz"])
        for t, f in trace.points:
            w.writerow([f"{t:.6f}", f"{f:.6f}"])


# ---------------------------------------------------------------------------
# prediction and association


def predict_signature(rec: TleRecord, user: frames.GeodeticPosition, window: tuple[float, float],
                      carrier: BeaconCarrier = BeaconCarrier(), step: float = 1.0,
                      mask: float = math.radians(LEO_MASK_DEG)) -> Signature:
    """Predicted f_D = -(f_c/c) rho_dot and alpha = -(f_c/c) rho_ddot for a static user."""
    t0, t1 = window
    if not t1 > t0 or not step > 0:
        raise ValueError("window must be increasing and step positive")
    t = t0 + step * np.arange(int(math.floor((t1 - t0) / step + 1e-9)) + 1)
    frame = frames.enu_frame_at(user)
    propagate(rec, t0)  # stale / decayed checks
    propagate(rec, float(t[-1]))
    r, v, a = (c[:, 0] for c in SimplifiedPropagator([rec]).states(t))
    geom = line_of_sight(r, v, a, frame.origin_ecef, np.zeros(3))
    el = np.arcsin(np.clip(geom.u @ frame.rotation_enu_to_ecef[:, 2], -1.0, 1.0))
    if not np.any(el >= mask):
        raise NeverVisible(f"satellite {rec.norad_id} never rises above {math.degrees(mask):.1f} deg in the window")
    return Signature(rec.norad_id, t, -carrier.scale * geom.rho_dot, -carrier.scale * geom.rho_ddot, el)


def _score(trace: RidgeTrace, cand: Signature, t0: float, alpha_hat: float, w_f: float, w_alpha: float):
    ta = t0 + trace.t
    res = trace.doppler - np.interp(ta, cand.t, cand.f_d)
    rms = float(np.sqrt(np.mean((res - res.mean()) ** 2)))
    t_mid = 0.5 * (ta[0] + ta[-1])
    d_alpha = abs(alpha_hat - float(np.interp(t_mid, cand.t, cand.alpha)))
    return w_f * rms + w_alpha * d_alpha, rms, d_alpha, t_mid


def associate(trace: RidgeTrace, candidates, t0: float = 0.0, w_f: float = W_F, w_alpha: float = W_ALPHA,
              threshold: float = ALPHA_THRESHOLD) -> AssociationResult:
    """Best-matching candidate signature for a ridge trace.

    Trace times are seconds after ``t0``; candidate times are absolute.
    Cost is w_f * RMS(offset-removed Doppler residual) + w_alpha * |delta
    alpha| at the trace midpoint; exact ties go to the lower norad id.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidates to associate against")
    alpha_hat, alpha_sigma = estimate_doppler_rate(trace)
    best = None
    for cand in sorted(candidates, key=lambda c: c.sat_id):
        cost, rms, d_alpha, t_mid = _score(trace, cand, t0, alpha_hat, w_f, w_alpha)
        if best is None or cost < best[0]:
            best = (cost, cand.sat_id, rms, d_alpha, t_mid)
    cost, sat_id, rms, d_alpha, t_mid = best
    return AssociationResult(int(sat_id), d_alpha, rms, bool(d_alpha <= threshold), alpha_hat, alpha_sigma,
                             cost, t_mid)

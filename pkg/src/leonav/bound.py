"""Recursive posterior Cramer-Rao bound for the 9D navigation state.

Additive-Gaussian recursion evaluated along the truth trajectory:

    J_{k+1} = (Q + F J_k^{-1} F^T)^{-1} + sum_i H_i^T R_i^{-1} H_i

with F and H from the same numerical Jacobians the filter uses.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import groupby

import numpy as np
from scipy import linalg

from . import fusion
from . import observables as obs
from .errors import SingularInformation
from .inertial import ImuNoiseModel


@dataclass(frozen=True)
class BoundState:
    J: np.ndarray
    t: float = 0.0


def sym_inverse(A, allow_jitter=True):
    """Inverse of a symmetric PSD matrix via Cholesky.

    On failure retries once with 1e-12 * trace(A) added to the diagonal.
    Returns None if that fails too or jitter is not allowed.
    """
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    try:
        c = linalg.cho_factor(A)
        return linalg.cho_solve(c, np.eye(n))
    except linalg.LinAlgError:
        if not allow_jitter:
            return None
    jitter = 1e-12 * max(np.trace(A), np.finfo(float).tiny)
    try:
        c = linalg.cho_factor(A + jitter * np.eye(n))
        return linalg.cho_solve(c, np.eye(n))
    except linalg.LinAlgError:
        return None


def measurement_information(H_list, R_list, n):
    info = np.zeros((n, n))
    for H, R in zip(H_list, R_list):
        H = np.atleast_2d(H)
        info += H.T @ H / float(R)
    return info


def pcrb_step(b: BoundState, F, Q, H_list=(), R_list=(), dt: float = 0.0) -> BoundState:
    """One prediction + measurement step of the information recursion."""
    F = np.asarray(F, dtype=float)
    n = F.shape[0]
    H_list, R_list = list(H_list), list(R_list)
    if any(not float(r) > 0.0 for r in R_list):
        raise ValueError("measurement variances must be positive")
    J_inv = sym_inverse(b.J, allow_jitter=bool(H_list))
    if J_inv is None:
        raise SingularInformation("information matrix is singular and no measurements regularize it")
    prior = sym_inverse(np.asarray(Q) + F @ J_inv @ F.T)
    if prior is None:
        raise SingularInformation("predicted covariance is singular")
    J = prior + measurement_information(H_list, R_list, n)
    return BoundState(0.5 * (J + J.T), b.t + dt)


def absorb(b: BoundState, H_list, R_list) -> BoundState:
    """Measurement-only step (no time propagation)."""
    J = b.J + measurement_information(H_list, R_list, b.J.shape[0])
    return BoundState(0.5 * (J + J.T), b.t)


@dataclass
class BoundResult:
    times: np.ndarray
    covariances: np.ndarray  # J^-1 per epoch

    def _block(self, sl):
        return np.sqrt(np.einsum("kii->k", self.covariances[:, sl, sl]))

    @property
    def pos(self):
        return self._block(slice(0, 3))

    @property
    def vel(self):
        return self._block(slice(3, 6))

    @property
    def att(self):
        return self._block(slice(6, 9))

    def aggregate(self):
        """RMS over epochs of the per-epoch bounds, like the RMSE aggregate."""
        return tuple(float(np.sqrt(np.mean(b**2))) for b in (self.pos, self.vel, self.att))


def pcrb_trajectory(truth, imu, schedule, sat_provider, frame, J0, Q: ImuNoiseModel,
                    carrier: obs.BeaconCarrier = obs.BeaconCarrier()) -> BoundResult:
    """Bound along ``truth`` for the measurements listed in ``schedule``.

    ``truth`` holds NavState epochs on the IMU grid, ``imu`` the nominal
    (noise-free) samples driving each interval, ``schedule`` the measurement
    list whose timestamps, kinds, satellites and sigmas define the
    information; measured values are ignored.
    """
    truth = list(truth)
    groups = {t: list(g) for t, g in groupby(sorted(schedule, key=obs.Measurement.sort_key), key=lambda m: round(m.t * 1e6))}

    def info_at(state):
        ms = groups.get(round(state.t * 1e6), [])
        if not ms:
            return [], []
        order, _, H = fusion.measurement_jacobians(state.as_vector(), frame, ms, sat_provider, state.t, carrier)
        return list(H), [m.sigma**2 for m in order]

    H0, R0 = info_at(truth[0])
    b = absorb(BoundState(np.asarray(J0, dtype=float), truth[0].t), H0, R0)
    covs = [sym_inverse(b.J)]
    for k in range(1, len(truth)):
        prev, cur = truth[k - 1], truth[k]
        dt = cur.t - prev.t
        F, G = fusion.transition_jacobians(prev.as_vector(), imu[k - 1], dt)
        Qd = fusion.process_noise(G, Q)
        H, R = info_at(cur)
        b = pcrb_step(b, F, Qd, H, R, dt)
        covs.append(sym_inverse(b.J))
    return BoundResult(np.array([s.t for s in truth]), np.array(covs))

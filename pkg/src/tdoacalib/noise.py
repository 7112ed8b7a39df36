"""TDOA noise level estimation from measurements on a known configuration.

When ground truth geometry and emission times are available (e.g. on a
calibration rig), the geometric part of each TDOA model can be removed
exactly, leaving a linear-in-clock-parameters signal plus measurement
noise:

* inter-event rows reduce to ``delta_i * dt_j + w``; the drift is fitted
  per channel and the pooled residual SD estimates the inter-event noise
  level,
* inter-microphone rows reduce to ``tau_i1 + delta_i1 * t_j + w``; a
  two-parameter straight-line fit per channel leaves the
  inter-microphone noise level.

Residual sums of squares are divided by the sample count minus the
number of fitted parameters (1 per channel, resp. 2 per channel), so a
noise-free input yields exactly zero.

The estimated pair (sigma_s, sigma_m) is classified into overlapping
working-regime labels used to pick experiment operating points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import (
    EventTrajectory,
    MeasurementSet,
    MicrophoneState,
    PhysicalConstants,
    ranges_matrix,
)

# Float cancellation leaves ~1e-16 s of residue on noise-free inputs; that
# must read as an exact zero.  Physical TDOA noise sits far above this.
_ZERO_FLOOR = 1e-12


def _snap_zero(sigma: float) -> float:
    return 0.0 if sigma < _ZERO_FLOOR else sigma


@dataclass
class SigmaSEstimate:
    """Inter-event noise SD plus the per-channel drift by-product."""

    sigma: float
    drift_hat: np.ndarray
    dof: int


@dataclass
class SigmaMEstimate:
    """Inter-microphone noise SD plus per-channel clock by-products."""

    sigma: float
    offset_hat: np.ndarray
    drift_rel_hat: np.ndarray
    dof: int


@dataclass
class NoiseEstimate:
    """Combined estimate over both TDOA families."""

    sigma_s: float
    sigma_m: float
    drift_hat: np.ndarray
    offset_hat: np.ndarray
    drift_rel_hat: np.ndarray
    dof_s: int
    dof_m: int
    cases: list[str]


def fit_drift(intervals: np.ndarray, values: np.ndarray) -> float:
    """Drift estimate for one channel: ``sum(values) / sum(intervals)``.

    Unbiased for ``values = drift * intervals + noise`` with zero-mean
    noise.  With equal intervals it reduces to ``mean(values)/dt``.
    """
    intervals = np.asarray(intervals, dtype=float)
    values = np.asarray(values, dtype=float)
    return float(values.sum() / intervals.sum())


def fit_offset_drift(times: np.ndarray, values: np.ndarray):
    """Two-parameter line fit ``values ~ offset + drift * times``.

    Solves the 2x2 normal equations directly; needs at least 3 samples
    so one degree of freedom is left for the residual.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    n = times.size
    if n < 3:
        raise ValueError(f"need at least 3 samples to fit offset and drift, got {n}")
    st = times.sum()
    normal = np.array([[n, st], [st, float(times @ times)]])
    rhs = np.array([values.sum(), float(times @ values)])
    offset, drift = np.linalg.solve(normal, rhs)
    return float(offset), float(drift)


def _truth_arrays(mics: Sequence[MicrophoneState], traj: EventTrajectory):
    positions = np.array([m.position for m in mics], dtype=float)
    return ranges_matrix(positions, traj.positions)


def estimate_sigma_s(
    measurements: MeasurementSet,
    mics: Sequence[MicrophoneState],
    traj: EventTrajectory,
    consts: PhysicalConstants,
) -> SigmaSEstimate:
    """Inter-event TDOA noise SD from truth-compensated residuals."""
    if measurements.tdoa_s is None:
        raise ValueError("measurement set has no inter-event TDOA block")
    if traj.event_count < 3:
        raise ValueError("need at least 3 events (2 samples per channel)")
    r = _truth_arrays(mics, traj)
    dt = traj.intervals
    reduced = (
        measurements.tdoa_s
        - (r[:, 1:] - r[:, :-1]) / consts.sound_speed
        - dt[None, :]
    )
    drift_hat = reduced.sum(axis=1) / dt.sum()
    resid = reduced - drift_hat[:, None] * dt[None, :]
    n, km1 = reduced.shape
    dof = n * km1 - n
    sigma = _snap_zero(float(np.sqrt((resid**2).sum() / dof)))
    return SigmaSEstimate(sigma=sigma, drift_hat=drift_hat, dof=dof)


def estimate_sigma_m(
    measurements: MeasurementSet,
    mics: Sequence[MicrophoneState],
    traj: EventTrajectory,
    consts: PhysicalConstants,
) -> SigmaMEstimate:
    """Inter-microphone TDOA noise SD from truth-compensated residuals."""
    if traj.event_count < 3:
        raise ValueError("need at least 3 events for the per-channel line fit")
    r = _truth_arrays(mics, traj)
    times = traj.emission_times
    reduced = measurements.tdoa_m - (r[1:, :] - r[0:1, :]) / consts.sound_speed
    n_rows, k = reduced.shape
    offset_hat = np.empty(n_rows)
    drift_rel_hat = np.empty(n_rows)
    for i in range(n_rows):
        offset_hat[i], drift_rel_hat[i] = fit_offset_drift(times, reduced[i])
    resid = reduced - offset_hat[:, None] - drift_rel_hat[:, None] * times[None, :]
    dof = n_rows * k - 2 * n_rows
    sigma = _snap_zero(float(np.sqrt((resid**2).sum() / dof)))
    return SigmaMEstimate(
        sigma=sigma, offset_hat=offset_hat, drift_rel_hat=drift_rel_hat, dof=dof
    )


def classify_noise_case(sigma_s: float, sigma_m: float) -> list[str]:
    """All matching working-regime labels for an estimated noise pair.

    A: both below 1e-4 s.  B: both in (1e-4, 1.5e-4).  C: both in
    (1.5e-4, 5e-4).  D: the two levels agree within 1e-5 s.  E: always.
    Labels overlap on purpose; every matching one is returned, sorted.
    """
    cases = []
    if sigma_s < 1e-4 and sigma_m < 1e-4:
        cases.append("A")
    if 1e-4 < sigma_s < 1.5e-4 and 1e-4 < sigma_m < 1.5e-4:
        cases.append("B")
    if 1.5e-4 < sigma_s < 5e-4 and 1.5e-4 < sigma_m < 5e-4:
        cases.append("C")
    if abs(sigma_s - sigma_m) < 1e-5:
        cases.append("D")
    cases.append("E")
    return cases


def estimate_noise(
    measurements: MeasurementSet,
    mics: Sequence[MicrophoneState],
    traj: EventTrajectory,
    consts: PhysicalConstants,
) -> NoiseEstimate:
    """Both noise levels plus their working-regime classification."""
    est_s = estimate_sigma_s(measurements, mics, traj, consts)
    est_m = estimate_sigma_m(measurements, mics, traj, consts)
    return NoiseEstimate(
        sigma_s=est_s.sigma,
        sigma_m=est_m.sigma,
        drift_hat=est_s.drift_hat,
        offset_hat=est_m.offset_hat,
        drift_rel_hat=est_m.drift_rel_hat,
        dof_s=est_s.dof,
        dof_m=est_m.dof,
        cases=classify_noise_case(est_s.sigma, est_m.sigma),
    )

"""Fisher information and Cramer-Rao lower bounds for the calibration problem.

The Fisher information of the Gaussian measurement model is
``F = J^T W^-1 J`` with the Jacobian evaluated at the true state; its
inverse bounds the covariance of any unbiased estimator.  Because the
state lives in the event-anchored frame while accuracy is reported in
the microphone-anchored frame, the microphone sub-block of the bound is
pushed through the affine frame action ``A C A^T``.

A scalar accuracy indicator condenses the bound per parameter family:
``D = sqrt(sum_{i=2}^N D_i / (N-1))`` where ``D_i`` is the trace of
microphone i's position block for location, and the single diagonal
entry for offset and drift.  Microphone 1 is excluded because the
microphone-anchored gauge pins it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .frames import (
    FrameTransform,
    SoundFrameState,
    compute_frame_transform,
    pack_state,
)
from .model import (
    MODE_HYBRID,
    MODE_TDOA_M_ONLY,
    EventTrajectory,
    MeasurementSet,
    MicrophoneState,
    PhysicalConstants,
    measurement_matrices,
)
from .solver import CalibrationProblem, _internal_vector, _jacobian, measurement_sigmas

CONDITION_LIMIT = 1e12
"""Condition number beyond which the Fisher matrix is treated as degenerate."""


@dataclass
class CrlbReport:
    """Bound matrices plus the condensed per-family indicators."""

    mode: str
    fisher: np.ndarray
    crlb_sound: np.ndarray
    crlb_mic: np.ndarray
    d_loc: float
    d_off: float
    d_dri: float
    degenerate: bool


def fisher_information(problem: CalibrationProblem, truth: SoundFrameState) -> np.ndarray:
    """``J^T W^-1 J`` at the true state, in the problem's parameterization."""
    x = _internal_vector(problem, truth)
    jw = _jacobian(problem, x) / measurement_sigmas(problem)[:, None]
    return jw.T @ jw


def crlb_sound_frame(fisher: np.ndarray, condition_limit: float = CONDITION_LIMIT):
    """Invert the Fisher matrix, falling back to a pseudo-inverse.

    Returns ``(crlb, degenerate)``.  ``degenerate`` is set when the
    condition number exceeds ``condition_limit`` (or the matrix is
    outright singular); the pseudo-inverse then bounds only the
    observable subspace and downstream consumers must carry the flag.
    """
    fisher = np.asarray(fisher, dtype=float)
    sv = np.linalg.svd(fisher, compute_uv=False)
    degenerate = bool(sv[-1] <= 0.0 or sv[0] / sv[-1] > condition_limit)
    if degenerate:
        return np.linalg.pinv(fisher, hermitian=True), True
    return np.linalg.inv(fisher), False


def crlb_mic_frame(crlb_mic_block: np.ndarray, transform: FrameTransform) -> np.ndarray:
    """Push the microphone sub-block of the bound into the mic frame.

    ``crlb_mic_block`` is the leading microphone-parameter block of the
    event-anchored bound; the congruence ``A C A^T`` re-expresses it for
    the microphone-anchored parameters.
    """
    a = transform.affine_matrix
    if crlb_mic_block.shape != (a.shape[1], a.shape[1]):
        raise ValueError(
            f"bound block {crlb_mic_block.shape} does not match the "
            f"affine action {a.shape}"
        )
    return a @ crlb_mic_block @ a.T


def d_crlb(crlb_mic: np.ndarray, n_mics: int) -> dict:
    """Condensed accuracy indicator per parameter family.

    ``sqrt(mean over microphones 2..N)`` of the position-block trace
    (location), offset diagonal and drift diagonal of the mic-frame
    bound.
    """
    expected = 5 * n_mics - 2
    if crlb_mic.shape != (expected, expected):
        raise ValueError(
            f"mic-frame bound for N={n_mics} must be {expected}x{expected}, "
            f"got {crlb_mic.shape}"
        )
    diag = np.diag(crlb_mic)
    loc = off = dri = 0.0
    for i in range(1, n_mics):
        base = 3 + 5 * (i - 1)
        loc += float(np.sum(diag[base : base + 3]))
        off += float(diag[base + 3])
        dri += float(diag[base + 4])
    denom = n_mics - 1
    return {
        "loc": float(np.sqrt(loc / denom)),
        "off": float(np.sqrt(off / denom)),
        "dri": float(np.sqrt(dri / denom)),
    }


def compute_crlb_report(
    mics: Sequence[MicrophoneState],
    traj: EventTrajectory,
    consts: PhysicalConstants,
    sigma_tdoa: float,
    sigma_odo: float,
    mode: str = MODE_HYBRID,
) -> CrlbReport:
    """Full bound pipeline for a known configuration.

    Builds the Fisher matrix at the truth, inverts it, pushes the
    microphone block into the frame anchored on the true microphone
    positions and condenses the indicators.  The configuration must sit
    in the event-anchored gauge.
    """
    if not (sigma_tdoa > 0 and sigma_odo > 0):
        raise ValueError("noise SDs must be positive for a finite Fisher matrix")
    ts, tm, odo = measurement_matrices(mics, traj, consts)
    measurements = MeasurementSet(
        tdoa_s=ts if mode == MODE_HYBRID else None,
        tdoa_m=tm,
        odometry=odo,
        sigma_tdoa=sigma_tdoa,
        sigma_odo=sigma_odo,
    )
    problem = CalibrationProblem(measurements, traj.intervals, consts, mode=mode)
    truth = pack_state(mics, traj)
    fisher = fisher_information(problem, truth)
    crlb_sound, degenerate = crlb_sound_frame(fisher)
    mic_dim = problem.layout.mic_dim
    transform = compute_frame_transform(
        np.array([m.position for m in mics]),
        relative_drifts=mode == MODE_TDOA_M_ONLY,
    )
    crlb_mic = crlb_mic_frame(crlb_sound[:mic_dim, :mic_dim], transform)
    d = d_crlb(crlb_mic, len(mics))
    return CrlbReport(
        mode=mode,
        fisher=fisher,
        crlb_sound=crlb_sound,
        crlb_mic=crlb_mic,
        d_loc=d["loc"],
        d_off=d["off"],
        d_dri=d["dri"],
        degenerate=degenerate,
    )

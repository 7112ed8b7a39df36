"""Measurement models for asynchronous microphone-array calibration.

A moving speaker emits a sequence of K sound events that are recorded by
N static microphones.  Each microphone i has an unknown position ``x_i``
and an unsynchronized clock described by a start-up offset ``tau_i``
(seconds) and a drift rate ``delta_i`` (dimensionless sampling-rate
mismatch, acting as a temporal scale factor).  Event j is emitted at
position ``s_j``; emission times follow from the inter-event intervals
``dt_j`` with the first emission at time zero.

Three measurement families are modelled:

* inter-event TDOA (``tdoa_s``): difference of the arrival times of two
  adjacent events within a single channel,
* inter-microphone TDOA (``tdoa_m``): difference of the arrival times of
  one event between channel i and the reference channel (index 0),
* odometry: displacement between consecutive event positions, reported
  in the same frame as the positions themselves.

Arrival times come in two flavours.  The exact clock model scales the
whole arrival expression by ``1 + delta``; the simplified model applies
the drift to the emission time only, which is accurate to
``|delta| * (range/c + |tau|)`` and is the model the estimators and the
simulator share.

Everything here is pure; :func:`simulate_measurements` draws noise from
an explicitly supplied generator and is the only stochastic entry point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_SOUND_SPEED = 343.0
"""Speed of sound in m/s used when no constants are supplied (dry air, ~20 C)."""

MAX_DRIFT = 1e-2
"""Sanity bound on |delta|; real hardware mismatch is orders of magnitude below."""

MODE_HYBRID = "hybrid"
MODE_TDOA_M_ONLY = "tdoa_m_only"
MODES = (MODE_HYBRID, MODE_TDOA_M_ONLY)


def _as_vector3(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


def as_generator(rng) -> np.random.Generator:
    """Accept either a seed or a Generator and return a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class PhysicalConstants:
    """Physical constants shared by every measurement model.

    Attributes
    ----------
    sound_speed : float
        Propagation speed in m/s.  Must be positive.
    """

    sound_speed: float = DEFAULT_SOUND_SPEED

    def __post_init__(self):
        if not (np.isfinite(self.sound_speed) and self.sound_speed > 0):
            raise ValueError(f"sound_speed must be positive, got {self.sound_speed}")


@dataclass
class MicrophoneState:
    """Position and clock parameters of one microphone.

    Attributes
    ----------
    position : (3,) ndarray
        Location in meters.
    offset : float
        Clock start-up offset in seconds.
    drift : float
        Dimensionless clock drift rate.  |drift| must stay below
        :data:`MAX_DRIFT`; values near 1e-4 are typical.
    """

    position: np.ndarray
    offset: float = 0.0
    drift: float = 0.0

    def __post_init__(self):
        self.position = _as_vector3(self.position, "position")
        self.offset = float(self.offset)
        self.drift = float(self.drift)
        if not np.isfinite(self.offset):
            raise ValueError("offset must be finite")
        if not (np.isfinite(self.drift) and abs(self.drift) <= MAX_DRIFT):
            raise ValueError(
                f"drift must satisfy |drift| <= {MAX_DRIFT:g}, got {self.drift}"
            )


@dataclass
class EventTrajectory:
    """Ordered sound-event positions plus the emission intervals.

    Attributes
    ----------
    positions : (K, 3) ndarray
        Event locations in meters, in emission order.
    intervals : (K-1,) ndarray
        Strictly positive time gaps between consecutive emissions, in
        seconds.  Emission times are their cumulative sum with the first
        event at time zero.

    At least four events are required; the anchored event frame fixes
    six coordinates across the first three events and needs a fourth to
    carry free z information.
    """

    positions: np.ndarray
    intervals: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.intervals = np.asarray(self.intervals, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError(
                f"positions must have shape (K, 3), got {self.positions.shape}"
            )
        k = self.positions.shape[0]
        if k < 4:
            raise ValueError(f"need at least 4 events, got {k}")
        if self.intervals.shape != (k - 1,):
            raise ValueError(
                f"intervals must have shape ({k - 1},), got {self.intervals.shape}"
            )
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")
        if not np.all(np.isfinite(self.intervals)) or np.any(self.intervals <= 0):
            raise ValueError("intervals must be finite and strictly positive")

    @property
    def event_count(self) -> int:
        return self.positions.shape[0]

    @property
    def emission_times(self) -> np.ndarray:
        """Emission times (K,), first event at time zero."""
        return np.concatenate(([0.0], np.cumsum(self.intervals)))


@dataclass
class MeasurementSet:
    """One batch of measurements with their noise standard deviations.

    Attributes
    ----------
    tdoa_s : (N, K-1) ndarray or None
        Inter-event TDOA per channel; entry (i, j) pairs events j and
        j+1.  May be None for data collected for inter-microphone-only
        processing.
    tdoa_m : (N-1, K) ndarray
        Inter-microphone TDOA; row i-1 holds channel i against the
        reference channel 0.
    odometry : (K-1, 3) ndarray
        Measured displacement between consecutive events, in meters.
    sigma_tdoa : float
        Noise SD shared by both TDOA families, in seconds.
    sigma_odo : float
        Noise SD per odometry coordinate, in meters.
    sigma_tdoa_s, sigma_tdoa_m : float or None
        Optional per-family overrides; default to ``sigma_tdoa``.
    """

    tdoa_s: np.ndarray | None
    tdoa_m: np.ndarray
    odometry: np.ndarray
    sigma_tdoa: float
    sigma_odo: float
    sigma_tdoa_s: float | None = None
    sigma_tdoa_m: float | None = None

    def __post_init__(self):
        self.tdoa_m = np.asarray(self.tdoa_m, dtype=float)
        self.odometry = np.asarray(self.odometry, dtype=float)
        if self.tdoa_m.ndim != 2:
            raise ValueError("tdoa_m must be a 2-d array")
        n_minus_1, k = self.tdoa_m.shape
        if n_minus_1 < 1 or k < 2:
            raise ValueError(f"tdoa_m shape {self.tdoa_m.shape} is too small")
        if self.odometry.shape != (k - 1, 3):
            raise ValueError(
                f"odometry must have shape ({k - 1}, 3), got {self.odometry.shape}"
            )
        if self.tdoa_s is not None:
            self.tdoa_s = np.asarray(self.tdoa_s, dtype=float)
            if self.tdoa_s.shape != (n_minus_1 + 1, k - 1):
                raise ValueError(
                    f"tdoa_s must have shape ({n_minus_1 + 1}, {k - 1}), "
                    f"got {self.tdoa_s.shape}"
                )
        for name in ("sigma_tdoa", "sigma_odo"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be nonnegative, got {value}")

    @property
    def n_mics(self) -> int:
        return self.tdoa_m.shape[0] + 1

    @property
    def n_events(self) -> int:
        return self.tdoa_m.shape[1]

    @property
    def effective_sigma_s(self) -> float:
        return self.sigma_tdoa if self.sigma_tdoa_s is None else self.sigma_tdoa_s

    @property
    def effective_sigma_m(self) -> float:
        return self.sigma_tdoa if self.sigma_tdoa_m is None else self.sigma_tdoa_m


def toa_exact(
    mic: MicrophoneState,
    event_index: int,
    traj: EventTrajectory,
    consts: PhysicalConstants,
) -> float:
    """Arrival time under the exact clock model.

    The whole physical arrival expression is read through the drifting
    clock: ``(1 + delta) * (range/c + tau + t_j)``.

    ``event_index`` is zero-based.
    """
    t = traj.emission_times[event_index]
    rng = float(np.linalg.norm(mic.position - traj.positions[event_index]))
    return (1.0 + mic.drift) * (rng / consts.sound_speed + mic.offset + t)


def toa_simplified(
    mic: MicrophoneState,
    event_index: int,
    traj: EventTrajectory,
    consts: PhysicalConstants,
) -> float:
    """Arrival time with drift applied to the emission time only.

    ``range/c + tau + (1 + delta) * t_j``.  Differs from
    :func:`toa_exact` by at most ``|delta| * (range/c + |tau|)``, which
    is negligible against typical TDOA noise; this is the model all
    estimators in this package linearize.
    """
    t = traj.emission_times[event_index]
    rng = float(np.linalg.norm(mic.position - traj.positions[event_index]))
    return rng / consts.sound_speed + mic.offset + (1.0 + mic.drift) * t


def tdoa_s_model(
    mic: MicrophoneState,
    pair_index: int,
    traj: EventTrajectory,
    consts: PhysicalConstants,
) -> float:
    """Noise-free inter-event TDOA of events (j, j+1) on one channel.

    Equals ``toa_simplified(j+1) - toa_simplified(j)``; the channel
    offset cancels, the drift survives on the emission interval:
    ``(||x - s_{j+1}|| - ||x - s_j||)/c + (1 + delta) * dt_j``.
    """
    r_next = float(np.linalg.norm(mic.position - traj.positions[pair_index + 1]))
    r_cur = float(np.linalg.norm(mic.position - traj.positions[pair_index]))
    dt = traj.intervals[pair_index]
    return (r_next - r_cur) / consts.sound_speed + (1.0 + mic.drift) * dt


def tdoa_m_model(
    mic: MicrophoneState,
    reference: MicrophoneState,
    event_index: int,
    traj: EventTrajectory,
    consts: PhysicalConstants,
) -> float:
    """Noise-free inter-microphone TDOA of one event.

    ``(||x_i - s_j|| - ||x_ref - s_j||)/c + (tau_i - tau_ref)
    + (delta_i - delta_ref) * t_j``.  Only clock differences enter, so a
    common shift of all offsets or all drifts leaves the value unchanged.
    """
    s = traj.positions[event_index]
    t = traj.emission_times[event_index]
    r_i = float(np.linalg.norm(mic.position - s))
    r_ref = float(np.linalg.norm(reference.position - s))
    return (
        (r_i - r_ref) / consts.sound_speed
        + (mic.offset - reference.offset)
        + (mic.drift - reference.drift) * t
    )


def odometry_model(traj: EventTrajectory, step_index: int) -> np.ndarray:
    """Noise-free displacement from event ``step_index`` to the next."""
    return traj.positions[step_index + 1] - traj.positions[step_index]


def ranges_matrix(mic_positions: np.ndarray, event_positions: np.ndarray) -> np.ndarray:
    """Pairwise mic-to-event distances, shape (N, K)."""
    diff = mic_positions[:, None, :] - event_positions[None, :, :]
    return np.linalg.norm(diff, axis=2)


def tdoa_s_matrix(
    mic_positions: np.ndarray,
    drifts: np.ndarray,
    event_positions: np.ndarray,
    intervals: np.ndarray,
    sound_speed: float,
) -> np.ndarray:
    """Vectorized inter-event TDOA model, shape (N, K-1)."""
    r = ranges_matrix(mic_positions, event_positions)
    return (r[:, 1:] - r[:, :-1]) / sound_speed + (
        (1.0 + np.asarray(drifts))[:, None] * np.asarray(intervals)[None, :]
    )


def tdoa_m_matrix(
    mic_positions: np.ndarray,
    offsets: np.ndarray,
    drifts: np.ndarray,
    event_positions: np.ndarray,
    intervals: np.ndarray,
    sound_speed: float,
) -> np.ndarray:
    """Vectorized inter-microphone TDOA model, shape (N-1, K).

    Row i-1 holds channel i against channel 0.
    """
    offsets = np.asarray(offsets, dtype=float)
    drifts = np.asarray(drifts, dtype=float)
    r = ranges_matrix(mic_positions, event_positions)
    times = np.concatenate(([0.0], np.cumsum(intervals)))
    rel_off = offsets[1:] - offsets[0]
    rel_dri = drifts[1:] - drifts[0]
    return (
        (r[1:, :] - r[0:1, :]) / sound_speed
        + rel_off[:, None]
        + rel_dri[:, None] * times[None, :]
    )


def odometry_matrix(event_positions: np.ndarray) -> np.ndarray:
    """Vectorized displacement model, shape (K-1, 3)."""
    return np.diff(np.asarray(event_positions, dtype=float), axis=0)


def _states_to_arrays(mics: Sequence[MicrophoneState]):
    positions = np.array([m.position for m in mics], dtype=float)
    offsets = np.array([m.offset for m in mics], dtype=float)
    drifts = np.array([m.drift for m in mics], dtype=float)
    return positions, offsets, drifts


def measurement_matrices(
    mics: Sequence[MicrophoneState],
    traj: EventTrajectory,
    consts: PhysicalConstants,
):
    """Noise-free (tdoa_s, tdoa_m, odometry) for a full configuration."""
    positions, offsets, drifts = _states_to_arrays(mics)
    ts = tdoa_s_matrix(
        positions, drifts, traj.positions, traj.intervals, consts.sound_speed
    )
    tm = tdoa_m_matrix(
        positions, offsets, drifts, traj.positions, traj.intervals, consts.sound_speed
    )
    odo = odometry_matrix(traj.positions)
    return ts, tm, odo


def simulate_measurements(
    mics: Sequence[MicrophoneState],
    traj: EventTrajectory,
    consts: PhysicalConstants,
    sigma_tdoa: float,
    sigma_odo: float,
    rng,
) -> MeasurementSet:
    """Draw one noisy measurement batch from a known configuration.

    Gaussian noise is added i.i.d. per entry: ``sigma_tdoa`` (seconds)
    on every TDOA entry of both families and ``sigma_odo`` (meters) on
    every odometry coordinate.  ``rng`` may be a seed or a Generator;
    results are reproducible for a given seed because the three noise
    blocks are drawn in a fixed order.
    """
    if len(mics) < 2:
        raise ValueError(f"need at least 2 microphones, got {len(mics)}")
    gen = as_generator(rng)
    ts, tm, odo = measurement_matrices(mics, traj, consts)
    ts = ts + gen.normal(0.0, sigma_tdoa, size=ts.shape)
    tm = tm + gen.normal(0.0, sigma_tdoa, size=tm.shape)
    odo = odo + gen.normal(0.0, sigma_odo, size=odo.shape)
    return MeasurementSet(
        tdoa_s=ts,
        tdoa_m=tm,
        odometry=odo,
        sigma_tdoa=sigma_tdoa,
        sigma_odo=sigma_odo,
    )

"""State-vector packing and the transform between the two anchored frames.

The joint calibration state is ambiguous up to a rigid motion, a global
clock shift, and (for absolute drifts) a common drift shift, so it is
expressed in one of two gauge-fixed frames:

* event-anchored frame ("sound frame"): event 1 at the origin, event 2
  on the +x axis, event 3 in the x-y plane with y >= 0.  Clock offsets
  are stored relative to microphone 1; drifts are absolute.
* microphone-anchored frame ("mic frame"): microphones 1..3 pinned the
  same way; both offsets and drifts are stored relative to microphone 1.

The map between them is affine in the stacked microphone parameters:
positions rotate and translate, relative offsets pass through, absolute
drifts collapse to differences.  :func:`compute_frame_transform` builds
the rotation/translation pair together with that affine action.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import DegenerateGeometryError, FrameGaugeError
from .model import EventTrajectory, MicrophoneState

GAUGE_ATOL = 1e-9
"""Tolerance used when checking that anchored coordinates are zero."""

_COLLINEAR_TOL = 1e-9


class StateLayout:
    """Column bookkeeping for the stacked calibration parameter vector.

    With absolute drifts (joint estimation from both TDOA families)::

        [x_1 (3), d_1, x_2 (3), t_21, d_2, ..., x_N (3), t_N1, d_N,
         (s_2)_x, (s_3)_x, (s_3)_y, s_4 (3), ..., s_K (3)]

    which is 5N-1 microphone entries plus 3K-6 source entries.  With
    relative drifts (inter-microphone-only estimation, where a common
    drift is unobservable) microphone 1 contributes only its position
    and every other microphone stores ``d_i - d_1``::

        [x_1 (3), x_2 (3), t_21, d_21, ..., x_N (3), t_N1, d_N1, ...]

    for 5N-2 microphone entries.  Event coordinates pinned by the gauge
    (all of s_1, the y/z of s_2, the z of s_3) are never stored.

    Column index arrays use -1 for coordinates that are not part of the
    vector.
    """

    def __init__(self, n_mics: int, n_events: int, relative_drifts: bool = False):
        if n_mics < 2:
            raise ValueError(f"need at least 2 microphones, got {n_mics}")
        if n_events < 4:
            raise ValueError(f"need at least 4 events, got {n_events}")
        self.n_mics = n_mics
        self.n_events = n_events
        self.relative_drifts = relative_drifts

        pos = np.full((n_mics, 3), -1, dtype=int)
        tau = np.full(n_mics, -1, dtype=int)
        dri = np.full(n_mics, -1, dtype=int)
        col = 0
        for i in range(n_mics):
            pos[i] = (col, col + 1, col + 2)
            col += 3
            if i == 0:
                if not relative_drifts:
                    dri[0] = col
                    col += 1
            else:
                tau[i] = col
                dri[i] = col + 1
                col += 2
        self.mic_dim = col

        src = np.full((n_events, 3), -1, dtype=int)
        src[1, 0] = col
        src[2, 0] = col + 1
        src[2, 1] = col + 2
        col += 3
        for j in range(3, n_events):
            src[j] = (col, col + 1, col + 2)
            col += 3
        self.source_dim = col - self.mic_dim
        self.dim = col

        self.position_cols = pos
        self.tau_cols = tau
        self.drift_cols = dri
        self.source_cols = src

    def column_kinds(self) -> np.ndarray:
        """Per-column label: 'pos', 'tau', 'dri' or 'src'."""
        kinds = np.empty(self.dim, dtype=object)
        kinds[self.position_cols.ravel()] = "pos"
        kinds[self.tau_cols[self.tau_cols >= 0]] = "tau"
        kinds[self.drift_cols[self.drift_cols >= 0]] = "dri"
        kinds[self.source_cols[self.source_cols >= 0]] = "src"
        return kinds

    def pack(
        self,
        mic_positions: np.ndarray,
        offsets: np.ndarray,
        drifts: np.ndarray,
        event_positions: np.ndarray,
    ) -> np.ndarray:
        """Assemble the parameter vector from plain arrays.

        Offsets are stored relative to microphone 1 regardless of input;
        drifts are stored as given (absolute layout) or relative to
        microphone 1 (relative layout).
        """
        x = np.zeros(self.dim)
        x[self.position_cols] = np.asarray(mic_positions, dtype=float)
        offsets = np.asarray(offsets, dtype=float)
        drifts = np.asarray(drifts, dtype=float)
        x[self.tau_cols[1:]] = offsets[1:] - offsets[0]
        if self.relative_drifts:
            x[self.drift_cols[1:]] = drifts[1:] - drifts[0]
        else:
            x[self.drift_cols] = drifts
        src = np.asarray(event_positions, dtype=float)
        mask = self.source_cols >= 0
        x[self.source_cols[mask]] = src[mask]
        return x

    def unpack(self, x: np.ndarray):
        """Split the vector into (positions, offsets, drifts, events).

        Offset 0 is returned as exactly 0 (it is the reference); drift 0
        is the stored absolute value, or exactly 0 in the relative
        layout.  Anchored event coordinates come back as exact zeros.
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"state vector must have shape ({self.dim},), got {x.shape}")
        positions = x[self.position_cols]
        offsets = np.zeros(self.n_mics)
        offsets[1:] = x[self.tau_cols[1:]]
        drifts = np.zeros(self.n_mics)
        if self.relative_drifts:
            drifts[1:] = x[self.drift_cols[1:]]
        else:
            drifts = x[self.drift_cols]
        events = np.zeros((self.n_events, 3))
        mask = self.source_cols >= 0
        events[mask] = x[self.source_cols[mask]]
        return positions, offsets, drifts, events


@dataclass
class SoundFrameState:
    """Stacked state in the event-anchored frame (absolute drifts)."""

    vector: np.ndarray
    n_mics: int
    n_events: int

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=float)
        expected = 5 * self.n_mics - 1 + 3 * self.n_events - 6
        if self.vector.shape != (expected,):
            raise ValueError(
                f"state for N={self.n_mics}, K={self.n_events} must have "
                f"length {expected}, got {self.vector.shape}"
            )

    @property
    def layout(self) -> StateLayout:
        return StateLayout(self.n_mics, self.n_events)

    @property
    def mic_block(self) -> np.ndarray:
        return self.vector[: 5 * self.n_mics - 1]

    @property
    def source_block(self) -> np.ndarray:
        return self.vector[5 * self.n_mics - 1 :]


@dataclass
class MicFrameState:
    """Stacked microphone parameters in the microphone-anchored frame.

    Layout: ``[x_1 (3), x_2 (3), t_21, d_21, ..., x_N (3), t_N1, d_N1]``,
    length 5N-2.  Both clocks are relative to microphone 1.
    """

    vector: np.ndarray
    n_mics: int

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=float)
        expected = 5 * self.n_mics - 2
        if self.vector.shape != (expected,):
            raise ValueError(
                f"mic-frame state for N={self.n_mics} must have length "
                f"{expected}, got {self.vector.shape}"
            )

    def positions(self) -> np.ndarray:
        """Microphone positions, shape (N, 3)."""
        out = np.empty((self.n_mics, 3))
        out[0] = self.vector[:3]
        for i in range(1, self.n_mics):
            base = 3 + 5 * (i - 1)
            out[i] = self.vector[base : base + 3]
        return out

    def relative_offsets(self) -> np.ndarray:
        """tau_i - tau_1 for i = 2..N, shape (N-1,)."""
        return self.vector[[3 + 5 * (i - 1) + 3 for i in range(1, self.n_mics)]]

    def relative_drifts(self) -> np.ndarray:
        """delta_i - delta_1 for i = 2..N, shape (N-1,)."""
        return self.vector[[3 + 5 * (i - 1) + 4 for i in range(1, self.n_mics)]]


@dataclass
class FrameTransform:
    """Rigid motion into the microphone-anchored frame plus its affine action.

    ``rotation`` and ``translation`` map positions as ``R p + t``.  The
    affine pair acts on a stacked microphone block:
    ``mic_frame_vector = affine_matrix @ mic_block + affine_offset``.
    The matrix is (5N-2) x (5N-1) when built for the absolute-drift
    layout and (5N-2) x (5N-2) for the relative-drift layout.
    """

    rotation: np.ndarray
    translation: np.ndarray
    affine_matrix: np.ndarray
    affine_offset: np.ndarray


def anchor_frame(p1: np.ndarray, p2: np.ndarray, p3: np.ndarray):
    """Proper rotation R and translation t that gauge-fix three anchors.

    ``R p1 + t = 0``; ``R p2 + t`` lands on the +x axis; ``R p3 + t``
    lands in the x-y plane with y > 0.  det(R) = +1 always, so the
    handedness of the input is preserved.  Raises
    :class:`DegenerateGeometryError` when the anchors are collinear.
    """
    p1 = np.asarray(p1, dtype=float)
    e1 = np.asarray(p2, dtype=float) - p1
    n1 = np.linalg.norm(e1)
    if n1 <= _COLLINEAR_TOL:
        raise DegenerateGeometryError("first two anchor points coincide")
    e1 = e1 / n1
    u = np.asarray(p3, dtype=float) - p1
    e3 = np.cross(e1, u)
    n3 = np.linalg.norm(e3)
    if n3 <= _COLLINEAR_TOL * max(1.0, np.linalg.norm(u)):
        raise DegenerateGeometryError("anchor points are collinear")
    e3 = e3 / n3
    e2 = np.cross(e3, e1)
    rotation = np.vstack([e1, e2, e3])
    translation = -rotation @ p1
    return rotation, translation


def build_affine(
    rotation: np.ndarray,
    translation: np.ndarray,
    n_mics: int,
    relative_drifts: bool = False,
):
    """Affine action of a rigid motion on a stacked microphone block.

    Returns (A, b) with A of shape (5N-2, mic_dim) where mic_dim is
    5N-1 for the absolute-drift layout and 5N-2 for the relative one.
    Position rows carry R and t, offset rows pass through, drift rows
    either difference against microphone 1 (absolute layout) or pass
    through (relative layout).
    """
    src = StateLayout(n_mics, 4, relative_drifts=relative_drifts)
    out_dim = 5 * n_mics - 2
    a = np.zeros((out_dim, src.mic_dim))
    b = np.zeros(out_dim)

    a[0:3, src.position_cols[0]] = rotation
    b[0:3] = translation
    for i in range(1, n_mics):
        base = 3 + 5 * (i - 1)
        a[base : base + 3, src.position_cols[i]] = rotation
        b[base : base + 3] = translation
        a[base + 3, src.tau_cols[i]] = 1.0
        a[base + 4, src.drift_cols[i]] = 1.0
        if not relative_drifts:
            a[base + 4, src.drift_cols[0]] = -1.0
    return a, b


def compute_frame_transform(
    mic_positions: np.ndarray, relative_drifts: bool = False
) -> FrameTransform:
    """Transform into the frame anchored on microphones 1..3.

    For N >= 3 the first three microphones must not be collinear.  For
    N == 2 the rotation is left as identity and only the translation to
    microphone 1 is applied; two points cannot pin an orientation.
    """
    mic_positions = np.asarray(mic_positions, dtype=float)
    n_mics = mic_positions.shape[0]
    if n_mics < 2:
        raise ValueError("need at least 2 microphone positions")
    if n_mics == 2:
        rotation = np.eye(3)
        translation = -mic_positions[0]
    else:
        rotation, translation = anchor_frame(*mic_positions[:3])
    a, b = build_affine(rotation, translation, n_mics, relative_drifts)
    return FrameTransform(rotation, translation, a, b)


def pack_state(
    mics: Sequence[MicrophoneState],
    traj: EventTrajectory,
    atol: float = GAUGE_ATOL,
) -> SoundFrameState:
    """Pack a configuration that already sits in the event-anchored frame.

    The first three events must satisfy the gauge within ``atol``:
    s_1 = 0, s_2 on the +x axis, s_3 in the x-y plane with y >= 0.
    Offsets are stored relative to microphone 1.
    """
    n_mics = len(mics)
    if n_mics < 2:
        raise ValueError("need at least 2 microphones")
    src = traj.positions
    pinned = np.array([*src[0], src[1][1], src[1][2], src[2][2]])
    if np.any(np.abs(pinned) > atol):
        raise FrameGaugeError(
            "event positions violate the anchored gauge: "
            f"|pinned coordinates| up to {np.max(np.abs(pinned)):.3e} > {atol:g}"
        )
    if src[2][1] < -atol:
        raise FrameGaugeError(
            f"third event must have y >= 0 in the anchored frame, got {src[2][1]:.3e}"
        )
    layout = StateLayout(n_mics, traj.event_count)
    positions = np.array([m.position for m in mics])
    offsets = np.array([m.offset for m in mics])
    drifts = np.array([m.drift for m in mics])
    vec = layout.pack(positions, offsets, drifts, src)
    return SoundFrameState(vec, n_mics, traj.event_count)


def unpack_state(state: SoundFrameState):
    """Inverse of :func:`pack_state`.

    Returns (mics, event_positions); microphone 1 carries offset 0 and
    anchored event coordinates are exact zeros.
    """
    positions, offsets, drifts, events = state.layout.unpack(state.vector)
    mics = [
        MicrophoneState(positions[i], offsets[i], drifts[i])
        for i in range(state.n_mics)
    ]
    return mics, events


def to_mic_frame(
    state: SoundFrameState, transform: FrameTransform | None = None
) -> MicFrameState:
    """Re-express the microphone parameters in the microphone-anchored frame.

    The transform is computed at the state's own microphone positions
    unless one is supplied.  Raises :class:`DegenerateGeometryError`
    when the first three microphones are collinear.
    """
    layout = state.layout
    positions = state.vector[layout.position_cols]
    if transform is None:
        transform = compute_frame_transform(positions)
    vec = transform.affine_matrix @ state.mic_block + transform.affine_offset
    return MicFrameState(vec, state.n_mics)


def mic_frame_vector(mics: Sequence[MicrophoneState]) -> MicFrameState:
    """Microphone-anchored view of a list of microphone states."""
    n_mics = len(mics)
    positions = np.array([m.position for m in mics])
    transform = compute_frame_transform(positions)
    layout = StateLayout(n_mics, 4)
    offsets = np.array([m.offset for m in mics])
    drifts = np.array([m.drift for m in mics])
    block = layout.pack(positions, offsets, drifts, np.zeros((4, 3)))[: layout.mic_dim]
    vec = transform.affine_matrix @ block + transform.affine_offset
    return MicFrameState(vec, n_mics)

"""Synthetic configurations and Monte Carlo sweeps.

Three named room-scale trajectories are built in: evenly spaced loops
around an inset rectangle at two alternating heights inside a bounding
box.  Alternating heights guarantee that no three consecutive events are
collinear, so the event-anchored gauge always exists.  Random draws
cover microphone placement (uniform in the box), emission intervals
(uniform in [1, 2] s), clock offsets (uniform in [-0.1, 0.1] s relative
to microphone 1) and drift rates (uniform in [-1e-4, 1e-4]).

Monte Carlo grids enumerate cells over trajectory, microphone count,
initialization noise and TDOA noise.  Every trial derives its generator
from the grid seed and the (cell, trial) pair alone, so results are
reproducible and independent of execution order or worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .crlb import compute_crlb_report
from .exceptions import DegenerateGeometryError
from .frames import SoundFrameState, StateLayout, anchor_frame
from .model import (
    DEFAULT_SOUND_SPEED,
    MODE_HYBRID,
    MODE_TDOA_M_ONLY,
    EventTrajectory,
    MicrophoneState,
    PhysicalConstants,
    as_generator,
    simulate_measurements,
)
from .solver import CalibrationProblem, evaluate_errors, solve_gauss_newton

NAMED_TRAJECTORIES = {
    1: ((3.0, 3.0, 3.0), 8),
    2: ((2.0, 6.0, 2.0), 10),
    3: ((4.0, 4.0, 2.0), 14),
}

OFFSET_RANGE = 0.1
DRIFT_RANGE = 1e-4
INTERVAL_RANGE = (1.0, 2.0)


@dataclass
class TrajectorySpec:
    """Bounding box, event count and waypoint source for one scenario."""

    extents: tuple[float, float, float]
    event_count: int
    name: str = "custom"
    waypoints_override: np.ndarray | None = None

    def __post_init__(self):
        if self.event_count < 4:
            raise ValueError("need at least 4 events")
        if any(e <= 0 for e in self.extents):
            raise ValueError("box extents must be positive")
        if self.waypoints_override is not None:
            w = np.asarray(self.waypoints_override, dtype=float)
            if w.shape != (self.event_count, 3):
                raise ValueError(
                    f"waypoints must have shape ({self.event_count}, 3), got {w.shape}"
                )
            self.waypoints_override = w

    @classmethod
    def named(cls, index: int) -> "TrajectorySpec":
        if index not in NAMED_TRAJECTORIES:
            raise ValueError(
                f"unknown trajectory {index}; known: {sorted(NAMED_TRAJECTORIES)}"
            )
        extents, k = NAMED_TRAJECTORIES[index]
        return cls(extents=extents, event_count=k, name=str(index))

    def waypoints(self) -> np.ndarray:
        """Event positions before gauge anchoring, shape (K, 3)."""
        if self.waypoints_override is not None:
            return self.waypoints_override.copy()
        return _loop_waypoints(self.extents, self.event_count)


def _loop_waypoints(extents, k: int) -> np.ndarray:
    """Evenly spaced points on an inset rectangle, z alternating low/high."""
    ex, ey, ez = extents
    x0, x1 = 0.15 * ex, 0.85 * ex
    y0, y1 = 0.15 * ey, 0.85 * ey
    z_levels = (0.3 * ez, 0.7 * ez)
    seg = np.array([x1 - x0, y1 - y0, x1 - x0, y1 - y0])
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    direction = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=float)
    bounds = np.concatenate(([0.0], np.cumsum(seg)))
    perimeter = bounds[-1]

    pts = np.empty((k, 3))
    for i in range(k):
        d = perimeter * i / k
        s = min(int(np.searchsorted(bounds, d, side="right")) - 1, 3)
        xy = corners[s] + direction[s] * (d - bounds[s])
        pts[i, :2] = xy
        pts[i, 2] = z_levels[i % 2]
    return pts


def anchor_configuration(event_positions: np.ndarray, mic_positions: np.ndarray):
    """Rigidly move a configuration into the event-anchored gauge.

    Pinned coordinates of the first three events are snapped to exact
    zeros afterwards (they land within rounding of zero already).
    """
    rotation, translation = anchor_frame(*event_positions[:3])
    events = event_positions @ rotation.T + translation
    mics = mic_positions @ rotation.T + translation
    events[0] = 0.0
    events[1, 1:] = 0.0
    events[2, 2] = 0.0
    return events, mics


def random_configuration(spec: TrajectorySpec, n_mics: int, rng):
    """Draw one ground-truth configuration in the event-anchored gauge.

    Waypoints come from the spec; microphones are uniform in the spec's
    box; intervals, offsets and drifts are drawn from the module-level
    ranges.  Raises :class:`DegenerateGeometryError` if the first three
    waypoints are collinear (retried up to 100 times for custom waypoint
    sources, though the built-in loops never are).
    """
    gen = as_generator(rng)
    if n_mics < 2:
        raise ValueError("need at least 2 microphones")
    extents = np.asarray(spec.extents)
    last_error = None
    for _ in range(100):
        waypoints = spec.waypoints()
        mic_positions = gen.uniform(0.0, 1.0, size=(n_mics, 3)) * extents
        try:
            events, mic_positions = anchor_configuration(waypoints, mic_positions)
        except DegenerateGeometryError as exc:
            last_error = exc
            continue
        intervals = gen.uniform(*INTERVAL_RANGE, size=spec.event_count - 1)
        offsets = np.concatenate(
            ([0.0], gen.uniform(-OFFSET_RANGE, OFFSET_RANGE, size=n_mics - 1))
        )
        drifts = gen.uniform(-DRIFT_RANGE, DRIFT_RANGE, size=n_mics)
        mics = [
            MicrophoneState(mic_positions[i], offsets[i], drifts[i])
            for i in range(n_mics)
        ]
        return mics, EventTrajectory(events, intervals)
    raise DegenerateGeometryError(
        f"could not anchor the trajectory after 100 attempts: {last_error}"
    )


def perturbed_initialization(
    mics: Sequence[MicrophoneState],
    traj: EventTrajectory,
    sigma_init: float,
    rng,
) -> SoundFrameState:
    """Truth with Gaussian position noise and zeroed clock parameters.

    Noise is applied to free coordinates only, so gauge-pinned entries
    stay exactly zero.  ``sigma_init = 0`` reproduces the true positions
    bit for bit.
    """
    gen = as_generator(rng)
    n, k = len(mics), traj.event_count
    layout = StateLayout(n, k)
    positions = np.array([m.position for m in mics])
    vec = layout.pack(positions, np.zeros(n), np.zeros(n), traj.positions)
    kinds = layout.column_kinds()
    free = (kinds == "pos") | (kinds == "src")
    vec[free] += gen.normal(0.0, sigma_init, size=int(free.sum()))
    return SoundFrameState(vec, n, k)


def random_initialization(
    spec: TrajectorySpec, n_mics: int, n_events: int, rng
) -> SoundFrameState:
    """Positions uniform in the spec's box re-centered on the origin.

    Clock parameters start at zero; gauge-pinned event coordinates are
    not drawn.
    """
    gen = as_generator(rng)
    extents = np.asarray(spec.extents)
    layout = StateLayout(n_mics, n_events)
    mic_positions = gen.uniform(-0.5, 0.5, size=(n_mics, 3)) * extents
    event_positions = gen.uniform(-0.5, 0.5, size=(n_events, 3)) * extents
    vec = layout.pack(
        mic_positions, np.zeros(n_mics), np.zeros(n_mics), event_positions
    )
    return SoundFrameState(vec, n_mics, n_events)


@dataclass
class ExperimentGrid:
    """Cross product of sweep axes plus shared constants.

    ``init_mode`` is "random" (fresh positions per trial, the
    initialization-noise axis is ignored) or "perturbed" (truth plus
    Gaussian position noise per level in ``init_noise_sds``).
    ``init_noise_scale`` optionally rescales those levels per trajectory
    name, e.g. {"2": 2.0, "3": 2.0} doubles them for the wider boxes.
    """

    trajectories: tuple = (1, 2, 3)
    mic_counts: tuple = (6,)
    init_mode: str = "random"
    init_noise_sds: tuple = (0.0,)
    init_noise_scale: dict = field(default_factory=dict)
    tdoa_noise_sds: tuple = (1e-4,)
    trials_per_cell: int = 200
    sigma_odo: float = 0.01
    sound_speed: float = DEFAULT_SOUND_SPEED
    seed: int = 0

    def __post_init__(self):
        if self.init_mode not in ("random", "perturbed"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        if self.trials_per_cell < 1:
            raise ValueError("trials_per_cell must be positive")

    def cells(self) -> list[dict]:
        """Deterministic cell enumeration."""
        init_levels = (
            list(self.init_noise_sds) if self.init_mode == "perturbed" else [None]
        )
        out = []
        for traj_index in self.trajectories:
            spec = TrajectorySpec.named(traj_index)
            scale = float(self.init_noise_scale.get(spec.name, 1.0))
            for n_mics in self.mic_counts:
                for level in init_levels:
                    for sigma_tdoa in self.tdoa_noise_sds:
                        out.append(
                            {
                                "trajectory": spec.name,
                                "n_mics": int(n_mics),
                                "init_mode": self.init_mode,
                                "sigma_init": None if level is None else level * scale,
                                "sigma_tdoa": float(sigma_tdoa),
                                "sigma_odo": float(self.sigma_odo),
                            }
                        )
        return out


def part_a_grid(trials: int = 200, seed: int = 0) -> ExperimentGrid:
    """Microphone-count sweep at fixed noise, random initialization."""
    return ExperimentGrid(
        trajectories=(1, 2, 3),
        mic_counts=(4, 6, 8, 10),
        init_mode="random",
        tdoa_noise_sds=(1e-4,),
        trials_per_cell=trials,
        seed=seed,
    )


def part_b_grid(trials: int = 200, seed: int = 0) -> ExperimentGrid:
    """Initialization-noise sweep; levels doubled for the larger boxes."""
    return ExperimentGrid(
        trajectories=(1, 2, 3),
        mic_counts=(6,),
        init_mode="perturbed",
        init_noise_sds=(0.0, 1.0, 2.0, 3.0),
        init_noise_scale={"2": 2.0, "3": 2.0},
        tdoa_noise_sds=(1e-4,),
        trials_per_cell=trials,
        seed=seed,
    )


def part_c_grid(trials: int = 200, seed: int = 0) -> ExperimentGrid:
    """TDOA-noise sweep, random initialization."""
    return ExperimentGrid(
        trajectories=(1, 2, 3),
        mic_counts=(6,),
        init_mode="random",
        tdoa_noise_sds=(5e-5, 1e-4, 5e-4),
        trials_per_cell=trials,
        seed=seed,
    )


@dataclass
class ModeOutcome:
    """Result of one estimation mode on one trial."""

    mode: str
    converged: bool = False
    iterations: int = 0
    final_cost: float = float("nan")
    loc_err: float = float("nan")
    off_err: float = float("nan")
    dri_err: float = float("nan")
    d_crlb_loc: float = float("nan")
    d_crlb_off: float = float("nan")
    d_crlb_dri: float = float("nan")
    crlb_degenerate: bool = False
    error: str = ""


@dataclass
class TrialRecord:
    """One Monte Carlo trial: the cell it belongs to plus per-mode outcomes."""

    cell_index: int
    trial_index: int
    seed: int
    trajectory: str
    n_mics: int
    init_mode: str
    sigma_init: float | None
    sigma_tdoa: float
    sigma_odo: float
    outcomes: dict[str, ModeOutcome] = field(default_factory=dict)

    def rows(self) -> list[dict]:
        base = {
            "trajectory": self.trajectory,
            "n_mics": self.n_mics,
            "init_mode": self.init_mode,
            "sigma_init": self.sigma_init,
            "sigma_tdoa": self.sigma_tdoa,
            "sigma_odo": self.sigma_odo,
            "cell": self.cell_index,
            "trial": self.trial_index,
            "seed": self.seed,
        }
        out = []
        for mode in sorted(self.outcomes):
            o = self.outcomes[mode]
            row = dict(base)
            row.update(
                {
                    "mode": o.mode,
                    "converged": o.converged,
                    "iterations": o.iterations,
                    "final_cost": o.final_cost,
                    "loc_err": o.loc_err,
                    "off_err": o.off_err,
                    "dri_err": o.dri_err,
                    "d_crlb_loc": o.d_crlb_loc,
                    "d_crlb_off": o.d_crlb_off,
                    "d_crlb_dri": o.d_crlb_dri,
                    "crlb_degenerate": o.crlb_degenerate,
                    "error": o.error,
                }
            )
            out.append(row)
        return out


def run_trial(
    grid: ExperimentGrid,
    cell_index: int,
    cell: dict,
    trial_index: int,
    modes: tuple[str, ...],
) -> TrialRecord:
    """Run one seeded trial; failures are captured, never raised."""
    seq = np.random.SeedSequence(entropy=grid.seed, spawn_key=(cell_index, trial_index))
    gen = np.random.default_rng(seq)
    consts = PhysicalConstants(grid.sound_speed)
    spec = TrajectorySpec.named(int(cell["trajectory"]))
    record = TrialRecord(
        cell_index=cell_index,
        trial_index=trial_index,
        seed=grid.seed,
        trajectory=cell["trajectory"],
        n_mics=cell["n_mics"],
        init_mode=cell["init_mode"],
        sigma_init=cell["sigma_init"],
        sigma_tdoa=cell["sigma_tdoa"],
        sigma_odo=cell["sigma_odo"],
    )
    try:
        mics, traj = random_configuration(spec, cell["n_mics"], gen)
        measurements = simulate_measurements(
            mics, traj, consts, cell["sigma_tdoa"], cell["sigma_odo"], gen
        )
        if cell["init_mode"] == "perturbed":
            init = perturbed_initialization(mics, traj, cell["sigma_init"], gen)
        else:
            init = random_initialization(spec, cell["n_mics"], spec.event_count, gen)
    except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
        for mode in modes:
            record.outcomes[mode] = ModeOutcome(mode=mode, error=repr(exc))
        return record

    for mode in modes:
        outcome = ModeOutcome(mode=mode)
        try:
            problem = CalibrationProblem(
                measurements, traj.intervals, consts, mode=mode, initial_state=init
            )
            solution = solve_gauss_newton(problem)
            errors = evaluate_errors(solution, mics)
            outcome.converged = solution.converged
            outcome.iterations = solution.iterations
            outcome.final_cost = solution.final_cost
            outcome.loc_err = errors["loc_err"]
            outcome.off_err = errors["off_err"]
            outcome.dri_err = errors["dri_err"]
            if cell["sigma_tdoa"] > 0 and cell["sigma_odo"] > 0:
                report = compute_crlb_report(
                    mics, traj, consts, cell["sigma_tdoa"], cell["sigma_odo"], mode
                )
                outcome.d_crlb_loc = report.d_loc
                outcome.d_crlb_off = report.d_off
                outcome.d_crlb_dri = report.d_dri
                outcome.crlb_degenerate = report.degenerate
        except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
            outcome.error = repr(exc)
        record.outcomes[mode] = outcome
    return record


def _run_trial_payload(payload) -> TrialRecord:
    return run_trial(*payload)


@dataclass
class GridResult:
    records: list[TrialRecord]
    trial_rows: list[dict]
    aggregate_rows: list[dict]


def run_grid(
    grid: ExperimentGrid,
    modes: tuple[str, ...] = (MODE_HYBRID, MODE_TDOA_M_ONLY),
    jobs: int = 1,
) -> GridResult:
    """Run every (cell, trial) pair and aggregate.

    With ``jobs > 1`` trials run in a process pool; ordering and content
    are identical to a serial run because every trial seeds itself from
    (grid seed, cell, trial) alone.
    """
    cells = grid.cells()
    payloads = [
        (grid, ci, cell, ti, tuple(modes))
        for ci, cell in enumerate(cells)
        for ti in range(grid.trials_per_cell)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_trial_payload, payloads, chunksize=4))
    else:
        records = [_run_trial_payload(p) for p in payloads]
    rows = [row for record in records for row in record.rows()]
    return GridResult(records, rows, aggregate_rows(rows))


_CELL_KEY = ("trajectory", "n_mics", "init_mode", "sigma_init", "sigma_tdoa", "sigma_odo")


def aggregate_rows(rows: list[dict]) -> list[dict]:
    """Per-cell, per-mode medians and spreads.

    Robust to row order (groups are sorted); failed trials contribute
    NaN errors which the nan-aware statistics skip, and are counted in
    ``n_failed``.
    """
    groups: dict = {}
    for row in rows:
        key = tuple(row[k] for k in _CELL_KEY) + (row["mode"],)
        groups.setdefault(key, []).append(row)

    out = []
    for key in sorted(groups, key=lambda k: tuple(str(v) for v in k)):
        # fixed member order keeps float summation identical for any input order
        members = sorted(groups[key], key=lambda r: r["trial"])
        agg = dict(zip(_CELL_KEY, key[:-1]))
        agg["mode"] = key[-1]
        agg["n_trials"] = len(members)
        agg["n_converged"] = sum(1 for r in members if r["converged"] and not r["error"])
        agg["n_failed"] = sum(1 for r in members if r["error"])
        for name in ("loc_err", "off_err", "dri_err"):
            values = np.array([r[name] for r in members], dtype=float)
            if np.all(np.isnan(values)):
                agg[f"median_{name}"] = float("nan")
                agg[f"iqr_{name}"] = float("nan")
            else:
                agg[f"median_{name}"] = float(np.nanmedian(values))
                q75, q25 = np.nanpercentile(values, [75, 25])
                agg[f"iqr_{name}"] = float(q75 - q25)
        for name in ("d_crlb_loc", "d_crlb_off", "d_crlb_dri"):
            values = np.array([r[name] for r in members], dtype=float)
            agg[f"mean_{name}"] = (
                float("nan") if np.all(np.isnan(values)) else float(np.nanmean(values))
            )
        out.append(agg)
    return out

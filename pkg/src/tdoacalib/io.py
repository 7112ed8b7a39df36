"""File formats: problems, reports, measurement dumps, grids and trial tables.

Structured data is stored as JSON (nested key-value with arrays), one
object per file, with a ``schema_version`` and the sound speed embedded
so files are self-describing.  Floats go through Python's shortest
round-trip repr, which preserves every double exactly and never emits
locale-dependent separators.  All writers go through a temp-file rename,
so a crashed write can never leave a half-written file behind.

Monte Carlo trials and their aggregates are flat CSV tables with a fixed
column order, suitable for any plotting tool; a reader is provided so
the aggregate statistics can be recomputed from a trial table alone.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import SchemaError
from .frames import SoundFrameState
from .model import (
    EventTrajectory,
    MeasurementSet,
    MicrophoneState,
    PhysicalConstants,
)
from .sim import ExperimentGrid
from .solver import CalibrationSolution

SCHEMA_VERSION = 1


def _atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path, payload: dict) -> None:
    _atomic_write_text(path, json.dumps(payload, indent=1) + "\n")


def _read_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(payload, dict):
        raise SchemaError(f"{path}: expected a JSON object at top level")
    return payload


def _require(payload: dict, key: str, path) -> object:
    if key not in payload or payload[key] is None:
        raise SchemaError(f"{path}: missing required field {key!r}")
    return payload[key]


def _check_version(payload: dict, path) -> None:
    version = _require(payload, "schema_version", path)
    if version != SCHEMA_VERSION:
        raise SchemaError(
            f"{path}: unsupported schema version {version!r}, expected {SCHEMA_VERSION}"
        )


def _array(payload, key, shape, path) -> np.ndarray:
    raw = _require(payload, key, path)
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: field {key!r} is not numeric") from exc
    if arr.shape != shape:
        raise SchemaError(f"{path}: field {key!r} has shape {arr.shape}, expected {shape}")
    return arr


@dataclass
class TruthInfo:
    """Ground-truth configuration embedded in a problem file."""

    mic_positions: np.ndarray
    offsets: np.ndarray
    drifts: np.ndarray
    event_positions: np.ndarray

    def mics(self) -> list[MicrophoneState]:
        return [
            MicrophoneState(self.mic_positions[i], self.offsets[i], self.drifts[i])
            for i in range(self.mic_positions.shape[0])
        ]


@dataclass
class ProblemFile:
    """One calibration problem: measurements, intervals, optional truth."""

    sound_speed: float
    intervals: np.ndarray
    sigma_tdoa: float
    sigma_odo: float
    tdoa_s: np.ndarray | None
    tdoa_m: np.ndarray
    odometry: np.ndarray
    truth: TruthInfo | None = None
    initial_state: np.ndarray | None = None

    @property
    def n_mics(self) -> int:
        return self.tdoa_m.shape[0] + 1

    @property
    def n_events(self) -> int:
        return self.tdoa_m.shape[1]

    def constants(self) -> PhysicalConstants:
        return PhysicalConstants(self.sound_speed)

    def measurement_set(self) -> MeasurementSet:
        return MeasurementSet(
            tdoa_s=self.tdoa_s,
            tdoa_m=self.tdoa_m,
            odometry=self.odometry,
            sigma_tdoa=self.sigma_tdoa,
            sigma_odo=self.sigma_odo,
        )

    def trajectory(self) -> EventTrajectory:
        if self.truth is None:
            raise ValueError("problem file has no embedded truth")
        return EventTrajectory(self.truth.event_positions, self.intervals)

    def initial_sound_state(self) -> SoundFrameState | None:
        if self.initial_state is None:
            return None
        return SoundFrameState(self.initial_state, self.n_mics, self.n_events)


def problem_from_simulation(
    mics: Sequence[MicrophoneState],
    traj: EventTrajectory,
    consts: PhysicalConstants,
    measurements: MeasurementSet,
    initial_state: SoundFrameState | None = None,
) -> ProblemFile:
    truth = TruthInfo(
        mic_positions=np.array([m.position for m in mics]),
        offsets=np.array([m.offset for m in mics]),
        drifts=np.array([m.drift for m in mics]),
        event_positions=traj.positions.copy(),
    )
    return ProblemFile(
        sound_speed=consts.sound_speed,
        intervals=traj.intervals.copy(),
        sigma_tdoa=measurements.sigma_tdoa,
        sigma_odo=measurements.sigma_odo,
        tdoa_s=None if measurements.tdoa_s is None else measurements.tdoa_s.copy(),
        tdoa_m=measurements.tdoa_m.copy(),
        odometry=measurements.odometry.copy(),
        truth=truth,
        initial_state=None if initial_state is None else initial_state.vector.copy(),
    )


def write_problem(path, problem: ProblemFile) -> None:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": "problem",
        "sound_speed": float(problem.sound_speed),
        "n_mics": problem.n_mics,
        "n_events": problem.n_events,
        "intervals": problem.intervals.tolist(),
        "sigma_tdoa": float(problem.sigma_tdoa),
        "sigma_odo": float(problem.sigma_odo),
        "measurements": {
            "tdoa_s": None if problem.tdoa_s is None else problem.tdoa_s.tolist(),
            "tdoa_m": problem.tdoa_m.tolist(),
            "odometry": problem.odometry.tolist(),
        },
        "truth": None
        if problem.truth is None
        else {
            "mic_positions": problem.truth.mic_positions.tolist(),
            "offsets": problem.truth.offsets.tolist(),
            "drifts": problem.truth.drifts.tolist(),
            "event_positions": problem.truth.event_positions.tolist(),
        },
        "initial_state": None
        if problem.initial_state is None
        else np.asarray(problem.initial_state, dtype=float).tolist(),
    }
    _write_json(path, payload)


def read_problem(path) -> ProblemFile:
    payload = _read_json(path)
    _check_version(payload, path)
    if payload.get("kind") != "problem":
        raise SchemaError(f"{path}: kind {payload.get('kind')!r} is not 'problem'")
    n = int(_require(payload, "n_mics", path))
    k = int(_require(payload, "n_events", path))
    if n < 2 or k < 2:
        raise SchemaError(f"{path}: invalid dimensions N={n}, K={k}")
    meas = _require(payload, "measurements", path)
    if not isinstance(meas, dict):
        raise SchemaError(f"{path}: 'measurements' must be an object")
    tdoa_s = None
    if meas.get("tdoa_s") is not None:
        tdoa_s = _array(meas, "tdoa_s", (n, k - 1), path)
    tdoa_m = _array(meas, "tdoa_m", (n - 1, k), path)
    odometry = _array(meas, "odometry", (k - 1, 3), path)
    intervals = _array(payload, "intervals", (k - 1,), path)
    truth = None
    if payload.get("truth") is not None:
        t = payload["truth"]
        truth = TruthInfo(
            mic_positions=_array(t, "mic_positions", (n, 3), path),
            offsets=_array(t, "offsets", (n,), path),
            drifts=_array(t, "drifts", (n,), path),
            event_positions=_array(t, "event_positions", (k, 3), path),
        )
    initial_state = None
    if payload.get("initial_state") is not None:
        dim = 5 * n - 1 + 3 * k - 6
        initial_state = _array(payload, "initial_state", (dim,), path)
    sigma_tdoa = float(_require(payload, "sigma_tdoa", path))
    sigma_odo = float(_require(payload, "sigma_odo", path))
    sound_speed = float(_require(payload, "sound_speed", path))
    try:
        return ProblemFile(
            sound_speed=sound_speed,
            intervals=intervals,
            sigma_tdoa=sigma_tdoa,
            sigma_odo=sigma_odo,
            tdoa_s=tdoa_s,
            tdoa_m=tdoa_m,
            odometry=odometry,
            truth=truth,
            initial_state=initial_state,
        )
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def write_report(path, report: dict) -> None:
    """Persist a calibration/bound/noise report produced by build_report."""
    payload = dict(report)
    payload.setdefault("schema_version", SCHEMA_VERSION)
    payload.setdefault("kind", "report")
    _write_json(path, payload)


def read_report(path) -> dict:
    payload = _read_json(path)
    _check_version(payload, path)
    if payload.get("kind") != "report":
        raise SchemaError(f"{path}: kind {payload.get('kind')!r} is not 'report'")
    return payload


def build_report(
    solution: CalibrationSolution,
    sound_speed: float,
    errors: dict | None = None,
    d_crlb: dict | None = None,
    noise: dict | None = None,
) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "report",
        "sound_speed": float(sound_speed),
        "mode": solution.mode,
        "converged": bool(solution.converged),
        "iterations": int(solution.iterations),
        "final_cost": float(solution.final_cost),
        "n_mics": solution.state_sound.n_mics,
        "n_events": solution.state_sound.n_events,
        "state_sound": solution.state_sound.vector.tolist(),
        "state_mic": solution.state_mic.vector.tolist(),
        "errors": errors,
        "d_crlb": d_crlb,
        "noise": noise,
    }


def write_measurements(path, payload: dict) -> None:
    """Persist extracted measurement blocks (no geometry required).

    Expected keys: sample_rate, n_channels, n_events, optional tdoa_s
    (channels x events-1, seconds) and tdoa_m (channels-1 x events).
    """
    body = {
        "schema_version": SCHEMA_VERSION,
        "kind": "measurements",
        "sample_rate": int(payload["sample_rate"]),
        "n_channels": int(payload["n_channels"]),
        "n_events": int(payload["n_events"]),
        "reference_channel": int(payload.get("reference_channel", 0)),
        "tdoa_s": None
        if payload.get("tdoa_s") is None
        else np.asarray(payload["tdoa_s"], dtype=float).tolist(),
        "tdoa_m": None
        if payload.get("tdoa_m") is None
        else np.asarray(payload["tdoa_m"], dtype=float).tolist(),
    }
    _write_json(path, body)


def read_measurements(path) -> dict:
    payload = _read_json(path)
    _check_version(payload, path)
    if payload.get("kind") != "measurements":
        raise SchemaError(f"{path}: kind {payload.get('kind')!r} is not 'measurements'")
    return payload


def write_grid_config(path, grid: ExperimentGrid) -> None:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": "grid",
        "trajectories": [int(t) for t in grid.trajectories],
        "mic_counts": [int(n) for n in grid.mic_counts],
        "init_mode": grid.init_mode,
        "init_noise_sds": [float(s) for s in grid.init_noise_sds],
        "init_noise_scale": {str(k): float(v) for k, v in grid.init_noise_scale.items()},
        "tdoa_noise_sds": [float(s) for s in grid.tdoa_noise_sds],
        "trials_per_cell": int(grid.trials_per_cell),
        "sigma_odo": float(grid.sigma_odo),
        "sound_speed": float(grid.sound_speed),
        "seed": int(grid.seed),
    }
    _write_json(path, payload)


def read_grid_config(path) -> ExperimentGrid:
    payload = _read_json(path)
    _check_version(payload, path)
    if payload.get("kind") != "grid":
        raise SchemaError(f"{path}: kind {payload.get('kind')!r} is not 'grid'")
    try:
        return ExperimentGrid(
            trajectories=tuple(int(t) for t in _require(payload, "trajectories", path)),
            mic_counts=tuple(int(n) for n in _require(payload, "mic_counts", path)),
            init_mode=str(_require(payload, "init_mode", path)),
            init_noise_sds=tuple(float(s) for s in payload.get("init_noise_sds", (0.0,))),
            init_noise_scale={
                str(k): float(v) for k, v in payload.get("init_noise_scale", {}).items()
            },
            tdoa_noise_sds=tuple(
                float(s) for s in _require(payload, "tdoa_noise_sds", path)
            ),
            trials_per_cell=int(_require(payload, "trials_per_cell", path)),
            sigma_odo=float(_require(payload, "sigma_odo", path)),
            sound_speed=float(payload.get("sound_speed", 343.0)),
            seed=int(_require(payload, "seed", path)),
        )
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: invalid grid config ({exc})") from exc


TRIAL_COLUMNS = (
    "trajectory",
    "n_mics",
    "init_mode",
    "sigma_init",
    "sigma_tdoa",
    "sigma_odo",
    "cell",
    "trial",
    "seed",
    "mode",
    "converged",
    "iterations",
    "final_cost",
    "loc_err",
    "off_err",
    "dri_err",
    "d_crlb_loc",
    "d_crlb_off",
    "d_crlb_dri",
    "crlb_degenerate",
    "error",
)

AGGREGATE_COLUMNS = (
    "trajectory",
    "n_mics",
    "init_mode",
    "sigma_init",
    "sigma_tdoa",
    "sigma_odo",
    "mode",
    "n_trials",
    "n_converged",
    "n_failed",
    "median_loc_err",
    "iqr_loc_err",
    "median_off_err",
    "iqr_off_err",
    "median_dri_err",
    "iqr_dri_err",
    "mean_d_crlb_loc",
    "mean_d_crlb_off",
    "mean_d_crlb_dri",
)

_TRIAL_TYPES = {
    "n_mics": int,
    "cell": int,
    "trial": int,
    "seed": int,
    "iterations": int,
    "sigma_init": float,
    "sigma_tdoa": float,
    "sigma_odo": float,
    "final_cost": float,
    "loc_err": float,
    "off_err": float,
    "dri_err": float,
    "d_crlb_loc": float,
    "d_crlb_off": float,
    "d_crlb_dri": float,
    "converged": bool,
    "crlb_degenerate": bool,
}


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path, columns, rows) -> None:
    import io as _io

    buffer = _io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format_cell(row.get(c)) for c in columns])
    _atomic_write_text(path, buffer.getvalue())


def write_trial_csv(path, rows: list[dict]) -> None:
    """One row per (trial, mode), fixed column order, full float precision."""
    _write_csv(path, TRIAL_COLUMNS, rows)


def write_aggregate_csv(path, rows: list[dict]) -> None:
    _write_csv(path, AGGREGATE_COLUMNS, rows)


def read_trial_csv(path) -> list[dict]:
    """Parse a trial table back into typed rows (inverse of write_trial_csv)."""
    out = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        missing = set(TRIAL_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise SchemaError(f"{path}: missing trial columns {sorted(missing)}")
        for raw in reader:
            row: dict = {}
            for key in TRIAL_COLUMNS:
                text = raw[key]
                kind = _TRIAL_TYPES.get(key)
                if kind is None:
                    row[key] = text
                elif text == "":
                    row[key] = None
                elif kind is bool:
                    row[key] = text == "true"
                else:
                    try:
                        row[key] = kind(text)
                    except ValueError as exc:
                        raise SchemaError(
                            f"{path}: column {key!r} has non-{kind.__name__} "
                            f"value {text!r}"
                        ) from exc
            out.append(row)
    return out

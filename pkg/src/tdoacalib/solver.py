"""Batch weighted nonlinear least squares over the stacked calibration state.

The estimator minimizes ``(f(x) - z)^T W^-1 (f(x) - z)`` where ``f``
stacks the inter-event TDOA model, the inter-microphone TDOA model and
the odometry model, ``z`` stacks the corresponding measurements and
``W`` is diagonal with the per-family noise variances.  Rows are ordered
as

* inter-event TDOA, channel-major: i = 1..N, each with pairs j = 1..K-1,
* inter-microphone TDOA, event-major: j = 1..K, each with i = 2..N,
* odometry: steps j = 1..K-1, coordinates x, y, z.

Gauss-Newton steps are computed on column-scaled variables (1 m for
positions, 1e-3 s for offsets, 1e-5 for drift rates) through a
rank-revealing least-squares factorization.  A plain GN step is tried
first; if it does not decrease the weighted cost, multiplicative
diagonal damping is increased until it does or a ceiling is hit, in
which case the solver reports non-convergence rather than raising.

Two estimation modes share the machinery.  ``hybrid`` uses every row
and estimates absolute drifts.  ``tdoa_m_only`` drops the inter-event
rows; a common drift is then unobservable, so the parameterization
switches to drifts relative to microphone 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import SingularGeometryError, UnobservableConfigurationError
from .frames import (
    MicFrameState,
    SoundFrameState,
    StateLayout,
    mic_frame_vector,
    to_mic_frame,
)
from .model import (
    MODE_HYBRID,
    MODE_TDOA_M_ONLY,
    MODES,
    MeasurementSet,
    PhysicalConstants,
)

COLUMN_SCALES = {"pos": 1.0, "src": 1.0, "tau": 1e-3, "dri": 1e-5}
"""Characteristic magnitude per column kind, used to equilibrate the normal equations."""

_MIN_RANGE = 1e-9


@dataclass
class CalibrationProblem:
    """Measurements plus everything needed to evaluate the model.

    ``intervals`` are the known emission gaps (seconds).  The initial
    state, when present, is always expressed in the event-anchored
    absolute-drift layout regardless of mode; mode conversion happens
    inside the solver.
    """

    measurements: MeasurementSet
    intervals: np.ndarray
    consts: PhysicalConstants
    mode: str = MODE_HYBRID
    initial_state: SoundFrameState | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.intervals = np.asarray(self.intervals, dtype=float)
        k = self.measurements.n_events
        if self.intervals.shape != (k - 1,):
            raise ValueError(
                f"intervals must have shape ({k - 1},), got {self.intervals.shape}"
            )
        if np.any(self.intervals <= 0) or not np.all(np.isfinite(self.intervals)):
            raise ValueError("intervals must be finite and strictly positive")
        if self.mode == MODE_HYBRID and self.measurements.tdoa_s is None:
            raise ValueError("hybrid mode requires the inter-event TDOA block")

    @property
    def n_mics(self) -> int:
        return self.measurements.n_mics

    @property
    def n_events(self) -> int:
        return self.measurements.n_events

    @property
    def layout(self) -> StateLayout:
        return StateLayout(
            self.n_mics, self.n_events, relative_drifts=self.mode == MODE_TDOA_M_ONLY
        )

    @property
    def residual_dim(self) -> int:
        n, k = self.n_mics, self.n_events
        dim = (n - 1) * k + 3 * (k - 1)
        if self.mode == MODE_HYBRID:
            dim += n * (k - 1)
        return dim

    def emission_times(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.intervals)))


@dataclass
class GaussNewtonOptions:
    """Iteration limits and tolerances for :func:`solve_gauss_newton`.

    ``step_tol`` applies to the scaled step norm, ``cost_tol`` to the
    relative cost decrease of an accepted step.
    """

    max_iter: int = 200
    step_tol: float = 1e-10
    cost_tol: float = 1e-12
    damping_floor: float = 1e-6
    damping_ceiling: float = 1e8
    damping_growth: float = 10.0
    rank_rtol: float = 1e-10


@dataclass
class CalibrationSolution:
    """Converged (or abandoned) state plus iteration diagnostics."""

    state_sound: SoundFrameState
    state_mic: MicFrameState
    mode: str
    converged: bool
    iterations: int
    final_cost: float
    cost_history: list[float] = field(default_factory=list)
    step_norm_history: list[float] = field(default_factory=list)


def _internal_vector(problem: CalibrationProblem, state: SoundFrameState) -> np.ndarray:
    """Re-pack an absolute-drift state into the problem's own layout."""
    if state.n_mics != problem.n_mics or state.n_events != problem.n_events:
        raise ValueError(
            f"state is for N={state.n_mics}, K={state.n_events}; problem has "
            f"N={problem.n_mics}, K={problem.n_events}"
        )
    if problem.mode == MODE_HYBRID:
        return state.vector.copy()
    positions, offsets, drifts, events = state.layout.unpack(state.vector)
    return problem.layout.pack(positions, offsets, drifts, events)


def _sound_state(problem: CalibrationProblem, x: np.ndarray) -> SoundFrameState:
    """Embed an internal vector back into the absolute-drift layout.

    In relative-drift mode the unobservable common drift is pinned by
    reporting microphone 1 with drift exactly 0.
    """
    layout = problem.layout
    if problem.mode == MODE_HYBRID:
        return SoundFrameState(x.copy(), problem.n_mics, problem.n_events)
    positions, offsets, drifts, events = layout.unpack(x)
    hybrid = StateLayout(problem.n_mics, problem.n_events)
    vec = hybrid.pack(positions, offsets, drifts, events)
    return SoundFrameState(vec, problem.n_mics, problem.n_events)


def stacked_measurements(problem: CalibrationProblem) -> np.ndarray:
    """Measurement vector z in residual row order."""
    m = problem.measurements
    blocks = []
    if problem.mode == MODE_HYBRID:
        blocks.append(m.tdoa_s.ravel())
    blocks.append(m.tdoa_m.T.ravel())
    blocks.append(m.odometry.ravel())
    return np.concatenate(blocks)


def measurement_sigmas(problem: CalibrationProblem) -> np.ndarray:
    """Per-row noise SD in residual row order.

    A zero family SD marks exact measurements; those rows get unit
    weight so the cost stays finite (their residuals vanish at the
    optimum anyway, making the weight choice irrelevant there).
    """
    m = problem.measurements
    n, k = problem.n_mics, problem.n_events
    blocks = []
    if problem.mode == MODE_HYBRID:
        blocks.append(np.full(n * (k - 1), m.effective_sigma_s))
    blocks.append(np.full((n - 1) * k, m.effective_sigma_m))
    blocks.append(np.full(3 * (k - 1), m.sigma_odo))
    sig = np.concatenate(blocks)
    sig[sig == 0.0] = 1.0
    return sig


def _model_vector(problem: CalibrationProblem, x: np.ndarray) -> np.ndarray:
    """Stacked model prediction f(x) in residual row order."""
    layout = problem.layout
    positions, offsets, drifts, events = layout.unpack(x)
    c = problem.consts.sound_speed
    dt = problem.intervals
    times = problem.emission_times()
    r = np.linalg.norm(positions[:, None, :] - events[None, :, :], axis=2)
    blocks = []
    if problem.mode == MODE_HYBRID:
        ts = (r[:, 1:] - r[:, :-1]) / c + (1.0 + drifts)[:, None] * dt[None, :]
        blocks.append(ts.ravel())
    tm = (
        (r[1:, :] - r[0:1, :]) / c
        + (offsets[1:] - offsets[0])[:, None]
        + (drifts[1:] - drifts[0])[:, None] * times[None, :]
    )
    blocks.append(tm.T.ravel())
    blocks.append(np.diff(events, axis=0).ravel())
    return np.concatenate(blocks)


def _geometry(positions: np.ndarray, events: np.ndarray):
    """Ranges and unit direction vectors from every event to every mic."""
    diff = positions[:, None, :] - events[None, :, :]
    r = np.linalg.norm(diff, axis=2)
    if np.min(r) < _MIN_RANGE:
        i, j = np.unravel_index(np.argmin(r), r.shape)
        raise SingularGeometryError(int(i), int(j), float(r[i, j]))
    return r, diff / r[:, :, None]


def _jacobian(problem: CalibrationProblem, x: np.ndarray) -> np.ndarray:
    """Analytic Jacobian of the stacked model at x, dense (rows x dim)."""
    layout = problem.layout
    n, k = problem.n_mics, problem.n_events
    positions, _offsets, _drifts, events = layout.unpack(x)
    c = problem.consts.sound_speed
    dt = problem.intervals
    times = problem.emission_times()
    _r, unit = _geometry(positions, events)

    hybrid = problem.mode == MODE_HYBRID
    n_s = n * (k - 1) if hybrid else 0
    n_m = (n - 1) * k
    jac = np.zeros((problem.residual_dim, layout.dim))

    pos_cols = layout.position_cols
    tau_cols = layout.tau_cols
    dri_cols = layout.drift_cols
    src_cols = layout.source_cols

    if hybrid:
        rows_s = np.arange(n_s).reshape(n, k - 1)
        d_unit = (unit[:, 1:, :] - unit[:, :-1, :]) / c
        for a in range(3):
            jac[rows_s, pos_cols[:, a][:, None]] = d_unit[:, :, a]
            cols = src_cols[1:, a]
            sel = cols >= 0
            if sel.any():
                jac[rows_s[:, sel], cols[sel][None, :]] = -unit[:, 1:, a][:, sel] / c
            cols = src_cols[: k - 1, a]
            sel = cols >= 0
            if sel.any():
                jac[rows_s[:, sel], cols[sel][None, :]] = unit[:, :-1, a][:, sel] / c
        jac[rows_s, dri_cols[:, None]] = np.broadcast_to(dt, (n, k - 1))

    rows_m = n_s + np.arange(k)[:, None] * (n - 1) + np.arange(n - 1)[None, :]
    for a in range(3):
        jac[rows_m, pos_cols[1:, a][None, :]] = unit[1:, :, a].T / c
        jac[rows_m, pos_cols[0, a]] = np.broadcast_to(
            -unit[0, :, a][:, None] / c, (k, n - 1)
        )
        cols = src_cols[:, a]
        sel = cols >= 0
        if sel.any():
            vals = (unit[0, :, a][:, None] - unit[1:, :, a].T) / c
            jac[rows_m[sel], cols[sel][:, None]] = vals[sel]
    jac[rows_m, tau_cols[1:][None, :]] = 1.0
    jac[rows_m, dri_cols[1:][None, :]] = np.broadcast_to(times[:, None], (k, n - 1))
    if not layout.relative_drifts:
        jac[rows_m, dri_cols[0]] = np.broadcast_to(-times[:, None], (k, n - 1))

    rows_o = n_s + n_m + np.arange(3 * (k - 1)).reshape(k - 1, 3)
    for a in range(3):
        cols = src_cols[1:, a]
        sel = cols >= 0
        jac[rows_o[sel, a], cols[sel]] = 1.0
        cols = src_cols[: k - 1, a]
        sel = cols >= 0
        jac[rows_o[sel, a], cols[sel]] = -1.0
    return jac


def _coerce_vector(problem: CalibrationProblem, state) -> np.ndarray:
    if isinstance(state, SoundFrameState):
        return _internal_vector(problem, state)
    x = np.asarray(state, dtype=float)
    if x.shape != (problem.layout.dim,):
        raise ValueError(
            f"state vector must have shape ({problem.layout.dim},), got {x.shape}"
        )
    return x


def residual(problem: CalibrationProblem, state) -> np.ndarray:
    """f(x) - z in residual row order.

    ``state`` may be a :class:`SoundFrameState` (converted to the
    problem's parameterization) or a raw vector already in it.
    """
    x = _coerce_vector(problem, state)
    return _model_vector(problem, x) - stacked_measurements(problem)


def jacobian(problem: CalibrationProblem, state) -> np.ndarray:
    """Analytic Jacobian of :func:`residual` with respect to the
    problem's own parameterization."""
    return _jacobian(problem, _coerce_vector(problem, state))


def column_scales(layout: StateLayout) -> np.ndarray:
    kinds = layout.column_kinds()
    return np.array([COLUMN_SCALES[k] for k in kinds])


def _weighted_cost(rw: np.ndarray) -> float:
    return float(rw @ rw)


def _damped_step(jw: np.ndarray, rw: np.ndarray, lam: float) -> np.ndarray:
    """Levenberg step: minimize ||jw s + rw||^2 + lam ||D s||^2."""
    diag = np.sqrt((jw**2).sum(axis=0))
    diag[diag == 0.0] = 1.0
    aug = np.vstack([jw, np.sqrt(lam) * np.diag(diag)])
    rhs = np.concatenate([-rw, np.zeros(jw.shape[1])])
    step, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    return step


def solve_gauss_newton(
    problem: CalibrationProblem, options: GaussNewtonOptions | None = None
) -> CalibrationSolution:
    """Minimize the weighted cost from ``problem.initial_state``.

    Convergence is declared when the scaled step norm drops below
    ``step_tol`` or an accepted step improves the cost by less than
    ``cost_tol`` relative.  A step is only ever accepted if it does not
    increase the cost, so the cost history is non-increasing.  If
    damping cannot rescue a failed step before the ceiling, the current
    iterate is returned with ``converged=False``.
    """
    opts = options or GaussNewtonOptions()
    if problem.initial_state is None:
        raise ValueError("problem has no initial state")
    layout = problem.layout
    x = _internal_vector(problem, problem.initial_state)
    scale = column_scales(layout)
    sig = measurement_sigmas(problem)
    z = stacked_measurements(problem)

    rw = (_model_vector(problem, x) - z) / sig
    cost = _weighted_cost(rw)
    costs = [cost]
    steps: list[float] = []
    converged = False
    iterations = 0

    for iterations in range(1, opts.max_iter + 1):
        jw = (_jacobian(problem, x) / sig[:, None]) * scale[None, :]
        step, _res, rank, _sv = np.linalg.lstsq(jw, -rw, rcond=opts.rank_rtol)
        if rank < layout.dim:
            raise UnobservableConfigurationError(int(rank), layout.dim)

        lam = 0.0
        while True:
            x_new = x + step * scale
            rw_new = (_model_vector(problem, x_new) - z) / sig
            cost_new = _weighted_cost(rw_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                break
            lam = opts.damping_floor if lam == 0.0 else lam * opts.damping_growth
            if lam > opts.damping_ceiling:
                return _finish(problem, x, problem.mode, False, iterations, costs, steps)
            step = _damped_step(jw, rw, lam)

        improvement = cost - cost_new
        x, rw, cost = x_new, rw_new, cost_new
        steps.append(float(np.linalg.norm(step)))
        costs.append(cost)
        if steps[-1] < opts.step_tol or improvement <= opts.cost_tol * max(
            costs[-2], np.finfo(float).tiny
        ):
            converged = True
            break

    return _finish(problem, x, problem.mode, converged, iterations, costs, steps)


def _finish(problem, x, mode, converged, iterations, costs, steps):
    state_sound = _sound_state(problem, x)
    state_mic = to_mic_frame(state_sound)
    return CalibrationSolution(
        state_sound=state_sound,
        state_mic=state_mic,
        mode=mode,
        converged=converged,
        iterations=iterations,
        final_cost=costs[-1],
        cost_history=costs,
        step_norm_history=steps,
    )


def evaluate_errors(solution: CalibrationSolution, truth_mics) -> dict:
    """Microphone-frame error metrics of a solution against ground truth.

    Returns location RMSE (meters, over microphones 2..N), offset RMSE
    (seconds) and drift-rate RMSE over the relative clock parameters.
    Both remaining gauge resolutions (the z reflection survives the
    anchoring) are tried and the one with the smaller location error is
    reported.
    """
    est = solution.state_mic
    truth = mic_frame_vector(list(truth_mics))
    if est.n_mics != truth.n_mics:
        raise ValueError("solution and truth have different microphone counts")

    est_pos = est.positions()[1:]
    truth_pos = truth.positions()[1:]
    direct = np.sqrt(np.mean(np.sum((est_pos - truth_pos) ** 2, axis=1)))
    mirrored = np.sqrt(
        np.mean(np.sum((est_pos * [1.0, 1.0, -1.0] - truth_pos) ** 2, axis=1))
    )
    loc_err = min(direct, mirrored)
    off_err = np.sqrt(
        np.mean((est.relative_offsets() - truth.relative_offsets()) ** 2)
    )
    dri_err = np.sqrt(np.mean((est.relative_drifts() - truth.relative_drifts()) ** 2))
    return {
        "loc_err": float(loc_err),
        "off_err": float(off_err),
        "dri_err": float(dri_err),
        "mirrored": bool(mirrored < direct),
    }

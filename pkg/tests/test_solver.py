"""Solver tests: Jacobian against finite differences, recovery, statistics.

The finite-difference oracle below is the reference implementation for
the analytic Jacobian; it touches only ``residual``, never the
derivative code under test.
"""

import numpy as np
import pytest

import tdoacalib as tc
from tdoacalib.exceptions import SingularGeometryError, UnobservableConfigurationError
from tdoacalib.sim import perturbed_initialization, random_initialization
from conftest import make_config, make_problem


def internal_vector(problem, state):
    """The state re-packed into the problem's own parameterization."""
    if problem.mode == tc.MODE_HYBRID:
        return state.vector.copy()
    parts = state.layout.unpack(state.vector)
    return problem.layout.pack(*parts)


def fd_jacobian(problem, x0, h=1e-6):
    """Central differences column by column on the residual."""
    x0 = np.asarray(x0, dtype=float)
    rows = tc.residual(problem, x0).shape[0]
    out = np.zeros((rows, x0.shape[0]))
    for c in range(x0.shape[0]):
        plus = x0.copy()
        plus[c] += h
        minus = x0.copy()
        minus[c] -= h
        out[:, c] = (tc.residual(problem, plus) - tc.residual(problem, minus)) / (
            2.0 * h
        )
    return out


def assert_jacobian_matches(problem, state, rtol=1e-6, atol=1e-8):
    x0 = internal_vector(problem, state)
    analytic = tc.jacobian(problem, x0)
    numeric = fd_jacobian(problem, x0)
    err = np.abs(numeric - analytic)
    bound = rtol * np.abs(analytic) + atol
    worst = (err - bound).max()
    assert np.all(err <= bound), f"worst inf-norm violation {worst:.3e}"


def test_residual_zero_at_truth_zero_noise():
    mics, traj, problem = make_problem(seed=0, noisy=False)
    r = tc.residual(problem, problem.initial_state)
    assert r.shape == (problem.residual_dim,)
    np.testing.assert_allclose(r, 0.0, atol=1e-12)


def test_residual_row_layout():
    # Poison one measurement entry and find it in the expected row.
    mics, traj, problem = make_problem(seed=1, n_mics=4, noisy=False)
    n, k = problem.n_mics, problem.n_events
    meas = problem.measurements
    ts = meas.tdoa_s.copy()
    ts[2, 3] += 1.0
    poisoned = tc.MeasurementSet(ts, meas.tdoa_m, meas.odometry, 1e-4, 0.01)
    p2 = tc.CalibrationProblem(
        poisoned, problem.intervals, problem.consts,
        initial_state=problem.initial_state,
    )
    r = tc.residual(p2, p2.initial_state)
    hot = np.flatnonzero(np.abs(r) > 0.5)
    assert list(hot) == [2 * (k - 1) + 3]

    tm = meas.tdoa_m.copy()
    tm[1, 2] += 1.0
    poisoned = tc.MeasurementSet(meas.tdoa_s, tm, meas.odometry, 1e-4, 0.01)
    p3 = tc.CalibrationProblem(
        poisoned, problem.intervals, problem.consts,
        initial_state=problem.initial_state,
    )
    r = tc.residual(p3, p3.initial_state)
    hot = np.flatnonzero(np.abs(r) > 0.5)
    assert list(hot) == [n * (k - 1) + 2 * (n - 1) + 1]

    odo = meas.odometry.copy()
    odo[1, 2] += 1.0
    poisoned = tc.MeasurementSet(meas.tdoa_s, meas.tdoa_m, odo, 1e-4, 0.01)
    p4 = tc.CalibrationProblem(
        poisoned, problem.intervals, problem.consts,
        initial_state=problem.initial_state,
    )
    r = tc.residual(p4, p4.initial_state)
    hot = np.flatnonzero(np.abs(r) > 0.5)
    assert list(hot) == [n * (k - 1) + (n - 1) * k + 3 * 1 + 2]


def test_jacobian_matches_finite_differences_hybrid():
    for seed, n in ((0, 4), (1, 6), (2, 8)):
        mics, traj, problem = make_problem(seed=seed, n_mics=n)
        state = perturbed_initialization(mics, traj, 0.3, seed + 50)
        assert_jacobian_matches(problem, state)


def test_jacobian_matches_finite_differences_baseline():
    for seed, n in ((3, 4), (4, 6)):
        mics, traj, problem = make_problem(seed=seed, n_mics=n, mode=tc.MODE_TDOA_M_ONLY)
        state = perturbed_initialization(mics, traj, 0.3, seed + 60)
        assert_jacobian_matches(problem, state)


def test_zero_noise_truth_init_converges_immediately():
    mics, traj, problem = make_problem(seed=5, noisy=False)
    sol = tc.solve_gauss_newton(problem)
    assert sol.converged
    assert sol.iterations <= 2
    assert sol.final_cost < 1e-18


def test_zero_noise_perturbed_init_recovers_truth():
    mics, traj, problem = make_problem(seed=6, n_mics=6, noisy=False)
    problem.initial_state = perturbed_initialization(mics, traj, 0.1, 77)
    sol = tc.solve_gauss_newton(problem)
    assert sol.converged
    err = tc.evaluate_errors(sol, mics)
    assert err["loc_err"] < 1e-6
    assert err["off_err"] < 1e-9
    assert err["dri_err"] < 1e-9


def test_zero_noise_recovery_baseline_mode():
    mics, traj, problem = make_problem(
        seed=7, n_mics=6, mode=tc.MODE_TDOA_M_ONLY, noisy=False
    )
    problem.initial_state = perturbed_initialization(mics, traj, 0.05, 78)
    sol = tc.solve_gauss_newton(problem)
    assert sol.converged
    err = tc.evaluate_errors(sol, mics)
    assert err["loc_err"] < 1e-6
    assert err["off_err"] < 1e-9
    assert err["dri_err"] < 1e-9


def test_cost_history_is_non_increasing():
    mics, traj, problem = make_problem(seed=8, n_mics=6)
    problem.initial_state = perturbed_initialization(mics, traj, 1.0, 79)
    sol = tc.solve_gauss_newton(problem)
    diffs = np.diff(sol.cost_history)
    assert np.all(diffs <= 1e-9 * np.maximum(sol.cost_history[:-1], 1.0))


def test_minimized_cost_follows_chi_squared_mean():
    # Weighted SSE at the optimum ~ chi2 with (rows - params) dof.
    costs, dofs = [], []
    for seed in range(40):
        mics, traj, problem = make_problem(seed=100 + seed, n_mics=5)
        sol = tc.solve_gauss_newton(problem)
        assert sol.converged
        costs.append(sol.final_cost)
        dofs.append(problem.residual_dim - problem.layout.dim)
    dof = dofs[0]
    assert all(d == dof for d in dofs)
    mean_cost = float(np.mean(costs))
    # mean of n chi2(dof) samples: sd = sqrt(2 dof / n)
    band = 5.0 * np.sqrt(2.0 * dof / len(costs))
    assert abs(mean_cost - dof) < band, f"mean {mean_cost:.1f} vs dof {dof}"


def test_weighting_uses_sigma_ratios():
    # With huge odometry noise the odometry rows should stop mattering:
    # solutions under two different sigma_odo values must differ.
    mics, traj, problem = make_problem(seed=9, n_mics=5, sigma_odo=0.01)
    meas = problem.measurements
    loose = tc.MeasurementSet(meas.tdoa_s, meas.tdoa_m, meas.odometry, 1e-4, 1e3)
    p_loose = tc.CalibrationProblem(
        loose, problem.intervals, problem.consts,
        initial_state=problem.initial_state,
    )
    sol_tight = tc.solve_gauss_newton(problem)
    sol_loose = tc.solve_gauss_newton(p_loose)
    assert not np.allclose(sol_tight.state_sound.vector, sol_loose.state_sound.vector)


def test_unobservable_two_mic_baseline_raises():
    # Two microphones, six events, TDOA-M only: 20 parameters against
    # 6 inter-mic rows plus source-only odometry (rank <= 6 + 12 = 18).
    spec = tc.TrajectorySpec((3.0, 3.0, 3.0), 6)
    rng = np.random.default_rng(11)
    mics, traj = tc.random_configuration(spec, 2, rng)
    consts = tc.PhysicalConstants()
    meas = tc.simulate_measurements(mics, traj, consts, 0.0, 0.0, rng)
    meas = tc.MeasurementSet(meas.tdoa_s, meas.tdoa_m, meas.odometry, 1e-4, 0.01)
    problem = tc.CalibrationProblem(
        meas, traj.intervals, consts, mode=tc.MODE_TDOA_M_ONLY,
        initial_state=tc.pack_state(mics, traj),
    )
    with pytest.raises(UnobservableConfigurationError) as info:
        tc.solve_gauss_newton(problem)
    assert info.value.rank < info.value.dim


def test_mic_on_event_raises_singular_geometry():
    mics, traj = make_config(seed=12, n_mics=4)
    consts = tc.PhysicalConstants()
    meas = tc.simulate_measurements(mics, traj, consts, 0.0, 0.0, rng=1)
    meas = tc.MeasurementSet(meas.tdoa_s, meas.tdoa_m, meas.odometry, 1e-4, 0.01)
    bad = [tc.MicrophoneState(traj.positions[2].copy(), m.offset, m.drift) for m in mics[:1]]
    bad += mics[1:]
    state = tc.pack_state(bad, traj)
    problem = tc.CalibrationProblem(meas, traj.intervals, consts, initial_state=state)
    with pytest.raises(SingularGeometryError):
        tc.jacobian(problem, state)


def test_evaluate_errors_two_mic_hand_case():
    # Truth: mic 2 at distance 2 on x; estimate off by 5 cm. With N=2 the
    # alignment is translation-only, so loc RMSE = 0.05/sqrt(1).
    truth = [
        tc.MicrophoneState(np.array([1.0, 2.0, 3.0]), 0.0, 0.0),
        tc.MicrophoneState(np.array([3.0, 2.0, 3.0]), 1e-3, 2e-5),
    ]
    est_mics = [
        tc.MicrophoneState(np.zeros(3), 0.0, 0.0),
        tc.MicrophoneState(np.array([2.05, 0.0, 0.0]), 1.5e-3, 2.5e-5),
    ]
    est = tc.mic_frame_vector(est_mics)
    sol = tc.CalibrationSolution(
        state_sound=None, state_mic=est, mode=tc.MODE_HYBRID,
        converged=True, iterations=1, final_cost=0.0,
        cost_history=[0.0], step_norm_history=[],
    )
    err = tc.evaluate_errors(sol, truth)
    assert err["loc_err"] == pytest.approx(0.05, abs=1e-12)
    assert err["off_err"] == pytest.approx(0.5e-3, abs=1e-12)
    assert err["dri_err"] == pytest.approx(0.5e-5, abs=1e-12)


def test_evaluate_errors_detects_mirror():
    mics, traj = make_config(seed=13, n_mics=5)
    mirrored = [
        tc.MicrophoneState(m.position * np.array([1.0, 1.0, -1.0]), m.offset, m.drift)
        for m in mics
    ]
    # The mirrored set is a perfect reflection: in the mic frame it can
    # only be matched after the z flip, which must come out error-free.
    est = tc.mic_frame_vector(mirrored)
    sol = tc.CalibrationSolution(
        state_sound=None, state_mic=est, mode=tc.MODE_HYBRID,
        converged=True, iterations=1, final_cost=0.0,
        cost_history=[0.0], step_norm_history=[],
    )
    err = tc.evaluate_errors(sol, mics)
    assert err["loc_err"] < 1e-10
    assert err["mirrored"] is True


def test_random_init_solves_match_truth_with_moderate_noise():
    # End to end: random initial positions far from truth still land on
    # the global basin in most trials on the easy trajectory.
    good = 0
    for seed in range(8):
        mics, traj, problem = make_problem(seed=200 + seed, n_mics=6, trajectory=1)
        spec = tc.TrajectorySpec.named(1)
        problem.initial_state = random_initialization(
            spec, 6, traj.event_count, 300 + seed
        )
        try:
            sol = tc.solve_gauss_newton(problem)
        except tc.CalibrationError:
            continue
        err = tc.evaluate_errors(sol, mics)
        if sol.converged and err["loc_err"] < 0.2:
            good += 1
    assert good >= 5


def test_options_are_respected():
    mics, traj, problem = make_problem(seed=14, n_mics=5)
    problem.initial_state = perturbed_initialization(mics, traj, 2.0, 81)
    sol = tc.solve_gauss_newton(problem, tc.GaussNewtonOptions(max_iter=1))
    assert sol.iterations == 1
    assert not sol.converged

import numpy as np
import pytest

import tdoacalib as tc


@pytest.fixture
def consts():
    return tc.PhysicalConstants()


def make_config(seed=0, n_mics=5, trajectory=1):
    """One gauge-anchored random configuration, deterministic in the seed."""
    spec = tc.TrajectorySpec.named(trajectory)
    rng = np.random.default_rng(seed)
    return tc.random_configuration(spec, n_mics, rng)


def make_problem(seed=0, n_mics=5, trajectory=1, sigma_tdoa=1e-4, sigma_odo=0.01,
                 mode=tc.MODE_HYBRID, noisy=True):
    """Configuration, measurements and a truth-initialized problem."""
    mics, traj = make_config(seed, n_mics, trajectory)
    consts = tc.PhysicalConstants()
    rng = np.random.default_rng(seed + 1)
    if noisy:
        meas = tc.simulate_measurements(mics, traj, consts, sigma_tdoa, sigma_odo, rng)
    else:
        noiseless = tc.simulate_measurements(mics, traj, consts, 0.0, 0.0, rng)
        meas = tc.MeasurementSet(
            noiseless.tdoa_s, noiseless.tdoa_m, noiseless.odometry,
            sigma_tdoa, sigma_odo,
        )
    truth = tc.pack_state(mics, traj)
    problem = tc.CalibrationProblem(
        meas, traj.intervals, consts, mode=mode, initial_state=truth
    )
    return mics, traj, problem

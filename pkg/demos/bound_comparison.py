"""How low can any unbiased estimator go, with and without inter-event TDOA.

For a fixed ground-truth scene the Fisher information of the measurement
model yields a lower bound on estimation error.  Sweeping the TDOA noise
level shows two things: adding the inter-event family tightens the bound
for every parameter group, and the bounds grow roughly linearly with the
noise until the odometry accuracy becomes the limiting factor.
"""

import numpy as np

import tdoacalib as tc


def main():
    rng = np.random.default_rng(7)
    mics, traj = tc.random_configuration(tc.TrajectorySpec.named(1), n_mics=6, rng=rng)
    consts = tc.PhysicalConstants()
    sigma_odo = 0.01

    header = (
        f"{'sigma_tdoa':>10} | {'positions (m)':>23} | "
        f"{'offsets (s)':>23} | {'drifts':>23}"
    )
    sub = (
        f"{'':>10} | {'joint':>11}{'inter-mic':>12} | "
        f"{'joint':>11}{'inter-mic':>12} | {'joint':>11}{'inter-mic':>12}"
    )
    print(header)
    print(sub)
    print("-" * len(header))

    for sigma_tdoa in (5e-5, 1e-4, 5e-4, 1e-3):
        joint = tc.compute_crlb_report(
            mics, traj, consts, sigma_tdoa, sigma_odo, "hybrid"
        )
        alone = tc.compute_crlb_report(
            mics, traj, consts, sigma_tdoa, sigma_odo, "tdoa_m_only"
        )
        print(
            f"{sigma_tdoa:>10.0e} | {joint.d_loc:>11.4f}{alone.d_loc:>12.4f} | "
            f"{joint.d_off:>11.2e}{alone.d_off:>12.2e} | "
            f"{joint.d_dri:>11.2e}{alone.d_dri:>12.2e}"
        )

    print()
    print("joint bounds are tighter everywhere; the gap is widest for positions.")


if __name__ == "__main__":
    main()

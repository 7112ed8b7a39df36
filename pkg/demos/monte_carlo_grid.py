"""A small Monte Carlo sweep, end to end.

Runs both estimation modes over a grid of scenes at two TDOA noise
levels, writes the per-trial and aggregate CSV files that the command
line tool also produces, and prints the aggregate table.  Every trial
reseeds itself from (grid seed, cell, trial), so rerunning this script
reproduces the numbers bit for bit.
"""

import tempfile
from pathlib import Path

import tdoacalib as tc
import tdoacalib.io as tio


def main():
    grid = tc.ExperimentGrid(
        trajectories=(1,),
        mic_counts=(6,),
        init_mode="perturbed",
        init_noise_sds=(1.0,),
        tdoa_noise_sds=(1e-4, 5e-4),
        trials_per_cell=20,
        seed=42,
    )
    print(f"{len(grid.cells())} cells x {grid.trials_per_cell} trials, 2 modes each")
    result = tc.run_grid(grid)

    out_dir = Path(tempfile.mkdtemp(prefix="tdoa_grid_"))
    tio.write_grid_config(out_dir / "grid.json", grid)
    tio.write_trial_csv(out_dir / "trials.csv", result.trial_rows)
    tio.write_aggregate_csv(out_dir / "aggregates.csv", result.aggregate_rows)
    print(f"wrote {out_dir}/grid.json, trials.csv, aggregates.csv\n")

    print(
        f"{'sigma_tdoa':>10} {'mode':>12} {'median loc (m)':>15} "
        f"{'median off (s)':>15} {'converged':>10}"
    )
    for agg in result.aggregate_rows:
        print(
            f"{agg['sigma_tdoa']:>10.0e} {agg['mode']:>12} "
            f"{agg['median_loc_err']:>15.4f} {agg['median_off_err']:>15.2e} "
            f"{agg['n_converged']:>7}/{agg['n_trials']}"
        )

    print("\nthe joint mode holds its accuracy as the noise grows; the")
    print("inter-mic-only mode pays a far larger penalty.")


if __name__ == "__main__":
    main()

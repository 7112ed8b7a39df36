"""Command line front end.

Six subcommands cover the full workflow: ``simulate`` writes a synthetic
problem file, ``calibrate`` solves one, ``crlb`` evaluates the estimation
bound for a known configuration, ``estimate-noise`` recovers the TDOA
noise level, ``extract`` turns a multichannel recording into delay
measurements, and ``run-grid`` executes a Monte Carlo experiment grid.

Exit codes: 0 success, 2 usage error, 3 the solver finished without
converging, 4 degenerate or unobservable input, 5 malformed or
unreadable file.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import io as fileio
from . import sim
from .crlb import compute_crlb_report
from .exceptions import (
    DegenerateGeometryError,
    ExtractionError,
    SchemaError,
    SingularGeometryError,
    UnobservableConfigurationError,
)
from .frames import SoundFrameState, StateLayout
from .model import (
    DEFAULT_SOUND_SPEED,
    MODE_HYBRID,
    MODES,
    PhysicalConstants,
    simulate_measurements,
)
from .noise import estimate_noise
from .signal import (
    AudioClip,
    ExtractionConfig,
    extract_tdoa_m,
    extract_tdoa_s,
    read_wav,
)
from .solver import (
    CalibrationProblem,
    GaussNewtonOptions,
    evaluate_errors,
    solve_gauss_newton,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NO_CONVERGENCE = 3
EXIT_DEGENERATE = 4
EXIT_BAD_FILE = 5


def _mic_count(text: str) -> int:
    value = int(text)
    if value < 2:
        raise argparse.ArgumentTypeError("at least 2 microphones are required")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _nonnegative_float(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tdoacalib",
        description=(
            "Joint calibration of microphone positions, clock offsets and "
            "clock drift rates from asynchronous TDOA measurements."
        ),
        epilog=(
            "exit codes: 0 ok, 2 usage, 3 no convergence, "
            "4 degenerate input, 5 bad file"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser(
        "simulate",
        help="draw a random configuration and write a synthetic problem file",
    )
    p.add_argument(
        "--trajectory",
        type=int,
        choices=(1, 2, 3),
        default=1,
        help="built-in event loop: 1 (3x3x3 m, 8 events), "
        "2 (2x6x2 m, 10 events), 3 (4x4x2 m, 14 events)",
    )
    p.add_argument(
        "--mics", type=_mic_count, default=6, help="number of microphones (>= 2)"
    )
    p.add_argument(
        "--sigma-tdoa",
        type=_nonnegative_float,
        default=1e-4,
        help="TDOA noise standard deviation in seconds (default 1e-4)",
    )
    p.add_argument(
        "--sigma-odo",
        type=_nonnegative_float,
        default=0.01,
        help="odometry noise standard deviation in meters per axis (default 0.01)",
    )
    p.add_argument(
        "--sound-speed",
        type=float,
        default=DEFAULT_SOUND_SPEED,
        help="speed of sound in meters per second (default 343)",
    )
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out", required=True, help="output problem file (JSON)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="solve a problem file")
    p.add_argument("--problem", required=True, help="input problem file (JSON)")
    p.add_argument(
        "--mode",
        choices=MODES,
        default=MODE_HYBRID,
        help="measurement families to use (default hybrid)",
    )
    p.add_argument(
        "--init",
        choices=("auto", "random", "perturbed"),
        default="auto",
        help="initial guess: 'auto' takes the file's embedded state if any, "
        "else random; 'random' draws positions in a box around the "
        "dead-reckoned trajectory; 'perturbed' adds noise to the file's "
        "ground truth",
    )
    p.add_argument(
        "--sigma-init",
        type=_nonnegative_float,
        default=1.0,
        help="position noise in meters for --init perturbed (default 1)",
    )
    p.add_argument(
        "--seed", type=int, default=0, help="random seed for the initial guess"
    )
    p.add_argument(
        "--max-iter",
        type=_positive_int,
        default=200,
        help="iteration cap for the solver (default 200)",
    )
    p.add_argument("--out", help="optional output report file (JSON)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser(
        "crlb",
        help="evaluate the estimation lower bound for a problem's ground truth",
    )
    p.add_argument(
        "--problem", required=True, help="problem file with embedded truth (JSON)"
    )
    p.add_argument(
        "--mode",
        choices=MODES,
        default=MODE_HYBRID,
        help="measurement families to account for (default hybrid)",
    )
    p.add_argument("--out", help="optional output report file (JSON)")
    p.set_defaults(func=cmd_crlb)

    p = sub.add_parser(
        "estimate-noise",
        help="estimate the TDOA noise level from a problem's measurements",
    )
    p.add_argument(
        "--problem", required=True, help="problem file with embedded truth (JSON)"
    )
    p.add_argument("--out", help="optional output report file (JSON)")
    p.set_defaults(func=cmd_estimate_noise)

    p = sub.add_parser(
        "extract",
        help="extract TDOA measurements from a multichannel WAV recording",
    )
    p.add_argument("--audio", required=True, help="input WAV file")
    p.add_argument(
        "--events",
        type=_positive_int,
        required=True,
        help="number of sound events the recording contains",
    )
    p.add_argument(
        "--reference",
        type=int,
        default=0,
        help="reference channel index for inter-channel delays (default 0)",
    )
    p.add_argument(
        "--frame-len",
        type=_positive_int,
        default=256,
        help="energy frame length in samples (default 256)",
    )
    p.add_argument(
        "--hop",
        type=_positive_int,
        default=128,
        help="energy frame hop in samples (default 128)",
    )
    p.add_argument(
        "--threshold",
        type=_nonnegative_float,
        default=0.1,
        help="onset threshold as a fraction of the peak frame energy "
        "(default 0.1)",
    )
    p.add_argument(
        "--window",
        type=_positive_int,
        default=None,
        help="correlation window length in samples (default: fit the "
        "longest detected event)",
    )
    p.add_argument(
        "--max-lag",
        type=_positive_int,
        default=None,
        help="correlation lag search radius in samples (default: window / 4)",
    )
    p.add_argument("--out", required=True, help="output measurement file (JSON)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("run-grid", help="run a Monte Carlo experiment grid")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument(
        "--part",
        choices=("a", "b", "c"),
        help="built-in grid: 'a' sweeps the microphone count, 'b' the "
        "initialization noise, 'c' the TDOA noise level",
    )
    source.add_argument("--config", help="grid configuration file (JSON)")
    p.add_argument(
        "--trials",
        type=_positive_int,
        default=None,
        help="override the number of trials per cell",
    )
    p.add_argument(
        "--seed", type=int, default=None, help="override the grid random seed"
    )
    p.add_argument(
        "--jobs",
        type=_positive_int,
        default=1,
        help="worker processes (default 1; results are identical either way)",
    )
    p.add_argument(
        "--out-dir",
        required=True,
        help="directory for trials.csv, aggregates.csv and grid.json",
    )
    p.set_defaults(func=cmd_run_grid)

    return parser


def cmd_simulate(args) -> int:
    spec = sim.TrajectorySpec.named(args.trajectory)
    rng = np.random.default_rng(args.seed)
    mics, traj = sim.random_configuration(spec, args.mics, rng)
    consts = PhysicalConstants(args.sound_speed)
    measurements = simulate_measurements(
        mics, traj, consts, args.sigma_tdoa, args.sigma_odo, rng
    )
    problem = fileio.problem_from_simulation(mics, traj, consts, measurements)
    fileio.write_problem(args.out, problem)
    print(
        f"wrote {args.out}: trajectory {args.trajectory}, "
        f"{args.mics} microphones, {traj.event_count} events"
    )
    return EXIT_OK


def _dead_reckoned_events(problem: fileio.ProblemFile) -> np.ndarray:
    return np.vstack(
        [np.zeros(3), np.cumsum(problem.odometry, axis=0)]
    )


def _random_problem_init(problem: fileio.ProblemFile, rng) -> SoundFrameState:
    # Box around the dead-reckoned trajectory, padded by at least 1 m,
    # so the guess is scale-appropriate even without ground truth.
    events = _dead_reckoned_events(problem)
    lo, hi = events.min(axis=0), events.max(axis=0)
    pad = np.maximum(1.0, 0.25 * (hi - lo))
    n, k = problem.n_mics, problem.n_events
    mic_positions = rng.uniform(lo - pad, hi + pad, size=(n, 3))
    layout = StateLayout(n, k)
    vec = layout.pack(mic_positions, np.zeros(n), np.zeros(n), events)
    return SoundFrameState(vec, n, k)


def _initial_state(problem: fileio.ProblemFile, args) -> SoundFrameState:
    rng = np.random.default_rng(args.seed)
    if args.init == "auto":
        embedded = problem.initial_sound_state()
        if embedded is not None:
            return embedded
        return _random_problem_init(problem, rng)
    if args.init == "random":
        return _random_problem_init(problem, rng)
    if problem.truth is None:
        raise SchemaError(
            "--init perturbed needs a problem file with embedded ground truth"
        )
    return sim.perturbed_initialization(
        problem.truth.mics(), problem.trajectory(), args.sigma_init, rng
    )


def cmd_calibrate(args) -> int:
    problem_file = fileio.read_problem(args.problem)
    if args.mode == MODE_HYBRID and problem_file.tdoa_s is None:
        raise SchemaError(
            f"{args.problem}: no inter-event TDOA block; "
            "use --mode tdoa_m_only or regenerate the file"
        )
    initial = _initial_state(problem_file, args)
    problem = CalibrationProblem(
        measurements=problem_file.measurement_set(),
        intervals=problem_file.intervals,
        consts=problem_file.constants(),
        mode=args.mode,
        initial_state=initial,
    )
    options = GaussNewtonOptions(max_iter=args.max_iter)
    solution = solve_gauss_newton(problem, options)
    print(f"mode: {solution.mode}")
    print(
        f"converged: {'yes' if solution.converged else 'NO'} "
        f"({solution.iterations} iterations)"
    )
    print(f"final cost: {solution.final_cost:.6e}")
    errors = None
    if problem_file.truth is not None:
        errors = evaluate_errors(solution, problem_file.truth.mics())
        print(f"position RMSE:  {errors['loc_err']:.6e} m")
        print(f"offset RMSE:    {errors['off_err']:.6e} s")
        print(f"drift RMSE:     {errors['dri_err']:.6e}")
    if args.out:
        report = fileio.build_report(
            solution, problem_file.sound_speed, errors=errors
        )
        fileio.write_report(args.out, report)
        print(f"wrote {args.out}")
    return EXIT_OK if solution.converged else EXIT_NO_CONVERGENCE


def cmd_crlb(args) -> int:
    problem_file = fileio.read_problem(args.problem)
    if problem_file.truth is None:
        raise SchemaError(f"{args.problem}: bound evaluation needs embedded truth")
    report = compute_crlb_report(
        problem_file.truth.mics(),
        problem_file.trajectory(),
        problem_file.constants(),
        problem_file.sigma_tdoa,
        problem_file.sigma_odo,
        mode=args.mode,
    )
    print(f"mode: {report.mode}")
    print(f"position bound: {report.d_loc:.6e} m")
    print(f"offset bound:   {report.d_off:.6e} s")
    print(f"drift bound:    {report.d_dri:.6e}")
    if report.degenerate:
        print("warning: Fisher matrix is ill conditioned; bounds are approximate")
    if args.out:
        payload = {
            "schema_version": fileio.SCHEMA_VERSION,
            "kind": "report",
            "sound_speed": float(problem_file.sound_speed),
            "mode": report.mode,
            "d_crlb": {
                "loc": float(report.d_loc),
                "off": float(report.d_off),
                "dri": float(report.d_dri),
            },
            "degenerate": bool(report.degenerate),
            "crlb_mic": report.crlb_mic.tolist(),
        }
        fileio.write_report(args.out, payload)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_estimate_noise(args) -> int:
    problem_file = fileio.read_problem(args.problem)
    if problem_file.truth is None:
        raise SchemaError(f"{args.problem}: noise estimation needs embedded truth")
    if problem_file.tdoa_s is None:
        raise SchemaError(f"{args.problem}: no inter-event TDOA block to estimate from")
    estimate = estimate_noise(
        problem_file.measurement_set(),
        problem_file.truth.mics(),
        problem_file.trajectory(),
        problem_file.constants(),
    )
    print(f"sigma (inter-event):      {estimate.sigma_s:.6e} s")
    print(f"sigma (inter-microphone): {estimate.sigma_m:.6e} s")
    print(f"working cases: {', '.join(estimate.cases)}")
    if args.out:
        payload = {
            "schema_version": fileio.SCHEMA_VERSION,
            "kind": "report",
            "sound_speed": float(problem_file.sound_speed),
            "noise": {
                "sigma_s": float(estimate.sigma_s),
                "sigma_m": float(estimate.sigma_m),
                "dof_s": int(estimate.dof_s),
                "dof_m": int(estimate.dof_m),
                "cases": list(estimate.cases),
                "drift_hat": np.asarray(estimate.drift_hat, dtype=float).tolist(),
                "offset_hat": np.asarray(estimate.offset_hat, dtype=float).tolist(),
                "drift_rel_hat": np.asarray(
                    estimate.drift_rel_hat, dtype=float
                ).tolist(),
            },
        }
        fileio.write_report(args.out, payload)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    clip = read_wav(args.audio)
    if not 0 <= args.reference < clip.channel_count:
        raise SchemaError(
            f"reference channel {args.reference} out of range for "
            f"{clip.channel_count} channels"
        )
    config = ExtractionConfig(
        frame_len=args.frame_len,
        hop=args.hop,
        energy_threshold_ratio=args.threshold,
        window_len=args.window,
        max_lag=args.max_lag,
    )
    reference = AudioClip(
        clip.channel(args.reference)[None, :], clip.sample_rate
    )
    delays = extract_tdoa_s(reference, args.events, config)
    tdoa_s = [d.total for d in delays]
    tdoa_m = None
    if clip.channel_count > 1:
        tdoa_m = extract_tdoa_m(clip, args.events, args.reference, config)
    fileio.write_measurements(
        args.out,
        {
            "sample_rate": clip.sample_rate,
            "n_channels": clip.channel_count,
            "n_events": args.events,
            "reference_channel": args.reference,
            "tdoa_s": tdoa_s,
            "tdoa_m": tdoa_m,
        },
    )
    print(
        f"wrote {args.out}: {args.events} events, "
        f"{clip.channel_count} channels at {clip.sample_rate} Hz"
    )
    return EXIT_OK


def cmd_run_grid(args) -> int:
    import os
    import time

    if args.config:
        grid = fileio.read_grid_config(args.config)
    else:
        builder = {"a": sim.part_a_grid, "b": sim.part_b_grid, "c": sim.part_c_grid}
        grid = builder[args.part]()
    if args.trials is not None:
        grid = replace(grid, trials_per_cell=args.trials)
    if args.seed is not None:
        grid = replace(grid, seed=args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    cells = grid.cells()
    total = len(cells) * grid.trials_per_cell
    print(f"running {len(cells)} cells x {grid.trials_per_cell} trials "
          f"({total} trials, {args.jobs} jobs)")
    start = time.perf_counter()
    result = sim.run_grid(grid, jobs=args.jobs)
    elapsed = time.perf_counter() - start
    grid_path = os.path.join(args.out_dir, "grid.json")
    trials_path = os.path.join(args.out_dir, "trials.csv")
    agg_path = os.path.join(args.out_dir, "aggregates.csv")
    fileio.write_grid_config(grid_path, grid)
    fileio.write_trial_csv(trials_path, result.trial_rows)
    fileio.write_aggregate_csv(agg_path, result.aggregate_rows)
    failed = sum(1 for row in result.trial_rows if row["error"])
    print(f"finished in {elapsed:.1f} s, {failed} failed solves")
    print(f"wrote {grid_path}")
    print(f"wrote {trials_path}")
    print(f"wrote {agg_path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return int(code) if isinstance(code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except (
        DegenerateGeometryError,
        SingularGeometryError,
        UnobservableConfigurationError,
        ExtractionError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_FILE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_FILE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())

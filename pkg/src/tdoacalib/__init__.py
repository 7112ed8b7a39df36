"""Joint calibration of asynchronous microphone arrays from sound events.

Estimates microphone positions, clock offsets and clock drift rates
together with the sound-event positions from two TDOA measurement
families (between consecutive events on one microphone, and between
microphones for one event) plus relative odometry of the sound source.
Includes the estimation lower bound, noise-level estimators, delay
extraction from multichannel audio, and a Monte Carlo experiment runner.
"""

from .crlb import CrlbReport, compute_crlb_report, d_crlb, fisher_information
from .exceptions import (
    CalibrationError,
    DegenerateGeometryError,
    DegenerateSignalError,
    EventCountMismatchError,
    ExtractionError,
    FrameGaugeError,
    SchemaError,
    SingularGeometryError,
    UnobservableConfigurationError,
)
from .frames import (
    FrameTransform,
    MicFrameState,
    SoundFrameState,
    StateLayout,
    anchor_frame,
    compute_frame_transform,
    mic_frame_vector,
    pack_state,
    to_mic_frame,
    unpack_state,
)
from .model import (
    DEFAULT_SOUND_SPEED,
    MODE_HYBRID,
    MODE_TDOA_M_ONLY,
    MODES,
    EventTrajectory,
    MeasurementSet,
    MicrophoneState,
    PhysicalConstants,
    measurement_matrices,
    simulate_measurements,
    tdoa_m_model,
    tdoa_s_model,
    toa_exact,
    toa_simplified,
)
from .noise import (
    NoiseEstimate,
    classify_noise_case,
    estimate_noise,
    estimate_sigma_m,
    estimate_sigma_s,
)
from .signal import (
    AudioClip,
    DelayResult,
    ExtractionConfig,
    GccPhatResult,
    detect_rough_endpoints,
    extract_tdoa_m,
    extract_tdoa_s,
    gcc_phat,
    read_wav,
    synthesize_chirp,
    write_wav,
)
from .sim import (
    ExperimentGrid,
    GridResult,
    ModeOutcome,
    TrajectorySpec,
    TrialRecord,
    aggregate_rows,
    part_a_grid,
    part_b_grid,
    part_c_grid,
    perturbed_initialization,
    random_configuration,
    random_initialization,
    run_grid,
    run_trial,
)
from .solver import (
    CalibrationProblem,
    CalibrationSolution,
    GaussNewtonOptions,
    evaluate_errors,
    jacobian,
    residual,
    solve_gauss_newton,
)

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "CalibrationError",
    "CalibrationProblem",
    "CalibrationSolution",
    "CrlbReport",
    "DEFAULT_SOUND_SPEED",
    "DegenerateGeometryError",
    "DegenerateSignalError",
    "DelayResult",
    "EventCountMismatchError",
    "EventTrajectory",
    "ExperimentGrid",
    "ExtractionConfig",
    "ExtractionError",
    "FrameGaugeError",
    "FrameTransform",
    "GaussNewtonOptions",
    "GccPhatResult",
    "GridResult",
    "MODES",
    "MODE_HYBRID",
    "MODE_TDOA_M_ONLY",
    "MeasurementSet",
    "MicFrameState",
    "MicrophoneState",
    "ModeOutcome",
    "NoiseEstimate",
    "PhysicalConstants",
    "SchemaError",
    "SingularGeometryError",
    "SoundFrameState",
    "StateLayout",
    "TrajectorySpec",
    "TrialRecord",
    "UnobservableConfigurationError",
    "aggregate_rows",
    "anchor_frame",
    "classify_noise_case",
    "compute_crlb_report",
    "compute_frame_transform",
    "d_crlb",
    "detect_rough_endpoints",
    "estimate_noise",
    "estimate_sigma_m",
    "estimate_sigma_s",
    "evaluate_errors",
    "extract_tdoa_m",
    "extract_tdoa_s",
    "fisher_information",
    "gcc_phat",
    "jacobian",
    "measurement_matrices",
    "mic_frame_vector",
    "pack_state",
    "part_a_grid",
    "part_b_grid",
    "part_c_grid",
    "perturbed_initialization",
    "random_configuration",
    "random_initialization",
    "read_wav",
    "residual",
    "run_grid",
    "run_trial",
    "simulate_measurements",
    "solve_gauss_newton",
    "synthesize_chirp",
    "tdoa_m_model",
    "tdoa_s_model",
    "to_mic_frame",
    "toa_exact",
    "toa_simplified",
    "unpack_state",
    "write_wav",
]

"""Exception types shared across the package."""

from __future__ import annotations


class CalibrationError(Exception):
    """Base class for all errors raised by this package."""


class FrameGaugeError(CalibrationError):
    """Input does not satisfy the anchored-frame gauge constraints."""


class DegenerateGeometryError(CalibrationError):
    """Anchor points are collinear; no anchored frame can be built."""


class SingularGeometryError(CalibrationError):
    """A microphone coincides with a sound event and range terms blow up."""

    def __init__(self, mic_index: int, event_index: int, distance: float):
        self.mic_index = mic_index
        self.event_index = event_index
        self.distance = distance
        super().__init__(
            f"microphone {mic_index} and event {event_index} are "
            f"{distance:.3e} m apart; range direction is undefined"
        )


class UnobservableConfigurationError(CalibrationError):
    """The linearized problem is rank deficient."""

    def __init__(self, rank: int, dim: int, message: str = ""):
        self.rank = rank
        self.dim = dim
        msg = message or (
            f"normal equations have numerical rank {rank} < {dim} parameters"
        )
        super().__init__(msg)


class SchemaError(CalibrationError):
    """A file does not match the expected schema."""


class ExtractionError(CalibrationError):
    """Audio delay extraction failed."""


class EventCountMismatchError(ExtractionError):
    """Onset detection found a different number of events than requested."""

    def __init__(self, detected: int, expected: int):
        self.detected = detected
        self.expected = expected
        super().__init__(
            f"detected {detected} sound events, expected {expected}; "
            "adjust the energy threshold or frame geometry"
        )


class DegenerateSignalError(ExtractionError):
    """A correlation window carries no signal (all zeros)."""

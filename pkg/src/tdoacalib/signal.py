"""Audio-domain extraction of the two TDOA measurement families.

The pipeline is deliberately two-stage.  Short-time energy gives rough
event onsets at frame resolution; generalized cross correlation with
phase transform (GCC-PHAT) between windows cut around those onsets
refines each delay to sample resolution.  The reported delay is always
``rough + precise`` computed in integer samples, so the decomposition is
exact by construction.

* inter-event delays come from correlating an event's window with the
  next event's window on the same channel,
* inter-microphone delays come from correlating, per event, a channel's
  window against the reference channel's window cut at the same sample
  positions.

All correlation windows are anchored one hop before the rough onset so
that slight early/late detection cannot push the signal out of the
window.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.io.wavfile

from .exceptions import DegenerateSignalError, EventCountMismatchError

_AMPLITUDE_TOL = 1e-9


@dataclass
class AudioClip:
    """Multichannel audio as float samples in [-1, 1].

    ``samples`` has shape (channels, length).  A 1-d array is accepted
    and promoted to a single channel.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.samples.ndim != 2:
            raise ValueError("samples must be 1-d or 2-d")
        if not int(self.sample_rate) > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0 + _AMPLITUDE_TOL:
            raise ValueError("samples must lie in [-1, 1]")

    @property
    def channel_count(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.samples.shape[1] / self.sample_rate

    def channel(self, index: int) -> np.ndarray:
        return self.samples[index]


@dataclass
class ExtractionConfig:
    """Knobs for the two-stage delay extraction.

    ``window_len`` defaults to the longest detected energy run plus a
    four-hop margin; ``max_lag`` defaults to a quarter of the window.
    Both are in samples.
    """

    frame_len: int = 256
    hop: int = 128
    energy_threshold_ratio: float = 0.1
    window_len: int | None = None
    max_lag: int | None = None

    def __post_init__(self):
        if self.frame_len <= 0 or self.hop <= 0:
            raise ValueError("frame_len and hop must be positive")
        if not 0 < self.energy_threshold_ratio < 1:
            raise ValueError("energy_threshold_ratio must be in (0, 1)")


@dataclass
class GccPhatResult:
    """Integer-sample GCC-PHAT peak: lag of the second window behind the first."""

    lag_samples: int
    sample_rate: int
    peak: float

    @property
    def lag(self) -> float:
        """Lag in seconds."""
        return self.lag_samples / self.sample_rate


@dataclass
class DelayResult:
    """One extracted delay, kept in integer samples so rough + precise is exact."""

    rough_samples: int
    precise_samples: int
    sample_rate: int

    @property
    def total_samples(self) -> int:
        return self.rough_samples + self.precise_samples

    @property
    def rough(self) -> float:
        """Frame-resolution part in seconds (a multiple of hop / sample_rate)."""
        return self.rough_samples / self.sample_rate

    @property
    def precise(self) -> float:
        """Correlation refinement in seconds (a multiple of 1 / sample_rate)."""
        return self.precise_samples / self.sample_rate

    @property
    def total(self) -> float:
        return self.total_samples / self.sample_rate


def synthesize_chirp(
    duration: float, f0: float, f1: float, sample_rate: int
) -> AudioClip:
    """Unit-amplitude linear sine sweep from f0 to f1 Hz.

    Deterministic; a zero duration yields an empty clip.  Both endpoint
    frequencies must sit strictly below Nyquist.
    """
    if duration < 0:
        raise ValueError("duration must be nonnegative")
    nyquist = sample_rate / 2
    for name, f in (("f0", f0), ("f1", f1)):
        if not 0 < f < nyquist:
            raise ValueError(f"{name} must be in (0, {nyquist:g}) Hz, got {f}")
    n = int(round(duration * sample_rate))
    if n == 0:
        return AudioClip(np.zeros((1, 0)), sample_rate)
    t = np.arange(n) / sample_rate
    phase = 2.0 * np.pi * (f0 * t + 0.5 * (f1 - f0) * t**2 / duration)
    return AudioClip(np.sin(phase), sample_rate)


def _frame_energies(x: np.ndarray, frame_len: int, hop: int):
    """Energies of hop-spaced frames and their start samples."""
    n = x.size
    if n < frame_len:
        return np.empty(0), np.empty(0, dtype=int)
    starts = np.arange(0, n - frame_len + 1, hop)
    csum = np.concatenate(([0.0], np.cumsum(x * x)))
    energies = csum[starts + frame_len] - csum[starts]
    return energies, starts


def _energy_runs(x: np.ndarray, config: ExtractionConfig):
    """Maximal runs of frames whose energy exceeds the relative threshold.

    Returns (run_start_samples, run_length_frames).
    """
    energies, starts = _frame_energies(x, config.frame_len, config.hop)
    if energies.size == 0:
        return np.empty(0, dtype=int), np.empty(0, dtype=int)
    peak = energies.max()
    if peak <= 0.0:
        return np.empty(0, dtype=int), np.empty(0, dtype=int)
    above = energies > config.energy_threshold_ratio * peak
    padded = np.concatenate(([False], above, [False]))
    edges = np.flatnonzero(np.diff(padded.astype(int)))
    run_starts = edges[0::2]
    run_ends = edges[1::2]
    return starts[run_starts], run_ends - run_starts


def detect_rough_endpoints(
    samples, config: ExtractionConfig | None = None
) -> np.ndarray:
    """Frame-resolution onset samples via short-time energy.

    An onset is the start sample of the first frame of every maximal run
    whose energy exceeds ``energy_threshold_ratio`` times the maximum
    frame energy.  Silence (or all-zero input) yields an empty array.
    """
    config = config or ExtractionConfig()
    x = samples.channel(0) if isinstance(samples, AudioClip) else np.asarray(samples, float)
    if x.ndim != 1:
        raise ValueError("expected a single channel")
    onsets, _lengths = _energy_runs(x, config)
    return onsets


def gcc_phat(
    window_a: np.ndarray,
    window_b: np.ndarray,
    sample_rate: int,
    max_lag: int,
) -> GccPhatResult:
    """Integer-sample delay of ``window_b`` relative to ``window_a``.

    The cross-power spectrum is whitened to its phase, transformed back,
    and the peak is searched within +-``max_lag`` samples.  Windows are
    zero-padded to twice the next power of two, so no circular wrap can
    alias a true delay inside the search range.  Swapping the windows
    negates the lag.
    """
    a = np.asarray(window_a, dtype=float)
    b = np.asarray(window_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("windows must be 1-d and of equal length")
    if not 0 < max_lag < a.size:
        raise ValueError(f"max_lag must be in (0, {a.size}), got {max_lag}")
    if not np.any(a) or not np.any(b):
        raise DegenerateSignalError("correlation window is all zeros")

    nfft = 1 << int(np.ceil(np.log2(2 * a.size)))
    spec_a = np.fft.rfft(a, nfft)
    spec_b = np.fft.rfft(b, nfft)
    cross = spec_b * np.conj(spec_a)
    mag = np.abs(cross)
    floor = mag.max() * 1e-15
    cross = np.where(mag > floor, cross / np.maximum(mag, floor), 0.0)
    cc = np.fft.irfft(cross, nfft)

    window = np.concatenate((cc[-max_lag:], cc[: max_lag + 1]))
    peak_index = int(np.argmax(window))
    lag = peak_index - max_lag
    return GccPhatResult(
        lag_samples=lag, sample_rate=sample_rate, peak=float(window[peak_index])
    )


def _cut(x: np.ndarray, start: int, length: int) -> np.ndarray:
    """Window [start, start+length) with zero padding outside the clip."""
    out = np.zeros(length)
    lo = max(start, 0)
    hi = min(start + length, x.size)
    if hi > lo:
        out[lo - start : hi - start] = x[lo:hi]
    return out


def _resolve_window(config: ExtractionConfig, run_lengths: np.ndarray) -> ExtractionConfig:
    window_len = config.window_len
    if window_len is None:
        longest = int(run_lengths.max()) if run_lengths.size else 1
        window_len = longest * config.hop + config.frame_len + 4 * config.hop
    max_lag = config.max_lag if config.max_lag is not None else max(window_len // 4, 1)
    return replace(config, window_len=window_len, max_lag=max_lag)


def extract_tdoa_s(
    clip: AudioClip,
    event_count: int,
    config: ExtractionConfig | None = None,
) -> list[DelayResult]:
    """Arrival-time differences of consecutive events on one channel.

    Detects exactly ``event_count`` energy runs (else raises
    :class:`EventCountMismatchError`), then for each adjacent pair takes
    the onset difference as the rough delay and refines it with GCC-PHAT
    between windows anchored one hop before each onset.
    """
    if clip.channel_count != 1:
        raise ValueError("inter-event extraction expects a single-channel clip")
    config = config or ExtractionConfig()
    x = clip.channel(0)
    onsets, lengths = _energy_runs(x, config)
    if onsets.size != event_count:
        raise EventCountMismatchError(int(onsets.size), event_count)
    cfg = _resolve_window(config, lengths)

    anchors = onsets - cfg.hop
    windows = [_cut(x, int(a), cfg.window_len) for a in anchors]
    results = []
    for j in range(event_count - 1):
        rough = int(onsets[j + 1] - onsets[j])
        fine = gcc_phat(windows[j], windows[j + 1], clip.sample_rate, cfg.max_lag)
        results.append(
            DelayResult(
                rough_samples=rough,
                precise_samples=fine.lag_samples,
                sample_rate=clip.sample_rate,
            )
        )
    return results


def extract_tdoa_m(
    clip: AudioClip,
    event_count: int,
    reference_channel: int = 0,
    config: ExtractionConfig | None = None,
) -> np.ndarray:
    """Per-event inter-channel delays against a reference channel.

    Onsets are detected on the reference channel only; windows are cut
    at the same anchor on every channel, so the GCC-PHAT lag directly
    measures the arrival-time difference.  Returns seconds, shape
    (channels - 1, events), rows in channel order with the reference
    skipped.
    """
    if not 0 <= reference_channel < clip.channel_count:
        raise ValueError(f"reference channel {reference_channel} out of range")
    if clip.channel_count < 2:
        raise ValueError("inter-microphone extraction needs at least 2 channels")
    config = config or ExtractionConfig()
    ref = clip.channel(reference_channel)
    onsets, lengths = _energy_runs(ref, config)
    if onsets.size != event_count:
        raise EventCountMismatchError(int(onsets.size), event_count)
    cfg = _resolve_window(config, lengths)

    anchors = onsets - cfg.hop
    others = [i for i in range(clip.channel_count) if i != reference_channel]
    delays = np.empty((len(others), event_count))
    for j, anchor in enumerate(anchors):
        ref_win = _cut(ref, int(anchor), cfg.window_len)
        for row, ch in enumerate(others):
            win = _cut(clip.channel(ch), int(anchor), cfg.window_len)
            delays[row, j] = gcc_phat(
                ref_win, win, clip.sample_rate, cfg.max_lag
            ).lag
    return delays


def read_wav(path) -> AudioClip:
    """Load a WAV file as an :class:`AudioClip`.

    16-bit PCM is scaled by 1/32768; 32-bit float is taken as is.
    scipy returns (length,) or (length, channels); both are normalized
    to the (channels, length) convention used here.
    """
    rate, data = scipy.io.wavfile.read(path)
    if data.dtype == np.int16:
        samples = data.astype(float) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(float)
    elif data.dtype == np.int32:
        samples = data.astype(float) / 2147483648.0
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype}")
    if samples.ndim == 2:
        samples = samples.T
    return AudioClip(samples, int(rate))


def write_wav(path, clip: AudioClip) -> None:
    """Write an :class:`AudioClip` as 32-bit float WAV."""
    data = clip.samples.T.astype(np.float32)
    if data.shape[1] == 1:
        data = data[:, 0]
    scipy.io.wavfile.write(path, clip.sample_rate, data)

"""
Zero Frequency Filtering Library

This module detects glottal closure instants (GCIs) with zero frequency
filtering: the pre-emphasized signal is passed through a resonator with a
double pole at zero frequency, the resulting polynomial trend is removed with
a moving mean spanning about one pitch period, a shorter moving mean smooths
away formant ripple, and the positive zero crossings of what remains mark the
excitation instants.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import IO, List, Optional, Union

import numpy as np
from scipy.signal import lfilter

from signal_core import SampledSignal, pre_emphasize

# Configure logging
logger = logging.getLogger("sffspec_logger")

AUTO_PITCH = "auto_pitch"
FIXED_MS = "fixed_ms"

# Pitch search range and fallback
MIN_PITCH_MS = 2.0
MAX_PITCH_MS = 15.0
FALLBACK_PITCH_MS = 10.0
MIN_CORRELATION = 0.3
MIN_ESTIMATE_MS = 100.0
# Analysis region around the energy peak and the frame used to locate it
PITCH_REGION_MS = 200.0
ENERGY_FRAME_MS = 20.0
# Earliest autocorrelation peak within this fraction of the best one wins (octave guard)
PEAK_FRACTION = 0.9

MIN_GCI_GAP_MS = 1.0
# Smoothing half window as a fraction of the trend half window
SMOOTHING_FRACTION = 0.25


class ZffError(Exception):
    """Custom exception for zero frequency filtering errors."""
    pass


class ZffConfigurationError(ZffError):
    """Raised when a ZFF parameter is outside its allowed range."""
    pass


class InsufficientDataError(ZffError):
    """Raised when a signal is too short for the requested analysis."""
    pass


@dataclass(frozen=True)
class ZffConfig:
    """Trend-window and pass-count settings for GCI detection."""
    trend_window_mode: str = AUTO_PITCH
    fixed_window_ms: float = 10.0
    trend_passes: int = 2
    resonator_passes: int = 1
    smoothing_passes: int = 3
    window_scale: float = 1.5

    def __post_init__(self):
        if self.trend_window_mode not in (AUTO_PITCH, FIXED_MS):
            raise ZffConfigurationError(f"Unknown trend window mode: {self.trend_window_mode}")
        if self.trend_window_mode == FIXED_MS and not (2.0 <= self.fixed_window_ms <= 50.0):
            raise ZffConfigurationError(
                f"Fixed trend window must be within [2, 50] ms, got {self.fixed_window_ms}")
        if self.trend_passes < 1 or self.resonator_passes < 1:
            raise ZffConfigurationError("Trend and resonator passes must be at least 1")
        if self.smoothing_passes < 0:
            raise ZffConfigurationError(f"Smoothing passes must be nonnegative, got {self.smoothing_passes}")
        if self.window_scale <= 0:
            raise ZffConfigurationError(f"Window scale must be positive, got {self.window_scale}")

    @classmethod
    def fixed(cls, window_ms: float, **kwargs) -> 'ZffConfig':
        return cls(trend_window_mode=FIXED_MS, fixed_window_ms=window_ms, **kwargs)


@dataclass(frozen=True)
class GciSequence:
    """Strictly increasing sample indices of detected glottal closure instants."""
    locations: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        locations = np.asarray(self.locations, dtype=np.int64).reshape(-1)
        if locations.size > 1 and np.any(np.diff(locations) <= 0):
            raise ZffError("GCI locations must be strictly increasing")
        if locations.size and locations[0] < 0:
            raise ZffError("GCI locations must be nonnegative")
        locations.setflags(write=False)
        object.__setattr__(self, "locations", locations)

    def __len__(self) -> int:
        return self.locations.size

    def seconds(self) -> np.ndarray:
        return self.locations / float(self.sample_rate_hz)

    def shifted(self, offset: int) -> 'GciSequence':
        return GciSequence(self.locations + offset, self.sample_rate_hz)


def zero_freq_resonate(p: SampledSignal, passes: int = 1) -> np.ndarray:
    """Cascade of z0[n] = 2*z0[n-1] - z0[n-2] + p[n] with zero initial state.

    The output grows polynomially with length, so everything stays float64.
    """
    if passes < 1:
        raise ZffConfigurationError(f"Resonator passes must be at least 1, got {passes}")
    z0 = np.asarray(p.samples, dtype=np.float64)
    for _ in range(passes):
        z0 = lfilter([1.0], [1.0, -2.0, 1.0], z0)
    return z0


def remove_trend(z0: np.ndarray, half_window_M: int) -> np.ndarray:
    """Subtract the local mean over [n-M, n+M] from every sample.

    The first and last M samples use the mean of the truncated window, so the
    output keeps the input length.

    Raises:
        ZffConfigurationError: If M <= 0 or 2M+1 exceeds the sequence length
    """
    z0 = np.asarray(z0, dtype=np.float64)
    M = int(half_window_M)
    if M <= 0:
        raise ZffConfigurationError(f"Half window must be positive, got {half_window_M}")
    if 2 * M + 1 > z0.size:
        raise ZffConfigurationError(f"Window of {2 * M + 1} samples exceeds sequence length {z0.size}")

    return z0 - moving_mean(z0, M)


def moving_mean(z: np.ndarray, half_window: int) -> np.ndarray:
    """Centred mean over [n-K, n+K], truncated at both ends."""
    kernel = np.ones(2 * half_window + 1)
    sums = np.convolve(z, kernel, mode="same")
    counts = np.convolve(np.ones(z.size), kernel, mode="same")
    return sums / counts


def _voiced_region(samples: np.ndarray, sample_rate_hz: int) -> np.ndarray:
    """Return the stretch of signal centred on the energy peak."""
    frame = max(1, int(round(ENERGY_FRAME_MS * sample_rate_hz / 1000.0)))
    region = int(round(PITCH_REGION_MS * sample_rate_hz / 1000.0))
    if samples.size <= region:
        return samples

    energy = np.convolve(samples * samples, np.ones(frame), mode="same")
    centre = int(np.argmax(energy))
    start = min(max(0, centre - region // 2), samples.size - region)
    return samples[start:start + region]


def _autocorrelation(x: np.ndarray, lags: np.ndarray) -> np.ndarray:
    corr = np.zeros(lags.size)
    for i, lag in enumerate(lags):
        head, tail = x[:-lag], x[lag:]
        denom = np.sqrt(np.dot(head, head) * np.dot(tail, tail))
        corr[i] = np.dot(head, tail) / denom if denom > 0 else 0.0
    return corr


def _excitation_contour(x: np.ndarray, sample_rate_hz: int, max_lag: int) -> np.ndarray:
    """Integrated, trend-removed and smoothed region, with a fixed 10 ms trend window."""
    M = max(1, int(round(FALLBACK_PITCH_MS * sample_rate_hz / 2000.0)))
    K = max(1, int(round(M * SMOOTHING_FRACTION)))
    M = min(M, (x.size - 1) // 2)
    if M < 1:
        return x
    z = np.cumsum(x)
    for _ in range(2):
        z = remove_trend(z, M)
    for _ in range(3):
        z = moving_mean(z, min(K, (z.size - 1) // 2))
    edge = M + 3 * K
    if z.size > 2 * edge + 2 * max_lag:
        z = z[edge:-edge]
    return z


def estimate_pitch_period(signal: SampledSignal) -> int:
    """Estimate the average pitch period in samples.

    Searches lags between 2 and 15 ms for the normalized autocorrelation peak
    of the region around the energy maximum; the earliest peak within 90 % of
    the best one is taken. Voicing is judged on the raw region and returns
    10 ms when no peak reaches 0.3; the lag itself is read from the integrated
    and smoothed region.

    Raises:
        InsufficientDataError: If the signal is shorter than 100 ms
    """
    fs = signal.sample_rate_hz
    if signal.duration_s * 1000.0 < MIN_ESTIMATE_MS:
        raise InsufficientDataError(
            f"Pitch estimation needs at least {MIN_ESTIMATE_MS:.0f} ms, got {signal.duration_s * 1000.0:.1f} ms")

    fallback = int(round(FALLBACK_PITCH_MS * fs / 1000.0))
    x = _voiced_region(signal.samples, fs)
    x = x - x.mean()
    min_lag = max(1, int(round(MIN_PITCH_MS * fs / 1000.0)))
    max_lag = min(int(round(MAX_PITCH_MS * fs / 1000.0)), x.size - 1)
    if max_lag < min_lag:
        return fallback

    lags = np.arange(min_lag, max_lag + 1)
    best = _autocorrelation(x, lags).max()
    if best < MIN_CORRELATION:
        logger.warning(f"Pitch correlation peak {best:.3f} below {MIN_CORRELATION}; using {FALLBACK_PITCH_MS} ms")
        return fallback

    # The lag is read from the excitation contour, where a first formant near
    # twice F0 cannot outweigh the fundamental
    contour = _excitation_contour(x, fs, max_lag)
    corr = _autocorrelation(contour, lags)
    best = corr.max()
    # Local maxima (the range edges count) close to the best peak
    left = np.concatenate(([-np.inf], corr[:-1]))
    right = np.concatenate((corr[1:], [-np.inf]))
    peaks = np.flatnonzero((corr >= left) & (corr >= right) & (corr >= PEAK_FRACTION * best))
    return int(lags[peaks[0]])


def pick_positive_zero_crossings(z: np.ndarray, sample_rate_hz: int,
                                 min_gap_ms: float = MIN_GCI_GAP_MS) -> GciSequence:
    """Indices n with z[n-1] < 0 and z[n] >= 0, merging crossings closer than min_gap_ms.

    Within a burst of crossings the first one is kept.
    """
    z = np.asarray(z, dtype=np.float64)
    candidates = np.flatnonzero((z[:-1] < 0) & (z[1:] >= 0)) + 1
    min_gap = int(round(min_gap_ms * sample_rate_hz / 1000.0))

    kept: List[int] = []
    for n in candidates:
        if not kept or n - kept[-1] >= min_gap:
            kept.append(int(n))
    return GciSequence(np.array(kept, dtype=np.int64), sample_rate_hz)


def trend_half_window(signal: SampledSignal, config: ZffConfig,
                      pitch_period: Optional[int] = None) -> int:
    """Half window M for trend removal, from a fixed window or the pitch period."""
    fs = signal.sample_rate_hz
    if config.trend_window_mode == FIXED_MS:
        window = config.fixed_window_ms * fs / 1000.0
    else:
        if pitch_period is None:
            try:
                pitch_period = estimate_pitch_period(signal)
            except InsufficientDataError:
                pitch_period = int(round(FALLBACK_PITCH_MS * fs / 1000.0))
                logger.warning(f"Signal too short for pitch estimation; using {pitch_period} samples")
        window = config.window_scale * pitch_period
    return max(1, int(round((window - 1) / 2.0)))


def zff_signal(signal: SampledSignal, config: ZffConfig,
               pitch_period: Optional[int] = None) -> np.ndarray:
    """Pre-emphasis, then one resonator pass and trend_passes trend removals per
    cascade stage, then smoothing_passes moving means over about 0.4 pitch periods.

    Each extra stage integrates twice more and turns the fundamental by half a
    cycle, so the output is negated for even stage counts. Either way the
    excitation sits at a positive-going crossing.
    """
    M = trend_half_window(signal, config, pitch_period)
    # Short tail segments cannot hold a full window
    M = min(M, (len(signal) - 1) // 2)
    if M < 1:
        return np.zeros(len(signal))

    fs = signal.sample_rate_hz
    z = pre_emphasize(signal).samples
    for _ in range(config.resonator_passes):
        z = zero_freq_resonate(SampledSignal(z, fs), 1)
        for _ in range(config.trend_passes):
            z = remove_trend(z, M)

    K = min(max(1, int(round(M * SMOOTHING_FRACTION))), (z.size - 1) // 2)
    for _ in range(config.smoothing_passes):
        z = moving_mean(z, K)
    if config.resonator_passes % 2 == 0:
        z = -z
    return z


def detect_gci(signal: SampledSignal, config: Optional[ZffConfig] = None,
               pitch_period: Optional[int] = None) -> GciSequence:
    """Detect glottal closure instants as positive zero crossings of the ZFF signal.

    Args:
        signal: Raw speech signal (pre-emphasis is applied here)
        config: ZFF settings; defaults to pitch-adaptive window, 2 trend passes
        pitch_period: Optional precomputed pitch period in samples, used instead
            of estimating it from this signal (e.g. the utterance-level period
            when processing one of its segments)
    """
    config = config or ZffConfig()
    z = zff_signal(signal, config, pitch_period)
    gcis = pick_positive_zero_crossings(z, signal.sample_rate_hz)
    logger.debug(f"Detected {len(gcis)} GCIs in {signal.duration_s:.2f} s")
    return gcis


def write_gci_listing(gcis: GciSequence, target: Union[str, Path, IO[str]],
                      seconds: bool = False) -> None:
    """Write one GCI per line, as sample index or as seconds with 6 decimals."""
    if seconds:
        lines = [f"{t:.6f}" for t in gcis.seconds()]
    else:
        lines = [str(int(n)) for n in gcis.locations]
    text = "".join(line + "\n" for line in lines)

    if hasattr(target, "write"):
        target.write(text)
    else:
        path = Path(target)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")

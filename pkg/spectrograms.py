"""
Spectrogram Library

This module builds the three time-frequency feature matrices compared by the
toolkit: the pitch-synchronous SFF spectrogram (envelope averaged between
successive GCIs), the fixed-frame SFF spectrogram (envelope averaged over
20 ms frames) and the STFT magnitude spectrogram. All of them go through the
same log compression and right zero-padding to a fixed width.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy.signal import get_window

from sff_filterbank import SffEnvelope
from signal_core import SampledSignal
from zff_gci import GciSequence

# Configure logging
logger = logging.getLogger("sffspec_logger")

DEFAULT_LOG_FLOOR = 1e-10
DEFAULT_PAD_WIDTH = 1077

DEFAULT_SFF_FRAME_MS = 20.0
DEFAULT_SFF_OVERLAP = 0.5
DEFAULT_STFT_FRAME_MS = 40.0
DEFAULT_STFT_HOP_MS = 10.0
DEFAULT_DFT_LENGTH = 800


class FeatureKind(Enum):
    """Kinds of feature matrix; the value is the on-disk kind code."""
    PITCH_SYNC_SFF = 0
    SFF_FIXED_FRAME = 1
    STFT = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> 'FeatureKind':
        try:
            return cls[label.strip().upper()]
        except KeyError:
            raise SpectrogramConfigurationError(f"Unknown feature kind: {label}")


class SpectrogramError(Exception):
    """Custom exception for spectrogram construction errors."""
    pass


class InsufficientGciError(SpectrogramError):
    """Raised when fewer than two GCIs are available for subsampling."""
    pass


class SpectrogramConfigurationError(SpectrogramError):
    """Raised when framing parameters are invalid."""
    pass


class LogDomainError(SpectrogramError):
    """Raised when log compression receives negative amplitudes."""
    pass


@dataclass(frozen=True)
class FeatureMatrix:
    """K x W log-amplitude matrix, right-padded with zero columns to a fixed width."""
    values: np.ndarray
    kind: FeatureKind
    bin_freqs_hz: np.ndarray
    column_times_s: np.ndarray
    pad_columns: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise SpectrogramError(f"Feature matrix must be 2-D, got shape {values.shape}")
        K, W = values.shape
        if np.asarray(self.bin_freqs_hz).size != K:
            raise SpectrogramError(f"Expected {K} bin frequencies, got {np.asarray(self.bin_freqs_hz).size}")
        if np.asarray(self.column_times_s).size != W:
            raise SpectrogramError(f"Expected {W} column times, got {np.asarray(self.column_times_s).size}")
        if not (0 <= self.pad_columns < W):
            raise SpectrogramError(f"Pad column count {self.pad_columns} must be in [0, {W})")
        if self.pad_columns and np.any(values[:, W - self.pad_columns:] != 0.0):
            raise SpectrogramError("Padded columns must be exactly zero")
        if not np.all(np.isfinite(values)):
            raise SpectrogramError("Feature matrix contains non-finite values")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def used_columns(self) -> int:
        """Number of columns holding data (width minus padding)."""
        return self.width - self.pad_columns


def pitch_sync_subsample(env: SffEnvelope, gcis: GciSequence,
                         inclusive: bool = False) -> np.ndarray:
    """Average the envelope over every interval between successive GCIs.

    Column l is the mean of e[k, i] for i in [s[l], s[l+1]); samples before
    the first and after the last GCI are discarded. With inclusive=True the
    sum runs over s[l]..s[l+1] inclusive and is still divided by
    s[l+1] - s[l], reproducing the literal printed formula for comparison.

    Raises:
        InsufficientGciError: If fewer than two GCIs are given
        SpectrogramError: If a GCI lies outside the envelope
    """
    locations = gcis.locations
    if locations.size < 2:
        raise InsufficientGciError(f"Need at least 2 GCIs, got {locations.size}")
    if locations[-1] >= env.n_samples:
        raise SpectrogramError(f"GCI at {locations[-1]} beyond envelope of {env.n_samples} samples")

    lengths = np.diff(locations).astype(np.float64)
    values = env.values
    if inclusive:
        sums = np.add.reduceat(values[:, :locations[-1] + 1], locations[:-1], axis=1)
        # reduceat stops one short of the next GCI; add the shared boundary sample
        sums[:, :-1] += values[:, locations[1:-1]]
    else:
        sums = np.add.reduceat(values[:, :locations[-1]], locations[:-1], axis=1)
    return sums / lengths


def whole_segment_column(env: SffEnvelope) -> np.ndarray:
    """Single column holding the per-bin mean of the whole envelope."""
    return env.values.mean(axis=1, keepdims=True)


def _frame_starts(n_samples: int, frame: int, hop: int) -> Tuple[np.ndarray, np.ndarray]:
    """Start and end indices of full frames plus a trailing partial frame."""
    if n_samples <= frame:
        return np.array([0]), np.array([n_samples])
    starts = np.arange(0, n_samples - frame + 1, hop)
    ends = starts + frame
    if ends[-1] < n_samples:
        starts = np.append(starts, starts[-1] + hop)
        ends = np.append(ends, n_samples)
    return starts, ends


def fixed_frame_subsample(env: SffEnvelope, frame_ms: float = DEFAULT_SFF_FRAME_MS,
                          overlap_fraction: float = DEFAULT_SFF_OVERLAP) -> np.ndarray:
    """Average the envelope over fixed overlapping frames.

    A trailing partial frame is averaged over its actual length; a frame
    longer than the signal yields a single column.
    """
    if frame_ms <= 0:
        raise SpectrogramConfigurationError(f"Frame length must be positive, got {frame_ms}")
    if not (0.0 <= overlap_fraction < 1.0):
        raise SpectrogramConfigurationError(f"Overlap must be in [0, 1), got {overlap_fraction}")

    fs = env.sample_rate_hz
    frame = max(1, int(round(frame_ms * fs / 1000.0)))
    hop = max(1, int(round(frame * (1.0 - overlap_fraction))))
    starts, ends = _frame_starts(env.n_samples, frame, hop)

    columns = np.empty((env.values.shape[0], starts.size))
    for j, (start, end) in enumerate(zip(starts, ends)):
        columns[:, j] = env.values[:, start:end].mean(axis=1)
    return columns


def fixed_frame_times(n_samples: int, sample_rate_hz: int, frame_ms: float,
                      overlap_fraction: float) -> np.ndarray:
    """Centre time in seconds of every fixed-frame column."""
    frame = max(1, int(round(frame_ms * sample_rate_hz / 1000.0)))
    hop = max(1, int(round(frame * (1.0 - overlap_fraction))))
    starts, ends = _frame_starts(n_samples, frame, hop)
    return (starts + ends) / 2.0 / sample_rate_hz


def stft_bin_mask(sample_rate_hz: int, dft_length: int, band_lo_hz: float,
                  band_hi_hz: float) -> np.ndarray:
    """Boolean mask of rfft bins with band_lo < f <= band_hi."""
    freqs = np.fft.rfftfreq(dft_length, d=1.0 / sample_rate_hz)
    return (freqs > band_lo_hz) & (freqs <= band_hi_hz)


def stft_spectrogram(signal: SampledSignal, frame_ms: float = DEFAULT_STFT_FRAME_MS,
                     hop_ms: float = DEFAULT_STFT_HOP_MS, dft_length: int = DEFAULT_DFT_LENGTH,
                     band_lo_hz: float = 0.0, band_hi_hz: float = 4000.0
                     ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hamming-windowed STFT magnitude restricted to the analysis band.

    Bins follow the same convention as the SFF bank (band_lo excluded,
    band_hi included), so 0-4000 Hz with an 800-point DFT at 16 kHz gives 200
    rows at 20 Hz spacing. The window is the DFT-periodic Hamming window.

    Returns:
        Tuple of (K x L magnitudes, bin frequencies in Hz, frame centre times in s)

    Raises:
        SpectrogramConfigurationError: If hop <= 0 or the DFT is shorter than a frame
    """
    fs = signal.sample_rate_hz
    if hop_ms <= 0:
        raise SpectrogramConfigurationError(f"Hop must be positive, got {hop_ms} ms")
    if frame_ms <= 0:
        raise SpectrogramConfigurationError(f"Frame length must be positive, got {frame_ms} ms")
    frame = int(round(frame_ms * fs / 1000.0))
    hop = max(1, int(round(hop_ms * fs / 1000.0)))
    if dft_length < frame:
        raise SpectrogramConfigurationError(f"DFT length {dft_length} shorter than frame of {frame} samples")

    x = signal.samples
    if x.size < frame:
        x = np.concatenate((x, np.zeros(frame - x.size)))
    n_frames = 1 + (x.size - frame) // hop
    frames = np.lib.stride_tricks.sliding_window_view(x, frame)[::hop][:n_frames]

    window = get_window("hamming", frame)
    spectrum = np.abs(np.fft.rfft(frames * window, n=dft_length, axis=1))
    mask = stft_bin_mask(fs, dft_length, band_lo_hz, band_hi_hz)
    freqs = np.fft.rfftfreq(dft_length, d=1.0 / fs)[mask]
    times = (np.arange(n_frames) * hop + frame / 2.0) / fs
    return spectrum[:, mask].T.copy(), freqs, times


def log_compress(m: np.ndarray, floor: float = DEFAULT_LOG_FLOOR) -> np.ndarray:
    """Natural log of max(m, floor).

    Raises:
        LogDomainError: If any entry is negative
    """
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise LogDomainError("Log compression requires nonnegative amplitudes")
    return np.log(np.maximum(m, floor))


def pad_to_width(m: np.ndarray, width: int, kind: FeatureKind,
                 bin_freqs_hz: np.ndarray, column_times_s: np.ndarray) -> FeatureMatrix:
    """Right-pad with zero columns to exactly width, truncating wider input.

    Padding goes after log compression, so pad entries are exactly 0. Column
    times of pad columns are set to 0.
    """
    if width < 1:
        raise SpectrogramConfigurationError(f"Width must be positive, got {width}")
    m = np.asarray(m, dtype=np.float64)
    column_times_s = np.asarray(column_times_s, dtype=np.float64)
    K, L = m.shape

    if L > width:
        logger.warning(f"{kind.label}: {L} columns exceed width {width}; truncating {L - width} from the right")
        return FeatureMatrix(m[:, :width].copy(), kind, np.asarray(bin_freqs_hz, dtype=np.float64),
                             column_times_s[:width].copy(), pad_columns=0)

    values = np.zeros((K, width))
    values[:, :L] = m
    times = np.zeros(width)
    times[:L] = column_times_s
    return FeatureMatrix(values, kind, np.asarray(bin_freqs_hz, dtype=np.float64), times,
                         pad_columns=width - L)

"""
Signal Core Library

This module provides the fundamental signal types shared by every stage of the
toolkit: sampled audio, utterance segments, WAV ingestion, pre-emphasis and
fixed-length segmentation.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import soundfile as sf

# Configure logging
logger = logging.getLogger("sffspec_logger")

# Subtypes accepted by load_wav: integer PCM and 32-bit float, little-endian RIFF
SUPPORTED_SUBTYPES = ("PCM_16", "PCM_24", "PCM_32", "FLOAT")
# Plain and WAVE_FORMAT_EXTENSIBLE RIFF/WAVE headers
RIFF_FORMATS = ("WAV", "WAVEX")


class SignalError(Exception):
    """Custom exception for signal handling errors."""
    pass


class WavFormatError(SignalError):
    """Raised when a file is not a readable RIFF/WAVE container."""
    pass


class UnsupportedCodecError(SignalError):
    """Raised when the WAV sample encoding is not supported."""
    pass


class ChannelAmbiguityError(SignalError):
    """Raised when a multichannel file is read without a channel selection."""
    pass


class EmptyInputError(SignalError):
    """Raised when an operation receives a signal with no samples."""
    pass


class InvalidSignalError(SignalError):
    """Raised when signal samples or sample rate violate the type invariants."""
    pass


@dataclass(frozen=True)
class SampledSignal:
    """Mono audio samples with their sample rate.

    The sample array is stored as a read-only float64 copy so a signal can be
    shared between threads without defensive copies.
    """
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64).reshape(-1)
        if samples.size == 0:
            raise EmptyInputError("Signal has no samples")
        if not np.all(np.isfinite(samples)):
            raise InvalidSignalError("Signal contains non-finite samples")
        if int(self.sample_rate_hz) <= 0:
            raise InvalidSignalError(f"Sample rate must be positive, got {self.sample_rate_hz}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        """Duration of the signal in seconds."""
        return self.samples.size / self.sample_rate_hz

    def scaled(self, factor: float) -> 'SampledSignal':
        """Return a copy with every sample multiplied by factor."""
        return SampledSignal(self.samples * factor, self.sample_rate_hz)


@dataclass(frozen=True)
class Segment:
    """A fixed-length chunk of an utterance carrying the utterance label."""
    parent_id: str
    index: int
    signal: SampledSignal
    label: Optional[int] = None
    start_sample: int = field(default=0)

    @property
    def duration_s(self) -> float:
        return self.signal.duration_s


def load_wav(path: Union[str, Path], channel: Optional[int] = None) -> SampledSignal:
    """Read a RIFF/WAVE file into a SampledSignal.

    Integer PCM is scaled to [-1, 1] by the full-scale value of its type
    (16-bit 32767 reads as 32767/32768). Unknown RIFF chunks are skipped by
    the decoder.

    Args:
        path: Path to the WAV file
        channel: Zero-based channel to read from a multichannel file

    Returns:
        The decoded signal

    Raises:
        WavFormatError: If the file is missing or the header is malformed
        UnsupportedCodecError: If the encoding is not 16/24/32-bit PCM or 32-bit float
        ChannelAmbiguityError: If the file has several channels and none was selected
    """
    path = Path(path)
    if not path.is_file():
        raise WavFormatError(f"File not found: {path}")

    try:
        info = sf.info(str(path))
    except (RuntimeError, sf.SoundFileError) as e:
        raise WavFormatError(f"Malformed WAV header in {path}: {e}")

    if info.format not in RIFF_FORMATS:
        raise WavFormatError(f"{path} is not a RIFF/WAVE container (format {info.format})")
    if info.subtype not in SUPPORTED_SUBTYPES:
        raise UnsupportedCodecError(f"Unsupported WAV encoding {info.subtype} in {path}")
    if info.endian not in ("FILE", "LITTLE"):
        raise UnsupportedCodecError(f"Unsupported byte order {info.endian} in {path}")

    if info.channels > 1 and channel is None:
        raise ChannelAmbiguityError(
            f"{path} has {info.channels} channels; select one explicitly")
    if channel is not None and not (0 <= channel < info.channels):
        raise ChannelAmbiguityError(f"Channel {channel} not present in {path} ({info.channels} channels)")

    try:
        data, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, sf.SoundFileError) as e:
        raise WavFormatError(f"Failed to decode {path}: {e}")

    samples = data[:, channel if channel is not None else 0]
    if samples.size == 0:
        raise EmptyInputError(f"{path} contains no samples")

    logger.debug(f"Loaded {path.name}: {samples.size} samples at {sample_rate} Hz ({info.subtype})")
    return SampledSignal(samples, sample_rate)


def write_wav(path: Union[str, Path], signal: SampledSignal, subtype: str = "PCM_16") -> None:
    """Write a signal as a little-endian WAV file."""
    if subtype not in SUPPORTED_SUBTYPES:
        raise UnsupportedCodecError(f"Unsupported WAV encoding {subtype}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), np.clip(signal.samples, -1.0, 1.0), signal.sample_rate_hz,
             subtype=subtype, format="WAV")


def pre_emphasize(signal: SampledSignal) -> SampledSignal:
    """First difference p[n] = s[n] - s[n-1] with s[-1] = 0, length preserved."""
    return SampledSignal(np.diff(signal.samples, prepend=0.0), signal.sample_rate_hz)


def segment_utterance(signal: SampledSignal, seg_seconds: float, parent_id: str = "",
                      label: Optional[int] = None) -> List[Segment]:
    """Split an utterance into consecutive non-overlapping segments.

    Every segment but the last is exactly seg_seconds long; the remainder is
    kept as a shorter final segment and an exact multiple leaves no empty tail.

    Raises:
        EmptyInputError: If the signal has no samples
        InvalidSignalError: If seg_seconds is not positive
    """
    if seg_seconds <= 0:
        raise InvalidSignalError(f"Segment length must be positive, got {seg_seconds}")
    if signal is None or len(signal) == 0:
        raise EmptyInputError("Cannot segment an empty signal")

    seg_len = max(1, int(round(seg_seconds * signal.sample_rate_hz)))
    segments = []
    for index, start in enumerate(range(0, len(signal), seg_len)):
        chunk = signal.samples[start:start + seg_len]
        segments.append(Segment(
            parent_id=parent_id,
            index=index,
            signal=SampledSignal(chunk, signal.sample_rate_hz),
            label=label,
            start_sample=start,
        ))
    logger.debug(f"Split '{parent_id}' ({signal.duration_s:.2f} s) into {len(segments)} segments")
    return segments


def find_wav_files(paths: Sequence[Union[str, Path]]) -> List[Path]:
    """Expand files and directories (searched recursively) into a sorted list of .wav paths."""
    found = set()
    for p in paths:
        p = Path(p)
        if p.is_dir():
            found.update(f for f in p.rglob("*") if f.is_file() and f.suffix.lower() == ".wav")
        elif p.is_file():
            found.add(p)
        else:
            logger.warning(f"Input {p} does not exist")
    return sorted(found)

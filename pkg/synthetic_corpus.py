"""
Synthetic Corpus Library

Source-filter synthesis of vowel-like signals with known excitation instants,
and small labelled four-class corpora built from them. The known instants
serve as ground truth for GCI detection; the corpora exercise extraction and
training end to end without licensed speech data.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy.signal import lfilter

from dataset_manifest import LABELS, Manifest, ManifestEntry
from signal_core import SampledSignal, write_wav

# Configure logging
logger = logging.getLogger("sffspec_logger")

F0Spec = Union[float, Tuple[float, float]]
Formants = Sequence[Tuple[float, float]]


@dataclass(frozen=True)
class EmotionVoice:
    """F0 contour (start, end) and formants of one synthetic class."""
    f0_hz: Tuple[float, float]
    formants: Tuple[Tuple[float, float], ...]


# Class prototypes: flat high, rising, flat low, falling
EMOTION_VOICES = {
    "anger": EmotionVoice((210.0, 210.0), ((800.0, 90.0), (1800.0, 120.0), (3000.0, 200.0))),
    "happy": EmotionVoice((150.0, 250.0), ((600.0, 90.0), (2300.0, 120.0), (3200.0, 200.0))),
    "neutral": EmotionVoice((120.0, 120.0), ((500.0, 80.0), (1500.0, 100.0), (2500.0, 150.0))),
    "sad": EmotionVoice((140.0, 90.0), ((350.0, 80.0), (1000.0, 100.0), (2200.0, 150.0))),
}


class SynthesisError(Exception):
    """Custom exception for synthetic signal errors."""
    pass


def _f0_track(f0: F0Spec, n_samples: int) -> np.ndarray:
    if isinstance(f0, (tuple, list)):
        start, end = float(f0[0]), float(f0[1])
    else:
        start = end = float(f0)
    if start <= 0 or end <= 0:
        raise SynthesisError(f"F0 must be positive, got {f0}")
    return np.linspace(start, end, n_samples)


def excitation_instants(f0: F0Spec, duration_s: float, sample_rate_hz: int,
                        start_s: float = 0.0) -> np.ndarray:
    """Sample indices of glottal pulses following an F0 that is constant or linear in time.

    The first pulse sits at start_s; the next ones fall where the cumulative
    phase of the F0 track completes another cycle.
    """
    n = int(round(duration_s * sample_rate_hz))
    first = int(round(start_s * sample_rate_hz))
    if n <= 0 or first >= n:
        raise SynthesisError(f"No room for pulses: {n} samples, first pulse at {first}")
    track = _f0_track(f0, n - first)
    # phase[i] = cycles completed from the first pulse up to sample first + i
    phase = np.concatenate(([0.0], np.cumsum(track[:-1]) / sample_rate_hz))
    cycles = np.floor(phase)
    steps = np.flatnonzero(np.diff(cycles) > 0) + 1
    return np.concatenate(([0], steps)).astype(np.int64) + first


def impulse_train(f0_hz: float, duration_s: float, sample_rate_hz: int,
                  start_s: float = 0.0) -> Tuple[SampledSignal, np.ndarray]:
    """Unit impulses at the excitation instants of a constant F0."""
    n = int(round(duration_s * sample_rate_hz))
    instants = excitation_instants(f0_hz, duration_s, sample_rate_hz, start_s)
    x = np.zeros(n)
    x[instants] = 1.0
    return SampledSignal(x, sample_rate_hz), instants


def resonate(x: np.ndarray, formants: Formants, sample_rate_hz: int) -> np.ndarray:
    """Cascade of damped second-order resonators, one per (frequency, bandwidth)."""
    y = np.asarray(x, dtype=np.float64)
    for freq, bandwidth in formants:
        if not (0 < freq < sample_rate_hz / 2.0) or bandwidth <= 0:
            raise SynthesisError(f"Invalid formant ({freq} Hz, {bandwidth} Hz) at {sample_rate_hz} Hz")
        r = np.exp(-np.pi * bandwidth / sample_rate_hz)
        theta = 2.0 * np.pi * freq / sample_rate_hz
        y = lfilter([1.0 - r], [1.0, -2.0 * r * np.cos(theta), r * r], y)
    return y


def synth_vowel(f0: F0Spec, formants: Formants, duration_s: float, sample_rate_hz: int = 16000,
                start_s: float = 0.01, amplitude: float = 0.5) -> Tuple[SampledSignal, np.ndarray]:
    """Impulse-excited vowel and its true excitation instants.

    Args:
        f0: Constant F0 in Hz, or a (start, end) pair for a linear contour
        formants: (centre frequency, bandwidth) pairs in Hz
        duration_s: Signal length in seconds
        sample_rate_hz: Sampling rate
        start_s: Time of the first pulse
        amplitude: Peak absolute value of the result

    Returns:
        Tuple of (signal, excitation sample indices)
    """
    n = int(round(duration_s * sample_rate_hz))
    instants = excitation_instants(f0, duration_s, sample_rate_hz, start_s)
    source = np.zeros(n)
    source[instants] = 1.0
    y = resonate(source, formants, sample_rate_hz)
    peak = np.max(np.abs(y))
    if peak > 0:
        y = y * (amplitude / peak)
    return SampledSignal(y, sample_rate_hz), instants


def generate_emotion_corpus(out_dir: Union[str, Path], sessions: int = 2, utterances_per_speaker: int = 10,
                            duration_s: float = 0.6, sample_rate_hz: int = 8000, seed: int = 0,
                            noise_level: float = 1e-3) -> Manifest:
    """Write a labelled four-class corpus and its manifest.

    Each session has a female and a male speaker. A speaker scales every F0
    and formant by a small random factor; an utterance adds its own jitter and
    a little white noise. Classes cycle through anger, happy, neutral, sad so
    every speaker covers all four.

    Returns:
        The manifest, also saved as out_dir/manifest.csv
    """
    if sessions < 1 or utterances_per_speaker < 1:
        raise SynthesisError("Need at least one session and one utterance per speaker")
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    entries: List[ManifestEntry] = []

    for s in range(1, sessions + 1):
        session = f"Session{s}"
        for gender, base_scale in (("F", 1.08), ("M", 0.92)):
            speaker = f"{session}{gender}"
            f0_scale = base_scale * rng.uniform(0.97, 1.03)
            formant_scale = rng.uniform(0.96, 1.04)
            for u in range(utterances_per_speaker):
                label = u % len(LABELS)
                voice = EMOTION_VOICES[LABELS[label]]
                jitter = rng.uniform(0.97, 1.03)
                f0 = (voice.f0_hz[0] * f0_scale * jitter, voice.f0_hz[1] * f0_scale * jitter)
                formants = [(min(f * formant_scale, 0.45 * sample_rate_hz), bw) for f, bw in voice.formants]
                signal, _ = synth_vowel(f0, formants, duration_s, sample_rate_hz,
                                        start_s=rng.uniform(0.005, 0.015), amplitude=rng.uniform(0.3, 0.6))
                samples = signal.samples + noise_level * rng.standard_normal(len(signal))
                utterance_id = f"{speaker}_{u:03d}"
                path = out_dir / "wav" / f"{utterance_id}.wav"
                write_wav(path, SampledSignal(samples, sample_rate_hz))
                entries.append(ManifestEntry(utterance_id, path, label, session, speaker, improvised=True))

    manifest = Manifest(entries)
    manifest.save(out_dir / "manifest.csv")
    logger.info(f"Wrote synthetic corpus of {len(entries)} utterances to {out_dir}")
    return manifest

import numpy as np
import pytest

from signal_core import SampledSignal, write_wav
from synthetic_corpus import synth_vowel
from tests.helpers import VOWEL_FORMANTS


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def vowel_120():
    """One second of a 120 Hz synthetic vowel at 16 kHz with its true excitation instants."""
    return synth_vowel(120.0, VOWEL_FORMANTS, 1.0, 16000, start_s=0.01)


@pytest.fixture
def wav_factory(tmp_path):
    """Write samples to a 16-bit WAV file under tmp_path and return its path."""
    def write(name, samples, sample_rate_hz=16000, subtype="PCM_16"):
        path = tmp_path / name
        write_wav(path, SampledSignal(np.asarray(samples, dtype=np.float64), sample_rate_hz), subtype=subtype)
        return path
    return write

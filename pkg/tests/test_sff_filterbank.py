import numpy as np
import pytest

from sff_filterbank import (FilterBankConfigurationError, FilterStabilityError, make_filterbank,
                            sff_envelope)
from signal_core import SampledSignal


def recursion_oracle(p, fs, freq, r):
    """y[n] = -r * y[n-1] + p[n] * exp(j * w * n) evaluated literally, one sample at a time."""
    w = 2.0 * np.pi * (fs / 2.0 - freq) / fs
    y = 0.0 + 0.0j
    out = np.empty(len(p))
    for n, value in enumerate(p):
        y = -r * y + value * np.exp(1j * w * n)
        out[n] = abs(y)
    return out


def unrolled_oracle(p, fs, freq, r, n):
    """|sum_m (-r)^(n-m) p[m] exp(j w m)| at one instant n."""
    w = 2.0 * np.pi * (fs / 2.0 - freq) / fs
    m = np.arange(n + 1)
    return abs(np.sum((-r) ** (n - m) * p[:n + 1] * np.exp(1j * w * m)))


class TestMakeFilterbank:

    @pytest.mark.parametrize("fs, lo, hi, spacing, r, bins", [
        (16000, 0, 4000, 20, 0.9394, 200),
        (16000, 0, 8000, 20, 0.9394, 400),
        (8000, 0, 4000, 4000, 0.5, 1),
    ])
    def test_bin_counts(self, fs, lo, hi, spacing, r, bins):
        bank = make_filterbank(fs, lo, hi, spacing, r)
        assert bank.num_bins == bins
        assert bank.bin_freqs_hz[0] == lo + spacing
        assert bank.bin_freqs_hz[-1] == hi

    def test_non_divisible_band(self):
        with pytest.raises(FilterBankConfigurationError):
            make_filterbank(16000, 0, 4000, 30, 0.9394)

    def test_band_beyond_nyquist(self):
        with pytest.raises(FilterBankConfigurationError):
            make_filterbank(8000, 0, 4100, 20, 0.9394)

    @pytest.mark.parametrize("r", [0.0, 1.0, -0.5, 1.2])
    def test_unstable_pole(self, r):
        with pytest.raises(FilterStabilityError):
            make_filterbank(16000, 0, 4000, 20, r)


class TestSffEnvelope:

    def test_zero_signal(self):
        bank = make_filterbank(16000)
        env = sff_envelope(SampledSignal(np.zeros(800), 16000), bank)
        assert env.values.shape == (200, 800)
        assert np.all(env.values == 0.0)

    def test_matches_recursion_oracle(self):
        """20 random 0.5 s signals, 10 random bins each."""
        rng = np.random.default_rng(7)
        fs = 16000
        bank = make_filterbank(fs)
        for _ in range(20):
            p = rng.standard_normal(fs // 2)
            env = sff_envelope(SampledSignal(p, fs), bank)
            for k in rng.choice(bank.num_bins, size=10, replace=False):
                expected = recursion_oracle(p, fs, bank.bin_freqs_hz[k], bank.pole_radius)
                rms_error = np.sqrt(np.mean((env.values[k] - expected) ** 2))
                assert rms_error / np.sqrt(np.mean(expected ** 2)) < 1e-9

    def test_matches_unrolled_sum(self, rng):
        fs = 8000
        bank = make_filterbank(fs, 0, 4000, 100, 0.9394)
        p = rng.standard_normal(300)
        env = sff_envelope(SampledSignal(p, fs), bank)
        for k in (0, 7, 39):
            for n in (0, 1, 57, 299):
                expected = unrolled_oracle(p, fs, bank.bin_freqs_hz[k], bank.pole_radius, n)
                np.testing.assert_allclose(env.values[k, n], expected, rtol=1e-9)

    def test_tone_steady_state(self):
        fs, r, amplitude = 16000, 0.9394, 0.5
        bank = make_filterbank(fs, 0, 4000, 20, r)
        k = 49  # 1000 Hz
        t = np.arange(fs) / fs
        p = amplitude * np.cos(2 * np.pi * bank.bin_freqs_hz[k] * t)
        env = sff_envelope(SampledSignal(p, fs), bank)
        transient = int(5 / (1 - r))
        expected = recursion_oracle(p, fs, bank.bin_freqs_hz[k], r)
        np.testing.assert_allclose(env.values[k, transient:], expected[transient:], rtol=1e-9)
        steady = env.values[k, transient:transient + 1600].mean()
        np.testing.assert_allclose(steady, amplitude / (2 * (1 - r)), rtol=0.05)

    @pytest.mark.parametrize("alpha", [0.5, 3.0, -2.0])
    def test_homogeneity(self, rng, alpha):
        bank = make_filterbank(16000)
        p = rng.standard_normal(4000)
        base = sff_envelope(SampledSignal(p, 16000), bank).values
        scaled = sff_envelope(SampledSignal(alpha * p, 16000), bank).values
        np.testing.assert_allclose(scaled, abs(alpha) * base, rtol=1e-12, atol=1e-14)

    def test_bounded_by_input_bound(self, rng):
        bank = make_filterbank(16000)
        p = rng.uniform(-0.8, 0.8, size=8000)
        env = sff_envelope(SampledSignal(p, 16000), bank)
        assert np.all(env.values >= 0.0)
        assert env.values.max() <= 0.8 / (1 - bank.pole_radius)

    def test_appending_samples_keeps_earlier_columns(self, rng):
        bank = make_filterbank(16000)
        p = rng.standard_normal(3000)
        short = sff_envelope(SampledSignal(p[:1000], 16000), bank).values
        full = sff_envelope(SampledSignal(p, 16000), bank).values
        np.testing.assert_array_equal(full[:, :1000], short)

    def test_sample_rate_mismatch(self):
        bank = make_filterbank(16000)
        with pytest.raises(FilterBankConfigurationError):
            sff_envelope(SampledSignal(np.zeros(100), 8000), bank)

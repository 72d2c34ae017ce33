import io
import logging

import numpy as np
import pytest

from signal_core import SampledSignal
from synthetic_corpus import impulse_train, synth_vowel
from zff_gci import (GciSequence, InsufficientDataError, ZffConfig, ZffConfigurationError, ZffError,
                     detect_gci, estimate_pitch_period, moving_mean, pick_positive_zero_crossings,
                     remove_trend, write_gci_listing, zero_freq_resonate, zff_signal)
from tests.helpers import OPEN_VOWEL_FORMANTS, VOWEL_FORMANTS


def matched_fraction(detected, truth, tolerance):
    detected = np.asarray(detected)
    hits = [np.min(np.abs(detected - t)) <= tolerance for t in truth] if detected.size else [False]
    return float(np.mean(hits))


class TestZeroFreqResonate:

    def test_impulse_single_pass(self):
        out = zero_freq_resonate(SampledSignal(np.eye(1, 10)[0], 16000), passes=1)
        np.testing.assert_array_equal(out, np.arange(1, 11))

    def test_impulse_two_passes(self):
        out = zero_freq_resonate(SampledSignal(np.eye(1, 12)[0], 16000), passes=2)
        n = np.arange(12)
        np.testing.assert_array_equal(out, (n + 1) * (n + 2) * (n + 3) // 6)

    def test_zero_input(self):
        assert np.all(zero_freq_resonate(SampledSignal(np.zeros(50), 16000)) == 0.0)

    def test_rejects_zero_passes(self):
        with pytest.raises(ZffConfigurationError):
            zero_freq_resonate(SampledSignal(np.zeros(5), 16000), passes=0)


class TestRemoveTrend:

    def test_constant(self):
        np.testing.assert_allclose(remove_trend(np.full(100, 3.5), 10), 0.0, atol=1e-12)

    def test_affine_interior(self):
        n = np.arange(2000, dtype=np.float64)
        M = 25
        out = remove_trend(4.0 - 0.37 * n, M)
        np.testing.assert_allclose(out[M:-M], 0.0, atol=1e-10)

    def test_matches_windowed_mean_oracle(self, rng):
        z = rng.standard_normal(300)
        M = 7
        expected = np.array([z[i] - z[max(0, i - M):i + M + 1].mean() for i in range(z.size)])
        np.testing.assert_allclose(remove_trend(z, M), expected, atol=1e-10)

    def test_rejects_bad_window(self):
        with pytest.raises(ZffConfigurationError):
            remove_trend(np.zeros(10), 0)
        with pytest.raises(ZffConfigurationError):
            remove_trend(np.zeros(10), 5)


class TestMovingMean:

    def test_matches_truncated_window_oracle(self, rng):
        z = rng.standard_normal(50)
        expected = np.array([z[max(0, i - 3):i + 4].mean() for i in range(z.size)])
        np.testing.assert_allclose(moving_mean(z, 3), expected, atol=1e-12)

    def test_remove_trend_is_complement(self, rng):
        z = rng.standard_normal(200)
        np.testing.assert_allclose(remove_trend(z, 9) + moving_mean(z, 9), z, atol=1e-12)


class TestEstimatePitchPeriod:

    def test_impulse_train(self):
        signal, _ = impulse_train(100.0, 1.0, 16000)
        assert abs(estimate_pitch_period(signal) - 160) <= 2

    def test_sinusoid(self):
        t = np.arange(16000) / 16000
        signal = SampledSignal(np.sin(2 * np.pi * 200 * t), 16000)
        assert abs(estimate_pitch_period(signal) - 80) <= 1

    @pytest.mark.parametrize("f0, fs", [(80.0, 16000), (220.0, 16000), (240.0, 8000)])
    def test_formants_do_not_halve_the_period(self, f0, fs):
        signal, _ = synth_vowel(f0, VOWEL_FORMANTS, 1.0, fs)
        assert abs(estimate_pitch_period(signal) - fs / f0) <= 1.5

    def test_white_noise_falls_back(self, rng, caplog):
        signal = SampledSignal(rng.standard_normal(16000), 16000)
        with caplog.at_level(logging.WARNING, logger="sffspec_logger"):
            assert estimate_pitch_period(signal) == 160
        assert "using 10.0 ms" in caplog.text

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            estimate_pitch_period(SampledSignal(np.ones(1500), 16000))


class TestPickPositiveZeroCrossings:

    def test_sinusoid_crossings(self):
        fs = 16000
        n = np.arange(fs)
        z = np.sin(2 * np.pi * 100 * (n - 0.5) / fs)
        gcis = pick_positive_zero_crossings(z, fs)
        assert len(gcis) == 100
        assert np.all(np.diff(gcis.locations) == 160)

    def test_all_negative(self):
        assert len(pick_positive_zero_crossings(-np.ones(100), 16000)) == 0

    def test_chatter_merged(self):
        z = np.array([-1, 1, -1, 1, -1, -1, -1] + [-1] * 30 + [1], dtype=np.float64)
        gcis = pick_positive_zero_crossings(z, 16000, min_gap_ms=1.0)
        assert gcis.locations.tolist() == [1, 37]


class TestDetectGci:

    @pytest.mark.parametrize("resonator_passes", [1, 2])
    @pytest.mark.parametrize("formants", [VOWEL_FORMANTS, OPEN_VOWEL_FORMANTS], ids=["mid", "open"])
    @pytest.mark.parametrize("f0", [80.0, 120.0, 220.0])
    def test_synthetic_vowel(self, f0, formants, resonator_passes):
        fs = 16000
        signal, truth = synth_vowel(f0, formants, 1.0, fs, start_s=0.01)
        gcis = detect_gci(signal, ZffConfig(resonator_passes=resonator_passes))
        assert abs(len(gcis) - len(truth)) <= 4
        tolerance = int(round(0.25e-3 * fs))
        assert matched_fraction(gcis.locations, truth, tolerance) >= 0.95
        median = np.median(np.diff(gcis.locations)) / fs
        assert abs(median - 1.0 / f0) <= 0.05 / f0

    def test_formant_ripple_needs_smoothing(self, vowel_120):
        signal, truth = vowel_120
        assert len(detect_gci(signal, ZffConfig(smoothing_passes=0))) > 2 * len(truth)

    def test_even_cascade_keeps_polarity(self, vowel_120):
        signal, _ = vowel_120
        single = zff_signal(signal, ZffConfig())
        double = zff_signal(signal, ZffConfig(resonator_passes=2))
        middle = slice(4000, 12000)
        assert np.corrcoef(single[middle], double[middle])[0, 1] > 0.9

    @pytest.mark.parametrize("alpha", [0.25, 4.0])
    def test_amplitude_invariance(self, vowel_120, alpha):
        signal, _ = vowel_120
        base = detect_gci(signal).locations
        scaled = detect_gci(signal.scaled(alpha)).locations
        np.testing.assert_array_equal(scaled, base)

    def test_shift_equivariance(self, vowel_120):
        signal, _ = vowel_120
        config = ZffConfig.fixed(10.0)
        m = 237
        shifted = SampledSignal(np.concatenate((np.zeros(m), signal.samples)), signal.sample_rate_hz)
        base = detect_gci(signal, config).locations
        moved = detect_gci(shifted, config).locations - m
        margin = 3 * 80
        interior = lambda locs: locs[(locs > margin) & (locs < len(signal) - margin)]
        assert len(interior(moved)) == len(interior(base))
        assert np.max(np.abs(interior(moved) - interior(base))) <= 1

    def test_strictly_increasing_with_gap(self, vowel_120):
        signal, _ = vowel_120
        locations = detect_gci(signal).locations
        assert np.all(np.diff(locations) >= 16)
        assert locations.min() >= 0 and locations.max() < len(signal)


class TestZffConfig:

    @pytest.mark.parametrize("window_ms", [1.0, 60.0])
    def test_fixed_window_range(self, window_ms):
        with pytest.raises(ZffConfigurationError):
            ZffConfig.fixed(window_ms)

    def test_passes(self):
        with pytest.raises(ZffConfigurationError):
            ZffConfig(trend_passes=0)
        with pytest.raises(ZffConfigurationError):
            ZffConfig(resonator_passes=0)
        with pytest.raises(ZffConfigurationError):
            ZffConfig(smoothing_passes=-1)

    def test_unknown_mode(self):
        with pytest.raises(ZffConfigurationError):
            ZffConfig(trend_window_mode="weekly")


class TestGciSequence:

    def test_must_increase(self):
        with pytest.raises(ZffError):
            GciSequence(np.array([5, 5, 9]), 16000)

    def test_listing_formats(self):
        gcis = GciSequence(np.array([160, 320, 16000]), 16000)
        samples = io.StringIO()
        write_gci_listing(gcis, samples)
        assert samples.getvalue() == "160\n320\n16000\n"
        seconds = io.StringIO()
        write_gci_listing(gcis, seconds, seconds=True)
        assert seconds.getvalue() == "0.010000\n0.020000\n1.000000\n"

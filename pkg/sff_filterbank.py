"""
Single Frequency Filtering Library

This module computes the single frequency filtering (SFF) amplitude envelope:
every analysis frequency is shifted to half the sampling rate and filtered by
a one-pole filter whose pole sits just inside the unit circle, giving an
amplitude value at every sample for every frequency bin.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import lfilter

from signal_core import SampledSignal

# Configure logging
logger = logging.getLogger("sffspec_logger")

DEFAULT_POLE_RADIUS = 0.9394
DEFAULT_SPACING_HZ = 20.0
DEFAULT_BAND_LO_HZ = 0.0
DEFAULT_BAND_HI_HZ = 4000.0

# Tolerance when checking that the band splits into whole bins
_DIVISIBILITY_TOL = 1e-9


class FilterBankError(Exception):
    """Custom exception for SFF filter bank errors."""
    pass


class FilterBankConfigurationError(FilterBankError):
    """Raised when the band, spacing or sample rate are inconsistent."""
    pass


class FilterStabilityError(FilterBankError):
    """Raised when the pole radius would make the filter unstable."""
    pass


@dataclass(frozen=True)
class FilterBank:
    """Analysis band, bin spacing and pole radius of an SFF bank.

    Bins run from band_lo + spacing up to band_hi inclusive, so a 0-4000 Hz
    band at 20 Hz spacing has 200 bins and no bin at DC.
    """
    sample_rate_hz: int
    spacing_hz: float
    band_lo_hz: float
    band_hi_hz: float
    pole_radius: float
    bin_freqs_hz: np.ndarray

    @property
    def num_bins(self) -> int:
        return self.bin_freqs_hz.size

    @property
    def shifted_omegas(self) -> np.ndarray:
        """Normalized shifted frequencies 2*pi*(fs/2 - f_k)/fs per bin."""
        fs = float(self.sample_rate_hz)
        return 2.0 * np.pi * (fs / 2.0 - self.bin_freqs_hz) / fs

    def to_dict(self) -> dict:
        return {
            "sample_rate_hz": self.sample_rate_hz,
            "spacing_hz": self.spacing_hz,
            "band_lo_hz": self.band_lo_hz,
            "band_hi_hz": self.band_hi_hz,
            "pole_radius": self.pole_radius,
        }


@dataclass(frozen=True)
class SffEnvelope:
    """K x N nonnegative amplitude matrix (frequency bin x sample instant)."""
    values: np.ndarray
    filterbank: FilterBank

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != self.filterbank.num_bins:
            raise FilterBankConfigurationError(
                f"Envelope shape {self.values.shape} does not match {self.filterbank.num_bins} bins")

    @property
    def n_samples(self) -> int:
        return self.values.shape[1]

    @property
    def sample_rate_hz(self) -> int:
        return self.filterbank.sample_rate_hz


def make_filterbank(sample_rate_hz: int, band_lo_hz: float = DEFAULT_BAND_LO_HZ,
                    band_hi_hz: float = DEFAULT_BAND_HI_HZ, spacing_hz: float = DEFAULT_SPACING_HZ,
                    pole_radius: float = DEFAULT_POLE_RADIUS) -> FilterBank:
    """Build an SFF filter bank.

    Raises:
        FilterBankConfigurationError: If the band is empty, exceeds Nyquist, or
            does not split into a whole number of bins
        FilterStabilityError: If pole_radius is outside (0, 1)
    """
    if sample_rate_hz <= 0:
        raise FilterBankConfigurationError(f"Sample rate must be positive, got {sample_rate_hz}")
    if not (0.0 < pole_radius < 1.0):
        raise FilterStabilityError(f"Pole radius must lie inside the unit circle, got {pole_radius}")
    if spacing_hz <= 0:
        raise FilterBankConfigurationError(f"Bin spacing must be positive, got {spacing_hz}")
    if not (0.0 <= band_lo_hz < band_hi_hz <= sample_rate_hz / 2.0):
        raise FilterBankConfigurationError(
            f"Band [{band_lo_hz}, {band_hi_hz}] Hz must satisfy 0 <= lo < hi <= {sample_rate_hz / 2.0}")

    ratio = (band_hi_hz - band_lo_hz) / spacing_hz
    num_bins = int(round(ratio))
    if num_bins < 1 or abs(ratio - num_bins) > _DIVISIBILITY_TOL * max(1.0, ratio):
        raise FilterBankConfigurationError(
            f"Band width {band_hi_hz - band_lo_hz} Hz is not a multiple of spacing {spacing_hz} Hz")

    bin_freqs = band_lo_hz + spacing_hz * np.arange(1, num_bins + 1, dtype=np.float64)
    bin_freqs.setflags(write=False)
    return FilterBank(
        sample_rate_hz=int(sample_rate_hz),
        spacing_hz=float(spacing_hz),
        band_lo_hz=float(band_lo_hz),
        band_hi_hz=float(band_hi_hz),
        pole_radius=float(pole_radius),
        bin_freqs_hz=bin_freqs,
    )


def sff_envelope(pre_emphasized: SampledSignal, bank: FilterBank,
                 out: Optional[np.ndarray] = None) -> SffEnvelope:
    """Compute e[k, n] = |y[k, n]| for every bin of the bank.

    The recursion y[k, n] = -r * y[k, n-1] + p[n] * exp(j * w_k * n) with
    y[k, -1] = 0 is evaluated in the demodulated frame g = y * exp(-j * w_k * n),
    where it becomes g[n] = -r * exp(-j * w_k) * g[n-1] + p[n]. |g| = |y| sample
    by sample, so no per-sample oscillator is needed.

    Args:
        pre_emphasized: Pre-emphasized input signal
        bank: Filter bank with the same sample rate
        out: Optional preallocated K x N float64 array

    Raises:
        FilterBankConfigurationError: On a sample-rate mismatch
    """
    if pre_emphasized.sample_rate_hz != bank.sample_rate_hz:
        raise FilterBankConfigurationError(
            f"Signal sampled at {pre_emphasized.sample_rate_hz} Hz but bank built for {bank.sample_rate_hz} Hz")

    p = pre_emphasized.samples
    if out is None:
        out = np.empty((bank.num_bins, p.size), dtype=np.float64)

    poles = -bank.pole_radius * np.exp(-1j * bank.shifted_omegas)
    b = np.array([1.0 + 0.0j])
    for k, pole in enumerate(poles):
        # Bins are independent; each recursion is sequential in n
        g = lfilter(b, np.array([1.0 + 0.0j, -pole]), p)
        np.abs(g, out=out[k])

    return SffEnvelope(values=out, filterbank=bank)

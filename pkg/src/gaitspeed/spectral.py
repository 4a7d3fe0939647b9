"""FFT cadence estimation and the speed = step length x step frequency identity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MPH_PER_MPS = 3600.0 / 1609.344


class NoDominantPeak(ValueError):
    pass


@dataclass(frozen=True)
class Spectrum:
    frequencies: np.ndarray
    magnitudes: np.ndarray
    resolution: float

    @property
    def peak_hz(self) -> float:
        return float(self.frequencies[np.argmax(self.magnitudes)])


@dataclass(frozen=True)
class CadenceEstimate:
    dominant_hz: float
    step_frequency_hz: float
    band: tuple[float, float]

    def to_dict(self) -> dict:
        return {"dominant_hz": self.dominant_hz, "step_frequency_hz": self.step_frequency_hz,
                "band": list(self.band)}


def _next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


def _power(signal: np.ndarray, nfft: int) -> np.ndarray:
    x = signal - signal.mean(axis=0)
    w = np.hanning(len(x))
    if x.ndim > 1:
        w = w[:, None]
    spec = np.fft.rfft(x * w, n=nfft, axis=0)
    # single-sided amplitude scaling: a unit sine peaks near 1
    return np.abs(spec) * (2.0 / w.sum())


def fft_magnitude(signal, sample_rate_hz: float) -> Spectrum:
    """One-sided magnitude spectrum after mean removal, Hann window and zero padding."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or len(x) < 2:
        raise ValueError("fft_magnitude needs a 1-D signal of at least 2 samples")
    nfft = _next_pow2(len(x))
    mags = _power(x, nfft)
    return Spectrum(np.fft.rfftfreq(nfft, d=1.0 / sample_rate_hz), mags, sample_rate_hz / nfft)


def combined_spectrum(accel, sample_rate_hz: float) -> Spectrum:
    """Root-sum-square of the per-axis magnitude spectra of a ``[T, 3]`` signal."""
    a = np.asarray(accel, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    nfft = _next_pow2(len(a))
    mags = np.sqrt((_power(a, nfft) ** 2).sum(axis=1))
    return Spectrum(np.fft.rfftfreq(nfft, d=1.0 / sample_rate_hz), mags, sample_rate_hz / nfft)


def step_frequency(accel, sample_rate_hz: float = 51.0, band=(0.5, 4.0),
                   harmonic_multiplier: float = 2.0, min_peak_ratio: float = 3.0) -> CadenceEstimate:
    """Estimate step frequency from the in-band spectral peak of the acceleration.

    The arm swings once per stride, so the spectral fundamental is multiplied
    by ``harmonic_multiplier`` (two steps per stride) to get steps per second.
    Raises :class:`NoDominantPeak` when the peak is less than
    ``min_peak_ratio`` times the in-band median magnitude.
    """
    a = np.asarray(accel, dtype=np.float64)
    if len(a) < 2 * sample_rate_hz:
        raise ValueError(f"need at least {2 * sample_rate_hz:.0f} samples (~2 s), got {len(a)}")
    lo, hi = float(band[0]), float(band[1])
    spec = combined_spectrum(a, sample_rate_hz)
    inband = (spec.frequencies >= lo) & (spec.frequencies <= hi)
    if not inband.any():
        raise NoDominantPeak(f"no FFT bins inside band {lo}-{hi} Hz")
    mags = spec.magnitudes[inband]
    k = int(np.argmax(mags))
    median = float(np.median(mags))
    if mags[k] <= 0 or mags[k] < min_peak_ratio * median:
        raise NoDominantPeak(f"in-band peak {mags[k]:.3g} is below {min_peak_ratio} x median {median:.3g}")
    dominant = float(spec.frequencies[inband][k])
    return CadenceEstimate(dominant, harmonic_multiplier * dominant, (lo, hi))


def speed_from_cadence(step_length_m: float, step_frequency_hz: float) -> float:
    """Walking speed in m/s as step length times step frequency."""
    if step_length_m < 0 or step_frequency_hz < 0:
        raise ValueError("step length and frequency must be non-negative")
    return step_length_m * step_frequency_hz


def mps_to_mph(speed_mps: float) -> float:
    return speed_mps * MPH_PER_MPS

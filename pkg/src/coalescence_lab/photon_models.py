"""Temporal and spectral modes of the quantum-dot and filtered PDC photons.

Units are fixed throughout the package: times in ns, rates in 1/ns,
frequencies in GHz.  A rate ``a`` in 1/ns corresponds to a linewidth
``a / (2*pi)`` in GHz.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi

SHAPES = ("one_sided", "two_sided")


@dataclass(frozen=True)
class WavepacketSpec:
    """Single-photon temporal mode.

    ``one_sided``: |xi(t)|^2 = a exp(-a (t - t0)) for t >= t0.
    ``two_sided``: |xi(t)|^2 = (a/2) exp(-a |t - t0|), only used as a
    sensitivity alternative for the filtered PDC photon.
    """

    decay_rate: float
    dephasing_rate: float = 0.0
    origin: float = 0.0
    shape: str = "one_sided"
    detuning: float = 0.0  # GHz, carrier offset

    def __post_init__(self):
        if not self.decay_rate > 0:
            raise ValueError(f"decay_rate must be > 0, got {self.decay_rate}")
        if not self.dephasing_rate >= 0:
            raise ValueError(f"dephasing_rate must be >= 0, got {self.dephasing_rate}")
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.shape == "two_sided" and self.dephasing_rate > 0:
            raise ValueError("two_sided packets are dephasing-free")

    @property
    def lifetime(self) -> float:
        return 1.0 / self.decay_rate

    @property
    def linewidth(self) -> float:
        """Spectral FWHM in GHz."""
        if self.shape == "one_sided":
            return (self.decay_rate + 2.0 * self.dephasing_rate) / TWO_PI
        return self.decay_rate * np.sqrt(np.sqrt(2.0) - 1.0) / TWO_PI

    @property
    def coherence_time(self) -> float:
        """T2 = 1 / (a/2 + gamma_d)."""
        return 1.0 / (0.5 * self.decay_rate + self.dephasing_rate)

    def support(self, n_lifetimes: float = 40.0) -> tuple[float, float]:
        """Time interval holding all but ~exp(-n_lifetimes) of the intensity."""
        span = n_lifetimes / self.decay_rate
        lo = self.origin if self.shape == "one_sided" else self.origin - span
        return lo, self.origin + span

    def log_amplitude(self, t):
        t = np.asarray(t, dtype=float)
        a = self.decay_rate
        if self.shape == "one_sided":
            out = 0.5 * np.log(a) - 0.5 * a * (t - self.origin)
            return np.where(t >= self.origin, out, -np.inf)
        return 0.5 * np.log(0.5 * a) - 0.5 * a * np.abs(t - self.origin)

    def amplitude(self, t):
        """Real temporal amplitude xi(t), normalized so that int |xi|^2 dt = 1."""
        return np.exp(self.log_amplitude(t))

    def intensity(self, t):
        return np.exp(2.0 * self.log_amplitude(t))

    def cdf(self, t):
        """Probability that the photon is emitted before ``t``."""
        t = np.asarray(t, dtype=float)
        x = self.decay_rate * (t - self.origin)
        if self.shape == "one_sided":
            return np.where(x > 0, -np.expm1(-np.maximum(x, 0.0)), 0.0)
        return np.where(x < 0, 0.5 * np.exp(np.minimum(x, 0.0)),
                        1.0 - 0.5 * np.exp(-np.maximum(x, 0.0)))

    def sample_times(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` emission times from |xi(t)|^2."""
        scale = 1.0 / self.decay_rate
        if self.shape == "one_sided":
            return self.origin + rng.exponential(scale, n)
        return self.origin + rng.laplace(0.0, scale, n)


@dataclass(frozen=True)
class FabryPerotSpec:
    free_spectral_range: float  # GHz
    finesse: float
    center_frequency_offset: float = 0.0  # GHz

    def __post_init__(self):
        if not self.free_spectral_range > 0:
            raise ValueError("free_spectral_range must be > 0")
        if not self.finesse > 1:
            raise ValueError(f"finesse must be > 1, got {self.finesse}")

    @property
    def peak_fwhm(self) -> float:
        """Exact FWHM of one Airy peak (FSR/F to first order)."""
        fsr, f = self.free_spectral_range, self.finesse
        return 2.0 * fsr / np.pi * np.arcsin(np.pi / (2.0 * f))


def qd_wavepacket(T1: float, T2: float) -> WavepacketSpec:
    """Quantum-dot photon from its lifetime T1 and coherence time T2 (ns)."""
    if not T1 > 0 or not T2 > 0:
        raise ValueError("T1 and T2 must be positive")
    if T2 > 2.0 * T1:
        raise ValueError(f"T2={T2} exceeds the lifetime limit 2*T1={2 * T1}")
    gamma_d = 1.0 / T2 - 1.0 / (2.0 * T1)
    return WavepacketSpec(decay_rate=1.0 / T1, dephasing_rate=max(gamma_d, 0.0))


def pdc_wavepacket(filter_fwhm: float, shape: str = "one_sided",
                   origin: float = 0.0) -> WavepacketSpec:
    """Heralded PDC photon behind a Lorentzian filter of FWHM ``filter_fwhm`` (GHz).

    The photon is decoherence-free; its decay rate is chosen so that the
    spectral FWHM equals the filter FWHM.
    """
    if not filter_fwhm > 0:
        raise ValueError("filter_fwhm must be > 0")
    if shape == "one_sided":
        a = TWO_PI * filter_fwhm
    elif shape == "two_sided":
        # power spectrum ~ 1/(a^2/4 + w^2)^2 has FWHM a*sqrt(sqrt2 - 1)/(2 pi)
        a = TWO_PI * filter_fwhm / np.sqrt(np.sqrt(2.0) - 1.0)
    else:
        raise ValueError(f"unknown shape {shape!r}")
    return WavepacketSpec(decay_rate=a, origin=origin, shape=shape)


def intensity_fwhm(wp: WavepacketSpec) -> float:
    """Temporal FWHM of |xi(t)|^2 in ns."""
    if wp.shape == "one_sided":
        return np.log(2.0) / wp.decay_rate
    return 2.0 * np.log(2.0) / wp.decay_rate


def spectral_density(wp: WavepacketSpec, nu):
    """Normalized power spectrum (1/GHz) at detuning ``nu`` (GHz) from the carrier."""
    nu = np.asarray(nu, dtype=float) - wp.detuning
    if wp.shape == "one_sided":
        hwhm = 0.5 * wp.linewidth
        return hwhm / np.pi / (nu ** 2 + hwhm ** 2)
    b = 0.5 * wp.decay_rate
    w = TWO_PI * nu
    # int dnu 4 b^3 / (b^2 + w^2)^2 = 1
    return 4.0 * b ** 3 / (b ** 2 + w ** 2) ** 2


def fp_transmission(fp: FabryPerotSpec, nu):
    """Airy transmission of a lossless Fabry-Perot cavity at frequency ``nu`` (GHz)."""
    nu = np.asarray(nu, dtype=float) - fp.center_frequency_offset
    coef = (2.0 * fp.finesse / np.pi) ** 2
    return 1.0 / (1.0 + coef * np.sin(np.pi * nu / fp.free_spectral_range) ** 2)


def filtered_linewidth(fp: FabryPerotSpec, input_spectrum, span: float | None = None,
                       n: int = 200001) -> float:
    """FWHM (GHz) of ``input_spectrum(nu) * T(nu)`` around the central comb order.

    Only the order nearest zero detuning is kept, as an etalon followed by a
    coarse filter would do.
    """
    if span is None:
        span = fp.free_spectral_range
    nu = np.linspace(-span / 2, span / 2, n)
    y = np.asarray(input_spectrum(nu), dtype=float) * fp_transmission(fp, nu)
    i0 = int(np.argmax(y))
    half = 0.5 * y[i0]
    above = y >= half
    left = i0
    while left > 0 and above[left - 1]:
        left -= 1
    right = i0
    while right < n - 1 and above[right + 1]:
        right += 1
    if left == 0 or right == n - 1:
        raise ValueError("peak not resolved inside the span")

    def crossing(i, j):
        return nu[i] + (half - y[i]) * (nu[j] - nu[i]) / (y[j] - y[i])

    return crossing(right, right + 1) - crossing(left - 1, left)

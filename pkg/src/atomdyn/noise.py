"""Laser phase noise from a frequency-noise power spectral density.

The one-sided frequency-noise PSD (Hz^2/Hz) is a Gaussian servo bump on top
of a power-law background::

    S(f) = A_G exp(-(f - f0)^2 / (2 sigma^2)) + A_pl f^alpha

Phase trajectories are synthesized on the rFFT grid of the full sequence and
integrated in the frequency domain, so one trajectory stays continuous across
every gate in the sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import resolve_value


@dataclass(frozen=True)
class LaserPhaseNoiseModel:
    A_G: float = 0.0
    f0: float = 0.0
    sigma: float = 1.0
    A_pl: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("servo-bump width sigma must be positive")
        if self.A_G < 0 or self.A_pl < 0:
            raise ValueError("noise amplitudes must be non-negative")

    def resolved(self, values=None, rng=None) -> "LaserPhaseNoiseModel":
        v = values if values is not None else {}
        return LaserPhaseNoiseModel(*(float(resolve_value(x, v, rng)) for x in
                                      (self.A_G, self.f0, self.sigma, self.A_pl, self.alpha)))

    def psd(self, f) -> np.ndarray:
        """One-sided frequency-noise PSD in Hz^2/Hz at frequencies ``f`` (Hz)."""
        f = np.asarray(f, dtype=float)
        out = self.A_G * np.exp(-((f - self.f0) ** 2) / (2.0 * self.sigma ** 2))
        if self.A_pl:
            with np.errstate(divide="ignore"):
                out = out + self.A_pl * np.power(f, self.alpha)
        return out

    @property
    def is_silent(self) -> bool:
        return self.A_G == 0 and self.A_pl == 0


def n_samples(duration: float, dt: float) -> int:
    if not (dt > 0 and duration >= dt):
        raise ValueError("need duration >= dt > 0")
    return int(round(duration / dt))


def synthesize_phase_noise(model: LaserPhaseNoiseModel, duration: float, dt: float,
                           rng: np.random.Generator) -> np.ndarray:
    """Phase trajectory phi(t_k) in rad at t_k = k*dt, k = 0..n-1.

    Frequency noise nu is drawn on the rFFT grid with E|X_k|^2 = n S(f_k) / (2 dt),
    i.e. a two-sided density S/2, and the phase phi = 2 pi * integral(nu) is
    obtained by dividing each bin by i f_k. The DC bin of nu (a random constant
    frequency offset) is integrated explicitly as a linear ramp, which keeps
    the phase increments stationary; it is dropped when S(0) diverges. A
    constant phase offset is unobservable and set to zero.

    With this normalization white frequency noise of one-sided level A gives
    Var[phi(t) - phi(0)] = 2 pi^2 A t.
    """
    n = n_samples(duration, dt)
    if model.is_silent:
        return np.zeros(n)
    freqs = np.fft.rfftfreq(n, dt)
    s = model.psd(freqs)
    nb = len(freqs)
    scale = np.zeros(nb)
    scale[1:] = np.sqrt(n * s[1:] / (4.0 * dt))
    re = rng.standard_normal(nb)
    im = rng.standard_normal(nb)
    nu_k = scale * (re + 1j * im)
    if n % 2 == 0:
        # Nyquist bin is real
        nu_k[-1] = math.sqrt(n * s[-1] / (2.0 * dt)) * re[-1]
    s0 = s[0]
    nu0 = 0.0
    if np.isfinite(s0) and s0 > 0:
        nu0 = math.sqrt(n * s0 / (2.0 * dt)) * re[0] / n
    phi_k = np.zeros(nb, dtype=complex)
    phi_k[1:] = nu_k[1:] / (1j * freqs[1:])
    phi = np.fft.irfft(phi_k, n)
    t = np.arange(n) * dt
    phi = phi + 2.0 * math.pi * nu0 * t
    return phi - phi[0]

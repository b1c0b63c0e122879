"""Optical fields: Gaussian and plane-wave beams, AOD tweezer arrays, polarization.

Field amplitudes are peak-normalized: a Gaussian beam has amplitude 1 on axis
at its focus, and the local intensity is ``I0 * |amplitude|**2`` with
``I0 = 2P / (pi wx wy)``. All positions may be arrays of shape ``(..., 3)``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .params import Expr, resolve_value
from .units import C_LIGHT, EPS0, HBAR

SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# polarization


@dataclass(frozen=True)
class Polarization:
    """Pure polarization: a Cartesian complex vector, normalized on construction."""

    vector: tuple[complex, complex, complex]

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=complex).reshape(3)
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError("polarization vector must be non-zero")
        object.__setattr__(self, "vector", tuple(v / n))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.vector, dtype=complex)


@dataclass(frozen=True)
class MixedPolarization:
    """A dominant polarization with an admixture of an orthogonal contamination.

    ``amplitude`` may be a number or a :class:`~atomdyn.params.Parameter`; it is
    drawn once per shot when the system is compiled.
    """

    dominant: Polarization
    contamination: Polarization
    amplitude: object = 0.0

    def __post_init__(self):
        overlap = abs(np.vdot(self.dominant.array, self.contamination.array))
        if overlap > 1e-12:
            raise ValueError(f"contamination is not orthogonal to the dominant polarization (overlap {overlap:.3g})")


def resolve_polarization(pol, rng: np.random.Generator | None = None, draw: float | None = None,
                         values: dict | None = None) -> np.ndarray:
    """Concrete unit polarization vector for one shot.

    For a mixed polarization the contamination amplitude is ``draw`` when
    given, else it is resolved from ``values``/``rng`` like any parameter.
    """
    if isinstance(pol, Polarization):
        return pol.array
    if isinstance(pol, MixedPolarization):
        a = draw if draw is not None else resolve_value(pol.amplitude, values or {}, rng)
        v = pol.dominant.array + a * pol.contamination.array
        return v / np.linalg.norm(v)
    return Polarization(pol).array


def _frame(axis) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orthonormal frame (x', y', z') with z' along ``axis``.

    The frame is the minimal rotation taking z to the axis (Rodrigues); for
    an axis along -z it is the rotation by pi about x.
    """
    return _frame_cached(tuple(float(c) for c in np.asarray(axis, dtype=float).reshape(3)))


@functools.lru_cache(maxsize=256)
def _frame_cached(axis: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    z = np.array(axis)
    n = np.linalg.norm(z)
    if n == 0:
        raise ValueError("quantization axis must be non-zero")
    z = z / n
    c = z[2]
    # rotation R = I + [k]x + [k]x^2 / (1 + c) with k = ez x z
    k = np.array([-z[1], z[0], 0.0])
    s2 = k @ k
    if s2 == 0.0:
        axes = [np.array([1.0, 0, 0]), np.array([0, 1.0, 0]) * np.sign(c), np.array([0, 0, 1.0]) * np.sign(c)]
    else:
        K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
        # 1/(1+c) = (1-c)/|k|^2 avoids cancellation near -z
        R = np.eye(3) + K + K @ K * ((1.0 - c) / s2)
        axes = [R[:, 0].copy(), R[:, 1].copy(), R[:, 2].copy()]
    for a in axes:
        a.flags.writeable = False  # shared through the cache
    return tuple(axes)


def spherical_components(pol, quantization_axis) -> tuple[complex, complex, complex]:
    """(sigma-, pi, sigma+) components of a polarization about an axis.

    Component q is the projection onto the spherical unit vector e_q
    (e_{+1} = -(x + iy)/sqrt2, e_0 = z, e_{-1} = (x - iy)/sqrt2 in the rotated
    frame), so the q component drives transitions with m_upper = m_lower + q.
    """
    eps = resolve_polarization(pol) if not isinstance(pol, np.ndarray) else np.asarray(pol, complex)
    ex, ey, ez = _frame(quantization_axis)
    px, py, pz = ex @ eps, ey @ eps, ez @ eps
    sp = -(px - 1j * py) / SQRT2
    sm = (px + 1j * py) / SQRT2
    return complex(sm), complex(pz), complex(sp)


# ---------------------------------------------------------------------------
# beams


def _as_pos(position) -> np.ndarray:
    return np.asarray(position, dtype=float)


@dataclass(frozen=True)
class GaussianBeam:
    """Axis-aligned TEM00 beam. ``axis`` is one of ``"x"``, ``"y"``, ``"z"``."""

    wavelength: object
    w0: object
    power: object
    focus: tuple = (0.0, 0.0, 0.0)
    axis: str = "z"
    polarization: object = None

    def resolved(self, values=None, rng=None) -> "GeneralGaussianBeam":
        d = {"x": (1.0, 0, 0), "y": (0, 1.0, 0), "z": (0, 0, 1.0)}[self.axis]
        w0 = resolve_value(self.w0, values or {}, rng)
        return GeneralGaussianBeam(
            resolve_value(self.wavelength, values or {}, rng), w0, w0,
            resolve_value(self.power, values or {}, rng), d, tuple(self.focus), self.polarization,
        )

    def field_amplitude(self, position) -> np.ndarray:
        return self.resolved().field_amplitude(position)

    def intensity(self, position) -> np.ndarray:
        return self.resolved().intensity(position)

    @property
    def min_waist(self) -> float:
        return float(resolve_value(self.w0, {}, None))


@dataclass(frozen=True)
class GeneralGaussianBeam:
    """Elliptical Gaussian beam with arbitrary propagation direction.

    The transverse axes are fixed by the minimal rotation taking z onto
    ``direction``: ``wx`` is the waist along the rotated x axis.
    """

    wavelength: object
    wx: object
    wy: object
    power: object
    direction: tuple = (0.0, 0.0, 1.0)
    focus: tuple = (0.0, 0.0, 0.0)
    polarization: object = None
    phase: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if n == 0:
            raise ValueError("beam direction must be non-zero")
        object.__setattr__(self, "direction", tuple(d / n))

    def resolved(self, values=None, rng=None) -> "GeneralGaussianBeam":
        v = values or {}
        return replace(
            self,
            wavelength=resolve_value(self.wavelength, v, rng),
            wx=resolve_value(self.wx, v, rng),
            wy=resolve_value(self.wy, v, rng),
            power=resolve_value(self.power, v, rng),
        )

    @property
    def min_waist(self) -> float:
        return float(min(resolve_value(self.wx, {}, None), resolve_value(self.wy, {}, None)))

    @property
    def peak_intensity(self) -> float:
        return 2.0 * self.power / (math.pi * self.wx * self.wy)

    def field_amplitude(self, position) -> np.ndarray:
        r = _as_pos(position) - np.asarray(self.focus, float)
        ex, ey, ez = _frame(self.direction)
        x, y, z = r @ ex, r @ ey, r @ ez
        k = 2 * math.pi / self.wavelength
        out = np.ones(np.shape(x), dtype=complex)
        gouy = np.zeros(np.shape(x))
        for coord, w0 in ((x, self.wx), (y, self.wy)):
            zr = math.pi * w0 * w0 / self.wavelength
            w = w0 * np.sqrt(1.0 + (z / zr) ** 2)
            # 1/R(z) = z / (z^2 + zr^2), finite at the focus
            inv_r = z / (z * z + zr * zr)
            out = out * np.sqrt(w0 / w) * np.exp(-(coord / w) ** 2 + 0.5j * k * coord * coord * inv_r)
            gouy = gouy + 0.5 * np.arctan(z / zr)
        return out * np.exp(1j * (k * z - gouy + self.phase))

    def intensity(self, position) -> np.ndarray:
        return self.peak_intensity * np.abs(self.field_amplitude(position)) ** 2

    @property
    def peak_field(self) -> float:
        """Peak electric field amplitude (V/m) from I0 = c eps0 E0^2 / 2."""
        return math.sqrt(2.0 * self.peak_intensity / (C_LIGHT * EPS0))


@dataclass(frozen=True)
class PlanarBeam:
    """Plane wave: uniform intensity, phase exp(i k.r). ``field`` is E0 in V/m."""

    wavevector: tuple
    field: float = 1.0
    polarization: object = None

    @property
    def wavelength(self) -> float:
        return 2 * math.pi / float(np.linalg.norm(self.wavevector))

    def resolved(self, values=None, rng=None) -> "PlanarBeam":
        return replace(self, field=resolve_value(self.field, values or {}, rng))

    @property
    def min_waist(self) -> float:
        return math.inf

    @property
    def peak_intensity(self) -> float:
        return 0.5 * C_LIGHT * EPS0 * self.field ** 2

    @property
    def peak_field(self) -> float:
        return float(self.field)

    def field_amplitude(self, position) -> np.ndarray:
        return np.exp(1j * (_as_pos(position) @ np.asarray(self.wavevector, float)))

    def intensity(self, position) -> np.ndarray:
        return self.peak_intensity * np.abs(self.field_amplitude(position)) ** 2


@dataclass
class TweezerArray:
    """Rectangular grid of Gaussian traps generated by two crossed AODs.

    Trap (i, j) sits at ``origin + row_calibration*f_row[i]*y + col_calibration*f_col[j]*x``
    and carries power ``power_per_amplitude2 * (a_row[i] * a_col[j])**2``.
    Tones are (frequency Hz, amplitude) pairs; calibrations are in m/Hz.
    With ``coherent=True`` trap fields add in amplitude, otherwise in intensity.
    """

    wavelength: float
    waist: float
    row_tones: list
    col_tones: list
    power_per_amplitude2: float = 1e-3
    row_calibration: float = 1e-12
    col_calibration: float = 1e-12
    origin: tuple = (0.0, 0.0, 0.0)
    axis: tuple = (0.0, 0.0, 1.0)
    coherent: bool = True
    polarization: object = None

    def __post_init__(self):
        self.row_tones = [(float(f), float(a)) for f, a in self.row_tones]
        self.col_tones = [(float(f), float(a)) for f, a in self.col_tones]
        for _, a in self.row_tones + self.col_tones:
            if a < 0:
                raise ValueError("AOD tone amplitudes must be non-negative")

    def resolved(self, values=None, rng=None) -> "TweezerArray":
        return replace(self, waist=resolve_value(self.waist, values or {}, rng),
                       power_per_amplitude2=resolve_value(self.power_per_amplitude2, values or {}, rng),
                       row_tones=list(self.row_tones), col_tones=list(self.col_tones))

    @property
    def min_waist(self) -> float:
        return float(resolve_value(self.waist, {}, None))

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.row_tones), len(self.col_tones)

    def trap_positions(self, row_freqs=None, col_freqs=None) -> np.ndarray:
        fr = np.array([f for f, _ in self.row_tones]) if row_freqs is None else np.asarray(row_freqs, float)
        fc = np.array([f for f, _ in self.col_tones]) if col_freqs is None else np.asarray(col_freqs, float)
        o = np.asarray(self.origin, float)
        ey, ex = np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0])
        pos = (o + (self.row_calibration * fr)[:, None, None] * ey
               + (self.col_calibration * fc)[None, :, None] * ex)
        return pos.reshape(len(fr), len(fc), 3)

    def _traps(self, row_freqs=None, col_freqs=None, row_amps=None, col_amps=None):
        ar = np.array([a for _, a in self.row_tones]) if row_amps is None else np.asarray(row_amps, float)
        ac = np.array([a for _, a in self.col_tones]) if col_amps is None else np.asarray(col_amps, float)
        powers = self.power_per_amplitude2 * np.outer(ar, ac) ** 2
        return self.trap_positions(row_freqs, col_freqs).reshape(-1, 3), powers.reshape(-1)

    def _unit_fields(self, position, tones):
        """Peak-normalized field of every trap at ``position``: shape (n_traps, ...) plus trap powers."""
        centers, powers = self._traps(*(tones or (None, None, None, None)))
        ex, ey, ez = _frame(self.axis)
        pos = _as_pos(position)
        rel = pos[None, ...] - centers.reshape((-1,) + (1,) * (pos.ndim - 1) + (3,))
        x, y, z = rel @ ex, rel @ ey, rel @ ez
        w0, wl = self.waist, self.wavelength
        zr = math.pi * w0 * w0 / wl
        w2 = w0 * w0 * (1.0 + (z / zr) ** 2)
        rho2 = x * x + y * y
        inv_r = z / (z * z + zr * zr)
        k = 2 * math.pi / wl
        phase = 0.5 * k * rho2 * inv_r + k * z - np.arctan(z / zr)
        return np.sqrt(w0 * w0 / w2) * np.exp(-rho2 / w2 + 1j * phase), powers

    def field_sqrt_intensity(self, position, tones=None) -> np.ndarray:
        """Complex field scaled so that |result|**2 is the intensity (W/m^2)."""
        fields, powers = self._unit_fields(position, tones)
        i0 = 2.0 / (math.pi * self.waist ** 2)
        weights = np.sqrt(powers * i0).reshape((-1,) + (1,) * (fields.ndim - 1))
        return np.sum(weights * fields, axis=0)

    def intensity(self, position, tones=None) -> np.ndarray:
        if self.coherent:
            return np.abs(self.field_sqrt_intensity(position, tones)) ** 2
        fields, powers = self._unit_fields(position, tones)
        i0 = 2.0 / (math.pi * self.waist ** 2)
        weights = (powers * i0).reshape((-1,) + (1,) * (fields.ndim - 1))
        return np.sum(weights * np.abs(fields) ** 2, axis=0)

    def field_amplitude(self, position, tones=None) -> np.ndarray:
        """Coherent trap sum normalized to the peak of a unit-amplitude trap."""
        i0 = 2.0 * self.power_per_amplitude2 / (math.pi * self.waist ** 2)
        return self.field_sqrt_intensity(position, tones) / math.sqrt(i0)


def trap_positions(arr: TweezerArray) -> np.ndarray:
    """Grid of trap centres, shape (rows, cols, 3)."""
    return arr.trap_positions()


def field_amplitude(beam, position) -> np.ndarray:
    return beam.field_amplitude(position)


def optical_potential(beam, polarizability: float | None, position, tones=None) -> np.ndarray:
    """Dipole potential U = -alpha I / (2 eps0 c) in joules."""
    if polarizability is None:
        raise ValueError(f"no polarizability supplied at wavelength {beam.wavelength:.6g} m")
    if isinstance(beam, TweezerArray):
        inten = beam.intensity(position, tones)
    else:
        inten = beam.intensity(position)
    return -polarizability * inten / (2.0 * EPS0 * C_LIGHT)


def optical_force(beams: Sequence, polarizabilities: Sequence[float | None], position,
                  step: float | None = None, tones: Sequence | None = None) -> np.ndarray:
    """Force -grad(sum U) by central differences (default step: smallest waist / 100)."""
    if not isinstance(beams, (list, tuple)):
        beams, polarizabilities = [beams], [polarizabilities]
    pos = _as_pos(position)
    if step is None:
        step = min(b.min_waist for b in beams) / 100.0
        if not math.isfinite(step):
            step = 1e-8
    tones = tones if tones is not None else [None] * len(beams)
    force = np.zeros_like(pos, dtype=float)
    for axis in range(3):
        dv = np.zeros(3)
        dv[axis] = step
        up = sum(optical_potential(b, a, pos + dv, t) for b, a, t in zip(beams, polarizabilities, tones))
        dn = sum(optical_potential(b, a, pos - dv, t) for b, a, t in zip(beams, polarizabilities, tones))
        force[..., axis] = -(up - dn) / (2.0 * step)
    return force


def rabi_frequencies(beam, quantization_axis, reduced_dipole: float, polarization=None) -> tuple[float, complex, complex]:
    """(Omega_pi, Omega_plus, Omega_minus) in rad/s from beam power, waist and polarization.

    Each component is d * E0 * e_q / hbar with E0 the peak field.
    """
    if reduced_dipole <= 0:
        raise ValueError("reduced dipole must be positive")
    pol = polarization if polarization is not None else beam.polarization
    if pol is None:
        raise ValueError("beam has no polarization")
    b = beam.resolved() if hasattr(beam, "resolved") else beam
    sm, pi, sp = spherical_components(pol, quantization_axis)
    scale = reduced_dipole * b.peak_field / HBAR
    return scale * pi, scale * sp, scale * sm

"""Physical constants and unit handling.

All internal quantities are SI, with angular frequencies in rad/s. Quantities
written with cyclic-frequency units ("MHz", "kHz") that describe energies or
rates (Rabi frequencies, detunings, decay rates) are converted to rad/s by a
factor of 2*pi; see :func:`parse_quantity`.
"""

from __future__ import annotations

import math
import re
from types import MappingProxyType

from scipy import constants as _sc

HBAR: float = _sc.hbar
H_PLANCK: float = _sc.h
MU_B: float = _sc.physical_constants["Bohr magneton"][0]
K_B: float = _sc.k
EPS0: float = _sc.epsilon_0
C_LIGHT: float = _sc.c
AMU: float = _sc.atomic_mass
E_CHARGE: float = _sc.e
A0: float = _sc.physical_constants["Bohr radius"][0]
# atomic unit of polarizability, C m^2 / V
AU_POLARIZABILITY: float = _sc.physical_constants["atomic unit of electric polarizability"][0]

TWO_PI = 2.0 * math.pi

# convenience multipliers for programmatic use: 2*pi*1e6 rad/s etc.
ns = 1e-9
us = 1e-6
ms = 1e-3
nm = 1e-9
um = 1e-6
mm = 1e-3
mW = 1e-3
uK = 1e-6
G = 1e-4
Hz = TWO_PI
kHz = TWO_PI * 1e3
MHz = TWO_PI * 1e6
GHz = TWO_PI * 1e9


class UnitError(ValueError):
    pass


# dimension -> {unit: scale to canonical}
_UNITS: dict[str, dict[str, float]] = {
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "ns": 1e-9, "ps": 1e-12},
    "length": {"m": 1.0, "mm": 1e-3, "um": 1e-6, "µm": 1e-6, "nm": 1e-9},
    "power": {"W": 1.0, "mW": 1e-3, "uW": 1e-6, "µW": 1e-6},
    "field": {"T": 1.0, "mT": 1e-3, "G": 1e-4, "mG": 1e-7},
    "temperature": {"K": 1.0, "mK": 1e-3, "uK": 1e-6, "µK": 1e-6, "nK": 1e-9},
    "mass": {"kg": 1.0, "u": AMU, "amu": AMU},
    # angular frequency: cyclic units carry the 2*pi, rad/s units do not
    "angular": {
        "Hz": TWO_PI, "kHz": TWO_PI * 1e3, "MHz": TWO_PI * 1e6, "GHz": TWO_PI * 1e9,
        "rad/s": 1.0, "rad/ms": 1e3, "rad/us": 1e6, "rad/µs": 1e6, "1/s": 1.0, "1/us": 1e6,
    },
    # plain cyclic frequency (AOD tones, noise spectra), no 2*pi
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "velocity": {"m/s": 1.0, "mm/s": 1e-3, "um/us": 1.0},
    "polarizability": {"au": AU_POLARIZABILITY, "C m2/V": 1.0, "Cm2/V": 1.0},
    "dipole": {"C m": 1.0, "Cm": 1.0, "ea0": E_CHARGE * A0},
    "c6": {"MHz um6": TWO_PI * 1e6 * 1e-36, "GHz um6": TWO_PI * 1e9 * 1e-36, "rad/s m6": 1.0},
    "psd": {"Hz2/Hz": 1.0, "Hz^2/Hz": 1.0},
    "calibration": {"m/Hz": 1.0, "um/MHz": 1e-12},
    "dimensionless": {"": 1.0},
}

UNITS = MappingProxyType(_UNITS)

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_QTY_RE = re.compile(rf"^\s*({_NUMBER})\s*(.*?)\s*$")


def parse_quantity(text: str | float | int, dimension: str) -> float:
    """Parse ``"2.5 MHz"`` style text into canonical SI units.

    Bare numbers are accepted only for dimensionless quantities; every
    dimensioned quantity must carry a unit.
    """
    if dimension not in _UNITS:
        raise UnitError(f"unknown dimension {dimension!r}")
    if isinstance(text, bool):
        raise UnitError(f"expected a quantity, got {text!r}")
    if isinstance(text, (int, float)):
        if dimension == "dimensionless":
            return float(text)
        raise UnitError(f"{dimension} quantity {text!r} is missing a unit")
    m = _QTY_RE.match(str(text))
    if not m:
        raise UnitError(f"cannot parse quantity {text!r}")
    value, unit = float(m.group(1)), m.group(2)
    table = _UNITS[dimension]
    if unit not in table:
        if unit == "" and dimension != "dimensionless":
            raise UnitError(f"{dimension} quantity {text!r} is missing a unit")
        raise UnitError(f"unit {unit!r} is not valid for {dimension} (allowed: {sorted(table)})")
    return value * table[unit]

"""Atomic level structure and angular-momentum algebra.

Angular-momentum quantum numbers are stored as integers holding twice their
value (``two_m = 1`` for m = 1/2) so that selection-rule comparisons are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from .units import AMU, HBAR, K_B, MU_B


def twice(x) -> int:
    """Return 2*x as an int, rejecting anything that is not a half-integer."""
    if isinstance(x, bool):
        raise ValueError(f"{x!r} is not a half-integer")
    if isinstance(x, (int, Fraction)):
        v = Fraction(x) * 2
    elif isinstance(x, str):
        v = Fraction(x) * 2
    else:
        xf = float(x)
        v = Fraction(round(2 * xf))
        if abs(2 * xf - float(v)) > 1e-9:
            raise ValueError(f"{x!r} is not a half-integer")
    if v.denominator != 1:
        raise ValueError(f"{x!r} is not a half-integer")
    return int(v)


def _half(two: int) -> Fraction:
    return Fraction(two, 2)


@lru_cache(maxsize=65536)
def _cg_twice(tj1: int, tm1: int, tj2: int, tm2: int, tJ: int, tM: int) -> float:
    if tm1 + tm2 != tM:
        return 0.0
    if tJ < abs(tj1 - tj2) or tJ > tj1 + tj2:
        return 0.0
    if (tj1 + tj2 + tJ) % 2:
        return 0.0
    # all factorial arguments below are integers: (a +- b)/2 with a, b of equal parity
    f = math.factorial
    a = (tJ + tj1 - tj2) // 2
    b = (tJ - tj1 + tj2) // 2
    c = (tj1 + tj2 - tJ) // 2
    d = (tj1 + tj2 + tJ) // 2 + 1
    pref = Fraction((tJ + 1) * f(a) * f(b) * f(c), f(d))
    pref *= (f((tJ + tM) // 2) * f((tJ - tM) // 2) * f((tj1 - tm1) // 2)
             * f((tj1 + tm1) // 2) * f((tj2 - tm2) // 2) * f((tj2 + tm2) // 2))
    total = Fraction(0)
    for k in range(0, c + 1):
        den = [
            k,
            c - k,
            (tj1 - tm1) // 2 - k,
            (tj2 + tm2) // 2 - k,
            (tJ - tj2 + tm1) // 2 + k,
            (tJ - tj1 - tm2) // 2 + k,
        ]
        if min(den) < 0:
            continue
        term = Fraction(1, math.prod(f(n) for n in den))
        total += -term if k % 2 else term
    if total == 0:
        return 0.0
    sign = 1.0 if total > 0 else -1.0
    return sign * math.sqrt(pref * total * total)


def clebsch_gordan(j1, m1, j2, m2, J, M) -> float:
    """<j1 m1; j2 m2 | J M> in the Condon-Shortley phase convention.

    Arguments may be ints, Fractions, strings such as ``"1/2"`` or floats that
    are exact half-integers.
    """
    tj1, tm1, tj2, tm2, tJ, tM = (twice(x) for x in (j1, m1, j2, m2, J, M))
    for tj, tm, name in ((tj1, tm1, "m1"), (tj2, tm2, "m2"), (tJ, tM, "M")):
        if tj < 0:
            raise ValueError("angular momenta must be non-negative")
        if abs(tm) > tj:
            raise ValueError(f"|{name}| exceeds its angular momentum")
        if (tj - tm) % 2:
            raise ValueError(f"{name} and its angular momentum differ by a non-integer")
    return _cg_twice(tj1, tm1, tj2, tm2, tJ, tM)


@dataclass(frozen=True)
class Level:
    """One internal state. ``kind`` is ``generic``, ``fine`` or ``hyperfine``."""

    label: str
    kind: str = "generic"
    two_j: int | None = None
    two_m: int | None = None
    g: float | None = None

    def __post_init__(self):
        if self.kind not in ("generic", "fine", "hyperfine"):
            raise ValueError(f"unknown level kind {self.kind!r}")
        if self.kind != "generic":
            if self.two_j is None or self.two_m is None or self.g is None:
                raise ValueError(f"{self.kind} level {self.label!r} needs J/F, m and g")
            if abs(self.two_m) > self.two_j or (self.two_j - self.two_m) % 2:
                raise ValueError(f"invalid m for level {self.label!r}")

    @property
    def j(self) -> Fraction | None:
        return None if self.two_j is None else _half(self.two_j)

    @property
    def m(self) -> Fraction | None:
        return None if self.two_m is None else _half(self.two_m)

    def __repr__(self) -> str:
        return f"Level({self.label!r})"


def FineLevel(J, mJ, gJ: float, label: str | None = None) -> Level:
    tj, tm = twice(J), twice(mJ)
    return Level(label or f"J={_half(tj)},mJ={_half(tm)}", "fine", tj, tm, float(gJ))


def HyperfineLevel(F, mF, gF: float, label: str | None = None) -> Level:
    tf, tm = twice(F), twice(mF)
    return Level(label or f"F={_half(tf)},mF={_half(tm)}", "hyperfine", tf, tm, float(gF))


class Manifold:
    """The 2F+1 (or 2J+1) sublevels sharing one quantum number and g-factor.

    Sublevels are ordered by ascending m; ``manifold[m]`` indexes by m value.
    """

    def __init__(self, kind: str, j, g: float, label: str):
        if kind not in ("fine", "hyperfine"):
            raise ValueError(f"manifold kind must be fine or hyperfine, got {kind!r}")
        self.kind = kind
        self.two_j = twice(j)
        self.g = float(g)
        self.label = label
        self.sublevels: tuple[Level, ...] = tuple(
            Level(f"{label} m={_half(tm)}", kind, self.two_j, tm, self.g)
            for tm in range(-self.two_j, self.two_j + 1, 2)
        )

    @property
    def j(self) -> Fraction:
        return _half(self.two_j)

    def __getitem__(self, m) -> Level:
        tm = twice(m)
        if abs(tm) > self.two_j or (self.two_j - tm) % 2:
            raise KeyError(f"m={m} not in manifold {self.label!r}")
        return self.sublevels[(tm + self.two_j) // 2]

    def __iter__(self) -> Iterator[Level]:
        return iter(self.sublevels)

    def __len__(self) -> int:
        return len(self.sublevels)

    def __repr__(self) -> str:
        return f"Manifold({self.label!r}, {self.kind}, j={self.j})"


def FineManifold(J, gJ: float, label: str) -> Manifold:
    return Manifold("fine", J, gJ, label)


def HyperfineManifold(F, gF: float, label: str) -> Manifold:
    return Manifold("hyperfine", F, gF, label)


def transition_amplitudes(lower: Manifold, upper: Manifold, q: int) -> list[tuple[Level, Level, float]]:
    """Sublevel pairs driven by spherical component ``q`` with their CG weights.

    The weight is <F_l m_l; 1 q | F_u m_u>; forbidden pairs are omitted.
    """
    if q not in (-1, 0, 1):
        raise ValueError(f"q must be -1, 0 or +1, got {q}")
    if abs(upper.two_j - lower.two_j) > 2:
        return []
    out = []
    for lo in lower:
        tmu = lo.two_m + 2 * q
        if abs(tmu) > upper.two_j:
            continue
        c = _cg_twice(lower.two_j, lo.two_m, 2, 2 * q, upper.two_j, tmu)
        if c != 0.0:
            out.append((lo, upper.sublevels[(tmu + upper.two_j) // 2], c))
    return out


def zeeman_shift(level: Level, B):
    """Linear Zeeman shift g*m*mu_B*B/hbar in rad/s.

    ``B`` may be a number (tesla) or a parametric expression.
    """
    if level.kind == "generic":
        raise ValueError(f"generic level {level.label!r} has no m or g-factor")
    return (level.g * float(level.m) * MU_B / HBAR) * B


# ---------------------------------------------------------------------------
# species and atoms

# tag -> (mass in amu, nuclear spin)
SPECIES: dict[str, tuple[float | None, Fraction]] = {
    "Yb171": (170.9363258, Fraction(1, 2)),
    "Rb87": (86.909180527, Fraction(3, 2)),
    "Sr88": (87.9056125, Fraction(0)),
    "K39": (38.9637064864, Fraction(3, 2)),
    "generic": (None, Fraction(0)),
}


@dataclass(frozen=True)
class MaxwellBoltzmann:
    """Thermal velocity distribution at temperature ``T`` (K)."""

    T: float

    def sample(self, rng: np.random.Generator, mass: float) -> np.ndarray:
        return rng.normal(0.0, math.sqrt(K_B * self.T / mass), size=3)


@dataclass(frozen=True)
class GaussianPosition:
    """Gaussian positional disorder around ``center`` with per-axis ``sigma`` (m)."""

    center: tuple[float, float, float]
    sigma: float | tuple[float, float, float]

    def sample(self, rng: np.random.Generator, mass: float | None = None) -> np.ndarray:
        return np.asarray(self.center, float) + rng.normal(0.0, 1.0, size=3) * np.asarray(self.sigma, float)


def _vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(3)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite vector")
    return v


@dataclass(eq=False)
class Atom:
    """One atom: a selected subset of levels plus classical centre-of-mass data.

    ``position`` and ``velocity`` are 3-vectors or distributions with a
    ``sample(rng, mass)`` method. ``polarizabilities`` maps wavelength (m) to a
    scalar polarizability (C m^2/V).
    """

    levels: Sequence[Level]
    species: str = "generic"
    mass: float | None = None
    nuclear_spin: Fraction | None = None
    position: object = (0.0, 0.0, 0.0)
    velocity: object = (0.0, 0.0, 0.0)
    polarizabilities: dict = field(default_factory=dict)
    name: str | None = None

    def __post_init__(self):
        if self.species not in SPECIES:
            raise ValueError(f"unknown species {self.species!r}; known: {sorted(SPECIES)}")
        flat: list[Level] = []
        for lv in self.levels:
            if isinstance(lv, Manifold):
                flat.extend(lv.sublevels)
            else:
                flat.append(lv)
        if not flat:
            raise ValueError("an atom needs at least one level")
        labels = [lv.label for lv in flat]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate level labels in atom: {labels}")
        self.levels = tuple(flat)
        default_mass, default_spin = SPECIES[self.species]
        if self.mass is None and default_mass is not None:
            self.mass = default_mass * AMU
        if self.mass is not None and self.mass <= 0:
            raise ValueError("atom mass must be positive")
        if self.nuclear_spin is None:
            self.nuclear_spin = default_spin
        self.polarizabilities = {float(k): float(v) for k, v in self.polarizabilities.items()}

    @property
    def dim(self) -> int:
        return len(self.levels)

    def level_index(self, level: Level) -> int:
        try:
            return self.levels.index(level)
        except ValueError:
            raise KeyError(f"level {level.label!r} is not simulated for atom {self.name or id(self)}") from None

    def has_level(self, level: Level) -> bool:
        return level in self.levels

    def polarizability(self, wavelength: float) -> float | None:
        for wl, alpha in self.polarizabilities.items():
            if math.isclose(wl, wavelength, rel_tol=1e-9):
                return alpha
        return None

    @property
    def is_moving(self) -> bool:
        v = self.velocity
        if hasattr(v, "sample"):
            return True
        return bool(np.any(_vec3(v) != 0.0))

    def initial_position(self, rng: np.random.Generator) -> np.ndarray:
        p = self.position
        return _vec3(p.sample(rng, self.mass)) if hasattr(p, "sample") else _vec3(p)

    def initial_velocity(self, rng: np.random.Generator) -> np.ndarray:
        v = self.velocity
        if hasattr(v, "sample"):
            if self.mass is None:
                raise ValueError("a velocity distribution needs the atom mass")
            return _vec3(v.sample(rng, self.mass))
        return _vec3(v)

    def __repr__(self) -> str:
        return f"Atom({self.name or self.species}, levels={[lv.label for lv in self.levels]})"

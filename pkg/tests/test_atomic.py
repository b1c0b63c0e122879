import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sympy import Rational
from sympy.physics.quantum.cg import CG

from atomdyn.atomic import (Atom, GaussianPosition, HyperfineLevel, HyperfineManifold, Level, MaxwellBoltzmann,
                            clebsch_gordan, transition_amplitudes, zeeman_shift)
from atomdyn.units import AMU, HBAR, MU_B, G


def sympy_cg(j1, m1, j2, m2, J, M):
    r = [Rational(Fraction(x).numerator, Fraction(x).denominator) for x in (j1, m1, j2, m2, J, M)]
    return float(CG(*r).doit())


def test_cg_known_values():
    assert clebsch_gordan("1/2", "1/2", "1/2", "-1/2", 0, 0) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    # the sign depends on the coupling order: (-1)^(j1+j2-J) under exchange
    assert clebsch_gordan(1, 0, "1/2", "1/2", "1/2", "1/2") == pytest.approx(-1 / math.sqrt(3), abs=1e-15)
    assert clebsch_gordan("1/2", "1/2", 1, 0, "1/2", "1/2") == pytest.approx(1 / math.sqrt(3), abs=1e-15)


def test_cg_rejects_bad_m():
    with pytest.raises(ValueError):
        clebsch_gordan(1, 2, 1, 0, 1, 2)
    with pytest.raises(ValueError):
        clebsch_gordan("1/2", 0, "1/2", "1/2", 1, "1/2")


half_ints = st.integers(min_value=0, max_value=8)


@settings(max_examples=150, deadline=None)
@given(half_ints, half_ints, st.data())
def test_cg_matches_sympy(tj1, tj2, data):
    tJ = data.draw(st.sampled_from(range(abs(tj1 - tj2), tj1 + tj2 + 1, 2)))
    tm1 = data.draw(st.sampled_from(range(-tj1, tj1 + 1, 2)))
    tm2 = data.draw(st.sampled_from(range(-tj2, tj2 + 1, 2)))
    args = [Fraction(x, 2) for x in (tj1, tm1, tj2, tm2, tJ)]
    M = Fraction(tm1 + tm2, 2)
    if abs(M) > Fraction(tJ, 2):
        with pytest.raises(ValueError):
            clebsch_gordan(*args, M)
        return
    assert clebsch_gordan(*args, M) == pytest.approx(sympy_cg(*args, M), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 6), st.integers(0, 6))
def test_cg_orthonormal_columns(tj1, tj2):
    # sum over m1, m2 of <j1 m1 j2 m2|J M><j1 m1 j2 m2|J' M> = delta_JJ'
    Js = list(range(abs(tj1 - tj2), tj1 + tj2 + 1, 2))
    for tM in range(-(tj1 + tj2), tj1 + tj2 + 1, 2):
        rows = []
        for tm1 in range(-tj1, tj1 + 1, 2):
            tm2 = tM - tm1
            if abs(tm2) > tj2:
                continue
            rows.append([clebsch_gordan(Fraction(tj1, 2), Fraction(tm1, 2), Fraction(tj2, 2), Fraction(tm2, 2),
                                        Fraction(tJ, 2), Fraction(tM, 2)) if abs(tM) <= tJ else 0.0 for tJ in Js])
        m = np.array(rows)
        keep = [i for i, tJ in enumerate(Js) if abs(tM) <= tJ]
        sub = m[:, keep]
        assert np.allclose(sub.T @ sub, np.eye(len(keep)), atol=1e-12)


def test_transition_amplitudes_half_to_half_sigma_minus():
    lo = HyperfineManifold("1/2", 0.0, "g")
    up = HyperfineManifold("1/2", 1.0, "r")
    pairs = transition_amplitudes(lo, up, -1)
    assert len(pairs) == 1
    l, u, c = pairs[0]
    assert (l.m, u.m) == (Fraction(1, 2), Fraction(-1, 2))
    assert c == pytest.approx(sympy_cg("1/2", "1/2", 1, -1, "1/2", "-1/2"))


def test_transition_amplitudes_half_to_three_halves_pi():
    lo = HyperfineManifold("1/2", 0.0, "g")
    up = HyperfineManifold("3/2", 1.0, "e")
    pairs = transition_amplitudes(lo, up, 0)
    assert len(pairs) == 2
    for l, u, c in pairs:
        assert c == pytest.approx(sympy_cg("1/2", l.m, 1, 0, "3/2", u.m))


def test_transition_amplitudes_zero_to_zero_empty():
    lo = HyperfineManifold(0, 0.0, "a")
    up = HyperfineManifold(0, 0.0, "b")
    for q in (-1, 0, 1):
        assert transition_amplitudes(lo, up, q) == []
    with pytest.raises(ValueError):
        transition_amplitudes(lo, up, 2)


def test_zeeman_rydberg_splitting():
    up = HyperfineLevel("1/2", "1/2", 2.357)
    dn = HyperfineLevel("1/2", "-1/2", 2.357)
    B = 4.88 * G
    split = (zeeman_shift(up, B) - zeeman_shift(dn, B)) / (2 * math.pi)
    assert split == pytest.approx(16.1e6, rel=2e-3)
    assert zeeman_shift(up, 0.0) == 0.0


def test_zeeman_nuclear_slope_from_formula():
    # g*mu_B/h per gauss for the nuclear g-factor of 171Yb
    g_f = -0.00067875
    lv = HyperfineLevel("1/2", "1/2", g_f)
    slope = 2 * zeeman_shift(lv, 1 * G) / (2 * math.pi)
    assert slope == pytest.approx(g_f * MU_B / (2 * math.pi * HBAR) * 1e-4, rel=1e-12)
    assert abs(slope) == pytest.approx(950.0, rel=2e-3)


def test_zeeman_generic_level_rejected():
    with pytest.raises(ValueError):
        zeeman_shift(Level("g"), 1e-4)


def test_manifold_indexing_and_atom_flattening():
    m = HyperfineManifold(1, 0.5, "F1")
    assert [float(x.m) for x in m] == [-1, 0, 1]
    assert m[0].label == "F1 m=0"
    with pytest.raises(KeyError):
        m["1/2"]
    a = Atom([Level("g"), m], species="Rb87")
    assert a.dim == 4
    assert a.mass == pytest.approx(86.909180527 * AMU)
    with pytest.raises(ValueError):
        Atom([Level("g"), Level("g")])
    with pytest.raises(ValueError):
        Atom([Level("g")], species="Xx")


def test_thermal_distributions():
    rng = np.random.default_rng(3)
    mass = 171 * AMU
    v = np.array([MaxwellBoltzmann(10e-6).sample(rng, mass) for _ in range(20000)])
    sigma = math.sqrt(1.380649e-23 * 10e-6 / mass)
    assert v.std(axis=0) == pytest.approx([sigma] * 3, rel=0.03)
    p = np.array([GaussianPosition((1e-6, 0, 0), (1e-7, 2e-7, 3e-7)).sample(rng) for _ in range(20000)])
    assert p.mean(axis=0) == pytest.approx([1e-6, 0, 0], abs=1e-8)
    assert p.std(axis=0) == pytest.approx([1e-7, 2e-7, 3e-7], rel=0.03)

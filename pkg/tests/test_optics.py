import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atomdyn.optics import (GaussianBeam, GeneralGaussianBeam, MixedPolarization, PlanarBeam, Polarization,
                            TweezerArray, optical_force, optical_potential, rabi_frequencies, spherical_components)
from atomdyn.units import AMU, AU_POLARIZABILITY, C_LIGHT, EPS0, HBAR

WL, W0, P = 759e-9, 1e-6, 5e-3
ALPHA = 186 * AU_POLARIZABILITY


def test_gaussian_peak_normalized():
    b = GaussianBeam(WL, W0, P)
    a = b.field_amplitude([0.0, 0.0, 0.0])
    assert abs(a) == pytest.approx(1.0)
    assert np.angle(a) == pytest.approx(0.0, abs=1e-15)
    assert abs(b.field_amplitude([W0, 0.0, 0.0])) == pytest.approx(math.exp(-1), rel=1e-12)


def test_gaussian_axial_rayleigh_range():
    b = GaussianBeam(WL, W0, P)
    zr = math.pi * W0 ** 2 / WL
    assert b.intensity([0, 0, zr]) == pytest.approx(0.5 * b.intensity([0, 0, 0]), rel=1e-12)


def test_planar_phase():
    k = 2 * math.pi / WL
    b = PlanarBeam((k, 0.0, 0.0))
    r = np.array([0.3e-6, 0.1e-6, 0.0])
    ratio = b.field_amplitude(r + [math.pi / k, 0, 0]) / b.field_amplitude(r)
    assert ratio == pytest.approx(-1.0)


def test_trap_depth_matches_hand_computation():
    b = GaussianBeam(WL, W0, P)
    i0 = 2 * P / (math.pi * W0 ** 2)
    expected = -ALPHA * i0 / (2 * EPS0 * C_LIGHT)
    assert optical_potential(b, ALPHA, [0, 0, 0]) == pytest.approx(expected, rel=1e-12)
    assert optical_potential(b, 0.0, [1e-7, 0, 0]) == 0.0
    b2 = GaussianBeam(WL, W0, 2 * P)
    x = np.array([[0.2e-6, 0.1e-6, 0.5e-6], [0.0, 0.7e-6, 0.0]])
    assert np.allclose(optical_potential(b2, ALPHA, x), 2 * optical_potential(b, ALPHA, x), rtol=1e-12)
    with pytest.raises(ValueError):
        optical_potential(b, None, [0, 0, 0])


def test_force_zero_at_focus_and_harmonic_near_it():
    b = GaussianBeam(WL, W0, P)
    m = 171 * AMU
    u0 = ALPHA * 2 * P / (math.pi * W0 ** 2) / (2 * EPS0 * C_LIGHT)
    omega = math.sqrt(4 * u0 / (m * W0 ** 2))
    delta = W0 / 200
    f = optical_force(b, ALPHA, [delta, 0, 0])
    assert f[0] == pytest.approx(-m * omega ** 2 * delta, rel=1e-3)
    peak = np.max(np.abs(optical_force(b, ALPHA, np.array([[W0 / 2, 0, 0]]))))
    assert np.all(np.abs(optical_force(b, ALPHA, [0, 0, 0])) <= 1e-6 * peak)
    two = optical_force([b, b], [ALPHA, ALPHA], [delta, 0, 0])
    assert np.allclose(two, 2 * f, rtol=1e-12)


def test_spherical_components():
    z = (0, 0, 1)
    assert np.allclose(spherical_components(Polarization((0, 0, 1)), z), (0, 1, 0))
    sm, pi, sp = spherical_components(Polarization((1, 0, 0)), z)
    assert abs(sm) == pytest.approx(1 / math.sqrt(2)) and abs(sp) == pytest.approx(1 / math.sqrt(2))
    assert pi == 0
    circ = [abs(x) for x in spherical_components(Polarization((1, 1j, 0)), z)]
    assert np.allclose(circ, (0, 0, 1)) or np.allclose(circ, (1, 0, 0))
    other = [abs(x) for x in spherical_components(Polarization((1, -1j, 0)), z)]
    assert np.allclose(sorted([circ, other]), [(0, 0, 1), (1, 0, 0)])


vec = st.tuples(*[st.floats(-1, 1, allow_nan=False) for _ in range(6)])


@settings(max_examples=100, deadline=None)
@given(vec, vec)
def test_spherical_components_preserve_norm(p, a):
    eps = np.array(p[:3]) + 1j * np.array(p[3:])
    axis = np.array(a[:3])
    if np.linalg.norm(eps) < 1e-3 or np.linalg.norm(axis) < 1e-3:
        return
    comps = spherical_components(Polarization(tuple(eps)), tuple(axis))
    assert sum(abs(c) ** 2 for c in comps) == pytest.approx(1.0, abs=1e-12)


def test_mixed_polarization():
    from atomdyn.optics import resolve_polarization
    dom, cont = Polarization((1, 0, 0)), Polarization((0, 1, 0))
    assert np.allclose(resolve_polarization(MixedPolarization(dom, cont, 0.0)), dom.array)
    a = 0.3
    v = resolve_polarization(MixedPolarization(dom, cont, a))
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
    assert abs(np.vdot(cont.array, v)) == pytest.approx(a / math.sqrt(1 + a * a), rel=1e-12)
    with pytest.raises(ValueError):
        MixedPolarization(dom, Polarization((1, 1, 0)), 0.1)


def test_rabi_frequencies_scale_with_power():
    b1 = GaussianBeam(302e-9, 12e-6, 20e-3, polarization=Polarization((1, 0, 0)))
    b2 = GaussianBeam(302e-9, 12e-6, 40e-3, polarization=Polarization((1, 0, 0)))
    # calibrate the reduced dipole so that the sigma- component is 2.5 MHz
    pi, sp, sm = rabi_frequencies(b1, (0, 0, 1), 1.0)
    d = 2 * math.pi * 2.5e6 / abs(sm)
    pi, sp, sm = rabi_frequencies(b1, (0, 0, 1), d)
    assert abs(sm) == pytest.approx(2 * math.pi * 2.5e6)
    assert abs(sp) == pytest.approx(abs(sm))
    assert pi == 0
    pi2, sp2, sm2 = rabi_frequencies(b2, (0, 0, 1), d)
    assert abs(sm2) == pytest.approx(math.sqrt(2) * abs(sm))
    e0 = math.sqrt(2 * 2 * 20e-3 / (math.pi * (12e-6) ** 2) / (C_LIGHT * EPS0))
    assert abs(sm) == pytest.approx(d * e0 / HBAR / math.sqrt(2))


def test_tweezer_grid_and_calibration():
    tw = TweezerArray(WL, W0, row_tones=[(0.0, 1.0), (8e6, 1.0)], col_tones=[(0.0, 1.0), (10e6, 1.0)],
                      power_per_amplitude2=P, row_calibration=1e-12, col_calibration=1e-12)
    pos = tw.trap_positions()
    assert pos.shape == (2, 2, 3)
    assert pos[1, 0] - pos[0, 0] == pytest.approx([0, 8e-6, 0])
    assert pos[0, 1] - pos[0, 0] == pytest.approx([10e-6, 0, 0])
    assert pos[1, 1] - pos[0, 0] == pytest.approx([10e-6, 8e-6, 0])
    empty = TweezerArray(WL, W0, row_tones=[], col_tones=[(0.0, 1.0)], power_per_amplitude2=P)
    assert empty.trap_positions().shape == (0, 1, 3)


def test_tweezer_matches_sum_of_gaussians():
    tw = TweezerArray(WL, W0, row_tones=[(0.0, 1.0), (3e6, 0.8)], col_tones=[(0.0, 1.0)],
                      power_per_amplitude2=P, row_calibration=1e-12, col_calibration=1e-12)
    pts = np.random.default_rng(0).normal(0, 1.5e-6, size=(50, 3))
    ref = np.zeros(len(pts), complex)
    for c, amp in (((0, 0, 0), 1.0), ((0, 3e-6, 0), 0.8)):
        g = GeneralGaussianBeam(WL, W0, W0, P * amp ** 2, (0, 0, 1), c)
        ref += math.sqrt(g.peak_intensity) * g.field_amplitude(pts)
    assert np.allclose(tw.intensity(pts), np.abs(ref) ** 2, rtol=1e-12, atol=0)
    inc = TweezerArray(WL, W0, row_tones=[(0.0, 1.0), (3e6, 0.8)], col_tones=[(0.0, 1.0)],
                       power_per_amplitude2=P, row_calibration=1e-12, col_calibration=1e-12, coherent=False)
    # far from overlap the two sums agree
    assert inc.intensity([0, 0, 0]) == pytest.approx(tw.intensity([0, 0, 0]), rel=1e-3)


@pytest.mark.parametrize("axis", [(0, 0.001953125, -1.0), (1e-9, 0, -1), (0, 0, -1), (0.3, -0.2, 0.9)])
def test_frame_orthonormal_near_antiparallel(axis):
    from atomdyn.optics import _frame
    f = np.array(_frame(axis))
    assert np.allclose(f @ f.T, np.eye(3), atol=1e-15)
    assert np.allclose(f[2], np.array(axis) / np.linalg.norm(axis), atol=1e-15)
    assert np.linalg.det(f) == pytest.approx(1.0)

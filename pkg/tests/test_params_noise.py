import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atomdyn.noise import LaserPhaseNoiseModel, synthesize_phase_noise
from atomdyn.params import (FUNCTIONS, Parameter, UnknownParameterError, collect_parameters, draw_assignment,
                            resolve_value)
from atomdyn.units import kHz


def test_parameter_default_and_override():
    om = Parameter("Omega", 5 * kHz)
    assert resolve_value(om) == 5 * kHz
    noisy = Parameter("Omega", 5 * kHz, std=1 * kHz)
    vals = draw_assignment({"Omega": noisy}, {"Omega": 6 * kHz}, np.random.default_rng(0))
    assert vals["Omega"] == 6 * kHz
    with pytest.raises(UnknownParameterError):
        draw_assignment({"Omega": om}, {"Delta": 1.0}, None)


def test_parameter_sampling_statistics():
    p = Parameter("x", 2.0, std=0.5)
    rng = np.random.default_rng(11)
    draws = np.array([p.sample(rng) for _ in range(10_000)])
    assert abs(draws.mean() - 2.0) < 3 * 0.5 / math.sqrt(len(draws))
    assert draws.std() == pytest.approx(0.5, rel=0.03)


def test_same_parameter_shares_a_draw():
    p = Parameter("x", 1.0, std=0.3)
    expr = p * 2 - p
    rng = np.random.default_rng(5)
    for _ in range(50):
        vals: dict = {}
        v = resolve_value(expr, vals, rng)
        assert v == pytest.approx(vals["x"])


def test_expression_functions():
    p = Parameter("t", 0.25)
    e = FUNCTIONS["sin"](p * math.pi) ** 2 + FUNCTIONS["sqrt"](p)
    assert resolve_value(e) == pytest.approx(0.5 + 0.5)
    assert set(collect_parameters([e])) == {"t"}
    with pytest.raises(ValueError):
        collect_parameters([Parameter("t", 1.0), Parameter("t", 2.0)])


def test_parameter_validation():
    with pytest.raises(ValueError):
        Parameter("", 1.0)
    with pytest.raises(ValueError):
        Parameter("a", 1.0, std=-1.0)
    with pytest.raises(UnknownParameterError):
        Parameter("a").sample(None)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.text("abcdefgh", min_size=1, max_size=3), min_size=1, max_size=6, unique=True),
       st.integers(0, 2 ** 32 - 1))
def test_draws_independent_of_registration_order(names, seed):
    params = {n: Parameter(n, 1.0, std=0.1) for n in names}
    shuffled = dict(reversed(list(params.items())))
    a = draw_assignment(params, None, np.random.default_rng(seed))
    b = draw_assignment(shuffled, None, np.random.default_rng(seed))
    assert a == b


# ---------------------------------------------------------------------------
# phase noise


def test_silent_noise_is_zero():
    phi = synthesize_phase_noise(LaserPhaseNoiseModel(), 1e-3, 1e-6, np.random.default_rng(0))
    assert phi.shape == (1000,)
    assert not phi.any()


def test_white_frequency_noise_variance_is_linear():
    a = 100.0
    model = LaserPhaseNoiseModel(A_pl=a, alpha=0.0)
    dt, n = 1e-6, 2000
    rng = np.random.default_rng(1)
    phis = np.array([synthesize_phase_noise(model, n * dt, dt, rng) for _ in range(1000)])
    t = np.arange(n) * dt
    slope = np.polyfit(t, phis.var(axis=0), 1)[0]
    # one-sided level A: Var[phi(t)] = 4 pi^2 A t / 2
    assert slope == pytest.approx(2 * math.pi ** 2 * a, rel=0.10)


def test_servo_bump_periodogram():
    model = LaserPhaseNoiseModel(A_G=1e3, f0=50e3, sigma=5e3)
    dt, n = 1e-6, 2000
    rng = np.random.default_rng(2)
    phis = np.array([synthesize_phase_noise(model, n * dt, dt, rng) for _ in range(200)])
    nu = np.diff(phis, axis=1) / dt / (2 * math.pi)
    m = nu.shape[1]
    f = np.fft.rfftfreq(m, dt)
    psd = (2 * dt / m * np.abs(np.fft.rfft(nu, axis=1)) ** 2).mean(axis=0)
    peak = f[np.argmax(psd)]
    assert abs(peak - 50e3) < 5e3
    area = np.sum(psd[(f > 20e3) & (f < 80e3)]) * (f[1] - f[0])
    assert area == pytest.approx(1e3 * 5e3 * math.sqrt(2 * math.pi), rel=0.2)


def test_noise_model_validation():
    with pytest.raises(ValueError):
        LaserPhaseNoiseModel(sigma=0.0)
    with pytest.raises(ValueError):
        LaserPhaseNoiseModel(A_G=-1.0)
    with pytest.raises(ValueError):
        synthesize_phase_noise(LaserPhaseNoiseModel(A_pl=1.0), 1e-7, 1e-6, np.random.default_rng(0))

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm
from scipy.stats import kstest

from atomdyn import kernels
from atomdyn.atomic import Atom, Level
from atomdyn.compiler import compile, recompile, shot_rng
from atomdyn.model import System
from atomdyn.observe import Coherence, Motion, Population
from atomdyn.operators import SparseOperator
from atomdyn.optics import GaussianBeam, TweezerArray
from atomdyn.params import Parameter
from atomdyn.sequence import MoveRow, Pulse, Sequence, Wait
from atomdyn.solvers import (SimulationError, convergence_check, lindblad_step, mcwf_step, run, run_shots,
                             taylor_step)
from atomdyn.units import AMU, AU_POLARIZABILITY, C_LIGHT, EPS0, MHz, kHz, ns, us

g, e, r = Level("g"), Level("e"), Level("r")


def random_hermitian(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (a + a.conj().T) / 2


# ---------------------------------------------------------------------------
# operators


def test_sparse_operator_matches_dense():
    rng = np.random.default_rng(0)
    h = random_hermitian(rng, 6)
    psi = rng.normal(size=6) + 1j * rng.normal(size=6)
    op = SparseOperator.from_dense(h, hermitian=True)
    assert np.allclose(op.to_dense(), h, atol=1e-15)
    assert np.max(np.abs(op.apply(psi) - h @ psi)) < 1e-13
    assert np.array_equal(SparseOperator.identity(6).apply(psi), psi)
    sx = SparseOperator(2, [0], [1], [1.0], hermitian=True)
    assert np.array_equal(sx.apply(np.array([1, 0], complex)), [0, 1])
    with pytest.raises(ValueError):
        SparseOperator(2, [0], [2], [1.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2 ** 31))
def test_sparse_general_operator(d, seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    m[rng.random((d, d)) < 0.5] = 0
    psi = rng.normal(size=d) + 0j
    assert np.allclose(SparseOperator.from_dense(m).apply(psi), m @ psi, atol=1e-12)


# ---------------------------------------------------------------------------
# propagators


@pytest.mark.parametrize("order", [1, 2, 4])
def test_taylor_kernel_matches_reference(order):
    rng = np.random.default_rng(order)
    h = random_hermitian(rng, 8)
    op = SparseOperator.from_dense(np.triu(h), hermitian=False)
    rows, cols, vals = op.rows, op.cols, op.values
    herm = (rows != cols).astype(np.bool_)
    upper = SparseOperator(8, rows, cols, vals, hermitian=True)
    assert np.allclose(upper.to_dense(), h)
    psi = rng.normal(size=8) + 1j * rng.normal(size=8)
    psi /= np.linalg.norm(psi)
    out = psi.copy()
    kernels.taylor_vec(rows, cols, vals, herm, 0.01, order, out, np.empty(8, complex), np.empty(8, complex))
    assert np.allclose(out, taylor_step(h, psi, 0.01, order), atol=1e-14)


def test_taylor_zero_hamiltonian():
    psi = np.array([0.6, 0.8j])
    assert np.array_equal(taylor_step(np.zeros((2, 2)), psi, 1.0), psi)
    with pytest.raises(ValueError):
        taylor_step(np.zeros((2, 2)), psi, 1.0, order=0)


@pytest.mark.parametrize("order", [1, 2, 4])
def test_taylor_error_slope(order):
    rng = np.random.default_rng(10 + order)
    h = random_hermitian(rng, 8)
    h /= np.linalg.norm(h, 2)
    psi = rng.normal(size=8) + 1j * rng.normal(size=8)
    psi /= np.linalg.norm(psi)
    dts = np.array([0.08, 0.04, 0.02, 0.01])
    errs = [np.linalg.norm(taylor_step(h, psi, dt, order) - expm(-1j * h * dt) @ psi) for dt in dts]
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert slope == pytest.approx(order + 1, abs=0.15)


def test_lindblad_without_jumps_is_unitary():
    rng = np.random.default_rng(4)
    h = random_hermitian(rng, 3)
    psi = rng.normal(size=3) + 1j * rng.normal(size=3)
    psi /= np.linalg.norm(psi)
    rho = np.outer(psi, psi.conj())
    dt = 1e-3
    u = taylor_step(h, np.eye(3), dt)
    assert np.allclose(lindblad_step(rho, h, [], dt), u @ rho @ u.conj().T, atol=1e-15)


def test_lindblad_pure_decay():
    gam, dt, n = 1.0, 1e-3, 1000
    lop = np.array([[0, 1], [0, 0]], complex) * math.sqrt(gam)
    rho = np.diag([0.0, 1.0]).astype(complex)
    for _ in range(n):
        rho = lindblad_step(rho, np.zeros((2, 2)), [lop], dt)
    # Euler: (1 - gamma dt)^n, within O(gamma^2 dt t) of exp(-gamma t)
    assert rho[1, 1].real == pytest.approx((1 - gam * dt) ** n, rel=1e-12)
    assert abs(rho[1, 1].real - math.exp(-gam * n * dt)) < gam ** 2 * dt * n * dt
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-14)


def test_mcwf_step_without_jumps_keeps_norm():
    rng = np.random.default_rng(1)
    h = random_hermitian(rng, 2)
    psi = np.array([1, 0], complex)
    thr = 0.5
    for _ in range(100):
        psi, thr, k = mcwf_step(psi, h, [], thr, rng, 1e-3)
        assert k is None
    assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-10)


# ---------------------------------------------------------------------------
# compiled runs


def driven(gamma=0.0, rabi=1 * MHz, duration=2 * us, dt=10 * ns, downsample=1):
    s = System()
    a = Atom([g, e])
    s.add_atom(a)
    h = s.add_coupling(a, g, e, rabi)
    if gamma:
        s.add_decay(a, e, g, gamma)
    s.add_detector(Population(a, e, "P_e"))
    s.add_detector(Population(a, g, "P_g"))
    s.add_detector(Coherence(a, g, e, "rho_ge"))
    seq = Sequence(dt, downsample).append(Pulse(h, duration))
    s.initial_state = [g]
    return s, seq


def test_time_grid_starts_at_dt():
    s, seq = driven(downsample=5)
    res = run(compile(s, seq))
    assert res.times[0] == pytest.approx(50 * ns)
    assert len(res.times) == 40
    assert res["P_e"] == pytest.approx(np.sin(0.5 * 1 * MHz * res.times) ** 2, abs=1e-6)


def test_populations_sum_to_norm():
    s, seq = driven(gamma=200 * kHz)
    for dm in (False, True):
        res = run(compile(s, seq, density_matrix=dm))
        assert np.allclose(res["P_e"] + res["P_g"], 1.0, atol=1e-12)


def test_wait_only_is_constant():
    s = System()
    a = Atom([g, e])
    s.add_atom(a)
    s.add_detector(Population(a, e, "P"))
    res = run(compile(s, Sequence(10 * ns).append(Wait(1 * us)), np.array([0.6, 0.8])))
    assert np.allclose(res["P"], 0.64, atol=1e-15)


def test_compiled_me_matches_reference_loop():
    s = System()
    a = Atom([g, e, r])
    s.add_atom(a)
    h1 = s.add_coupling(a, g, e, 2 * MHz)
    h2 = s.add_coupling(a, e, r, 1.3 * MHz)
    s.add_detuning(a, r, 0.4 * MHz)
    s.add_decay(a, e, g, 300 * kHz)
    s.add_dephasing(a, r, 100 * kHz)
    s.add_detector(Population(a, r, "P_r"))
    seq = Sequence(5 * ns).append(Pulse([h1, h2], 1 * us))
    job = compile(s, seq, [g], density_matrix=True)
    res = run(job)
    h = job.hamiltonian(0)
    jumps = job.jump_operators()
    rho = np.diag([1.0, 0, 0]).astype(complex)
    for _ in range(job.n_steps):
        rho = lindblad_step(rho, h, jumps, 5 * ns)
    assert res.final_state == pytest.approx(rho, abs=1e-12)
    assert res["P_r"][-1] == pytest.approx(rho[2, 2].real, abs=1e-12)


def test_coherence_detector():
    s, seq = driven(duration=250 * ns, rabi=1 * MHz)
    res = run(compile(s, seq))
    # after a pi/2 pulse rho_ge = <g|rho|e> has modulus 1/2
    assert abs(res["rho_ge"][-1]) == pytest.approx(0.5, abs=1e-6)


def test_mcwf_jump_times_exponential():
    gam = 1 / us
    s = System()
    a = Atom([g, e])
    s.add_atom(a)
    s.add_decay(a, e, g, gam)
    s.add_detector(Population(a, e, "P"))
    seq = Sequence(10 * ns).append(Wait(8 * us))
    shots = run_shots(s, seq, shots=3000, seed=7, initial_state=[e])
    times = np.array([j[0][0] for j in shots.jumps if j])
    # censoring at 8 us removes about 3e-4 of the mass; compare the truncated law
    cdf = lambda t: (1 - np.exp(-gam * t)) / (1 - math.exp(-gam * 8 * us))
    assert len(times) > 2990
    assert kstest(times - 5 * ns, cdf).pvalue > 0.01


def test_mcwf_mean_tracks_me():
    s, seq = driven(gamma=1 * MHz, duration=3 * us)
    me = run(compile(s, seq, density_matrix=True))["P_e"]
    shots = run_shots(s, seq, shots=400, seed=3)
    assert np.max(np.abs(shots.mean("P_e") - me)) < 0.1


def test_shots_serial_equals_threaded():
    s, seq = driven(gamma=500 * kHz, rabi=Parameter("rabi", 1 * MHz, std=20 * kHz), duration=1 * us)
    a = run_shots(s, seq, shots=8, seed=11, threads=1)
    b = run_shots(s, seq, shots=8, seed=11, threads=4)
    for k in a.values:
        assert np.array_equal(a.values[k], b.values[k])
    assert a.parameters == b.parameters
    assert a.jumps == b.jumps
    one = run_shots(s, seq, shots=1, seed=11)
    assert np.array_equal(one["P_e"][:, 0], a["P_e"][:, 0])


def test_parameter_draws_replay_sampler():
    s, seq = driven(rabi=Parameter("rabi", 1 * MHz, std=50 * kHz), duration=100 * ns)
    shots = run_shots(s, seq, shots=20, seed=5)
    expected = [shot_rng(5, i).normal(1 * MHz, 50 * kHz) for i in range(20)]
    assert [p["rabi"] for p in shots.parameters] == expected


def test_recompile_is_history_free():
    s, seq = driven(rabi=Parameter("rabi", 1 * MHz), duration=500 * ns)
    job = compile(s, seq, overrides={"rabi": 1 * MHz}, rng=shot_rng(0, 0))
    first = run(job)["P_e"].copy()
    recompile(job, {"rabi": 2 * MHz}, shot_rng(0, 0))
    run(job)
    recompile(job, {"rabi": 1 * MHz}, shot_rng(0, 0))
    assert np.array_equal(run(job)["P_e"], first)
    fresh = compile(s, seq, overrides={"rabi": 1 * MHz}, rng=shot_rng(0, 0))
    assert np.array_equal(run(fresh)["P_e"], first)


def test_nonfinite_state_raises():
    s, seq = driven(rabi=10_000 * MHz)
    with pytest.raises(SimulationError):
        run(compile(s, seq))


def test_convergence_check_small():
    s, seq = driven()
    assert convergence_check(s, seq, "P_e") < 1e-6


# ---------------------------------------------------------------------------
# classical motion

WL, W0, POWER = 759e-9, 1e-6, 5e-3
ALPHA = 186 * AU_POLARIZABILITY


def test_free_flight():
    s = System()
    a = Atom([g], species="Yb171", position=(0, 0, 0), velocity=(0.1, -0.2, 0.0))
    s.add_atom(a)
    s.add_detector(Motion(a, "m"))
    res = run(compile(s, Sequence(10 * ns).append(Wait(1 * us))))
    assert res["m"][-1, :3] == pytest.approx([1e-7, -2e-7, 0.0], abs=1e-18)


def test_trap_oscillation_frequency():
    m = 171 * AMU
    u0 = ALPHA * 2 * POWER / (math.pi * W0 ** 2) / (2 * EPS0 * C_LIGHT)
    omega = math.sqrt(4 * u0 / (m * W0 ** 2))
    period = 2 * math.pi / omega
    dt = period / 1000
    n = int(round(3 * period / dt))
    s = System()
    a = Atom([g], species="Yb171", position=(0.01 * W0, 0, 0), polarizabilities={WL: ALPHA})
    s.add_atom(a)
    s.add_beam(GaussianBeam(WL, W0, POWER))
    s.add_detector(Motion(a, "m"))
    res = run(compile(s, Sequence(dt).append(Wait(n * dt))))
    x = res["m"][:, 0]
    t = res.times
    crossings = t[1:][(x[:-1] > 0) & (x[1:] <= 0)]
    measured = 2 * math.pi / np.mean(np.diff(crossings)) if len(crossings) > 1 else None
    assert len(crossings) >= 2
    assert measured == pytest.approx(omega, rel=0.01)


def test_atom_follows_moving_trap():
    tw = TweezerArray(WL, W0, row_tones=[(0.0, 1.0)], col_tones=[(0.0, 1.0)], power_per_amplitude2=POWER,
                      row_calibration=1e-12, col_calibration=1e-12)
    s = System()
    a = Atom([g], species="Yb171", polarizabilities={WL: ALPHA})
    s.add_atom(a)
    arr = s.add_beam(tw)
    s.add_detector(Motion(a, "m"))
    # trap period is about 40 us; a linear ramp leaves a residual swing of v / omega
    dt, ramp = 100 * ns, 1e-3
    seq = Sequence(dt).extend([MoveRow(arr, 0, 2.5e6, ramp), Wait(50 * us)])
    res = run(compile(s, seq))
    y = res["m"][:, 1]
    k = np.arange(1, len(y) + 1)
    center = 2.5e-6 * np.clip(k * dt / ramp, 0, 1)
    assert np.max(np.abs(y - center)) < 0.05 * W0

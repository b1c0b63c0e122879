import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atomdyn.atomic import Atom, Level
from atomdyn.bell422 import EnvelopeError, GateEnvelope, inject_pauli_errors, load_envelope
from atomdyn.model import System
from atomdyn.observe import (PAULIS, average_gate_fidelity, channel_from_outputs, codewords_422,
                             entanglement_fidelity, flagged_by, logical_bell_422, pauli_string, process_tomography,
                             stabilizer_metrics)
from atomdyn.sequence import Pulse, Sequence, Wait
from atomdyn.solvers import qubit_channel
from atomdyn.units import MHz, ns, us

g, e = Level("g"), Level("e")
X = np.array([[0, 1], [1, 0]], complex)


def one_atom(decay=0.0):
    s = System()
    a = Atom([g, e])
    s.add_atom(a)
    h = s.add_coupling(a, g, e, 1 * MHz)
    if decay:
        s.add_decay(a, e, g, decay)
    return s, a, h


# ---------------------------------------------------------------------------
# tomography


def test_identity_channel():
    s, a, _ = one_atom()
    res = process_tomography(qubit_channel(s, Sequence(10 * ns).append(Wait(1 * us)), a, (g, e)))
    assert np.max(np.abs(res.ptm - np.eye(4))) < 1e-8
    assert average_gate_fidelity(res, np.eye(2)) == pytest.approx(1.0, abs=1e-12)


def test_x_gate_channel():
    s, a, h = one_atom()
    # Omega t = pi with Omega/2pi = 1 MHz
    seq = Sequence(1 * ns).append(Pulse(h, 0.5 * us))
    res = process_tomography(qubit_channel(s, seq, a, (g, e)))
    assert np.max(np.abs(res.ptm - np.diag([1, 1, -1, -1]))) < 1e-6
    assert average_gate_fidelity(res, X) == pytest.approx(1.0, abs=1e-9)
    assert res.is_cp and res.tp_defect < 1e-9
    assert len(res.kraus) == 1


def amplitude_damping_superop(p):
    k0 = np.diag([1.0, math.sqrt(1 - p)])
    k1 = np.array([[0.0, math.sqrt(p)], [0.0, 0.0]])
    return sum(np.kron(k.conj(), k) for k in (k0, k1)), (k0, k1)


def test_amplitude_damping_channel():
    gam, dur = 1e4, 10 * us
    s = System()
    a = Atom([g, e])
    s.add_atom(a)
    s.add_decay(a, e, g, gam)
    res = process_tomography(qubit_channel(s, Sequence(1 * ns).append(Wait(dur)), a, (g, e)))
    p = 1 - math.exp(-gam * dur)
    superop, (k0, k1) = amplitude_damping_superop(p)
    assert np.max(np.abs(res.superoperator - superop)) < 1e-6
    assert len(res.kraus) == 2
    # the two Choi eigenvalues differ, so the canonical Kraus set is unique up to phase
    for mine, ref in zip(sorted(res.kraus, key=lambda k: -np.linalg.norm(k)), (k0, k1)):
        assert np.max(np.abs(np.abs(mine) - ref)) < 1e-6
    assert res.tp_defect < 1e-6


def test_overcomplete_inputs_agree_with_minimal():
    s, a, h = one_atom(decay=2e5)
    seq = Sequence(1 * ns).append(Pulse(h, 0.3 * us))
    ch = qubit_channel(s, seq, a, (g, e))
    m = process_tomography(ch)
    o = process_tomography(ch, overcomplete=True)
    assert np.allclose(m.superoperator, o.superoperator, atol=1e-10)


def test_missing_inputs_rejected():
    with pytest.raises(ValueError):
        channel_from_outputs({"0": np.eye(2) / 2})


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0, math.pi), st.floats(0, 2 * math.pi))
def test_unitary_channel_ptm_is_orthogonal(a, b, c):
    u = (np.diag([1, np.exp(1j * a)]) @ np.array([[math.cos(b / 2), -math.sin(b / 2)], [math.sin(b / 2),
                                                                                         math.cos(b / 2)]])
         @ np.diag([1, np.exp(1j * c)]))
    res = process_tomography(lambda rho: u @ rho @ u.conj().T)
    assert np.allclose(res.ptm @ res.ptm.T, np.eye(4), atol=1e-12)
    assert average_gate_fidelity(res, u) == pytest.approx(1.0, abs=1e-12)


def test_depolarizing_is_flagged_as_contracting():
    res = process_tomography(lambda rho: 0.5 * rho + 0.25 * np.eye(2) * np.trace(rho))
    assert np.allclose(res.ptm, np.diag([1, 0.5, 0.5, 0.5]))
    nonphysical = process_tomography(lambda rho: rho.T)
    assert not nonphysical.is_cp


# ---------------------------------------------------------------------------
# fidelity metrics


def test_entanglement_fidelity():
    d = 4
    assert entanglement_fidelity(np.ones(d), np.zeros(d), d) == pytest.approx(1.0)
    assert entanglement_fidelity(np.ones(d), np.full(d, 0.7), d) == pytest.approx(1.0)
    assert entanglement_fidelity(np.ones(2), [0.0, math.pi], 2) == pytest.approx(0.0, abs=1e-15)
    assert entanglement_fidelity(np.full(d, 0.81), np.zeros(d), d) == pytest.approx(0.81)
    traj = np.tile([0.3, -0.3], (d, 1))
    assert entanglement_fidelity(np.ones((d, 2)), traj, d) == pytest.approx(math.cos(0.3) ** 2)
    with pytest.raises(ValueError):
        entanglement_fidelity(np.ones(3), np.zeros(4), 3)
    with pytest.raises(ValueError):
        entanglement_fidelity(np.ones(3), np.zeros(3), 4)


def test_codewords_are_stabilized():
    xxxx, zzzz = pauli_string("XXXX"), pauli_string("ZZZZ")
    words = codewords_422()
    for w in words.values():
        assert np.allclose(xxxx @ w, w, atol=0)
        assert np.allclose(zzzz @ w, w, atol=0)
    gram = np.array([[np.vdot(a, b) for b in words.values()] for a in words.values()])
    assert np.allclose(gram, np.eye(4))
    bell = logical_bell_422()
    assert np.flatnonzero(np.abs(bell) > 0).tolist() == [0b0000, 0b0101, 0b1010, 0b1111]


def test_every_single_qubit_pauli_is_flagged():
    stabs = [pauli_string("XXXX"), pauli_string("ZZZZ")]
    for q in range(4):
        for p in "XYZ":
            ops = ["I"] * 4
            ops[q] = p
            flags = flagged_by(pauli_string("".join(ops)), stabs)
            assert any(flags)
            assert flags == [p in "YZ", p in "XY"]
    assert flagged_by(pauli_string("XXII"), stabs) == [False, False]


def test_stabilizer_metrics_mixed_ensemble():
    t = logical_bell_422()
    states = [t, t, pauli_string("XIII") @ t, pauli_string("IIZI") @ t]
    m = stabilizer_metrics(states, t)
    assert m.F_raw == pytest.approx(0.5)
    assert m.P_even == pytest.approx(0.75)
    assert m.F_post == pytest.approx(2 / 3)
    assert m.F_syndrome == pytest.approx(1.0)
    none = stabilizer_metrics([pauli_string("XIII") @ t], t)
    assert math.isnan(none.F_post) and none.P_even == 0


unit16 = st.lists(st.floats(-1, 1, allow_nan=False), min_size=32, max_size=32)


@settings(max_examples=100, deadline=None)
@given(st.lists(unit16, min_size=1, max_size=5))
def test_post_selection_never_lowers_fidelity(raw):
    states = []
    for v in raw:
        psi = np.array(v[:16]) + 1j * np.array(v[16:])
        n = np.linalg.norm(psi)
        if n < 1e-3:
            return
        states.append(psi / n)
    m = stabilizer_metrics(states, logical_bell_422())
    if m.P_syndrome < 1e-9:
        return
    assert m.F_syndrome >= m.F_post - 1e-12
    assert m.F_post >= m.F_raw - 1e-12


def test_pauli_injection_statistics():
    t = logical_bell_422()
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(2000):
        psi, applied = inject_pauli_errors(t, 0.3, rng)
        if applied:
            hits += 1
            assert applied[0][0] in "XZ" and 1 <= int(applied[0][1]) <= 4
            assert abs(np.vdot(t, psi)) < 1e-12
        else:
            assert psi is t
    assert hits / 2000 == pytest.approx(0.3, abs=0.03)
    assert inject_pauli_errors(t, 0.0, rng) == (t, [])


def test_pauli_table():
    assert np.allclose(PAULIS[1] @ PAULIS[2], 1j * PAULIS[3])
    assert pauli_string("ZI").shape == (4, 4)
    assert np.allclose(np.diag(pauli_string("ZI")), [1, 1, -1, -1])


# ---------------------------------------------------------------------------
# gate envelopes


def test_bundled_envelope_loads():
    env = load_envelope()
    assert env.rabi_time_product > 0
    assert np.all(np.isfinite(env.samples))


def test_envelope_errors(tmp_path):
    with pytest.raises(EnvelopeError, match="not found"):
        load_envelope(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"rabi_time_product": 7.0}))
    with pytest.raises(ValueError):
        load_envelope(str(bad))
    good = tmp_path / "phases.json"
    good.write_text(json.dumps({"rabi_time_product": 7.0, "phases": [0.0, math.pi / 2]}))
    env = load_envelope(str(good))
    assert np.allclose(env.samples, [1, 1j])
    assert GateEnvelope.from_dict({"rabi_time_product": 1, "samples": [[0, 1]]}).samples[0] == 1j

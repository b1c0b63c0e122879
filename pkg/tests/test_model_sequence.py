import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atomdyn.atomic import Atom, HyperfineManifold, Level
from atomdyn.basis import build_basis
from atomdyn.compiler import CompileError, compile
from atomdyn.model import BeamNode, CouplingNode, CycleError, ModelError, System, topo_order
from atomdyn.observe import Population
from atomdyn.optics import Polarization, TweezerArray
from atomdyn.sequence import (Gate, MoveRow, Off, On, Parallel, Pulse, Sequence, SequenceError, Wait,
                              expand_timeline, total_duration)
from atomdyn.units import MHz, kHz, ns, um, us

g, e, r = Level("g"), Level("e"), Level("r")


# ---------------------------------------------------------------------------
# basis


def test_basis_dimensions():
    assert build_basis([[g, e, r]] * 5, [(r, 1)]).dim == 2 ** 5 + 5 * 2 ** 4 == 112
    for n in range(1, 7):
        assert build_basis([[g, r]] * n).dim == 2 ** n
        assert build_basis([[g, r]] * n, [(r, 1)]).dim == n + 1


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 5))
def test_basis_respects_max_occupation(n, cap):
    b = build_basis([[g, e, r]] * n, [(r, cap)])
    counts = (b.configs == 2).sum(axis=1)
    assert counts.max(initial=0) <= cap
    expected = sum(math.comb(n, k) * 2 ** (n - k) for k in range(min(cap, n) + 1))
    assert b.dim == expected
    for i in range(b.dim):
        assert b.lookup(b.configs[i]) == i


def test_basis_embed_restrict_roundtrip():
    b = build_basis([[g, r]] * 3, [(r, 1)])
    psi = np.arange(1, b.dim + 1, dtype=complex)
    assert np.array_equal(b.restrict(b.embed(psi)), psi)
    assert b.labels()[0] == b.label(0)


# ---------------------------------------------------------------------------
# graph


def test_topo_order_dependencies_first():
    beam = BeamNode(beam=None, name="laser")
    c = CouplingNode(atom=0, lower=g, upper=e, rabi=1.0, beam="laser")
    assert topo_order([c, beam]) == [1, 0]
    a, b = BeamNode(beam=None), BeamNode(beam=None)
    assert topo_order([a, b, BeamNode(beam=None)]) == [0, 1, 2]


def test_topo_order_cycle():
    n = BeamNode(beam=None, name="x", extra_deps=("x",))
    with pytest.raises(CycleError):
        topo_order([n])
    a = BeamNode(beam=None, name="a", extra_deps=("b",))
    b = BeamNode(beam=None, name="b", extra_deps=("a",))
    with pytest.raises(CycleError):
        topo_order([a, b])


# ---------------------------------------------------------------------------
# registration


def two_level():
    s = System()
    a = Atom([g, e])
    s.add_atom(a)
    return s, a


def test_single_coupling_node():
    s, a = two_level()
    h = s.add_coupling(a, g, e, 1 * MHz)
    assert isinstance(h, int)
    assert s.node(h).amplitude({}) == pytest.approx(1 * MHz)
    with pytest.raises(ModelError):
        s.add_coupling(a, g, r, 1 * MHz)


def test_manifold_coupling_nodes():
    lo, up = HyperfineManifold("1/2", 0.0, "q"), HyperfineManifold("1/2", 2.357, "R")
    s = System()
    a = Atom([lo, up])
    s.add_atom(a)
    hs = s.add_coupling(a, lo, up, 1 * MHz, polarization=Polarization((1, 1j, 0)))
    assert len(hs) == 1
    n = s.node(hs[0])
    assert n.upper.m == n.lower.m + n.q
    s2 = System()
    s2.add_atom(a)
    hs2 = s2.add_coupling(a, lo, up, 1 * MHz, polarization=Polarization((1, 0, 0)))
    assert len(hs2) == 2
    amps = sorted(abs(s2.node(h).amplitude({})) for h in hs2)
    # CG magnitude sqrt(2/3) times |e_q| = 1/sqrt2
    assert amps == pytest.approx([1 * MHz * math.sqrt(2 / 3) / math.sqrt(2)] * 2)


@pytest.mark.parametrize("f_lower", ["1/2", "3/2"])
def test_decay_manifold_sum_rule(f_lower):
    lo, up = HyperfineManifold(f_lower, 0.0, "g"), HyperfineManifold("1/2", 1.0, "e")
    s = System()
    a = Atom([lo, up])
    s.add_atom(a)
    per_upper = {}
    for h in s.add_decay(a, up, lo, 2.0):
        n = s.node(h)
        per_upper[n.upper] = per_upper.get(n.upper, 0.0) + n.rate
    assert len(per_upper) == 2
    assert all(v == pytest.approx(2.0, rel=1e-12) for v in per_upper.values())


def test_vdw_interaction_energy():
    s = System()
    a = Atom([g, r], position=(0, 0, 0))
    b = Atom([g, r], position=(2 * um, 0, 0))
    s.add_atom(a)
    s.add_atom(b)
    c6 = 531 * MHz * (2 * um) ** 6
    s.add_vdwinteraction(a, b, r, r, c6)
    s.add_detector(Population(a, r, "p"))
    seq = Sequence(1 * ns).append(Wait(1 * ns))
    job = compile(s, seq, [g, g])
    h = job.hamiltonian(0).to_dense()
    rr = job.basis.lookup([1, 1])
    assert h[rr, rr].real / (2 * math.pi) == pytest.approx(531e6, rel=1e-9)


def test_zero_dephasing_is_a_noop():
    s, a = two_level()
    h = s.add_coupling(a, g, e, 1 * MHz)
    s.add_dephasing(a, e, 0.0)
    s.add_detector(Population(a, e, "P"))
    seq = Sequence(10 * ns).append(Pulse(h, 1 * us))
    ref_s, ref_a = two_level()
    h2 = ref_s.add_coupling(ref_a, g, e, 1 * MHz)
    ref_s.add_detector(Population(ref_a, e, "P"))
    ref = compile(ref_s, Sequence(10 * ns).append(Pulse(h2, 1 * us)), [g], density_matrix=True)
    job = compile(s, seq, [g], density_matrix=True)
    from atomdyn.solvers import run
    assert np.allclose(run(job)["P"], run(ref)["P"], atol=1e-14)


def test_solver_selection():
    s, a = two_level()
    h = s.add_coupling(a, g, e, 1 * MHz)
    seq = Sequence(10 * ns).append(Pulse(h, 1 * us))
    assert compile(s, seq, [g]).solver == "se"
    assert compile(s, seq, [g]).dim == 2
    s.add_decay(a, e, g, 1 * kHz)
    assert compile(s, seq, [g]).solver == "mcwf"
    assert compile(s, seq, [g], density_matrix=True).solver == "me"
    s2 = System()
    s2.add_atom(Atom([g, e], species="Yb171"))
    assert compile(s2, Sequence(10 * ns).append(Wait(1 * us))).solver == "newton"


def test_initial_state_errors():
    s, a = two_level()
    s.add_coupling(a, g, e, 1 * MHz)
    seq = Sequence(10 * ns).append(Wait(1 * us))
    with pytest.raises(CompileError):
        compile(s, seq, [r])
    with pytest.raises(CompileError):
        compile(s, seq, np.zeros(3))


# ---------------------------------------------------------------------------
# sequence


def test_sequence_durations():
    seq = Sequence(1 * ns)
    assert total_duration(seq) == 0
    seq.append(Wait(5 * us))
    assert seq.duration == pytest.approx(5 * us) and seq.n_steps == 5000
    seq.append(Parallel(Pulse(0, 2 * us), Pulse(1, 1 * us)))
    assert seq.duration == pytest.approx(7 * us)
    seq.append(On(0))
    assert seq.duration == pytest.approx(7 * us)
    assert total_duration(Sequence(1 * ns).extend([Wait(1 * us), Wait(2 * us)])) == pytest.approx(3 * us)


def test_strict_rounding():
    seq = Sequence(3 * ns).append(Wait(10 * ns))
    with pytest.raises(SequenceError):
        seq.n_steps
    loose = Sequence(3 * ns, strict=False).append(Wait(10 * ns))
    assert loose.n_steps == 3
    tl = expand_timeline(loose, [])
    assert tl.dts.sum() == pytest.approx(10 * ns, rel=1e-15)


def test_pulse_multipliers_and_envelope():
    seq = Sequence(1 * ns).extend([Wait(3 * ns), Pulse(7, 8 * ns, envelope=[1, 2j, 3, 4]), Wait(2 * ns)])
    tl = expand_timeline(seq, [7])
    m = tl.multipliers[:, 0]
    assert np.array_equal(m[:3], np.zeros(3))
    assert np.array_equal(m[3:11], [1, 1, 2j, 2j, 3, 3, 4, 4])
    assert np.array_equal(m[11:], np.zeros(2))
    plain = expand_timeline(Sequence(10 * ns).append(Pulse(7, 1 * us)), [7])
    assert np.count_nonzero(plain.multipliers) == 100


def test_on_off_and_pulse():
    seq = Sequence(1 * ns).extend([On(1), Wait(2 * ns), Off(1), Wait(2 * ns)])
    tl = expand_timeline(seq, [1])
    assert list(tl.multipliers[:, 0]) == [1, 1, 0, 0]


def test_move_row_ramp():
    tw = TweezerArray(759e-9, 1e-6, row_tones=[(0.0, 1.0), (10e6, 1.0)], col_tones=[(0.0, 1.0)],
                      power_per_amplitude2=1e-3)
    seq = Sequence(1 * ns).extend([MoveRow(0, 1, -8e6, 10 * ns), Wait(3 * ns)])
    tl = expand_timeline(seq, [], {0: tw})
    f = tl.tones[0].row_freq[:, 1]
    k = np.arange(10)
    assert np.allclose(f[:10], 10e6 - 8e6 * (k + 0.5) / 10, rtol=0, atol=1e-6)
    assert np.all(f[10:] == 2e6)
    assert np.all(tl.tones[0].row_freq[:, 0] == 0.0)


def test_bell_protocol_duration():
    from atomdyn.bell422 import Bell422Config, build
    model = build(Bell422Config().ideal())
    assert total_duration(model.sequence) == pytest.approx(164e-6, rel=0.01)


def test_gate_validation():
    with pytest.raises(SequenceError):
        Gate((0,), (g, e), np.eye(3))
    with pytest.raises(SequenceError):
        Gate((0,), (g, e), np.array([[1, 1], [0, 1]]))
    leaky = np.diag([1.0, 0.9])
    assert Gate((0,), (g, e), leaky, unitary=False).matrix.shape == (2, 2)
    with pytest.raises(SequenceError):
        Gate((0,), (g, e), np.diag([1.0, 1.1]), unitary=False)


def test_pulsed_detuning_follows_sequence():
    s, a = two_level()
    d = s.add_detuning(a, e, 1 * MHz, pulsed=True)
    s.add_detector(Population(a, e, "P"))
    seq = Sequence(1 * ns).extend([Wait(2 * ns), Pulse(d, 3 * ns)])
    job = compile(s, seq, [g])
    diag = [job.hamiltonian(k).to_dense()[1, 1].real for k in range(5)]
    assert diag == pytest.approx([0, 0, 1 * MHz, 1 * MHz, 1 * MHz])

"""Logical Bell-state preparation in the [[4,2,2]] code on a 2x2 tweezer array.

Four two-level nuclear-spin qubits (plus two Rydberg sublevels each, so the
register dimension is 4**4 = 256) sit in a 2x2 AOD array. Row 0 is shuttled
next to row 1, a parallel CZ acts on the pairs (0, 2) and (1, 3), and the
row is shuttled back between two X echoes:

    H(all) -> move -> CZ -> X(all) -> move back -> X(all) -> H(row 1)

H = Rz(pi/2) Rx(pi/2) Rz(pi/2), with Rx a resonant qubit coupling and Rz a
timed detuning on |1>. The CZ is injected as a fixed operator on the
computational levels, either the exact CZ (reference mode) or the
computational block of a Rydberg pulse simulated on one static pair
(envelope mode). Residual Rydberg population of that block shows up as
lost norm.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .atomic import Atom, GaussianPosition, Level, MaxwellBoltzmann
from .basis import build_basis
from .compiler import compile
from .model import System
from .observe import StabilizerMetrics, logical_bell_422, pauli_string, stabilizer_metrics
from .optics import TweezerArray
from .params import Parameter
from .sequence import Gate, MoveRow, Parallel, Pulse, Sequence, Wait, total_duration
from .solvers import run, run_shots
from .units import AU_POLARIZABILITY, C_LIGHT, EPS0, HBAR, K_B, MHz, MU_B, mW, nm, ns, uK, um, us

ENVELOPE_ASSET = "cz_two_pulse.json"
PAIRS = ((0, 2), (1, 3))
CZ = np.diag([1, 1, 1, -1]).astype(complex)


class EnvelopeError(FileNotFoundError):
    pass


@dataclass
class Bell422Config:
    shots: int = 100
    seed: int = 0
    dt: float = 10 * ns
    # single-qubit control
    rabi_sq: float = 1 * MHz
    rz_rate: float = 1 * MHz
    # geometry
    x_sep: float = 10 * um
    y_sep: float = 10 * um
    y_gate: float = 2 * um
    move_time: float = 80 * us
    calibration: float = 1e-12  # m/Hz
    # tweezers
    trap_wavelength: float = 759 * nm
    trap_waist: float = 1.0 * um
    trap_power: float = 5 * mW
    polarizability: float = 186 * AU_POLARIZABILITY
    # Rydberg gate
    rabi_rydberg: float = 2.5 * MHz
    c6: float = 531 * MHz * (2 * um) ** 6
    zeeman_splitting: float = 2.357 * MU_B * 4.88e-4 / HBAR
    sigma_plus: float = 1.0  # relative strength of the off-resonant |0> -> |r+> component
    gate_time_product: float = 7.612  # Omega * T of the reference timing
    # noise
    temperature: float = 3 * uK
    rabi_sq_rel_std: float = 0.005
    detuning_std: float = 200 * 2 * math.pi  # quasi-static qubit detuning, rad/s
    pauli_error_rate: float = 0.0  # probability of one injected single-qubit X or Z per shot
    # gate model
    envelope: str | None = None
    threads: int | None = None

    def ideal(self) -> "Bell422Config":
        """Same protocol with every noise source switched off."""
        return replace(self, temperature=0.0, rabi_sq_rel_std=0.0, detuning_std=0.0, pauli_error_rate=0.0)

    @property
    def trap_frequencies(self) -> tuple[float, float]:
        """Radial and axial angular trap frequencies of one tweezer."""
        mass = 170.9363258 * 1.66053906660e-27
        w = self.trap_waist
        peak = 2 * self.trap_power / (math.pi * w ** 2)
        depth = self.polarizability * peak / (2 * EPS0 * C_LIGHT)
        z_r = math.pi * w ** 2 / self.trap_wavelength
        return math.sqrt(4 * depth / (mass * w ** 2)), math.sqrt(2 * depth / (mass * z_r ** 2))


# ---------------------------------------------------------------------------
# gate envelope


@dataclass
class GateEnvelope:
    """Rydberg drive of a CZ: Omega*T, constant detuning/Omega and complex samples."""

    rabi_time_product: float
    detuning_over_rabi: float
    samples: np.ndarray
    interp: str = "piecewise_constant"
    description: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> "GateEnvelope":
        if "samples" in d:
            s = np.array([complex(re, im) for re, im in d["samples"]])
        elif "phases" in d:
            s = np.exp(1j * np.asarray(d["phases"], float))
        else:
            raise ValueError("envelope needs 'samples' ([re, im] pairs) or 'phases' (rad)")
        return cls(float(d["rabi_time_product"]), float(d.get("detuning_over_rabi", 0.0)), s,
                   d.get("interp", "piecewise_constant"), d.get("description", ""))


def load_envelope(path: str | None = None) -> GateEnvelope:
    """Read an envelope JSON file; ``None`` loads the bundled two-pulse CZ."""
    if path is None:
        ref = resources.files("atomdyn") / "data" / ENVELOPE_ASSET
        if not ref.is_file():
            raise EnvelopeError(f"bundled gate envelope 'atomdyn/data/{ENVELOPE_ASSET}' is missing; reinstall the "
                                "package or pass --envelope PATH")
        text = ref.read_text()
    else:
        p = Path(path)
        if not p.is_file():
            raise EnvelopeError(f"gate envelope file {str(p)!r} not found; expected a JSON file with "
                                "'rabi_time_product' and 'samples' or 'phases' (see atomdyn/data/"
                                f"{ENVELOPE_ASSET} for the format)")
        text = p.read_text()
    return GateEnvelope.from_dict(json.loads(text))


def pair_gate_block(cfg: Bell422Config, env: GateEnvelope) -> tuple[np.ndarray, dict]:
    """Computational 4x4 block of the Rydberg pulse on one static pair at the gate distance.

    Includes the sigma+ leakage into the Zeeman-shifted sublevel and the
    finite van der Waals shift. Returns the block (columns: inputs 00, 01,
    10, 11) and diagnostics.
    """
    q0, q1, rm, rp = (Level(x) for x in ("0", "1", "r-", "r+"))
    sys = System()
    atoms = [Atom([q0, q1, rm, rp], position=(0, 0, 0)), Atom([q0, q1, rm, rp], position=(0, cfg.y_gate, 0))]
    for a in atoms:
        sys.add_atom(a)
    om = cfg.rabi_rydberg
    drive = sys.add_coupling(atoms, q1, rm, om)
    if cfg.sigma_plus:
        drive += sys.add_coupling(atoms, q0, rp, cfg.sigma_plus * om)
    det = [sys.add_detuning(a, rm, env.detuning_over_rabi * om, pulsed=True) for a in atoms]
    det += [sys.add_detuning(a, rp, env.detuning_over_rabi * om, pulsed=True) for a in atoms]
    for a in atoms:
        sys.add_detuning(a, rp, cfg.zeeman_splitting)
    for la in (rm, rp):
        for lb in (rm, rp):
            sys.add_vdwinteraction(atoms[0], atoms[1], la, lb, cfg.c6)
    duration = env.rabi_time_product / om
    v = cfg.c6 / cfg.y_gate ** 6
    n = max(len(env.samples), math.ceil(duration * 25 * max(v, om) / (2 * math.pi)))
    seq = Sequence(duration / n)
    seq.append(Parallel(Pulse(drive, duration, env.samples, env.interp), Pulse(det, duration)))
    job = compile(sys, seq, initial_state=[q0, q0], solver="se")
    comp = [job.basis.lookup(np.array([i, j])) for i in (0, 1) for j in (0, 1)]
    block = np.zeros((4, 4), complex)
    for c, idx in enumerate(comp):
        psi0 = np.zeros(job.dim, complex)
        psi0[idx] = 1
        job.state0 = psi0
        run(job)
        block[:, c] = job.state[comp]
    ph01 = np.angle(block[1, 1] / block[0, 0])
    info = {"duration": duration, "steps": n, "interaction": v,
            "leakage": float(1 - np.min(np.sum(np.abs(block) ** 2, axis=0))),
            "single_qubit_phase": float(ph01),
            "conditional_phase": float(np.angle(block[3, 3] * block[0, 0] / (block[1, 1] * block[2, 2])))}
    return block, info


# ---------------------------------------------------------------------------
# protocol


@dataclass
class Bell422Model:
    system: System
    sequence: Sequence
    sq: list[int]
    rz: list[int]
    tweezer: int
    levels: tuple
    gate_info: dict = field(default_factory=dict)


def build(cfg: Bell422Config, reference_cz: bool = True, envelope: GateEnvelope | None = None) -> Bell422Model:
    q0, q1, rm, rp = levels = tuple(Level(x) for x in ("0", "1", "r-", "r+"))
    sys = System()
    tw = TweezerArray(cfg.trap_wavelength, cfg.trap_waist,
                      row_tones=[(0.0, 1.0), (cfg.y_sep / cfg.calibration, 1.0)],
                      col_tones=[(0.0, 1.0), (cfg.x_sep / cfg.calibration, 1.0)],
                      power_per_amplitude2=cfg.trap_power, row_calibration=cfg.calibration,
                      col_calibration=cfg.calibration)
    centers = tw.trap_positions().reshape(-1, 3)
    wr, wz = cfg.trap_frequencies
    atoms = []
    for i, c in enumerate(centers):
        if cfg.temperature > 0:
            a0 = Atom(levels, species="Yb171")
            sig = [math.sqrt(K_B * cfg.temperature / (a0.mass * w ** 2)) for w in (wr, wr, wz)]
            pos, vel = GaussianPosition(tuple(c), tuple(sig)), MaxwellBoltzmann(cfg.temperature)
        else:
            pos, vel = tuple(c), (0.0, 0.0, 0.0)
        atoms.append(Atom(levels, species="Yb171", position=pos, velocity=vel, name=f"q{i + 1}",
                          polarizabilities={cfg.trap_wavelength: cfg.polarizability}))
        sys.add_atom(atoms[-1])
    th = sys.add_beam(tw, name="tweezers")

    rabi = cfg.rabi_sq
    if cfg.rabi_sq_rel_std > 0:
        rabi = Parameter("rabi_sq", cfg.rabi_sq, cfg.rabi_sq * cfg.rabi_sq_rel_std)
    sq = [sys.add_coupling(a, q0, q1, rabi, name=f"sq{i + 1}") for i, a in enumerate(atoms)]
    rz = [sys.add_detuning(a, q1, -cfg.rz_rate, pulsed=True, name=f"rz{i + 1}") for i, a in enumerate(atoms)]
    if cfg.detuning_std > 0:
        for i, a in enumerate(atoms):
            sys.add_detuning(a, q1, Parameter(f"qubit_detuning{i + 1}", 0.0, cfg.detuning_std))
    # Rydberg structure; the entangling operation itself is injected below
    sys.add_coupling(atoms, q1, rm, cfg.rabi_rydberg, name="rydberg")
    for a in atoms:
        sys.add_detuning(a, rp, cfg.zeeman_splitting)
    for i in range(4):
        for j in range(i + 1, 4):
            sys.add_vdwinteraction(atoms[i], atoms[j], rm, rm, cfg.c6)
    sys.initial_state = [q0] * 4

    t_pi = math.pi / cfg.rabi_sq
    dt = cfg.dt

    def grid(t):
        return max(1, round(t / dt)) * dt

    def rz_pulse(which, theta):
        theta = theta % (2 * math.pi)
        if theta < 1e-12:
            return []
        t = theta / cfg.rz_rate
        n = max(1, math.ceil(t / dt - 1e-9))
        return [Pulse([rz[i] for i in which], t, dt=t / n)]

    def h(which):
        return rz_pulse(which, math.pi / 2) + [Pulse([sq[i] for i in which], grid(t_pi / 2))] + \
            rz_pulse(which, math.pi / 2)

    def x(which):
        return [Pulse([sq[i] for i in which], grid(t_pi))]

    gate_time = grid(cfg.gate_time_product / cfg.rabi_rydberg)
    info: dict = {}
    if reference_cz:
        cz_ops = [Gate(p, (q0, q1), CZ) for p in PAIRS]
        theta = 0.0
    else:
        env = envelope if envelope is not None else load_envelope(cfg.envelope)
        block, info = pair_gate_block(cfg, env)
        gate_time = grid(info["duration"])
        cz_ops = [Gate(p, (q0, q1), block, unitary=False) for p in PAIRS]
        theta = -info["single_qubit_phase"]

    seq = Sequence(dt, downsample=100)
    allq = range(4)
    seq.append(Wait(grid(0.1 * us)))
    seq.extend(h(allq))
    seq.append(MoveRow(th, 0, (cfg.y_sep - cfg.y_gate) / cfg.calibration, cfg.move_time))
    seq.extend(cz_ops)
    seq.append(Wait(gate_time))
    seq.extend(rz_pulse(allq, theta))
    seq.extend(x(allq))
    seq.append(MoveRow(th, 0, -(cfg.y_sep - cfg.y_gate) / cfg.calibration, cfg.move_time))
    seq.extend(x(allq))
    seq.extend(h((2, 3)))
    return Bell422Model(sys, seq, sq, rz, th, levels, info)


def register_amplitudes(final_state: np.ndarray, basis) -> np.ndarray:
    """Amplitudes of the 16 computational states (qubit 1 most significant)."""
    out = np.zeros(16, complex)
    for s in range(16):
        cfg = np.array([(s >> (3 - a)) & 1 for a in range(4)])
        out[s] = final_state[basis.lookup(cfg)]
    return out


def inject_pauli_errors(psi: np.ndarray, rate: float, rng: np.random.Generator) -> tuple[np.ndarray, list]:
    """With probability ``rate`` apply one X or Z error (equal odds) to a uniformly chosen qubit."""
    if rate <= 0 or rng.random() >= rate:
        return psi, []
    q = int(rng.integers(4))
    p = "X" if rng.random() < 0.5 else "Z"
    ops = ["I"] * 4
    ops[q] = p
    return pauli_string("".join(ops)) @ psi, [f"{p}{q + 1}"]


@dataclass
class Bell422Report:
    metrics: StabilizerMetrics
    populations: dict
    duration: float
    dimension: int
    shots: int
    errors: list
    gate_info: dict
    states: list = field(default_factory=list, repr=False)  # register amplitudes per shot

    def table(self) -> str:
        m = self.metrics
        lines = [f"{'metric':<12}{'value':>10}",
                 f"{'F_raw':<12}{m.F_raw:>10.4f}",
                 f"{'P_even':<12}{m.P_even:>10.4f}",
                 f"{'F_post':<12}{m.F_post:>10.4f}",
                 f"{'F_syndrome':<12}{m.F_syndrome:>10.4f}",
                 "", "dominant basis states:"]
        for k, v in list(self.populations.items())[:4]:
            lines.append(f"  |{k}>  {v:.4f}")
        lines.append(f"\nshots={self.shots} dimension={self.dimension} duration={self.duration * 1e6:.2f} us")
        return "\n".join(lines)


def run_bell422(cfg: Bell422Config, reference_cz: bool | None = None) -> Bell422Report:
    """Run the protocol and score the final register states."""
    if reference_cz is None:
        reference_cz = cfg.envelope is None
    model = build(cfg, reference_cz=reference_cz)
    shots = run_shots(model.system, model.sequence, shots=cfg.shots, seed=cfg.seed, keep_final=True,
                      threads=cfg.threads, solver="se")
    basis = build_basis([a.levels for a in model.system.atoms], model.system.maxoccupations)
    states, errors = [], []
    for s, final in enumerate(shots.final_states):
        psi = register_amplitudes(final, basis)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, s, 1]))
        psi, applied = inject_pauli_errors(psi, cfg.pauli_error_rate, rng)
        states.append(psi)
        errors.append(applied)
    metrics = stabilizer_metrics(states, logical_bell_422())
    pops = np.mean([np.abs(p) ** 2 for p in states], axis=0)
    order = np.argsort(-pops, kind="stable")
    populations = {format(int(i), "04b"): float(pops[i]) for i in order}
    return Bell422Report(metrics, populations, total_duration(model.sequence), basis.dim, cfg.shots, errors,
                         model.gate_info, states)

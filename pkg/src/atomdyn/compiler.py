"""Compile a System and Sequence into a preallocated SimulationJob.

Compilation has a structural part, done once, and a numerical part that is
repeated for every shot by :func:`recompile`:

1. beams are resolved with this shot's parameter values;
2. atom positions and velocities are sampled and polarizabilities looked up;
3. operator entries, coefficient schedules, jump operators and the initial
   state are (re)filled in topological node order.

The sparsity pattern and all buffer sizes are fixed by the structural part.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .atomic import Level
from .basis import Basis, build_basis
from .model import (BeamNode, CouplingNode, DecayNode, DephasingNode, DetuningNode, InteractionNode,
                    ModelError, NoisyCouplingNode, PlanarCouplingNode, System, topo_order)
from .noise import synthesize_phase_noise
from .observe import Coherence, Field, Motion, Population
from .operators import SparseOperator
from .optics import TweezerArray
from .params import draw_assignment, resolve_value
from .sequence import Gate, Sequence, expand_timeline

SOLVERS = ("se", "me", "mcwf", "newton")


class CompileError(ModelError):
    pass


def shot_rng(master_seed: int, shot: int) -> np.random.Generator:
    """Independent, reproducible generator for one shot."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(shot)]))


@dataclass
class Term:
    node: int
    kind: str  # coupling | detuning | interaction | nonherm
    start: int
    stop: int


@dataclass
class SimulationJob:
    system: System
    sequence: Sequence
    basis: Basis
    solver: str
    order: int
    order_nodes: list[int]
    timeline: object
    terms: list[Term]
    h_rows: np.ndarray
    h_cols: np.ndarray
    h_base: np.ndarray
    h_term: np.ndarray
    h_herm: np.ndarray
    coef: np.ndarray
    jump_nodes: list[int]
    j_rows: np.ndarray
    j_cols: np.ndarray
    j_vals: np.ndarray
    j_ptr: np.ndarray
    ldl: np.ndarray
    det_i: np.ndarray
    det_j: np.ndarray
    det_w: np.ndarray
    det_id: np.ndarray
    quantum_detectors: list
    motion_detectors: list
    field_detectors: list
    gates: list
    semiclassical: bool
    per_step: bool
    trap_beams: list[int]
    initial_state_spec: object = None
    density_matrix: bool = False
    overrides: dict = field(default_factory=dict)
    # per-shot values
    parameters: dict = field(default_factory=dict)
    beams: dict = field(default_factory=dict)
    positions0: np.ndarray | None = None
    velocities0: np.ndarray | None = None
    masses: np.ndarray | None = None
    alphas: np.ndarray | None = None  # (n_atoms, n_trap_beams)
    amplitudes: np.ndarray | None = None  # per term
    noise_phase: dict = field(default_factory=dict)
    state0: np.ndarray | None = None
    # buffers
    state: np.ndarray | None = None
    tmp: np.ndarray | None = None
    work: np.ndarray | None = None
    out: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def n_steps(self) -> int:
        return self.timeline.n_steps

    @property
    def n_records(self) -> int:
        return self.n_steps // self.sequence.downsample

    @property
    def record_steps(self) -> np.ndarray:
        ds = self.sequence.downsample
        return np.arange(1, self.n_records + 1) * ds - 1

    @property
    def times(self) -> np.ndarray:
        return self.timeline.times[self.record_steps]

    def hamiltonian(self, step: int = 0, effective: bool = False) -> SparseOperator:
        """Assembled operator at ``step`` (drive multipliers of that step)."""
        crow = self.coef[step].copy()
        if not effective:
            for t, term in enumerate(self.terms):
                if term.kind == "nonherm":
                    crow[t] = 0
        vals = crow[self.h_term] * self.h_base
        rows, cols = self.h_rows, self.h_cols
        fr, fc, fv = [rows], [cols], [vals]
        off = self.h_herm & (rows != cols)
        fr.append(cols[off])
        fc.append(rows[off])
        fv.append(vals[off].conj())
        return SparseOperator(self.dim, np.concatenate(fr), np.concatenate(fc), np.concatenate(fv), False)

    def jump_operators(self) -> list[SparseOperator]:
        return [SparseOperator(self.dim, self.j_rows[a:b], self.j_cols[a:b], self.j_vals[a:b])
                for a, b in zip(self.j_ptr[:-1], self.j_ptr[1:])]

    def buffer_bytes(self) -> int:
        return sum(a.nbytes for a in (self.state, self.tmp, self.work, self.out, self.coef) if a is not None)

    def describe(self) -> dict:
        nnz: dict[str, int] = {}
        for t in self.terms:
            nnz[t.kind] = nnz.get(t.kind, 0) + (t.stop - t.start)
        return {
            "dimension": self.dim,
            "solver": self.solver,
            "taylor_order": self.order,
            "steps": self.n_steps,
            "records": self.n_records,
            "terms": len(self.terms),
            "nonzeros": dict(sorted(nnz.items())),
            "jump_operators": len(self.jump_nodes),
            "jump_nonzeros": int(len(self.j_rows)),
            "semiclassical": self.semiclassical,
        }

    def dump_json(self) -> str:
        return json.dumps(self.describe(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# structure


def _beam_handles(system: System) -> list[int]:
    return [n.handle for n in system.nodes if isinstance(n, BeamNode)]


def _resolve_beam_ref(system: System, ref) -> int:
    node = system.node(ref)
    if not isinstance(node, BeamNode):
        raise CompileError(f"node {ref!r} is not a beam")
    return node.handle


def _level_idx(system: System, a: int, level: Level) -> int:
    return system.atoms[a].level_index(level)


def _coupling_entries(basis: Basis, a: int, lo: int, up: int):
    sel = np.nonzero(basis.configs[:, a] == lo)[0]
    rows, cols = [], []
    for i in sel:
        cfg = basis.configs[i].copy()
        cfg[a] = up
        j = basis.lookup(cfg)
        if j >= 0:
            rows.append(j)
            cols.append(i)
    return np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64)


def _select_solver(initial_state, density_matrix: bool, dissipative: bool, solver: str | None) -> str:
    if solver is not None:
        if solver not in SOLVERS:
            raise CompileError(f"unknown solver {solver!r}; choose from {SOLVERS}")
        return solver
    if initial_state is None:
        return "newton"
    if density_matrix:
        return "me"
    return "mcwf" if dissipative else "se"


def compile(system: System, sequence: Sequence, initial_state=None, density_matrix: bool = False,
            order: int = 4, overrides: dict | None = None, rng: np.random.Generator | None = None,
            solver: str | None = None) -> SimulationJob:
    """Build a SimulationJob and fill it for one shot drawn from ``rng``."""
    if order < 1:
        raise CompileError("Taylor order must be >= 1")
    if not system.atoms:
        raise CompileError("system has no atoms")
    if initial_state is None:
        initial_state = system.initial_state
    order_nodes = topo_order(system.nodes)
    nodes = system.nodes
    basis = build_basis([a.levels for a in system.atoms], system.maxoccupations)
    d = basis.dim
    chosen = _select_solver(initial_state, density_matrix, system.dissipative, solver)
    if chosen == "me":
        density_matrix = True

    # beam references and the timeline
    arrays = {}
    coupling_beam: dict[int, int] = {}
    for h in order_nodes:
        n = nodes[h]
        if isinstance(n, BeamNode) and isinstance(n.beam, TweezerArray):
            arrays[h] = n.beam
        if isinstance(n, CouplingNode) and n.beam is not None:
            coupling_beam[h] = _resolve_beam_ref(system, n.beam)
    # sequence-controlled nodes: couplings and pulsed detunings
    couplings = [h for h in order_nodes if isinstance(nodes[h], CouplingNode)
                 or (isinstance(nodes[h], DetuningNode) and nodes[h].pulsed)]
    timeline = expand_timeline(sequence, couplings, arrays,
                               {h: getattr(nodes[h], "active", False) for h in couplings})

    # Hamiltonian terms
    rows, cols, base, herm, terms = [], [], [], [], []

    def add_term(node, kind, r, c, b, hm):
        start = sum(len(x) for x in rows)
        rows.append(r)
        cols.append(c)
        base.append(np.asarray(b, dtype=complex) * np.ones(len(r)))
        herm.append(np.full(len(r), hm))
        terms.append(Term(node, kind, start, start + len(r)))

    jump_nodes, jr, jc = [], [], []
    for h in order_nodes:
        n = nodes[h]
        if isinstance(n, CouplingNode):
            r, c = _coupling_entries(basis, n.atom, _level_idx(system, n.atom, n.lower),
                                     _level_idx(system, n.atom, n.upper))
            add_term(h, "coupling", r, c, 0.5, True)
        elif isinstance(n, DetuningNode):
            i = np.nonzero(basis.configs[:, n.atom] == _level_idx(system, n.atom, n.level))[0]
            add_term(h, "detuning", i, i, 1.0, False)
        elif isinstance(n, InteractionNode):
            la = _level_idx(system, n.atom_a, n.level_a)
            lb = _level_idx(system, n.atom_b, n.level_b)
            i = np.nonzero((basis.configs[:, n.atom_a] == la) & (basis.configs[:, n.atom_b] == lb))[0]
            add_term(h, "interaction", i, i, 1.0, False)
        elif isinstance(n, DecayNode):
            r, c = _coupling_entries(basis, n.atom, _level_idx(system, n.atom, n.upper),
                                     _level_idx(system, n.atom, n.lower))
            full = np.count_nonzero(basis.configs[:, n.atom] == _level_idx(system, n.atom, n.upper))
            if len(c) < full:
                warnings.warn(f"decay node {h}: {full - len(c)} target states lie outside the restricted "
                              "basis; those decay channels are dropped", stacklevel=2)
            jump_nodes.append(h)
            jr.append(r)
            jc.append(c)
        elif isinstance(n, DephasingNode):
            idx = [_level_idx(system, n.atom, lv) for lv in n.levels]
            i = np.nonzero(np.isin(basis.configs[:, n.atom], idx))[0]
            jump_nodes.append(h)
            jr.append(i)
            jc.append(i)
    j_ptr = np.zeros(len(jr) + 1, dtype=np.int64)
    j_ptr[1:] = np.cumsum([len(x) for x in jr])
    j_rows = np.concatenate(jr) if jr else np.zeros(0, np.int64)
    j_cols = np.concatenate(jc) if jc else np.zeros(0, np.int64)
    for a in range(len(jr)):
        if len(np.unique(jc[a])) != len(jc[a]):
            raise CompileError("jump operator with two entries in one column")  # L^dag L must stay diagonal
    if jump_nodes:
        diag = np.unique(j_cols)
        add_term(-1, "nonherm", diag, diag, 0.0, False)

    def cat(x, dt):
        return np.concatenate(x).astype(dt) if x else np.zeros(0, dt)

    h_rows, h_cols, h_base = cat(rows, np.int64), cat(cols, np.int64), cat(base, complex)
    h_herm = cat(herm, np.bool_)
    h_term = np.concatenate([np.full(t.stop - t.start, i, dtype=np.int64) for i, t in enumerate(terms)]) \
        if terms else np.zeros(0, np.int64)

    # detectors
    det_i, det_j, det_w, det_id = [], [], [], []
    qdet, mdet, fdet = [], [], []
    for spec in system.detectors:
        if isinstance(spec, Population):
            a = system.atom_index(spec.atom)
            i = np.nonzero(basis.configs[:, a] == _level_idx(system, a, spec.level))[0]
            det_i.append(i), det_j.append(i), det_w.append(np.ones(len(i)))
            det_id.append(np.full(len(i), len(qdet)))
            qdet.append(spec)
        elif isinstance(spec, Coherence):
            a = system.atom_index(spec.atom)
            r, c = _coupling_entries(basis, a, _level_idx(system, a, spec.level_a),
                                     _level_idx(system, a, spec.level_b))
            # rho[i, j] with atom a in level_a at i and level_b at j
            det_i.append(c), det_j.append(r), det_w.append(np.ones(len(r)))
            det_id.append(np.full(len(r), len(qdet)))
            qdet.append(spec)
        elif isinstance(spec, Motion):
            system.atom_index(spec.atom)
            mdet.append(spec)
        elif isinstance(spec, Field):
            system.node(spec.handle)
            fdet.append(spec)
        else:
            raise CompileError(f"unknown detector {spec!r}")
    if chosen == "newton" and qdet:
        raise CompileError("quantum detectors need an initial state")

    gates = [(k, _gate_operator(system, basis, g)) for k, g in timeline.gates]

    # semiclassical motion
    beam_handles = _beam_handles(system)
    coupling_beams = set(coupling_beam.values())
    trap_beams = [h for h in beam_handles if h not in coupling_beams]
    moving = any(a.is_moving for a in system.atoms)
    trapped = any(a.polarizability(_wavelength(nodes[h].beam)) is not None
                  for a in system.atoms for h in trap_beams)
    semiclassical = moving or trapped or chosen == "newton"
    if semiclassical:
        for ai, a in enumerate(system.atoms):
            if a.mass is None:
                raise CompileError(f"atom {ai} needs a mass for classical motion")
            for h in trap_beams:
                wl = _wavelength(nodes[h].beam)
                if a.polarizability(wl) is None:
                    raise CompileError(f"atom {ai} has no polarizability at beam wavelength {wl:.6g} m "
                                       f"(beam node {h}); supply one or mark the beam as coupling-only")
    dynamic_tones = any(not timeline.tones[h].static for h in arrays)
    per_step = semiclassical or (dynamic_tones and any(coupling_beam.get(h) in arrays for h in couplings))

    n_rec = timeline.n_steps // sequence.downsample
    job = SimulationJob(
        system=system, sequence=sequence, basis=basis, solver=chosen, order=int(order),
        order_nodes=order_nodes, timeline=timeline, terms=terms,
        h_rows=h_rows, h_cols=h_cols, h_base=h_base, h_term=h_term, h_herm=h_herm,
        coef=np.zeros((timeline.n_steps, len(terms)), dtype=complex),
        jump_nodes=jump_nodes, j_rows=j_rows, j_cols=j_cols, j_vals=np.zeros(len(j_rows), complex),
        j_ptr=j_ptr, ldl=np.zeros(d),
        det_i=cat(det_i, np.int64), det_j=cat(det_j, np.int64), det_w=cat(det_w, complex),
        det_id=cat(det_id, np.int64), quantum_detectors=qdet, motion_detectors=mdet, field_detectors=fdet,
        gates=gates, semiclassical=semiclassical, per_step=per_step, trap_beams=trap_beams,
        initial_state_spec=initial_state, density_matrix=density_matrix,
        overrides=dict(overrides or {}),
    )
    job.coupling_beam = coupling_beam
    job.coupling_col = {h: i for i, h in enumerate(couplings)}
    if chosen != "newton":
        job.state = np.zeros((d, d) if density_matrix else d, dtype=complex)
        job.tmp = np.zeros_like(job.state)
        job.work = np.zeros_like(job.state)
        job.out = np.zeros((n_rec, len(qdet)), dtype=complex)
        job.state0 = _initial_state(system, basis, initial_state, density_matrix)
    recompile(job, overrides, rng)
    return job


def _wavelength(beam) -> float:
    return float(resolve_value(beam.wavelength, {}, None)) if hasattr(beam, "wavelength") else math.nan


def _gate_operator(system: System, basis: Basis, gate: Gate):
    nl = len(gate.levels)
    lvl = [[_level_idx(system, a, lv) for lv in gate.levels] for a in gate.atoms]
    rows, cols, vals = [], [], []
    for i, cfg in enumerate(basis.configs):
        digits = []
        for k, a in enumerate(gate.atoms):
            try:
                digits.append(lvl[k].index(int(cfg[a])))
            except ValueError:
                digits = None
                break
        if digits is None:
            rows.append(i), cols.append(i), vals.append(1.0)
            continue
        s = 0
        for dg in digits:
            s = s * nl + dg
        for s2 in np.nonzero(gate.matrix[:, s])[0]:
            new = cfg.copy()
            rem = int(s2)
            for k in reversed(range(len(gate.atoms))):
                new[gate.atoms[k]] = lvl[k][rem % nl]
                rem //= nl
            j = basis.lookup(new)
            if j < 0:
                raise CompileError("gate maps a basis state outside the restricted basis")
            rows.append(j), cols.append(i), vals.append(gate.matrix[s2, s])
    return sp.csr_matrix((np.array(vals, complex), (rows, cols)), shape=(basis.dim, basis.dim))


def _initial_state(system: System, basis: Basis, spec, density_matrix: bool) -> np.ndarray:
    d = basis.dim
    if isinstance(spec, np.ndarray) and spec.ndim == 2:
        if spec.shape != (d, d):
            raise CompileError(f"initial density matrix must be {d}x{d}")
        if not density_matrix:
            raise CompileError("a density-matrix initial state needs density_matrix=True")
        return spec.astype(complex)
    if isinstance(spec, np.ndarray) or (isinstance(spec, (list, tuple)) and spec and
                                        all(isinstance(x, (int, float, complex, np.number)) for x in spec)):
        psi = np.asarray(spec, dtype=complex)
        if psi.shape != (d,):
            raise CompileError(f"initial state vector must have length {d}")
    else:
        spec = list(spec)
        if len(spec) != len(system.atoms):
            raise CompileError(f"initial product state needs one entry per atom ({len(system.atoms)})")
        factors = []
        for a, entry in enumerate(spec):
            vec = np.zeros(system.atoms[a].dim, dtype=complex)
            items = entry.items() if isinstance(entry, dict) else [(entry, 1.0)]
            for lv, amp in items:
                if not system.atoms[a].has_level(lv):
                    raise CompileError(f"initial-state level {getattr(lv, 'label', lv)!r} is outside the "
                                       f"simulated subset of atom {a}")
                vec[system.atoms[a].level_index(lv)] += amp
            factors.append(vec)
        psi = np.ones(d, dtype=complex)
        for a, vec in enumerate(factors):
            psi *= vec[basis.configs[:, a]]
        full_norm = np.prod([np.vdot(v, v).real for v in factors])
        if abs(np.vdot(psi, psi).real - full_norm) > 1e-12 * max(full_norm, 1):
            raise CompileError("initial product state has weight outside the restricted basis")
    n = np.linalg.norm(psi)
    if n == 0:
        raise CompileError("initial state is zero")
    psi = psi / n
    if density_matrix:
        return np.outer(psi, psi.conj())
    return psi


# ---------------------------------------------------------------------------
# per-shot numerical refresh


def recompile(job: SimulationJob, overrides: dict | None = None, rng: np.random.Generator | None = None) -> SimulationJob:
    """Refill every shot-dependent number of ``job`` in place.

    Random numbers are consumed in a fixed order: parameters (sorted by
    name), atom positions and velocities (atom order), then phase-noise
    trajectories (node order). A fresh compile with the same generator state
    therefore reproduces the job exactly.
    """
    system = job.system
    nodes = system.nodes
    if overrides is None:
        overrides = job.overrides
    values = draw_assignment(system.parameters(), overrides, rng)
    job.parameters = values

    # phase 1: beams
    job.beams = {}
    for h in job.order_nodes:
        n = nodes[h]
        if isinstance(n, BeamNode):
            job.beams[h] = n.beam.resolved(values, rng) if hasattr(n.beam, "resolved") else n.beam

    # phase 2: atoms
    na = len(system.atoms)
    job.positions0 = np.zeros((na, 3))
    job.velocities0 = np.zeros((na, 3))
    for i, a in enumerate(system.atoms):
        job.positions0[i] = a.initial_position(rng)
        job.velocities0[i] = a.initial_velocity(rng)
    job.masses = np.array([a.mass if a.mass is not None else np.nan for a in system.atoms])
    job.alphas = np.zeros((na, len(job.trap_beams)))
    for i, a in enumerate(system.atoms):
        for b, h in enumerate(job.trap_beams):
            alpha = a.polarizability(_wavelength(job.beams[h]))
            job.alphas[i, b] = 0.0 if alpha is None else alpha

    # phase 3: operators in topological order
    tl = job.timeline
    job.amplitudes = np.zeros(len(job.terms), dtype=complex)
    job.noise_phase = {}
    total = float(np.sum(tl.dts))
    for t, term in enumerate(job.terms):
        if term.kind == "nonherm":
            continue
        n = nodes[term.node]
        if isinstance(n, CouplingNode):
            job.amplitudes[t] = n.amplitude(values, rng)
            if isinstance(n, NoisyCouplingNode) and tl.n_steps:
                model = n.noise.resolved(values, rng)
                phi = synthesize_phase_noise(model, total, total / tl.n_steps, rng)
                grid = np.arange(tl.n_steps) * (total / tl.n_steps)
                mid = tl.times - 0.5 * tl.dts
                job.noise_phase[term.node] = np.exp(1j * np.interp(mid, grid, phi))
        elif isinstance(n, DetuningNode):
            job.amplitudes[t] = complex(resolve_value(n.shift, values, rng))
        elif isinstance(n, InteractionNode):
            if n.c6 is not None:
                job.amplitudes[t] = float(resolve_value(n.c6, values, rng))
            else:
                job.amplitudes[t] = complex(resolve_value(n.strength, values, rng))

    # jumps
    for k, h in enumerate(job.jump_nodes):
        rate = float(resolve_value(nodes[h].rate, values, rng))
        if rate < 0:
            warnings.warn(f"node {h}: sampled rate {rate:.4g} < 0 clamped to 0", stacklevel=2)
            rate = 0.0
        job.j_vals[job.j_ptr[k]:job.j_ptr[k + 1]] = math.sqrt(rate)
    job.ldl[:] = 0.0
    np.add.at(job.ldl, job.j_cols, np.abs(job.j_vals) ** 2)
    for t, term in enumerate(job.terms):
        if term.kind == "nonherm":
            job.h_base[term.start:term.stop] = job.ldl[job.h_rows[term.start:term.stop]]

    fill_coefficients(job)
    if job.state0 is not None:
        job.state[...] = job.state0
    return job


def fill_coefficients(job: SimulationJob, positions: np.ndarray | None = None, step: int | None = None,
                      terms: list[int] | None = None):
    """Coefficient rows from amplitudes, drive schedule, spatial factors and noise.

    With ``step`` given only that row is refreshed (semiclassical loop).
    """
    pos = job.positions0 if positions is None else positions
    tl = job.timeline
    ks = slice(None) if step is None else slice(step, step + 1)
    for t in range(len(job.terms)) if terms is None else terms:
        term = job.terms[t]
        col = job.coef[ks, t]
        if term.kind == "nonherm":
            col[:] = -0.5j if job.solver == "mcwf" else 0.0
            continue
        n = job.system.nodes[term.node]
        amp = job.amplitudes[t]
        if term.kind == "coupling":
            mult = tl.multipliers[ks, job.coupling_col[term.node]]
            factor = _spatial(job, n, pos, step)
            val = amp * mult * factor
            if term.node in job.noise_phase:
                val = val * job.noise_phase[term.node][ks]
            col[:] = val
        elif term.kind == "detuning" and n.pulsed:
            col[:] = amp * tl.multipliers[ks, job.coupling_col[term.node]]
        elif term.kind == "interaction" and n.c6 is not None:
            r = np.linalg.norm(pos[n.atom_a] - pos[n.atom_b])
            if r == 0:
                raise CompileError(f"atoms {n.atom_a} and {n.atom_b} coincide; van der Waals interaction diverges")
            col[:] = amp / r ** 6
        else:
            col[:] = amp


def _spatial(job: SimulationJob, node: CouplingNode, pos: np.ndarray, step: int | None):
    r = pos[node.atom]
    factor = 1.0
    bh = job.coupling_beam.get(node.handle)
    if bh is not None:
        beam = job.beams[bh]
        if isinstance(beam, TweezerArray):
            sched = job.timeline.tones[bh]
            if step is None and not sched.static:
                return np.array([beam.field_amplitude(r, _tones(sched, k)) for k in range(job.n_steps)])
            k = 0 if step is None else step
            factor = complex(beam.field_amplitude(r, _tones(sched, k)) if job.n_steps else 1.0)
        else:
            factor = complex(beam.field_amplitude(r))
    if isinstance(node, PlanarCouplingNode):
        factor = factor * np.exp(1j * float(np.dot(node.wavevector, r)))
    return factor


def _tones(sched, k: int):
    return sched.row_freq[k], sched.col_freq[k], sched.row_amp[k], sched.col_amp[k]

"""Time stepping: Taylor propagation, Lindblad and MCWF steps, classical motion, shots.

The reference single-step functions (:func:`taylor_step`,
:func:`lindblad_step`, :func:`mcwf_step`, :func:`classical_step`) operate
on plain arrays and are what the compiled loops in :mod:`atomdyn.kernels`
implement. :func:`run` executes one compiled job; :func:`run_shots` runs
many shots, optionally on a thread pool, with results that do not depend
on the thread count.
"""

from __future__ import annotations

import copy
import dataclasses
import logging
import math
import os
import queue
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .compiler import SimulationJob, compile, fill_coefficients, recompile, shot_rng
from .observe import Coherence, Population
from .operators import SparseOperator
from .optics import TweezerArray
from .units import C_LIGHT, EPS0

log = logging.getLogger(__name__)

UNIFORM_POOL = 256
MAX_JUMP_RECORDS = 4096


class SimulationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# reference steps


def _matvec(h, x):
    return h.apply(x) if isinstance(h, SparseOperator) else np.asarray(h) @ x


def taylor_step(h, psi: np.ndarray, dt: float, order: int = 4) -> np.ndarray:
    """sum_{n=0..order} (-i h dt)^n / n! psi using repeated products only."""
    if order < 1:
        raise ValueError("Taylor order must be >= 1")
    out = np.array(psi, dtype=complex)
    term = out.copy()
    for n in range(1, order + 1):
        term = (-1j * dt / n) * _matvec(h, term)
        out += term
    return out


def lindblad_step(rho: np.ndarray, h, jumps, dt: float, order: int = 4) -> np.ndarray:
    """Unitary Taylor half U rho U^dag, then an Euler dissipator step, then re-symmetrize."""
    b = taylor_step(h, rho, dt, order)
    r = taylor_step(h, b.conj().T, dt, order)
    acc = np.zeros_like(r)
    for op in jumps:
        l = op.to_dense() if isinstance(op, SparseOperator) else np.asarray(op)
        ldl = l.conj().T @ l
        acc += l @ r @ l.conj().T - 0.5 * (ldl @ r + r @ ldl)
    r = r + dt * acc
    return 0.5 * (r + r.conj().T)


def effective_hamiltonian(h, jumps) -> np.ndarray:
    hd = h.to_dense() if isinstance(h, SparseOperator) else np.asarray(h, complex)
    for op in jumps:
        l = op.to_dense() if isinstance(op, SparseOperator) else np.asarray(op)
        hd = hd - 0.5j * (l.conj().T @ l)
    return hd


def mcwf_step(psi: np.ndarray, h_eff, jumps, threshold: float, rng: np.random.Generator,
              dt: float, order: int = 4):
    """One trajectory step. Returns (psi, threshold, index of the jump or None).

    The returned state keeps its decayed norm unless a jump happened.
    """
    psi = taylor_step(h_eff, psi, dt, order)
    n2 = float(np.vdot(psi, psi).real)
    if n2 >= threshold:
        return psi, threshold, None
    outs = [_matvec(op, psi) for op in jumps]
    w = np.array([np.vdot(o, o).real for o in outs])
    if w.sum() <= 0:
        log.warning("jump triggered with all jump weights zero; drawing a new threshold")
        return psi, float(rng.random()), None
    k = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))
    k = min(k, len(w) - 1)
    new = outs[k] / math.sqrt(w[k])
    return new, float(rng.random()), k


def classical_step(positions: np.ndarray, velocities: np.ndarray, masses: np.ndarray, force, dt: float):
    """Euler step: v <- v + F(x)/m dt, then x <- x + v dt. ``force`` maps (n, 3) positions to forces."""
    f = force(positions)
    v = velocities + f / np.asarray(masses)[:, None] * dt
    x = positions + v * dt
    return x, v


_OFFSETS = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)


def trap_forces(job: SimulationJob, positions: np.ndarray, step: int) -> np.ndarray:
    """Sum of optical dipole forces from all trapping beams at ``positions``."""
    forces = np.zeros_like(positions)
    if not job.trap_beams:
        return forces
    h = min(job.beams[b].min_waist for b in job.trap_beams) / 100.0
    if not math.isfinite(h):
        h = 1e-8
    pts = positions[None, :, :] + h * _OFFSETS[:, None, :]
    for bi, bh in enumerate(job.trap_beams):
        beam = job.beams[bh]
        if isinstance(beam, TweezerArray):
            sched = job.timeline.tones[bh]
            k = min(step, job.n_steps - 1) if job.n_steps else 0
            inten = beam.intensity(pts, sched.at(k) if job.n_steps else None)
        else:
            inten = beam.intensity(pts)
        grad = (inten[0::2] - inten[1::2]) / (2 * h)  # (3, n_atoms)
        forces += (job.alphas[:, bi] / (2 * EPS0 * C_LIGHT))[:, None] * grad.T
    return forces


# ---------------------------------------------------------------------------
# run


@dataclass
class Result:
    """Detector traces of one shot. ``times`` starts at the first step end, not 0."""

    times: np.ndarray
    values: dict
    solver: str
    parameters: dict
    final_state: np.ndarray | None = None
    final_positions: np.ndarray | None = None
    final_velocities: np.ndarray | None = None
    jumps: list = field(default_factory=list)
    basis_labels: list | None = None

    def __getitem__(self, name):
        return self.values[name]


def _segments(job: SimulationJob):
    """Step ranges between gate applications, with the gates applied before each range."""
    cuts = sorted({k for k, _ in job.gates} | {0, job.n_steps})
    out = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        out.append((a, b, [g for k, g in job.gates if k == a]))
    end_gates = [g for k, g in job.gates if k == job.n_steps and job.n_steps > 0]
    return out, end_gates


def _apply_gate(job: SimulationJob, g):
    if job.density_matrix:
        job.state[...] = (g @ (g @ job.state).conj().T).conj().T
    else:
        job.state[...] = g @ job.state


class _Stepper:
    """Runs the quantum kernel of the job's solver over a step range."""

    def __init__(self, job: SimulationJob, rng: np.random.Generator):
        self.job = job
        self.rng = rng
        self.jump_steps = np.zeros(MAX_JUMP_RECORDS, dtype=np.int64)
        self.jump_ops = np.zeros(MAX_JUMP_RECORDS, dtype=np.int64)
        self.vals = np.zeros(len(job.h_base), dtype=complex)
        if job.solver == "mcwf":
            self.uniforms = rng.random(UNIFORM_POOL)
            self.mstate = np.array([self.uniforms[0], 1.0, 0.0, 0.0])

    def __call__(self, k0: int, k1: int):
        j = self.job
        args = (j.h_rows, j.h_cols, j.h_base, j.h_term, j.h_herm, j.coef, j.timeline.dts)
        det = (j.det_i, j.det_j, j.det_w, j.det_id, j.out, j.sequence.downsample)
        k = k0
        while k < k1:
            if j.solver == "se":
                ret = kernels.evolve_se(*args, k, k1, j.order, j.state, j.tmp, j.work, self.vals, *det)
            elif j.solver == "me":
                ret = kernels.evolve_me(*args, k, k1, j.order, j.state, j.tmp, j.work, self.vals,
                                        j.j_rows, j.j_cols, j.j_vals, j.j_ptr, j.ldl, *det)
            else:
                ret = kernels.evolve_mcwf(*args, k, k1, j.order, j.state, j.tmp, j.work, self.vals,
                                          j.j_rows, j.j_cols, j.j_vals, j.j_ptr, self.mstate, self.uniforms,
                                          *det, self.jump_steps, self.jump_ops)
                if 0 <= ret < k1:
                    self.uniforms = self.rng.random(UNIFORM_POOL)
                    self.mstate[1] = 0.0
            if ret < 0:
                raise SimulationError(f"non-finite quantum state at step {-ret - 1} "
                                      f"(t = {j.timeline.times[-ret - 1]:.6g} s)")
            k = ret

    def jumps(self):
        if self.job.solver != "mcwf":
            return []
        n = min(int(self.mstate[2]), MAX_JUMP_RECORDS)
        if self.mstate[3]:
            log.warning("%d jumps triggered with zero total weight were skipped", int(self.mstate[3]))
        t = self.job.timeline.times
        return [(float(t[self.jump_steps[i]]), int(self.job.jump_nodes[self.jump_ops[i]])) for i in range(n)]


def run(job: SimulationJob, rng: np.random.Generator | None = None) -> Result:
    """Integrate one shot of a compiled job.

    Per step: refresh position-dependent coefficients, advance classical
    motion (semiclassical runs), take one quantum step, and record detectors
    every ``downsample`` steps. ``rng`` drives quantum jumps (default: a
    fixed stream, so MCWF runs are reproducible).
    """
    if rng is None:
        rng = shot_rng(0, 0)
    if job.state0 is not None:
        job.state[...] = job.state0
    if job.out is not None:
        job.out[...] = 0.0
    n_rec = job.n_records
    ds = job.sequence.downsample
    stepper = _Stepper(job, rng) if job.solver != "newton" else None
    pos = job.positions0.copy()
    vel = job.velocities0.copy()
    motion = np.zeros((n_rec, len(job.system.atoms), 6))
    beam_fields = {}
    field_beams = [f for f in job.field_detectors if not _is_coupling(job, f.handle)]
    for f in field_beams:
        beam_fields[f.name] = np.zeros((n_rec, len(job.system.atoms)), dtype=complex)

    segments, end_gates = _segments(job)
    if not job.per_step:
        for k0, k1, gates in segments:
            for g in gates:
                _apply_gate(job, g)
            if k1 > k0:
                stepper(k0, k1)
        motion[:, :, :3] = pos
        motion[:, :, 3:] = vel
        for f in field_beams:
            beam_fields[f.name][:] = _beam_field(job, f.handle, pos, 0)
    else:
        dynamic = _dynamic_terms(job)
        gate_at = {}
        for k, g in job.gates:
            gate_at.setdefault(k, []).append(g)
        subs = job.timeline.substeps
        dts = job.timeline.dts
        for k in range(job.n_steps):
            for g in gate_at.get(k, ()):
                _apply_gate(job, g)
            if dynamic:
                fill_coefficients(job, pos, step=k, terms=dynamic)
            if job.semiclassical:
                ns = int(subs[k])
                h = dts[k] / ns
                for _ in range(ns):
                    pos, vel = classical_step(pos, vel, job.masses, lambda x: trap_forces(job, x, k), h)
                if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
                    raise SimulationError(f"non-finite classical state at step {k}")
            if stepper is not None:
                stepper(k, k + 1)
            if (k + 1) % ds == 0:
                r = (k + 1) // ds - 1
                motion[r, :, :3] = pos
                motion[r, :, 3:] = vel
                for f in field_beams:
                    beam_fields[f.name][r] = _beam_field(job, f.handle, pos, k)
    if job.state is not None:
        for g in end_gates:
            _apply_gate(job, g)

    values = {}
    for i, spec in enumerate(job.quantum_detectors):
        col = job.out[:, i].copy()
        values[spec.name] = col.real.copy() if isinstance(spec, Population) else col
    for spec in job.motion_detectors:
        values[spec.name] = motion[:, job.system.atom_index(spec.atom)].copy()
    rec = job.record_steps
    for spec in job.field_detectors:
        if _is_coupling(job, spec.handle):
            t = next(i for i, term in enumerate(job.terms) if term.node == spec.handle)
            values[spec.name] = job.coef[rec, t].copy()
        else:
            values[spec.name] = beam_fields[spec.name]
    final = None
    if job.state is not None:
        final = job.state.copy()
        if job.solver == "mcwf":
            final /= np.linalg.norm(final)
    return Result(job.times.copy(), values, job.solver, dict(job.parameters), final, pos, vel,
                  stepper.jumps() if stepper else [], None)


def _is_coupling(job: SimulationJob, handle) -> bool:
    return handle in job.coupling_col


def _beam_field(job: SimulationJob, handle, pos, k):
    beam = job.beams[job.system.node(handle).handle]
    if isinstance(beam, TweezerArray):
        return beam.field_amplitude(pos, job.timeline.tones[handle].at(k))
    return beam.field_amplitude(pos)


def _dynamic_terms(job: SimulationJob) -> list[int]:
    from .model import PlanarCouplingNode
    out = []
    for t, term in enumerate(job.terms):
        n = job.system.nodes[term.node] if term.node >= 0 else None
        if term.kind == "coupling" and (term.node in job.coupling_beam or isinstance(n, PlanarCouplingNode)):
            if job.semiclassical or isinstance(job.beams.get(job.coupling_beam.get(term.node)), TweezerArray):
                out.append(t)
        elif term.kind == "interaction" and n.c6 is not None and job.semiclassical:
            out.append(t)
    return out


# ---------------------------------------------------------------------------
# shots


@dataclass
class ShotResults:
    """Detector traces stacked over shots; the shot index is the last axis."""

    times: np.ndarray
    values: dict
    solver: str
    parameters: list
    final_states: list | None = None
    jumps: list | None = None
    seed: int = 0

    def __getitem__(self, name):
        return self.values[name]

    def mean(self, name):
        return self.values[name].mean(axis=-1)

    @property
    def shots(self) -> int:
        return len(self.parameters)


_SHOT_FIELDS = ("parameters", "beams", "positions0", "velocities0", "masses", "alphas", "amplitudes",
                "noise_phase")
_SHOT_ARRAYS = ("coef", "j_vals", "ldl", "h_base", "state", "tmp", "work", "out")


def clone_job(job: SimulationJob) -> SimulationJob:
    """A job sharing structure with ``job`` but owning every per-shot buffer."""
    new = copy.copy(job)
    for name in _SHOT_ARRAYS:
        a = getattr(job, name)
        setattr(new, name, None if a is None else a.copy())
    for name in _SHOT_FIELDS:
        setattr(new, name, copy.copy(getattr(job, name)))
    return new


def run_shot(job: SimulationJob, seed: int, shot: int, overrides=None) -> Result:
    rng = shot_rng(seed, shot)
    recompile(job, overrides, rng)
    return run(job, rng)


def run_shots(system, sequence, shots: int = 1, seed: int = 0, initial_state=None, density_matrix: bool = False,
              order: int = 4, overrides: dict | None = None, threads: int | None = None, threshold: int = 4,
              memory_budget: int = 2 ** 31, keep_final: bool = False, solver: str | None = None,
              job: SimulationJob | None = None) -> ShotResults:
    """Compile once and run ``shots`` shots.

    Shot ``i`` uses the generator ``shot_rng(seed, i)`` for every draw
    (parameters, positions, noise, jumps), so results are identical for any
    thread count. Shots run concurrently when ``shots >= threshold`` and the
    estimated buffer footprint fits ``memory_budget``.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    template = job if job is not None else compile(system, sequence, initial_state, density_matrix, order,
                                                   overrides, shot_rng(seed, 0), solver)
    if overrides is None:
        overrides = template.overrides
    n_threads = threads if threads is not None else (os.cpu_count() or 1)
    n_threads = max(1, min(n_threads, shots))
    results: list[Result | None] = [None] * shots
    concurrent = shots >= threshold and n_threads > 1
    if concurrent and template.buffer_bytes() * n_threads > memory_budget:
        warnings.warn(f"estimated memory {template.buffer_bytes() * n_threads / 2**20:.1f} MiB exceeds the "
                      f"budget; running shots serially", stacklevel=2)
        concurrent = False
    if not concurrent:
        for s in range(shots):
            results[s] = run_shot(template, seed, s, overrides)
            if not keep_final:
                results[s].final_state = None
    else:
        pool: queue.Queue = queue.Queue()
        pool.put(template)
        for _ in range(n_threads - 1):
            pool.put(clone_job(template))

        def work(s):
            j = pool.get()
            try:
                r = run_shot(j, seed, s, overrides)
                if not keep_final:
                    r.final_state = None
                return r
            finally:
                pool.put(j)

        with ThreadPoolExecutor(max_workers=n_threads) as ex:
            for s, r in enumerate(ex.map(work, range(shots))):
                results[s] = r
    values = {name: np.stack([r.values[name] for r in results], axis=-1) for name in results[0].values}
    return ShotResults(results[0].times, values, template.solver, [r.parameters for r in results],
                       [r.final_state for r in results] if keep_final else None,
                       [r.jumps for r in results], seed)


def qubit_channel(system, sequence, atom, levels, order: int = 4, overrides: dict | None = None):
    """Input-to-output map of one atom's two-level subspace, for process tomography.

    Other atoms start in ``system.initial_state``. The returned function maps
    a 2x2 density matrix to the reduced 2x2 output; weight that leaks out of
    ``levels`` is dropped, which shows up as a trace-preservation defect.
    """
    ai = system.atom_index(atom)
    a = system.atoms[ai]
    li = [a.level_index(lv) for lv in levels]
    if len(li) != 2:
        raise ValueError("a qubit channel needs exactly two levels")
    probe = compile(system, sequence, _embed_qubit(system, ai, li[0]), density_matrix=True, order=order,
                    overrides=overrides, solver="me")
    basis = probe.basis
    rest = [i for i in range(basis.dim) if basis.configs[i, ai] == li[0]]
    partner = [basis.lookup(np.where(np.arange(basis.n_atoms) == ai, li[1], basis.configs[i])) for i in rest]

    def channel(rho_in):
        rho_in = np.asarray(rho_in, complex)
        rho = np.zeros((basis.dim, basis.dim), complex)
        base = probe.state0
        for i0, i1 in zip(rest, partner):
            if i1 < 0:
                continue
            for j0, j1 in zip(rest, partner):
                if j1 < 0:
                    continue
                w = base[i0, j0]
                if w == 0:
                    continue
                idx = ((i0, i1), (j0, j1))
                for x in range(2):
                    for y in range(2):
                        rho[idx[0][x], idx[1][y]] += w * rho_in[x, y]
        job = compile(system, sequence, rho, density_matrix=True, order=order, overrides=overrides, solver="me")
        final = run(job).final_state
        out = np.zeros((2, 2), complex)
        for i0, i1 in zip(rest, partner):
            if i1 < 0:
                continue
            pair = (i0, i1)
            for x in range(2):
                for y in range(2):
                    out[x, y] += final[pair[x], pair[y]]
        return out

    return channel


def _embed_qubit(system, ai: int, level_idx: int) -> np.ndarray | list:
    init = list(system.initial_state) if system.initial_state is not None else None
    if init is None:
        if len(system.atoms) > 1:
            raise ValueError("qubit_channel needs system.initial_state for the other atoms")
        init = [system.atoms[0].levels[level_idx]]
    init[ai] = system.atoms[ai].levels[level_idx]
    return init


def play(system, sequence, shots: int = 1, **kw) -> ShotResults:
    return run_shots(system, sequence, shots=shots, **kw)


def convergence_check(system, sequence, detector: str, **kw) -> float:
    """Max change of a detector trace when the step is halved.

    The refined run records every second step so both traces share a time
    grid. There is no adaptive stepping; this is a manual check.
    """
    from .sequence import Sequence as Seq
    fine = Seq(sequence.dt / 2, sequence.downsample * 2, sequence.strict)
    fine.instructions = [_halve(ins) for ins in sequence.instructions]
    a = run_shots(system, sequence, **kw).mean(detector)
    b = run_shots(system, fine, **kw).mean(detector)
    return float(np.max(np.abs(a - b)))


def _halve(ins):
    from .sequence import Parallel
    if isinstance(ins, Parallel):
        return Parallel(*[_halve(m) for m in ins.members])
    if getattr(ins, "dt", None):
        return dataclasses.replace(ins, dt=ins.dt / 2)
    return ins

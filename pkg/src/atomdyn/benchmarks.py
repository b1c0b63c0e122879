"""Canonical accuracy benchmarks: driven two-level atom and Rydberg blockade."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .atomic import Atom, Level
from .compiler import compile
from .model import System
from .observe import Population
from .sequence import Pulse, Sequence
from .solvers import run, run_shots
from .units import MHz, kHz, ms, ns, us


def rabi_closed_form(t, rabi: float) -> np.ndarray:
    """Undamped resonant excitation sin^2(Omega t / 2)."""
    return np.sin(0.5 * rabi * np.asarray(t)) ** 2


def damped_rabi_closed_form(t, rabi: float, gamma: float) -> np.ndarray:
    """Excited population of a resonantly driven atom with spontaneous decay (Torrey solution).

    Coherences decay at gamma/2. Valid for rabi > gamma/4 (underdamped).
    """
    t = np.asarray(t, dtype=float)
    lam = math.sqrt(rabi ** 2 - gamma ** 2 / 16.0)
    kappa = 0.75 * gamma
    steady = rabi ** 2 / (2 * rabi ** 2 + gamma ** 2)
    return steady * (1 - np.exp(-kappa * t) * (np.cos(lam * t) + kappa / lam * np.sin(lam * t)))


def rabi_system(rabi: float = 1 * MHz, gamma: float = 0.0, duration: float = 1 * ms, dt: float = 10 * ns,
                downsample: int = 1):
    g, e = Level("g"), Level("e")
    sys = System()
    atom = Atom([g, e])
    sys.add_atom(atom)
    h = sys.add_coupling(atom, g, e, rabi)
    if gamma:
        sys.add_decay(atom, e, g, gamma)
    sys.add_detector(Population(atom, e, "P_e"))
    seq = Sequence(dt, downsample)
    seq.append(Pulse(h, duration))
    sys.initial_state = [g]
    return sys, seq


@dataclass
class BenchmarkRow:
    method: str
    max_error: float
    wall_time: float
    extra: dict = field(default_factory=dict)


def benchmark_rabi(methods=("se", "me", "mcwf"), trajectories: int = 100, seed: int = 0, rabi: float = 1 * MHz,
                   gamma: float = 0.5 * kHz, duration: float = 1 * ms, dt: float = 10 * ns,
                   order: int = 4) -> list[BenchmarkRow]:
    """Max deviation from the closed forms (SE: undamped; ME: damped; MCWF: versus ME)."""
    rows = []
    ref_me = None
    for method in methods:
        t0 = time.perf_counter()
        if method == "se":
            sys, seq = rabi_system(rabi, 0.0, duration, dt)
            res = run(compile(sys, seq, order=order))
            err = float(np.max(np.abs(res["P_e"] - rabi_closed_form(res.times, rabi))))
        elif method == "me":
            sys, seq = rabi_system(rabi, gamma, duration, dt)
            res = run(compile(sys, seq, density_matrix=True, order=order))
            ref_me = res["P_e"]
            err = float(np.max(np.abs(res["P_e"] - damped_rabi_closed_form(res.times, rabi, gamma))))
        elif method == "mcwf":
            sys, seq = rabi_system(rabi, gamma, duration, dt)
            shots = run_shots(sys, seq, shots=trajectories, seed=seed, order=order)
            ref = ref_me if ref_me is not None else damped_rabi_closed_form(shots.times, rabi, gamma)
            err = float(np.max(np.abs(shots.mean("P_e") - ref)))
        else:
            raise ValueError(f"unknown method {method!r}")
        rows.append(BenchmarkRow(method, err, time.perf_counter() - t0))
    return rows


# ---------------------------------------------------------------------------
# blockade


def blockade_system(n_atoms: int, rabi: float = 1 * MHz, interaction: float = 100 * MHz,
                    dephasing: float = 250 * kHz, subspace: bool = False) -> System:
    """N two-level atoms with all-to-all V n_i n_j, common drive and Rydberg dephasing."""
    if n_atoms < 1:
        raise ValueError("need at least one atom")
    g, r = Level("g"), Level("r")
    sys = System()
    atoms = [Atom([g, r], name=f"a{i}") for i in range(n_atoms)]
    for a in atoms:
        sys.add_atom(a)
    drive = sys.add_coupling(atoms, g, r, rabi)
    for i in range(n_atoms):
        for j in range(i + 1, n_atoms):
            sys.add_interaction(atoms[i], atoms[j], r, r, interaction)
    for a in atoms:
        sys.add_dephasing(a, r, dephasing)
    for i, a in enumerate(atoms):
        sys.add_detector(Population(a, r, f"P_r{i}"))
    if subspace:
        sys.add_maxoccupation(r, 1)
    sys.initial_state = [g] * n_atoms
    sys.drive_handles = drive
    return sys


def blockade_steps(n_atoms: int, duration: float, rabi: float, interaction: float) -> tuple[int, int]:
    """Step counts (subspace, full) from the default step sizes.

    Subspace step 1/(100 sqrt(N) Omega/2pi) and full-space step
    1/(25 sqrt(N) V/2pi), both rounded down so they tile the duration, with
    the full count a multiple of the subspace count so the grids nest.
    """
    sq = math.sqrt(n_atoms)
    n_sub = math.ceil(duration * 100 * sq * rabi / (2 * math.pi) - 1e-9)
    ratio = math.ceil((25 * interaction) / (100 * rabi) - 1e-9)
    return n_sub, n_sub * ratio


def total_rydberg(res, n_atoms: int) -> np.ndarray:
    return sum(res[f"P_r{i}"] for i in range(n_atoms))


def run_blockade(n_atoms: int, subspace: bool = False, rabi: float = 1 * MHz, interaction: float = 100 * MHz,
                 dephasing: float = 250 * kHz, duration: float = 1 * us, method: str = "me",
                 trajectories: int = 100, seed: int = 0):
    """Total Rydberg population P_r(t); returns (times, P_r, job)."""
    sys = blockade_system(n_atoms, rabi, interaction, dephasing, subspace)
    n_sub, n_full = blockade_steps(n_atoms, duration, rabi, interaction)
    n = n_sub if subspace else n_full
    seq = Sequence(duration / n, downsample=1 if subspace else n_full // n_sub)
    seq.append(Pulse(sys.drive_handles, duration))
    if method == "me":
        job = compile(sys, seq, density_matrix=True)
        res = run(job)
        return res.times, total_rydberg(res, n_atoms), job
    if method == "mcwf":
        shots = run_shots(sys, seq, shots=trajectories, seed=seed)
        return shots.times, sum(shots.mean(f"P_r{i}") for i in range(n_atoms)), None
    raise ValueError(f"unknown method {method!r}")


def first_maximum_time(t: np.ndarray, y: np.ndarray) -> float:
    """Time of the first local maximum, refined by a parabola through the three nearest samples."""
    t = np.asarray(t)
    y = np.asarray(y)
    for i in range(1, len(y) - 1):
        if y[i] >= y[i - 1] and y[i] > y[i + 1]:
            y0, y1, y2 = y[i - 1], y[i], y[i + 1]
            denom = y0 - 2 * y1 + y2
            shift = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
            return float(t[i] + shift * (t[i + 1] - t[i]))
    raise ValueError("no interior maximum found")


def effective_rabi(t, p_r) -> float:
    """Collective Rabi frequency pi / t_max from the first maximum of P_r."""
    t = np.concatenate([[0.0], t])
    p = np.concatenate([[0.0], p_r])
    return math.pi / first_maximum_time(t, p)


def benchmark_blockade(n_atoms_list=(2, 3, 4, 5, 6), subspace: bool = False, rabi: float = 1 * MHz,
                       interaction: float = 100 * MHz, dephasing: float = 250 * kHz, duration: float = 1 * us,
                       compare: bool = True) -> list[dict]:
    """Omega_eff / (sqrt(N) Omega) per N; with ``compare`` also the subspace-vs-full deviation."""
    out = []
    for n in n_atoms_list:
        t0 = time.perf_counter()
        t, p, job = run_blockade(n, subspace, rabi, interaction, dephasing, duration)
        row = {"n_atoms": n, "dimension": job.dim, "ratio": effective_rabi(t, p) / (math.sqrt(n) * rabi),
               "wall_time": time.perf_counter() - t0}
        if compare:
            t2, p2, job2 = run_blockade(n, not subspace, rabi, interaction, dephasing, duration)
            row["deviation"] = float(np.max(np.abs(p - p2)))
            row["other_dimension"] = job2.dim
        out.append(row)
    return out

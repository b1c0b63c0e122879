"""Detectors, single-qubit process tomography and protocol fidelity metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .atomic import Level


# ---------------------------------------------------------------------------
# detector specifications


@dataclass(frozen=True)
class Population:
    """Time-resolved population of ``level`` on ``atom``."""

    atom: object
    level: Level
    name: str


@dataclass(frozen=True)
class Coherence:
    """Reduced off-diagonal element rho[level_a, level_b] of one atom (complex)."""

    atom: object
    level_a: Level
    level_b: Level
    name: str


@dataclass(frozen=True)
class Motion:
    """Classical position and velocity of one atom: (x, y, z, vx, vy, vz)."""

    atom: object
    name: str


@dataclass(frozen=True)
class Field:
    """Complex drive seen by a coupling (its full coefficient) or a beam (field at each atom)."""

    handle: int
    name: str


def evaluate_detector(spec, state: np.ndarray, basis, atoms: Sequence, positions=None, velocities=None,
                      coefficient=None):
    """Evaluate one detector on a state outside the solver loop.

    ``state`` is a vector or a density matrix on ``basis``; ``atoms`` is the
    system's atom list (to map atom objects and levels to indices).
    """
    def atom_idx(a):
        if isinstance(a, (int, np.integer)):
            return int(a)
        return next(i for i, x in enumerate(atoms) if x is a)

    rho = None
    if isinstance(spec, (Population, Coherence)):
        st = np.asarray(state)
        rho = st if st.ndim == 2 else None
        psi = st if st.ndim == 1 else None
    if isinstance(spec, Population):
        a = atom_idx(spec.atom)
        sel = basis.configs[:, a] == atoms[a].level_index(spec.level)
        if rho is not None:
            return float(np.sum(np.diag(rho)[sel]).real)
        return float(np.sum(np.abs(psi[sel]) ** 2))
    if isinstance(spec, Coherence):
        a = atom_idx(spec.atom)
        la, lb = atoms[a].level_index(spec.level_a), atoms[a].level_index(spec.level_b)
        total = 0j
        for i in np.nonzero(basis.configs[:, a] == la)[0]:
            cfg = basis.configs[i].copy()
            cfg[a] = lb
            j = basis.lookup(cfg)
            if j >= 0:
                total += rho[i, j] if rho is not None else psi[i] * np.conj(psi[j])
        return complex(total)
    if isinstance(spec, Motion):
        a = atom_idx(spec.atom)
        return np.concatenate([np.asarray(positions)[a], np.asarray(velocities)[a]])
    if isinstance(spec, Field):
        return coefficient
    raise TypeError(f"unknown detector {spec!r}")


# ---------------------------------------------------------------------------
# process tomography

PAULIS = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)

_KET = {
    "0": np.array([1, 0], complex),
    "1": np.array([0, 1], complex),
    "+": np.array([1, 1], complex) / math.sqrt(2),
    "-": np.array([1, -1], complex) / math.sqrt(2),
    "+i": np.array([1, 1j], complex) / math.sqrt(2),
    "-i": np.array([1, -1j], complex) / math.sqrt(2),
}
MINIMAL_INPUTS = ("0", "1", "+", "+i")
OVERCOMPLETE_INPUTS = ("0", "1", "+", "-", "+i", "-i")


@dataclass
class ProcessResult:
    """A reconstructed single-qubit channel in several representations.

    ``superoperator`` acts on column-stacked density matrices; ``choi`` is
    sum_ij |i><j| (x) E(|i><j|); ``ptm[i, j] = Tr[P_i E(P_j)] / 2`` in the
    order (I, X, Y, Z).
    """

    superoperator: np.ndarray
    choi: np.ndarray
    ptm: np.ndarray
    kraus: list[np.ndarray]
    inputs: tuple[str, ...]
    outputs: dict = field(default_factory=dict)
    cp_violation: float = 0.0
    is_cp: bool = True
    tp_defect: float = 0.0

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return (self.superoperator @ rho.reshape(-1, order="F")).reshape(2, 2, order="F")


def _unit(i, j):
    m = np.zeros((2, 2), complex)
    m[i, j] = 1.0
    return m


def channel_from_outputs(outputs: dict, cp_tol: float = 1e-8) -> ProcessResult:
    """Reconstruct a channel from output density matrices keyed by input label."""
    keys = tuple(outputs)
    if set(keys) >= set(OVERCOMPLETE_INPUTS) and len(keys) == 6:
        # least squares: vec(E(rho_in)) = S vec(rho_in)
        a = np.array([np.outer(_KET[k], _KET[k].conj()).reshape(-1, order="F") for k in keys])
        b = np.array([np.asarray(outputs[k]).reshape(-1, order="F") for k in keys])
        x, *_ = np.linalg.lstsq(a, b, rcond=None)
        s = x.T
        units = {(i, j): (s @ _unit(i, j).reshape(-1, order="F")).reshape(2, 2, order="F")
                 for i in range(2) for j in range(2)}
    else:
        missing = set(MINIMAL_INPUTS) - set(keys)
        if missing:
            raise ValueError(f"missing tomography inputs: {sorted(missing)}")
        e0, e1, ep, epi = (np.asarray(outputs[k], complex) for k in MINIMAL_INPUTS)
        e10 = ep - 1j * epi - 0.5 * (1 - 1j) * (e0 + e1)
        units = {(0, 0): e0, (1, 1): e1, (1, 0): e10, (0, 1): e10.conj().T}
        # the last line assumes a Hermiticity-preserving map
    s = np.zeros((4, 4), complex)
    for (i, j), out in units.items():
        s[:, 2 * j + i] = out.reshape(-1, order="F")  # column index of vec(|i><j|)
    choi = np.zeros((4, 4), complex)
    for (i, j), out in units.items():
        choi += np.kron(_unit(i, j), out)
    choi = 0.5 * (choi + choi.conj().T)
    ptm = np.zeros((4, 4))
    for j, pj in enumerate(PAULIS):
        out = (s @ pj.reshape(-1, order="F")).reshape(2, 2, order="F")
        for i, pi in enumerate(PAULIS):
            ptm[i, j] = np.real(np.trace(pi @ out)) / 2
    w, v = np.linalg.eigh(choi)
    kraus = []
    for val, vec in zip(w[::-1], v[:, ::-1].T):
        if val <= 1e-10:
            continue
        # choi = sum_k vec(K_k^T)... with input first: entries choi[(i,a),(j,b)] = K[a,i] conj(K[b,j])
        k = math.sqrt(val) * vec.reshape(2, 2).T
        idx = np.argmax(np.abs(k))
        phase = k.flat[idx] / abs(k.flat[idx])
        kraus.append(k / phase)
    tp = sum(k.conj().T @ k for k in kraus) if kraus else np.zeros((2, 2))
    tp_defect = float(np.max(np.abs(tp - np.eye(2))))
    neg = float(max(0.0, -w.min()))
    return ProcessResult(s, choi, ptm, kraus, keys, dict(outputs), neg, neg <= cp_tol, tp_defect)


def process_tomography(run_channel: Callable[[np.ndarray], np.ndarray], overcomplete: bool = False,
                       cp_tol: float = 1e-8) -> ProcessResult:
    """Tomography of a single-qubit process.

    ``run_channel(rho_in)`` must return the output density matrix (2x2) for
    a 2x2 input density matrix; use :func:`atomdyn.solvers.qubit_channel` to wrap a compiled
    system and sequence.
    """
    labels = OVERCOMPLETE_INPUTS if overcomplete else MINIMAL_INPUTS
    outputs = {}
    for k in labels:
        rho = np.outer(_KET[k], _KET[k].conj())
        outputs[k] = np.asarray(run_channel(rho), dtype=complex)
    return channel_from_outputs(outputs, cp_tol)


def average_gate_fidelity(result: ProcessResult, target: np.ndarray) -> float:
    """Average fidelity of the reconstructed channel to a target unitary."""
    u = np.asarray(target, complex)
    f_pro = np.real(np.trace(result.superoperator @ np.kron(u.conj(), u).conj().T)) / 4
    return float((2 * f_pro + 1) / 3)


# ---------------------------------------------------------------------------
# fidelity metrics


def entanglement_fidelity(populations, phase_deviations, d: int) -> float:
    """|sum_j mean_traj(sqrt(P_j) exp(i dphi_j))|^2 / d^2.

    ``populations`` and ``phase_deviations`` have shape (d,) or
    (d, trajectories).
    """
    p = np.asarray(populations, dtype=float)
    phi = np.asarray(phase_deviations, dtype=float)
    if p.shape != phi.shape:
        raise ValueError("populations and phase deviations differ in shape")
    if p.shape[0] != d:
        raise ValueError(f"expected {d} input states, got {p.shape[0]}")
    amp = np.sqrt(np.clip(p, 0, None)) * np.exp(1j * phi)
    per_input = amp.mean(axis=1) if amp.ndim == 2 else amp
    return float(abs(per_input.sum()) ** 2 / d ** 2)


def pauli_string(ops: str) -> np.ndarray:
    """Tensor product of single-qubit Paulis, first character = most significant qubit."""
    table = {"I": 0, "X": 1, "Y": 2, "Z": 3}
    m = np.ones((1, 1), complex)
    for ch in ops:
        m = np.kron(m, PAULIS[table[ch]])
    return m


def _ket(bits: str) -> np.ndarray:
    v = np.zeros(2 ** len(bits), complex)
    v[int(bits, 2)] = 1
    return v


def codewords_422() -> dict[str, np.ndarray]:
    """Logical basis of the [[4,2,2]] code on four qubits."""
    s = 1 / math.sqrt(2)
    return {
        "00": s * (_ket("0000") + _ket("1111")),
        "01": s * (_ket("0011") + _ket("1100")),
        "10": s * (_ket("0110") + _ket("1001")),
        "11": s * (_ket("0101") + _ket("1010")),
    }


def logical_bell_422() -> np.ndarray:
    """(|00_L> + |11_L>)/sqrt2 = (|0000> + |0101> + |1010> + |1111>)/2."""
    c = codewords_422()
    return (c["00"] + c["11"]) / math.sqrt(2)


@dataclass
class StabilizerMetrics:
    F_raw: float
    P_even: float
    F_post: float
    F_syndrome: float
    P_syndrome: float

    def as_dict(self) -> dict:
        return {"F_raw": self.F_raw, "P_even": self.P_even, "F_post": self.F_post,
                "F_syndrome": self.F_syndrome, "P_syndrome": self.P_syndrome}


def stabilizer_metrics(states, target: np.ndarray, z_stabilizer: np.ndarray | None = None,
                       x_stabilizer: np.ndarray | None = None) -> StabilizerMetrics:
    """Raw, Z-post-selected and full-syndrome fidelities of an ensemble.

    ``states`` is a list of pure states on the register (normalized or
    with leaked weight: leaked amplitude simply lowers every metric).
    Post-selected fidelities are ratios of ensemble sums, so a zero
    acceptance gives ``nan``.
    """
    target = np.asarray(target, complex)
    n = int(round(math.log2(len(target))))
    sz = pauli_string("Z" * n) if z_stabilizer is None else np.asarray(z_stabilizer)
    sx = pauli_string("X" * n) if x_stabilizer is None else np.asarray(x_stabilizer)
    pz = 0.5 * (np.eye(len(target)) + sz)
    px = 0.5 * (np.eye(len(target)) + sx)
    psyn = pz @ px
    f_raw, p_even, f_post_num, p_syn, f_syn_num = [], [], [], [], []
    for psi in states:
        psi = np.asarray(psi, complex)
        f_raw.append(abs(np.vdot(target, psi)) ** 2)
        z = pz @ psi
        p_even.append(np.vdot(z, z).real)
        f_post_num.append(abs(np.vdot(target, z)) ** 2)
        s = psyn @ psi
        p_syn.append(np.vdot(s, s).real)
        f_syn_num.append(abs(np.vdot(target, s)) ** 2)
    pe, ps = float(np.sum(p_even)), float(np.sum(p_syn))
    return StabilizerMetrics(
        F_raw=float(np.mean(f_raw)),
        P_even=float(np.mean(p_even)),
        F_post=float(np.sum(f_post_num) / pe) if pe > 0 else math.nan,
        F_syndrome=float(np.sum(f_syn_num) / ps) if ps > 0 else math.nan,
        P_syndrome=float(np.mean(p_syn)),
    )


def flagged_by(error: np.ndarray, stabilizers: Sequence[np.ndarray]) -> list[bool]:
    """For each stabilizer, whether it anticommutes with ``error``."""
    return [bool(np.allclose(s @ error, -(error @ s))) for s in stabilizers]

"""Fixed-step instruction sequences and their expansion into per-step schedules."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence as Seq

import numpy as np


class SequenceError(ValueError):
    pass


def _handles(h) -> tuple[int, ...]:
    if isinstance(h, (list, tuple)):
        out = []
        for x in h:
            out.extend(_handles(x))
        return tuple(out)
    return (int(h),)


@dataclass(frozen=True)
class Pulse:
    """Drive the given couplings for ``duration``.

    ``envelope`` is a sequence of complex samples spread evenly over the
    pulse; ``interp`` is ``piecewise_constant`` (sample i held for T/M) or
    ``linear`` (samples at the pulse edges and evenly in between).
    """

    handles: tuple
    duration: float
    envelope: tuple | None = None
    interp: str = "piecewise_constant"
    dt: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "handles", _handles(self.handles))
        if self.envelope is not None:
            env = tuple(complex(x) for x in np.asarray(self.envelope).ravel())
            if not env:
                raise SequenceError("empty pulse envelope")
            object.__setattr__(self, "envelope", env)
        if self.interp not in ("piecewise_constant", "linear"):
            raise SequenceError(f"unknown interpolation {self.interp!r}")
        if self.interp == "linear" and self.envelope is not None and len(self.envelope) < 2:
            raise SequenceError("linear interpolation needs at least 2 envelope samples")
        if self.duration < 0:
            raise SequenceError("negative duration")


@dataclass(frozen=True)
class Wait:
    duration: float
    dt: float | None = None


@dataclass(frozen=True)
class On:
    handles: tuple

    def __post_init__(self):
        object.__setattr__(self, "handles", _handles(self.handles))

    duration = 0.0


@dataclass(frozen=True)
class Off:
    handles: tuple

    def __post_init__(self):
        object.__setattr__(self, "handles", _handles(self.handles))

    duration = 0.0


@dataclass(frozen=True)
class _ToneRamp:
    array: int
    index: int
    delta: float
    duration: float
    dt: float | None = None
    substeps: int = 1

    axis = "row"
    quantity = "freq"


class MoveRow(_ToneRamp):
    """Linear ramp of one row tone frequency by ``delta`` Hz over ``duration``."""


class MoveCol(_ToneRamp):
    axis = "col"


class RampRow(_ToneRamp):
    """Linear ramp of one row tone amplitude by ``delta``."""

    quantity = "amp"


class RampCol(_ToneRamp):
    axis = "col"
    quantity = "amp"


@dataclass(frozen=True)
class _ToneSet:
    array: int
    index: int
    value: float

    axis = "row"
    quantity = "freq"
    duration = 0.0


class FreqRow(_ToneSet):
    pass


class FreqCol(_ToneSet):
    axis = "col"


class AmplRow(_ToneSet):
    quantity = "amp"


class AmplCol(_ToneSet):
    axis = "col"
    quantity = "amp"


@dataclass(frozen=True)
class Gate:
    """Apply a fixed unitary instantly.

    ``matrix`` acts on the product of ``levels`` of ``atoms`` (first atom
    slowest); basis states outside that product are left untouched. With
    ``unitary=False`` any contraction is accepted (norm loss models leakage
    out of the listed levels).
    """

    atoms: tuple
    levels: tuple
    matrix: np.ndarray = field(compare=False)
    unitary: bool = True

    duration = 0.0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        dim = len(self.levels) ** len(self.atoms)
        if m.shape != (dim, dim):
            raise SequenceError(f"gate matrix must be {dim}x{dim}")
        if self.unitary:
            if not np.allclose(m.conj().T @ m, np.eye(dim), atol=1e-10):
                raise SequenceError("gate matrix is not unitary")
        elif np.linalg.norm(m, 2) > 1 + 1e-9:
            raise SequenceError("gate matrix increases the norm")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "atoms", tuple(int(a) for a in self.atoms))
        object.__setattr__(self, "levels", tuple(self.levels))


class Parallel:
    """Instructions started on the same step; lasts as long as the longest member."""

    def __init__(self, *instructions):
        if len(instructions) == 1 and isinstance(instructions[0], (list, tuple)):
            instructions = tuple(instructions[0])
        flat = []
        for ins in instructions:
            flat.extend(ins.members if isinstance(ins, Parallel) else [ins])
        self.members = tuple(flat)

    @property
    def duration(self) -> float:
        return max((m.duration for m in self.members), default=0.0)

    def __repr__(self):
        return f"Parallel{self.members!r}"


class Sequence:
    """Time-ordered instruction list with a fixed default step ``dt``.

    With ``strict=True`` every duration must be an integer number of steps to
    a relative 1e-6; with ``strict=False`` the step of an offending
    instruction is stretched to ``duration / round(duration / dt)``.
    """

    def __init__(self, dt: float, downsample: int = 1, strict: bool = True):
        if not dt > 0:
            raise SequenceError("dt must be positive")
        if int(downsample) != downsample or downsample < 1:
            raise SequenceError("downsample must be a positive integer")
        self.dt = float(dt)
        self.downsample = int(downsample)
        self.strict = strict
        self.instructions: list = []

    def append(self, instruction) -> "Sequence":
        self.instructions.append(instruction)
        return self

    push = append

    def extend(self, instructions: Iterable) -> "Sequence":
        for ins in instructions:
            self.append(ins)
        return self

    @property
    def duration(self) -> float:
        return total_duration(self)

    def steps_for(self, duration: float, dt: float | None = None) -> tuple[int, float]:
        return _steps(duration, dt or self.dt, self.strict)

    @property
    def n_steps(self) -> int:
        return sum(self._instr_steps(ins)[0] for ins in self.instructions)

    def _instr_steps(self, ins) -> tuple[int, float]:
        if isinstance(ins, Parallel):
            best = (0, self.dt)
            for m in ins.members:
                n, s = self._instr_steps(m)
                if n > best[0]:
                    best = (n, s)
            return best
        return _steps(ins.duration, getattr(ins, "dt", None) or self.dt, self.strict)


def total_duration(seq: Sequence) -> float:
    return float(sum(ins.duration for ins in seq.instructions))


def _steps(duration: float, step: float, strict: bool) -> tuple[int, float]:
    if duration == 0:
        return 0, step
    n = int(round(duration / step))
    if n == 0:
        n = 1
    err = abs(n * step - duration) / duration
    if err > 1e-6:
        if strict:
            raise SequenceError(f"duration {duration:.9g} s is not a multiple of the step {step:.9g} s "
                                f"(relative rounding {err:.2g}); adjust it or use strict=False")
        return n, duration / n
    return n, step


# ---------------------------------------------------------------------------
# expansion


@dataclass
class ToneSchedule:
    """Per-step AOD tone values, shape (n_steps, rows) / (n_steps, cols)."""

    row_freq: np.ndarray
    col_freq: np.ndarray
    row_amp: np.ndarray
    col_amp: np.ndarray

    def at(self, k: int):
        return self.row_freq[k], self.col_freq[k], self.row_amp[k], self.col_amp[k]

    @property
    def static(self) -> bool:
        return all(np.all(a == a[:1]) for a in (self.row_freq, self.col_freq, self.row_amp, self.col_amp))


@dataclass
class Timeline:
    dts: np.ndarray
    handles: list[int]
    multipliers: np.ndarray  # (n_steps, len(handles)) complex
    tones: dict[int, ToneSchedule]
    substeps: np.ndarray
    gates: list[tuple[int, Gate]]

    @property
    def n_steps(self) -> int:
        return len(self.dts)

    @property
    def times(self) -> np.ndarray:
        """End time of every step; the first entry is the first step size."""
        return np.cumsum(self.dts)

    def column(self, handle: int) -> np.ndarray:
        return self.multipliers[:, self.handles.index(handle)]


def _sample_envelope(env, interp: str, n: int) -> np.ndarray:
    env = np.asarray(env, dtype=complex)
    m = len(env)
    mid = (np.arange(n) + 0.5) / n  # step midpoints as a fraction of the pulse
    if interp == "piecewise_constant":
        idx = np.minimum((mid * m).astype(np.int64), m - 1)
        return env[idx]
    x = np.linspace(0.0, 1.0, m)
    return np.interp(mid, x, env.real) + 1j * np.interp(mid, x, env.imag)


def expand_timeline(seq: Sequence, coupling_handles: Seq[int], arrays: dict | None = None,
                    active: dict | None = None) -> Timeline:
    """Per-step coupling multipliers, step sizes and AOD tone schedules.

    ``arrays`` maps tweezer-array handles to their :class:`TweezerArray`
    (initial tones); ``active`` maps coupling handles to their initial
    on/off state.
    """
    arrays = arrays or {}
    active = dict(active or {})
    handles = list(coupling_handles)
    hset = set(handles)

    dts: list[np.ndarray] = []
    subs: list[np.ndarray] = []
    toggles: list[tuple[int, int, bool]] = []
    windows: list[tuple[int, int, int, np.ndarray | None, object]] = []
    tone_events: list[tuple[int, int, object]] = []
    gates: list[tuple[int, Gate]] = []
    cursor = 0

    def check_handles(hs, what):
        for h in hs:
            if h not in hset:
                raise SequenceError(f"{what} refers to unknown coupling handle {h}")

    def check_array(ins):
        if ins.array not in arrays:
            raise SequenceError(f"{type(ins).__name__} refers to unknown tweezer array {ins.array}")
        arr = arrays[ins.array]
        count = len(arr.row_tones) if ins.axis == "row" else len(arr.col_tones)
        if not 0 <= ins.index < count:
            raise SequenceError(f"{type(ins).__name__}: {ins.axis} index {ins.index} out of range")

    def place(ins, k) -> tuple[int, float]:
        """Record ``ins`` starting at step k; return (steps, step size)."""
        if isinstance(ins, (On, Off)):
            check_handles(ins.handles, type(ins).__name__)
            for h in ins.handles:
                toggles.append((k, h, isinstance(ins, On)))
            return 0, seq.dt
        if isinstance(ins, Gate):
            gates.append((k, ins))
            return 0, seq.dt
        if isinstance(ins, _ToneSet):
            check_array(ins)
            tone_events.append((k, 0, ins))
            return 0, seq.dt
        n, step = _steps(ins.duration, getattr(ins, "dt", None) or seq.dt, seq.strict)
        if isinstance(ins, Pulse):
            check_handles(ins.handles, "Pulse")
            env = None if ins.envelope is None else _sample_envelope(ins.envelope, ins.interp, n)
            for h in ins.handles:
                windows.append((h, k, k + n, env, ins))
        elif isinstance(ins, _ToneRamp):
            check_array(ins)
            tone_events.append((k, n, ins))
        elif not isinstance(ins, Wait):
            raise SequenceError(f"unsupported instruction {ins!r}")
        return n, step

    for ins in seq.instructions:
        if isinstance(ins, Parallel):
            placed = []
            for m in ins.members:
                n, step = place(m, cursor)
                placed.append((n, step, m))
            longest = max((p[0] for p in placed), default=0)
            steps_used = {p[1] for p in placed if p[0] > 0}
            if len(steps_used) > 1:
                raise SequenceError("members of a Parallel block use different step sizes")
            step = steps_used.pop() if steps_used else seq.dt
            seen: dict[int, int] = {}
            for n, _, m in placed:
                if isinstance(m, Pulse):
                    for h in m.handles:
                        if h in seen:
                            raise SequenceError(f"overlapping pulses on coupling {h} inside Parallel")
                        seen[h] = n
            sub = max((getattr(p[2], "substeps", 1) for p in placed), default=1)
            dts.append(np.full(longest, step))
            subs.append(np.full(longest, sub, dtype=np.int64))
            cursor += longest
        else:
            n, step = place(ins, cursor)
            dts.append(np.full(n, step))
            subs.append(np.full(n, getattr(ins, "substeps", 1), dtype=np.int64))
            cursor += n

    n_steps = cursor
    dt_arr = np.concatenate(dts) if dts else np.zeros(0)
    sub_arr = np.concatenate(subs) if subs else np.zeros(0, dtype=np.int64)

    # toggled state, effective from the step following the toggle
    mult = np.zeros((n_steps, len(handles)), dtype=complex)
    col = {h: i for i, h in enumerate(handles)}
    on_state = np.zeros((n_steps, len(handles)), dtype=bool)
    for h in handles:
        state, pos = bool(active.get(h, False)), 0
        for k, hh, val in toggles:
            if hh != h:
                continue
            on_state[pos:k, col[h]] = state
            state, pos = val, k
        on_state[pos:, col[h]] = state
    mult[on_state] = 1.0
    for h, k0, k1, env, ins in windows:
        if np.any(on_state[k0:k1, col[h]]):
            warnings.warn(f"Pulse on coupling {h} overlaps a window where it is toggled On; "
                          "the pulse multiplier takes precedence", stacklevel=2)
        mult[k0:k1, col[h]] = 1.0 if env is None else env

    tones = {}
    for ah, arr in arrays.items():
        sched = {}
        for axis, tl in (("row", arr.row_tones), ("col", arr.col_tones)):
            for qi, quantity in ((0, "freq"), (1, "amp")):
                out = np.empty((n_steps, len(tl)))
                for idx, tone in enumerate(tl):
                    val, pos = tone[qi], 0
                    for k, n, ev in tone_events:
                        if ev.array != ah or ev.axis != axis or ev.quantity != quantity or ev.index != idx:
                            continue
                        out[pos:k, idx] = val
                        if isinstance(ev, _ToneSet):
                            val, pos = ev.value, k
                        else:
                            out[k:k + n, idx] = val + ev.delta * (np.arange(n) + 0.5) / n
                            val, pos = val + ev.delta, k + n
                        if quantity == "amp" and val < 0:
                            raise SequenceError("AOD tone amplitude ramped below zero")
                    out[pos:, idx] = val
                sched[f"{axis}_{quantity}"] = out
        tones[ah] = ToneSchedule(sched["row_freq"], sched["col_freq"], sched["row_amp"], sched["col_amp"])

    return Timeline(dt_arr, handles, mult, tones, sub_arr, gates)

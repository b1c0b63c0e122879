"""The system graph: atoms, beams, process nodes, detectors and basis constraints.

Every registration call appends one or more nodes and returns their integer
handles. Nodes may refer to beams by handle or by name; the dependency graph
is resolved at compile time by :func:`topo_order`.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .atomic import Atom, Level, Manifold, transition_amplitudes, zeeman_shift
from .noise import LaserPhaseNoiseModel
from .optics import MixedPolarization, Polarization, spherical_components
from .params import collect_parameters, resolve_value


class ModelError(ValueError):
    pass


class CycleError(ModelError):
    def __init__(self, cycle: list[int]):
        self.cycle = cycle
        super().__init__("dependency cycle among nodes: " + " -> ".join(map(str, cycle + cycle[:1])))


# ---------------------------------------------------------------------------
# nodes


@dataclass(eq=False, kw_only=True)
class Node:
    name: str | None = None
    handle: int = field(default=-1, init=False)
    extra_deps: tuple = ()

    def deps(self) -> tuple:
        """Handles or names of nodes this node must be compiled after."""
        return tuple(self.extra_deps)


@dataclass(eq=False, kw_only=True)
class BeamNode(Node):
    beam: object


@dataclass(eq=False, kw_only=True)
class CouplingNode(Node):
    """Coherent drive ``(Omega/2)|upper><lower| + h.c.`` on one atom.

    The compiled amplitude is ``rabi * cg * pol_factor`` where ``pol_factor``
    is the spherical component ``q`` of ``polarization`` about
    ``quantization_axis`` (or ``component`` when given explicitly, else 1).
    With a ``beam`` reference the amplitude is further multiplied by the
    beam's normalized field at the atom's position.
    """

    atom: int
    lower: Level
    upper: Level
    rabi: object
    cg: float = 1.0
    q: int | None = None
    polarization: object = None
    quantization_axis: tuple = (0.0, 0.0, 1.0)
    component: complex | None = None
    beam: int | str | None = None
    active: bool = False

    def deps(self):
        return super().deps() + ((self.beam,) if self.beam is not None else ())

    def amplitude(self, values: dict, rng=None) -> complex:
        amp = complex(resolve_value(self.rabi, values, rng)) * self.cg
        if self.component is not None:
            amp *= complex(resolve_value(self.component, values, rng))
        elif self.polarization is not None:
            vec = _resolve_pol(self.polarization, values, rng)
            sm, pi, sp = spherical_components(vec, self.quantization_axis)
            amp *= {-1: sm, 0: pi, 1: sp}[self.q]
        return amp


@dataclass(eq=False, kw_only=True)
class NoisyCouplingNode(CouplingNode):
    noise: LaserPhaseNoiseModel


@dataclass(eq=False, kw_only=True)
class PlanarCouplingNode(CouplingNode):
    wavevector: tuple


@dataclass(eq=False, kw_only=True)
class DetuningNode(Node):
    """Energy offset on one level; ``pulsed`` offsets are switched by the sequence like couplings."""

    atom: int
    level: Level
    shift: object
    pulsed: bool = False


@dataclass(eq=False, kw_only=True)
class DecayNode(Node):
    atom: int
    upper: Level
    lower: Level
    rate: object


@dataclass(eq=False, kw_only=True)
class DephasingNode(Node):
    atom: int
    levels: tuple
    rate: object


@dataclass(eq=False, kw_only=True)
class InteractionNode(Node):
    """Diagonal interaction ``V |la lb><la lb|`` between two atoms.

    ``strength`` gives a constant V; ``c6`` gives V = C6 / r^6 from the
    instantaneous separation.
    """

    atom_a: int
    atom_b: int
    level_a: Level
    level_b: Level
    strength: object = None
    c6: object = None


def _resolve_pol(pol, values, rng) -> np.ndarray:
    if isinstance(pol, MixedPolarization):
        a = resolve_value(pol.amplitude, values, rng)
        v = pol.dominant.array + a * pol.contamination.array
        return v / np.linalg.norm(v)
    if isinstance(pol, Polarization):
        return pol.array
    return Polarization(tuple(pol)).array


def _components_nonzero(pol, axis) -> set[int]:
    """q values with a possibly non-zero component (contamination counted)."""
    vecs = []
    if isinstance(pol, MixedPolarization):
        vecs = [pol.dominant.array, pol.contamination.array]
    else:
        vecs = [_resolve_pol(pol, {}, None)]
    out = set()
    for v in vecs:
        for q, c in zip((-1, 0, 1), spherical_components(v, axis)):
            if abs(c) > 1e-12:
                out.add(q)
    return out


# ---------------------------------------------------------------------------
# system


class System:
    """Atoms, beams, nodes, detectors and basis constraints of one device."""

    def __init__(self):
        self.atoms: list[Atom] = []
        self.nodes: list[Node] = []
        self.detectors: list = []
        self.maxoccupations: list[tuple[Level, int]] = []
        self.initial_state = None

    # -- registration helpers -------------------------------------------

    def add_atom(self, atom: Atom) -> int:
        if any(a is atom for a in self.atoms):
            raise ModelError("atom registered twice")
        self.atoms.append(atom)
        return len(self.atoms) - 1

    def atom_index(self, atom) -> int:
        if isinstance(atom, (int, np.integer)):
            if not 0 <= atom < len(self.atoms):
                raise ModelError(f"atom index {atom} out of range")
            return int(atom)
        for i, a in enumerate(self.atoms):
            if a is atom:
                return i
        raise ModelError(f"{atom!r} is not registered in this system")

    def _check_level(self, ai: int, level: Level):
        if not self.atoms[ai].has_level(level):
            raise ModelError(f"level {level.label!r} is not in the simulated subset of atom {ai}")

    def _append(self, node: Node) -> int:
        node.handle = len(self.nodes)
        self.nodes.append(node)
        return node.handle

    def node(self, ref) -> Node:
        if isinstance(ref, str):
            for n in self.nodes:
                if n.name == ref:
                    return n
            raise ModelError(f"no node named {ref!r}")
        if isinstance(ref, Node):
            return ref
        if not 0 <= ref < len(self.nodes):
            raise ModelError(f"unknown node handle {ref}")
        return self.nodes[ref]

    def add_beam(self, beam, name: str | None = None) -> int:
        return self._append(BeamNode(beam=beam, name=name))

    def add_detector(self, spec):
        if any(d.name == spec.name for d in self.detectors):
            raise ModelError(f"duplicate detector name {spec.name!r}")
        self.detectors.append(spec)
        return spec

    def add_maxoccupation(self, level: Level, n: int):
        if n < 0:
            raise ModelError("maximum occupation must be >= 0")
        self.maxoccupations.append((level, int(n)))

    # -- processes ------------------------------------------------------

    def add_coupling(self, atoms, lower, upper, rabi, beam=None, polarization=None,
                     components=None, quantization_axis=(0.0, 0.0, 1.0), active: bool = False,
                     noise: LaserPhaseNoiseModel | None = None, wavevector=None, name: str | None = None):
        """Coherent coupling between two levels or two manifolds.

        Returns one handle for a single level pair on a single atom,
        otherwise a list of handles (one per atom and allowed sublevel pair).
        ``components`` maps q in {-1, 0, 1} to a complex weight and overrides
        the polarization decomposition.
        """
        single_atom = not isinstance(atoms, (list, tuple))
        atom_list = [atoms] if single_atom else list(atoms)
        if polarization is None and beam is not None and components is None:
            polarization = getattr(self._beam_object(beam), "polarization", None)
        handles = []
        for atom in atom_list:
            ai = self.atom_index(atom)
            if isinstance(lower, Manifold) or isinstance(upper, Manifold):
                if not (isinstance(lower, Manifold) and isinstance(upper, Manifold)):
                    raise ModelError("manifold couplings need manifolds on both sides")
                if components is not None:
                    qs = [q for q in (-1, 0, 1) if components.get(q, 0) != 0]
                elif polarization is not None:
                    qs = sorted(_components_nonzero(polarization, quantization_axis))
                else:
                    raise ModelError("a manifold coupling needs a polarization or explicit components")
                pairs = [(q, lo, up, c) for q in qs for lo, up, c in transition_amplitudes(lower, upper, q)]
                if not pairs:
                    raise ModelError(f"no allowed transitions {lower.label} -> {upper.label} "
                                     f"for polarization components q in {qs}")
                for q, lo, up, c in pairs:
                    self._check_level(ai, lo)
                    self._check_level(ai, up)
                    kw = dict(atom=ai, lower=lo, upper=up, rabi=rabi, cg=c, q=q, beam=beam, active=active,
                              quantization_axis=tuple(quantization_axis), name=name)
                    if components is not None:
                        kw["component"] = components[q]
                    else:
                        kw["polarization"] = polarization
                    handles.append(self._append(_coupling_node(kw, noise, wavevector)))
            else:
                self._check_level(ai, lower)
                self._check_level(ai, upper)
                if lower == upper:
                    raise ModelError("a coupling needs two distinct levels")
                kw = dict(atom=ai, lower=lower, upper=upper, rabi=rabi, beam=beam, active=active,
                          quantization_axis=tuple(quantization_axis), name=name)
                handles.append(self._append(_coupling_node(kw, noise, wavevector)))
        if single_atom and len(handles) == 1 and not isinstance(lower, Manifold):
            return handles[0]
        return handles

    def _beam_object(self, ref):
        try:
            node = self.node(ref)
        except ModelError:
            return None
        return node.beam if isinstance(node, BeamNode) else None

    def add_detuning(self, atom, level: Level, shift, pulsed: bool = False, name: str | None = None) -> int:
        ai = self.atom_index(atom)
        self._check_level(ai, level)
        return self._append(DetuningNode(atom=ai, level=level, shift=shift, pulsed=pulsed, name=name))

    def add_zeeman_detunings(self, atom, manifold: Manifold, B, offset=0.0, name: str | None = None) -> list[int]:
        """One detuning per sublevel: g m mu_B B / hbar plus a common ``offset``."""
        ai = self.atom_index(atom)
        out = []
        for lv in manifold:
            self._check_level(ai, lv)
            shift = zeeman_shift(lv, B) + offset
            out.append(self._append(DetuningNode(atom=ai, level=lv, shift=shift, name=name)))
        return out

    def add_decay(self, atom, upper, lower, rate, name: str | None = None):
        """Spontaneous decay. Manifold arguments expand into branches with rate x CG^2."""
        ai = self.atom_index(atom)
        if isinstance(upper, Manifold) or isinstance(lower, Manifold):
            if not (isinstance(upper, Manifold) and isinstance(lower, Manifold)):
                raise ModelError("manifold decay needs manifolds on both sides")
            out = []
            for q in (-1, 0, 1):
                for lo, up, c in transition_amplitudes(lower, upper, q):
                    self._check_level(ai, lo)
                    self._check_level(ai, up)
                    out.append(self._append(DecayNode(atom=ai, upper=up, lower=lo, rate=rate * (c * c), name=name)))
            if not out:
                raise ModelError(f"no allowed decay channels {upper.label} -> {lower.label}")
            return out
        self._check_level(ai, upper)
        self._check_level(ai, lower)
        return self._append(DecayNode(atom=ai, upper=upper, lower=lower, rate=rate, name=name))

    def add_dephasing(self, atom, levels, rate, name: str | None = None) -> int:
        ai = self.atom_index(atom)
        if isinstance(levels, Level):
            levels = (levels,)
        elif isinstance(levels, Manifold):
            levels = tuple(levels)
        levels = tuple(levels)
        for lv in levels:
            self._check_level(ai, lv)
        return self._append(DephasingNode(atom=ai, levels=levels, rate=rate, name=name))

    def _pair(self, a, b, la, lb):
        ia, ib = self.atom_index(a), self.atom_index(b)
        if ia == ib:
            raise ModelError("an interaction needs two distinct atoms")
        self._check_level(ia, la)
        self._check_level(ib, lb)
        return ia, ib

    def add_interaction(self, atom_a, atom_b, level_a: Level, level_b: Level, strength, name=None) -> int:
        ia, ib = self._pair(atom_a, atom_b, level_a, level_b)
        return self._append(InteractionNode(atom_a=ia, atom_b=ib, level_a=level_a, level_b=level_b,
                                            strength=strength, name=name))

    def add_vdwinteraction(self, atom_a, atom_b, level_a: Level, level_b: Level, c6, name=None) -> int:
        ia, ib = self._pair(atom_a, atom_b, level_a, level_b)
        return self._append(InteractionNode(atom_a=ia, atom_b=ib, level_a=level_a, level_b=level_b,
                                            c6=c6, name=name))

    # -- queries --------------------------------------------------------

    def parameters(self) -> dict:
        """Every Parameter referenced anywhere in the system, by name."""
        objs = []
        for n in self.nodes:
            for attr in ("rabi", "component", "shift", "rate", "strength", "c6"):
                if hasattr(n, attr):
                    objs.append(getattr(n, attr))
            pol = getattr(n, "polarization", None)
            if isinstance(pol, MixedPolarization):
                objs.append(pol.amplitude)
            noise = getattr(n, "noise", None)
            if noise is not None:
                objs.extend([noise.A_G, noise.f0, noise.sigma, noise.A_pl, noise.alpha])
            beam = getattr(n, "beam", None)
            if isinstance(n, BeamNode):
                objs.extend(_beam_fields(beam))
        return collect_parameters(objs)

    @property
    def dissipative(self) -> bool:
        return any(isinstance(n, (DecayNode, DephasingNode)) for n in self.nodes)

    def couplings(self) -> list[CouplingNode]:
        return [n for n in self.nodes if isinstance(n, CouplingNode)]


def _beam_fields(beam) -> list:
    out = []
    for attr in ("wavelength", "w0", "wx", "wy", "power", "waist", "power_per_amplitude2", "field"):
        if hasattr(beam, attr):
            out.append(getattr(beam, attr))
    pol = getattr(beam, "polarization", None)
    if isinstance(pol, MixedPolarization):
        out.append(pol.amplitude)
    return out


def _coupling_node(kw, noise, wavevector) -> CouplingNode:
    if noise is not None and wavevector is not None:
        raise ModelError("a coupling is either noisy or planar, not both")
    if noise is not None:
        return NoisyCouplingNode(noise=noise, **kw)
    if wavevector is not None:
        return PlanarCouplingNode(wavevector=tuple(float(x) for x in wavevector), **kw)
    return CouplingNode(**kw)


def topo_order(nodes: Sequence[Node]) -> list[int]:
    """Positions of ``nodes`` in dependency order, ties broken by insertion order.

    Dependencies are given by handle (position) or by node name.
    """
    n = len(nodes)
    by_name = {}
    for i, nd in enumerate(nodes):
        if nd.name is not None:
            by_name.setdefault(nd.name, i)
    edges: list[set[int]] = [set() for _ in range(n)]
    indeg = [0] * n
    for i, nd in enumerate(nodes):
        for d in nd.deps():
            if isinstance(d, str):
                if d not in by_name:
                    raise ModelError(f"node {i} depends on unknown node {d!r}")
                j = by_name[d]
            else:
                j = int(d)
                if not 0 <= j < n:
                    raise ModelError(f"node {i} depends on unknown handle {j}")
            if i not in edges[j]:
                edges[j].add(i)
                indeg[i] += 1
    ready = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        i = heapq.heappop(ready)
        order.append(i)
        for k in sorted(edges[i]):
            indeg[k] -= 1
            if indeg[k] == 0:
                heapq.heappush(ready, k)
    if len(order) < n:
        raise CycleError(_find_cycle(edges, set(range(n)) - set(order)))
    return order


def _find_cycle(edges, remaining: set[int]) -> list[int]:
    state: dict[int, int] = {}
    stack: list[int] = []

    def visit(i):
        state[i] = 1
        stack.append(i)
        for k in sorted(edges[i]):
            if k not in remaining:
                continue
            if state.get(k) == 1:
                return stack[stack.index(k):]
            if k not in state:
                c = visit(k)
                if c:
                    return c
        state[i] = 2
        stack.pop()
        return None

    for i in sorted(remaining):
        if i not in state:
            c = visit(i)
            if c:
                return list(c)
    return sorted(remaining)


# module-level registration aliases
def add_coupling(sys: System, *args, **kw):
    return sys.add_coupling(*args, **kw)


def add_zeeman_detunings(sys: System, *args, **kw):
    return sys.add_zeeman_detunings(*args, **kw)


def add_decay(sys: System, *args, **kw):
    return sys.add_decay(*args, **kw)


def add_dephasing(sys: System, *args, **kw):
    return sys.add_dephasing(*args, **kw)


def add_detuning(sys: System, *args, **kw):
    return sys.add_detuning(*args, **kw)


def add_interaction(sys: System, *args, **kw):
    return sys.add_interaction(*args, **kw)


def add_vdwinteraction(sys: System, *args, **kw):
    return sys.add_vdwinteraction(*args, **kw)

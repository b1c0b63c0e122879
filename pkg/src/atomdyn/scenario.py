"""Declarative scenario files (YAML or JSON) for the command line.

A scenario is parsed in two stages. The text is read into plain data and
validated against a strict schema (unknown keys are rejected, the
``version`` field is required). The validated document is then turned into
a :class:`~atomdyn.model.System` and :class:`~atomdyn.sequence.Sequence`,
converting unit strings such as ``"2.5 MHz"`` or ``"80 us"`` to SI.

Values may reference constants and parameters as ``$name``; a string that
contains ``$`` is an arithmetic expression (``"$Omega / 2"``) in which bare
numbers are canonical SI values. Constants are parsed with the unit
dimension of the place where they are used.
"""

from __future__ import annotations

import ast
import hashlib
import json
import math
import operator
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated, Any, Literal, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .atomic import Atom, GaussianPosition, Level, MaxwellBoltzmann
from .model import ModelError, System
from .noise import LaserPhaseNoiseModel
from .observe import Coherence, Field as FieldDetector, Motion, Population
from .optics import GaussianBeam, Polarization, TweezerArray
from .params import FUNCTIONS, Parameter
from .sequence import (AmplCol, AmplRow, FreqCol, FreqRow, MoveCol, MoveRow, Off, On, Parallel, Pulse, RampCol,
                       RampRow, Sequence, SequenceError, Wait)
from .units import UnitError, parse_quantity

SCHEMA_VERSION = 1

Quantity = Union[str, float, int]


class ScenarioParseError(ValueError):
    """Malformed text (exit code 2)."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line, self.column = line, column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)


class ScenarioValidationError(ValueError):
    """Well-formed text that does not describe a valid scenario (exit code 3)."""


# ---------------------------------------------------------------------------
# schema


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ParameterSpec(_Strict):
    name: str
    default: Quantity
    std: Quantity | None = None
    dimension: str = "angular"


class AtomSpec(_Strict):
    name: str
    levels: list[str] = Field(min_length=1)
    species: str = "generic"
    mass: Quantity | None = None
    position: list[Quantity] = Field(default_factory=lambda: ["0 m", "0 m", "0 m"], min_length=3, max_length=3)
    position_sigma: list[Quantity] | None = Field(default=None, min_length=3, max_length=3)
    temperature: Quantity | None = None
    polarizabilities: dict[str, Quantity] = Field(default_factory=dict)


class ToneSpec(_Strict):
    frequency: Quantity
    amplitude: float = 1.0


class GaussianBeamSpec(_Strict):
    kind: Literal["gaussian"]
    name: str
    wavelength: Quantity
    waist: Quantity
    power: Quantity
    focus: list[Quantity] = Field(default_factory=lambda: ["0 m", "0 m", "0 m"], min_length=3, max_length=3)
    axis: Literal["x", "y", "z"] = "z"
    polarization: list[Union[float, list[float]]] | None = Field(default=None, min_length=3, max_length=3)


class TweezerSpec(_Strict):
    kind: Literal["tweezer_array"]
    name: str
    wavelength: Quantity
    waist: Quantity
    row_tones: list[ToneSpec] = Field(min_length=1)
    col_tones: list[ToneSpec] = Field(min_length=1)
    power_per_amplitude2: Quantity
    row_calibration: Quantity = "1 um/MHz"
    col_calibration: Quantity = "1 um/MHz"
    origin: list[Quantity] = Field(default_factory=lambda: ["0 m", "0 m", "0 m"], min_length=3, max_length=3)
    coherent: bool = True


BeamSpec = Annotated[Union[GaussianBeamSpec, TweezerSpec], Field(discriminator="kind")]


class NoiseSpec(_Strict):
    name: str
    A_G: Quantity = "0 Hz2/Hz"
    f0: Quantity = "0 Hz"
    sigma: Quantity = "1 Hz"
    A_pl: Quantity = "0 Hz2/Hz"
    alpha: float = 0.0


class CouplingSpec(_Strict):
    kind: Literal["coupling"]
    name: str
    atoms: Union[str, list[str]]
    lower: str
    upper: str
    rabi: Quantity
    beam: str | None = None
    active: bool = False
    noise: str | None = None


class DetuningSpec(_Strict):
    kind: Literal["detuning"]
    name: str | None = None
    atom: str
    level: str
    shift: Quantity
    pulsed: bool = False


class DecaySpec(_Strict):
    kind: Literal["decay"]
    name: str | None = None
    atom: str
    upper: str
    lower: str
    rate: Quantity


class DephasingSpec(_Strict):
    kind: Literal["dephasing"]
    name: str | None = None
    atom: str
    levels: list[str] = Field(min_length=1)
    rate: Quantity


class InteractionSpec(_Strict):
    kind: Literal["interaction"]
    name: str | None = None
    atoms: list[str] = Field(min_length=2, max_length=2)
    levels: list[str] = Field(min_length=2, max_length=2)
    strength: Quantity


class VdwSpec(_Strict):
    kind: Literal["vdw"]
    name: str | None = None
    atoms: list[str] = Field(min_length=2, max_length=2)
    levels: list[str] = Field(min_length=2, max_length=2)
    c6: Quantity


ProcessSpec = Annotated[Union[CouplingSpec, DetuningSpec, DecaySpec, DephasingSpec, InteractionSpec, VdwSpec],
                        Field(discriminator="kind")]


class PopulationSpec(_Strict):
    kind: Literal["population"]
    name: str
    atom: str
    level: str


class CoherenceSpec(_Strict):
    kind: Literal["coherence"]
    name: str
    atom: str
    levels: list[str] = Field(min_length=2, max_length=2)


class MotionSpec(_Strict):
    kind: Literal["motion"]
    name: str
    atom: str


class FieldSpec(_Strict):
    kind: Literal["field"]
    name: str
    node: str


DetectorSpec = Annotated[Union[PopulationSpec, CoherenceSpec, MotionSpec, FieldSpec], Field(discriminator="kind")]


class MaxOccSpec(_Strict):
    level: str
    n: int = Field(ge=0)


class PulseSpec(_Strict):
    nodes: Union[str, list[str]]
    duration: Quantity
    envelope: list[Union[float, list[float]]] | None = None
    interp: Literal["piecewise_constant", "linear"] = "piecewise_constant"
    dt: Quantity | None = None


class WaitSpec(_Strict):
    duration: Quantity
    dt: Quantity | None = None


class RampSpec(_Strict):
    array: str
    index: int = Field(ge=0)
    delta: Quantity
    duration: Quantity
    dt: Quantity | None = None
    substeps: int = Field(default=1, ge=1)


class ToneSetSpec(_Strict):
    array: str
    index: int = Field(ge=0)
    value: Quantity


class InstructionSpec(_Strict):
    pulse: PulseSpec | None = None
    wait: WaitSpec | None = None
    on: Union[str, list[str], None] = None
    off: Union[str, list[str], None] = None
    move_row: RampSpec | None = None
    move_col: RampSpec | None = None
    ramp_row: RampSpec | None = None
    ramp_col: RampSpec | None = None
    freq_row: ToneSetSpec | None = None
    freq_col: ToneSetSpec | None = None
    ampl_row: ToneSetSpec | None = None
    ampl_col: ToneSetSpec | None = None
    parallel: list["InstructionSpec"] | None = None

    @model_validator(mode="after")
    def _one_kind(self):
        set_ = [k for k in type(self).model_fields if getattr(self, k) is not None]
        if len(set_) != 1:
            raise ValueError(f"each instruction needs exactly one kind, got {set_ or 'none'}")
        return self


class SequenceSpec(_Strict):
    dt: Quantity
    downsample: int = Field(default=1, ge=1)
    strict: bool = True
    instructions: list[InstructionSpec] = Field(default_factory=list)


class RunSpec(_Strict):
    shots: int = Field(default=1, ge=1)
    seed: int = 0
    solver: Literal["auto", "se", "me", "mcwf", "newton"] = "auto"
    density_matrix: bool = False
    order: int = Field(default=4, ge=1)
    final_state: bool = False
    threads: int | None = Field(default=None, ge=1)
    dt: Quantity | None = None


class OutputSpec(_Strict):
    directory: str = "out"
    formats: list[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])


class ScenarioSpec(_Strict):
    version: int
    name: str = "scenario"
    description: str = ""
    constants: dict[str, Quantity] = Field(default_factory=dict)
    parameters: list[ParameterSpec] = Field(default_factory=list)
    atoms: list[AtomSpec] = Field(min_length=1)
    beams: list[BeamSpec] = Field(default_factory=list)
    noise: list[NoiseSpec] = Field(default_factory=list)
    processes: list[ProcessSpec] = Field(default_factory=list)
    detectors: list[DetectorSpec] = Field(default_factory=list)
    maxoccupations: list[MaxOccSpec] = Field(default_factory=list)
    initial_state: list[str] | None = None
    sequence: SequenceSpec
    run: RunSpec = Field(default_factory=RunSpec)
    outputs: OutputSpec = Field(default_factory=OutputSpec)

    @field_validator("version")
    @classmethod
    def _version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported scenario version {v} (this build reads version {SCHEMA_VERSION})")
        return v


# ---------------------------------------------------------------------------
# text -> data


def content_hash(data: bytes) -> str:
    """Git blob hash of the scenario bytes."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _yaml_node_at(node, path):
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == key:
                    nxt = v
                    break
            if nxt is None:
                return node
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            return node
    return node


def _key_node(node, path):
    """Node of the mapping key at ``path`` (for unknown-key errors), else the value node."""
    if not path:
        return node
    parent = _yaml_node_at(node, path[:-1])
    if isinstance(parent, yaml.MappingNode):
        for k, _ in parent.value:
            if k.value == path[-1]:
                return k
    return _yaml_node_at(node, path)


@dataclass
class LoadedScenario:
    spec: ScenarioSpec
    text: bytes
    path: str
    hash: str


def load_scenario(path: str | Path) -> LoadedScenario:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario {str(p)!r}: {exc.strerror}") from None
    return parse_scenario(raw, str(p))


def parse_scenario(raw: bytes | str, path: str = "<string>") -> LoadedScenario:
    if isinstance(raw, str):
        raw = raw.encode()
    text = raw.decode("utf-8", errors="replace")
    root = None
    if path.endswith(".json"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioParseError(exc.msg, exc.lineno, exc.colno) from None
    else:
        try:
            root = yaml.compose(text, Loader=yaml.SafeLoader)
            data = yaml.safe_load(text)
        except yaml.MarkedYAMLError as exc:
            mark = exc.problem_mark or exc.context_mark
            raise ScenarioParseError(str(exc.problem or exc), mark.line + 1 if mark else None,
                                     mark.column + 1 if mark else None) from None
        except yaml.YAMLError as exc:
            raise ScenarioParseError(str(exc)) from None
    if not isinstance(data, dict):
        raise ScenarioParseError("a scenario must be a mapping at the top level", 1, 1)
    try:
        spec = ScenarioSpec.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = [x for x in err["loc"] if not (isinstance(x, str) and x in _TAGS)]
            where = ".".join(str(x) for x in loc) or "<root>"
            if root is not None:
                node = _key_node(root, loc) if err["type"] == "extra_forbidden" else _yaml_node_at(root, loc)
                where += f" (line {node.start_mark.line + 1}, column {node.start_mark.column + 1})"
            lines.append(f"{where}: {err['msg']}")
        raise ScenarioValidationError("invalid scenario:\n  " + "\n  ".join(lines)) from None
    return LoadedScenario(spec, raw, path, content_hash(raw))


_TAGS = {"gaussian", "tweezer_array", "coupling", "detuning", "decay", "dephasing", "interaction", "vdw",
         "population", "coherence", "motion", "field"}


# ---------------------------------------------------------------------------
# values

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv,
           ast.Pow: operator.pow}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_REF = re.compile(r"\$([A-Za-z_]\w*)")


class _Resolver:
    def __init__(self, spec: ScenarioSpec):
        self.constants = dict(spec.constants)
        self.parameters: dict[str, Parameter] = {}
        for p in spec.parameters:
            if p.name in self.parameters or p.name in self.constants:
                raise ScenarioValidationError(f"parameters.{p.name}: name defined twice")
            d = self._plain(p.default, p.dimension, f"parameters.{p.name}.default")
            s = 0.0 if p.std is None else self._plain(p.std, p.dimension, f"parameters.{p.name}.std")
            self.parameters[p.name] = Parameter(p.name, d, s)

    def _plain(self, value, dimension, where):
        try:
            if isinstance(value, str) and value.strip().startswith("$"):
                raise UnitError("references are not allowed here")
            return parse_quantity(value, dimension)
        except UnitError as exc:
            raise ScenarioValidationError(f"{where}: {exc}") from None

    def value(self, value, dimension: str, where: str):
        """Number, Parameter or parameter expression in canonical units."""
        if value is None:
            return None
        if isinstance(value, str) and "$" in value:
            return self._expression(value, dimension, where)
        return self._plain(value, dimension, where)

    def _expression(self, text: str, dimension: str, where: str):
        names: dict[str, Any] = {}

        def sub(m):
            name = m.group(1)
            if name in self.parameters:
                names[f"_r_{name}"] = self.parameters[name]
            elif name in self.constants:
                names[f"_r_{name}"] = self.value(self.constants[name], dimension, f"constants.{name}")
            else:
                raise ScenarioValidationError(f"{where}: unknown reference ${name}")
            return f"_r_{name}"

        src = _REF.sub(sub, text)
        try:
            tree = ast.parse(src.strip(), mode="eval")
        except SyntaxError:
            raise ScenarioValidationError(f"{where}: cannot parse expression {text!r}") from None

        def ev(node):
            if isinstance(node, ast.Expression):
                return ev(node.body)
            if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and \
                    not isinstance(node.value, bool):
                return float(node.value)
            if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
                return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
            if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
                return _UNARY[type(node.op)](ev(node.operand))
            if isinstance(node, ast.Name):
                if node.id in names:
                    return names[node.id]
                if node.id == "pi":
                    return math.pi
            if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in FUNCTIONS \
                    and len(node.args) == 1 and not node.keywords:
                return FUNCTIONS[node.func.id](ev(node.args[0]))
            raise ScenarioValidationError(f"{where}: expression {text!r} uses an unsupported construct")

        return ev(tree)


def _complex(x) -> complex:
    if isinstance(x, list):
        if len(x) != 2:
            raise ScenarioValidationError("complex values are written as [re, im]")
        return complex(x[0], x[1])
    return complex(x)


# ---------------------------------------------------------------------------
# data -> objects


@dataclass
class BuiltScenario:
    system: System
    sequence: Sequence
    spec: ScenarioSpec
    handles: dict[str, list[int]] = field(default_factory=dict)
    initial_state: list | None = None


def build_scenario(spec: ScenarioSpec, dt_override: float | None = None) -> BuiltScenario:
    """Construct the System and Sequence described by a validated scenario."""
    r = _Resolver(spec)
    sys = System()
    atoms: dict[str, Atom] = {}
    levels: dict[str, Level] = {}

    def level(label, atom_name=None, where=""):
        if atom_name is not None:
            a = atoms[atom_name]
            if label not in [lv.label for lv in a.levels]:
                raise ScenarioValidationError(f"{where}: atom {atom_name!r} has no level {label!r}")
        if label not in levels:
            raise ScenarioValidationError(f"{where}: unknown level {label!r}")
        return levels[label]

    def atom(name, where):
        if name not in atoms:
            raise ScenarioValidationError(f"{where}: unknown atom {name!r}")
        return atoms[name]

    def vec(values, dim, where):
        return tuple(r.value(v, dim, f"{where}[{i}]") for i, v in enumerate(values))

    for i, a in enumerate(spec.atoms):
        w = f"atoms[{i}]({a.name})"
        if a.name in atoms:
            raise ScenarioValidationError(f"{w}: duplicate atom name")
        lvls = [levels.setdefault(lb, Level(lb)) for lb in a.levels]
        pos = vec(a.position, "length", f"{w}.position")
        if a.position_sigma is not None:
            pos = GaussianPosition(pos, vec(a.position_sigma, "length", f"{w}.position_sigma"))
        vel = (0.0, 0.0, 0.0)
        if a.temperature is not None:
            t = r.value(a.temperature, "temperature", f"{w}.temperature")
            vel = MaxwellBoltzmann(t) if t > 0 else vel
        pols = {r.value(k, "length", f"{w}.polarizabilities"): r.value(v, "polarizability", f"{w}.polarizabilities")
                for k, v in a.polarizabilities.items()}
        try:
            obj = Atom(lvls, species=a.species, mass=r.value(a.mass, "mass", f"{w}.mass"), position=pos,
                       velocity=vel, polarizabilities=pols, name=a.name)
        except ValueError as exc:
            raise ScenarioValidationError(f"{w}: {exc}") from None
        atoms[a.name] = obj
        sys.add_atom(obj)

    beams: dict[str, int] = {}
    arrays: dict[str, int] = {}
    for i, b in enumerate(spec.beams):
        w = f"beams[{i}]({b.name})"
        if b.name in beams:
            raise ScenarioValidationError(f"{w}: duplicate beam name")
        if isinstance(b, GaussianBeamSpec):
            pol = Polarization(tuple(_complex(x) for x in b.polarization)) if b.polarization else None
            obj = GaussianBeam(r.value(b.wavelength, "length", f"{w}.wavelength"),
                               r.value(b.waist, "length", f"{w}.waist"), r.value(b.power, "power", f"{w}.power"),
                               vec(b.focus, "length", f"{w}.focus"), b.axis, pol)
        else:
            obj = TweezerArray(
                r.value(b.wavelength, "length", f"{w}.wavelength"), r.value(b.waist, "length", f"{w}.waist"),
                [(r.value(t.frequency, "frequency", f"{w}.row_tones"), t.amplitude) for t in b.row_tones],
                [(r.value(t.frequency, "frequency", f"{w}.col_tones"), t.amplitude) for t in b.col_tones],
                power_per_amplitude2=r.value(b.power_per_amplitude2, "power", f"{w}.power_per_amplitude2"),
                row_calibration=r.value(b.row_calibration, "calibration", f"{w}.row_calibration"),
                col_calibration=r.value(b.col_calibration, "calibration", f"{w}.col_calibration"),
                origin=vec(b.origin, "length", f"{w}.origin"), coherent=b.coherent)
        beams[b.name] = sys.add_beam(obj, name=b.name)
        if isinstance(obj, TweezerArray):
            arrays[b.name] = beams[b.name]

    noise: dict[str, LaserPhaseNoiseModel] = {}
    for i, n in enumerate(spec.noise):
        w = f"noise[{i}]({n.name})"
        try:
            noise[n.name] = LaserPhaseNoiseModel(r.value(n.A_G, "psd", f"{w}.A_G"), r.value(n.f0, "frequency", f"{w}.f0"),
                                                 r.value(n.sigma, "frequency", f"{w}.sigma"),
                                                 r.value(n.A_pl, "psd", f"{w}.A_pl"), n.alpha)
        except ValueError as exc:
            raise ScenarioValidationError(f"{w}: {exc}") from None

    handles: dict[str, list[int]] = {}

    def register(name, hs, where):
        if name is None:
            return
        if name in handles or name in beams:
            raise ScenarioValidationError(f"{where}: duplicate node name {name!r}")
        handles[name] = list(hs) if isinstance(hs, list) else [hs]

    for i, p in enumerate(spec.processes):
        w = f"processes[{i}]({p.kind}{' ' + p.name if p.name else ''})"
        try:
            if isinstance(p, CouplingSpec):
                names = [p.atoms] if isinstance(p.atoms, str) else p.atoms
                alist = [atom(a, w) for a in names]
                for a in names:
                    level(p.lower, a, w), level(p.upper, a, w)
                if p.beam is not None and p.beam not in beams:
                    raise ScenarioValidationError(f"{w}: unknown beam {p.beam!r}")
                if p.noise is not None and p.noise not in noise:
                    raise ScenarioValidationError(f"{w}: unknown noise model {p.noise!r}")
                hs = sys.add_coupling(alist, levels[p.lower], levels[p.upper], r.value(p.rabi, "angular", f"{w}.rabi"),
                                      beam=beams.get(p.beam), active=p.active,
                                      noise=noise.get(p.noise) if p.noise else None, name=p.name)
                register(p.name, hs, w)
            elif isinstance(p, DetuningSpec):
                h = sys.add_detuning(atom(p.atom, w), level(p.level, p.atom, w),
                                     r.value(p.shift, "angular", f"{w}.shift"), pulsed=p.pulsed, name=p.name)
                register(p.name, h, w)
            elif isinstance(p, DecaySpec):
                h = sys.add_decay(atom(p.atom, w), level(p.upper, p.atom, w), level(p.lower, p.atom, w),
                                  r.value(p.rate, "angular", f"{w}.rate"), name=p.name)
                register(p.name, h, w)
            elif isinstance(p, DephasingSpec):
                h = sys.add_dephasing(atom(p.atom, w), [level(x, p.atom, w) for x in p.levels],
                                      r.value(p.rate, "angular", f"{w}.rate"), name=p.name)
                register(p.name, h, w)
            elif isinstance(p, InteractionSpec):
                a, b = (atom(x, w) for x in p.atoms)
                h = sys.add_interaction(a, b, level(p.levels[0], p.atoms[0], w), level(p.levels[1], p.atoms[1], w),
                                        r.value(p.strength, "angular", f"{w}.strength"), name=p.name)
                register(p.name, h, w)
            elif isinstance(p, VdwSpec):
                a, b = (atom(x, w) for x in p.atoms)
                h = sys.add_vdwinteraction(a, b, level(p.levels[0], p.atoms[0], w),
                                           level(p.levels[1], p.atoms[1], w), r.value(p.c6, "c6", f"{w}.c6"),
                                           name=p.name)
                register(p.name, h, w)
        except ModelError as exc:
            raise ScenarioValidationError(f"{w}: {exc}") from None

    for i, d in enumerate(spec.detectors):
        w = f"detectors[{i}]({d.name})"
        try:
            if isinstance(d, PopulationSpec):
                sys.add_detector(Population(atom(d.atom, w), level(d.level, d.atom, w), d.name))
            elif isinstance(d, CoherenceSpec):
                sys.add_detector(Coherence(atom(d.atom, w), level(d.levels[0], d.atom, w),
                                           level(d.levels[1], d.atom, w), d.name))
            elif isinstance(d, MotionSpec):
                sys.add_detector(Motion(atom(d.atom, w), d.name))
            else:
                if d.node in beams:
                    h = beams[d.node]
                elif d.node in handles and len(handles[d.node]) == 1:
                    h = handles[d.node][0]
                else:
                    raise ScenarioValidationError(f"{w}: field detector needs a beam or single-node name, "
                                                  f"got {d.node!r}")
                sys.add_detector(FieldDetector(h, d.name))
        except ModelError as exc:
            raise ScenarioValidationError(f"{w}: {exc}") from None

    for m in spec.maxoccupations:
        sys.add_maxoccupation(level(m.level, where="maxoccupations"), m.n)

    init = None
    if spec.initial_state is not None:
        if len(spec.initial_state) != len(spec.atoms):
            raise ScenarioValidationError("initial_state: needs one level per atom")
        init = [level(lb, a.name, "initial_state") for lb, a in zip(spec.initial_state, spec.atoms)]
        sys.initial_state = init

    sq = spec.sequence
    dt = dt_override if dt_override is not None else r.value(sq.dt, "time", "sequence.dt")
    if spec.run.dt is not None and dt_override is None:
        dt = r.value(spec.run.dt, "time", "run.dt")
    try:
        seq = Sequence(dt, sq.downsample, sq.strict)
    except SequenceError as exc:
        raise ScenarioValidationError(f"sequence: {exc}") from None

    def node_handles(ref, where):
        out = []
        for name in [ref] if isinstance(ref, str) else ref:
            if name not in handles:
                raise ScenarioValidationError(f"{where}: unknown node {name!r}")
            out.extend(handles[name])
        return out

    def array(name, where):
        if name not in arrays:
            raise ScenarioValidationError(f"{where}: unknown tweezer array {name!r}")
        return arrays[name]

    ramp_types = {"move_row": MoveRow, "move_col": MoveCol, "ramp_row": RampRow, "ramp_col": RampCol}
    set_types = {"freq_row": FreqRow, "freq_col": FreqCol, "ampl_row": AmplRow, "ampl_col": AmplCol}

    def instruction(ins: InstructionSpec, where):
        kind = next(k for k in type(ins).model_fields if getattr(ins, k) is not None)
        body = getattr(ins, kind)
        w = f"{where}.{kind}"
        if kind == "pulse":
            env = [_complex(x) for x in body.envelope] if body.envelope is not None else None
            return Pulse(node_handles(body.nodes, w), r.value(body.duration, "time", f"{w}.duration"), env,
                         body.interp, r.value(body.dt, "time", f"{w}.dt"))
        if kind == "wait":
            return Wait(r.value(body.duration, "time", f"{w}.duration"), r.value(body.dt, "time", f"{w}.dt"))
        if kind in ("on", "off"):
            return (On if kind == "on" else Off)(node_handles(body, w))
        if kind in ramp_types:
            dim = "frequency" if kind.startswith("move") else "dimensionless"
            return ramp_types[kind](array(body.array, w), body.index, r.value(body.delta, dim, f"{w}.delta"),
                                    r.value(body.duration, "time", f"{w}.duration"),
                                    r.value(body.dt, "time", f"{w}.dt"), body.substeps)
        if kind in set_types:
            dim = "frequency" if kind.startswith("freq") else "dimensionless"
            return set_types[kind](array(body.array, w), body.index, r.value(body.value, dim, f"{w}.value"))
        return Parallel(*[instruction(x, f"{w}[{j}]") for j, x in enumerate(body)])

    try:
        for i, ins in enumerate(sq.instructions):
            seq.append(instruction(ins, f"sequence.instructions[{i}]"))
    except SequenceError as exc:
        raise ScenarioValidationError(f"sequence: {exc}") from None
    return BuiltScenario(sys, seq, spec, handles, init)

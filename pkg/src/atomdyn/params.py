"""Shot-to-shot parameters and arithmetic expressions over them.

A :class:`Parameter` is one named physical quantity with a default and an
optional Gaussian spread. Parameters combine with numbers through ordinary
arithmetic into expression trees that are evaluated once per shot against a
name -> value assignment.
"""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np


class UnknownParameterError(KeyError):
    pass


class Expr:
    """Base class for parametric expression trees."""

    def evaluate(self, values: Mapping[str, float]) -> float:  # pragma: no cover - abstract
        raise NotImplementedError

    def parameters(self) -> Iterable["Parameter"]:  # pragma: no cover - abstract
        raise NotImplementedError

    def _bin(self, other, op, sym, swap=False):
        if not isinstance(other, (Expr, int, float, complex, np.number)):
            return NotImplemented
        return BinOp(op, sym, other, self) if swap else BinOp(op, sym, self, other)

    def __add__(self, o): return self._bin(o, operator.add, "+")
    def __radd__(self, o): return self._bin(o, operator.add, "+", True)
    def __sub__(self, o): return self._bin(o, operator.sub, "-")
    def __rsub__(self, o): return self._bin(o, operator.sub, "-", True)
    def __mul__(self, o): return self._bin(o, operator.mul, "*")
    def __rmul__(self, o): return self._bin(o, operator.mul, "*", True)
    def __truediv__(self, o): return self._bin(o, operator.truediv, "/")
    def __rtruediv__(self, o): return self._bin(o, operator.truediv, "/", True)
    def __pow__(self, o): return self._bin(o, operator.pow, "**")
    def __rpow__(self, o): return self._bin(o, operator.pow, "**", True)
    def __neg__(self): return Func(operator.neg, "-", self)
    def __pos__(self): return self


def _eval(x, values):
    return x.evaluate(values) if isinstance(x, Expr) else x


def _params(x):
    return x.parameters() if isinstance(x, Expr) else ()


class BinOp(Expr):
    __slots__ = ("op", "sym", "left", "right")

    def __init__(self, op: Callable, sym: str, left, right):
        self.op, self.sym, self.left, self.right = op, sym, left, right

    def evaluate(self, values):
        return self.op(_eval(self.left, values), _eval(self.right, values))

    def parameters(self):
        yield from _params(self.left)
        yield from _params(self.right)

    def __repr__(self):
        return f"({self.left!r} {self.sym} {self.right!r})"


class Func(Expr):
    __slots__ = ("fn", "name", "arg")

    def __init__(self, fn: Callable, name: str, arg):
        self.fn, self.name, self.arg = fn, name, arg

    def evaluate(self, values):
        return self.fn(_eval(self.arg, values))

    def parameters(self):
        yield from _params(self.arg)

    def __repr__(self):
        return f"{self.name}({self.arg!r})"


def _lift(fn: Callable, name: str) -> Callable:
    def wrapped(x):
        return Func(fn, name, x) if isinstance(x, Expr) else fn(x)
    wrapped.__name__ = name
    return wrapped


sqrt = _lift(np.sqrt, "sqrt")
exp = _lift(np.exp, "exp")
sin = _lift(np.sin, "sin")
cos = _lift(np.cos, "cos")
log = _lift(np.log, "log")
fabs = _lift(abs, "abs")

FUNCTIONS: dict[str, Callable] = {"sqrt": sqrt, "exp": exp, "sin": sin, "cos": cos, "log": log, "abs": fabs}


@dataclass(frozen=True, eq=False)
class Parameter(Expr):
    """A named quantity with default value and standard deviation (``std=0``: fixed)."""

    name: str
    default: float | None = None
    std: float = 0.0

    def __post_init__(self):
        if not self.name:
            raise ValueError("parameter name must be non-empty")
        if self.std < 0 or not math.isfinite(self.std):
            raise ValueError(f"parameter {self.name!r}: std must be finite and >= 0")

    def evaluate(self, values):
        try:
            return values[self.name]
        except KeyError:
            raise UnknownParameterError(f"no value for parameter {self.name!r}") from None

    def parameters(self):
        yield self

    def sample(self, rng: np.random.Generator | None) -> float:
        if self.default is None:
            raise UnknownParameterError(f"parameter {self.name!r} has no default and no override")
        if self.std > 0:
            if rng is None:
                raise ValueError(f"parameter {self.name!r} has std > 0 but no rng was supplied")
            return float(rng.normal(self.default, self.std))
        return self.default

    def __repr__(self):
        return f"Parameter({self.name!r}, {self.default!r}, std={self.std!r})"

    __hash__ = object.__hash__


def collect_parameters(objs: Iterable) -> dict[str, Parameter]:
    """Distinct parameters referenced by ``objs``; conflicting definitions of a name raise."""
    found: dict[str, Parameter] = {}
    for obj in objs:
        for p in _params(obj):
            prev = found.get(p.name)
            if prev is not None and prev is not p and (prev.default, prev.std) != (p.default, p.std):
                raise ValueError(f"parameter {p.name!r} defined twice with different default/std")
            found.setdefault(p.name, p)
    return found


def draw_assignment(params: Mapping[str, Parameter], overrides: Mapping[str, float] | None,
                    rng: np.random.Generator | None) -> dict[str, float]:
    """One shot's name -> value map.

    Parameters are drawn in sorted name order so the sequence of random
    numbers depends only on the parameter set, not on registration order.
    """
    overrides = dict(overrides or {})
    unknown = sorted(set(overrides) - set(params))
    if unknown:
        raise UnknownParameterError(f"override of unknown parameter(s): {', '.join(unknown)}")
    out: dict[str, float] = {}
    for name in sorted(params):
        out[name] = float(overrides[name]) if name in overrides else params[name].sample(rng)
    return out


def resolve_value(x, values: dict | None = None, rng: np.random.Generator | None = None):
    """Concrete value of a number, Parameter or expression.

    ``values`` holds overrides and earlier draws for this shot. A Parameter
    missing from it is drawn (or takes its default) and the result is stored
    back so later references in the same shot share the draw.
    """
    if not isinstance(x, Expr):
        if isinstance(x, (list, tuple)):
            return type(x)(resolve_value(v, values, rng) for v in x)
        return x
    if values is None:
        values = {}
    for p in x.parameters():
        if p.name not in values:
            values[p.name] = p.sample(rng)
    return x.evaluate(values)


def is_parametric(x) -> bool:
    return isinstance(x, Expr)

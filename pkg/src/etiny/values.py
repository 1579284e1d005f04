"""Runtime values, environments and traces shared by both semantics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .syntax import Builtin, Ident, Literal, Ref, Unit, pretty_lit


class EtinyError(Exception):
    """Base class for user-visible failures."""


class RuntimeFailure(EtinyError):
    pass


class NonSerializable(RuntimeFailure):
    """Raised when a non-base, non-reference value crosses tiers."""


class StuckTerm(RuntimeFailure):
    """A typed program should never reach this; signals an interpreter bug."""


@dataclass(frozen=True)
class VConst:
    value: Literal


@dataclass(frozen=True)
class VRef:
    ref: Ref


@dataclass
class VClosure:
    param: Ident
    env: "Env"
    body: object  # Expr


@dataclass
class VPartial:
    """A builtin constant applied to too few arguments (`+` needs two)."""

    op: str
    args: tuple


@dataclass
class VStruct:
    items: list  # of (name, value) in binding order, later bindings shadow
    dyn: Optional[Ref] = None

    def lookup(self, name: str):
        for n, v in reversed(self.items):
            if n == name:
                return v
        raise RuntimeFailure(f"no field {name!r} in structure")

    def bind(self, name: str, value) -> "VStruct":
        return VStruct(self.items + [(name, value)], self.dyn)


@dataclass
class VFunctor:
    env: "Env"
    param: Ident
    body: object  # ModExpr
    mixed: bool = False
    pending: tuple = ()  # collected arguments of a curried mixed functor


Value = Union[VConst, VRef, VClosure, VPartial]
ModValue = Union[VStruct, VFunctor]


TRUE = VConst(1)
UNIT_V = VConst(Unit())


class Env:
    """Persistent environment; extension returns a new env."""

    __slots__ = ("_parent", "_key", "_value")

    def __init__(self, parent: Optional["Env"] = None, key=None, value=None):
        self._parent = parent
        self._key = key
        self._value = value

    def bind(self, ident: Ident, value) -> "Env":
        e = Env(self, ident, value)
        return e

    def bind_all(self, pairs) -> "Env":
        e = self
        for k, v in pairs:
            e = e.bind(k, v)
        return e

    def lookup(self, ident: Ident):
        e = self
        while e is not None and e._key is not None:
            if e._key == ident:
                return e._value
            e = e._parent
        raise RuntimeFailure(f"unbound {ident.name!r} at runtime")

    def lookup_name(self, name: str):
        """Most recent binding with the given name part (any stamp)."""
        e = self
        while e is not None and e._key is not None:
            if e._key.name == name:
                return e._value
            e = e._parent
        raise RuntimeFailure(f"unbound {name!r} at runtime")

    def __contains__(self, ident: Ident) -> bool:
        e = self
        while e is not None and e._key is not None:
            if e._key == ident:
                return True
            e = e._parent
        return False


EMPTY_ENV = Env()


# --- Traces -------------------------------------------------------------------

Trace = tuple  # of Value


def pretty_value(v) -> str:
    match v:
        case VConst(x):
            return pretty_lit(x)
        case VRef(r):
            return f"&{r.render()}"
        case VClosure():
            return "<fun>"
        case VPartial(op, _):
            return f"<{op}>"
        case VFunctor():
            return "<functor>"
        case VStruct(items, _):
            inner = "; ".join(f"{n} = {pretty_value(x)}" for n, x in items)
            return f"struct {inner} end"
    return repr(v)


def pretty_trace(trace: Trace) -> str:
    return "; ".join(pretty_value(v) for v in trace)


# --- delta rules ----------------------------------------------------------------

IDENTITY_BUILTINS = {
    "serial^s", "serial^c", "int^s", "int^c", "fragment^s", "fragment^c",
}


def is_base_const(v) -> bool:
    """Constants of the base universe: what the wire may carry besides refs."""
    return isinstance(v, VConst) and isinstance(v.value, (int, str, Unit))


def inject_value(v):
    """Serialization across tiers: identity on base constants and references,
    failure on anything else."""
    if is_base_const(v) or isinstance(v, VRef):
        return v
    raise NonSerializable(f"cannot inject value {pretty_value(v)}")


def delta(op: str, args: tuple, deref=None):
    """Apply builtin `op` to `args`. Returns (value, trace-or-()).

    `deref` resolves references against a global environment where that is
    meaningful (compiled client; generated client programs).
    """
    if op == "print":
        (v,) = args
        return v, (v,)
    if op == "+":
        a, b = args
        if not (isinstance(a, VConst) and isinstance(a.value, int)):
            raise StuckTerm("+ applied to non-integer")
        if not (isinstance(b, VConst) and isinstance(b.value, int)):
            raise StuckTerm("+ applied to non-integer")
        return VConst(a.value + b.value), ()
    if op in IDENTITY_BUILTINS:
        (v,) = args
        if op == "fragment^c" and isinstance(v, VRef) and deref is not None:
            return deref(v.ref), ()
        return v, ()
    raise StuckTerm(f"no delta rule for {op!r}")


BUILTIN_ARITY = {"print": 1, "+": 2}
for _n in IDENTITY_BUILTINS:
    BUILTIN_ARITY[_n] = 1

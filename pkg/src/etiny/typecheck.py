"""Location-aware type system.

Expression typing is unification-based (algorithm W) with located
unification variables: a variable located at l only ever gets bound to a
type that is valid at l. Module typing follows the manifest-type system
with qualified accesses, applicative functors, strengthening and the
location-specific operations: specialization of module types toward a
concrete side, mixed functors and the two location relations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from . import syntax as s
from .locations import can_contain, can_use, within
from .syntax import (
    Builtin, DLet, DModule, DType, EApp, EConst, EFix, EFragment, EInjection,
    EQualVar, EVar, ELam, ELet, ELit, ERef, EFragCall, Ident, Loc, MApply,
    MConstraint, MFunctor, MPath, MRef, MStruct, MTFunctor, MTSig, PAccess,
    PApply, PVar, Program, QualHead, Scheme, SMod, SType, SVal, Span, TArrow,
    TConstr, TConv, TFragment, TUVar, TVar, Unit, pretty_modtype, pretty_type,
)

# --- Errors ------------------------------------------------------------------

LOCATION_VIOLATION = "LocationViolation"
UNBOUND = "Unbound"
MISMATCH = "Mismatch"
BAD_FUNCTOR_APP = "BadFunctorApp"
INJECTION_IN_MIXED_FUNCTOR = "InjectionInMixedFunctor"
ARITY_MISMATCH = "ArityMismatch"
NOT_A_SIGNATURE = "NotASignature"


class TypeCheckError(Exception):
    def __init__(self, kind: str, message: str, span: Optional[Span] = None):
        at = f"{span.line}:{span.col}: " if span else ""
        super().__init__(f"{at}{kind}: {message}")
        self.kind = kind
        self.message = message
        self.span = span


def _err(kind: str, message: str, span=None):
    raise TypeCheckError(kind, message, span)


# --- Builtin types and constants ------------------------------------------------

BUILTIN_TYPES = {"int": 0, "unit": 0, "string": 0, "serial": 0, "fragty": 0}

T_INT = TConstr((), Ident("int"))
T_UNIT = TConstr((), Ident("unit"))
T_STRING = TConstr((), Ident("string"))
T_SERIAL = TConstr((), Ident("serial"))
T_FRAGTY = TConstr((), Ident("fragty"))


def _mono(ty):
    return Scheme((), ty)


_A_CLIENT = TVar("a", Loc.CLIENT)

CONVERTERS = {
    "serial": _mono(TConv(T_SERIAL, T_SERIAL)),
    "int": _mono(TConv(T_INT, T_INT)),
    "fragment": Scheme((("a", Loc.CLIENT),), TConv(TFragment(_A_CLIENT), _A_CLIENT)),
}

# Server encoding / client decoding halves, per the well-behaved-converters
# hypothesis. fragment^c is deliberately weak; it only occurs in generated
# client code and in the target language.
_CONVERTER_HALVES = {
    "serial^s": _mono(TArrow(T_SERIAL, T_SERIAL)),
    "serial^c": _mono(TArrow(T_SERIAL, T_SERIAL)),
    "int^s": _mono(TArrow(T_INT, T_SERIAL)),
    "int^c": _mono(TArrow(T_SERIAL, T_INT)),
    "fragment^s": Scheme((("a", Loc.CLIENT),), TArrow(TFragment(_A_CLIENT), T_SERIAL)),
    "fragment^c": Scheme((("a", Loc.CLIENT),), TArrow(T_SERIAL, _A_CLIENT)),
}


def const_scheme(lit, loc: Loc) -> Scheme:
    if isinstance(lit, bool):
        raise TypeCheckError(MISMATCH, "no boolean constants")
    if isinstance(lit, int):
        return _mono(T_INT)
    if isinstance(lit, str):
        return _mono(T_STRING)
    if isinstance(lit, Unit):
        return _mono(T_UNIT)
    if isinstance(lit, Builtin):
        name = lit.name
        if name == "print":
            v = TVar("a", loc)
            return Scheme((("a", loc),), TArrow(v, v))
        if name == "+":
            return _mono(TArrow(T_INT, TArrow(T_INT, T_INT)))
        if name in _CONVERTER_HALVES:
            if name == "fragment^s" and loc is not Loc.SERVER:
                _err(LOCATION_VIOLATION, "fragment^s is a server constant")
            return _CONVERTER_HALVES[name]
    _err(UNBOUND, f"unknown constant {lit!r}")


# --- Environments -----------------------------------------------------------------
#
# Typing environments are signatures: ordered lists of SVal/SType/SMod items.

Env = tuple


def env_add(env: Env, item) -> Env:
    return env + (item,)


def env_add_all(env: Env, items) -> Env:
    return env + tuple(items)


def lookup_val(env: Env, ident: Ident):
    for item in reversed(env):
        if isinstance(item, SVal) and item.ident == ident:
            return item
    return None


def lookup_type(env: Env, ident: Ident):
    for item in reversed(env):
        if isinstance(item, SType) and item.ident == ident:
            return item
    return None


def lookup_mod(env: Env, ident: Ident):
    for item in reversed(env):
        if isinstance(item, SMod) and item.ident == ident:
            return item
    return None


# --- Substitutions on signatures -----------------------------------------------------


def subst_prefix(before_items, path, node):
    """Prefix the identifiers bound by `before_items` with `path` inside
    `node`: type heads t_i become path.t and module roots X_i become path.X.
    Realizes the substitution used by the qualified-access rules.
    """
    tysubst = {}
    modsubst = {}
    for it in before_items:
        if isinstance(it, SType):
            tysubst[it.ident] = it.ident.name
        elif isinstance(it, SMod):
            modsubst[it.ident] = it.ident.name

    def on_path(p):
        match p:
            case PVar(x):
                if x in modsubst:
                    return PAccess(path, modsubst[x])
                return p
            case PAccess(base, name):
                return PAccess(on_path(base), name)
            case PApply(f, a):
                return PApply(on_path(f), on_path(a))
        return p

    def on_type(t):
        match t:
            case TVar() | TUVar():
                return t
            case TArrow(a, b):
                return TArrow(on_type(a), on_type(b))
            case TFragment(b):
                return TFragment(on_type(b))
            case TConv(a, b):
                return TConv(on_type(a), on_type(b))
            case TConstr(args, head):
                args2 = tuple(on_type(a) for a in args)
                if isinstance(head, Ident) and head in tysubst:
                    return TConstr(args2, QualHead(path, tysubst[head]))
                if isinstance(head, QualHead):
                    return TConstr(args2, QualHead(on_path(head.path), head.name))
                return TConstr(args2, head)
        raise TypeError(t)

    def on_modtype(mt):
        match mt:
            case MTSig(items):
                return MTSig([on_item(it) for it in items])
            case MTFunctor(p, a, r, mixed):
                return MTFunctor(p, on_modtype(a), on_modtype(r), mixed)
        raise TypeError(mt)

    def on_item(it):
        match it:
            case SVal(loc, x, sc):
                return SVal(loc, x, Scheme(sc.quant, on_type(sc.body)))
            case SType(loc, x, params, body):
                return SType(loc, x, params, on_type(body) if body is not None else None)
            case SMod(loc, x, mt):
                return SMod(loc, x, on_modtype(mt))
        raise TypeError(it)

    if isinstance(node, Scheme):
        return Scheme(node.quant, on_type(node.body))
    if isinstance(node, (MTSig, MTFunctor)):
        return on_modtype(node)
    return on_type(node)


def subst_module_param(mt, param: Ident, arg_path):
    """Substitute the functor parameter by the argument path inside a result
    module type (applicative behaviour)."""

    def on_path(p):
        match p:
            case PVar(x) if x == param:
                return arg_path
            case PVar():
                return p
            case PAccess(base, name):
                return PAccess(on_path(base), name)
            case PApply(f, a):
                return PApply(on_path(f), on_path(a))
        return p

    def on_type(t):
        match t:
            case TConstr(args, QualHead(p, name)):
                return TConstr(tuple(on_type(a) for a in args), QualHead(on_path(p), name))
            case TConstr(args, head):
                return TConstr(tuple(on_type(a) for a in args), head)
            case TArrow(a, b):
                return TArrow(on_type(a), on_type(b))
            case TFragment(b):
                return TFragment(on_type(b))
            case TConv(a, b):
                return TConv(on_type(a), on_type(b))
            case _:
                return t

    def on_modtype(m):
        match m:
            case MTSig(items):
                return MTSig([on_item(it) for it in items])
            case MTFunctor(p, a, r, mixed):
                return MTFunctor(p, on_modtype(a), on_modtype(r), mixed)
        raise TypeError(m)

    def on_item(it):
        match it:
            case SVal(loc, x, sc):
                return SVal(loc, x, Scheme(sc.quant, on_type(sc.body)))
            case SType(loc, x, params, body):
                return SType(loc, x, params, on_type(body) if body is not None else None)
            case SMod(loc, x, mt):
                return SMod(loc, x, on_modtype(mt))
        raise TypeError(it)

    return on_modtype(mt)


def param_occurs(mt, param: Ident) -> bool:
    found = False

    def on_path(p):
        nonlocal found
        match p:
            case PVar(x):
                if x == param:
                    found = True
            case PAccess(base, _):
                on_path(base)
            case PApply(f, a):
                on_path(f)
                on_path(a)

    def on_type(t):
        match t:
            case TConstr(args, head):
                for a in args:
                    on_type(a)
                if isinstance(head, QualHead):
                    on_path(head.path)
            case TArrow(a, b) | TConv(a, b):
                on_type(a)
                on_type(b)
            case TFragment(b):
                on_type(b)
            case _:
                pass

    def on_modtype(m):
        match m:
            case MTSig(items):
                for it in items:
                    match it:
                        case SVal(_, _, sc):
                            on_type(sc.body)
                        case SType(_, _, _, body):
                            if body is not None:
                                on_type(body)
                        case SMod(_, _, inner):
                            on_modtype(inner)
            case MTFunctor(_, a, r, _):
                on_modtype(a)
                on_modtype(r)

    on_modtype(mt)
    return found


# --- Specialization and strengthening ----------------------------------------------


def _relocate_base_tyvars(node, to: Loc):
    """Rewrite the locations of base-located type variables and type
    parameters to `to` (specialization acts as the textual substitution
    b -> l on base declarations, Prop. 4.2)."""

    def on_type(t):
        match t:
            case TVar(n, l):
                return TVar(n, to if l is Loc.BASE else l)
            case TArrow(a, b):
                return TArrow(on_type(a), on_type(b))
            case TConv(a, b):
                return TConv(on_type(a), on_type(b))
            case TFragment(b):
                return TFragment(on_type(b))
            case TConstr(args, head):
                return TConstr(tuple(on_type(a) for a in args), head)
            case _:
                return t

    def on_params(params):
        return tuple((n, to if l is Loc.BASE else l) for n, l in params)

    match node:
        case Scheme(q, body):
            return Scheme(on_params(q), on_type(body))
        case tuple():
            return on_params(node)
        case _:
            return on_type(node)


def specialize(mt, frm: Loc, to: Loc):
    """Rewrite a module type declared on `frm` for use at `to`.

    No effect toward base or mixed. Toward a concrete side, components
    usable там are kept and relabeled, others are dropped; mixed functors
    specialize only their result, plain functors both sides.
    """
    if to in (Loc.BASE, Loc.MIXED):
        return mt
    match mt:
        case MTSig(items):
            out = []
            for it in items:
                match it:
                    case SVal(loc, x, sc):
                        if can_use(loc, to):
                            sc2 = _relocate_base_tyvars(sc, to) if loc is Loc.BASE else sc
                            out.append(SVal(to, x, sc2))
                    case SType(loc, x, params, body):
                        if can_use(loc, to):
                            if loc is Loc.BASE:
                                params = _relocate_base_tyvars(params, to)
                                body = _relocate_base_tyvars(body, to) if body is not None else None
                            out.append(SType(to, x, params, body))
                    case SMod(loc, x, inner):
                        if can_use(loc, to):
                            out.append(SMod(to, x, specialize(inner, loc, to)))
            return MTSig(out)
        case MTFunctor(p, a, r, mixed=True):
            return MTFunctor(p, a, specialize(r, Loc.MIXED, to), True)
        case MTFunctor(p, a, r, mixed=False):
            return MTFunctor(p, specialize(a, frm, to), specialize(r, frm, to), False)
    raise TypeError(mt)


def strengthen(mt, path):
    """Add manifest equations pointing at `path` to every type component;
    functor bodies are strengthened at path(X) (applicative functors)."""
    match mt:
        case MTSig(items):
            out = []
            for it in items:
                match it:
                    case SType(loc, x, params, _):
                        args = tuple(TVar(n, l) for n, l in params)
                        out.append(SType(loc, x, params, TConstr(args, QualHead(path, x.name))))
                    case SMod(loc, x, inner):
                        out.append(SMod(loc, x, strengthen(inner, PAccess(path, x.name))))
                    case _:
                        out.append(it)
            return MTSig(out)
        case MTFunctor(p, a, r, mixed):
            return MTFunctor(p, a, strengthen(r, PApply(path, PVar(p))), mixed)
    raise TypeError(mt)


def locs_of(mt) -> set:
    out = set()

    def go(m):
        match m:
            case MTSig(items):
                for it in items:
                    out.add(it.loc)
                    if isinstance(it, SMod):
                        go(it.modtype)
            case MTFunctor(_, a, r, mixed):
                if mixed:
                    out.add(Loc.MIXED)
                go(a)
                go(r)

    go(mt)
    return out


# --- The checker ----------------------------------------------------------------------


class Checker:
    """One inference session; owns the unification state."""

    def __init__(self) -> None:
        self._next_uvar = 0
        self.subst: dict = {}
        self.uvar_loc: dict = {}

    # unification plumbing -------------------------------------------------

    def fresh_uvar(self, loc: Loc) -> TUVar:
        u = TUVar(self._next_uvar)
        self._next_uvar += 1
        self.uvar_loc[u.id] = loc
        return u

    def resolve(self, t):
        while isinstance(t, TUVar) and t.id in self.subst:
            t = self.subst[t.id]
        return t

    def deep_resolve(self, t):
        t = self.resolve(t)
        match t:
            case TArrow(a, b):
                return TArrow(self.deep_resolve(a), self.deep_resolve(b))
            case TConv(a, b):
                return TConv(self.deep_resolve(a), self.deep_resolve(b))
            case TFragment(b):
                return TFragment(self.deep_resolve(b))
            case TConstr(args, head):
                return TConstr(tuple(self.deep_resolve(a) for a in args), head)
            case _:
                return t

    def uvars_of(self, t, acc=None) -> set:
        acc = set() if acc is None else acc
        t = self.resolve(t)
        match t:
            case TUVar(i):
                acc.add(i)
            case TArrow(a, b) | TConv(a, b):
                self.uvars_of(a, acc)
                self.uvars_of(b, acc)
            case TFragment(b):
                self.uvars_of(b, acc)
            case TConstr(args, _):
                for a in args:
                    self.uvars_of(a, acc)
        return acc

    def instantiate(self, sc: Scheme, loc: Loc):
        if not sc.quant:
            return sc.body
        mapping = {name: self.fresh_uvar(l) for name, l in sc.quant}

        def go(t):
            match t:
                case TVar(n, _l) if n in mapping:
                    return mapping[n]
                case TArrow(a, b):
                    return TArrow(go(a), go(b))
                case TConv(a, b):
                    return TConv(go(a), go(b))
                case TFragment(b):
                    return TFragment(go(b))
                case TConstr(args, head):
                    return TConstr(tuple(go(a) for a in args), head)
                case _:
                    return t

        return go(sc.body)

    def close(self, env: Env, ty) -> Scheme:
        """Generalize: quantify the unification variables free in ty but not
        in the environment."""
        ty = self.deep_resolve(ty)
        env_uvars: set = set()
        for item in env:
            if isinstance(item, SVal):
                self.uvars_of(item.scheme.body, env_uvars)
        own = self.uvars_of(ty)
        gen = [u for u in sorted(own) if u not in env_uvars]
        if not gen:
            return Scheme((), ty)
        used = _tvar_names(ty)
        quant = []
        for u in gen:
            name = _fresh_name(used)
            used.add(name)
            loc = self.uvar_loc[u]
            quant.append((name, loc))
            self.subst[u] = TVar(name, loc)
        return Scheme(tuple(quant), self.deep_resolve(ty))

    # type well-formedness ---------------------------------------------------

    def wf_type(self, env: Env, loc: Loc, t, span=None) -> None:
        """Type validity at a core location; fragments only on the server,
        converters only on the server, constructor arguments at their
        parameter locations."""
        t = self.resolve(t)
        match t:
            case TVar(n, l):
                if not can_use(l, loc):
                    _err(LOCATION_VIOLATION, f"type variable '{n}@{l} not usable at {loc}", span)
            case TUVar(i):
                l = self.uvar_loc[i]
                if not can_use(l, loc):
                    _err(LOCATION_VIOLATION, f"inferred type variable at {l} not usable at {loc}", span)
            case TArrow(a, b):
                self.wf_type(env, loc, a, span)
                self.wf_type(env, loc, b, span)
            case TFragment(b):
                if loc is not Loc.SERVER:
                    _err(LOCATION_VIOLATION, f"fragment types are server types, not {loc}", span)
                self.wf_type(env, Loc.CLIENT, b, span)
            case TConv(a, b):
                if loc is not Loc.SERVER:
                    _err(LOCATION_VIOLATION, f"converter types are server types, not {loc}", span)
                self.wf_type(env, Loc.SERVER, a, span)
                self.wf_type(env, Loc.CLIENT, b, span)
            case TConstr(args, head):
                item = self._head_item(env, loc, head, span)
                if item is None:
                    if len(args) != 0:
                        _err(ARITY_MISMATCH, f"{_head_name(head)} takes no parameters", span)
                    return
                if len(args) != len(item.params):
                    _err(
                        ARITY_MISMATCH,
                        f"{_head_name(head)} expects {len(item.params)} parameter(s), got {len(args)}",
                        span,
                    )
                for a, (_, ploc) in zip(args, item.params):
                    self.wf_type(env, ploc, a, span)
            case _:
                raise TypeError(t)

    def _head_item(self, env: Env, loc: Loc, head, span=None):
        """Resolve a constructor head to its SType item (None for builtins),
        checking the use-site location."""
        if isinstance(head, Ident):
            if head.name in BUILTIN_TYPES and lookup_type(env, head) is None:
                return None
            item = lookup_type(env, head)
            if item is None:
                _err(UNBOUND, f"unbound type {head.name}", span)
            if not can_use(item.loc, loc):
                _err(
                    LOCATION_VIOLATION,
                    f"type {head.name} is on {item.loc}, not usable at {loc}",
                    span,
                )
            return item
        mt = self.type_path(env, loc, head.path, span, strengthened=False)
        if not isinstance(mt, MTSig):
            _err(NOT_A_SIGNATURE, f"{s.pretty_path(head.path)} is not a structure", span)
        found = None
        for i, it in enumerate(mt.items):
            if isinstance(it, SType) and it.ident.name == head.name:
                found = (i, it)
        if found is None:
            _err(UNBOUND, f"no type {head.name} in {s.pretty_path(head.path)}", span)
        i, it = found
        if not can_use(it.loc, loc):
            _err(
                LOCATION_VIOLATION,
                f"type {s.pretty_path(head.path)}.{head.name} is on {it.loc}, not usable at {loc}",
                span,
            )
        return subst_prefix(mt.items[:i], head.path, it) if i else it

    # normalization / equivalence ------------------------------------------------

    def unfold_once(self, env: Env, loc: Loc, t):
        """Unfold a manifest constructor head once; None if opaque."""
        if not isinstance(t, TConstr):
            return None
        head = t.head
        try:
            item = self._head_item(env, loc, head)
        except TypeCheckError:
            return None
        if item is None or item.body is None:
            return None
        if len(item.params) != len(t.args):
            return None
        mapping = {n: a for (n, _), a in zip(item.params, t.args)}

        def go(x):
            match x:
                case TVar(n, _) if n in mapping:
                    return mapping[n]
                case TArrow(a, b):
                    return TArrow(go(a), go(b))
                case TConv(a, b):
                    return TConv(go(a), go(b))
                case TFragment(b):
                    return TFragment(go(b))
                case TConstr(args, h):
                    return TConstr(tuple(go(a) for a in args), h)
                case _:
                    return x

        return go(item.body)

    def normalize(self, env: Env, loc: Loc, t):
        t = self.resolve(t)
        seen: list = []
        while isinstance(t, TConstr):
            nxt = self.unfold_once(env, loc, t)
            if nxt is None:
                break
            nxt = self.resolve(nxt)
            if nxt == t or any(nxt == prev for prev in seen):
                break  # self-manifest from strengthening; treat as opaque
            seen.append(t)
            t = nxt
            if len(seen) > 100:
                _err(MISMATCH, f"cyclic type abbreviation at {pretty_type(t)}")
        return t

    def equiv_type(self, env: Env, loc: Loc, t1, t2) -> bool:
        t1 = self.normalize(env, loc, t1)
        t2 = self.normalize(env, loc, t2)
        match (t1, t2):
            case (TVar(n1, l1), TVar(n2, l2)):
                return n1 == n2 and l1 == l2
            case (TUVar(i), TUVar(j)):
                return i == j
            case (TArrow(a1, b1), TArrow(a2, b2)):
                return self.equiv_type(env, loc, a1, a2) and self.equiv_type(env, loc, b1, b2)
            case (TFragment(b1), TFragment(b2)):
                return self.equiv_type(env, Loc.CLIENT, b1, b2)
            case (TConv(a1, b1), TConv(a2, b2)):
                return self.equiv_type(env, Loc.SERVER, a1, a2) and self.equiv_type(
                    env, Loc.CLIENT, b1, b2
                )
            case (TConstr(args1, h1), TConstr(args2, h2)):
                if not _heads_equal(h1, h2):
                    return False
                if len(args1) != len(args2):
                    return False
                locs = self._param_locs(env, loc, h1, len(args1))
                return all(
                    self.equiv_type(env, pl, a1, a2)
                    for a1, a2, pl in zip(args1, args2, locs)
                )
            case _:
                return False

    def _param_locs(self, env: Env, loc: Loc, head, n: int):
        try:
            item = self._head_item(env, loc, head)
        except TypeCheckError:
            item = None
        if item is None or len(item.params) != n:
            return [loc] * n
        return [pl for _, pl in item.params]

    def equiv_scheme(self, env: Env, loc: Loc, s1: Scheme, s2: Scheme) -> bool:
        if len(s1.quant) != len(s2.quant):
            return False
        fresh = []
        for i, ((_, l1), (_, l2)) in enumerate(zip(s1.quant, s2.quant)):
            if l1 != l2:
                return False
            fresh.append(TVar(f"!q{i}", l1))
        b1 = _rename_tvars(s1.body, {n: v for (n, _), v in zip(s1.quant, fresh)})
        b2 = _rename_tvars(s2.body, {n: v for (n, _), v in zip(s2.quant, fresh)})
        return self.equiv_type(env, loc, b1, b2)

    # unification -------------------------------------------------------------------

    def unify(self, env: Env, loc: Loc, t1, t2, span=None) -> None:
        t1 = self.resolve(t1)
        t2 = self.resolve(t2)
        if isinstance(t1, TUVar) and isinstance(t2, TUVar):
            if t1.id == t2.id:
                return
            l1, l2 = self.uvar_loc[t1.id], self.uvar_loc[t2.id]
            if can_use(l2, l1):
                self.subst[t1.id] = t2
            elif can_use(l1, l2):
                self.subst[t2.id] = t1
            else:
                _err(
                    LOCATION_VIOLATION,
                    f"cannot unify type variables located at {l1} and {l2}",
                    span,
                )
            return
        if isinstance(t1, TUVar):
            self._bind(env, t1, t2, span)
            return
        if isinstance(t2, TUVar):
            self._bind(env, t2, t1, span)
            return
        match (t1, t2):
            case (TVar(n1, l1), TVar(n2, l2)) if n1 == n2 and l1 == l2:
                return
            case (TArrow(a1, b1), TArrow(a2, b2)):
                self.unify(env, loc, a1, a2, span)
                self.unify(env, loc, b1, b2, span)
                return
            case (TFragment(b1), TFragment(b2)):
                self.unify(env, Loc.CLIENT, b1, b2, span)
                return
            case (TConv(a1, b1), TConv(a2, b2)):
                self.unify(env, Loc.SERVER, a1, a2, span)
                self.unify(env, Loc.CLIENT, b1, b2, span)
                return
        # unfold manifests fully before comparing constructors
        n1 = self.normalize(env, loc, t1) if isinstance(t1, TConstr) else t1
        n2 = self.normalize(env, loc, t2) if isinstance(t2, TConstr) else t2
        if n1 != t1 or n2 != t2:
            self.unify(env, loc, n1, n2, span)
            return
        match (t1, t2):
            case (TConstr(args1, h1), TConstr(args2, h2)) if _heads_equal(h1, h2) and len(
                args1
            ) == len(args2):
                locs = self._param_locs(env, loc, h1, len(args1))
                for a1, a2, pl in zip(args1, args2, locs):
                    self.unify(env, pl, a1, a2, span)
                return
        _err(
            MISMATCH,
            f"cannot unify {pretty_type(self.deep_resolve(t1))} with "
            f"{pretty_type(self.deep_resolve(t2))}",
            span,
        )

    def _bind(self, env: Env, u: TUVar, t, span=None) -> None:
        t_res = self.deep_resolve(t)
        if isinstance(t_res, TUVar):
            self.unify(env, self.uvar_loc[u.id], u, t_res, span)
            return
        if u.id in self.uvars_of(t_res):
            _err(MISMATCH, f"cyclic type {pretty_type(t_res)}", span)
        self.wf_type(env, self.uvar_loc[u.id], t_res, span)
        self.subst[u.id] = t_res

    # expressions ----------------------------------------------------------------------

    def type_expr(self, env: Env, loc: Loc, e):
        if loc is Loc.MIXED:
            raise ValueError("expressions are typed at core locations only")
        match e:
            case EConst(v):
                return self.instantiate(const_scheme(v, loc), loc)
            case ELit():
                _err(MISMATCH, "value literals only occur in generated programs", e.span)
            case EVar(x):
                item = lookup_val(env, x)
                if item is None:
                    _err(UNBOUND, f"unbound variable {x.name}", e.span)
                if not can_use(item.loc, loc):
                    _err(
                        LOCATION_VIOLATION,
                        f"{x.name} is bound on {item.loc}, not usable at {loc}",
                        e.span,
                    )
                return self.instantiate(item.scheme, loc)
            case EQualVar(p, name):
                mt = self.type_path(env, loc, p, e.span)
                if not isinstance(mt, MTSig):
                    _err(NOT_A_SIGNATURE, f"{s.pretty_path(p)} is not a structure", e.span)
                found = None
                for i, it in enumerate(mt.items):
                    if isinstance(it, SVal) and it.ident.name == name:
                        found = (i, it)
                if found is None:
                    _err(UNBOUND, f"no value {name} in {s.pretty_path(p)}", e.span)
                i, it = found
                if not can_use(it.loc, loc):
                    _err(
                        LOCATION_VIOLATION,
                        f"{s.pretty_path(p)}.{name} is on {it.loc}, not usable at {loc}",
                        e.span,
                    )
                sc = subst_prefix(mt.items[:i], p, it.scheme) if i else it.scheme
                return self.instantiate(sc, loc)
            case EFix():
                t1 = self.fresh_uvar(loc)
                t2 = self.fresh_uvar(loc)
                f = TArrow(t1, t2)
                return TArrow(TArrow(f, f), f)
            case EApp(fn, arg):
                tf = self.type_expr(env, loc, fn)
                ta = self.type_expr(env, loc, arg)
                beta = self.fresh_uvar(loc)
                self.unify(env, loc, tf, TArrow(ta, beta), e.span)
                return beta
            case ELam(p, body):
                alpha = self.fresh_uvar(loc)
                env2 = env_add(env, SVal(loc, p, _mono(alpha)))
                tb = self.type_expr(env2, loc, body)
                return TArrow(alpha, tb)
            case ELet(x, bound, body):
                tb = self.type_expr(env, loc, bound)
                sc = self.close(env, tb)
                env2 = env_add(env, SVal(loc, x, sc))
                return self.type_expr(env2, loc, body)
            case EFragment(body, _):
                if loc is not Loc.SERVER:
                    _err(
                        LOCATION_VIOLATION,
                        "fragments can only be applied on the server",
                        e.span,
                    )
                tb = self.type_expr(env, Loc.CLIENT, body)
                return TFragment(tb)
            case EInjection(target, conv):
                if loc is not Loc.CLIENT:
                    _err(
                        LOCATION_VIOLATION,
                        "injections can only be applied on the client",
                        e.span,
                    )
                if conv not in CONVERTERS:
                    _err(UNBOUND, f"unknown converter {conv}", e.span)
                ct = self.instantiate(CONVERTERS[conv], Loc.SERVER)
                ts = self.fresh_uvar(Loc.SERVER)
                tc = self.fresh_uvar(Loc.CLIENT)
                self.unify(env, Loc.SERVER, ct, TConv(ts, tc), e.span)
                tt = self.type_expr(env, Loc.SERVER, target)
                self.unify(env, Loc.SERVER, tt, ts, e.span)
                return tc
            case ERef() | EFragCall():
                _err(MISMATCH, "target-language form in source program", e.span)
        raise TypeError(e)

    # paths and modules -------------------------------------------------------------------

    def type_path(self, env: Env, mloc: Loc, p, span=None, strengthened: bool = True):
        """Type a module path. The raw (unstrengthened) form is used when
        resolving type heads, so that manifest unfolding reaches the real
        definitions instead of the self-referential strengthened aliases."""
        mt = self._raw_path(env, mloc, p, span)
        return strengthen(mt, p) if strengthened else mt

    def _raw_path(self, env: Env, mloc: Loc, p, span=None):
        match p:
            case PVar(x):
                item = lookup_mod(env, x)
                if item is None:
                    _err(UNBOUND, f"unbound module {x.name}", span)
                if not can_use(item.loc, mloc):
                    _err(
                        LOCATION_VIOLATION,
                        f"module {x.name} is on {item.loc}, not usable at {mloc}",
                        span,
                    )
                return specialize(item.modtype, item.loc, mloc)
            case PAccess(base, name):
                mt = self._raw_path(env, mloc, base, span)
                if not isinstance(mt, MTSig):
                    _err(NOT_A_SIGNATURE, f"{s.pretty_path(base)} is not a structure", span)
                found = None
                for i, it in enumerate(mt.items):
                    if isinstance(it, SMod) and it.ident.name == name:
                        found = (i, it)
                if found is None:
                    _err(UNBOUND, f"no module {name} in {s.pretty_path(base)}", span)
                i, it = found
                if not can_use(it.loc, mloc):
                    _err(
                        LOCATION_VIOLATION,
                        f"{s.pretty_path(base)}.{name} is on {it.loc}, not usable at {mloc}",
                        span,
                    )
                inner = subst_prefix(mt.items[:i], base, it.modtype) if i else it.modtype
                return specialize(inner, it.loc, mloc)
            case PApply(pf, pa):
                mtf = self._raw_path(env, mloc, pf, span)
                if not isinstance(mtf, MTFunctor):
                    _err(BAD_FUNCTOR_APP, f"{s.pretty_path(pf)} is not a functor", span)
                arg_loc = Loc.MIXED if mtf.mixed else mloc
                if mtf.mixed:
                    self._check_mixed_arg_root(env, pa, mloc, span)
                mta = self.type_path(env, arg_loc, pa, span)
                self.subtype(env, arg_loc, mta, mtf.argty, span)
                return subst_module_param(mtf.resty, mtf.param, pa)
        raise TypeError(p)

    def _check_mixed_arg_root(self, env: Env, path, mloc: Loc, span) -> None:
        if not can_use(Loc.MIXED, mloc):
            _err(
                LOCATION_VIOLATION,
                f"mixed functor applications are not available at {mloc}",
                span,
            )
        root = path
        while isinstance(root, (PAccess, PApply)):
            root = root.base if isinstance(root, PAccess) else root.func
        root_item = lookup_mod(env, root.ident)
        if root_item is None:
            _err(UNBOUND, f"unbound module {root.ident.name}", span)
        if root_item.loc is not Loc.MIXED:
            _err(
                BAD_FUNCTOR_APP,
                f"mixed functor applied to a non-mixed module ({root_item.loc})",
                span,
            )

    def type_module(self, env: Env, mloc: Loc, m):
        match m:
            case MPath(p):
                return self.type_path(env, mloc, p, m.span)
            case MStruct(items, _):
                sig_items = []
                env2 = env
                for d in items:
                    item = self.type_decl(env2, mloc, d)
                    env2 = env_add(env2, item)
                    sig_items.append(item)
                return MTSig(sig_items)
            case MConstraint(body, mt):
                self.wf_modtype(env, mloc, mt, m.span)
                actual = self.type_module(env, mloc, body)
                self.subtype(env, mloc, actual, mt, m.span)
                return mt
            case MFunctor(p, argty, body, mixed=False):
                if mloc is Loc.MIXED:
                    _err(
                        BAD_FUNCTOR_APP,
                        "plain functors live on core locations; use functor%mixed",
                        m.span,
                    )
                self.wf_modtype(env, mloc, argty, m.span)
                env2 = env_add(env, SMod(mloc, p, argty))
                resty = self.type_module(env2, mloc, body)
                return MTFunctor(p, argty, resty, False)
            case MFunctor(p, argty, body, mixed=True):
                if mloc is not Loc.MIXED:
                    _err(BAD_FUNCTOR_APP, "mixed functors only appear in mixed modules", m.span)
                self.wf_modtype(env, Loc.MIXED, argty, m.span)
                env2 = env_add(env, SMod(Loc.MIXED, p, argty))
                resty = self.type_module(env2, Loc.MIXED, body)
                self._check_mixed_functor_injections(env, body, m.span)
                return MTFunctor(p, argty, resty, True)
            case MApply(f, a):
                mtf = self.type_module(env, mloc, f)
                if not isinstance(mtf, MTFunctor):
                    _err(BAD_FUNCTOR_APP, "application of a non-functor", m.span)
                if mtf.mixed:
                    return self._type_mixed_apply(env, mloc, mtf, a, m.span)
                mta = self.type_module(env, mloc, a)
                self.subtype(env, mloc, mta, mtf.argty, m.span)
                if isinstance(a, MPath):
                    return subst_module_param(mtf.resty, mtf.param, a.path)
                if param_occurs(mtf.resty, mtf.param):
                    _err(
                        BAD_FUNCTOR_APP,
                        "functor result mentions its parameter; apply it to a named module",
                        m.span,
                    )
                return mtf.resty
            case MRef() | s.MFragMod():
                _err(MISMATCH, "target-language module form in source program", m.span)
        raise TypeError(m)

    def _type_mixed_apply(self, env: Env, mloc: Loc, mtf, arg, span):
        if not isinstance(arg, MPath):
            _err(
                BAD_FUNCTOR_APP,
                "a mixed functor argument must be a module bound by module%mixed",
                span,
            )
        self._check_mixed_arg_root(env, arg.path, mloc, span)
        mta = self.type_module(env, Loc.MIXED, arg)
        self.subtype(env, Loc.MIXED, mta, mtf.argty, span)
        return subst_module_param(mtf.resty, mtf.param, arg.path)

    def _check_mixed_functor_injections(self, outer_env: Env, body, span) -> None:
        for inj in s.collect_injections(body, only_client_decls=True):
            try:
                self.type_expr(outer_env, Loc.CLIENT, inj)
            except TypeCheckError as exc:
                _err(
                    INJECTION_IN_MIXED_FUNCTOR,
                    "injections inside a mixed functor may only mention bindings "
                    f"from outside the functor ({exc.message})",
                    span or exc.span,
                )

    def type_decl(self, env: Env, mloc: Loc, d):
        match d:
            case DLet(loc, x, e):
                if not can_contain(mloc, loc):
                    _err(
                        LOCATION_VIOLATION,
                        f"a {mloc} structure cannot contain a {loc} value",
                        d.span,
                    )
                ty = self.type_expr(env, loc, e)
                return SVal(loc, x, self.close(env, ty))
            case DType(loc, x, params, body):
                if not can_contain(mloc, loc):
                    _err(
                        LOCATION_VIOLATION,
                        f"a {mloc} structure cannot contain a {loc} type",
                        d.span,
                    )
                if body is not None:
                    self.wf_type(env, loc, body, d.span)
                return SType(loc, x, params, body)
            case DModule(loc, x, body):
                if not can_contain(mloc, loc):
                    _err(
                        LOCATION_VIOLATION,
                        f"a {mloc} structure cannot contain a {loc} module",
                        d.span,
                    )
                mt = self.type_module(env, loc, body)
                for l in locs_of(mt):
                    if not (can_contain(loc, l) or can_use(l, loc)):
                        _err(
                            LOCATION_VIOLATION,
                            f"a {loc} module binding cannot hold components on {l}",
                            d.span,
                        )
                return SMod(loc, x, mt)
        raise TypeError(d)

    # module types ---------------------------------------------------------------

    def wf_modtype(self, env: Env, mloc: Loc, mt, span=None) -> None:
        match mt:
            case MTSig(items):
                env2 = env
                for it in items:
                    match it:
                        case SVal(loc, _, sc):
                            if not can_contain(mloc, loc):
                                _err(LOCATION_VIOLATION, f"{loc} value in a {mloc} signature", span)
                            self.wf_type(env2, loc, sc.body, span)
                        case SType(loc, _, params, body):
                            if not can_contain(mloc, loc):
                                _err(LOCATION_VIOLATION, f"{loc} type in a {mloc} signature", span)
                            if body is not None:
                                self.wf_type(env2, loc, body, span)
                        case SMod(loc, _, inner):
                            if not can_contain(mloc, loc):
                                _err(LOCATION_VIOLATION, f"{loc} module in a {mloc} signature", span)
                            self.wf_modtype(env2, loc, inner, span)
                            for l in locs_of(inner):
                                if not (can_contain(loc, l) or can_use(l, loc)):
                                    _err(
                                        LOCATION_VIOLATION,
                                        f"a {loc} module cannot hold components on {l}",
                                        span,
                                    )
                    env2 = env_add(env2, it)
            case MTFunctor(p, a, r, mixed):
                inner_loc = Loc.MIXED if mixed else mloc
                self.wf_modtype(env, inner_loc, a, span)
                env2 = env_add(env, SMod(inner_loc, p, a))
                self.wf_modtype(env2, mloc, r, span)
            case _:
                raise TypeError(mt)

    # subtyping ------------------------------------------------------------------

    def subtype(self, env: Env, mloc: Loc, m1, m2, span=None) -> None:
        match (m1, m2):
            case (MTSig(items1), MTSig(items2)):
                env2 = env_add_all(env, items1)
                # the supertype's internal references must point at the
                # subtype's components for the per-item checks
                renaming = {}
                for it2 in items2:
                    it1 = _find_matching(items1, it2)
                    if it1 is not None and isinstance(it2, (SType, SMod)):
                        renaming[it2.ident] = it1.ident
                for it2 in items2:
                    it1 = _find_matching(items1, it2)
                    if it1 is None:
                        _err(
                            MISMATCH,
                            f"missing component {it2.ident.name} required by the signature",
                            span,
                        )
                    self._subtype_item(env2, mloc, it1, _rename_idents(it2, renaming), span)
            case (MTFunctor(p1, a1, r1, x1), MTFunctor(p2, a2, r2, x2)):
                if x1 != x2:
                    _err(MISMATCH, "mixed and plain functor types are incompatible", span)
                floc = Loc.MIXED if x1 else mloc
                self.subtype(env, floc, a2, a1, span)
                env2 = env_add(env, SMod(floc, p1, a2))
                r2s = subst_module_param(r2, p2, PVar(p1)) if p1 != p2 else r2
                self.subtype(env2, floc, r1, r2s, span)
            case _:
                _err(MISMATCH, "structure and functor types are incompatible", span)

    def _subtype_item(self, env: Env, mloc: Loc, it1, it2, span) -> None:
        l1, l2 = it1.loc, it2.loc
        if not within(mloc, l1, l2):
            _err(
                LOCATION_VIOLATION,
                f"component {it2.ident.name}: {l1} does not refine {l2} inside {mloc}",
                span,
            )
        match (it1, it2):
            case (SVal(_, _, sc1), SVal(_, _, sc2)):
                if not self.equiv_scheme(env, l2, sc1, sc2):
                    _err(
                        MISMATCH,
                        f"value {it2.ident.name}: {s.pretty_scheme(sc1)} does not match "
                        f"{s.pretty_scheme(sc2)}",
                        span,
                    )
            case (SType(_, _, p1, b1), SType(_, _, p2, b2)):
                if len(p1) != len(p2):
                    _err(ARITY_MISMATCH, f"type {it2.ident.name}: parameter count differs", span)
                if b2 is None:
                    return  # manifest or abstract both refine abstract
                args = tuple(TVar(n, l) for n, l in p1)
                lhs = b1 if b1 is not None else TConstr(args, it1.ident)
                if not self.equiv_type(env, l2, lhs, b2):
                    _err(
                        MISMATCH,
                        f"type {it2.ident.name} = {pretty_type(lhs)} does not match "
                        f"{pretty_type(b2)}",
                        span,
                    )
            case (SMod(_, _, mt1), SMod(_, _, mt2)):
                self.subtype(env, l2, mt1, mt2, span)
            case _:
                _err(MISMATCH, f"component {it2.ident.name}: kind mismatch", span)


def _find_matching(items, it2):
    kind = type(it2)
    for it1 in reversed(items):
        if isinstance(it1, kind) and it1.ident.name == it2.ident.name:
            return it1
    return None


def _rename_idents(node, mapping: dict):
    """Rename type heads and module path roots according to `mapping`."""
    if not mapping:
        return node

    def on_path(p):
        match p:
            case PVar(x):
                return PVar(mapping.get(x, x))
            case PAccess(base, name):
                return PAccess(on_path(base), name)
            case PApply(f, a):
                return PApply(on_path(f), on_path(a))
        return p

    def on_type(t):
        match t:
            case TConstr(args, head):
                args2 = tuple(on_type(a) for a in args)
                if isinstance(head, Ident):
                    return TConstr(args2, mapping.get(head, head))
                return TConstr(args2, QualHead(on_path(head.path), head.name))
            case TArrow(a, b):
                return TArrow(on_type(a), on_type(b))
            case TConv(a, b):
                return TConv(on_type(a), on_type(b))
            case TFragment(b):
                return TFragment(on_type(b))
            case _:
                return t

    def on_modtype(m):
        match m:
            case MTSig(items):
                return MTSig([on_item(it) for it in items])
            case MTFunctor(p, a, r, mixed):
                return MTFunctor(p, on_modtype(a), on_modtype(r), mixed)
        raise TypeError(m)

    def on_item(it):
        match it:
            case SVal(loc, x, sc):
                return SVal(loc, x, Scheme(sc.quant, on_type(sc.body)))
            case SType(loc, x, params, body):
                return SType(loc, x, params, on_type(body) if body is not None else None)
            case SMod(loc, x, mt):
                return SMod(loc, x, on_modtype(mt))
        raise TypeError(it)

    return on_item(node)


def _heads_equal(h1, h2) -> bool:
    if isinstance(h1, Ident) and isinstance(h2, Ident):
        if h1.name in BUILTIN_TYPES and h2.name in BUILTIN_TYPES:
            return h1.name == h2.name
        return h1 == h2
    if isinstance(h1, QualHead) and isinstance(h2, QualHead):
        return h1.name == h2.name and _paths_equal(h1.path, h2.path)
    return False


def _paths_equal(p1, p2) -> bool:
    match (p1, p2):
        case (PVar(x1), PVar(x2)):
            return x1 == x2
        case (PAccess(b1, n1), PAccess(b2, n2)):
            return n1 == n2 and _paths_equal(b1, b2)
        case (PApply(f1, a1), PApply(f2, a2)):
            return _paths_equal(f1, f2) and _paths_equal(a1, a2)
        case _:
            return False


def _tvar_names(t, acc=None) -> set:
    acc = set() if acc is None else acc
    match t:
        case TVar(n, _):
            acc.add(n)
        case TArrow(a, b) | TConv(a, b):
            _tvar_names(a, acc)
            _tvar_names(b, acc)
        case TFragment(b):
            _tvar_names(b, acc)
        case TConstr(args, _):
            for a in args:
                _tvar_names(a, acc)
    return acc


def _fresh_name(used: set) -> str:
    i = 0
    while True:
        name = chr(ord("a") + i % 26) + ("" if i < 26 else str(i // 26))
        if name not in used:
            return name
        i += 1


def _rename_tvars(t, mapping):
    match t:
        case TVar(n, _) if n in mapping:
            return mapping[n]
        case TArrow(a, b):
            return TArrow(_rename_tvars(a, mapping), _rename_tvars(b, mapping))
        case TConv(a, b):
            return TConv(_rename_tvars(a, mapping), _rename_tvars(b, mapping))
        case TFragment(b):
            return TFragment(_rename_tvars(b, mapping))
        case TConstr(args, h):
            return TConstr(tuple(_rename_tvars(a, mapping) for a in args), h)
        case _:
            return t


# --- Whole-program entry points --------------------------------------------------


def close_sig_schemes(mt):
    """Quantify the free type variables of parsed signature value items."""
    match mt:
        case MTSig(items):
            out = []
            for it in items:
                match it:
                    case SVal(loc, x, sc) if not sc.quant:
                        free = sorted(_tvar_locs(sc.body).items())
                        out.append(SVal(loc, x, Scheme(tuple(free), sc.body)))
                    case SMod(loc, x, inner):
                        out.append(SMod(loc, x, close_sig_schemes(inner)))
                    case _:
                        out.append(it)
            return MTSig(out)
        case MTFunctor(p, a, r, mixed):
            return MTFunctor(p, close_sig_schemes(a), close_sig_schemes(r), mixed)
    return mt


def _tvar_locs(t, acc=None) -> dict:
    acc = {} if acc is None else acc
    match t:
        case TVar(n, l):
            acc.setdefault(n, l)
        case TArrow(a, b) | TConv(a, b):
            _tvar_locs(a, acc)
            _tvar_locs(b, acc)
        case TFragment(b):
            _tvar_locs(b, acc)
        case TConstr(args, _):
            for a in args:
                _tvar_locs(a, acc)
    return acc


def _close_modtypes_in_program(prog: Program) -> Program:
    def on_mod(m):
        match m:
            case MConstraint(body, mt):
                return MConstraint(on_mod(body), close_sig_schemes(mt), span=m.span)
            case MFunctor(p, aty, body, mixed):
                return MFunctor(p, close_sig_schemes(aty), on_mod(body), mixed, span=m.span)
            case MStruct(items, ref):
                return MStruct([on_decl(d) for d in items], ref, span=m.span)
            case MApply(f, a):
                return MApply(on_mod(f), on_mod(a), span=m.span)
            case _:
                return m

    def on_decl(d):
        if isinstance(d, DModule):
            return DModule(d.loc, d.ident, on_mod(d.body), span=d.span)
        return d

    return Program([on_decl(d) for d in prog.decls])


def type_program(prog: Program):
    """Type a whole program (programs are always mixed); returns its
    signature. Requires a `return` binding usable on the client."""
    prog = _close_modtypes_in_program(prog)
    checker = Checker()
    env: Env = ()
    items = []
    for d in prog.decls:
        item = checker.type_decl(env, Loc.MIXED, d)
        env = env_add(env, item)
        items.append(item)
    return MTSig(items)


def program_signature_and_runnable(prog: Program):
    sig = type_program(prog)
    runnable = any(
        isinstance(it, SVal) and it.ident.name == "return" and can_use(it.loc, Loc.CLIENT)
        for it in sig.items
    )
    return sig, runnable


def check_runnable(prog: Program):
    sig, runnable = program_signature_and_runnable(prog)
    if not runnable:
        _err(UNBOUND, "program has no client `return` declaration")
    return sig


@dataclass
class SeparateReport:
    items: list  # of (name, bool)

    @property
    def ok(self) -> bool:
        return all(ok for _, ok in self.items)


def check_separate(prog: Program) -> SeparateReport:
    """Re-typecheck each toplevel declaration against only the signatures of
    the previous ones and compare with the whole-program signature."""
    prog = _close_modtypes_in_program(prog)
    whole = type_program(prog).items
    results = []
    env: Env = ()
    for d, expected in zip(prog.decls, whole):
        checker = Checker()  # a fresh session: no shared inference state
        item = checker.type_decl(env, Loc.MIXED, d)
        ok = _items_agree(checker, env, item, expected)
        results.append((expected.ident.name, ok))
        env = env_add(env, expected)
    return SeparateReport(results)


def _items_agree(checker: Checker, env: Env, it1, it2) -> bool:
    if type(it1) is not type(it2) or it1.ident != it2.ident or it1.loc != it2.loc:
        return False
    try:
        checker._subtype_item(env_add_all(env, (it1,)), Loc.MIXED, it1, it2, None)
        return True
    except TypeCheckError:
        return False


# --- Convenience wrappers used by tests and the CLI ------------------------------


def infer_expr(env: Env, loc: Loc, e):
    checker = Checker()
    return checker.deep_resolve(checker.type_expr(env, loc, e))


def wf_type(env: Env, loc: Loc, t) -> None:
    Checker().wf_type(env, loc, t)


def equiv_type(env: Env, loc: Loc, t1, t2) -> bool:
    return Checker().equiv_type(env, loc, t1, t2)


def erase_locations(node, to: Loc = Loc.BASE):
    """Rewrite every location annotation to `to` (the ML embedding)."""

    def go(n):
        match n:
            case Program(decls):
                return Program([go(d) for d in decls])
            case DLet(_, x, e):
                return DLet(to, x, go(e))
            case DType(_, x, params, body):
                return DType(to, x, tuple((pn, to) for pn, _ in params), go(body) if body else None)
            case DModule(_, x, m):
                return DModule(to, x, go(m))
            case MStruct(items, ref):
                return MStruct([go(d) for d in items], ref)
            case MFunctor(p, a, b, mixed):
                return MFunctor(p, go(a), go(b), mixed)
            case MConstraint(b, mt):
                return MConstraint(go(b), go(mt))
            case MApply(f, a):
                return MApply(go(f), go(a))
            case MPath() | MRef():
                return n
            case MTSig(items):
                return MTSig([go(it) for it in items])
            case MTFunctor(p, a, r, mixed):
                return MTFunctor(p, go(a), go(r), mixed)
            case SVal(_, x, sc):
                return SVal(to, x, Scheme(tuple((qn, to) for qn, _ in sc.quant), go(sc.body)))
            case SType(_, x, params, body):
                return SType(to, x, tuple((pn, to) for pn, _ in params), go(body) if body else None)
            case SMod(_, x, mt):
                return SMod(to, x, go(mt))
            case TVar(name, _):
                return TVar(name, to)
            case TArrow(a, b):
                return TArrow(go(a), go(b))
            case TConv(a, b):
                return TConv(go(a), go(b))
            case TFragment(b):
                return TFragment(go(b))
            case TConstr(args, head):
                return TConstr(tuple(go(a) for a in args), head)
            case ELam(p, b):
                return ELam(p, go(b))
            case ELet(x, b, c):
                return ELet(x, go(b), go(c))
            case EApp(f, a):
                return EApp(go(f), go(a))
            case EFragment(b, ref):
                return EFragment(go(b), ref)
            case EInjection(t, conv):
                return EInjection(go(t), conv)
            case _:
                return n

    return go(node)

"""Syntax trees for the tierless source language.

Locations, stamped identifiers, paths, expressions, types, module
expressions, declarations, module types and runtime references all live
here, together with the reference generator, the annotation pass and the
pretty-printer. Nodes are plain frozen-ish dataclasses; source spans are
carried on declarations and expressions but excluded from equality.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Optional, Union


class Loc(Enum):
    BASE = "base"
    CLIENT = "client"
    SERVER = "server"
    MIXED = "mixed"

    def __str__(self) -> str:
        return self.value

    @property
    def is_core(self) -> bool:
        return self is not Loc.MIXED


CORE_LOCS = (Loc.BASE, Loc.CLIENT, Loc.SERVER)


@dataclass(frozen=True)
class Ident:
    """Identifier with a name part and a stamp part.

    Two idents are equal iff both parts match; alpha-conversion keeps the
    name and changes the stamp. Module fields are projected by name only.
    """

    name: str
    stamp: int = 0

    def __str__(self) -> str:
        return self.name


# --- Paths -----------------------------------------------------------------


@dataclass(frozen=True)
class PVar:
    ident: Ident


@dataclass(frozen=True)
class PAccess:
    base: "Path"
    name: str


@dataclass(frozen=True)
class PApply:
    func: "Path"
    arg: "Path"


Path = Union[PVar, PAccess, PApply]


# --- References ------------------------------------------------------------

# kind tags: 'f' fragment closure, 'r' fragment value, 'x' injection slot,
# 'R' module reference.
REF_KINDS = ("f", "r", "x", "R")


@dataclass(frozen=True)
class Ref:
    kind: str
    id: str
    prefix: Optional["Ref"] = None

    def render(self) -> str:
        if self.prefix is not None:
            return f"{self.prefix.render()}.{self.id}"
        return self.id

    def __str__(self) -> str:
        return self.render()

    def with_prefix(self, prefix: "Ref") -> "Ref":
        """Prefix this reference (used when entering mixed structures)."""
        if self.prefix is None:
            return Ref(self.kind, self.id, prefix)
        return Ref(self.kind, self.id, self.prefix.with_prefix(prefix))

    @property
    def root(self) -> "Ref":
        return self if self.prefix is None else self.prefix.root


class RefGen:
    """Monotone fresh-reference generator, confined to one session."""

    def __init__(self) -> None:
        self._counters = {k: 0 for k in REF_KINDS}

    def fresh(self, kind: str, prefix: Optional[Ref] = None) -> Ref:
        if kind not in self._counters:
            raise ValueError(f"unknown reference kind {kind!r}")
        n = self._counters[kind]
        self._counters[kind] = n + 1
        return Ref(kind, f"{kind}{n}", prefix)


_default_gen = RefGen()


def fresh_ref(kind: str, prefix: Optional[Ref] = None) -> Ref:
    """Mint a fresh reference from the process-wide default session."""
    return _default_gen.fresh(kind, prefix)


# --- Constants ---------------------------------------------------------------


class Unit:
    """The unit constant; a singleton."""

    _inst: Optional["Unit"] = None

    def __new__(cls) -> "Unit":
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self) -> str:
        return "()"


UNIT = Unit()


@dataclass(frozen=True)
class Builtin:
    """A named builtin constant (print, +, converter halves, ...)."""

    name: str

    def __str__(self) -> str:
        return self.name


# Literal payloads of constant expressions and constant values.
Literal = Union[int, str, Unit, Builtin]


@dataclass(frozen=True)
class Span:
    line: int
    col: int


def _spanned(cls):
    """Decorator adding a comparison-excluded span field."""
    return cls


# --- Expressions --------------------------------------------------------------


@dataclass
class EConst:
    value: Literal
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class EVar:
    ident: Ident
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class EQualVar:
    path: Path
    name: str
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class EFix:
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class EApp:
    func: "Expr"
    arg: "Expr"
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class ELam:
    param: Ident
    body: "Expr"
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class ELet:
    ident: Ident
    bound: "Expr"
    body: "Expr"
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class EFragment:
    body: "Expr"
    fragref: Optional[Ref] = None
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class EInjection:
    target: "Expr"  # EVar | EQualVar | EConst only
    conv: str
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class ELit:
    """A runtime value spliced into generated client code.

    Only appears in emitted client programs (injected constants and
    references); never produced by the parser.
    """

    value: object
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class ERef:
    """A reference used as an expression (target client language only)."""

    ref: Ref
    dyn: bool = False
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class EFragCall:
    """Delayed fragment application (target server language only)."""

    ref: Ref
    dyn: bool
    args: list
    span: Optional[Span] = field(default=None, compare=False, repr=False)


Expr = Union[
    EConst, EVar, EQualVar, EFix, EApp, ELam, ELet, EFragment, EInjection,
    ELit, ERef, EFragCall,
]


# --- Type expressions ---------------------------------------------------------


@dataclass(frozen=True)
class TVar:
    name: str
    loc: Loc


@dataclass(frozen=True)
class TUVar:
    """Inference-only unification variable."""

    id: int


@dataclass(frozen=True)
class QualHead:
    path: Path
    name: str


@dataclass(frozen=True)
class TArrow:
    arg: "TypeExpr"
    res: "TypeExpr"


@dataclass(frozen=True)
class TConstr:
    args: tuple
    head: Union[Ident, QualHead]


@dataclass(frozen=True)
class TFragment:
    body: "TypeExpr"


@dataclass(frozen=True)
class TConv:
    server: "TypeExpr"
    client: "TypeExpr"


TypeExpr = Union[TVar, TUVar, TArrow, TConstr, TFragment, TConv]


@dataclass(frozen=True)
class Scheme:
    quant: tuple  # of (name, Loc)
    body: TypeExpr


def scheme_of(ty: TypeExpr) -> Scheme:
    return Scheme((), ty)


# --- Module expressions -------------------------------------------------------


@dataclass
class MPath:
    path: Path
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class MConstraint:
    body: "ModExpr"
    modtype: "ModType"
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class MApply:
    func: "ModExpr"
    arg: "ModExpr"
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class MFunctor:
    param: Ident
    argty: "ModType"
    body: "ModExpr"
    mixed: bool = False
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class MStruct:
    items: list
    structref: Optional[Ref] = None
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class MRef:
    """A module reference (generated client code / target language)."""

    ref: Ref
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class MFragMod:
    """Delayed functor application `fragment_m F (dyn X ...)` (target server)."""

    ref: Ref
    args: list  # of Path, each read through get-dyn
    span: Optional[Span] = field(default=None, compare=False, repr=False)


ModExpr = Union[MPath, MConstraint, MApply, MFunctor, MStruct, MRef, MFragMod]


# --- Declarations -------------------------------------------------------------


@dataclass
class DLet:
    loc: Loc
    ident: Ident
    expr: Expr
    span: Optional[Span] = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.loc is Loc.MIXED:
            raise ValueError("value declarations cannot be mixed")


@dataclass
class DType:
    loc: Loc
    ident: Ident
    params: tuple  # of (name, Loc)
    body: Optional[TypeExpr]
    span: Optional[Span] = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.loc is Loc.MIXED:
            raise ValueError("type declarations cannot be mixed")


@dataclass
class DModule:
    loc: Loc
    ident: Ident
    body: ModExpr
    span: Optional[Span] = field(default=None, compare=False, repr=False)


# Target-only declarations.


@dataclass
class DInjection:
    slot: Ref
    expr: Expr
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class DEnd:
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class DBind:
    ref: Ref
    dyn: bool
    expr: Expr
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class DBindMod:
    ref: Ref
    dyn: bool
    body: ModExpr
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class DExec:
    span: Optional[Span] = field(default=None, compare=False, repr=False)


Decl = Union[DLet, DType, DModule, DInjection, DEnd, DBind, DBindMod, DExec]


@dataclass
class Program:
    decls: list

    def __iter__(self):
        return iter(self.decls)


# --- Module types -------------------------------------------------------------


@dataclass
class SVal:
    loc: Loc
    ident: Ident
    scheme: Scheme
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class SType:
    loc: Loc
    ident: Ident
    params: tuple  # of (name, Loc)
    body: Optional[TypeExpr]  # None = abstract
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class SMod:
    loc: Loc
    ident: Ident
    modtype: "ModType"
    span: Optional[Span] = field(default=None, compare=False, repr=False)


SigItem = Union[SVal, SType, SMod]


@dataclass
class MTSig:
    items: list
    span: Optional[Span] = field(default=None, compare=False, repr=False)


@dataclass
class MTFunctor:
    param: Ident
    argty: "ModType"
    resty: "ModType"
    mixed: bool = False
    span: Optional[Span] = field(default=None, compare=False, repr=False)


ModType = Union[MTSig, MTFunctor]


# --- Annotation ---------------------------------------------------------------


def annotate(program: Program, gen: Optional[RefGen] = None) -> Program:
    """Attach a fresh closure reference to every fragment and a fresh module
    reference to every mixed structure, in pre-order. Already-annotated nodes
    keep their references, which makes the pass idempotent.
    """
    gen = gen or RefGen()

    def an_expr(e: Expr) -> Expr:
        match e:
            case EFragment(body, fragref):
                ref = fragref if fragref is not None else gen.fresh("f")
                return EFragment(an_expr(body), ref, span=e.span)
            case EApp(f, a):
                return EApp(an_expr(f), an_expr(a), span=e.span)
            case ELam(p, b):
                return ELam(p, an_expr(b), span=e.span)
            case ELet(x, b, c):
                return ELet(x, an_expr(b), an_expr(c), span=e.span)
            case EInjection(t, conv):
                return EInjection(an_expr(t), conv, span=e.span)
            case _:
                return e

    def an_mod(m: ModExpr, mixed_pos: bool) -> ModExpr:
        match m:
            case MStruct(items, structref):
                ref = structref
                if mixed_pos and ref is None:
                    ref = gen.fresh("R")
                return MStruct([an_decl(d) for d in items], ref, span=m.span)
            case MFunctor(p, aty, body, mixed):
                return MFunctor(p, aty, an_mod(body, mixed_pos), mixed, span=m.span)
            case MConstraint(body, mt):
                return MConstraint(an_mod(body, mixed_pos), mt, span=m.span)
            case MApply(f, a):
                return MApply(an_mod(f, False), an_mod(a, False), span=m.span)
            case _:
                return m

    def an_decl(d: Decl) -> Decl:
        match d:
            case DLet(loc, x, e):
                return DLet(loc, x, an_expr(e), span=d.span)
            case DModule(loc, x, body):
                return DModule(loc, x, an_mod(body, loc is Loc.MIXED), span=d.span)
            case _:
                return d

    return Program([an_decl(d) for d in program.decls])


def collect_fragments(node) -> list:
    """All fragment expressions syntactically present in a node, pre-order."""
    out: list = []

    def go(n) -> None:
        match n:
            case EFragment(body, _):
                out.append(n)
                go(body)
            case EApp(f, a):
                go(f)
                go(a)
            case ELam(_, b) | EInjection(b, _):
                go(b)
            case ELet(_, b, c):
                go(b)
                go(c)
            case DLet(_, _, e):
                go(e)
            case DModule(_, _, m):
                go(m)
            case MStruct(items, _):
                for d in items:
                    go(d)
            case MFunctor(_, _, b, _) | MConstraint(b, _):
                go(b)
            case MApply(f, a):
                go(f)
                go(a)
            case Program(decls):
                for d in decls:
                    go(d)
            case _:
                pass

    go(node)
    return out


def collect_injections(node, inside_fragment: bool = False, only_client_decls: bool = False) -> list:
    """Injection expressions in a node, pre-order, excluding escaped values
    (injections nested inside fragments). With only_client_decls, restrict
    to injections occurring in client-located declarations.
    """
    out: list = []

    def go(n, in_frag: bool, in_client: bool) -> None:
        match n:
            case EInjection(t, _):
                if not in_frag and (in_client or not only_client_decls):
                    out.append(n)
                go(t, in_frag, in_client)
            case EFragment(body, _):
                go(body, True, in_client)
            case EApp(f, a):
                go(f, in_frag, in_client)
                go(a, in_frag, in_client)
            case ELam(_, b):
                go(b, in_frag, in_client)
            case ELet(_, b, c):
                go(b, in_frag, in_client)
                go(c, in_frag, in_client)
            case DLet(loc, _, e):
                go(e, in_frag, in_client or loc is Loc.CLIENT)
            case DModule(loc, _, m):
                go(m, in_frag, in_client or loc is Loc.CLIENT)
            case MStruct(items, _):
                for d in items:
                    go(d, in_frag, in_client)
            case MFunctor(_, _, b, _) | MConstraint(b, _):
                go(b, in_frag, in_client)
            case MApply(f, a):
                go(f, in_frag, in_client)
                go(a, in_frag, in_client)
            case Program(decls):
                for d in decls:
                    go(d, in_frag, in_client)
            case _:
                pass

    go(node, inside_fragment, False)
    return out


def strip_stamps(node):
    """Copy of a node with every stamp set to 0 (for mod-stamp comparison)."""

    def go(n):
        if isinstance(n, Ident):
            return Ident(n.name, 0)
        if isinstance(n, (list, tuple)):
            return type(n)(go(x) for x in n)
        if isinstance(n, Program):
            return Program([go(d) for d in n.decls])
        if hasattr(n, "__dataclass_fields__") and not isinstance(n, (Ref, Span)):
            kwargs = {}
            for f in fields(n):
                kwargs[f.name] = go(getattr(n, f.name))
            return type(n)(**kwargs)
        return n

    return go(node)


def equal_mod_stamps(a, b) -> bool:
    return strip_stamps(a) == strip_stamps(b)


# --- Pretty printing ----------------------------------------------------------

_INFIX = {"+"}


def _loc_suffix(loc: Loc) -> str:
    return f"%{loc.value}"


def pretty_path(p: Path) -> str:
    match p:
        case PVar(ident):
            return ident.name
        case PAccess(base, name):
            return f"{pretty_path(base)}.{name}"
        case PApply(func, arg):
            return f"{pretty_path(func)}({pretty_path(arg)})"
    raise TypeError(p)


def pretty_lit(v: Literal) -> str:
    if isinstance(v, Unit):
        return "()"
    if isinstance(v, Builtin):
        return v.name
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return str(v)


def pretty_expr(e: Expr) -> str:
    return _pp_expr(e, 0)


def _atom(s: str, need: bool) -> str:
    return f"({s})" if need else s


def _pp_expr(e: Expr, prec: int) -> str:
    # prec: 0 lowest (let/fun), 1 infix +, 2 application, 3 atom
    match e:
        case EConst(v):
            return pretty_lit(v)
        case ELit(v):
            from .values import pretty_value  # local import, avoids a cycle

            return pretty_value(v)
        case EVar(x):
            return x.name
        case EQualVar(p, name):
            return f"{pretty_path(p)}.{name}"
        case EFix():
            return "fix"
        case ERef(ref, dyn):
            return f"dyn.{ref.render()}" if dyn else f"&{ref.render()}"
        case EInjection(t, conv):
            match t:
                case EVar(x):
                    return f"~{x.name}:{conv}"
                case EQualVar(p, name):
                    return f"~({pretty_path(p)}.{name}):{conv}"
                case _:
                    return f"~({_pp_expr(t, 0)}):{conv}"
        case EFragment(body, _):
            return f"{{{{ {_pp_expr(body, 0)} }}}}"
        case EApp(EApp(EConst(Builtin("+")), a), b):
            s = f"{_pp_expr(a, 1)} + {_pp_expr(b, 2)}"
            return _atom(s, prec > 1)
        case EApp(f, a):
            s = f"{_pp_expr(f, 2)} {_pp_expr(a, 3)}"
            return _atom(s, prec > 2)
        case EFragCall(ref, dyn, args):
            rp = f"dyn.{ref.render()}" if dyn else f"&{ref.render()}"
            inner = ", ".join(_pp_expr(a, 0) for a in args)
            return _atom(f"fragment {rp} ({inner})", prec > 2)
        case ELam(p, b):
            return _atom(f"fun {p.name} -> {_pp_expr(b, 0)}", prec > 0)
        case ELet(x, b, c):
            return _atom(
                f"let {x.name} = {_pp_expr(b, 0)} in {_pp_expr(c, 0)}", prec > 0
            )
    raise TypeError(e)


def pretty_type(t: TypeExpr) -> str:
    return _pp_type(t, 0)


def _head_str(head) -> str:
    if isinstance(head, Ident):
        return head.name
    return f"{pretty_path(head.path)}.{head.name}"


def _pp_type(t: TypeExpr, prec: int) -> str:
    # prec: 0 arrow/conv, 1 postfix constr, 2 atom
    match t:
        case TVar(name, loc):
            return f"'{name}@{loc.value}"
        case TUVar(i):
            return f"'_u{i}"
        case TArrow(a, b):
            return _atom(f"{_pp_type(a, 1)} -> {_pp_type(b, 0)}", prec > 0)
        case TConv(s, c):
            return _atom(f"{_pp_type(s, 1)} ~> {_pp_type(c, 1)}", prec > 0)
        case TFragment(body):
            return _atom(f"{_pp_type(body, 2)} fragment", prec > 1)
        case TConstr(args, head):
            if not args:
                return _head_str(head)
            if len(args) == 1:
                return _atom(f"{_pp_type(args[0], 2)} {_head_str(head)}", prec > 1)
            inner = ", ".join(_pp_type(a, 0) for a in args)
            return _atom(f"({inner}) {_head_str(head)}", prec > 1)
    raise TypeError(t)


def pretty_scheme(s: Scheme) -> str:
    return pretty_type(s.body)


def _params_str(params: tuple) -> str:
    if not params:
        return ""
    inner = ", ".join(f"'{n}@{l.value}" for n, l in params)
    return f"({inner}) "


def pretty_modtype(mt: ModType, indent: int = 0) -> str:
    pad = "  " * indent
    match mt:
        case MTSig(items):
            if not items:
                return "sig end"
            lines = [pretty_sigitem(it, indent + 1) for it in items]
            return "sig\n" + "\n".join(lines) + f"\n{pad}end"
        case MTFunctor(p, a, r, mixed):
            kw = "functor%mixed" if mixed else "functor"
            return (
                f"{kw} ({p.name} : {pretty_modtype(a, indent)}) -> "
                f"{pretty_modtype(r, indent)}"
            )
    raise TypeError(mt)


def pretty_sigitem(it: SigItem, indent: int = 0) -> str:
    pad = "  " * indent
    match it:
        case SVal(loc, x, sc):
            return f"{pad}val{_loc_suffix(loc)} {x.name} : {pretty_scheme(sc)}"
        case SType(loc, x, params, body):
            head = f"{pad}type{_loc_suffix(loc)} {_params_str(params)}{x.name}"
            if body is None:
                return head
            return f"{head} = {pretty_type(body)}"
        case SMod(loc, x, mt):
            return f"{pad}module{_loc_suffix(loc)} {x.name} : {pretty_modtype(mt, indent)}"
    raise TypeError(it)


def pretty_modexpr(m: ModExpr, indent: int = 0) -> str:
    pad = "  " * indent
    match m:
        case MPath(p):
            return pretty_path(p)
        case MRef(ref):
            return f"&{ref.render()}"
        case MConstraint(body, mt):
            return f"({pretty_modexpr(body, indent)} : {pretty_modtype(mt, indent)})"
        case MApply(f, a):
            return f"{pretty_modexpr(f, indent)}({pretty_modexpr(a, indent)})"
        case MFunctor(p, aty, body, mixed):
            kw = "functor%mixed" if mixed else "functor"
            return (
                f"{kw} ({p.name} : {pretty_modtype(aty, indent)}) -> "
                f"{pretty_modexpr(body, indent)}"
            )
        case MFragMod(ref, args):
            inner = ", ".join(f"dyn({pretty_path(p)})" for p in args)
            return f"fragment_m &{ref.render()} ({inner})"
        case MStruct(items, _):
            if not items:
                return "struct end"
            lines = [pretty_decl(d, indent + 1) for d in items]
            return "struct\n" + "\n".join(lines) + f"\n{pad}end"
    raise TypeError(m)


def pretty_decl(d: Decl, indent: int = 0) -> str:
    pad = "  " * indent
    match d:
        case DLet(loc, x, e):
            return f"{pad}let{_loc_suffix(loc)} {x.name} = {_pp_expr(e, 0)}"
        case DType(loc, x, params, body):
            head = f"{pad}type{_loc_suffix(loc)} {_params_str(params)}{x.name}"
            if body is None:
                return head
            return f"{head} = {pretty_type(body)}"
        case DModule(loc, x, body):
            return f"{pad}module{_loc_suffix(loc)} {x.name} = {pretty_modexpr(body, indent)}"
        case DInjection(slot, e):
            return f"{pad}injection &{slot.render()} {_pp_expr(e, 3)}"
        case DEnd():
            return f"{pad}end!"
        case DBind(ref, dyn, e):
            rp = f"dyn.{ref.render()}" if dyn else f"&{ref.render()}"
            return f"{pad}bind {rp} = {_pp_expr(e, 0)}"
        case DBindMod(ref, dyn, body):
            rp = f"dyn.{ref.render()}" if dyn else f"&{ref.render()}"
            return f"{pad}bind_m {rp} = {pretty_modexpr(body, indent)}"
        case DExec():
            return f"{pad}exec!"
    raise TypeError(d)


def pretty_program(p: Program) -> str:
    return "\n".join(pretty_decl(d) for d in p.decls) + "\n"


def pretty(node) -> str:
    """Print any syntax node back to concrete syntax."""
    if isinstance(node, Program):
        return pretty_program(node)
    if isinstance(node, (MTSig, MTFunctor)):
        return pretty_modtype(node)
    if isinstance(node, (SVal, SType, SMod)):
        return pretty_sigitem(node)
    if isinstance(node, (DLet, DType, DModule, DInjection, DEnd, DBind, DBindMod, DExec)):
        return pretty_decl(node)
    if isinstance(node, (MPath, MConstraint, MApply, MFunctor, MStruct, MRef, MFragMod)):
        return pretty_modexpr(node)
    if isinstance(node, (TVar, TUVar, TArrow, TConstr, TFragment, TConv)):
        return pretty_type(node)
    if isinstance(node, Scheme):
        return pretty_scheme(node)
    if isinstance(node, (PVar, PAccess, PApply)):
        return pretty_path(node)
    return pretty_expr(node)

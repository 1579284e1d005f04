"""Compilation of one source program into a server and a client target
program: injection hoisting, the sliceability check, type slicing and the
slicing rules proper. Both sides are produced in a single pass so that
injection slots and fragment closures share references.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import syntax as s
from .locations import can_use
from .syntax import (
    Builtin, DBind, DBindMod, DEnd, DExec, DInjection, DLet, DModule, DType,
    EApp, EConst, EFix, EFragCall, EFragment, EInjection, ELam, ELet, ELit,
    EQualVar, ERef, EVar, Ident, Loc, MApply, MConstraint, MFragMod, MFunctor,
    MPath, MRef, MStruct, MTFunctor, MTSig, PVar, Program, Ref, RefGen,
    Scheme, SMod, SType, SVal, TArrow, TConstr, TConv, TFragment, TVar,
    UNIT, annotate, collect_fragments, collect_injections,
)

PRIMITIVE_CONVERTERS = ("serial", "fragment")

T_SERIAL = TConstr((), Ident("serial"))
T_FRAGTY = TConstr((), Ident("fragty"))


class SliceError(Exception):
    pass


# --- Hoisting ------------------------------------------------------------------------


class _Hoister:
    def __init__(self) -> None:
        self.counter = 0

    def fresh(self, base: str) -> Ident:
        self.counter += 1
        return Ident(f"_h{self.counter}_{base}", 0)

    # injections inside fragments: the converter application moves out of
    # the fragment, leaving a serial-converter escape
    def hoist_expr(self, e):
        match e:
            case EFragment(body, ref):
                body2, hoists = self._strip_fragment_injections(body)
                frag = EFragment(body2, ref, span=e.span)
                for name, bound in reversed(hoists):
                    frag = ELet(name, bound, frag)
                return frag
            case EApp(f, a):
                return EApp(self.hoist_expr(f), self.hoist_expr(a), span=e.span)
            case ELam(p, b):
                return ELam(p, self.hoist_expr(b), span=e.span)
            case ELet(x, b, c):
                return ELet(x, self.hoist_expr(b), self.hoist_expr(c), span=e.span)
            case _:
                return e

    def _strip_fragment_injections(self, body):
        hoists: list = []

        def go(e):
            match e:
                case EInjection(target, conv) if conv not in PRIMITIVE_CONVERTERS:
                    name = self.fresh(conv)
                    bound = EApp(EConst(Builtin(f"{conv}^s")), target)
                    hoists.append((name, bound))
                    return EApp(
                        EConst(Builtin(f"{conv}^c")),
                        EInjection(EVar(name), "serial"),
                    )
                case EApp(f, a):
                    return EApp(go(f), go(a), span=e.span)
                case ELam(p, b):
                    return ELam(p, go(b), span=e.span)
                case ELet(x, b, c):
                    return ELet(x, go(b), go(c), span=e.span)
                case _:
                    return e

        return go(body), hoists

    # injections in client declarations: the converter application becomes a
    # preceding server declaration
    def hoist_client_decl(self, d):
        extra: list = []

        def go(e):
            match e:
                case EInjection(target, conv) if conv not in PRIMITIVE_CONVERTERS:
                    name = self.fresh(conv)
                    extra.append(
                        DLet(Loc.SERVER, name, EApp(EConst(Builtin(f"{conv}^s")), target))
                    )
                    return EApp(
                        EConst(Builtin(f"{conv}^c")),
                        EInjection(EVar(name), "serial"),
                    )
                case EFragment(body, ref):
                    return EFragment(body, ref, span=e.span)
                case EApp(f, a):
                    return EApp(go(f), go(a), span=e.span)
                case ELam(p, b):
                    return ELam(p, go(b), span=e.span)
                case ELet(x, b, c):
                    return ELet(x, go(b), go(c), span=e.span)
                case _:
                    return e

        def go_mod(m):
            match m:
                case MStruct(items, ref):
                    return MStruct([go_decl(x) for x in items], ref, span=m.span)
                case MFunctor(p, aty, body, mixed):
                    return MFunctor(p, aty, go_mod(body), mixed, span=m.span)
                case MConstraint(body, mt):
                    return MConstraint(go_mod(body), mt, span=m.span)
                case MApply(f, a):
                    return MApply(go_mod(f), go_mod(a), span=m.span)
                case _:
                    return m

        def go_decl(dd):
            match dd:
                case DLet(loc, x, e) if loc is Loc.CLIENT:
                    return DLet(loc, x, go(e), span=dd.span)
                case DModule(loc, x, m) if loc is Loc.CLIENT:
                    return DModule(loc, x, go_mod(m), span=dd.span)
                case _:
                    return dd

        return extra, go_decl(d)

    # injections anywhere in client declarations of a mixed functor body are
    # lifted out to fresh client declarations in the enclosing scope
    def hoist_mixed_functor(self, m):
        lifted: list = []

        def lift_expr(e):
            match e:
                case EInjection():
                    name = self.fresh("inj")
                    lifted.append(DLet(Loc.CLIENT, name, e))
                    return EVar(name)
                case EFragment(body, ref):
                    return e  # escaped values stay put
                case EApp(f, a):
                    return EApp(lift_expr(f), lift_expr(a), span=e.span)
                case ELam(p, b):
                    return ELam(p, lift_expr(b), span=e.span)
                case ELet(x, b, c):
                    return ELet(x, lift_expr(b), lift_expr(c), span=e.span)
                case _:
                    return e

        def on_body(body):
            out = []
            for d in body:
                match d:
                    case DLet(Loc.CLIENT, x, e):
                        out.append(DLet(Loc.CLIENT, x, lift_expr(e), span=d.span))
                    case DModule(Loc.CLIENT, x, mm):
                        out.append(DModule(Loc.CLIENT, x, on_mod(mm), span=d.span))
                    case DModule(Loc.MIXED, x, mm):
                        out.append(DModule(Loc.MIXED, x, on_mod(mm), span=d.span))
                    case _:
                        out.append(d)
            return out

        def on_mod(mm):
            match mm:
                case MStruct(items, ref):
                    return MStruct(on_body(items), ref, span=mm.span)
                case MFunctor(p, aty, body, mixed):
                    return MFunctor(p, aty, on_mod(body), mixed, span=mm.span)
                case MConstraint(body, mt):
                    return MConstraint(on_mod(body), mt, span=mm.span)
                case _:
                    return mm

        return lifted, on_mod(m)


def hoist(program: Program) -> Program:
    """Rewrite injections so that only serial/fragment escapes remain inside
    fragments and mixed functor bodies carry no injections at all; semantics
    preserving on typed programs."""
    h = _Hoister()
    out: list = []
    for d in program.decls:
        match d:
            case DModule(Loc.MIXED, x, m) if _contains_mixed_functor(m):
                lifted, m2 = h.hoist_mixed_functor(m)
                for extra in lifted:
                    out.extend(_hoist_plain(h, extra))
                out.extend(_hoist_plain(h, DModule(Loc.MIXED, x, m2, span=d.span)))
            case _:
                out.extend(_hoist_plain(h, d))
    return Program(out)


def _hoist_plain(h: _Hoister, d):
    match d:
        case DLet(Loc.CLIENT, _, _) | DModule(Loc.CLIENT, _, _):
            extra, d2 = h.hoist_client_decl(d)
            return extra + [d2]
        case DLet(loc, x, e):
            return [DLet(loc, x, h.hoist_expr(e), span=d.span)]
        case DModule(loc, x, m):
            return [DModule(loc, x, _hoist_mod(h, m), span=d.span)]
        case _:
            return [d]


def _hoist_mod(h: _Hoister, m):
    match m:
        case MStruct(items, ref):
            out: list = []
            for d in items:
                out.extend(_hoist_plain(h, d))
            return MStruct(out, ref, span=m.span)
        case MFunctor(p, aty, body, mixed):
            return MFunctor(p, aty, _hoist_mod(h, body), mixed, span=m.span)
        case MConstraint(body, mt):
            return MConstraint(_hoist_mod(h, body), mt, span=m.span)
        case MApply(f, a):
            return MApply(_hoist_mod(h, f), _hoist_mod(h, a), span=m.span)
        case _:
            return m


def _contains_mixed_functor(m) -> bool:
    match m:
        case MFunctor(_, _, body, mixed):
            return mixed or _contains_mixed_functor(body)
        case MConstraint(body, _):
            return _contains_mixed_functor(body)
        case MStruct(items, _):
            return any(
                isinstance(d, DModule) and _contains_mixed_functor(d.body) for d in items
            )
        case MApply(f, a):
            return _contains_mixed_functor(f) or _contains_mixed_functor(a)
        case _:
            return False


# --- Sliceability ----------------------------------------------------------------------


def check_sliceable(program: Program) -> None:
    """Mixed structures may only be defined at top level or as the body of a
    toplevel mixed functor chain."""

    def reject(what, d):
        where = f" at line {d.span.line}" if getattr(d, "span", None) else ""
        raise SliceError(f"unsliceable program: {what}{where}")

    def check_inner_mod(m, d):
        # no mixed structure literals anywhere below this point
        match m:
            case MStruct(items, _):
                reject("nested mixed structure", d)
            case MConstraint(body, _):
                check_inner_mod(body, d)
            case MFunctor(_, _, body, _):
                check_inner_mod(body, d)
            case MApply(f, a):
                check_inner_mod(f, d)
                check_inner_mod(a, d)
            case _:
                pass

    def check_struct_body(items):
        for d in items:
            if isinstance(d, DModule) and d.loc is Loc.MIXED:
                check_inner_mod(d.body, d)

    for d in program.decls:
        if not (isinstance(d, DModule) and d.loc is Loc.MIXED):
            continue
        m = d.body
        while isinstance(m, MConstraint):
            m = m.body
        if isinstance(m, MStruct):
            check_struct_body(m.items)
            continue
        if isinstance(m, MFunctor):
            body = m.body
            while isinstance(body, MFunctor) and body.mixed:
                body = body.body
            if isinstance(body, MStruct):
                check_struct_body(body.items)
            else:
                check_inner_mod(body, d)
            continue
        check_inner_mod(m, d)


# --- Type slicing -----------------------------------------------------------------------


def slice_type(t, side: str):
    if side == "client":
        return _unlocate_type(t)
    match t:
        case TFragment(_):
            return T_FRAGTY
        case TConv(ts, _):
            return TArrow(slice_type(ts, side), T_SERIAL)
        case TArrow(a, b):
            return TArrow(slice_type(a, side), slice_type(b, side))
        case TConstr(args, head):
            return TConstr(tuple(slice_type(a, side) for a in args), head)
        case _:
            return _unlocate_type(t)


def _unlocate_type(t):
    """Target types carry no locations; type variables become base-located."""
    match t:
        case TVar(n, _):
            return TVar(n, Loc.BASE)
        case TArrow(a, b):
            return TArrow(_unlocate_type(a), _unlocate_type(b))
        case TConv(a, b):
            return TConv(_unlocate_type(a), _unlocate_type(b))
        case TFragment(b):
            return TFragment(_unlocate_type(b))
        case TConstr(args, head):
            return TConstr(tuple(_unlocate_type(a) for a in args), head)
        case _:
            return t


def slice_modtype(mt, side: str):
    loc = Loc.SERVER if side == "server" else Loc.CLIENT
    match mt:
        case MTSig(items):
            out = []
            for it in items:
                if it.loc is Loc.BASE:
                    out.append(it)
                    continue
                if not can_use(it.loc, loc):
                    continue
                match it:
                    case SVal(_, x, sc):
                        quant = tuple((n, Loc.BASE) for n, _ in sc.quant)
                        out.append(
                            SVal(Loc.BASE, x, Scheme(quant, slice_type(sc.body, side)))
                        )
                    case SType(_, x, params, body):
                        out.append(
                            SType(
                                Loc.BASE,
                                x,
                                tuple((n, Loc.BASE) for n, _ in params),
                                slice_type(body, side) if body is not None else None,
                            )
                        )
                    case SMod(_, x, inner):
                        out.append(SMod(Loc.BASE, x, slice_modtype(inner, side)))
            return MTSig(out)
        case MTFunctor(p, a, r, _):
            return MTFunctor(p, slice_modtype(a, side), slice_modtype(r, side), False)
    raise TypeError(mt)


# --- Slicing proper ----------------------------------------------------------------------


@dataclass
class SlicedPair:
    server: Program
    client: Program
    slot_table: dict = field(default_factory=dict)  # injection site -> slot ref
    frag_table: dict = field(default_factory=dict)  # fragref -> [(target, conv)]


class _Slicer:
    def __init__(self, gen: RefGen):
        self.gen = gen
        self.slot_table: dict = {}
        self.frag_table: dict = {}

    # client declarations --------------------------------------------------

    def client_decl(self, d):
        """Returns (server decls, client decls)."""
        injections = collect_injections(d)
        slots = {}
        server: list = []
        for inj in injections:
            slot = self.gen.fresh("x")
            slots[id(inj)] = slot
            self.slot_table[self._inj_site(inj)] = slot
            server.append(
                DInjection(slot, EApp(EConst(Builtin(f"{inj.conv}^s")), inj.target))
            )
        client = [_map_injections(d, lambda i: self._slot_use(i, slots))]
        return server, client

    def _slot_use(self, inj, slots):
        slot = slots[id(inj)]
        return EApp(EConst(Builtin(f"{inj.conv}^c")), ERef(slot, False))

    def _inj_site(self, inj):
        return f"~{s.pretty_expr(inj.target)}:{inj.conv}@{len(self.slot_table)}"

    # server declarations ---------------------------------------------------

    def server_decl(self, d, in_functor: bool):
        """Returns (server decls, client decls)."""
        frags = collect_fragments(d)
        binds: list = []
        for frag in frags:
            if frag.fragref is None:
                raise SliceError("fragment without annotation; run annotate first")
            escapes = collect_injections(frag.body)
            self.frag_table[frag.fragref] = [
                (s.pretty_expr(i.target), i.conv) for i in escapes
            ]
            params = [Ident(f"_x{k}", 0) for k in range(len(escapes))]
            body = _map_injections_expr(
                frag.body,
                {
                    id(i): EApp(EConst(Builtin(f"{i.conv}^c")), EVar(p))
                    for i, p in zip(escapes, params)
                },
            )
            if not params:
                params = [Ident("_", 0)]
            closure = body
            for p in reversed(params):
                closure = ELam(p, closure)
            binds.append(DBind(frag.fragref, in_functor, closure))
        server = [_substitute_fragments(d, in_functor), DEnd()]
        client = binds + [DExec()]
        return server, client

    # mixed declarations -------------------------------------------------------

    def mixed_decl(self, d):
        m = d.body
        while isinstance(m, MConstraint):
            m = m.body
        match m:
            case MStruct(items, ref):
                if ref is None:
                    raise SliceError("mixed structure without annotation")
                sv, cl = self.struct_body(items, in_functor=False)
                server = [
                    DModule(
                        Loc.BASE,
                        d.ident,
                        MStruct([DModule(Loc.BASE, Ident("dyn", 0), MRef(ref))] + sv),
                    )
                ]
                client = [
                    DBindMod(ref, False, MStruct(cl)),
                    DModule(Loc.BASE, d.ident, MRef(ref)),
                ]
                return server, client
            case MFunctor(_, _, _, mixed=True) if isinstance(
                _functor_chain_body(m), MStruct
            ):
                params, body = _functor_chain(m)
                ref = body.structref
                if ref is None:
                    raise SliceError("mixed functor body without annotation")
                sv, cl = self.struct_body(body.items, in_functor=True)
                dyn_decl = DModule(
                    Loc.BASE,
                    Ident("dyn", 0),
                    MFragMod(ref, [PVar(p) for p, _ in params]),
                )
                server = [
                    DModule(
                        Loc.BASE,
                        d.ident,
                        _rebuild_functor(params, MStruct([dyn_decl] + sv), "server"),
                    )
                ]
                from .interp import erase_client

                client = [
                    DBindMod(ref, False, _rebuild_functor(params, MStruct(cl), "client")),
                    DModule(
                        Loc.BASE,
                        d.ident,
                        _rebuild_functor(
                            params,
                            MStruct(_relabel_base(erase_client(body.items))),
                            "client",
                        ),
                    ),
                ]
                return server, client
            case _:
                server = [DModule(Loc.BASE, d.ident, self.modexpr(m, "server")), DEnd()]
                client = [DModule(Loc.BASE, d.ident, self.modexpr(m, "client")), DExec()]
                return server, client

    def struct_body(self, items, in_functor: bool):
        server: list = []
        client: list = []
        for d in items:
            sv, cl = self.decl(d, in_functor)
            server.extend(sv)
            client.extend(cl)
        return server, client

    def decl(self, d, in_functor: bool = False):
        loc = d.loc
        if loc is Loc.BASE:
            return [d], [d]
        if loc is Loc.CLIENT:
            return self.client_decl(d)
        if loc is Loc.SERVER:
            return self.server_decl(d, in_functor)
        return self.mixed_decl(d)

    def modexpr(self, m, side: str):
        """Slice a mixed module expression with no structure literals."""
        match m:
            case MPath(p):
                return MPath(p, span=m.span)
            case MApply(f, a):
                return MApply(self.modexpr(f, side), self.modexpr(a, side), span=m.span)
            case MConstraint(body, mt):
                return MConstraint(self.modexpr(body, side), slice_modtype(mt, side))
            case MFunctor(p, aty, body, _):
                return MFunctor(p, slice_modtype(aty, side), self.modexpr(body, side), False)
            case MStruct():
                raise SliceError("unsliceable nested mixed structure")
        raise TypeError(m)


def _relabel_base(items):
    """Erase location labels on declarations (target programs are unlocated)."""
    out = []
    for d in items:
        match d:
            case DLet(_, x, e):
                out.append(DLet(Loc.BASE, x, e, span=d.span))
            case DType(_, x, params, body):
                out.append(DType(Loc.BASE, x, params, body, span=d.span))
            case DModule(_, x, m):
                m2 = m
                if isinstance(m, MStruct):
                    m2 = MStruct(_relabel_base(m.items), m.structref, span=m.span)
                out.append(DModule(Loc.BASE, x, m2, span=d.span))
            case _:
                out.append(d)
    return out


def _functor_chain(m):
    params = []
    while isinstance(m, MFunctor) and m.mixed:
        params.append((m.param, m.argty))
        m = m.body
    return params, m


def _functor_chain_body(m):
    _, body = _functor_chain(m)
    return body


def _rebuild_functor(params, body, side: str):
    out = body
    for p, aty in reversed(params):
        out = MFunctor(p, slice_modtype(aty, side), out, False)
    return out


def _substitute_fragments(node, in_functor: bool):
    """Replace every fragment by the corresponding delayed call."""

    def on_expr(e):
        match e:
            case EFragment(body, ref):
                escapes = collect_injections(body)
                args = [
                    EApp(EConst(Builtin(f"{i.conv}^s")), i.target) for i in escapes
                ] or [EConst(UNIT)]
                return EFragCall(ref, in_functor, args, span=e.span)
            case EApp(f, a):
                return EApp(on_expr(f), on_expr(a), span=e.span)
            case ELam(p, b):
                return ELam(p, on_expr(b), span=e.span)
            case ELet(x, b, c):
                return ELet(x, on_expr(b), on_expr(c), span=e.span)
            case _:
                return e

    def on_mod(m):
        match m:
            case MStruct(items, ref):
                return MStruct([on_decl(x) for x in items], ref, span=m.span)
            case MFunctor(p, aty, body, mixed):
                return MFunctor(
                    p, slice_modtype(aty, "server"), on_mod(body), mixed, span=m.span
                )
            case MConstraint(body, mt):
                return MConstraint(on_mod(body), slice_modtype(mt, "server"), span=m.span)
            case MApply(f, a):
                return MApply(on_mod(f), on_mod(a), span=m.span)
            case _:
                return m

    def on_decl(dd):
        match dd:
            case DLet(_, x, e):
                return DLet(Loc.BASE, x, on_expr(e), span=dd.span)
            case DType(_, x, params, body):
                return DType(
                    Loc.BASE,
                    x,
                    params,
                    slice_type(body, "server") if body is not None else None,
                )
            case DModule(_, x, m):
                return DModule(Loc.BASE, x, on_mod(m), span=dd.span)
        raise TypeError(dd)

    return on_decl(node)


def _map_injections(d, fn):
    """Replace injections (outside fragments) in a client declaration."""

    def on_expr(e):
        match e:
            case EInjection():
                return fn(e)
            case EFragment():
                return e
            case EApp(f, a):
                return EApp(on_expr(f), on_expr(a), span=e.span)
            case ELam(p, b):
                return ELam(p, on_expr(b), span=e.span)
            case ELet(x, b, c):
                return ELet(x, on_expr(b), on_expr(c), span=e.span)
            case _:
                return e

    def on_mod(m):
        match m:
            case MStruct(items, ref):
                return MStruct([on_decl(x) for x in items], ref, span=m.span)
            case MFunctor(p, aty, body, mixed):
                return MFunctor(p, slice_modtype(aty, "client"), on_mod(body), False)
            case MConstraint(body, mt):
                return MConstraint(on_mod(body), slice_modtype(mt, "client"))
            case MApply(f, a):
                return MApply(on_mod(f), on_mod(a), span=m.span)
            case _:
                return m

    def on_decl(dd):
        match dd:
            case DLet(_, x, e):
                return DLet(Loc.BASE, x, on_expr(e), span=dd.span)
            case DType(_, x, params, body):
                return DType(Loc.BASE, x, params, body, span=dd.span)
            case DModule(_, x, m):
                return DModule(Loc.BASE, x, on_mod(m), span=dd.span)
        raise TypeError(dd)

    return on_decl(d)


def _map_injections_expr(e, mapping):
    def go(x):
        match x:
            case EInjection():
                return mapping.get(id(x), x)
            case EApp(f, a):
                return EApp(go(f), go(a), span=x.span)
            case ELam(p, b):
                return ELam(p, go(b), span=x.span)
            case ELet(v, b, c):
                return ELet(v, go(b), go(c), span=x.span)
            case EFragment(body, ref):
                return EFragment(go(body), ref, span=x.span)
            case _:
                return x

    return go(e)


def slice_program(program: Program, gen: Optional[RefGen] = None) -> SlicedPair:
    """Slice an annotated, hoisted, sliceable program into its two halves."""
    check_sliceable(program)
    sl = _Slicer(gen or RefGen())
    server: list = []
    client: list = []
    for d in program.decls:
        sv, cl = sl.decl(d, in_functor=False)
        server.extend(sv)
        client.extend(cl)
    return SlicedPair(
        Program(server), Program(client), sl.slot_table, sl.frag_table
    )


def slice(program: Program, side: str, gen: Optional[RefGen] = None) -> Program:
    pair = slice_program(program, gen)
    return pair.server if side == "server" else pair.client


def compile_program(program: Program, gen: Optional[RefGen] = None) -> SlicedPair:
    """The full pre-target pipeline: hoist, annotate, slice."""
    gen = gen or RefGen()
    prepared = annotate(hoist(program), gen)
    return slice_program(prepared, gen)

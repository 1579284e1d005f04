"""The two target languages: server programs with fragment calls and
injection declarations, client programs with global binds and exec.

The server run produces a fragment queue and an injection map; both are
handed to the client run, which consumes queue segments at each `exec!`.
Programs are ML programs (all declarations unlocated) extended with the
target primitives; the weak typing rules are deliberately liberal, safety
is only claimed for slicer output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import syntax as s
from . import typecheck as tc
from .parser import ParseError, Parser, lex
from .syntax import (
    Builtin, DBind, DBindMod, DEnd, DExec, DInjection, DLet, DModule, DType,
    EApp, EConst, EFix, EFragCall, ELam, ELet, ELit, EQualVar, ERef, EVar,
    Ident, Loc, MApply, MConstraint, MFragMod, MFunctor, MPath, MRef, MStruct,
    PAccess, PApply, PVar, Program, Ref, RefGen, UNIT, Unit, pretty_expr,
    pretty_modexpr, pretty_type,
)
from .values import (
    BUILTIN_ARITY, EMPTY_ENV, Env, NonSerializable, RuntimeFailure, StuckTerm,
    Trace, VClosure, VConst, VFunctor, VPartial, VRef, VStruct, delta,
    inject_value, pretty_value,
)

DYN = Ident("dyn", 0)


# --- Queue tokens ------------------------------------------------------------------


@dataclass
class FragCall:
    result: Ref
    fn: Ref
    args: list  # of serializable Values


@dataclass
class ModCall:
    result: Ref
    fn: Ref
    args: list  # of Refs


class EndToken:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "END"


END = EndToken()

FragmentQueue = list
InjectionMap = dict


# --- Server runtime -----------------------------------------------------------------


class ServerTargetEval:
    def __init__(self, gen: Optional[RefGen] = None):
        self.gen = gen or RefGen()
        self.queue: FragmentQueue = []
        self.inj: InjectionMap = {}

    def resolve_refpath(self, env: Env, ref: Ref, dyn: bool) -> Ref:
        if not dyn:
            return ref
        base = env.lookup_name("dyn")
        if not isinstance(base, VRef):
            raise RuntimeFailure("dyn is not bound to a module reference")
        return ref.with_prefix(base.ref)

    def eval_expr(self, env: Env, e):
        match e:
            case EConst(v):
                if isinstance(v, Builtin):
                    return VPartial(v.name, ()), ()
                return VConst(v), ()
            case ELit(v):
                return v, ()
            case EVar(x):
                return env.lookup(x), ()
            case EQualVar(p, name):
                vm, tr = self.eval_path(env, p)
                if not isinstance(vm, VStruct):
                    raise StuckTerm(f"{s.pretty_path(p)} is not a structure value")
                return vm.lookup(name), tr
            case EFix():
                return VPartial("fix", ()), ()
            case EApp(f, a):
                fv, t1 = self.eval_expr(env, f)
                av, t2 = self.eval_expr(env, a)
                rv, t3 = self.apply(fv, av)
                return rv, t1 + t2 + t3
            case ELam(p, b):
                return VClosure(p, env, b), ()
            case ELet(x, bound, body):
                bv, t1 = self.eval_expr(env, bound)
                rv, t2 = self.eval_expr(env.bind(x, bv), body)
                return rv, t1 + t2
            case EFragCall(ref, dyn, args):
                fn = self.resolve_refpath(env, ref, dyn)
                tr: Trace = ()
                vals = []
                for a in args:
                    v, t = self.eval_expr(env, a)
                    vals.append(inject_value(v))
                    tr = tr + t
                r = self.gen.fresh("r")
                self.queue.append(FragCall(r, fn, vals))
                return VRef(r), tr
            case ERef(ref, dyn):
                return VRef(self.resolve_refpath(env, ref, dyn)), ()
        raise TypeError(e)

    def apply(self, fv, av):
        match fv:
            case VClosure(p, cenv, body):
                return self.eval_expr(cenv.bind(p, av), body)
            case VPartial("fix", ()):
                hidden = Ident("<fix-arg>", -1)
                xv = Ident("x", -1)
                unroll = VClosure(
                    xv,
                    EMPTY_ENV.bind(hidden, av),
                    EApp(EApp(EFix(), EVar(hidden)), EVar(xv)),
                )
                return self.apply(av, unroll)
            case VPartial(op, args):
                got = args + (av,)
                if len(got) < BUILTIN_ARITY.get(op, 1):
                    return VPartial(op, got), ()
                return delta(op, got)
            case _:
                raise StuckTerm(f"cannot apply {pretty_value(fv)}")

    def eval_path(self, env: Env, p):
        match p:
            case PVar(x):
                return env.lookup(x), ()
            case PAccess(base, name):
                vm, tr = self.eval_path(env, base)
                if not isinstance(vm, VStruct):
                    raise StuckTerm(f"{s.pretty_path(base)} is not a structure value")
                return vm.lookup(name), tr
            case PApply(f, a):
                fv, t1 = self.eval_path(env, f)
                av, t2 = self.eval_path(env, a)
                vm, t3 = self.apply_mod(fv, av)
                return vm, t1 + t2 + t3
        raise TypeError(p)

    def eval_mod(self, env: Env, m):
        match m:
            case MPath(p):
                return self.eval_path(env, p)
            case MRef(r):
                return VRef(r), ()
            case MFragMod(ref, arg_paths):
                arg_refs = []
                for p in arg_paths:
                    vm, _ = self.eval_path(env, p)
                    if not isinstance(vm, VStruct):
                        raise StuckTerm("get-dyn applied to a non-structure")
                    dynv = vm.lookup("dyn")
                    if not isinstance(dynv, VRef):
                        raise RuntimeFailure(f"{s.pretty_path(p)} has no dyn field")
                    arg_refs.append(dynv.ref)
                bigr = self.gen.fresh("R")
                self.queue.append(ModCall(bigr, ref, arg_refs))
                return VRef(bigr), ()
            case MStruct(items, _):
                return self.eval_decls(env, items)
            case MConstraint(body, _):
                return self.eval_mod(env, body)
            case MFunctor(p, aty, body, _):
                return VFunctor(env, p, body, False), ()
            case MApply(f, a):
                fv, t1 = self.eval_mod(env, f)
                av, t2 = self.eval_mod(env, a)
                vm, t3 = self.apply_mod(fv, av)
                return vm, t1 + t2 + t3
        raise TypeError(m)

    def apply_mod(self, fv, av):
        if not isinstance(fv, VFunctor):
            raise StuckTerm(f"cannot apply non-functor {pretty_value(fv)}")
        return self.eval_mod(fv.env.bind(fv.param, av), fv.body)

    def eval_decls(self, env: Env, decls):
        items: list = []
        tr: Trace = ()
        for d in decls:
            match d:
                case DType():
                    pass
                case DLet(_, x, e):
                    v, t = self.eval_expr(env, e)
                    env = env.bind(x, v)
                    items.append((x.name, v))
                    tr = tr + t
                case DModule(_, x, m):
                    vm, t = self.eval_mod(env, m)
                    env = env.bind(x, vm)
                    items.append((x.name, vm))
                    tr = tr + t
                case DInjection(slot, e):
                    v, t = self.eval_expr(env, e)
                    self.inj[slot] = inject_value(v)
                    tr = tr + t
                case DEnd():
                    self.queue.append(END)
                case _:
                    raise StuckTerm(f"client-side form on the server: {d!r}")
        return VStruct(items), tr


def run_server_target(program: Program, gen: Optional[RefGen] = None):
    ev = ServerTargetEval(gen)
    vm, trace = ev.eval_decls(EMPTY_ENV, program.decls)
    return vm, ev.queue, ev.inj, trace


# --- Client runtime ------------------------------------------------------------------


class ClientTargetEval:
    def __init__(self, queue: FragmentQueue, inj: InjectionMap):
        self.queue = list(queue)
        self.zeta: dict = dict(inj)

    def deref(self, ref: Ref):
        if ref not in self.zeta:
            raise RuntimeFailure(f"unbound reference {ref.render()}")
        return self.zeta[ref]

    def resolve_refpath(self, env: Env, ref: Ref, dyn: bool) -> Ref:
        if not dyn:
            return ref
        base = env.lookup_name("dyn")
        if not isinstance(base, VRef):
            raise RuntimeFailure("dyn is not bound to a module reference")
        return ref.with_prefix(base.ref)

    def eval_expr(self, env: Env, e):
        match e:
            case EConst(v):
                if isinstance(v, Builtin):
                    return VPartial(v.name, ()), ()
                return VConst(v), ()
            case ELit(v):
                return v, ()
            case EVar(x):
                return env.lookup(x), ()
            case EQualVar(p, name):
                vm, tr = self.eval_path(env, p)
                if not isinstance(vm, VStruct):
                    raise StuckTerm(f"{s.pretty_path(p)} is not a structure value")
                return vm.lookup(name), tr
            case EFix():
                return VPartial("fix", ()), ()
            case EApp(f, a):
                fv, t1 = self.eval_expr(env, f)
                av, t2 = self.eval_expr(env, a)
                rv, t3 = self.apply(fv, av)
                return rv, t1 + t2 + t3
            case ELam(p, b):
                return VClosure(p, env, b), ()
            case ELet(x, bound, body):
                bv, t1 = self.eval_expr(env, bound)
                rv, t2 = self.eval_expr(env.bind(x, bv), body)
                return rv, t1 + t2
            case ERef(ref, dyn):
                return self.deref(self.resolve_refpath(env, ref, dyn)), ()
        raise TypeError(e)

    def apply(self, fv, av):
        match fv:
            case VClosure(p, cenv, body):
                return self.eval_expr(cenv.bind(p, av), body)
            case VPartial("fix", ()):
                hidden = Ident("<fix-arg>", -1)
                xv = Ident("x", -1)
                unroll = VClosure(
                    xv,
                    EMPTY_ENV.bind(hidden, av),
                    EApp(EApp(EFix(), EVar(hidden)), EVar(xv)),
                )
                return self.apply(av, unroll)
            case VPartial(op, args):
                got = args + (av,)
                if len(got) < BUILTIN_ARITY.get(op, 1):
                    return VPartial(op, got), ()
                return delta(op, got, deref=self.deref)
            case _:
                raise StuckTerm(f"cannot apply {pretty_value(fv)}")

    def eval_path(self, env: Env, p):
        match p:
            case PVar(x):
                return env.lookup(x), ()
            case PAccess(base, name):
                vm, tr = self.eval_path(env, base)
                if not isinstance(vm, VStruct):
                    raise StuckTerm(f"{s.pretty_path(base)} is not a structure value")
                return vm.lookup(name), tr
            case PApply(f, a):
                fv, t1 = self.eval_path(env, f)
                av, t2 = self.eval_path(env, a)
                vm, t3 = self.apply_mod(fv, av)
                return vm, t1 + t2 + t3
        raise TypeError(p)

    def eval_mod(self, env: Env, m):
        match m:
            case MPath(p):
                return self.eval_path(env, p)
            case MRef(r):
                return self.deref(r), ()
            case MStruct(items, _):
                return self.eval_block(env, items)
            case MConstraint(body, _):
                return self.eval_mod(env, body)
            case MFunctor(p, aty, body, _):
                return VFunctor(env, p, body, False), ()
            case MApply(f, a):
                fv, t1 = self.eval_mod(env, f)
                av, t2 = self.eval_mod(env, a)
                vm, t3 = self.apply_mod(fv, av)
                return vm, t1 + t2 + t3
        raise TypeError(m)

    def apply_mod(self, fv, av, dyn_ref: Optional[Ref] = None):
        if not isinstance(fv, VFunctor):
            raise StuckTerm(f"cannot apply non-functor {pretty_value(fv)}")
        env = fv.env
        if dyn_ref is not None:
            env = env.bind(DYN, VRef(dyn_ref))
        return self.eval_mod(env.bind(fv.param, av), fv.body)

    def exec_segment(self, env: Env):
        """Run queued calls up to and including the next END token."""
        tr: Trace = ()
        while True:
            if not self.queue:
                raise RuntimeFailure("exec! with no matching END in the fragment queue")
            tok = self.queue.pop(0)
            if tok is END:
                return tr
            match tok:
                case FragCall(r, fn, args):
                    fv = self.deref(fn)
                    v = fv
                    for a in args:
                        v, t = self.apply(v, a)
                        tr = tr + t
                    if not args:
                        raise RuntimeFailure("fragment call with no arguments")
                    self.zeta[r] = v
                case ModCall(bigr, fn, arg_refs):
                    fv = self.deref(fn)
                    vm = fv
                    for i, aref in enumerate(arg_refs):
                        arg = self.deref(aref)
                        if not isinstance(vm, VFunctor):
                            raise StuckTerm("module call to a non-functor")
                        last = i == len(arg_refs) - 1
                        vm, t = self.apply_mod(vm, arg, dyn_ref=bigr if last else None)
                        tr = tr + t
                    self.zeta[bigr] = vm
                case _:
                    raise RuntimeFailure(f"bad queue token {tok!r}")

    def eval_block(self, env: Env, decls):
        items: list = []
        tr: Trace = ()
        for d in decls:
            match d:
                case DType():
                    pass
                case DLet(_, x, e):
                    v, t = self.eval_expr(env, e)
                    env = env.bind(x, v)
                    items.append((x.name, v))
                    tr = tr + t
                case DModule(_, x, m):
                    vm, t = self.eval_mod(env, m)
                    env = env.bind(x, vm)
                    items.append((x.name, vm))
                    tr = tr + t
                case DBind(ref, dyn, e):
                    target = self.resolve_refpath(env, ref, dyn)
                    v, t = self.eval_expr(env, e)
                    self.zeta[target] = v
                    tr = tr + t
                case DBindMod(ref, dyn, m):
                    target = self.resolve_refpath(env, ref, dyn)
                    vm, t = self.eval_mod(env, m)
                    self.zeta[target] = vm
                    tr = tr + t
                case DExec():
                    tr = tr + self.exec_segment(env)
                case _:
                    raise StuckTerm(f"server-side form on the client: {d!r}")
        return VStruct(items), tr


def run_client_target(program: Program, queue: FragmentQueue, inj: InjectionMap):
    ev = ClientTargetEval(queue, inj)
    vm, trace = ev.eval_block(EMPTY_ENV, program.decls)
    try:
        ret = vm.lookup("return")
    except RuntimeFailure:
        raise RuntimeFailure("client program defines no `return`") from None
    return ret, trace, ev


# --- Weak typechecking -----------------------------------------------------------------


def typecheck_target(program: Program, side: str):
    """Typecheck a target program with the weak rules layered on the ML
    checker (everything at the base location); returns its signature with
    dyn fields and bind/exec/injection items omitted."""
    checker = tc.Checker()
    _patch_target_rules(checker, side)
    env: tc.Env = ()
    items = []
    for d in program.decls:
        match d:
            case DEnd() | DExec():
                if (side == "server") != isinstance(d, DEnd):
                    raise tc.TypeCheckError(
                        tc.MISMATCH, f"{d.__class__.__name__} on the wrong side"
                    )
            case DInjection(_, e):
                if side != "server":
                    raise tc.TypeCheckError(tc.MISMATCH, "injection on the client side")
                t = checker.type_expr(env, Loc.BASE, e)
                checker.unify(env, Loc.BASE, t, tc.T_SERIAL)
            case DBind(_, _, e):
                if side != "client":
                    raise tc.TypeCheckError(tc.MISMATCH, "bind on the server side")
                checker.type_expr(env, Loc.BASE, e)
            case DBindMod(ref, _, m):
                if side != "client":
                    raise tc.TypeCheckError(tc.MISMATCH, "bind_m on the server side")
                mt = checker.type_module(env, Loc.BASE, m)
                checker.ref_types[ref] = mt
            case DModule(_, x, _) if x.name == "dyn":
                pass
            case _:
                item = checker.type_decl(env, Loc.BASE, d)
                env = tc.env_add(env, item)
                items.append(item)
    return tc.MTSig(items)


# After slicing, converter halves work on sliced types: the fragment type
# has become the opaque fragty (see the environment-slicing rules).
_A_CLIENT = s.TVar("a", Loc.CLIENT)
_TARGET_HALVES = {
    "serial^s": s.Scheme((), s.TArrow(tc.T_SERIAL, tc.T_SERIAL)),
    "serial^c": s.Scheme((), s.TArrow(tc.T_SERIAL, tc.T_SERIAL)),
    "int^s": s.Scheme((), s.TArrow(tc.T_INT, tc.T_SERIAL)),
    "int^c": s.Scheme((), s.TArrow(tc.T_SERIAL, tc.T_INT)),
    "fragment^s": s.Scheme((), s.TArrow(tc.T_FRAGTY, tc.T_SERIAL)),
    "fragment^c": s.Scheme((("a", Loc.CLIENT),), s.TArrow(tc.T_SERIAL, _A_CLIENT)),
}


def _patch_target_rules(checker: tc.Checker, side: str) -> None:
    """Extend a checker instance with the target-only forms."""
    checker.ref_types = {}
    orig_expr = checker.type_expr
    orig_mod = checker.type_module

    def type_expr(env, loc, e):
        match e:
            case EConst(Builtin(name)) if name in _TARGET_HALVES:
                return checker.instantiate(_TARGET_HALVES[name], loc)
            case EFragCall(_, _, args):
                if side != "server":
                    raise tc.TypeCheckError(tc.MISMATCH, "fragment call on the client")
                for a in args:
                    ta = checker.type_expr(env, loc, a)
                    # the unit literal stands in for "no escaped values"
                    if isinstance(a, EConst) and isinstance(a.value, Unit):
                        continue
                    checker.unify(env, loc, ta, tc.T_SERIAL)
                return tc.T_FRAGTY
            case ERef():
                if side != "client":
                    raise tc.TypeCheckError(tc.MISMATCH, "reference expression on the server")
                return tc.T_SERIAL
            case ELit():
                return tc.T_SERIAL
            case _:
                return orig_expr(env, loc, e)

    def type_module(env, mloc, m):
        match m:
            case MRef(r):
                if r in checker.ref_types:
                    return checker.ref_types[r]
                return tc.MTSig([])
            case MFragMod():
                return tc.MTSig([])
            case MStruct(items, ref):
                sig_items = []
                env2 = env
                for d in items:
                    match d:
                        case DEnd() | DExec():
                            continue
                        case DInjection(_, e):
                            t = checker.type_expr(env2, Loc.BASE, e)
                            checker.unify(env2, Loc.BASE, t, tc.T_SERIAL)
                            continue
                        case DBind(_, _, e):
                            checker.type_expr(env2, Loc.BASE, e)
                            continue
                        case DBindMod(bref, _, bm):
                            checker.ref_types[bref] = checker.type_module(env2, Loc.BASE, bm)
                            continue
                        case DModule(_, x, _) if x.name == "dyn":
                            continue
                    item = checker.type_decl(env2, Loc.BASE, d)
                    env2 = tc.env_add(env2, item)
                    sig_items.append(item)
                return tc.MTSig(sig_items)
            case _:
                return orig_mod(env, mloc, m)

    checker.type_expr = type_expr
    checker.type_module = type_module


# --- Printing -----------------------------------------------------------------------


def pretty_target_decl(d, indent: int = 0) -> str:
    pad = "  " * indent
    match d:
        case DLet(_, x, e):
            return f"{pad}let {x.name} = {pretty_expr(e)}"
        case DType(_, x, params, body):
            head = f"{pad}type {s._params_str(params)}{x.name}"
            return head if body is None else f"{head} = {pretty_type(body)}"
        case DModule(_, x, m):
            return f"{pad}module {x.name} = {pretty_target_mod(m, indent)}"
        case DBindMod(ref, dyn, m):
            rp = f"dyn.{ref.render()}" if dyn else f"&{ref.render()}"
            return f"{pad}bind_m {rp} = {pretty_target_mod(m, indent)}"
        case _:
            return s.pretty_decl(d, indent)


def pretty_target_mod(m, indent: int = 0) -> str:
    pad = "  " * indent
    match m:
        case MStruct(items, _):
            if not items:
                return "struct end"
            lines = [pretty_target_decl(d, indent + 1) for d in items]
            return "struct\n" + "\n".join(lines) + f"\n{pad}end"
        case MFunctor(p, aty, body, _):
            return (
                f"functor ({p.name} : {s.pretty_modtype(aty, indent)}) -> "
                f"{pretty_target_mod(body, indent)}"
            )
        case _:
            return s.pretty_modexpr(m, indent)


def pretty_target_program(p: Program) -> str:
    return "\n".join(pretty_target_decl(d) for d in p.decls) + ("\n" if p.decls else "")


# --- Parsing ------------------------------------------------------------------------


def _ref_kind(name: str) -> str:
    if name[:1].isupper():
        return "R"
    if name[:1] in ("f", "r", "x"):
        return name[0]
    return "x"


class TargetParser(Parser):
    """Parser for serialized target programs (.tgt files)."""

    def parse_ref(self) -> Ref:
        self.expect_punct("&")
        parts = [self.expect_name().text]
        while self.at_punct(".") and self.peek().kind in ("LIDENT", "UIDENT"):
            self.next()
            parts.append(self.expect_name().text)
        ref = None
        for part in parts:
            ref = Ref(_ref_kind(part), part, ref)
        return ref

    def expect_name(self):
        if self.tok.kind not in ("LIDENT", "UIDENT"):
            self.error("expected a name")
        return self.next()

    def parse_refpath(self):
        """Returns (ref, dyn flag)."""
        if self.at_word("dyn"):
            self.next()
            self.expect_punct(".")
            name = self.expect_name().text
            return Ref(_ref_kind(name), name), True
        return self.parse_ref(), False

    def parse_decl(self):
        t = self.tok
        if self.at_word("end") and self.peek().kind == "PUNCT" and self.peek().text == "!":
            self.next()
            self.next()
            return DEnd(span=self.span(t))
        if self.at_word("exec") and self.peek().kind == "PUNCT" and self.peek().text == "!":
            self.next()
            self.next()
            return DExec(span=self.span(t))
        if self.at_word("injection"):
            self.next()
            slot = self.parse_ref()
            e = self.parse_atom()
            return DInjection(slot, e, span=self.span(t))
        if self.at_word("bind"):
            self.next()
            ref, dyn = self.parse_refpath()
            self.expect_punct("=")
            e = self.parse_expr()
            return DBind(ref, dyn, e, span=self.span(t))
        if self.at_word("bind_m"):
            self.next()
            ref, dyn = self.parse_refpath()
            self.expect_punct("=")
            m = self.parse_modexpr()
            return DBindMod(ref, dyn, m, span=self.span(t))
        if self.at_word("let"):
            self.next()
            name = self.expect("LIDENT").text
            params = []
            while self.tok.kind == "LIDENT":
                params.append(self.next().text)
            self.expect_punct("=")
            body = self.parse_expr()
            for p in reversed(params):
                body = ELam(Ident(p), body, span=self.span(t))
            return DLet(Loc.BASE, Ident(name), body, span=self.span(t))
        if self.at_word("type"):
            self.next()
            params = self.parse_type_params()
            name = self.expect("LIDENT").text
            body = None
            if self.at_punct("="):
                self.next()
                body = self.parse_type()
            return DType(Loc.BASE, Ident(name), tuple(params), body, span=self.span(t))
        if self.at_word("module"):
            self.next()
            if self.at_word("dyn"):
                self.next()
                name = "dyn"
            else:
                name = self.expect("UIDENT").text
            self.expect_punct("=")
            m = self.parse_modexpr()
            return DModule(Loc.BASE, Ident(name), m, span=self.span(t))
        self.error("expected a target declaration")

    def parse_modexpr(self):
        t = self.tok
        if self.at_punct("&"):
            return MRef(self.parse_ref(), span=self.span(t))
        if self.at_word("fragment_m"):
            self.next()
            ref = self.parse_ref()
            self.expect_punct("(")
            args = []
            if not self.at_punct(")"):
                while True:
                    self.expect_word("dyn")
                    self.expect_punct("(")
                    args.append(self.parse_path())
                    self.expect_punct(")")
                    if self.at_punct(","):
                        self.next()
                        continue
                    break
            self.expect_punct(")")
            return MFragMod(ref, args, span=self.span(t))
        if self.at_word("struct"):
            self.next()
            items = []
            while not (
                self.at_word("end")
                and not (self.peek().kind == "PUNCT" and self.peek().text == "!")
            ):
                if self.at("EOF"):
                    self.error("unterminated struct", t)
                items.append(self.parse_decl())
            self.next()
            return MStruct(items, span=self.span(t))
        if self.at_word("functor"):
            self.next()
            self.expect_punct("(")
            pname = self.expect("UIDENT").text
            self.expect_punct(":")
            argty = self.parse_modtype()
            self.expect_punct(")")
            self.expect_punct("->")
            body = self.parse_modexpr()
            return MFunctor(Ident(pname), argty, body, False, span=self.span(t))
        return super().parse_modexpr()

    def parse_atom(self):
        t = self.tok
        if self.at_punct("&"):
            return ERef(self.parse_ref(), False, span=self.span(t))
        if self.at_word("dyn"):
            self.next()
            self.expect_punct(".")
            name = self.expect_name().text
            return ERef(Ref(_ref_kind(name), name), True, span=self.span(t))
        if self.at_word("fragment") and (
            self.peek().text == "&" or self.peek().text == "dyn"
        ):
            self.next()
            ref, dyn = self.parse_refpath()
            self.expect_punct("(")
            args: list = []
            if self.at_punct(")"):
                args = [EConst(UNIT)]
            else:
                while True:
                    args.append(self.parse_expr())
                    if self.at_punct(","):
                        self.next()
                        continue
                    break
            self.expect_punct(")")
            return EFragCall(ref, dyn, args, span=self.span(t))
        return super().parse_atom()

    def starts_atom(self) -> bool:
        if self.at_punct("&"):
            return True
        t = self.tok
        if t.kind == "LIDENT" and t.text in ("dyn", "fragment"):
            return True
        return super().starts_atom()

    def parse_program_eof(self) -> Program:
        decls = []
        while not self.at("EOF"):
            decls.append(self.parse_decl())
        return Program(decls)


def parse_target(text: str) -> Program:
    return TargetParser(text).parse_program_eof()


# --- Wire formats --------------------------------------------------------------------


def serialize_value(v) -> str:
    """Tagged text form of a serial value: i:<digits>, u:, s:<len>:<bytes>,
    r:<refid>."""
    match v:
        case VConst(x) if isinstance(x, bool):
            raise NonSerializable("no boolean constants")
        case VConst(int() as x):
            return f"i:{x}"
        case VConst(Unit()):
            return "u:"
        case VConst(str() as x):
            raw = x.encode("utf-8")
            return f"s:{len(raw)}:{x}"
        case VRef(r):
            return f"r:{r.render()}"
    raise NonSerializable(f"cannot serialize {pretty_value(v)}")


def parse_ref_text(text: str) -> Ref:
    ref = None
    for part in text.split("."):
        ref = Ref(_ref_kind(part), part, ref)
    if ref is None:
        raise ValueError("empty reference")
    return ref


class _Cursor:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def eof(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.text)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def take_until_ws(self) -> str:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] not in " \t":
            self.pos += 1
        return self.text[start : self.pos]


def parse_serial(cur: _Cursor):
    cur.skip_ws()
    text = cur.text
    if text.startswith("i:", cur.pos):
        cur.pos += 2
        tok = cur.take_until_ws()
        return VConst(int(tok))
    if text.startswith("u:", cur.pos):
        cur.pos += 2
        return VConst(UNIT)
    if text.startswith("r:", cur.pos):
        cur.pos += 2
        return VRef(parse_ref_text(cur.take_until_ws()))
    if text.startswith("s:", cur.pos):
        cur.pos += 2
        colon = text.index(":", cur.pos)
        n = int(text[cur.pos : colon])
        raw = text[colon + 1 :]
        out = raw.encode("utf-8")[:n].decode("utf-8")
        cur.pos = colon + 1 + len(out)
        return VConst(out)
    raise ValueError(f"bad serial value at {text[cur.pos:cur.pos+20]!r}")


def parse_serial_text(text: str):
    return parse_serial(_Cursor(text))


def queue_to_text(queue: FragmentQueue) -> str:
    lines = []
    for tok in queue:
        if tok is END:
            lines.append("END")
        elif isinstance(tok, FragCall):
            args = " ".join(serialize_value(v) for v in tok.args)
            lines.append(f"FRAG {tok.result.render()} {tok.fn.render()} {args}".rstrip())
        elif isinstance(tok, ModCall):
            args = " ".join(r.render() for r in tok.args)
            lines.append(f"MOD {tok.result.render()} {tok.fn.render()} {args}".rstrip())
        else:
            raise TypeError(tok)
    return "\n".join(lines) + ("\n" if lines else "")


def queue_from_text(text: str) -> FragmentQueue:
    queue: FragmentQueue = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line == "END":
            queue.append(END)
            continue
        kind, rest = line.split(None, 1)
        if kind == "FRAG":
            cur = _Cursor(rest)
            result = parse_ref_text(cur.take_until_ws())
            fn = parse_ref_text(cur.take_until_ws())
            args = []
            while not cur.eof():
                args.append(parse_serial(cur))
            queue.append(FragCall(result, fn, args))
        elif kind == "MOD":
            parts = rest.split()
            queue.append(
                ModCall(
                    parse_ref_text(parts[0]),
                    parse_ref_text(parts[1]),
                    [parse_ref_text(p) for p in parts[2:]],
                )
            )
        else:
            raise ValueError(f"bad queue line {line!r}")
    return queue


def inj_to_text(inj: InjectionMap) -> str:
    lines = [f"{slot.render()} {serialize_value(v)}" for slot, v in inj.items()]
    return "\n".join(lines) + ("\n" if lines else "")


def inj_from_text(text: str) -> InjectionMap:
    inj: InjectionMap = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        slot_text, rest = line.split(None, 1)
        inj[parse_ref_text(slot_text)] = parse_serial_text(rest)
    return inj


def trace_to_text(trace: Trace) -> str:
    return "\n".join(pretty_value(v) for v in trace) + ("\n" if trace else "")

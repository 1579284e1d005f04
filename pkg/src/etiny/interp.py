"""The interpreted semantics.

Running a program proceeds in two stages: the server stage evaluates base,
server and mixed declarations, resolving injections and emitting a client
program (ordinary declarations plus the global-binding instructions
`bind env`, `bind r = f with e` and `bind X = struct ... end [with F]`);
the client stage then evaluates that program with a global environment of
references. Traces record printed values in execution order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import syntax as s
from .syntax import (
    Builtin, DLet, DModule, DType, EApp, EConst, EFix, EFragment, EInjection,
    ELam, ELet, ELit, EQualVar, EVar, Ident, Loc, MApply, MConstraint,
    MFunctor, MPath, MRef, MStruct, PAccess, PApply, PVar, Program, Ref,
    RefGen, annotate, collect_fragments, pretty_decl, pretty_expr,
    pretty_modexpr,
)
from .values import (
    EMPTY_ENV, Env, NonSerializable, RuntimeFailure, StuckTerm, Trace,
    VClosure, VConst, VFunctor, VPartial, VRef, VStruct, Value, delta,
    BUILTIN_ARITY, inject_value, pretty_value,
)


# --- Client program instructions ------------------------------------------------


@dataclass
class CDecl:
    decl: object  # a residual (injection-free) declaration


@dataclass
class CBindEnv:
    ref: Ref


@dataclass
class CBindExpr:
    target: Ref
    envref: Ref
    expr: object


@dataclass
class CBindStruct:
    target: Ref
    envref: Optional[Ref]  # None: evaluate in the current environment
    body: list


ClientProgram = list


def pretty_instr(ins, indent: int = 0) -> str:
    pad = "  " * indent
    match ins:
        case CDecl(d):
            return s.pretty_decl(d, indent)
        case CBindEnv(r):
            return f"{pad}bind env {r.render()}"
        case CBindExpr(t, f, e):
            return f"{pad}bind {t.render()} = {f.render()} with {pretty_expr(e)}"
        case CBindStruct(t, f, body):
            hdr = f"{pad}bind {t.render()} = struct"
            inner = "\n".join(pretty_instr(i, indent + 1) for i in body)
            tail = f"{pad}end" + (f" with {f.render()}" if f is not None else "")
            return "\n".join(x for x in (hdr, inner, tail) if x)
    raise TypeError(ins)


def pretty_client_program(prog: ClientProgram) -> str:
    return "\n".join(pretty_instr(i) for i in prog) + ("\n" if prog else "")


# --- Helpers --------------------------------------------------------------------


def _prefix_fragment_refs(node, prefix: Ref):
    """Prefix every syntactic fragment annotation in `node` with `prefix`
    (the substitution f_i -> X.f_i of the mixed-structure rules)."""

    def on_expr(e):
        match e:
            case EFragment(body, ref):
                newref = ref.with_prefix(prefix) if ref is not None else ref
                return EFragment(on_expr(body), newref, span=e.span)
            case EApp(f, a):
                return EApp(on_expr(f), on_expr(a), span=e.span)
            case ELam(p, b):
                return ELam(p, on_expr(b), span=e.span)
            case ELet(x, b, c):
                return ELet(x, on_expr(b), on_expr(c), span=e.span)
            case EInjection(t, conv):
                return EInjection(on_expr(t), conv, span=e.span)
            case _:
                return e

    def on_mod(m):
        match m:
            case MStruct(items, ref):
                return MStruct([on_decl(d) for d in items], ref, span=m.span)
            case MFunctor(p, aty, body, mixed):
                return MFunctor(p, aty, on_mod(body), mixed, span=m.span)
            case MConstraint(body, mt):
                return MConstraint(on_mod(body), mt, span=m.span)
            case MApply(f, a):
                return MApply(on_mod(f), on_mod(a), span=m.span)
            case _:
                return m

    def on_decl(d):
        match d:
            case DLet(loc, x, e):
                return DLet(loc, x, on_expr(e), span=d.span)
            case DModule(loc, x, m):
                return DModule(loc, x, on_mod(m), span=d.span)
            case _:
                return d

    if isinstance(node, list):
        return [on_decl(d) for d in node]
    return on_decl(node)


def mixed_struct_ids(m) -> list:
    """References of mixed structures whose evaluation is deferred (they sit
    under a functor binder); their environments must be captured now."""
    out: list = []

    def go(node, under_functor: bool):
        match node:
            case MStruct(items, ref):
                if under_functor and ref is not None:
                    out.append(ref)
                for d in items:
                    if isinstance(d, DModule):
                        go(d.body, under_functor)
            case MFunctor(_, _, body, _):
                go(body, True)
            case MConstraint(body, _):
                go(body, under_functor)
            case MApply(f, a):
                go(f, under_functor)
                go(a, under_functor)
            case _:
                pass

    go(m, False)
    return out


def _peel_mixed_params(fv: VFunctor):
    params = [fv.param]
    body = fv.body
    while isinstance(body, MFunctor) and body.mixed:
        params.append(body.param)
        body = body.body
    return params, body


def erase_client(body):
    """Client restriction of a structure body: client and base declarations
    survive, server declarations disappear; mixed submodules recurse."""
    out = []
    for d in body:
        match d:
            case DLet(loc, _, _) | DType(loc, _, _, _) if loc in (Loc.CLIENT, Loc.BASE):
                out.append(d)
            case DModule(loc, x, m) if loc in (Loc.CLIENT, Loc.BASE):
                out.append(d)
            case DModule(Loc.MIXED, x, m):
                out.append(DModule(Loc.MIXED, x, _erase_client_mod(m), span=d.span))
            case _:
                pass
    return out


def _erase_client_mod(m):
    match m:
        case MStruct(items, ref):
            return MStruct(erase_client(items), ref, span=m.span)
        case MFunctor(p, aty, body, mixed):
            return MFunctor(p, aty, _erase_client_mod(body), mixed, span=m.span)
        case MConstraint(body, mt):
            return MConstraint(_erase_client_mod(body), mt, span=m.span)
        case _:
            return m


# --- Server-stage evaluation -----------------------------------------------------


class ServerEval:
    """Evaluates the server part of a program, accumulating the client
    program in trace order. Contexts: 'base', 'server', 'mixed'."""

    def __init__(self, gen: Optional[RefGen] = None):
        self.gen = gen or RefGen()

    # expressions ---------------------------------------------------------

    def eval_expr(self, env: Env, e, ctx: str, out: list):
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
                vm, tr = self.eval_path(env, p, ctx, out)
                if not isinstance(vm, VStruct):
                    raise StuckTerm(f"{s.pretty_path(p)} is not a structure value")
                return vm.lookup(name), tr
            case EFix():
                return VPartial("fix", ()), ()
            case EApp(f, a):
                fv, t1 = self.eval_expr(env, f, ctx, out)
                av, t2 = self.eval_expr(env, a, ctx, out)
                rv, t3 = self.apply(fv, av, ctx, out)
                return rv, t1 + t2 + t3
            case ELam(p, b):
                return VClosure(p, env, b), ()
            case ELet(x, bound, body):
                bv, t1 = self.eval_expr(env, bound, ctx, out)
                rv, t2 = self.eval_expr(env.bind(x, bv), body, ctx, out)
                return rv, t1 + t2
            case EFragment(body, ref):
                if ctx == "base":
                    raise StuckTerm("fragment reached base evaluation")
                if ref is None:
                    raise StuckTerm("fragment without annotation; run annotate first")
                residual, tr = self.eval_client_context_expr(env, body, out)
                r = self.gen.fresh("r")
                out.append(CBindExpr(r, ref, residual))
                return VRef(r), tr
            case EInjection():
                raise StuckTerm("injection reached server evaluation")
        raise TypeError(e)

    def apply(self, fv, av, ctx: str, out: list):
        match fv:
            case VClosure(p, cenv, body):
                return self.eval_expr(cenv.bind(p, av), body, ctx, out)
            case VPartial("fix", ()):
                # Y v -> v (fun x -> Y v x)
                hidden = Ident("<fix-arg>", -1)
                xv = Ident("x", -1)
                unroll = VClosure(
                    xv,
                    EMPTY_ENV.bind(hidden, av),
                    EApp(EApp(EFix(), EVar(hidden)), EVar(xv)),
                )
                return self.apply(av, unroll, ctx, out)
            case VPartial(op, args):
                got = args + (av,)
                if len(got) < BUILTIN_ARITY.get(op, 1):
                    return VPartial(op, got), ()
                return delta(op, got)
            case _:
                raise StuckTerm(f"cannot apply {pretty_value(fv)}")

    def eval_path(self, env: Env, p, ctx: str, out: list):
        match p:
            case PVar(x):
                return env.lookup(x), ()
            case PAccess(base, name):
                vm, tr = self.eval_path(env, base, ctx, out)
                if not isinstance(vm, VStruct):
                    raise StuckTerm(f"{s.pretty_path(base)} is not a structure value")
                return vm.lookup(name), tr
            case PApply(f, a):
                fv, t1 = self.eval_path(env, f, ctx, out)
                av, t2 = self.eval_path(env, a, ctx, out)
                vm, t3 = self.apply_module(fv, av, ctx, out)
                return vm, t1 + t2 + t3
        raise TypeError(p)

    # client contexts (injection resolution) ---------------------------------

    def eval_client_context_expr(self, env: Env, e, out: list):
        match e:
            case EInjection(target, conv):
                return self._resolve_injection(env, target, conv, out)
            case EApp(f, a):
                rf, t1 = self.eval_client_context_expr(env, f, out)
                ra, t2 = self.eval_client_context_expr(env, a, out)
                return EApp(rf, ra, span=e.span), t1 + t2
            case ELam(p, b):
                rb, tr = self.eval_client_context_expr(env, b, out)
                return ELam(p, rb, span=e.span), tr
            case ELet(x, bound, body):
                rb, t1 = self.eval_client_context_expr(env, bound, out)
                rc, t2 = self.eval_client_context_expr(env, body, out)
                return ELet(x, rb, rc, span=e.span), t1 + t2
            case _:
                return e, ()

    def _resolve_injection(self, env: Env, target, conv: str, out: list):
        # ~(e):f  evaluates  f^s e  on the server and leaves  f^c <v>
        tv, t1 = self.eval_expr(env, target, "server", out)
        enc, t2 = self.apply(VPartial(f"{conv}^s", ()), tv, "server", out)
        lit = ELit(inject_value(enc))
        return EApp(EConst(Builtin(f"{conv}^c")), lit), t1 + t2

    def eval_client_context_decl(self, env: Env, d, out: list):
        match d:
            case DLet(loc, x, e):
                re, tr = self.eval_client_context_expr(env, e, out)
                return DLet(loc, x, re, span=d.span), tr
            case DType():
                return d, ()
            case DModule(loc, x, m):
                rm, tr = self.eval_client_context_mod(env, m, out)
                return DModule(loc, x, rm, span=d.span), tr
        raise TypeError(d)

    def eval_client_context_mod(self, env: Env, m, out: list):
        match m:
            case MStruct(items, ref):
                tr: Trace = ()
                rs = []
                for d in items:
                    rd, t = self.eval_client_context_decl(env, d, out)
                    rs.append(rd)
                    tr = tr + t
                return MStruct(rs, ref, span=m.span), tr
            case MFunctor(p, aty, body, mixed):
                rb, tr = self.eval_client_context_mod(env, body, out)
                return MFunctor(p, aty, rb, mixed, span=m.span), tr
            case MConstraint(body, mt):
                rb, tr = self.eval_client_context_mod(env, body, out)
                return MConstraint(rb, mt, span=m.span), tr
            case MApply(f, a):
                rf, t1 = self.eval_client_context_mod(env, f, out)
                ra, t2 = self.eval_client_context_mod(env, a, out)
                return MApply(rf, ra, span=m.span), t1 + t2
            case _:
                return m, ()

    # modules -------------------------------------------------------------------

    def eval_module(self, env: Env, m, ctx: str, out: list):
        """Core-location module evaluation (ML rules plus fragments)."""
        match m:
            case MPath(p):
                return self.eval_path(env, p, ctx, out)
            case MStruct(items, _):
                return self.eval_decls(env, items, ctx, out)
            case MConstraint(body, _):
                return self.eval_module(env, body, ctx, out)
            case MFunctor(p, aty, body, mixed):
                return VFunctor(env, p, body, mixed), ()
            case MApply(f, a):
                fv, t1 = self.eval_module(env, f, ctx, out)
                av, t2 = self.eval_module(env, a, ctx, out)
                vm, t3 = self.apply_module(fv, av, ctx, out)
                return vm, t1 + t2 + t3
            case MRef():
                raise StuckTerm("module reference on the server")
        raise TypeError(m)

    def apply_module(self, fv, av, ctx: str, out: list):
        if not isinstance(fv, VFunctor):
            raise StuckTerm(f"cannot apply non-functor {pretty_value(fv)}")
        if fv.mixed:
            vm, tr = self.apply_mixed(fv, av, out)
            return vm, tr
        venv = fv.env.bind(fv.param, av)
        return self.eval_module(venv, fv.body, ctx, out)

    def apply_mixed(self, fv: VFunctor, av, out: list):
        """StructBeta / NotStructBeta: arguments are collected until the
        annotated structure body is reached, then it is evaluated with
        fragment references prefixed by a fresh module reference."""
        args = fv.pending + (av,)
        params, body = _peel_mixed_params(fv)
        if len(args) < len(params):
            return VFunctor(fv.env, fv.param, fv.body, True, pending=args), ()
        match body:
            case MStruct(items, ref):
                if ref is None:
                    raise StuckTerm("mixed functor body lost its annotation")
                bigr = self.gen.fresh("R")
                env2 = fv.env
                aliases = []
                for p, arg in zip(params, args):
                    if not (isinstance(arg, VStruct) and arg.dyn is not None):
                        raise StuckTerm(
                            "mixed functor applied to a module without a client part"
                        )
                    env2 = env2.bind(p, arg)
                    aliases.append(CDecl(DModule(Loc.MIXED, p, MRef(arg.dyn))))
                items2 = _prefix_fragment_refs(items, bigr)
                inner: list = []
                vm, tr = self.eval_decls(env2, items2, "mixed", inner)
                out.append(CBindStruct(bigr, ref, aliases + inner))
                return VStruct(vm.items, dyn=bigr), tr
            case _:
                # NotStructBeta: evaluate whatever the body is; only the
                # shapes exercised by the paper's examples are supported.
                env2 = fv.env
                for p, arg in zip(params, args):
                    env2 = env2.bind(p, arg)
                vm, _, tr = self.eval_mixed_mod(env2, body, out)
                return vm, tr

    def eval_mixed_mod(self, env: Env, m, out: list):
        """The mixed-module relation: value, client module expression and
        emitted client program."""
        match m:
            case MStruct(items, ref):
                if ref is None:
                    raise StuckTerm("mixed structure without annotation; run annotate")
                items2 = _prefix_fragment_refs(items, ref)
                inner: list = []
                vm, tr = self.eval_decls(env, items2, "mixed", inner)
                out.append(CBindStruct(ref, None, inner))
                return VStruct(vm.items, dyn=ref), MRef(ref), tr
            case MPath(p):
                vm, tr = self.eval_path(env, p, "mixed", out)
                return vm, MPath(p), tr
            case MConstraint(body, _):
                return self.eval_mixed_mod(env, body, out)
            case MFunctor(p, aty, body, mixed=True):
                restricted = _erase_client_mod(MFunctor(p, aty, body, True))
                resolved, tr = self.eval_client_context_mod(env, restricted, out)
                client_fun = MFunctor(p, aty, resolved.body, False)
                return VFunctor(env, p, body, True), client_fun, tr
            case MFunctor(p, aty, body, mixed=False):
                return VFunctor(env, p, body, False), MFunctor(p, aty, body, False), ()
            case MApply(f, a):
                vf, cf, t1 = self.eval_mixed_mod(env, f, out)
                va, ca, t2 = self.eval_mixed_mod(env, a, out)
                vm, t3 = self.apply_module(vf, va, "mixed", out)
                return vm, MApply(cf, ca), t1 + t2 + t3
            case MRef():
                raise StuckTerm("module reference on the server")
        raise TypeError(m)

    # declarations ------------------------------------------------------------------

    def eval_decls(self, env: Env, decls, ctx: str, out: list):
        items: list = []
        tr: Trace = ()
        for d in decls:
            env, new_items, t = self.eval_decl(env, d, ctx, out)
            items.extend(new_items)
            tr = tr + t
        return VStruct(items), tr

    def eval_decl(self, env: Env, d, ctx: str, out: list):
        """One declaration under the mixed/server/base rules. Returns the
        extended environment, the bindings it contributes and its trace."""
        if ctx == "mixed":
            return self._eval_decl_mixed(env, d, out)
        match d:
            case DType():
                return env, [], ()
            case DLet(_, x, e):
                v, tr = self.eval_expr(env, e, ctx, out)
                return env.bind(x, v), [(x.name, v)], tr
            case DModule(_, x, m):
                vm, tr = self.eval_module(env, m, ctx, out)
                return env.bind(x, vm), [(x.name, vm)], tr
        raise TypeError(d)

    def _eval_decl_mixed(self, env: Env, d, out: list):
        loc = d.loc
        if loc is Loc.BASE:
            # evaluated here and replayed verbatim on the client
            match d:
                case DType():
                    out.append(CDecl(d))
                    return env, [], ()
                case DLet(_, x, e):
                    v, tr = self.eval_expr(env, e, "base", out)
                    out.append(CDecl(d))
                    return env.bind(x, v), [(x.name, v)], tr
                case DModule(_, x, m):
                    vm, tr = self.eval_module(env, m, "base", out)
                    out.append(CDecl(d))
                    return env.bind(x, vm), [(x.name, vm)], tr
        if loc is Loc.SERVER:
            for frag in collect_fragments(d):
                if frag.fragref is None:
                    raise StuckTerm("fragment without annotation; run annotate")
                out.append(CBindEnv(frag.fragref))
            match d:
                case DType():
                    return env, [], ()
                case DLet(_, x, e):
                    v, tr = self.eval_expr(env, e, "server", out)
                    return env.bind(x, v), [(x.name, v)], tr
                case DModule(_, x, m):
                    vm, tr = self.eval_module(env, m, "server", out)
                    return env.bind(x, vm), [(x.name, vm)], tr
        if loc is Loc.CLIENT:
            residual, tr = self.eval_client_context_decl(env, d, out)
            out.append(CDecl(residual))
            return env, [], tr
        if loc is Loc.MIXED:
            if not isinstance(d, DModule):
                raise StuckTerm("only modules can be mixed")
            for r in mixed_struct_ids(d.body):
                out.append(CBindEnv(r))
            vm, cexpr, tr = self.eval_mixed_mod(env, d.body, out)
            out.append(CDecl(DModule(Loc.MIXED, d.ident, cexpr)))
            return env.bind(d.ident, vm), [(d.ident.name, vm)], tr
        raise TypeError(d)


# --- Client-stage evaluation --------------------------------------------------------


class ClientEval:
    """Evaluates a generated client program with a global reference
    environment."""

    def __init__(self, zeta: Optional[dict] = None):
        self.zeta = dict(zeta) if zeta else {}

    def deref(self, ref: Ref):
        if ref not in self.zeta:
            raise RuntimeFailure(f"unbound reference {ref.render()}")
        return self.zeta[ref]

    def run(self, instrs, env: Env):
        """Run a block of instructions; returns (struct items, env, trace)."""
        items: list = []
        tr: Trace = ()
        for ins in instrs:
            match ins:
                case CDecl(d):
                    env, new_items, t = self.eval_decl(env, d)
                    items.extend(new_items)
                    tr = tr + t
                case CBindEnv(r):
                    self.zeta[r] = env
                case CBindExpr(target, envref, e):
                    cenv = self.deref(envref)
                    if not isinstance(cenv, Env):
                        raise RuntimeFailure(
                            f"{envref.render()} does not hold an environment"
                        )
                    v, t = self.eval_expr(cenv, e)
                    self.zeta[target] = v
                    tr = tr + t
                case CBindStruct(target, envref, body):
                    benv = env if envref is None else self.deref(envref)
                    if not isinstance(benv, Env):
                        raise RuntimeFailure(
                            f"{envref.render()} does not hold an environment"
                        )
                    bitems, _, t = self.run(body, benv)
                    self.zeta[target] = VStruct(bitems)
                    tr = tr + t
                case _:
                    raise TypeError(ins)
        return items, env, tr

    def eval_decl(self, env: Env, d):
        match d:
            case DType():
                return env, [], ()
            case DLet(_, x, e):
                v, tr = self.eval_expr(env, e)
                return env.bind(x, v), [(x.name, v)], tr
            case DModule(_, x, m):
                vm, tr = self.eval_mod(env, m)
                return env.bind(x, vm), [(x.name, vm)], tr
        raise TypeError(d)

    def eval_expr(self, env: Env, e):
        match e:
            case EConst(v):
                if isinstance(v, Builtin):
                    return VPartial(v.name, ()), ()
                return VConst(v), ()
            case ELit(v):
                if isinstance(v, VRef):
                    return self.deref(v.ref), ()
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
            case EFragment() | EInjection():
                raise StuckTerm("tier construct in a client program")
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
                inner_env = env
                sitems: list = []
                tr: Trace = ()
                for d in items:
                    inner_env, new_items, t = self.eval_decl(inner_env, d)
                    sitems.extend(new_items)
                    tr = tr + t
                return VStruct(sitems), tr
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


# --- Entry points ------------------------------------------------------------------


@dataclass
class RunResult:
    value: Value
    trace: Trace
    server_trace: Trace
    client_trace: Trace
    client_program: ClientProgram
    zeta: dict


def eval_server(program: Program, gen: Optional[RefGen] = None):
    """Server stage only: returns (client program, server trace)."""
    gen = gen or RefGen()
    program = annotate(program, gen)
    ev = ServerEval(gen)
    out: list = []
    _, trace = ev.eval_decls(EMPTY_ENV, program.decls, "mixed", out)
    return out, trace


def eval_client_program(prog: ClientProgram, zeta0: Optional[dict] = None):
    """Client stage: evaluates a generated client program; the result is the
    value of its `return` binding."""
    ev = ClientEval(zeta0)
    items, _, trace = ev.run(prog, EMPTY_ENV)
    ret = None
    for name, v in items:
        if name == "return":
            ret = v
    if ret is None:
        raise RuntimeFailure("client program defines no `return`")
    return ret, trace, ev.zeta


def run_program(program: Program, gen: Optional[RefGen] = None) -> RunResult:
    """Interpreted execution: server stage, then the emitted client program."""
    client_prog, server_trace = eval_server(program, gen)
    value, client_trace, zeta = eval_client_program(client_prog)
    return RunResult(
        value=value,
        trace=server_trace + client_trace,
        server_trace=server_trace,
        client_trace=client_trace,
        client_program=client_prog,
        zeta=zeta,
    )


def eval_server_expr(env: Env, expr, gen: Optional[RefGen] = None):
    """Server reduction of one expression: (value, client program, trace)."""
    ev = ServerEval(gen or RefGen())
    out: list = []
    v, tr = ev.eval_expr(env, expr, "server", out)
    return v, out, tr


def eval_client_context(env: Env, node, gen: Optional[RefGen] = None):
    """Resolve the injections of client code: (residual, program, trace)."""
    ev = ServerEval(gen or RefGen())
    out: list = []
    if isinstance(node, (DLet, DModule, DType)):
        residual, tr = ev.eval_client_context_decl(env, node, out)
    else:
        residual, tr = ev.eval_client_context_expr(env, node, out)
    return residual, out, tr


def eval_mixed(env: Env, node, gen: Optional[RefGen] = None):
    """Mixed-module reduction: (module value, client program, trace)."""
    ev = ServerEval(gen or RefGen())
    out: list = []
    if isinstance(node, Program):
        vm, tr = ev.eval_decls(env, node.decls, "mixed", out)
    else:
        vm, _, tr = ev.eval_mixed_mod(env, node, out)
    return vm, out, tr


def eval_base(env: Env, node):
    """Plain ML big-step evaluation (no tier constructs allowed)."""
    ev = ServerEval(RefGen())
    sink: list = []
    if isinstance(node, Program):
        vm, tr = ev.eval_decls(env, node.decls, "base", sink)
        result = (vm, tr)
    elif isinstance(node, (DLet, DModule, DType)):
        _, items, tr = ev.eval_decl(env, node, "base", sink)
        result = (VStruct(items), tr)
    else:
        result = ev.eval_expr(env, node, "base", sink)
    if sink:
        raise StuckTerm("base evaluation emitted client code")
    return result

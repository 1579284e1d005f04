"""Differential driver: interpreted run vs compiled run.

Value and trace equivalence follow the simulation statement: the compiled
side is compared after substituting the injection map, references are
matched through the bijection induced by fresh-counter order, and the
interpreted trace must equal the concatenation of the server and client
target traces.
"""

from __future__ import annotations

import concurrent.futures
import os
from dataclasses import dataclass, field
from typing import Optional

from . import typecheck as tc
from .parser import ParseError, parse_program
from .slicer import SliceError, check_sliceable, compile_program, slice_modtype
from .syntax import Program, RefGen, Ref
from .target import (
    run_client_target, run_server_target, typecheck_target,
)
from .interp import run_program
from .values import (
    NonSerializable, RuntimeFailure, VClosure, VConst, VFunctor, VPartial,
    VRef, VStruct, pretty_trace, pretty_value,
)


@dataclass
class CompiledRun:
    value: object
    trace: tuple
    server_trace: tuple
    client_trace: tuple
    pair: object
    queue: list
    inj: dict


def run_compiled(program: Program, gen: Optional[RefGen] = None) -> CompiledRun:
    """hoist -> annotate -> slice, then the paired target execution."""
    pair = compile_program(program, gen)
    _, queue, inj, server_trace = run_server_target(pair.server)
    value, client_trace, _ = run_client_target(pair.client, list(queue), inj)
    return CompiledRun(
        value=value,
        trace=server_trace + client_trace,
        server_trace=server_trace,
        client_trace=client_trace,
        pair=pair,
        queue=queue,
        inj=inj,
    )


class _RefBijection:
    """Consistent one-to-one matching between the references of two runs."""

    def __init__(self) -> None:
        self.fwd: dict = {}
        self.bwd: dict = {}

    def match(self, a: Ref, b: Ref) -> bool:
        if a in self.fwd:
            return self.fwd[a] == b
        if b in self.bwd:
            return False
        self.fwd[a] = b
        self.bwd[b] = a
        return True


def _subst_inj(v, inj: dict):
    """Substitute injection slots by their mapped values (client values
    equivalence is up to this substitution)."""
    if isinstance(v, VRef) and v.ref in inj:
        return _subst_inj(inj[v.ref], inj)
    return v


def values_equivalent(v1, v2, inj: dict, bij: _RefBijection) -> bool:
    v2 = _subst_inj(v2, inj)
    match (v1, v2):
        case (VConst(a), VConst(b)):
            return a == b
        case (VRef(a), VRef(b)):
            return bij.match(a, b)
        case (VStruct(items1, _), VStruct(items2, _)):
            names1 = [n for n, _ in items1]
            names2 = [n for n, _ in items2]
            if names1 != names2:
                return False
            return all(
                values_equivalent(a, b, inj, bij)
                for (_, a), (_, b) in zip(items1, items2)
            )
        case (VClosure(), VClosure()) | (VFunctor(), VFunctor()):
            return True  # opaque; the traces pin their behaviour down
        case (VPartial(o1, a1), VPartial(o2, a2)):
            return o1 == o2 and len(a1) == len(a2) and all(
                values_equivalent(x, y, inj, bij) for x, y in zip(a1, a2)
            )
        case _:
            return False


def traces_equivalent(t1, t2, inj: dict, bij: _RefBijection) -> bool:
    if len(t1) != len(t2):
        return False
    return all(values_equivalent(a, b, inj, bij) for a, b in zip(t1, t2))


@dataclass
class EquivReport:
    name: str
    interp_value: object
    compiled_value: object
    interp_trace: tuple
    server_trace: tuple
    client_trace: tuple
    value_match: bool
    trace_match: bool
    typing_preserved: bool

    @property
    def ok(self) -> bool:
        return self.value_match and self.trace_match and self.typing_preserved

    def lines(self) -> list:
        return [
            f"program:        {self.name}",
            f"interp value:   {pretty_value(self.interp_value)}",
            f"compiled value: {pretty_value(self.compiled_value)}",
            f"interp trace:   [{pretty_trace(self.interp_trace)}]",
            f"server trace:   [{pretty_trace(self.server_trace)}]",
            f"client trace:   [{pretty_trace(self.client_trace)}]",
            f"value match:    {self.value_match}",
            f"trace match:    {self.trace_match}",
            f"typing:         {self.typing_preserved}",
            f"verdict:        {'PASS' if self.ok else 'FAIL'}",
        ]


def typing_preserved(program: Program) -> bool:
    """Both slices typecheck and their signatures are the sliced source
    signatures (the compilation-preserves-typing theorem, executably).
    The comparison point is the slicer's input, i.e. the hoisted program."""
    from .slicer import hoist, slice_program
    from .syntax import annotate

    prepared = annotate(hoist(program))
    source_sig = tc.type_program(prepared)  # hoisting preserves typability
    pair = slice_program(prepared)
    for side in ("server", "client"):
        prog = pair.server if side == "server" else pair.client
        inferred = typecheck_target(prog, side)
        expected = slice_modtype(source_sig, side)
        if not _sigs_equal(inferred, expected):
            return False
    return True


def _sigs_equal(sig1, sig2) -> bool:
    checker = tc.Checker()

    def items_equal(items1, items2, env) -> bool:
        if len(items1) != len(items2):
            return False
        for it1, it2 in zip(items1, items2):
            if type(it1) is not type(it2) or it1.ident.name != it2.ident.name:
                return False
            match (it1, it2):
                case (tc.SVal(_, _, s1), tc.SVal(_, _, s2)):
                    if not _scheme_admits(checker, env, s1, s2):
                        return False
                case (tc.SType(_, _, p1, b1), tc.SType(_, _, p2, b2)):
                    if len(p1) != len(p2):
                        return False
                    if (b1 is None) != (b2 is None):
                        return False
                    if b1 is not None and not checker.equiv_type(env, tc.Loc.BASE, b1, b2):
                        return False
                case (tc.SMod(_, _, m1), tc.SMod(_, _, m2)):
                    if not modtypes_equal(m1, m2, env):
                        return False
            env = tc.env_add(env, it1)
        return True

    def modtypes_equal(m1, m2, env) -> bool:
        match (m1, m2):
            case (tc.MTSig(i1), tc.MTSig(i2)):
                return items_equal(i1, i2, env)
            case (tc.MTFunctor(p1, a1, r1, _), tc.MTFunctor(p2, a2, r2, _)):
                if not modtypes_equal(a1, a2, env):
                    return False
                env2 = tc.env_add(env, tc.SMod(tc.Loc.BASE, p1, a1))
                r2s = tc.subst_module_param(r2, p2, tc.PVar(p1)) if p1 != p2 else r2
                return modtypes_equal(r1, r2s, env2)
            case _:
                return False

    return modtypes_equal(sig1, sig2, ())


def _scheme_admits(checker, env, inferred, expected) -> bool:
    """The inferred scheme admits the expected one: equivalent, or the
    expected type is an instance of the inferred one (the weak target rules
    may infer something more general, e.g. through fragment^c)."""
    if checker.equiv_scheme(env, tc.Loc.BASE, inferred, expected):
        return True
    try:
        t = checker.instantiate(inferred, tc.Loc.BASE)
        checker.unify(env, tc.Loc.BASE, t, expected.body)
        return True
    except tc.TypeCheckError:
        return False


def check_equivalence(program: Program, name: str = "<program>") -> EquivReport:
    interp = run_program(program)
    compiled = run_compiled(program)
    bij = _RefBijection()
    vmatch = values_equivalent(interp.value, compiled.value, compiled.inj, bij)
    tmatch = traces_equivalent(
        interp.trace,
        compiled.server_trace + compiled.client_trace,
        compiled.inj,
        bij,
    )
    return EquivReport(
        name=name,
        interp_value=interp.value,
        compiled_value=compiled.value,
        interp_trace=interp.trace,
        server_trace=compiled.server_trace,
        client_trace=compiled.client_trace,
        value_match=vmatch,
        trace_match=tmatch,
        typing_preserved=typing_preserved(program),
    )


# --- Corpus ------------------------------------------------------------------------


@dataclass
class CorpusEntry:
    source_path: str
    expected_value: Optional[str] = None
    expected_trace: list = field(default_factory=list)
    expected_typeerror: Optional[str] = None
    expected_sliceerror: bool = False


def load_entry(source_path: str) -> CorpusEntry:
    expect_path = os.path.splitext(source_path)[0] + ".expect"
    entry = CorpusEntry(source_path)
    with open(expect_path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition(":")
            key, value = key.strip(), value.strip()
            if key == "value":
                entry.expected_value = value
            elif key == "trace":
                entry.expected_trace.append(value)
            elif key == "typeerror":
                entry.expected_typeerror = value
            elif key == "sliceerror":
                entry.expected_sliceerror = True
            else:
                raise ValueError(f"{expect_path}: unknown key {key!r}")
    return entry


@dataclass
class CorpusResult:
    name: str
    ok: bool
    detail: str = ""


def run_entry(entry: CorpusEntry) -> CorpusResult:
    name = os.path.basename(entry.source_path)
    with open(entry.source_path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        program = parse_program(text)
    except ParseError as exc:
        return CorpusResult(name, False, f"parse error: {exc}")

    if entry.expected_typeerror:
        try:
            tc.type_program(program)
        except tc.TypeCheckError as exc:
            if exc.kind == entry.expected_typeerror:
                return CorpusResult(name, True)
            return CorpusResult(
                name, False, f"expected {entry.expected_typeerror}, got {exc.kind}"
            )
        return CorpusResult(name, False, "expected a type error, program typechecked")

    try:
        tc.type_program(program)
    except tc.TypeCheckError as exc:
        return CorpusResult(name, False, f"type error: {exc}")

    if entry.expected_sliceerror:
        try:
            check_sliceable(program)
        except SliceError:
            return CorpusResult(name, True)
        return CorpusResult(name, False, "expected a slice error, program sliced")

    try:
        report = check_equivalence(program, name)
    except (RuntimeFailure, SliceError, tc.TypeCheckError) as exc:
        return CorpusResult(name, False, f"execution failed: {exc}")

    problems = []
    if not report.ok:
        problems.append("equivalence failed")
    if entry.expected_value is not None:
        got = pretty_value(report.interp_value)
        if got != entry.expected_value:
            problems.append(f"value {got} != expected {entry.expected_value}")
    got_trace = [pretty_value(v) for v in report.interp_trace]
    if got_trace != entry.expected_trace:
        problems.append(f"trace {got_trace} != expected {entry.expected_trace}")
    sep = tc.check_separate(program)
    if not sep.ok:
        problems.append("separate typechecking failed")
    if problems:
        return CorpusResult(name, False, "; ".join(problems) + "\n" + "\n".join(report.lines()))
    return CorpusResult(name, True)


def run_corpus(directory: str, parallel: bool = True):
    sources = sorted(
        os.path.join(directory, f)
        for f in os.listdir(directory)
        if f.endswith(".etml")
    )
    entries = [load_entry(p) for p in sources]
    if parallel and len(entries) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=8) as pool:
            results = list(pool.map(run_entry, entries))
    else:
        results = [run_entry(e) for e in entries]
    return results


def summarize(results) -> str:
    lines = []
    for r in results:
        lines.append(f"{'PASS' if r.ok else 'FAIL'} {r.name}")
        if not r.ok and r.detail:
            for d in r.detail.splitlines():
                lines.append(f"     {d}")
    passed = sum(1 for r in results if r.ok)
    lines.append(f"{passed}/{len(results)} passed" if results else "0 run")
    return "\n".join(lines)

"""Concrete syntax for source programs and module types.

Recursive-descent parser over a small hand-rolled lexer, followed by a
scope resolution pass that assigns stamps to identifiers. Resolution is
location-aware: the nearest binding usable at the use site wins, falling
back to the nearest binding of any location so that the typechecker can
report a location violation instead of an unbound name.

Module identifiers start with an uppercase letter, value and type names
with a lowercase one; `F(X).t` therefore parses as a path application
while `f (x)` is a function application.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from . import syntax as s
from .syntax import (
    Builtin, DLet, DModule, DType, EApp, EConst, EFix, EFragment, EInjection,
    EQualVar, EVar, ELam, ELet, Ident, Loc, MApply, MConstraint, MFunctor,
    MPath, MStruct, MTFunctor, MTSig, PAccess, PApply, PVar, Program, Scheme,
    SMod, SType, SVal, Span, TArrow, TConstr, TConv, TFragment, TVar, QualHead,
    UNIT,
)


@dataclass
class SourceFile:
    path: str
    text: str


class ParseError(Exception):
    def __init__(self, line: int, column: int, message: str):
        super().__init__(f"{line}:{column}: {message}")
        self.line = line
        self.column = column
        self.message = message


KEYWORDS = {
    "let", "in", "fun", "functor", "fix", "module", "type", "val", "sig",
    "struct", "end", "print", "bind", "bind_m", "injection", "fragment_m",
    "exec", "dyn", "get_dyn",
}

# `fragment` is a type constructor name and a converter name, not a keyword.

_PUNCT = [
    "{{", "}}", "->", "~>", "(", ")", "=", ":", ".", ",", "~", "%", "+", "'",
    "@", "&", "!",
]


@dataclass
class Token:
    kind: str  # INT STRING LIDENT UIDENT PUNCT EOF
    text: str
    line: int
    col: int


def lex(text: str) -> list:
    toks: list = []
    i, line, col = 0, 1, 1
    n = len(text)

    def advance(k: int):
        nonlocal i, line, col
        for _ in range(k):
            if text[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        c = text[i]
        if c in " \t\r\n":
            advance(1)
            continue
        if text.startswith("(*", i):
            depth, start = 0, (line, col)
            while i < n:
                if text.startswith("(*", i):
                    depth += 1
                    advance(2)
                elif text.startswith("*)", i):
                    depth -= 1
                    advance(2)
                    if depth == 0:
                        break
                else:
                    advance(1)
            else:
                raise ParseError(start[0], start[1], "unterminated comment")
            continue
        if c.isdigit():
            m = re.match(r"\d+", text[i:])
            toks.append(Token("INT", m.group(0), line, col))
            advance(len(m.group(0)))
            continue
        if c == '"':
            start_line, start_col = line, col
            j = i + 1
            buf = []
            while j < n and text[j] != '"':
                if text[j] == "\\" and j + 1 < n:
                    esc = text[j + 1]
                    buf.append({"n": "\n", "t": "\t", '"': '"', "\\": "\\"}.get(esc, esc))
                    j += 2
                else:
                    buf.append(text[j])
                    j += 1
            if j >= n:
                raise ParseError(start_line, start_col, "unterminated string literal")
            toks.append(Token("STRING", "".join(buf), line, col))
            advance(j + 1 - i)
            continue
        if c.isalpha() or c == "_":
            m = re.match(r"[A-Za-z_][A-Za-z0-9_']*", text[i:])
            word = m.group(0)
            kind = "UIDENT" if word[0].isupper() else "LIDENT"
            toks.append(Token(kind, word, line, col))
            advance(len(word))
            continue
        for p in _PUNCT:
            if text.startswith(p, i):
                toks.append(Token("PUNCT", p, line, col))
                advance(len(p))
                break
        else:
            raise ParseError(line, col, f"unexpected character {c!r}")
    toks.append(Token("EOF", "", line, col))
    return toks


class Parser:
    def __init__(self, text: str):
        self.toks = lex(text)
        self.pos = 0

    # -- token plumbing ------------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.toks[self.pos]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def error(self, message: str, tok: Optional[Token] = None):
        t = tok or self.tok
        raise ParseError(t.line, t.col, message)

    def at(self, kind: str, text: Optional[str] = None) -> bool:
        t = self.tok
        return t.kind == kind and (text is None or t.text == text)

    def at_punct(self, p: str) -> bool:
        return self.at("PUNCT", p)

    def at_word(self, w: str) -> bool:
        return self.tok.kind in ("LIDENT", "UIDENT") and self.tok.text == w

    def next(self) -> Token:
        t = self.tok
        self.pos += 1
        return t

    def expect(self, kind: str, text: Optional[str] = None) -> Token:
        if not self.at(kind, text):
            want = text or kind.lower()
            self.error(f"expected {want!r}, found {self.tok.text or 'end of input'!r}")
        return self.next()

    def expect_punct(self, p: str) -> Token:
        return self.expect("PUNCT", p)

    def expect_word(self, w: str) -> Token:
        if not self.at_word(w):
            self.error(f"expected {w!r}, found {self.tok.text or 'end of input'!r}")
        return self.next()

    def span(self, tok: Token) -> Span:
        return Span(tok.line, tok.col)

    # -- locations -------------------------------------------------------------

    def parse_loc(self, allow_mixed: bool, what: str) -> Loc:
        tok = self.expect_punct("%")
        name = self.expect("LIDENT").text
        try:
            loc = Loc(name)
        except ValueError:
            self.error(f"unknown location {name!r}", tok)
        if loc is Loc.MIXED and not allow_mixed:
            self.error(f"mixed not allowed on {what}", tok)
        return loc

    # -- programs and declarations ----------------------------------------------

    def parse_program(self) -> Program:
        decls = []
        while not self.at("EOF"):
            decls.append(self.parse_decl())
        return Program(decls)

    def parse_program_eof(self) -> Program:
        prog = self.parse_program()
        self.expect("EOF")
        return prog

    def parse_decl(self):
        t = self.tok
        if self.at_word("let"):
            self.next()
            loc = self.parse_loc(False, "values")
            name = self.expect("LIDENT").text
            params = []
            while self.tok.kind == "LIDENT" and not self.at_punct("="):
                params.append(self.next().text)
            self.expect_punct("=")
            body = self.parse_expr()
            for p in reversed(params):
                body = ELam(Ident(p), body, span=self.span(t))
            return DLet(loc, Ident(name), body, span=self.span(t))
        if self.at_word("type"):
            self.next()
            loc = self.parse_loc(False, "types")
            params = self.parse_type_params()
            name = self.expect("LIDENT").text
            body = None
            if self.at_punct("="):
                self.next()
                body = self.parse_type()
            return DType(loc, Ident(name), tuple(params), body, span=self.span(t))
        if self.at_word("module"):
            self.next()
            loc = self.parse_loc(True, "modules")
            name = self.expect("UIDENT").text
            self.expect_punct("=")
            body = self.parse_modexpr()
            return DModule(loc, Ident(name), body, span=self.span(t))
        self.error("expected a declaration")

    def parse_type_params(self) -> list:
        params = []
        if self.at_punct("(") and self.peek().kind == "PUNCT" and self.peek().text == "'":
            self.next()
            while True:
                params.append(self.parse_located_tyvar())
                if self.at_punct(","):
                    self.next()
                    continue
                break
            self.expect_punct(")")
        elif self.at_punct("'"):
            params.append(self.parse_located_tyvar())
        return params

    def parse_located_tyvar(self):
        self.expect_punct("'")
        name = self.expect("LIDENT").text
        self.expect_punct("@")
        locname = self.expect("LIDENT").text
        try:
            loc = Loc(locname)
        except ValueError:
            self.error(f"unknown location {locname!r}")
        if loc is Loc.MIXED:
            self.error("type variables carry core locations only")
        return (name, loc)

    # -- module expressions ------------------------------------------------------

    def parse_modexpr(self):
        t = self.tok
        if self.at_word("struct"):
            self.next()
            items = []
            while not self.at_word("end"):
                if self.at("EOF"):
                    self.error("unterminated struct", t)
                items.append(self.parse_decl())
            self.next()
            return MStruct(items, span=self.span(t))
        if self.at_word("functor"):
            self.next()
            mixed = False
            if self.at_punct("%"):
                self.next()
                w = self.expect("LIDENT")
                if w.text != "mixed":
                    self.error("expected 'mixed'", w)
                mixed = True
            self.expect_punct("(")
            pname = self.expect("UIDENT").text
            self.expect_punct(":")
            argty = self.parse_modtype()
            self.expect_punct(")")
            self.expect_punct("->")
            body = self.parse_modexpr()
            return MFunctor(Ident(pname), argty, body, mixed, span=self.span(t))
        if self.at_punct("("):
            self.next()
            body = self.parse_modexpr()
            self.expect_punct(":")
            mt = self.parse_modtype()
            self.expect_punct(")")
            return MConstraint(body, mt, span=self.span(t))
        if self.tok.kind == "UIDENT":
            path, applies = self.parse_path_with_apps()
            m = MPath(path, span=self.span(t))
            for a in applies:
                m = MApply(m, a, span=self.span(t))
            return m
        self.error("expected a module expression")

    def parse_path_with_apps(self):
        """A module path; trailing applications whose results are not further
        projected are returned separately as module-expression applications."""
        t = self.expect("UIDENT")
        path = PVar(Ident(t.text))
        trailing = []
        while True:
            if self.at_punct("."):
                if self.peek().kind != "UIDENT":
                    break
                if trailing:
                    # re-fold trailing applications into the path
                    for a in trailing:
                        path = self._mod_to_path_apply(path, a, t)
                    trailing = []
                self.next()
                name = self.expect("UIDENT").text
                path = PAccess(path, name)
                continue
            if self.at_punct("("):
                self.next()
                arg = self.parse_modexpr()
                self.expect_punct(")")
                trailing.append(arg)
                continue
            break
        return path, trailing

    def _mod_to_path_apply(self, path, modexpr, tok):
        if isinstance(modexpr, MPath):
            return PApply(path, modexpr.path)
        self.error("only paths may appear in projected functor applications", tok)

    def parse_path(self):
        path, trailing = self.parse_path_with_apps()
        if trailing:
            for a in trailing:
                path = self._mod_to_path_apply(path, a, self.tok)
        return path

    # -- module types ---------------------------------------------------------------

    def parse_modtype(self):
        t = self.tok
        if self.at_word("sig"):
            self.next()
            items = []
            while not self.at_word("end"):
                if self.at("EOF"):
                    self.error("unterminated sig", t)
                items.append(self.parse_sigitem())
            self.next()
            return MTSig(items, span=self.span(t))
        if self.at_word("functor"):
            self.next()
            mixed = False
            if self.at_punct("%"):
                self.next()
                w = self.expect("LIDENT")
                if w.text != "mixed":
                    self.error("expected 'mixed'", w)
                mixed = True
            self.expect_punct("(")
            pname = self.expect("UIDENT").text
            self.expect_punct(":")
            argty = self.parse_modtype()
            self.expect_punct(")")
            self.expect_punct("->")
            resty = self.parse_modtype()
            return MTFunctor(Ident(pname), argty, resty, mixed, span=self.span(t))
        self.error("expected a module type")

    def parse_sigitem(self):
        t = self.tok
        if self.at_word("val"):
            self.next()
            loc = self.parse_loc(False, "values")
            name = self.expect("LIDENT").text
            self.expect_punct(":")
            ty = self.parse_type()
            return SVal(loc, Ident(name), Scheme((), ty), span=self.span(t))
        if self.at_word("type"):
            self.next()
            loc = self.parse_loc(False, "types")
            params = self.parse_type_params()
            name = self.expect("LIDENT").text
            body = None
            if self.at_punct("="):
                self.next()
                body = self.parse_type()
            return SType(loc, Ident(name), tuple(params), body, span=self.span(t))
        if self.at_word("module"):
            self.next()
            loc = self.parse_loc(True, "modules")
            name = self.expect("UIDENT").text
            self.expect_punct(":")
            mt = self.parse_modtype()
            return SMod(loc, Ident(name), mt, span=self.span(t))
        self.error("expected a signature item")

    # -- types ------------------------------------------------------------------------

    def parse_type(self):
        left = self.parse_type_postfix()
        if self.at_punct("->"):
            self.next()
            return TArrow(left, self.parse_type())
        if self.at_punct("~>"):
            self.next()
            right = self.parse_type_postfix()
            return TConv(left, right)
        return left

    def parse_type_postfix(self):
        args, ty = self.parse_type_atom()
        while (
            self.tok.kind == "LIDENT" and self.tok.text not in KEYWORDS
        ) or self.tok.kind == "UIDENT":
            head = self.parse_type_head()
            base = (ty,) if ty is not None else tuple(args)
            if isinstance(head, Ident) and head.name == "fragment" and len(base) == 1:
                ty = TFragment(base[0])
            else:
                ty = TConstr(base, head)
            args = None
        if ty is None:
            if args is not None and len(args) == 1:
                return args[0]
            self.error("tuple types must be applied to a constructor")
        return ty

    def parse_type_head(self):
        if self.tok.kind == "LIDENT":
            return Ident(self.next().text)
        path = self.parse_path()
        self.expect_punct(".")
        name = self.expect("LIDENT").text
        return QualHead(path, name)

    def parse_type_atom(self):
        """Returns (tuple-args or None, single type or None)."""
        if self.at_punct("'"):
            name_loc = self.parse_located_tyvar()
            return None, TVar(name_loc[0], name_loc[1])
        if self.at_punct("("):
            self.next()
            items = [self.parse_type()]
            while self.at_punct(","):
                self.next()
                items.append(self.parse_type())
            self.expect_punct(")")
            if len(items) == 1:
                return None, items[0]
            return items, None
        if self.tok.kind == "LIDENT":
            return None, TConstr((), Ident(self.next().text))
        if self.tok.kind == "UIDENT":
            head = self.parse_type_head()
            return None, TConstr((), head)
        self.error("expected a type")

    def parse_type_head_after_atom(self):
        return self.parse_type_head()

    # -- expressions ---------------------------------------------------------------------

    def parse_expr(self):
        t = self.tok
        if self.at_word("let"):
            self.next()
            name = self.expect("LIDENT").text
            params = []
            while self.tok.kind == "LIDENT" and not self.at_punct("="):
                params.append(self.next().text)
            self.expect_punct("=")
            bound = self.parse_expr()
            for p in reversed(params):
                bound = ELam(Ident(p), bound, span=self.span(t))
            self.expect_word("in")
            body = self.parse_expr()
            return ELet(Ident(name), bound, body, span=self.span(t))
        if self.at_word("fun"):
            self.next()
            params = []
            while self.tok.kind == "LIDENT":
                params.append(self.next().text)
            if not params:
                self.error("fun needs at least one parameter")
            self.expect_punct("->")
            body = self.parse_expr()
            for p in reversed(params):
                body = ELam(Ident(p), body, span=self.span(t))
            return body
        return self.parse_sum()

    def parse_sum(self):
        left = self.parse_app()
        while self.at_punct("+"):
            t = self.next()
            right = self.parse_app()
            plus = EConst(Builtin("+"), span=self.span(t))
            left = EApp(EApp(plus, left), right, span=self.span(t))
        return left

    _ATOM_KEYWORDS = ("fix", "print")

    def starts_atom(self) -> bool:
        t = self.tok
        if t.kind == "LIDENT":
            return t.text not in KEYWORDS or t.text in self._ATOM_KEYWORDS
        if t.kind in ("INT", "STRING", "UIDENT"):
            return True
        return self.at_punct("(") or self.at_punct("{{") or self.at_punct("~") or self.at_punct("&")

    def parse_app(self):
        e = self.parse_atom()
        while self.starts_atom():
            t = self.tok
            arg = self.parse_atom()
            e = EApp(e, arg, span=self.span(t))
        return e

    def parse_atom(self):
        t = self.tok
        if self.at("INT"):
            return EConst(int(self.next().text), span=self.span(t))
        if self.at("STRING"):
            return EConst(self.next().text, span=self.span(t))
        if self.at_punct("("):
            if self.peek().kind == "PUNCT" and self.peek().text == ")":
                self.next()
                self.next()
                return EConst(UNIT, span=self.span(t))
            self.next()
            e = self.parse_expr()
            self.expect_punct(")")
            return e
        if self.at_punct("{{"):
            self.next()
            body = self.parse_expr()
            self.expect_punct("}}")
            return EFragment(body, span=self.span(t))
        if self.at_punct("~"):
            self.next()
            target = self.parse_injection_target()
            self.expect_punct(":")
            conv = self.expect("LIDENT").text
            return EInjection(target, conv, span=self.span(t))
        if self.at_word("fix"):
            self.next()
            return EFix(span=self.span(t))
        if self.at_word("print"):
            self.next()
            return EConst(Builtin("print"), span=self.span(t))
        if self.tok.kind == "LIDENT":
            return EVar(Ident(self.next().text), span=self.span(t))
        if self.tok.kind == "UIDENT":
            path = self.parse_path()
            self.expect_punct(".")
            name = self.expect("LIDENT").text
            return EQualVar(path, name, span=self.span(t))
        self.error("expected an expression")

    def parse_injection_target(self):
        t = self.tok
        if self.at("INT"):
            return EConst(int(self.next().text), span=self.span(t))
        if self.at("STRING"):
            return EConst(self.next().text, span=self.span(t))
        if self.at_punct("(") and self.peek().kind == "PUNCT" and self.peek().text == ")":
            self.next()
            self.next()
            return EConst(UNIT, span=self.span(t))
        if self.at_punct("("):
            self.next()
            inner = self.parse_injection_target()
            self.expect_punct(")")
            return inner
        if self.tok.kind == "LIDENT":
            return EVar(Ident(self.next().text), span=self.span(t))
        if self.tok.kind == "UIDENT":
            path = self.parse_path()
            self.expect_punct(".")
            name = self.expect("LIDENT").text
            return EQualVar(path, name, span=self.span(t))
        self.error("injections apply to variables and constants only")


# --- Scope resolution -------------------------------------------------------------


from .locations import can_use  # noqa: E402  (tiny leaf module)


class _Scope:
    def __init__(self):
        self.entries: list = []  # (kind, name, loc, Ident)

    def push(self, kind: str, name: str, loc: Loc, ident: Ident):
        self.entries.append((kind, name, loc, ident))

    def mark(self) -> int:
        return len(self.entries)

    def reset(self, mark: int):
        del self.entries[mark:]

    def lookup(self, kind: str, name: str, use_loc: Loc):
        fallback = None
        for k, n, loc, ident in reversed(self.entries):
            if k == kind and n == name:
                if can_use(loc, use_loc):
                    return ident
                if fallback is None:
                    fallback = ident
        return fallback


class Resolver:
    """Assigns stamps left-to-right (0 per name) and resolves every use to
    the nearest enclosing binding usable at the use location."""

    def __init__(self):
        self.counters: dict = {}
        self.scope = _Scope()

    def fresh(self, name: str) -> Ident:
        n = self.counters.get(name, 0)
        self.counters[name] = n + 1
        return Ident(name, n)

    def err(self, span: Optional[Span], message: str):
        if span is None:
            raise ParseError(1, 1, message)
        raise ParseError(span.line, span.col, message)

    # declarations ----------------------------------------------------------

    def program(self, prog: Program) -> Program:
        return Program([self.decl(d) for d in prog.decls])

    def decl(self, d):
        match d:
            case DLet(loc, x, e):
                e2 = self.expr(e, loc)
                ident = self.fresh(x.name)
                self.scope.push("val", x.name, loc, ident)
                return DLet(loc, ident, e2, span=d.span)
            case DType(loc, x, params, body):
                body2 = self.typ(body, loc) if body is not None else None
                ident = self.fresh(x.name)
                self.scope.push("ty", x.name, loc, ident)
                return DType(loc, ident, params, body2, span=d.span)
            case DModule(loc, x, m):
                m2 = self.modexpr(m, loc)
                ident = self.fresh(x.name)
                self.scope.push("mod", x.name, loc, ident)
                return DModule(loc, ident, m2, span=d.span)
        raise TypeError(d)

    def modexpr(self, m, loc: Loc):
        match m:
            case MStruct(items, ref):
                mark = self.scope.mark()
                out = [self.decl(d) for d in items]
                self.scope.reset(mark)
                return MStruct(out, ref, span=m.span)
            case MFunctor(p, aty, body, mixed):
                aty2 = self.modtype(aty, Loc.MIXED if mixed else loc)
                mark = self.scope.mark()
                ident = self.fresh(p.name)
                self.scope.push("mod", p.name, Loc.MIXED if mixed else loc, ident)
                body2 = self.modexpr(body, loc)
                self.scope.reset(mark)
                return MFunctor(ident, aty2, body2, mixed, span=m.span)
            case MConstraint(body, mt):
                return MConstraint(self.modexpr(body, loc), self.modtype(mt, loc), span=m.span)
            case MApply(f, a):
                return MApply(self.modexpr(f, loc), self.modexpr(a, loc), span=m.span)
            case MPath(p):
                return MPath(self.path(p, loc, m.span), span=m.span)
        raise TypeError(m)

    def path(self, p, loc: Loc, span):
        match p:
            case PVar(x):
                ident = self.scope.lookup("mod", x.name, loc)
                if ident is None:
                    self.err(span, f"unbound module {x.name}")
                return PVar(ident)
            case PAccess(base, name):
                return PAccess(self.path(base, loc, span), name)
            case PApply(f, a):
                return PApply(self.path(f, loc, span), self.path(a, loc, span))
        raise TypeError(p)

    # expressions ------------------------------------------------------------

    def expr(self, e, loc: Loc):
        match e:
            case EConst():
                return e
            case EVar(x):
                ident = self.scope.lookup("val", x.name, loc)
                if ident is None:
                    self.err(e.span, f"unbound variable {x.name}")
                return EVar(ident, span=e.span)
            case EQualVar(p, name):
                return EQualVar(self.path(p, loc, e.span), name, span=e.span)
            case EFix():
                return e
            case EApp(f, a):
                return EApp(self.expr(f, loc), self.expr(a, loc), span=e.span)
            case ELam(p, b):
                mark = self.scope.mark()
                ident = self.fresh(p.name)
                self.scope.push("val", p.name, loc, ident)
                b2 = self.expr(b, loc)
                self.scope.reset(mark)
                return ELam(ident, b2, span=e.span)
            case ELet(x, bound, body):
                bound2 = self.expr(bound, loc)
                mark = self.scope.mark()
                ident = self.fresh(x.name)
                self.scope.push("val", x.name, loc, ident)
                body2 = self.expr(body, loc)
                self.scope.reset(mark)
                return ELet(ident, bound2, body2, span=e.span)
            case EFragment(body, ref):
                # location discipline is the typechecker's job; only switch
                # the resolution context here
                return EFragment(self.expr(body, Loc.CLIENT), ref, span=e.span)
            case EInjection(target, conv):
                return EInjection(self.expr(target, Loc.SERVER), conv, span=e.span)
        raise TypeError(e)

    # types --------------------------------------------------------------------

    def typ(self, t, loc: Loc):
        match t:
            case TVar():
                return t
            case TArrow(a, b):
                return TArrow(self.typ(a, loc), self.typ(b, loc))
            case TConv(a, b):
                return TConv(self.typ(a, Loc.SERVER), self.typ(b, Loc.CLIENT))
            case TFragment(b):
                return TFragment(self.typ(b, Loc.CLIENT))
            case TConstr(args, head):
                args2 = tuple(self.typ(a, loc) for a in args)
                if isinstance(head, Ident):
                    if head.name in BUILTIN_TYPES:
                        return TConstr(args2, Ident(head.name))
                    ident = self.scope.lookup("ty", head.name, loc)
                    if ident is None:
                        raise ParseError(1, 1, f"unbound type {head.name}")
                    return TConstr(args2, ident)
                return TConstr(args2, QualHead(self.path(head.path, loc, None), head.name))
        raise TypeError(t)

    def modtype(self, mt, loc: Loc):
        match mt:
            case MTSig(items):
                mark = self.scope.mark()
                out = [self.sigitem(it) for it in items]
                self.scope.reset(mark)
                return MTSig(out, span=mt.span)
            case MTFunctor(p, a, r, mixed):
                a2 = self.modtype(a, Loc.MIXED if mixed else loc)
                mark = self.scope.mark()
                ident = self.fresh(p.name)
                self.scope.push("mod", p.name, Loc.MIXED if mixed else loc, ident)
                r2 = self.modtype(r, loc)
                self.scope.reset(mark)
                return MTFunctor(ident, a2, r2, mixed, span=mt.span)
        raise TypeError(mt)

    def sigitem(self, it):
        match it:
            case SVal(loc, x, sc):
                ty = self.typ(sc.body, loc)
                ident = self.fresh(x.name)
                self.scope.push("val", x.name, loc, ident)
                return SVal(loc, ident, Scheme(sc.quant, ty), span=it.span)
            case SType(loc, x, params, body):
                body2 = self.typ(body, loc) if body is not None else None
                ident = self.fresh(x.name)
                self.scope.push("ty", x.name, loc, ident)
                return SType(loc, ident, params, body2, span=it.span)
            case SMod(loc, x, mt):
                mt2 = self.modtype(mt, loc)
                ident = self.fresh(x.name)
                self.scope.push("mod", x.name, loc, ident)
                return SMod(loc, ident, mt2, span=it.span)
        raise TypeError(it)


BUILTIN_TYPES = {"int", "unit", "string", "serial", "fragty"}


def parse_program(text: str) -> Program:
    """Parse and scope-resolve a source program."""
    prog = Parser(text).parse_program_eof()
    return Resolver().program(prog)


def parse_modtype(text: str):
    p = Parser(text)
    mt = p.parse_modtype()
    p.expect("EOF")
    return Resolver().modtype(mt, Loc.MIXED)


def parse_expr(text: str, loc: Loc = Loc.BASE):
    p = Parser(text)
    e = p.parse_expr()
    p.expect("EOF")
    return Resolver().expr(e, loc)

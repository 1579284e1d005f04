"""Command-line entry point: check, interp, slice, run, diff, corpus."""

from __future__ import annotations

import argparse
import os
import sys

from . import typecheck as tc
from .harness import check_equivalence, run_compiled, run_corpus, summarize
from .interp import run_program
from .parser import ParseError, parse_program
from .slicer import SliceError, compile_program
from .syntax import pretty_modtype
from .target import (
    inj_to_text, pretty_target_program, queue_to_text, run_client_target,
    run_server_target, trace_to_text,
)
from .values import RuntimeFailure, pretty_trace, pretty_value

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_USAGE = 64
EXIT_TYPE_ERROR = 3
EXIT_SLICE_ERROR = 4
EXIT_RUNTIME_ERROR = 5


class _Argparser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _read_source(args) -> str:
    if args.file == "-" or getattr(args, "stdin", False):
        return sys.stdin.read()
    with open(args.file, encoding="utf-8") as fh:
        return fh.read()


def _load(args):
    try:
        return parse_program(_read_source(args))
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        sys.exit(EXIT_TYPE_ERROR)


def _typecheck(program):
    try:
        return tc.type_program(program)
    except tc.TypeCheckError as exc:
        print(f"type error: {exc}", file=sys.stderr)
        sys.exit(EXIT_TYPE_ERROR)


def cmd_check(args) -> int:
    program = _load(args)
    sig = _typecheck(program)
    print(pretty_modtype(sig))
    return EXIT_OK


def cmd_interp(args) -> int:
    program = _load(args)
    _typecheck(program)
    try:
        result = run_program(program)
    except RuntimeFailure as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME_ERROR
    print(f"value: {pretty_value(result.value)}")
    print(f"trace: {pretty_trace(result.trace)}")
    if args.trace_file:
        with open(args.trace_file, "w", encoding="utf-8") as fh:
            fh.write(trace_to_text(result.trace))
    return EXIT_OK


def _slice_checked(program):
    try:
        return compile_program(program)
    except SliceError as exc:
        print(f"slice error: {exc}", file=sys.stderr)
        sys.exit(EXIT_SLICE_ERROR)


def cmd_slice(args) -> int:
    program = _load(args)
    _typecheck(program)
    pair = _slice_checked(program)
    if args.side:
        prog = pair.server if args.side == "server" else pair.client
        print(pretty_target_program(prog), end="")
        return EXIT_OK
    outdir = args.output or "."
    os.makedirs(outdir, exist_ok=True)
    base = os.path.splitext(os.path.basename(args.file))[0]
    server_path = os.path.join(outdir, f"{base}.server.tgt")
    client_path = os.path.join(outdir, f"{base}.client.tgt")
    with open(server_path, "w", encoding="utf-8") as fh:
        fh.write(pretty_target_program(pair.server))
    with open(client_path, "w", encoding="utf-8") as fh:
        fh.write(pretty_target_program(pair.client))
    print(f"wrote {server_path}")
    print(f"wrote {client_path}")
    return EXIT_OK


def cmd_run(args) -> int:
    program = _load(args)
    _typecheck(program)
    pair = _slice_checked(program)
    try:
        _, queue, inj, server_trace = run_server_target(pair.server)
        value, client_trace, _ = run_client_target(pair.client, list(queue), inj)
    except RuntimeFailure as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME_ERROR
    print(f"value: {pretty_value(value)}")
    print(f"trace: {pretty_trace(server_trace + client_trace)}")
    if args.output:
        os.makedirs(args.output, exist_ok=True)
        base = os.path.splitext(os.path.basename(args.file))[0]
        with open(os.path.join(args.output, f"{base}.queue"), "w", encoding="utf-8") as fh:
            fh.write(queue_to_text(queue))
        with open(os.path.join(args.output, f"{base}.inj"), "w", encoding="utf-8") as fh:
            fh.write(inj_to_text(inj))
        with open(os.path.join(args.output, f"{base}.trace"), "w", encoding="utf-8") as fh:
            fh.write(trace_to_text(server_trace + client_trace))
    return EXIT_OK


def cmd_diff(args) -> int:
    program = _load(args)
    _typecheck(program)
    try:
        report = check_equivalence(program, os.path.basename(args.file))
    except SliceError as exc:
        print(f"slice error: {exc}", file=sys.stderr)
        return EXIT_SLICE_ERROR
    except RuntimeFailure as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME_ERROR
    for line in report.lines():
        print(line)
    return EXIT_OK if report.ok else EXIT_FAILURES


def cmd_corpus(args) -> int:
    results = run_corpus(args.dir)
    print(summarize(results))
    return EXIT_OK if all(r.ok for r in results) else EXIT_FAILURES


def build_parser() -> argparse.ArgumentParser:
    parser = _Argparser(prog="etml", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        return p

    p = add("check", cmd_check, help="typecheck a program and print its signature")
    p.add_argument("file")
    p.add_argument("--stdin", action="store_true", help="read the program from stdin")

    p = add("interp", cmd_interp, help="run under the interpreted semantics")
    p.add_argument("file")
    p.add_argument("--stdin", action="store_true")
    p.add_argument("--trace-file", default=None)

    p = add("slice", cmd_slice, help="slice into server and client target programs")
    p.add_argument("file")
    p.add_argument("-o", "--output", default=None, help="output directory")
    p.add_argument("--side", choices=["server", "client"], default=None,
                   help="print one side to stdout instead of writing files")

    p = add("run", cmd_run, help="run the compiled pipeline")
    p.add_argument("file")
    p.add_argument("-o", "--output", default=None,
                   help="also write .queue/.inj/.trace files here")
    p.add_argument("--seed", type=int, default=None, help="reserved")

    p = add("diff", cmd_diff, help="compare interpreted and compiled executions")
    p.add_argument("file")

    p = add("corpus", cmd_corpus, help="run a corpus directory")
    p.add_argument("dir")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

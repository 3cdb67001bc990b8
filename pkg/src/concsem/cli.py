"""Command-line front end: ``concsem {denote,run,check,fuzz}``."""

from __future__ import annotations

import argparse
import json
import sys
from contextlib import ExitStack
from typing import Optional, Sequence

from . import densem, equiv, escore, opsem, quantum, settings
from .lang import Flavor, parse, qvar, word_str

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--flavor", choices=[f.value for f in Flavor], default=None)
    common.add_argument("--depth", type=int, default=None, help="maximum word length")
    common.add_argument("--unroll", type=int, default=None, help="loop unrollings (default: depth)")
    common.add_argument("--state", default=None, help="initial state: ket:01.. or a matrix JSON")
    common.add_argument("--gates", default=None, help="gate-table JSON file")
    common.add_argument("--tol", type=float, default=None, help="numeric tolerance")
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--format", choices=["dot", "json", "text"], default="text")
    common.add_argument("--mutate", action="append", default=[], choices=densem.MUTATIONS, help=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="concsem", description="Operational and event-structure semantics of concurrent programs.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("denote", "print the event structure of a program"),
                       ("run", "list the words a program can perform"),
                       ("check", "compare operational words with covering chains")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("source", help="program text, or - to read standard input")
    fz = sub.add_parser("fuzz", parents=[common], help="check random programs")
    fz.add_argument("--count", type=int, default=100, help="programs per flavor")
    fz.add_argument("--size", type=int, default=6, help="maximum number of operators")
    return p


class _Config:
    def __init__(self, ns: argparse.Namespace, default_depth: int):
        self.flavor = Flavor(ns.flavor) if ns.flavor else None
        self.depth = default_depth if ns.depth is None else ns.depth
        self.unroll = self.depth if ns.unroll is None else ns.unroll
        if self.depth < 0 or self.unroll < self.depth:
            raise UsageError("need 0 <= depth <= unroll")
        self.state = ns.state
        self.fmt = ns.format
        self.seed = ns.seed
        self.gates = dict(quantum.BUILTIN_GATES)
        self.measurements: dict = {}
        if ns.gates:
            with open(ns.gates, encoding="utf-8") as fh:
                self.gates, self.measurements = quantum.load_gate_table(fh.read())

    def parse(self, source: str):
        if source == "-":
            source = sys.stdin.read()
        flavor = self.flavor or Flavor.NONDET
        return parse(source, flavor, {k: g.arity for k, g in self.gates.items()}), flavor

    def context(self, c) -> quantum.QuantumContext:
        return quantum.context_for(qvar(c), self.gates, self.measurements)

    def rho(self, ctx: quantum.QuantumContext):
        return quantum.parse_state(self.state or "ket:" + "0" * ctx.n, ctx)


def _denote(cfg: _Config, source: str, out) -> int:
    c, flavor = cfg.parse(source)
    ctx = cfg.context(c) if flavor is Flavor.QUANTUM else None
    es = densem.interpret(c, flavor, None, cfg.unroll, ctx=ctx)
    if flavor is Flavor.QUANTUM and cfg.state:
        es = quantum.valuation_from_state(es, cfg.rho(ctx))
    if cfg.fmt in ("dot", "text"):
        out.write(escore.to_dot(es))
    if cfg.fmt in ("json", "text"):
        out.write(escore.to_json(es) + "\n")
    return EXIT_PASS


def _run(cfg: _Config, source: str, out) -> int:
    c, flavor = cfg.parse(source)
    rows = []
    if flavor is Flavor.PROB:
        for e in opsem.prob_words(c, cfg.depth):
            rows.append({"word": word_str(e.word), "terminal": e.terminal,
                         "probability": str(e.probability), "branch": list(e.branch)})
        rows.sort(key=lambda r: (r["word"], r["branch"], r["probability"], r["terminal"]))
    elif flavor is Flavor.QUANTUM:
        ctx = cfg.context(c)
        rho = cfg.rho(ctx)
        for w, term in opsem.words(c, cfg.depth):
            final = opsem.apply_word(w, rho, ctx)
            rows.append({"word": word_str(w), "terminal": term,
                         "trace": float(f"{quantum.trace(final).real:.12g}"),
                         "state": escore._matrix_json(final)})
        rows.sort(key=lambda r: (r["word"], r["terminal"]))
    else:
        rows = [{"word": word_str(w), "terminal": t} for w, t in opsem.words(c, cfg.depth)]
        rows.sort(key=lambda r: (r["word"], r["terminal"]))
    if cfg.fmt == "json":
        out.write(json.dumps(rows, sort_keys=True) + "\n")
        return EXIT_PASS
    for r in rows:
        cols = [r["word"]]
        if "probability" in r:
            cols.append(r["probability"])
            if r["branch"]:
                cols.append("branch " + ".".join(map(str, r["branch"])))
        if "trace" in r:
            cols.append(f"trace {r['trace']:.12g}")
        if r["terminal"]:
            cols.append("terminal")
        out.write("\t".join(cols) + "\n")
    return EXIT_PASS


def _report_text(rep: equiv.EquivReport) -> str:
    lines = [f"{rep.verdict}: {rep.program} (depth {rep.depth})"]
    d = rep.to_dict()
    for key in ("missing_in_denotation", "missing_in_operational", "probability_mismatches"):
        for item in d[key]:
            lines.append(f"  {key}: {item}")
    return "\n".join(lines) + "\n"


def _check(cfg: _Config, source: str, out) -> int:
    c, flavor = cfg.parse(source)
    rho = ctx = None
    if flavor is Flavor.QUANTUM:
        ctx = cfg.context(c)
        rho = cfg.rho(ctx)
    rep = equiv.check(c, flavor, cfg.depth, unroll=cfg.unroll, rho=rho, ctx=ctx)
    out.write(rep.to_json() + "\n" if cfg.fmt == "json" else _report_text(rep))
    return EXIT_PASS if rep.passed else EXIT_FAIL


def _fuzz(cfg: _Config, count: int, size: int, out) -> int:
    if count < 0 or size < 0:
        raise UsageError("count and size must be non-negative")
    flavors = [cfg.flavor] if cfg.flavor else list(Flavor)
    reports = []
    for fl in flavors:
        reports += equiv.fuzz(fl, count, size, cfg.depth, cfg.seed, cfg.unroll)
    passed = sum(r.passed for r in reports)
    if cfg.fmt == "json":
        out.write(json.dumps({"passed": passed, "total": len(reports),
                              "reports": [r.to_dict() for r in reports]}, sort_keys=True) + "\n")
    else:
        for r in reports:
            if not r.passed:
                out.write(_report_text(r))
        out.write(f"{passed}/{len(reports)} pass\n")
    return EXIT_PASS if passed == len(reports) else EXIT_FAIL


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = out or sys.stdout
    try:
        ns = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    with ExitStack() as stack:
        try:
            if ns.tol is not None:
                stack.enter_context(settings.tolerance_override(ns.tol))
            if ns.mutate:
                stack.enter_context(densem.mutation(*ns.mutate))
            cfg = _Config(ns, 5 if ns.command == "fuzz" else 3)
            if ns.command == "denote":
                return _denote(cfg, ns.source, out)
            if ns.command == "run":
                return _run(cfg, ns.source, out)
            if ns.command == "check":
                return _check(cfg, ns.source, out)
            return _fuzz(cfg, ns.count, ns.size, out)
        except Exception as exc:  # exit codes are 0, 1 or 2 only
            print(f"concsem: error: {exc}", file=sys.stderr)
            return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

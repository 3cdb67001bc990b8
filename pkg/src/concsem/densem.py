"""Denotational constructions and the interpretation of commands as event structures.

Recursion and while loops are interpreted by unrolling a fixed number of
times from the empty structure.  An optional horizon drops every event
whose down-closure exceeds it; truncation commutes with all constructions,
so the horizon only removes material that bounded checks never look at.
"""

from __future__ import annotations

from contextlib import contextmanager
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from . import escore, quantum, settings
from .escore import COPY, EventStructure, Valuation
from .lang import (
    SK,
    TAU,
    Act,
    Command,
    Done,
    Flavor,
    Gate,
    Meas,
    NdChoice,
    Par,
    ProbChoice,
    Rec,
    Seq,
    Skip,
    Var,
    While,
    act,
    fvar,
    gate,
    proj0,
    proj1,
)
from .lang import UnboundVariable  # re-exported for callers
from .quantum import QuantumContext


class FlavorMismatch(ValueError):
    pass


class WeightsNotNormalized(ValueError):
    pass


class NonCommutingParallel(ValueError):
    pass


# ---------------------------------------------------------------- mutation hook

_MUTATIONS: set = set()
MUTATIONS = ("nd-no-conflict", "prob-no-tau")


@contextmanager
def mutation(*names: str):
    """Deliberately break a construction (used to show the checkers are not vacuous)."""
    for n in names:
        if n not in MUTATIONS:
            raise ValueError(f"unknown mutation {n!r}")
    old = set(_MUTATIONS)
    _MUTATIONS.update(names)
    try:
        yield
    finally:
        _MUTATIONS.clear()
        _MUTATIONS.update(old)


# ---------------------------------------------------------------- helpers


def _kind(*parts: EventStructure) -> str:
    kinds = {p.kind for p in parts if len(p) or p.kind != "plain"}
    if len(kinds) > 1:
        raise escore.AnnotationMismatch(" vs ".join(sorted(kinds)))
    return kinds.pop() if kinds else "plain"


def _strip(x, n: int) -> frozenset:
    return frozenset(e[n:] for e in x)


def atom(label, kind: str = "plain", op=None) -> EventStructure:
    """Single-event structure; the event id is the label text."""
    e = (str(label),)
    val = Valuation(lambda x: Fraction(1)) if kind == "prob" else None
    ops = {e: op} if kind == "quantum" else None
    return EventStructure({e: label}, {e: frozenset()}, {e: frozenset()}, val, ops)


# ---------------------------------------------------------------- constructions


def seq_compose(e1: EventStructure, e2: EventStructure) -> EventStructure:
    kind = _kind(e1, e2)
    labels, below, conf = escore.relabel(e1, ("L",))
    families = []
    for x in escore.maximal_configs(e1):
        tag = ("R", COPY + escore.fingerprint(x))
        lx = frozenset(("L",) + d for d in x)
        families.append((tag, x, lx))
        cl, cb, cc = escore.relabel(e2, tag)
        labels.update(cl)
        for e, s in cb.items():
            below[e] = s | lx
        # conflicts of E1 events are hereditary, so a # (e2, x) iff a clashes with x
        clash = frozenset(("L",) + a for a in e1.labels if e1.conflict[a] & x)
        for e, s in cc.items():
            conf[e] = s | clash
    for tag, x, lx in families:
        members = [e for e in labels if e[:2] == tag]
        others = frozenset(e for e in labels if e[0] == "R" and e[:2] != tag)
        for e in members:
            conf[e] = conf[e] | others
        clash = [("L",) + a for a in e1.labels if e1.conflict[a] & x]
        for a in clash:
            conf[a] = conf[a] | frozenset(members)
    val = ops = None
    if kind == "prob":
        v1, v2 = e1.valuation, e2.valuation

        def v(x: frozenset):
            left = _strip((e for e in x if e[0] == "L"), 1)
            right = [e for e in x if e[0] == "R"]
            if not right:
                return v1(left)
            return v1(left) * v2(_strip(right, 2))

        val = Valuation(v)
    if kind == "quantum":
        ops = {("L",) + e: m for e, m in e1.ops.items()}
        for tag, _, _ in families:
            ops.update({tag + e: m for e, m in e2.ops.items()})
    return EventStructure(labels, below, conf, val, ops)


def par_compose(e1: EventStructure, e2: EventStructure, tol: Optional[float] = None) -> EventStructure:
    kind = _kind(e1, e2)
    l1, b1, c1 = escore.relabel(e1, ("L",))
    l2, b2, c2 = escore.relabel(e2, ("R",))
    val = ops = None
    if kind == "prob":
        v1, v2 = e1.valuation, e2.valuation
        val = Valuation(lambda x: v1(_strip((e for e in x if e[0] == "L"), 1)) * v2(_strip((e for e in x if e[0] == "R"), 1)))
    if kind == "quantum":
        tol = settings.tolerance() if tol is None else tol
        for a, ma in sorted(e1.ops.items()):
            for b, mb in sorted(e2.ops.items()):
                if not quantum.commutes(ma, mb, tol):
                    raise NonCommutingParallel(f"{escore.id_str(a)} and {escore.id_str(b)}")
        ops = {("L",) + e: m for e, m in e1.ops.items()}
        ops.update({("R",) + e: m for e, m in e2.ops.items()})
    return EventStructure({**l1, **l2}, {**b1, **b2}, {**c1, **c2}, val, ops)


def nd_compose(e1: EventStructure, e2: EventStructure) -> EventStructure:
    if _kind(e1, e2) != "plain":
        raise escore.AnnotationMismatch("non-deterministic choice takes unannotated structures")
    l1, b1, c1 = escore.relabel(e1, ("L",))
    l2, b2, c2 = escore.relabel(e2, ("R",))
    if "nd-no-conflict" not in _MUTATIONS:
        s1, s2 = frozenset(l1), frozenset(l2)
        c1 = {e: s | s2 for e, s in c1.items()}
        c2 = {e: s | s1 for e, s in c2.items()}
    return EventStructure({**l1, **l2}, {**b1, **b2}, {**c1, **c2})


def _tags(n: int) -> list[tuple]:
    return [("L",), ("R",)] if n == 2 else [(f"I{i}",) for i in range(n)]


def prob_compose(weights: Sequence[Fraction], parts: Sequence[EventStructure]) -> EventStructure:
    """Probabilistic choice: a fresh tau event enables one of the parts."""
    weights = [Fraction(w) for w in weights]
    if len(weights) != len(parts) or not parts:
        raise ValueError("one weight per part")
    if any(w <= 0 for w in weights) or sum(weights) != 1:
        raise WeightsNotNormalized(f"weights {list(map(str, weights))}")
    for p in parts:
        if p.kind != "prob":
            raise escore.AnnotationMismatch("probabilistic choice takes valuated structures")
    tags = _tags(len(parts))
    labels, below, conf = {}, {}, {}
    blocks = []
    for tag, p in zip(tags, parts):
        l, b, c = escore.relabel(p, tag)
        labels.update(l)
        below.update(b)
        conf.update(c)
        blocks.append(frozenset(l))
    every = frozenset(labels)
    for blk in blocks:
        for e in blk:
            conf[e] = conf[e] | (every - blk)
    no_tau = "prob-no-tau" in _MUTATIONS
    tau = ("tau",)
    if not no_tau:
        labels[tau] = TAU
        for e in below:
            below[e] = below[e] | {tau}
        below[tau] = frozenset()
        conf[tau] = frozenset()
    vals = [p.valuation for p in parts]
    index = {tag[0]: i for i, tag in enumerate(tags)}

    def v(x: frozenset):
        rest = x - {tau}
        if not rest:
            return Fraction(1)
        i = index[next(iter(rest))[0]]
        return weights[i] * vals[i](_strip(rest, 1))

    return EventStructure(labels, below, conf, Valuation(v))


def meas_compose(n: int, u1: EventStructure, u2: EventStructure, ctx: QuantumContext) -> EventStructure:
    """Measurement of qubit ``n``: outcome 0 enables ``u1``, outcome 1 enables ``u2``."""
    for u in (u1, u2):
        if u.ops is None:
            raise escore.AnnotationMismatch("measurement takes quantum structures")
        for m in u.ops.values():
            if m.shape != (ctx.dim, ctx.dim):
                raise quantum.DimensionMismatch(f"operator {m.shape} in a {ctx.dim}-dimensional program")
    t0, t1 = (str(proj0(n)),), (str(proj1(n)),)
    l1, b1, c1 = escore.relabel(u1, ("L",))
    l2, b2, c2 = escore.relabel(u2, ("R",))
    side0 = frozenset(l1) | {t0}
    side1 = frozenset(l2) | {t1}
    labels = {**l1, **l2, t0: proj0(n), t1: proj1(n)}
    below = {**{e: s | {t0} for e, s in b1.items()}, **{e: s | {t1} for e, s in b2.items()}, t0: frozenset(), t1: frozenset()}
    conf = {**{e: s | side1 for e, s in c1.items()}, **{e: s | side0 for e, s in c2.items()}, t0: side1, t1: side0}
    ops = {("L",) + e: m for e, m in u1.ops.items()}
    ops.update({("R",) + e: m for e, m in u2.ops.items()})
    ops[t0] = ctx.measure_op(n, 0)
    ops[t1] = ctx.measure_op(n, 1)
    return EventStructure(labels, below, conf, None, ops)


# ---------------------------------------------------------------- interpretation


def _kind_of(flavor: Flavor) -> str:
    return {Flavor.NONDET: "plain", Flavor.PROB: "prob", Flavor.QUANTUM: "quantum"}[flavor]


def interpret(
    c: Command,
    flavor: Flavor | str,
    env: Optional[Mapping[str, EventStructure]] = None,
    unroll_depth: int = 0,
    *,
    ctx: Optional[QuantumContext] = None,
    horizon: Optional[int] = None,
) -> EventStructure:
    """Event structure of ``c``; loops are unrolled ``unroll_depth`` times."""
    flavor = Flavor(flavor)
    kind = _kind_of(flavor)
    if flavor is Flavor.QUANTUM and ctx is None:
        from .lang import qvar

        ctx = quantum.context_for(qvar(c))
    cache: dict = {}

    def cut(es: EventStructure) -> EventStructure:
        return es if horizon is None else escore.truncate(es, horizon)

    def need(ok: bool, what: str) -> None:
        if not ok:
            raise FlavorMismatch(f"{what} in a {flavor.value} program")

    def go(c: Command, env: Mapping[str, EventStructure]) -> EventStructure:
        closed = not fvar(c)
        if closed and c in cache:
            return cache[c]
        r = cut(build(c, env))
        if closed:
            cache[c] = r
        return r

    def build(c: Command, env) -> EventStructure:
        if isinstance(c, Done):
            return escore.empty(kind)
        if isinstance(c, Skip):
            return atom(SK, kind, ctx.identity() if ctx else None)
        if isinstance(c, Act):
            need(flavor is not Flavor.QUANTUM, "action")
            return atom(act(c.name), kind)
        if isinstance(c, Gate):
            need(flavor is Flavor.QUANTUM, "gate")
            return atom(gate(c.name, *c.qubits), kind, ctx.gate_op(c.name, c.qubits))
        if isinstance(c, Var):
            if c.name not in env:
                raise UnboundVariable(f"variable {c.name} has no binding")
            return env[c.name]
        if isinstance(c, Seq):
            return seq_compose(go(c.left, env), go(c.right, env))
        if isinstance(c, Par):
            return par_compose(go(c.left, env), go(c.right, env))
        if isinstance(c, NdChoice):
            need(flavor is Flavor.NONDET, "'+'")
            return nd_compose(go(c.left, env), go(c.right, env))
        if isinstance(c, ProbChoice):
            need(flavor is Flavor.PROB, "'+[p]'")
            return prob_compose([c.p, 1 - c.p], [go(c.left, env), go(c.right, env)])
        if isinstance(c, Meas):
            need(flavor is Flavor.QUANTUM, "'meas'")
            return meas_compose(c.qubit, go(c.left, env), go(c.right, env), ctx)
        if isinstance(c, Rec):
            need(flavor is not Flavor.QUANTUM, "'mu'")
            approx = escore.empty(kind)
            for _ in range(unroll_depth):
                approx = go(c.body, {**env, c.var: approx})
            return approx
        if isinstance(c, While):
            need(flavor is Flavor.QUANTUM, "'while'")
            body = go(c.body, env)
            approx = escore.empty(kind)
            for _ in range(unroll_depth):
                approx = cut(meas_compose(c.qubit, escore.empty(kind), cut(seq_compose(body, approx)), ctx))
            return approx
        raise TypeError(f"not a command: {c!r}")

    return go(c, dict(env or {}))


def unrollings(c: Rec | While, flavor: Flavor | str, k: int, *, ctx: Optional[QuantumContext] = None) -> list:
    """``[Gamma^0(bottom), ..., Gamma^k(bottom)]`` for a loop command."""
    return [interpret(c, flavor, None, i, ctx=ctx) for i in range(k + 1)]

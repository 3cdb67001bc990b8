"""Bounded differential checks between the operational and denotational semantics.

Every check compares words of length at most ``depth``.  Denotations are
built with loops unrolled ``unroll`` times (at least ``depth``) and cut at
horizon ``depth``; a maximal configuration of exactly ``depth`` events may
be an artefact of the unrolling, so it is accepted when its word is still
running operationally.
"""

from __future__ import annotations

import json
import random
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from . import densem, escore, opsem, quantum, settings
from .escore import EventStructure
from .lang import (
    TAU,
    Act,
    Command,
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
    children,
    pretty,
    qvar,
    word_str,
)


@dataclass
class EquivReport:
    program: str
    depth: int
    missing_in_denotation: list = field(default_factory=list)
    missing_in_operational: list = field(default_factory=list)
    probability_mismatches: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        bad = self.missing_in_denotation or self.missing_in_operational or self.probability_mismatches
        return "fail" if bad else "pass"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {
            "program": self.program,
            "depth": self.depth,
            "verdict": self.verdict,
            "missing_in_denotation": sorted(self.missing_in_denotation),
            "missing_in_operational": sorted(self.missing_in_operational),
            "probability_mismatches": sorted(self.probability_mismatches),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)


def _chain_words(es: EventStructure, depth: int) -> set:
    return {escore.chain_word(es, ch) for ch in escore.chains_upto(es, depth)}


def _compare_words(report: EquivReport, ops: set, den: set) -> None:
    report.missing_in_denotation += [word_str(w) for w in ops - den]
    report.missing_in_operational += [word_str(w) for w in den - ops]


def _unroll(depth: int, unroll: Optional[int]) -> int:
    u = depth if unroll is None else unroll
    if u < depth:
        raise ValueError("unroll depth must be at least the word depth")
    return u


def check_nondet(c: Command, depth: int, unroll: Optional[int] = None) -> EquivReport:
    den = densem.interpret(c, Flavor.NONDET, None, _unroll(depth, unroll), horizon=depth)
    rep = EquivReport(pretty(c), depth)
    _compare_words(rep, {w for w, _ in opsem.words(c, depth)}, _chain_words(den, depth))
    return rep


def check_prob(c: Command, depth: int, unroll: Optional[int] = None) -> EquivReport:
    den = densem.interpret(c, Flavor.PROB, None, _unroll(depth, unroll), horizon=depth)
    rep = EquivReport(pretty(c), depth)
    entries = opsem.prob_words(c, depth)
    _compare_words(rep, {e.word for e in entries}, _chain_words(den, depth))

    terminal = defaultdict(set)
    running = set()
    for e in entries:
        (terminal[e.word].add(e.probability) if e.terminal else running.add(e.word))
    maximal = defaultdict(set)
    frontier = set()
    for x in escore.maximal_configs(den, depth):
        v = den.valuation(x)
        for ch in escore.covering_chains(den, x):
            w = escore.chain_word(den, ch)
            maximal[w].add(v)
            if len(x) == depth:
                frontier.add((w, v))

    for w, probs in terminal.items():
        for p in probs:
            if not maximal.get(w):
                rep.missing_in_denotation.append(f"{word_str(w)} [terminal]")
            elif p not in maximal[w]:
                rep.probability_mismatches.append(f"{word_str(w)}: operational {p}, denotational {_fmt(maximal[w])}")
    for w, vals in maximal.items():
        for v in vals:
            if v in terminal.get(w, ()):
                continue
            if (w, v) in frontier and w in running:
                continue
            if terminal.get(w):
                rep.probability_mismatches.append(f"{word_str(w)}: operational {_fmt(terminal[w])}, denotational {v}")
            else:
                rep.missing_in_operational.append(f"{word_str(w)} [terminal]")
    return rep


def _fmt(vals) -> str:
    return "{" + ", ".join(sorted(str(v) for v in vals)) + "}"


def check_quantum(c: Command, depth: int, rho: np.ndarray, unroll: Optional[int] = None,
                  ctx: Optional[quantum.QuantumContext] = None, tol: Optional[float] = None) -> EquivReport:
    tol = settings.tolerance() if tol is None else tol
    ctx = ctx or quantum.context_for(qvar(c))
    den = densem.interpret(c, Flavor.QUANTUM, None, _unroll(depth, unroll), ctx=ctx, horizon=depth)
    pes = quantum.valuation_from_state(den, rho, tol, check=False)
    rep = EquivReport(pretty(c), depth)
    ops = {w for w, _ in opsem.words(c, depth)}
    chains = list(escore.chains_upto(den, depth))
    _compare_words(rep, ops, {escore.chain_word(den, ch) for ch in chains})
    traces: dict = {}
    for ch in chains:
        w = escore.chain_word(den, ch)
        if w not in ops:
            continue
        if w not in traces:
            traces[w] = quantum.trace(opsem.apply_word(w, rho, ctx)).real
        v = pes.valuation(frozenset(ch))
        if abs(traces[w] - v) > tol:
            rep.probability_mismatches.append(f"{word_str(w)}: operational {traces[w]:.12g}, denotational {v:.12g}")
    rep.probability_mismatches = sorted(set(rep.probability_mismatches))
    return rep


def check(c: Command, flavor: Flavor | str, depth: int, *, unroll: Optional[int] = None,
          rho: Optional[np.ndarray] = None, ctx=None) -> EquivReport:
    flavor = Flavor(flavor)
    if flavor is Flavor.NONDET:
        return check_nondet(c, depth, unroll)
    if flavor is Flavor.PROB:
        return check_prob(c, depth, unroll)
    ctx = ctx or quantum.context_for(qvar(c))
    if rho is None:
        rho = np.zeros((ctx.dim, ctx.dim), dtype=complex)
        rho[0, 0] = 1
    return check_quantum(c, depth, rho, unroll, ctx)


# ---------------------------------------------------------------- single steps


@dataclass
class StepReport:
    program: str
    failures: list = field(default_factory=list)
    checked: int = 0

    @property
    def passed(self) -> bool:
        return not self.failures


def _has_loop(c: Command) -> bool:
    return isinstance(c, (Rec, While)) or any(_has_loop(k) for k in children(c))


def check_single_step(c: Command, flavor: Flavor | str, depth: int = 3,
                      ctx: Optional[quantum.QuantumContext] = None) -> StepReport:
    """Each one-step residual denotes the structure left after removing the matching initial event.

    Programs with loops are compared up to events of down-closure at most
    ``depth - 1`` (the residual of a ``depth``-fold unrolling is only exact
    that far).
    """
    flavor = Flavor(flavor)
    if flavor is Flavor.QUANTUM:
        ctx = ctx or quantum.context_for(qvar(c))
    loops = _has_loop(c)
    horizon = depth if loops else None
    keep = depth - 1 if loops else None

    def den(k: Command) -> EventStructure:
        return densem.interpret(k, flavor, None, depth if loops else 0, ctx=ctx, horizon=horizon)

    def cut(es: EventStructure) -> EventStructure:
        return es if keep is None else escore.truncate(es, keep)

    rep = StepReport(pretty(c))
    whole = den(c)
    inits = escore.init_events(whole)
    removed = {e: cut(escore.remove_initial(whole, e)) for e in inits}

    if flavor is Flavor.PROB:
        dists = opsem.step_prob(c)
        points = [(d.support[0][1], d.support[0][2]) for d in dists if d.is_point]
        taus = [d for d in dists if not d.is_point]
    else:
        points = opsem.step(c)
        taus = []

    matched: set = set()
    for l, k in points:
        rep.checked += 1
        res = cut(den(k))
        hits = [e for e in inits if whole.labels[e] == l and escore.equivalent(res, removed[e])]
        matched.update(hits)
        if not hits:
            rep.failures.append(f"step {l} -> {pretty(k)}: no initial event leaves an equivalent structure")

    tau_events = [e for e in inits if whole.labels[e] == TAU]
    tau_ok = []
    for d in taus:
        rep.checked += 1
        parts = [den(k) for _, _, k in d.support]
        total = densem.prob_compose([p for p, _, _ in d.support], parts)
        why = _tau_mismatch(whole, total, depth, loops)
        if why:
            rep.failures.append(f"tau step {_dist_str(d)}: {why}")
        tau_ok.append((d, not why))
    for e in tau_events:
        weights = _branch_weights(whole, e)
        if any(ok and _submultiset(weights, [p for p, _, _ in d.support]) for d, ok in tau_ok):
            matched.add(e)

    for e in inits:
        if e not in matched:
            rep.failures.append(f"initial event {escore.id_str(e)} has no matching step")
    return rep


def _dist_str(d: opsem.Distribution) -> str:
    return " + ".join(f"{p}*({l}, {pretty(k)})" for p, l, k in d.support)


def _branch_weights(es: EventStructure, t) -> list:
    """Probabilities of the branches opened by tau event ``t``."""
    succ = [f for f in es.above[t] if es.below[f] == frozenset({t})]
    groups: list = []
    for f in sorted(succ):
        for g in groups:
            if es.in_conflict(f, g[0]):
                continue
            if all(not es.in_conflict(f, h) for h in g):
                g.append(f)
                break
        else:
            groups.append([f])
    return [es.valuation(frozenset({t, g[0]})) for g in groups]


def _submultiset(small: list, big: list) -> bool:
    pool = list(big)
    for x in small:
        if x not in pool:
            return False
        pool.remove(x)
    return True


def _tau_mismatch(whole: EventStructure, total: EventStructure, depth: int, loops: bool) -> str:
    """Why the weighted sum of the branches does not fit inside ``whole`` (empty if it does)."""
    k = depth - 1 if loops else None
    words_total = _chain_words(total, depth if k is None else k)
    words_whole = _chain_words(whole, depth if k is None else k)
    extra = words_total - words_whole
    if extra:
        return f"words {sorted(map(word_str, extra))} not in the program's structure"
    for y in escore.maximal_configs(total, k):
        if k is not None and len(y) >= k:
            continue
        vy = total.valuation(y)
        ws = {escore.chain_word(total, ch) for ch in escore.covering_chains(total, y)}
        ok = any(
            whole.valuation(x) == vy and ws & {escore.chain_word(whole, ch) for ch in escore.covering_chains(whole, x)}
            for x in escore.maximal_configs(whole, len(y))
            if len(x) == len(y)
        )
        if not ok:
            return f"maximal configuration {sorted(map(word_str, ws))} with value {vy} has no counterpart"
    return ""


# ---------------------------------------------------------------- fuzzing

ACTIONS = ("a", "b", "c", "d")
WEIGHTS = (Fraction(1, 2), Fraction(1, 3), Fraction(2, 3), Fraction(1, 4), Fraction(3, 4))
ONE_QUBIT = ("H", "X", "Y", "Z", "S", "T")
TWO_QUBIT = ("CNOT", "CZ", "SWAP")


class _Gen:
    """Random closed programs with guarded recursion."""

    def __init__(self, rng: random.Random, flavor: Flavor):
        self.rng = rng
        self.flavor = flavor
        self.names = 0

    def split(self, n: int) -> tuple[int, int]:
        a = self.rng.randint(0, n)
        return a, n - a

    def leaf(self, guarded: tuple, qubits: tuple) -> Command:
        r = self.rng
        if self.flavor is Flavor.QUANTUM:
            if r.random() < 0.15:
                return Skip()
            if len(qubits) >= 2 and r.random() < 0.3:
                return Gate(r.choice(TWO_QUBIT), tuple(r.sample(qubits, 2)))
            return Gate(r.choice(ONE_QUBIT), (r.choice(qubits),))
        if guarded and r.random() < 0.6:
            return Var(r.choice(guarded))
        if r.random() < 0.15:
            return Skip()
        return Act(r.choice(ACTIONS))

    def cmd(self, budget: int, guarded: tuple = (), pending: tuple = (), loops: int = 0,
            qubits: tuple = ()) -> Command:
        r = self.rng
        if budget <= 0 or (not pending and r.random() < 0.2):
            return self.leaf(guarded, qubits)
        # inside a loop body, favour operators that guard the loop variable
        weights = {"seq": 3 if pending else 2, "par": 1}
        if self.flavor is Flavor.NONDET:
            weights["nd"] = 1
        if self.flavor is Flavor.PROB:
            weights["prob"] = 3 if pending else 2
        if self.flavor is Flavor.QUANTUM:
            weights["meas"] = 2
            if len(qubits) < 2:
                del weights["par"]
        if loops < 2:
            weights["loop"] = 1
        ops = sorted(weights)
        op = r.choices(ops, [weights[o] for o in ops])[0]
        a, b = self.split(budget - 1)
        everything = guarded + pending
        if op == "seq":
            if self.flavor is Flavor.QUANTUM:
                return Seq(self.cmd(a, loops=loops, qubits=qubits), self.cmd(b, loops=loops, qubits=qubits))
            left = self.cmd(a, loops=2)  # closed and loop-free
            return Seq(left, self.cmd(b, everything, (), loops, qubits))
        if op == "par":
            if self.flavor is Flavor.QUANTUM:
                qs = list(qubits)
                r.shuffle(qs)
                cut = r.randint(1, len(qs) - 1)
                return Par(self.cmd(a, loops=loops, qubits=tuple(sorted(qs[:cut]))),
                           self.cmd(b, loops=loops, qubits=tuple(sorted(qs[cut:]))))
            return Par(self.cmd(a, guarded, pending, loops), self.cmd(b, guarded, pending, loops))
        if op == "nd":
            return NdChoice(self.cmd(a, guarded, pending, loops), self.cmd(b, guarded, pending, loops))
        if op == "prob":
            return ProbChoice(r.choice(WEIGHTS), self.cmd(a, everything, (), loops), self.cmd(b, everything, (), loops))
        if op == "meas":
            return Meas(r.choice(qubits), self.cmd(a, loops=loops, qubits=qubits), self.cmd(b, loops=loops, qubits=qubits))
        if self.flavor is Flavor.QUANTUM:
            return While(r.choice(qubits), self.cmd(budget - 1, loops=loops + 1, qubits=qubits))
        self.names += 1
        var = ("X", "Y", "Z", "W")[self.names % 4] + ("" if self.names < 4 else str(self.names))
        return Rec(var, self.cmd(budget - 1, guarded, pending + (var,), loops + 1))


def random_program(flavor: Flavor | str, size: int, rng: random.Random) -> Command:
    flavor = Flavor(flavor)
    g = _Gen(rng, flavor)
    if flavor is Flavor.QUANTUM:
        qubits = tuple(sorted(rng.sample(range(4), rng.randint(1, 3))))
        return g.cmd(size, qubits=qubits)
    return g.cmd(size)


def fuzz_corpus(flavor: Flavor | str, count: int, size: int, seed: int) -> list:
    """The programs ``fuzz`` checks, paired with a random state for quantum ones."""
    flavor = Flavor(flavor)
    rng = random.Random(f"{flavor.value}:{seed}")
    out = []
    for i in range(count):
        c = random_program(flavor, size, rng)
        rho = None
        if flavor is Flavor.QUANTUM:
            dim = 2 ** len(qvar(c))
            rho = quantum.random_density(dim, np.random.default_rng([seed, i]))
        out.append((c, rho))
    return out


def fuzz(flavor: Flavor | str, count: int, size: int, depth: int, seed: int,
         unroll: Optional[int] = None) -> list:
    """Check ``count`` random programs; deterministic in ``seed``."""
    flavor = Flavor(flavor)
    return [
        check(c, flavor, depth, unroll=unroll, rho=rho)
        for c, rho in fuzz_corpus(flavor, count, size, seed)
    ]

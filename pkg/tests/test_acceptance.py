"""End-to-end acceptance checks, one test per criterion.

Each test records a ``criterion N: PASS|FAIL`` line with its wall time; the
lines are printed in the terminal summary (see ``conftest.py``).
"""

import io
import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

from concsem import densem, escore, quantum
from concsem.cli import main
from concsem.equiv import check, check_prob, fuzz, fuzz_corpus
from concsem.lang import Flavor, act, parse, qvar

import lemmas
import oracles

ND, PR, QU = Flavor.NONDET, Flavor.PROB, Flavor.QUANTUM
TOL = 1e-9
FUZZ = dict(count=100, size=6, depth=5, seed=42)

RESULTS: dict = {}


@contextmanager
def criterion(n: str, title: str, limit: float | None = None):
    t0 = time.perf_counter()
    ok = False
    try:
        yield
        ok = True
    finally:
        dt = time.perf_counter() - t0
        if ok and limit is not None and dt >= limit:
            ok = False
            title += f" (over {limit:g} s budget)"
        RESULTS[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  [{dt:.2f} s]"
    assert ok, RESULTS[n]


def cli_words(*argv):
    out = io.StringIO()
    assert main(["run", *argv], out=out) == 0
    return {line.split("\t")[0].replace(" ", "") for line in out.getvalue().splitlines()}


def test_criterion_1_nondet_examples():
    with criterion("1", "nondeterministic example words and configurations", 1.0):
        assert cli_words("(a;b)+(c||d)", "--depth", "2") == {"a", "c", "d", "ab", "cd", "dc"}
        assert cli_words("(a;b)||c", "--depth", "3") == {"a", "c", "ab", "ac", "ca", "abc", "acb", "cab"}
        a, b, c, d = ("a",), ("b",), ("c",), ("d",)
        es = escore.build({e: act(e[0]) for e in (a, b, c, d)}, le=[(a, b)],
                          conflict=[(a, c), (a, d)])
        got = {frozenset(e[0] for e in x) for x in escore.configurations(es)}
        assert got == {frozenset(s) for s in ["", "a", "c", "d", "ab", "cd"]}


def test_criterion_2_prob_example():
    with criterion("2", "probabilistic example triples and total mass", 1.0):
        out = io.StringIO()
        assert main(["run", "(a;b) +[1/3] (c||d)", "--flavor", "prob", "--depth", "3"], out=out) == 0
        triples = {tuple(row.split("\t")[:2]) for row in out.getvalue().splitlines() if row.endswith("terminal")}
        assert triples == {("tau a b", "1/3"), ("tau c d", "2/3"), ("tau d c", "2/3")}
        c = parse("(a;b) +[1/3] (c||d)", PR)
        assert check_prob(c, 3).passed
        es = densem.interpret(c, PR)
        total = sum(es.valuation(x) for x in escore.maximal_configs(es))
        assert isinstance(total, Fraction) and total == 1


def test_criterion_3_quantum_example():
    with criterion("3", "quantum example traces, states and valuation", 1.0):
        from concsem.opsem import apply_word, words

        c = parse("H(1); meas 1 { X(1) } else { Z(1) }", QU)
        ctx = quantum.context_for([1])
        rho = oracles.ket("0")
        finals = [w for w, t in words(c, 3) if t]
        assert len(finals) == 2
        for w in finals:
            out = apply_word(w, rho, ctx)
            assert abs(quantum.trace(out) - 0.5) <= TOL
            assert np.max(np.abs(out - 0.5 * oracles.ket("1"))) <= TOL
        pes = quantum.valuation_from_state(densem.interpret(c, QU, ctx=ctx), rho)
        tops = escore.maximal_configs(pes)
        assert len(tops) == 2
        assert all(abs(pes.valuation(x) - 0.5) <= TOL for x in tops)


def test_criterion_4_differential_fuzz():
    with criterion("4", "300 random programs agree across semantics", 60.0):
        reps = [r for f in Flavor for r in fuzz(f, **FUZZ)]
        bad = [r.to_dict() for r in reps if not r.passed]
        assert len(reps) == 300 and not bad, bad[:3]
        assert all(len(qvar(c)) <= 3 for c, _ in fuzz_corpus(QU, FUZZ["count"], FUZZ["size"], FUZZ["seed"]))


def quantum_corpus():
    for c, _ in fuzz_corpus(QU, FUZZ["count"], FUZZ["size"], FUZZ["seed"]):
        ctx = quantum.context_for(qvar(c))
        d = FUZZ["depth"]
        yield c, ctx, densem.interpret(c, QU, None, d, ctx=ctx, horizon=d)


def test_criterion_5_drop_condition():
    with criterion("5", "drop condition on the quantum corpus plus the -1 counterexample", 60.0):
        checked = 0
        for i, (c, ctx, es) in enumerate(quantum_corpus()):
            gen = np.random.default_rng([5, i])
            for _ in range(5):
                pes = quantum.valuation_from_state(es, quantum.random_density(ctx.dim, gen), check=False)
                res = quantum.drop_check(pes)
                assert res.ok, (c, [str(v) for v in res.violations])
                checked += 1
        assert checked == 500
        a, b = ("a",), ("b",)
        bad = escore.build({a: act("a"), b: act("b")}, conflict=[(a, b)],
                           valuation=escore.Valuation(lambda x: Fraction(1)))
        res = quantum.drop_check(bad)
        assert not res.ok and res.minimum == -1


def test_criterion_6_chain_invariance():
    with criterion("6", "covering chains agree on every configuration operator"):
        worst, multi = 0.0, 0
        for _, _, es in quantum_corpus():
            for x in escore.configurations(es):
                if len(escore.covering_chains(es, x)) >= 2:
                    multi += 1
                    worst = max(worst, quantum.chain_disagreement(es, x))
        assert multi > 0
        assert worst <= TOL


LOOPS = [
    ("mu X . (skip + (a;X))", ND),
    ("mu X . (skip +[1/2] X)", PR),
    ("while 1 { H(1) }", QU),
]


def test_criterion_7_fixpoint_chains():
    with criterion("7", "unrolling chains grow and stabilise; loop exit probabilities"):
        for src, flavor in LOOPS:
            chain = densem.unrollings(parse(src, flavor), flavor, 6)
            for k in range(6):
                assert escore.order_unroll(chain[k], chain[k + 1]), (src, k)
                assert set(escore.configurations(chain[k], k)) == set(escore.configurations(chain[k + 1], k))
        ctx = quantum.context_for([1])
        es = densem.interpret(parse("while 1 { H(1) }", QU), QU, None, 6, ctx=ctx)
        pes = quantum.valuation_from_state(es, oracles.PLUS)
        exits = {}
        for x in escore.maximal_configs(pes):
            labels = [str(es.labels[e]) for e in x]
            if "P0(1)" in labels:
                exits[len(x)] = pes.valuation(x)
        for n, p in [(1, 0.5), (3, 0.25), (5, 0.125)]:
            assert abs(exits[n] - p) <= TOL


def test_criterion_8_algebraic_laws():
    with criterion("8", "algebraic laws on 50 sampled instances each"):
        failures = {name: lemmas.run(name, instances=50) for name in lemmas.LAWS}
        assert len(failures) == 10
        assert not any(failures.values()), {k: v[:2] for k, v in failures.items() if v}


@pytest.mark.parametrize("name,flavor", [("nd-no-conflict", ND), ("prob-no-tau", PR)])
def test_criterion_9_mutations(name, flavor):
    key = "9a" if name == "nd-no-conflict" else "9b"
    with criterion(key, f"mutation {name} is caught by the fuzzer"):
        caught = False
        with densem.mutation(name):
            for c, rho in fuzz_corpus(flavor, FUZZ["count"], FUZZ["size"], FUZZ["seed"]):
                if not check(c, flavor, FUZZ["depth"], rho=rho).passed:
                    caught = True
                    break
        assert caught

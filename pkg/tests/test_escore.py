import json
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from concsem import densem, escore
from concsem.escore import (
    AnnotationMismatch,
    NotAChain,
    NotAConfiguration,
    NotInitial,
    Valuation,
    ZeroProbabilityRemoval,
    build,
    chain_lub,
    chain_word,
    concurrent,
    configurations,
    covering_chains,
    empty,
    equivalent,
    immediate_causality,
    init_events,
    maximal_configs,
    minimal_conflict,
    order_sub,
    order_unroll,
    remove_initial,
    restrict,
    validate,
)
from concsem.lang import Flavor, act, parse, word_str

import oracles
from conftest import loop_free

ND, PR = Flavor.NONDET, Flavor.PROB
A, B, C, D = ("a",), ("b",), ("c",), ("d",)


def branching():
    """Four events: a below b, a in conflict with c and d."""
    return build(
        {A: act("a"), B: act("b"), C: act("c"), D: act("d")},
        le=[(A, B)],
        conflict=[(A, C), (A, D)],
    )


def den(src, flavor=ND, unroll=0):
    return densem.interpret(parse(src, flavor), flavor, None, unroll)


def ids(es):
    """Label text -> event id, for structures whose labels are distinct."""
    out = {str(l): e for e, l in es.labels.items()}
    assert len(out) == len(es)
    return out


def named(es, xs):
    return {frozenset(str(es.labels[e]) for e in x) for x in xs}


def words(es, chains):
    return {word_str(chain_word(es, ch)) for ch in chains}


def relations(es):
    le = {(a, b) for b in es.labels for a in es.below[b]}
    cf = {(a, b) for a in es.labels for b in es.conflict[a]}
    return le, cf


# ---------------------------------------------------------------- validation


def test_branching_is_valid_and_closed():
    es = branching()
    assert validate(es) == []
    # heredity pushes a's conflicts onto b
    assert es.in_conflict(B, C) and es.in_conflict(B, D)


def test_heredity_violation_has_witness():
    es = build({A: act("a"), B: act("b"), C: act("c")}, le=[(B, C)], conflict=[(A, B)], close=False)
    v = validate(es)
    assert [(x.rule, x.witness) for x in v] == [("heredity", (A, B, C))]


def test_other_violations():
    es = build({A: act("a"), B: act("b")}, le=[(A, B), (B, A)], conflict=[(A, A)], close=False)
    rules = {v.rule for v in validate(es)}
    assert {"antisymmetry", "irreflexive-conflict"} <= rules


def test_empty_structure_valid():
    assert validate(empty()) == []


# ---------------------------------------------------------------- configurations


def test_branching_configurations():
    assert named(branching(), configurations(branching(), 4)) == {
        frozenset(), frozenset("a"), frozenset("c"), frozenset("d"), frozenset("ab"), frozenset("cd"),
    }


def test_configurations_match_exhaustive_search():
    for src in ["(a;b)+(c||d)", "(a;b)||c", "((a+b);c)||d", "(a||b);(c+d)"]:
        es = den(src)
        le, cf = relations(es)
        assert set(configurations(es)) == oracles.configurations(es.labels, le, cf)


def test_empty_configurations():
    assert configurations(empty()) == [frozenset()]
    assert maximal_configs(empty()) == [frozenset()]


def test_sequence_parallel_configurations():
    es = den("(a;b)||c")
    assert named(es, configurations(es, 3)) == {
        frozenset(), frozenset("a"), frozenset("c"), frozenset("ab"), frozenset("ac"), frozenset("abc"),
    }


def test_max_size_bounds_configurations():
    es = den("(a;b)||c")
    assert all(len(x) <= 2 for x in configurations(es, 2))
    assert len(configurations(es, 2)) == 5


def test_covering_chains_branching():
    es = branching()
    assert words(es, covering_chains(es, {C, D})) == {"c d", "d c"}
    assert covering_chains(es, set()) == []


def test_covering_chains_match_interleavings():
    es = den("(a;b)||c")
    top = frozenset(es.labels)
    le, _ = relations(es)
    assert set(covering_chains(es, top)) == oracles.interleavings(top, le)
    assert words(es, covering_chains(es, top)) == {"a b c", "a c b", "c a b"}


def test_covering_chains_reject_non_configuration():
    with pytest.raises(NotAConfiguration):
        covering_chains(branching(), {B})
    with pytest.raises(NotAConfiguration):
        covering_chains(branching(), {A, C})


def test_maximal_configs():
    assert named(branching(), maximal_configs(branching())) == {frozenset("ab"), frozenset("cd")}
    sk = den("skip")
    assert named(sk, maximal_configs(sk)) == {frozenset({"sk"})}


# ---------------------------------------------------------------- derived relations


def test_branching_initial_and_minimal_conflict():
    es = branching()
    assert init_events(es) == [A, C, D]
    assert set(minimal_conflict(es)) == {(A, C), (C, A), (A, D), (D, A)}
    assert concurrent(es, C, D)
    assert not concurrent(es, A, C) and not concurrent(es, A, B)
    assert immediate_causality(es) == [(A, B)]


def test_single_event_initial():
    es = den("a")
    assert init_events(es) == list(es.labels)


def test_immediate_causality_skips_transitive_pairs():
    es = den("a;(b;c)")
    n = ids(es)
    assert set(immediate_causality(es)) == {(n["a"], n["b"]), (n["b"], n["c"])}


# ---------------------------------------------------------------- removal


def test_remove_initial_branching():
    out = remove_initial(branching(), A)
    assert set(out.labels) == {B}
    assert out.below[B] == frozenset()
    assert validate(out) == []


def test_remove_skip_leaves_empty():
    es = den("skip")
    (e,) = es.labels
    assert len(remove_initial(es, e)) == 0


def test_remove_tau_renormalises():
    p = Fraction(1, 3)
    es = den(f"(a;b) +[{p}] (c||d)", PR)
    n = ids(es)
    out = remove_initial(es, n["tau"])
    assert sorted(str(l) for l in out.labels.values()) == ["a", "b", "c", "d"]
    assert out.valuation(frozenset({n["a"]})) == p
    assert out.valuation(frozenset({n["c"]})) == 1 - p
    assert out.valuation(frozenset()) == 1


def test_remove_requires_initial_event():
    with pytest.raises(NotInitial):
        remove_initial(branching(), B)


def test_remove_zero_probability_event():
    v = Valuation(lambda x: Fraction(0) if x else Fraction(1))
    es = build({A: act("a")}, valuation=v)
    with pytest.raises(ZeroProbabilityRemoval):
        remove_initial(es, A)


# ---------------------------------------------------------------- orders


def test_order_sub_examples():
    a, ab, b = den("a"), den("a+b"), den("b")
    assert order_sub(a, a)
    assert order_sub(a, ab)
    assert not order_sub(ab, a)
    assert not order_sub(a, b)


def test_order_sub_needs_reflected_relations():
    # a;b is not inside a||b: causality must be reflected
    assert not order_sub(den("a;b"), den("a||b"))
    assert order_sub(den("a"), den("a||b"))


def test_order_sub_valuation_clause():
    half = den("a +[1/2] b", PR)
    third = den("a +[1/3] b", PR)
    assert order_sub(half, half)
    tau_only = restrict(half, [("tau",)])
    assert order_sub(tau_only, half)
    assert not order_sub(half, third)


def test_annotation_mismatch():
    with pytest.raises(AnnotationMismatch):
        order_sub(den("a"), den("a", PR))
    with pytest.raises(AnnotationMismatch):
        equivalent(den("a"), den("a", PR))


def test_equivalent_examples():
    seq = den("a;b")
    n = ids(seq)
    assert equivalent(den("b"), remove_initial(seq, n["a"]))
    assert equivalent(den("a||b"), den("b||a"))
    assert not equivalent(den("a"), den("a+a"))


def test_equivalent_compares_valuations():
    assert equivalent(den("a +[1/3] b", PR), den("b +[2/3] a", PR))
    assert not equivalent(den("a +[1/3] b", PR), den("b +[1/3] a", PR))


def test_order_unroll_examples():
    loop = parse("mu X . (skip +[1/2] X)", PR)
    chain = densem.unrollings(loop, PR, 5)
    bottom = chain[0]
    assert len(bottom) == 0
    for es in chain:
        assert order_unroll(bottom, es)
    for x, y in zip(chain, chain[1:]):
        assert order_unroll(x, y)
    assert not order_unroll(chain[2], bottom)


def test_order_unroll_preserves_copies():
    # the same erased shape under different ids is not an unrolling step
    assert order_sub(den("a"), den("a||b"))
    assert not order_unroll(den("a"), den("a||b"))


def test_chain_lub():
    loop = parse("mu X . (skip +[1/2] X)", PR)
    chain = densem.unrollings(loop, PR, 3)
    assert escore.same(chain_lub(chain[:1]), chain[0])
    es = chain[3]
    assert escore.same(chain_lub([chain[0], es, es]), es)
    assert escore.same(chain_lub(chain), chain[3])
    with pytest.raises(NotAChain):
        chain_lub([chain[3], chain[1]])
    with pytest.raises(NotAChain):
        chain_lub([])


# ---------------------------------------------------------------- export


def test_json_export():
    doc = json.loads(escore.to_json(den("(a;b)+(c||d)")))
    assert sorted(doc) == ["conflict", "events", "le"]
    assert sorted(e["label"] for e in doc["events"]) == ["a", "b", "c", "d"]
    assert len(doc["le"]) == 1
    labels = {e["id"]: e["label"] for e in doc["events"]}
    assert sorted(sorted(labels[i] for i in pair) for pair in doc["conflict"]) == [
        ["a", "c"], ["a", "d"], ["b", "c"], ["b", "d"],
    ]


def test_json_valuation_is_rational_text():
    doc = json.loads(escore.to_json(den("a +[1/3] b", PR)))
    assert ["1/3"] == [v for x, v in doc["valuation"] if len(x) == 2 and any(i.endswith("a") for i in x)]


def test_dot_export_branching():
    dot = escore.to_dot(den("(a;b)+(c||d)"))
    assert dot.count("[label=") == 4
    assert dot.count("dir=none") == 2
    assert sum(1 for line in dot.splitlines() if "->" in line and "dir=none" not in line) == 1
    assert escore.to_dot(den("skip")).count("[label=") == 1


# ---------------------------------------------------------------- properties


structures = st.one_of(loop_free(ND).map(lambda c: densem.interpret(c, ND)),
                       loop_free(PR).map(lambda c: densem.interpret(c, PR)))


@given(structures)
def test_constructed_structures_are_valid(es):
    assert validate(es) == []


@given(structures)
def test_covering_chains_are_permutations(es):
    for x in configurations(es, 4):
        chains = covering_chains(es, x)
        if x:
            assert chains
        assert all(len(ch) == len(x) and set(ch) == x for ch in chains)


@given(structures)
def test_orders_reflexive(es):
    assert order_sub(es, es)
    assert order_unroll(es, es)
    assert equivalent(es, es)


@given(structures, st.randoms(use_true_random=False))
def test_orders_transitive_on_restrictions(es, rnd):
    confs = configurations(es)
    big = rnd.choice(confs)
    small = rnd.choice([x for x in confs if x <= big])
    e2, e1 = restrict(es, big), restrict(es, small)
    assert order_sub(e1, e2) and order_sub(e2, es) and order_sub(e1, es)
    assert order_unroll(e1, e2) and order_unroll(e2, es) and order_unroll(e1, es)


@given(structures, st.randoms(use_true_random=False))
def test_order_unroll_antisymmetric(es, rnd):
    other = restrict(es, rnd.choice(configurations(es)))
    if order_unroll(es, other) and order_unroll(other, es):
        assert escore.same(es, other)
        assert len(other) == len(es)


@given(loop_free(ND, 4), loop_free(ND, 4))
def test_equivalent_symmetric(c1, c2):
    a = densem.interpret(c1, ND)
    b = densem.interpret(c2, ND)
    assert equivalent(a, b) == equivalent(b, a)


@given(structures)
def test_remove_initial_shrinks(es):
    for e in init_events(es):
        out = remove_initial(es, e)
        assert len(out) < len(es)
        assert validate(out) == []

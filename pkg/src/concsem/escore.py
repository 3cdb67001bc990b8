"""Prime event structures.

Events are identified by provenance paths (tuples of string tags).  The
causal order is stored as the strict down-set of every event and the
conflict relation as the set of conflicting events per event.  A structure
optionally carries a valuation (probabilistic flavor) or an operator map
(quantum flavor).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from itertools import product
from typing import Callable, Iterable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from . import settings
from .lang import Label

EventId = tuple
Config = frozenset
Value = Union[Fraction, float]

COPY = "Copy#"


class NotAConfiguration(ValueError):
    pass


class NotInitial(ValueError):
    pass


class ZeroProbabilityRemoval(ValueError):
    pass


class AnnotationMismatch(ValueError):
    pass


class NotAChain(ValueError):
    pass


class Valuation:
    """Memoised map from configurations to probabilities."""

    def __init__(self, fn: Callable[[Config], Value]):
        self._fn = fn
        self._memo: dict = {}

    def __call__(self, x: Config) -> Value:
        x = frozenset(x)
        try:
            return self._memo[x]
        except KeyError:
            v = self._memo[x] = self._fn(x)
            return v

    @staticmethod
    def constant_one() -> "Valuation":
        return Valuation(lambda x: Fraction(1))


@dataclass(frozen=True, eq=False)
class EventStructure:
    labels: Mapping[EventId, Label]
    below: Mapping[EventId, frozenset]
    conflict: Mapping[EventId, frozenset]
    valuation: Optional[Valuation] = None
    ops: Optional[Mapping[EventId, np.ndarray]] = None

    @property
    def events(self) -> list:
        return sorted(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def kind(self) -> str:
        if self.ops is not None:
            return "quantum"
        if self.valuation is not None:
            return "prob"
        return "plain"

    @cached_property
    def above(self) -> dict:
        up: dict = {e: set() for e in self.labels}
        for e, lows in self.below.items():
            for d in lows:
                up.setdefault(d, set()).add(e)
        return {e: frozenset(s) for e, s in up.items()}

    def le(self, a: EventId, b: EventId) -> bool:
        return a == b or a in self.below[b]

    def in_conflict(self, a: EventId, b: EventId) -> bool:
        return b in self.conflict[a]

    def __repr__(self) -> str:
        return f"EventStructure({len(self)} events, {self.kind})"


def empty(kind: str = "plain", dim: int = 1) -> EventStructure:
    """The bottom structure with the flavor's trivial annotation."""
    return EventStructure(
        {}, {}, {},
        Valuation.constant_one() if kind == "prob" else None,
        {} if kind == "quantum" else None,
    )


def build(
    labels: Mapping[EventId, Label],
    le: Iterable[tuple] = (),
    conflict: Iterable[tuple] = (),
    *,
    close: bool = True,
    valuation: Optional[Valuation] = None,
    ops: Optional[Mapping] = None,
) -> EventStructure:
    """Assemble a structure from generating relations.

    With ``close`` the causal pairs are closed transitively and conflicts
    are made symmetric and hereditary.  Without it the relations are taken
    literally, which is how malformed structures are built for testing.
    """
    labels = {tuple(k): v for k, v in labels.items()}
    below = {e: set() for e in labels}
    for a, b in le:
        if a != b:
            below[tuple(b)].add(tuple(a))
    conf = {e: set() for e in labels}
    for a, b in conflict:
        conf[tuple(a)].add(tuple(b))
        conf[tuple(b)].add(tuple(a))
    if close:
        changed = True
        while changed:
            changed = False
            for e in labels:
                extra = set().union(*(below[d] for d in below[e])) - below[e]
                if extra:
                    below[e] |= extra
                    changed = True
        for e in labels:
            for d in below[e]:
                for c in list(conf[d]):
                    conf[e].add(c)
                    conf[c].add(e)
    return EventStructure(
        labels,
        {e: frozenset(s) for e, s in below.items()},
        {e: frozenset(s) for e, s in conf.items()},
        valuation,
        ops,
    )


# ---------------------------------------------------------------- validity


@dataclass(frozen=True)
class Violation:
    rule: str
    witness: tuple

    def __str__(self) -> str:
        return f"{self.rule}: {', '.join(id_str(w) if isinstance(w, tuple) else str(w) for w in self.witness)}"


def validate(es: EventStructure) -> list[Violation]:
    """Every broken event-structure axiom with a witness; empty when legal."""
    out: list[Violation] = []
    ev = es.labels
    for e in sorted(ev):
        if e in es.below[e]:
            out.append(Violation("reflexive-strict-order", (e,)))
        for d in sorted(es.below[e]):
            if d not in ev:
                out.append(Violation("dangling", (d, e)))
                continue
            if e in es.below[d]:
                out.append(Violation("antisymmetry", (d, e)))
            for c in sorted(es.below[d] - es.below[e]):
                out.append(Violation("transitivity", (c, d, e)))
        if e in es.conflict[e]:
            out.append(Violation("irreflexive-conflict", (e,)))
        for c in sorted(es.conflict[e]):
            if c not in ev:
                out.append(Violation("dangling", (e, c)))
                continue
            if e not in es.conflict[c]:
                out.append(Violation("symmetry", (e, c)))
            for f in sorted(es.above[c]):
                if f not in es.conflict[e]:
                    out.append(Violation("heredity", (e, c, f)))
    return out


# ---------------------------------------------------------------- configurations


def is_configuration(es: EventStructure, x: Iterable) -> bool:
    x = frozenset(x)
    for e in x:
        if e not in es.labels or not es.below[e] <= x or es.conflict[e] & x:
            return False
    return True


def extensions(es: EventStructure, x: Config) -> list:
    """Events that can be added to configuration ``x`` one at a time."""
    return sorted(
        e for e in es.labels if e not in x and es.below[e] <= x and not (es.conflict[e] & x)
    )


def config_key(x: Config) -> tuple:
    return (len(x), sorted(x))


def configurations(es: EventStructure, max_size: Optional[int] = None) -> list:
    """All configurations of at most ``max_size`` events, canonically ordered."""
    found = {frozenset()}
    frontier = [frozenset()]
    while frontier:
        nxt = []
        for x in frontier:
            if max_size is not None and len(x) >= max_size:
                continue
            for e in extensions(es, x):
                y = x | {e}
                if y not in found:
                    found.add(y)
                    nxt.append(y)
        frontier = nxt
    return sorted(found, key=config_key)


def maximal_configs(es: EventStructure, max_size: Optional[int] = None) -> list:
    return [x for x in configurations(es, max_size) if not extensions(es, x)]


def covering_chains(es: EventStructure, x: Iterable) -> list:
    """Event sequences building ``x`` one event at a time, sorted."""
    x = frozenset(x)
    if not is_configuration(es, x):
        raise NotAConfiguration(sorted(x))
    out: list = []

    def go(cur: frozenset, path: tuple) -> None:
        if len(cur) == len(x):
            out.append(path)
            return
        for e in sorted(x - cur):
            if es.below[e] <= cur:
                go(cur | {e}, path + (e,))

    go(frozenset(), ())
    return out if x else []


def chain_word(es: EventStructure, chain: Sequence) -> tuple:
    return tuple(es.labels[e] for e in chain)


def chains_upto(es: EventStructure, depth: int) -> Iterator[tuple]:
    """Every covering chain of length 1..depth of any configuration."""

    def go(cur: frozenset, path: tuple):
        if path:
            yield path
        if len(path) == depth:
            return
        for e in extensions(es, cur):
            yield from go(cur | {e}, path + (e,))

    yield from go(frozenset(), ())


# ---------------------------------------------------------------- derived relations


def init_events(es: EventStructure) -> list:
    return sorted(e for e in es.labels if not es.below[e])


def concurrent(es: EventStructure, a: EventId, b: EventId) -> bool:
    return a != b and not es.le(a, b) and not es.le(b, a) and not es.in_conflict(a, b)


def immediate_causality(es: EventStructure) -> list:
    out = []
    for b in es.labels:
        for a in es.below[b]:
            if not any(a in es.below[m] for m in es.below[b]):
                out.append((a, b))
    return sorted(out)


def minimal_conflict(es: EventStructure) -> list:
    """Symmetric list of conflict pairs not inherited from strictly smaller events."""
    out = []
    for a in es.labels:
        for b in es.conflict[a]:
            if not (es.conflict[b] & es.below[a]) and not (es.conflict[a] & es.below[b]):
                out.append((a, b))
    return sorted(out)


# ---------------------------------------------------------------- derived structures


def restrict(es: EventStructure, keep: Iterable) -> EventStructure:
    """Restriction to a down-closed set of events; annotations are inherited."""
    keep = frozenset(keep)
    return EventStructure(
        {e: es.labels[e] for e in keep},
        {e: es.below[e] & keep for e in keep},
        {e: es.conflict[e] & keep for e in keep},
        es.valuation,
        None if es.ops is None else {e: es.ops[e] for e in keep},
    )


def truncate(es: EventStructure, k: int) -> EventStructure:
    """Drop every event whose down-closure has more than ``k`` events."""
    keep = [e for e in es.labels if len(es.below[e]) < k]
    if len(keep) == len(es.labels):
        return es
    return restrict(es, keep)


def remove_initial(es: EventStructure, a: EventId) -> EventStructure:
    if a not in es.labels or es.below[a]:
        raise NotInitial(id_str(a) if isinstance(a, tuple) else repr(a))
    keep = [e for e in es.labels if e != a and a not in es.conflict[e]]
    out = restrict(es, keep)
    if es.valuation is not None:
        v = es.valuation
        va = v(frozenset([a]))
        if va == 0:
            raise ZeroProbabilityRemoval(id_str(a))
        out = EventStructure(out.labels, out.below, out.conflict, Valuation(lambda x: v(x | {a}) / va), out.ops)
    return out


# ---------------------------------------------------------------- ids


def erase(e: EventId) -> EventId:
    return tuple(t for t in e if not t.startswith(COPY))


def id_str(e: EventId) -> str:
    return ".".join(e)


def fingerprint(x: Iterable) -> str:
    """Short stable hash of a configuration with copy tags stripped."""
    text = "|".join(sorted(id_str(erase(e)) for e in x))
    return hashlib.sha1(text.encode()).hexdigest()[:8]


def _prefix(tag: tuple, m: Mapping) -> dict:
    return {tag + k: v for k, v in m.items()}


def relabel(es: EventStructure, tag: tuple) -> tuple[dict, dict, dict]:
    """Labels, down-sets and conflicts of ``es`` with every id prefixed by ``tag``."""
    labels = _prefix(tag, es.labels)
    below = {tag + e: frozenset(tag + d for d in s) for e, s in es.below.items()}
    conf = {tag + e: frozenset(tag + d for d in s) for e, s in es.conflict.items()}
    return labels, below, conf


# ---------------------------------------------------------------- comparison


def _close(a: Value, b: Value, tol: float) -> bool:
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a == b
    return abs(float(a) - float(b)) <= tol


def _ops_equal(a: np.ndarray, b: np.ndarray, tol: float) -> bool:
    return a.shape == b.shape and bool(np.max(np.abs(a - b), initial=0.0) <= tol)


def _check_kinds(a: EventStructure, b: EventStructure) -> None:
    if a.kind != b.kind and len(a) and len(b):
        raise AnnotationMismatch(f"{a.kind} vs {b.kind}")


class _OpClasses:
    """Groups numerically equal matrices so they can be compared by key."""

    def __init__(self, tol: float):
        self.tol = tol
        self.reps: list = []

    def key(self, m: Optional[np.ndarray]) -> int:
        if m is None:
            return -1
        for i, r in enumerate(self.reps):
            if _ops_equal(r, m, self.tol):
                return i
        self.reps.append(m)
        return len(self.reps) - 1


def _colors(a: EventStructure, b: EventStructure, tol: float, rounds: int = 4) -> tuple[dict, dict]:
    oc = _OpClasses(tol)
    col = {}
    for tag, es in (("a", a), ("b", b)):
        for e, l in es.labels.items():
            col[(tag, e)] = (l, oc.key(None if es.ops is None else es.ops[e]))
    table: dict = {}
    for _ in range(rounds):
        new = {}
        for tag, es in (("a", a), ("b", b)):
            for e in es.labels:
                sig = (
                    col[(tag, e)],
                    tuple(sorted(col[(tag, d)] for d in es.below[e])),
                    tuple(sorted(col[(tag, d)] for d in es.above[e])),
                    tuple(sorted(col[(tag, d)] for d in es.conflict[e])),
                )
                new[(tag, e)] = table.setdefault(sig, len(table))
        col = new
    return ({e: col[("a", e)] for e in a.labels}, {e: col[("b", e)] for e in b.labels})


def embeddings(a: EventStructure, b: EventStructure, bijective: bool, tol: Optional[float] = None) -> Iterator[dict]:
    """Label-preserving injections of ``a`` into ``b`` that preserve and reflect ``<=`` and ``#``.

    Operators, when present, must agree within ``tol``.  With ``bijective``
    the injection must be onto.
    """
    tol = settings.tolerance() if tol is None else tol
    if bijective and len(a) != len(b):
        return
    if bijective:
        ca, cb = _colors(a, b, tol)
    else:
        oc = _OpClasses(tol)
        ca = {e: (l, oc.key(None if a.ops is None else a.ops[e])) for e, l in a.labels.items()}
        cb = {e: (l, oc.key(None if b.ops is None else b.ops[e])) for e, l in b.labels.items()}
    if bijective and sorted(ca.values()) != sorted(cb.values()):
        return
    order = sorted(a.labels, key=lambda e: (len(a.below[e]), sum(1 for f in a.labels if ca[f] == ca[e]), e))
    cands = {e: sorted(f for f in b.labels if cb[f] == ca[e]) for e in a.labels}
    phi: dict = {}
    used: set = set()

    def fits(e, f) -> bool:
        for d, g in phi.items():
            if (d in a.below[e]) != (g in b.below[f]):
                return False
            if (e in a.below[d]) != (f in b.below[g]):
                return False
            if (d in a.conflict[e]) != (g in b.conflict[f]):
                return False
        return True

    def go(i: int):
        if i == len(order):
            yield dict(phi)
            return
        e = order[i]
        for f in cands[e]:
            if f in used or not fits(e, f):
                continue
            phi[e] = f
            used.add(f)
            yield from go(i + 1)
            del phi[e]
            used.discard(f)

    yield from go(0)


def _image(phi: dict, x: Config) -> Config:
    return frozenset(phi[e] for e in x)


def equivalent(a: EventStructure, b: EventStructure, tol: Optional[float] = None) -> bool:
    """Isomorphism up to event naming, respecting labels, relations and annotations."""
    _check_kinds(a, b)
    tol = settings.tolerance() if tol is None else tol
    confs = configurations(a) if a.valuation is not None and b.valuation is not None else None
    for phi in embeddings(a, b, True, tol):
        if confs is None:
            return True
        if all(_close(a.valuation(x), b.valuation(_image(phi, x)), tol) for x in confs):
            return True
    return False


def order_sub(a: EventStructure, b: EventStructure, tol: Optional[float] = None) -> bool:
    """``a`` sits inside ``b`` (up to event naming), with the valuation clause."""
    _check_kinds(a, b)
    tol = settings.tolerance() if tol is None else tol
    prob = a.valuation is not None and b.valuation is not None
    ca = configurations(a) if prob else None
    cb = configurations(b) if prob else None
    for phi in embeddings(a, b, False, tol):
        if not prob:
            return True
        ok = True
        for x in ca:
            img = _image(phi, x)
            vx = a.valuation(x)
            for y in cb:
                if img <= y and not (vx >= b.valuation(y) - (0 if isinstance(vx, Fraction) else tol)):
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return True
    return False


def order_unroll(a: EventStructure, b: EventStructure, tol: Optional[float] = None) -> bool:
    """Literal inclusion of events with equal relations and annotations on ``a``."""
    tol = settings.tolerance() if tol is None else tol
    if not set(a.labels) <= set(b.labels):
        return False
    for e, l in a.labels.items():
        if b.labels[e] != l:
            return False
        if a.below[e] != b.below[e] & set(a.labels):
            return False
        if a.conflict[e] != b.conflict[e] & set(a.labels):
            return False
    if a.ops is not None and b.ops is not None:
        if not all(_ops_equal(a.ops[e], b.ops[e], tol) for e in a.labels):
            return False
    if a.valuation is not None and b.valuation is not None:
        if not all(_close(a.valuation(x), b.valuation(x), tol) for x in configurations(a)):
            return False
    return True


def chain_lub(chain: Sequence[EventStructure]) -> EventStructure:
    if not chain:
        raise NotAChain("empty chain")
    for x, y in zip(chain, chain[1:]):
        if not order_unroll(x, y):
            raise NotAChain("consecutive elements are not ordered")
    labels: dict = {}
    below: dict = {}
    conf: dict = {}
    ops: Optional[dict] = {} if chain[0].ops is not None else None
    for es in chain:
        labels.update(es.labels)
        for e in es.labels:
            below[e] = below.get(e, frozenset()) | es.below[e]
            conf[e] = conf.get(e, frozenset()) | es.conflict[e]
        if ops is not None and es.ops is not None:
            ops.update(es.ops)
    val = None
    if chain[0].valuation is not None:
        parts = list(chain)

        def v(x: Config) -> Value:
            for es in parts:
                if x <= es.labels.keys():
                    return es.valuation(x)
            raise NotAConfiguration(sorted(x))

        val = Valuation(v)
    return EventStructure(labels, below, conf, val, ops)


def same(a: EventStructure, b: EventStructure, tol: Optional[float] = None) -> bool:
    """Literal equality of two structures (ids, relations and annotations)."""
    return order_unroll(a, b, tol) and order_unroll(b, a, tol)


# ---------------------------------------------------------------- export


def _num(v: Value) -> str:
    if isinstance(v, Fraction):
        return str(v)
    return f"{float(v):.12g}"


def _matrix_json(m: np.ndarray) -> list:
    return [[[_clean(z.real), _clean(z.imag)] for z in row] for row in m]


def _clean(f: float) -> float:
    f = float(round(f, 12))
    return 0.0 if f == 0 else f


def to_json(es: EventStructure, max_config_size: Optional[int] = None) -> str:
    ids = sorted(es.labels, key=id_str)
    doc: dict = {
        "events": [{"id": id_str(e), "label": str(es.labels[e])} for e in ids],
        "le": sorted([id_str(a), id_str(b)] for b in ids for a in es.below[b]),
        "conflict": sorted([id_str(a), id_str(b)] for a in ids for b in es.conflict[a] if id_str(a) < id_str(b)),
    }
    if es.valuation is not None:
        doc["valuation"] = [
            [sorted(id_str(e) for e in x), _num(es.valuation(x))]
            for x in configurations(es, max_config_size)
        ]
    if es.ops is not None:
        doc["ops"] = [[id_str(e), _matrix_json(es.ops[e])] for e in ids]
    return json.dumps(doc, sort_keys=True, ensure_ascii=False)


def to_dot(es: EventStructure, name: str = "es") -> str:
    ids = sorted(es.labels, key=id_str)
    node = {e: f"n{i}" for i, e in enumerate(ids)}
    lines = [f"digraph {name} {{", "  node [shape=plaintext];"]
    for e in ids:
        lines.append(f'  {node[e]} [label="{es.labels[e]}", tooltip="{id_str(e)}"];')
    for a, b in sorted(immediate_causality(es), key=lambda p: (id_str(p[0]), id_str(p[1]))):
        lines.append(f"  {node[a]} -> {node[b]};")
    seen = set()
    for a, b in minimal_conflict(es):
        pair = tuple(sorted((id_str(a), id_str(b))))
        if pair in seen:
            continue
        seen.add(pair)
    for sa, sb in sorted(seen):
        a = next(e for e in ids if id_str(e) == sa)
        b = next(e for e in ids if id_str(e) == sb)
        lines.append(f"  {node[a]} -> {node[b]} [dir=none, style=dashed];")
    lines.append("}")
    return "\n".join(lines) + "\n"

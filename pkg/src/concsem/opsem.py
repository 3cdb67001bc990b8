"""Small-step operational semantics and bounded word enumeration."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Optional

import numpy as np

from .lang import (
    DONE,
    SK,
    TAU,
    Act,
    Command,
    Done,
    Flavor,
    Gate,
    Label,
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
    gate,
    proj0,
    proj1,
    substitute,
)
from .quantum import QuantumContext, adjoint


class FlavorMismatch(ValueError):
    pass


def _then(c: Command, rest: Command) -> Command:
    return rest if isinstance(c, Done) else Seq(c, rest)


def _beside(c: Command, other: Command, left: bool) -> Command:
    if isinstance(c, Done):
        return other
    return Par(c, other) if left else Par(other, c)


def _unfold(c: Command, rec: Rec) -> Command:
    return c if isinstance(c, Done) else substitute(c, rec.var, rec)


@lru_cache(maxsize=None)
def _step(c: Command) -> frozenset:
    if isinstance(c, Skip):
        return frozenset({(SK, DONE)})
    if isinstance(c, Act):
        return frozenset({(act(c.name), DONE)})
    if isinstance(c, Gate):
        return frozenset({(gate(c.name, *c.qubits), DONE)})
    if isinstance(c, Seq):
        return frozenset((l, _then(k, c.right)) for l, k in _step(c.left))
    if isinstance(c, NdChoice):
        return _step(c.left) | _step(c.right)
    if isinstance(c, Par):
        return frozenset((l, _beside(k, c.right, True)) for l, k in _step(c.left)) | frozenset(
            (l, _beside(k, c.left, False)) for l, k in _step(c.right)
        )
    if isinstance(c, Meas):
        return frozenset({(proj0(c.qubit), c.left), (proj1(c.qubit), c.right)})
    if isinstance(c, While):
        return frozenset({(proj0(c.qubit), DONE), (proj1(c.qubit), Seq(c.body, c))})
    if isinstance(c, Rec):
        return frozenset((l, _unfold(k, c)) for l, k in _step(c.body))
    if isinstance(c, (Var, Done)):
        return frozenset()
    if isinstance(c, ProbChoice):
        raise FlavorMismatch("probabilistic choice needs step_prob")
    raise TypeError(f"not a command: {c!r}")


def _order(pair) -> tuple:
    return (pair[0], repr(pair[1]))


def step(c: Command) -> list:
    """One-step successors ``(label, residual)``; ``DONE`` marks termination."""
    return sorted(_step(c), key=_order)


# ---------------------------------------------------------------- probabilistic


@dataclass(frozen=True)
class Distribution:
    support: tuple  # ((p, label, target), ...)

    def __post_init__(self) -> None:
        if sum(p for p, _, _ in self.support) != 1:
            raise ValueError("distribution does not sum to 1")

    @property
    def is_point(self) -> bool:
        return len(self.support) == 1

    def map(self, f) -> "Distribution":
        return Distribution(tuple((p, l, f(k)) for p, l, k in self.support))


def _point(l: Label) -> Distribution:
    return Distribution(((Fraction(1), l, DONE),))


@lru_cache(maxsize=None)
def _step_prob(c: Command) -> tuple:
    if isinstance(c, Skip):
        return (_point(SK),)
    if isinstance(c, Act):
        return (_point(act(c.name)),)
    if isinstance(c, ProbChoice):
        return (Distribution(((c.p, TAU, c.left), (1 - c.p, TAU, c.right))),)
    if isinstance(c, Seq):
        return tuple(d.map(lambda k: _then(k, c.right)) for d in _step_prob(c.left))
    if isinstance(c, Par):
        return tuple(d.map(lambda k: _beside(k, c.right, True)) for d in _step_prob(c.left)) + tuple(
            d.map(lambda k: _beside(k, c.left, False)) for d in _step_prob(c.right)
        )
    if isinstance(c, Rec):
        return tuple(d.map(lambda k: _unfold(k, c)) for d in _step_prob(c.body))
    if isinstance(c, (Var, Done)):
        return ()
    raise FlavorMismatch(f"{type(c).__name__} is not a probabilistic command")


def step_prob(c: Command) -> list:
    """Distributions reachable in one step, deduplicated and sorted."""
    return sorted(set(_step_prob(c)), key=lambda d: tuple((l, str(p), repr(k)) for p, l, k in d.support))


# ---------------------------------------------------------------- words


def words(c: Command, depth: int) -> set:
    """``(word, terminal)`` pairs of length 1..depth."""
    out: set = set()
    seen: set = set()

    def go(c: Command, w: tuple) -> None:
        if (c, w) in seen:
            return
        seen.add((c, w))
        for l, k in _step(c):
            w2 = w + (l,)
            out.add((w2, isinstance(k, Done)))
            if not isinstance(k, Done) and len(w2) < depth:
                go(k, w2)

    if depth > 0:
        go(c, ())
    return out


@dataclass(frozen=True, order=True)
class WeightedWord:
    word: tuple
    probability: Fraction
    terminal: bool
    branch: tuple = ()


def prob_words(c: Command, depth: int) -> set:
    """Weighted words of length 1..depth.

    ``branch`` lists the index of the side taken at each probabilistic step,
    in the order the steps happened.  Equal words reached through different
    sides therefore stay apart; fully identical entries collapse, and
    probabilities are never added across schedules.
    """
    out: set = set()
    seen: set = set()

    def go(c: Command, w: tuple, p: Fraction, br: tuple) -> None:
        if (c, w, br) in seen:
            return
        seen.add((c, w, br))
        for d in _step_prob(c):
            for i, (q, l, k) in enumerate(d.support):
                w2, p2 = w + (l,), p * q
                br2 = br if d.is_point else br + (i,)
                done = isinstance(k, Done)
                out.add(WeightedWord(w2, p2, done, br2))
                if not done and len(w2) < depth:
                    go(k, w2, p2, br2)

    if depth > 0:
        go(c, (), Fraction(1), ())
    return out


def apply_word(word, rho: np.ndarray, ctx: QuantumContext) -> np.ndarray:
    """Apply each label's operator in turn (head first) as ``rho -> a rho a^dag``."""
    if rho.shape != (ctx.dim, ctx.dim):
        from .quantum import DimensionMismatch

        raise DimensionMismatch(f"state is {rho.shape}, program needs {ctx.dim}x{ctx.dim}")
    for l in word:
        a = ctx.label_op(l)
        rho = a @ rho @ adjoint(a)
    return rho

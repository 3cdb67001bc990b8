"""Abstract syntax, parser and pretty-printer for the three command languages.

A command is an immutable tree of the node classes below.  The flavor
(nondet, prob or quantum) is not stored on the nodes; it is a parameter of
``parse`` and of every engine that consumes commands.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Union


class Flavor(enum.Enum):
    NONDET = "nondet"
    PROB = "prob"
    QUANTUM = "quantum"


# ---------------------------------------------------------------- labels


@dataclass(frozen=True, order=True)
class Label:
    """Transition / event label.

    ``kind`` is one of ``sk``, ``act``, ``tau``, ``tau0``, ``tau1``, ``gate``.
    Measurement outcomes carry the measured qubit in ``qubits``.
    """

    kind: str
    name: str = ""
    qubits: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.kind == "gate":
            if not self.qubits:
                raise ValueError("gate label needs at least one qubit")
            if len(set(self.qubits)) != len(self.qubits):
                raise ValueError(f"duplicate qubit in {self.qubits}")
        if self.kind in ("tau0", "tau1") and len(self.qubits) != 1:
            raise ValueError("measurement label carries exactly one qubit")

    def __str__(self) -> str:
        if self.kind == "sk":
            return "sk"
        if self.kind == "tau":
            return "tau"
        if self.kind == "act":
            return self.name
        if self.kind == "tau0":
            return f"P0({self.qubits[0]})"
        if self.kind == "tau1":
            return f"P1({self.qubits[0]})"
        return f"{self.name}({','.join(map(str, self.qubits))})"


SK = Label("sk")
TAU = Label("tau")


def act(name: str) -> Label:
    return Label("act", name)


def gate(name: str, *qubits: int) -> Label:
    return Label("gate", name, tuple(qubits))


def proj0(q: int) -> Label:
    return Label("tau0", "", (q,))


def proj1(q: int) -> Label:
    return Label("tau1", "", (q,))


def word_str(word) -> str:
    return " ".join(str(l) for l in word)


# ---------------------------------------------------------------- commands


@dataclass(frozen=True)
class Skip:
    pass


@dataclass(frozen=True)
class Act:
    name: str


@dataclass(frozen=True)
class Gate:
    name: str
    qubits: tuple[int, ...]


@dataclass(frozen=True)
class Seq:
    left: "Command"
    right: "Command"


@dataclass(frozen=True)
class NdChoice:
    left: "Command"
    right: "Command"


@dataclass(frozen=True)
class ProbChoice:
    p: Fraction
    left: "Command"
    right: "Command"


@dataclass(frozen=True)
class Par:
    left: "Command"
    right: "Command"


@dataclass(frozen=True)
class Meas:
    qubit: int
    left: "Command"
    right: "Command"


@dataclass(frozen=True)
class While:
    qubit: int
    body: "Command"


@dataclass(frozen=True)
class Rec:
    var: str
    body: "Command"


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Done:
    """The terminated command; only produced by the operational engines."""


Command = Union[Skip, Act, Gate, Seq, NdChoice, ProbChoice, Par, Meas, While, Rec, Var, Done]

DONE = Done()
_BINARY = (Seq, NdChoice, ProbChoice, Par)


# ---------------------------------------------------------------- variables


def fvar(c: Command) -> frozenset[str]:
    if isinstance(c, Var):
        return frozenset([c.name])
    if isinstance(c, Rec):
        return fvar(c.body) - {c.var}
    return frozenset().union(*(fvar(k) for k in children(c)))


def bvar(c: Command) -> frozenset[str]:
    if isinstance(c, Rec):
        return bvar(c.body) | {c.var}
    return frozenset().union(*(bvar(k) for k in children(c)))


def qvar(c: Command) -> frozenset[int]:
    if isinstance(c, Gate):
        return frozenset(c.qubits)
    if isinstance(c, (Meas, While)):
        return frozenset([c.qubit]).union(*(qvar(k) for k in children(c)))
    return frozenset().union(*(qvar(k) for k in children(c)))


def children(c: Command) -> tuple:
    if isinstance(c, (Seq, NdChoice, ProbChoice, Par, Meas)):
        return (c.left, c.right)
    if isinstance(c, (While, Rec)):
        return (c.body,)
    return ()


def size(c: Command) -> int:
    """Number of operator nodes (everything except leaves)."""
    kids = children(c)
    return (1 if kids else 0) + sum(size(k) for k in kids)


def _fresh(base: str, avoid: frozenset[str]) -> str:
    i = 1
    while f"{base}_{i}" in avoid:
        i += 1
    return f"{base}_{i}"


def substitute(c: Command, x: str, r: Command) -> Command:
    """Capture-avoiding ``c[x <- r]``.  Only the right operand of ``;`` is visited."""
    if isinstance(c, Var):
        return r if c.name == x else c
    if isinstance(c, (Skip, Act, Gate, Done)):
        return c
    if isinstance(c, Seq):
        return Seq(c.left, substitute(c.right, x, r))
    if isinstance(c, NdChoice):
        return NdChoice(substitute(c.left, x, r), substitute(c.right, x, r))
    if isinstance(c, ProbChoice):
        return ProbChoice(c.p, substitute(c.left, x, r), substitute(c.right, x, r))
    if isinstance(c, Par):
        return Par(substitute(c.left, x, r), substitute(c.right, x, r))
    if isinstance(c, Meas):
        return Meas(c.qubit, substitute(c.left, x, r), substitute(c.right, x, r))
    if isinstance(c, While):
        return While(c.qubit, substitute(c.body, x, r))
    if isinstance(c, Rec):
        if c.var == x or x not in fvar(c.body):
            return c
        var, body = c.var, c.body
        fr = fvar(r)
        if var in fr:
            new = _fresh(var, fr | fvar(body) | bvar(body) | {x})
            body = substitute(body, var, Var(new))
            var = new
        return Rec(var, substitute(body, x, r))
    raise TypeError(f"not a command: {c!r}")


# ---------------------------------------------------------------- errors


class ParseError(ValueError):
    def __init__(self, message: str, pos: int = -1):
        super().__init__(message if pos < 0 else f"{message} at offset {pos}")
        self.pos = pos


class CommandSyntaxError(ParseError):
    pass


class FlavorViolation(ParseError):
    pass


class UnboundVariable(ParseError):
    pass


class SeqLeftRecursion(ParseError):
    pass


class SharedQubitInPar(ParseError):
    pass


class UnknownGate(ParseError):
    pass


# ---------------------------------------------------------------- parser

_TOKEN = re.compile(
    r"\s*(?:(?P<probop>\+\[\s*(?P<rat>[0-9]+(?:/[0-9]+|\.[0-9]+)?)\s*\])"
    r"|(?P<sym>\|\||[();+{}.,])"
    r"|(?P<nat>[0-9]+)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*))"
)
_KEYWORDS = {"skip", "meas", "else", "while", "mu"}


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int
    value: object = None


def _tokenize(src: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i = 0
    while True:
        while i < len(src) and src[i].isspace():
            i += 1
        if i >= len(src):
            break
        m = _TOKEN.match(src, i)
        if not m or m.end() == i:
            raise CommandSyntaxError(f"unexpected character {src[i]!r}", i)
        start = i
        if m.group("probop") is not None:
            try:
                p = Fraction(m.group("rat"))
            except ZeroDivisionError:
                raise CommandSyntaxError("zero denominator", start) from None
            toks.append(_Tok("probop", m.group("probop"), start, p))
        elif m.group("sym") is not None:
            toks.append(_Tok(m.group("sym"), m.group("sym"), start))
        elif m.group("nat") is not None:
            toks.append(_Tok("nat", m.group("nat"), start, int(m.group("nat"))))
        else:
            text = m.group("ident")
            toks.append(_Tok(text if text in _KEYWORDS else "ident", text, start))
        i = m.end()
    toks.append(_Tok("eof", "", len(src)))
    return toks


class _Parser:
    def __init__(self, src: str, flavor: Flavor, gates: Mapping[str, int]):
        self.toks = _tokenize(src)
        self.i = 0
        self.flavor = flavor
        self.gates = gates
        self.bound: list[str] = []

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def take(self, kind: str) -> _Tok:
        t = self.tok
        if t.kind != kind:
            shown = t.text or "end of input"
            raise CommandSyntaxError(f"expected {kind!r}, found {shown!r}", t.pos)
        self.i += 1
        return t

    def need(self, allowed: set, what: str, pos: int) -> None:
        if self.flavor not in allowed:
            raise FlavorViolation(f"{what} is not part of the {self.flavor.value} language", pos)

    def cmd(self) -> Command:
        left = self.unit()
        op = self.tok
        if op.kind not in (";", "+", "||", "probop"):
            return left
        self.i += 1
        right = self.unit()
        if self.tok.kind in (";", "+", "||", "probop"):
            raise CommandSyntaxError("binary operators do not associate; add parentheses", self.tok.pos)
        if op.kind == ";":
            if fvar(left) or bvar(left):
                raise SeqLeftRecursion("left operand of ';' may not mention recursion", op.pos)
            return Seq(left, right)
        if op.kind == "+":
            self.need({Flavor.NONDET}, "'+'", op.pos)
            return NdChoice(left, right)
        if op.kind == "||":
            if self.flavor is Flavor.QUANTUM and qvar(left) & qvar(right):
                raise SharedQubitInPar(f"qubits {sorted(qvar(left) & qvar(right))} used on both sides of '||'", op.pos)
            return Par(left, right)
        self.need({Flavor.PROB}, "'+[p]'", op.pos)
        p = op.value
        if not 0 < p < 1:
            raise CommandSyntaxError(f"probability {p} not strictly between 0 and 1", op.pos)
        return ProbChoice(p, left, right)

    def unit(self) -> Command:
        t = self.tok
        if t.kind == "skip":
            self.i += 1
            return Skip()
        if t.kind == "(":
            self.i += 1
            c = self.cmd()
            self.take(")")
            return c
        if t.kind == "mu":
            self.need({Flavor.NONDET, Flavor.PROB}, "'mu'", t.pos)
            self.i += 1
            name = self.take("ident")
            if not name.text[0].isupper():
                raise CommandSyntaxError("recursion variables start with an upper-case letter", name.pos)
            self.take(".")
            self.bound.append(name.text)
            body = self.cmd()
            self.bound.pop()
            return Rec(name.text, body)
        if t.kind == "meas":
            self.need({Flavor.QUANTUM}, "'meas'", t.pos)
            self.i += 1
            q = self.take("nat").value
            self.take("{")
            c1 = self.cmd()
            self.take("}")
            self.take("else")
            self.take("{")
            c2 = self.cmd()
            self.take("}")
            return Meas(q, c1, c2)
        if t.kind == "while":
            self.need({Flavor.QUANTUM}, "'while'", t.pos)
            self.i += 1
            q = self.take("nat").value
            self.take("{")
            body = self.cmd()
            self.take("}")
            return While(q, body)
        if t.kind == "ident":
            self.i += 1
            if self.tok.kind == "(":
                return self.gate_call(t)
            if t.text[0].isupper():
                if t.text not in self.bound:
                    raise UnboundVariable(f"variable {t.text} is not bound by an enclosing 'mu'", t.pos)
                return Var(t.text)
            self.need({Flavor.NONDET, Flavor.PROB}, f"action {t.text!r}", t.pos)
            return Act(t.text)
        shown = t.text or "end of input"
        raise CommandSyntaxError(f"unexpected {shown!r}", t.pos)

    def gate_call(self, name: _Tok) -> Command:
        self.need({Flavor.QUANTUM}, f"gate {name.text!r}", name.pos)
        if name.text not in self.gates:
            raise UnknownGate(f"unknown gate {name.text!r}", name.pos)
        self.take("(")
        qs = [self.take("nat").value]
        while self.tok.kind == ",":
            self.i += 1
            qs.append(self.take("nat").value)
        self.take(")")
        if len(set(qs)) != len(qs):
            raise CommandSyntaxError(f"repeated qubit in {name.text}{tuple(qs)}", name.pos)
        if len(qs) != self.gates[name.text]:
            raise CommandSyntaxError(
                f"gate {name.text} takes {self.gates[name.text]} qubit(s), got {len(qs)}", name.pos
            )
        return Gate(name.text, tuple(qs))


def parse(source: str, flavor: Flavor | str, gates: Optional[Mapping[str, int]] = None) -> Command:
    """Parse ``source`` as a closed command of the given flavor.

    ``gates`` maps gate names to arities; the built-in table is used when omitted.
    """
    flavor = Flavor(flavor)
    if gates is None:
        from .quantum import BUILTIN_GATES

        gates = {k: g.arity for k, g in BUILTIN_GATES.items()}
    p = _Parser(source, flavor, gates)
    c = p.cmd()
    if p.tok.kind != "eof":
        raise CommandSyntaxError(f"trailing input {p.tok.text!r}", p.tok.pos)
    return c


# ---------------------------------------------------------------- printer


def pretty(c: Command) -> str:
    """Concrete syntax that ``parse`` maps back to ``c``."""
    return _pp(c, top=True)


def _pp(c: Command, top: bool = False) -> str:
    if isinstance(c, Skip):
        return "skip"
    if isinstance(c, Done):
        return "done"
    if isinstance(c, Act):
        return c.name
    if isinstance(c, Var):
        return c.name
    if isinstance(c, Gate):
        return f"{c.name}({','.join(map(str, c.qubits))})"
    if isinstance(c, Meas):
        return f"meas {c.qubit} {{ {_pp(c.left, True)} }} else {{ {_pp(c.right, True)} }}"
    if isinstance(c, While):
        return f"while {c.qubit} {{ {_pp(c.body, True)} }}"
    if isinstance(c, Rec):
        s = f"mu {c.var} . {_pp(c.body, True)}"
        return s if top else f"({s})"
    op = {Seq: ";", NdChoice: "+", Par: "||"}.get(type(c))
    if op is None:
        op = f"+[{c.p}]"
    s = f"{_pp(c.left)} {op} {_pp(c.right)}"
    return s if top else f"({s})"

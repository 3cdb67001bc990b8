"""Dense linear algebra for the quantum flavor and unitary event structures."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import escore, settings
from .escore import EventStructure, Valuation, Violation

SQ2 = 1 / np.sqrt(2)


class DimensionMismatch(ValueError):
    pass


class ChainDisagreement(ValueError):
    pass


class InvalidState(ValueError):
    pass


class DropConditionViolation(ValueError):
    pass


class PreconditionNotProjective(ValueError):
    pass


class UnknownGate(KeyError):
    pass


@dataclass(frozen=True)
class GateDef:
    arity: int
    matrix: np.ndarray = field(compare=False)


def _g(rows) -> np.ndarray:
    m = np.array(rows, dtype=complex)
    m.setflags(write=False)
    return m


BUILTIN_GATES: dict[str, GateDef] = {
    "I": GateDef(1, _g([[1, 0], [0, 1]])),
    "X": GateDef(1, _g([[0, 1], [1, 0]])),
    "Y": GateDef(1, _g([[0, -1j], [1j, 0]])),
    "Z": GateDef(1, _g([[1, 0], [0, -1]])),
    "H": GateDef(1, _g([[SQ2, SQ2], [SQ2, -SQ2]])),
    "S": GateDef(1, _g([[1, 0], [0, 1j]])),
    "T": GateDef(1, _g([[1, 0], [0, np.exp(1j * np.pi / 4)]])),
    "CNOT": GateDef(2, _g([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])),
    "CZ": GateDef(2, _g(np.diag([1, 1, 1, -1]))),
    "SWAP": GateDef(2, _g([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]])),
}

P0 = _g([[1, 0], [0, 0]])
P1 = _g([[0, 0], [0, 1]])


# ---------------------------------------------------------------- kernel


def multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] != b.shape[0]:
        raise DimensionMismatch(f"{a.shape} x {b.shape}")
    return a @ b


def adjoint(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def trace(a: np.ndarray) -> complex:
    return complex(np.trace(a))


def _max_abs(a: np.ndarray) -> float:
    return float(np.max(np.abs(a), initial=0.0))


def is_unitary(a: np.ndarray, tol: Optional[float] = None) -> bool:
    tol = settings.tolerance() if tol is None else tol
    return _max_abs(adjoint(a) @ a - np.eye(a.shape[0])) <= tol


def is_projection(a: np.ndarray, tol: Optional[float] = None) -> bool:
    tol = settings.tolerance() if tol is None else tol
    return _max_abs(a @ a - a) <= tol and _max_abs(a - adjoint(a)) <= tol


def commutes(a: np.ndarray, b: np.ndarray, tol: Optional[float] = None) -> bool:
    tol = settings.tolerance() if tol is None else tol
    return _max_abs(a @ b - b @ a) <= tol


def embed(g: np.ndarray, positions: Sequence[int], n: int) -> np.ndarray:
    """Lift a gate acting on ``positions`` (wire 0 most significant) to ``n`` wires."""
    k = len(positions)
    if g.shape != (2**k, 2**k):
        raise DimensionMismatch(f"{k}-wire gate given a {g.shape} matrix")
    if len(set(positions)) != k or any(not 0 <= p < n for p in positions):
        raise DimensionMismatch(f"bad wire positions {positions} for {n} wires")
    return _embed(g.tobytes(), g.shape[0], tuple(positions), n).copy()


@lru_cache(maxsize=4096)
def _embed(raw: bytes, gd: int, positions: tuple, n: int) -> np.ndarray:
    g = np.frombuffer(raw, dtype=complex).reshape(gd, gd)
    k = len(positions)
    d = 2**n
    out = np.zeros((d, d), dtype=complex)
    for col in range(d):
        bits = [(col >> (n - 1 - w)) & 1 for w in range(n)]
        sub_in = sum(bits[p] << (k - 1 - j) for j, p in enumerate(positions))
        for sub_out in range(gd):
            amp = g[sub_out, sub_in]
            if amp == 0:
                continue
            nb = list(bits)
            for j, p in enumerate(positions):
                nb[p] = (sub_out >> (k - 1 - j)) & 1
            row = sum(b << (n - 1 - w) for w, b in enumerate(nb))
            out[row, col] += amp
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------- context


@dataclass
class QuantumContext:
    """Wire layout, gate table and measurement operators for one program."""

    wires: tuple[int, ...]
    gates: Mapping[str, GateDef] = field(default_factory=lambda: dict(BUILTIN_GATES))
    measurements: Mapping[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.wires)

    @property
    def dim(self) -> int:
        return 2 ** len(self.wires)

    def identity(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex)

    def _pos(self, qubits: Iterable[int]) -> list[int]:
        try:
            return [self.wires.index(q) for q in qubits]
        except ValueError:
            raise DimensionMismatch(f"qubits {list(qubits)} not among wires {list(self.wires)}") from None

    def gate_op(self, name: str, qubits: Sequence[int]) -> np.ndarray:
        if name not in self.gates:
            raise UnknownGate(name)
        gd = self.gates[name]
        if len(qubits) != gd.arity:
            raise DimensionMismatch(f"{name} takes {gd.arity} qubit(s)")
        return embed(gd.matrix, self._pos(qubits), self.n)

    def measure_op(self, qubit: int, outcome: int) -> np.ndarray:
        pair = self.measurements.get(qubit, (P0, P1))
        return embed(pair[outcome], self._pos([qubit]), self.n)

    def label_op(self, label) -> np.ndarray:
        if label.kind == "sk":
            return self.identity()
        if label.kind == "gate":
            return self.gate_op(label.name, label.qubits)
        if label.kind in ("tau0", "tau1"):
            return self.measure_op(label.qubits[0], 0 if label.kind == "tau0" else 1)
        raise UnknownGate(str(label))


def context_for(qubits: Iterable[int], gates: Optional[Mapping[str, GateDef]] = None,
                measurements: Optional[Mapping] = None) -> QuantumContext:
    wires = tuple(sorted(set(qubits)))
    if len(wires) > settings.QUBIT_CAP:
        raise DimensionMismatch(f"{len(wires)} qubits exceed the cap of {settings.QUBIT_CAP}")
    return QuantumContext(wires, dict(gates or BUILTIN_GATES), dict(measurements or {}))


def _parse_matrix(rows) -> np.ndarray:
    m = np.array([[complex(re, im) for re, im in row] for row in rows], dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch("matrix must be square")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def load_gate_table(text: str, tol: Optional[float] = None) -> tuple[dict, dict]:
    """Read a gate-table JSON document.

    Returns the merged gate table (built-ins plus file entries) and the
    measurement overrides found under the optional ``measurements`` key.
    """
    doc = json.loads(text)
    gates = dict(BUILTIN_GATES)
    meas: dict = {}
    for name, spec in doc.items():
        if name == "measurements":
            for q, pair in spec.items():
                m0, m1 = _parse_matrix(pair["m0"]), _parse_matrix(pair["m1"])
                if m0.shape != (2, 2) or m1.shape != (2, 2):
                    raise DimensionMismatch("measurement operators are single-qubit")
                if not is_unitary(m0 + m1, tol):
                    raise ValueError(f"measurement pair for qubit {q} does not sum to a unitary")
                meas[int(q)] = (m0, m1)
            continue
        m = _parse_matrix(spec["matrix"])
        arity = int(spec["arity"])
        if m.shape != (2**arity, 2**arity):
            raise DimensionMismatch(f"gate {name}: arity {arity} needs a {2**arity}x{2**arity} matrix")
        if not (is_unitary(m, tol) or is_projection(m, tol)):
            raise ValueError(f"gate {name} is neither unitary nor a projection")
        gates[name] = GateDef(arity, m)
    return gates, meas


def parse_state(spec: str, ctx: QuantumContext, tol: Optional[float] = None) -> np.ndarray:
    """``ket:0101`` (one bit per wire, sorted qubit order) or a matrix JSON document."""
    if spec.startswith("ket:"):
        bits = spec[4:]
        if len(bits) != ctx.n or set(bits) - {"0", "1"}:
            raise InvalidState(f"ket needs {ctx.n} bits for wires {list(ctx.wires)}")
        v = np.zeros(ctx.dim, dtype=complex)
        v[int(bits, 2) if bits else 0] = 1
        rho = np.outer(v, v.conj())
    else:
        rho = _parse_matrix(json.loads(spec))
    check_density(rho, ctx.dim, tol)
    return rho


def check_density(rho: np.ndarray, dim: Optional[int] = None, tol: Optional[float] = None) -> None:
    tol = settings.tolerance() if tol is None else tol
    if dim is not None and rho.shape != (dim, dim):
        raise DimensionMismatch(f"state is {rho.shape}, expected {dim}x{dim}")
    if _max_abs(rho - adjoint(rho)) > tol:
        raise InvalidState("state is not Hermitian")
    if np.linalg.eigvalsh((rho + adjoint(rho)) / 2).min() < -tol:
        raise InvalidState("state is not positive semidefinite")
    t = trace(rho).real
    if not -tol <= t <= 1 + tol:
        raise InvalidState(f"trace {t} outside [0, 1]")


def random_density(dim: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ adjoint(a)
    return rho / trace(rho).real


# ---------------------------------------------------------------- unitary event structures


def _classes(es: EventStructure) -> dict:
    mc: dict = {e: {e} for e in es.labels}
    for a, b in escore.minimal_conflict(es):
        mc[a].add(b)
    return {e: frozenset(s) for e, s in mc.items()}


def validate_ues(es: EventStructure, tol: Optional[float] = None) -> list[Violation]:
    tol = settings.tolerance() if tol is None else tol
    out = escore.validate(es)
    if es.ops is None:
        return out + [Violation("no-operator-map", ())]
    ev = sorted(es.labels)
    for e in ev:
        q = es.ops[e]
        if not np.all(np.isfinite(q)):
            out.append(Violation("non-finite-operator", (e,)))
        elif not (is_unitary(q, tol) or is_projection(q, tol)):
            out.append(Violation("neither-unitary-nor-projection", (e,)))
    for a, b in combinations(ev, 2):
        if escore.concurrent(es, a, b) and not commutes(es.ops[a], es.ops[b], tol):
            out.append(Violation("concurrent-noncommuting", (a, b)))
    classes = _classes(es)
    for a in ev:
        for b in sorted(classes[a] - {a}):
            for c in sorted(classes[b] - {a, b}):
                if c not in classes[a]:
                    out.append(Violation("minimal-conflict-not-transitive", (a, b, c)))
    seen = set()
    for e in ev:
        cl = classes[e]
        if len(cl) > 1 and cl not in seen:
            seen.add(cl)
            total = sum(es.ops[f] for f in cl)
            if not is_unitary(total, tol):
                out.append(Violation("class-sum-not-unitary", tuple(sorted(cl))))
    return out


def config_operator(es: EventStructure, x: Iterable, tol: Optional[float] = None, check: bool = True) -> np.ndarray:
    """Product of the event operators along a covering chain of ``x`` (first event rightmost)."""
    tol = settings.tolerance() if tol is None else tol
    x = frozenset(x)
    dim = next(iter(es.ops.values())).shape[0] if es.ops else 1
    if not x:
        if not escore.is_configuration(es, x):
            raise escore.NotAConfiguration([])
        return np.eye(dim, dtype=complex)
    chains = escore.covering_chains(es, x)
    mats = []
    for ch in chains if check else chains[:1]:
        a = np.eye(dim, dtype=complex)
        for e in ch:
            a = es.ops[e] @ a
        mats.append(a)
    for m in mats[1:]:
        if _max_abs(m - mats[0]) > tol:
            raise ChainDisagreement(f"covering chains of {sorted(map(escore.id_str, x))} disagree")
    return mats[0]


def chain_disagreement(es: EventStructure, x: Iterable) -> float:
    """Largest entrywise distance between operators of different covering chains of ``x``."""
    chains = escore.covering_chains(es, frozenset(x))
    dim = next(iter(es.ops.values())).shape[0] if es.ops else 1
    mats = []
    for ch in chains:
        a = np.eye(dim, dtype=complex)
        for e in ch:
            a = es.ops[e] @ a
        mats.append(a)
    return max((_max_abs(m - mats[0]) for m in mats[1:]), default=0.0)


def operator_cache(es: EventStructure):
    """Memoised ``x -> A_x`` built by peeling off a maximal event."""
    dim = next(iter(es.ops.values())).shape[0] if es.ops else 1
    memo: dict = {frozenset(): np.eye(dim, dtype=complex)}

    def a_of(x: frozenset) -> np.ndarray:
        if x in memo:
            return memo[x]
        top = max(e for e in x if not (es.above[e] & x))
        m = memo[x] = es.ops[top] @ a_of(x - {top})
        return m

    return a_of


def valuation_from_state(es: EventStructure, rho: np.ndarray, tol: Optional[float] = None,
                         check: bool = True, max_config_size: Optional[int] = None) -> EventStructure:
    """Attach ``v(x) = Tr(A_x^dag A_x rho)``; with ``check`` the drop condition is verified."""
    tol = settings.tolerance() if tol is None else tol
    if es.ops is None:
        raise ValueError("structure has no operator map")
    if es.ops:
        dim = next(iter(es.ops.values())).shape[0]
        if rho.shape != (dim, dim):
            raise DimensionMismatch(f"state is {rho.shape}, operators are {dim}x{dim}")
    if abs(trace(rho) - 1) > tol:
        raise InvalidState(f"state trace {trace(rho).real} is not 1")
    a_of = operator_cache(es)

    def v(x: frozenset) -> float:
        a = a_of(x)
        return float(trace(adjoint(a) @ a @ rho).real)

    pes = EventStructure(es.labels, es.below, es.conflict, Valuation(v), None)
    if check:
        res = drop_check(pes, max_config_size, tol)
        if not res.ok:
            raise DropConditionViolation(str(res.violations[0]))
    return pes


# ---------------------------------------------------------------- drop condition


@dataclass(frozen=True)
class DropViolation:
    base: frozenset
    covers: tuple
    value: object

    def __str__(self) -> str:
        return f"drop value {self.value} at {sorted(map(escore.id_str, self.base))}"


@dataclass
class DropResult:
    ok: bool
    violations: list
    minimum: object
    checked: int

    def __bool__(self) -> bool:
        return self.ok


def drop_value(es: EventStructure, y: frozenset, valuation=None):
    """``v(y)`` minus the inclusion-exclusion sum over all one-event covers of ``y``."""
    v = valuation or es.valuation
    covers = [y | {e} for e in escore.extensions(es, y)]
    total = v(y)
    for k in range(1, len(covers) + 1):
        for sub in combinations(covers, k):
            u = frozenset().union(*sub)
            if escore.is_configuration(es, u):
                total -= (-1) ** (k + 1) * v(u)
    return total, tuple(covers)


def drop_check(pes: EventStructure, max_config_size: Optional[int] = None, tol: Optional[float] = None) -> DropResult:
    tol = settings.tolerance() if tol is None else tol
    if pes.valuation is None:
        raise ValueError("structure has no valuation")
    bad = []
    lowest = None
    confs = escore.configurations(pes, max_config_size)
    for y in confs:
        d, covers = drop_value(pes, y)
        if lowest is None or d < lowest:
            lowest = d
        exact = not isinstance(d, float)
        if (d < 0) if exact else (d < -tol):
            bad.append(DropViolation(y, covers, d))
    return DropResult(not bad, bad, lowest, len(confs))


# ---------------------------------------------------------------- merge oracle


@dataclass
class MergeReport:
    sizes_preserved: bool
    sum_error: float
    drop_tilde: float
    drop_hat: float
    ok: bool
    classes: list


def merge_oracle(es: EventStructure, y: Iterable, rho: np.ndarray, tol: Optional[float] = None) -> MergeReport:
    """Compare the cover structure above ``y`` with its class-merged quotient."""
    tol = settings.tolerance() if tol is None else tol
    y = frozenset(y)
    if not escore.is_configuration(es, y):
        raise escore.NotAConfiguration(sorted(y))
    cover = escore.extensions(es, y)
    for e in cover:
        if not is_projection(es.ops[e], tol):
            raise PreconditionNotProjective(escore.id_str(e))
    a_of = operator_cache(es)
    ay = a_of(y)
    vy = float(trace(adjoint(ay) @ ay @ rho).real)
    if vy <= tol:
        raise InvalidState("configuration has probability zero")
    rho_y = ay @ rho @ adjoint(ay) / vy

    # covers with trivial causality and inherited conflict
    tilde = escore.build({e: es.labels[e] for e in cover},
                         conflict=[(a, b) for a in cover for b in cover if es.in_conflict(a, b)],
                         close=False, ops={e: es.ops[e] for e in cover})
    classes = _classes(tilde)
    blocks = sorted({classes[e] for e in cover}, key=lambda s: sorted(s))
    proj = {e: i for i, cl in enumerate(blocks) for e in cl}
    hat_ops = {(str(i),): sum(es.ops[e] for e in cl) for i, cl in enumerate(blocks)}
    hat_conf = [((str(i),), (str(j),)) for i in range(len(blocks)) for j in range(len(blocks))
                if i != j and any(tilde.in_conflict(a, b) for a in blocks[i] for b in blocks[j])]
    hat = escore.build({(str(i),): es.labels[min(cl)] for i, cl in enumerate(blocks)},
                       conflict=hat_conf, close=False, ops=hat_ops)

    def v_tilde(x: frozenset) -> float:
        a = a_of(y | x)
        return float(trace(adjoint(a) @ a @ rho).real) / vy

    hat_a = operator_cache(hat)

    def v_hat(x: frozenset) -> float:
        a = hat_a(x)
        return float(trace(adjoint(a) @ a @ rho_y).real)

    sizes_ok = True
    sums: dict = {}
    for xt in escore.configurations(tilde):
        xh = frozenset((str(proj[e]),) for e in xt)
        if len(xh) != len(xt):
            sizes_ok = False
        sums[xh] = sums.get(xh, 0.0) + v_tilde(xt)
    err = 0.0
    for xh in escore.configurations(hat):
        err = max(err, abs(v_hat(xh) - sums.get(xh, 0.0)))
    d_tilde, _ = drop_value(tilde, frozenset(), Valuation(v_tilde))
    d_hat, _ = drop_value(hat, frozenset(), Valuation(v_hat))
    ok = sizes_ok and err <= tol and abs(d_tilde - d_hat) <= tol
    return MergeReport(sizes_ok, err, d_tilde, d_hat, ok, blocks)

"""Dataflow graphs: representation, text format, validation, cost and a reference interpreter."""
from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

__all__ = [
    "OpKind", "OPS", "PSEUDO_OPS", "COMPARE_OPS", "UNSUPPORTED_COST", "Node", "Dfg",
    "DfgError", "DfgSyntaxError", "EvaluationError", "DivisionByZero", "ShiftOutOfRange",
    "UnboundInput", "make_opset", "parse_dfg", "serialize_dfg", "validate", "unsupported_nodes",
    "cost", "interpret", "topo_order", "DfgBuilder", "split_carried", "join_carried",
    "structural_key", "wrap32",
]

UNSUPPORTED_COST = 10**6


@dataclass(frozen=True)
class OpKind:
    symbol: str
    arity: int
    cls: str  # integer | float | memory | control


def _kinds(*specs: tuple[str, int, str]) -> dict[str, OpKind]:
    return {s: OpKind(s, a, c) for s, a, c in specs}


OPS: dict[str, OpKind] = _kinds(
    ("add", 2, "integer"), ("sub", 2, "integer"), ("mul", 2, "integer"), ("div", 2, "integer"),
    ("shl", 2, "integer"), ("shr", 2, "integer"), ("and", 2, "integer"), ("or", 2, "integer"),
    ("xor", 2, "integer"), ("not", 1, "integer"), ("neg", 1, "integer"),
    ("eq", 2, "integer"), ("ne", 2, "integer"), ("lt", 2, "integer"), ("gt", 2, "integer"),
    ("le", 2, "integer"), ("ge", 2, "integer"),
    ("select", 3, "control"),
    ("load", 1, "memory"), ("store", 2, "memory"),
    ("const", 0, "integer"), ("input", 0, "control"),
    ("fadd", 2, "float"), ("fsub", 2, "float"), ("fmul", 2, "float"), ("fdiv", 2, "float"),
    ("fneg", 1, "float"), ("fconst", 0, "float"),
    ("isc_mul", 2, "integer"),
)

# never placed on a PE and never counted by the cost function
PSEUDO_OPS = frozenset({"input", "const", "fconst"})
COMPARE_OPS = frozenset({"eq", "ne", "lt", "gt", "le", "ge"})
OP_ALIASES = {"cmp": COMPARE_OPS}


def make_opset(names: Iterable[str]) -> frozenset[str]:
    """Build an operation set, expanding the ``cmp`` alias and rejecting unknown names."""
    out: set[str] = set()
    for name in names:
        name = name.strip()
        if not name:
            continue
        if name in OP_ALIASES:
            out |= OP_ALIASES[name]
        elif name in OPS:
            out.add(name)
        else:
            raise ValueError(f"unknown operation {name!r}")
    return frozenset(out)


class DfgError(ValueError):
    pass


class DfgSyntaxError(DfgError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class EvaluationError(ArithmeticError):
    pass


class DivisionByZero(EvaluationError):
    pass


class ShiftOutOfRange(EvaluationError):
    pass


class UnboundInput(EvaluationError, KeyError):
    pass


@dataclass(frozen=True)
class Node:
    id: str
    op: str
    operands: tuple[str, ...] = ()
    literal: int | float | str | None = None  # const value, fconst value, or input name

    @property
    def kind(self) -> OpKind:
        return OPS[self.op]


@dataclass(frozen=True)
class Dfg:
    nodes: tuple[Node, ...]
    outputs: tuple[str, ...]
    distances: Mapping[tuple[str, str], int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        object.__setattr__(self, "distances", dict(self.distances))
        object.__setattr__(self, "_index", {n.id: n for n in self.nodes})

    def __hash__(self):
        return hash((self.nodes, self.outputs, tuple(sorted(self.distances.items()))))

    def node(self, nid: str) -> Node:
        return self._index[nid]  # type: ignore[attr-defined]

    def __contains__(self, nid: object) -> bool:
        return nid in self._index  # type: ignore[attr-defined]

    def __len__(self) -> int:
        return len(self.nodes)

    def distance(self, src: str, dst: str) -> int:
        return self.distances.get((src, dst), 0)

    @property
    def op_nodes(self) -> list[Node]:
        return [n for n in self.nodes if n.op not in PSEUDO_OPS]

    def inputs(self) -> list[str]:
        return [n.literal for n in self.nodes if n.op == "input"]  # type: ignore[misc]

    def users(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            for o in dict.fromkeys(n.operands):
                if o in out:
                    out[o].append(n.id)
        return out

    def __str__(self) -> str:
        return serialize_dfg(self)


# ---------------------------------------------------------------------------
# text format

def _parse_int(tok: str) -> int:
    return int(tok, 0)


def parse_dfg(text: str) -> Dfg:
    nodes: list[Node] = []
    seen: dict[str, int] = {}
    outputs: list[str] = []
    dists: dict[tuple[str, str], int] = {}
    dist_lines: dict[tuple[str, str], int] = {}
    refs: list[tuple[int, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        head = toks[0]
        if head == "out":
            if len(toks) != 2:
                raise DfgSyntaxError(lineno, "expected 'out <id>'")
            outputs.append(toks[1])
            refs.append((lineno, toks[1]))
            continue
        if head == "dist":
            if len(toks) != 4:
                raise DfgSyntaxError(lineno, "expected 'dist <from> <to> <k>'")
            try:
                k = int(toks[3])
            except ValueError:
                raise DfgSyntaxError(lineno, f"bad distance {toks[3]!r}") from None
            if k < 0:
                raise DfgSyntaxError(lineno, "negative edge distance")
            dists[(toks[1], toks[2])] = k
            dist_lines[(toks[1], toks[2])] = lineno
            continue
        if outputs:
            raise DfgSyntaxError(lineno, "node definition after 'out' lines")
        if len(toks) < 2:
            raise DfgSyntaxError(lineno, "expected '<id> <op> ...'")
        nid, op, args = toks[0], toks[1], toks[2:]
        if nid in seen:
            raise DfgSyntaxError(lineno, f"duplicate node id {nid!r}")
        if op not in OPS:
            raise DfgSyntaxError(lineno, f"unknown operation {op!r}")
        kind = OPS[op]
        literal: int | float | str | None = None
        operands: tuple[str, ...] = ()
        if op == "input":
            if len(args) != 1:
                raise DfgSyntaxError(lineno, "input takes exactly one name")
            literal = args[0]
        elif op == "const":
            if len(args) != 1:
                raise DfgSyntaxError(lineno, "const takes exactly one literal")
            try:
                literal = wrap32(_parse_int(args[0]))
            except ValueError:
                raise DfgSyntaxError(lineno, f"bad integer literal {args[0]!r}") from None
        elif op == "fconst":
            if len(args) != 1:
                raise DfgSyntaxError(lineno, "fconst takes exactly one literal")
            try:
                literal = float(args[0])
            except ValueError:
                raise DfgSyntaxError(lineno, f"bad float literal {args[0]!r}") from None
        else:
            if len(args) != kind.arity:
                raise DfgSyntaxError(lineno, f"{op} expects {kind.arity} operands, got {len(args)}")
            operands = tuple(args)
            refs.extend((lineno, a) for a in args)
        seen[nid] = lineno
        nodes.append(Node(nid, op, operands, literal))
    for lineno, ref in refs:
        if ref not in seen:
            raise DfgSyntaxError(lineno, f"dangling reference to {ref!r}")
    if not outputs:
        raise DfgError("no 'out' line")
    d = Dfg(tuple(nodes), tuple(outputs), dists)
    for (src, dst), lineno in dist_lines.items():
        if dst not in d or src not in d.node(dst).operands:
            raise DfgSyntaxError(lineno, f"no edge {src} -> {dst}")
    problems = validate(d)
    if problems:
        raise DfgError("; ".join(problems))
    return d


def _fmt_literal(v: int | float | str | None) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def serialize_dfg(d: Dfg) -> str:
    lines = []
    for n in d.nodes:
        if n.op in PSEUDO_OPS:
            lines.append(f"{n.id} {n.op} {_fmt_literal(n.literal)}")
        else:
            lines.append(" ".join((n.id, n.op) + n.operands))
    for (src, dst), k in d.distances.items():
        lines.append(f"dist {src} {dst} {k}")
    lines.extend(f"out {o}" for o in d.outputs)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# structure


def validate(d: Dfg) -> list[str]:
    """Return the list of invariant violations; an empty list means the graph is valid."""
    problems: list[str] = []
    ids: set[str] = set()
    for n in d.nodes:
        if n.id in ids:
            problems.append(f"duplicate node id {n.id}")
        ids.add(n.id)
        if n.op not in OPS:
            problems.append(f"node {n.id}: unknown operation {n.op}")
            continue
        if len(n.operands) != OPS[n.op].arity:
            problems.append(f"node {n.id}: arity mismatch ({n.op} takes {OPS[n.op].arity}, has {len(n.operands)})")
        if n.op == "input" and not isinstance(n.literal, str):
            problems.append(f"node {n.id}: input without a name")
        if n.op == "const" and not isinstance(n.literal, int):
            problems.append(f"node {n.id}: const without an integer literal")
        if n.op == "fconst" and not isinstance(n.literal, (int, float)):
            problems.append(f"node {n.id}: fconst without a literal")
    for n in d.nodes:
        for o in n.operands:
            if o not in ids:
                problems.append(f"node {n.id}: dangling operand {o}")
    if not d.outputs:
        problems.append("no outputs")
    for o in d.outputs:
        if o not in ids:
            problems.append(f"output {o} is not a node")
    for (src, dst), k in d.distances.items():
        if k < 0:
            problems.append(f"edge {src}->{dst}: negative distance")
        if dst not in ids or src not in d.node(dst).operands:
            problems.append(f"distance on missing edge {src}->{dst}")
    cyc = _find_cycle(d, ids)
    if cyc:
        problems.append("distance-0 cycle through " + " -> ".join(cyc))
    return problems


def _find_cycle(d: Dfg, ids: set[str]) -> list[str] | None:
    state: dict[str, int] = {}
    by_id = {n.id: n for n in d.nodes}
    for start in by_id:
        if start in state:
            continue
        stack = [(start, iter(by_id[start].operands))]
        path = [start]
        state[start] = 1
        while stack:
            nid, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                path.pop()
                state[nid] = 2
                continue
            if nxt not in by_id or d.distance(nxt, nid) > 0:
                continue
            st = state.get(nxt, 0)
            if st == 1:
                return path[path.index(nxt):] + [nxt]
            if st == 0:
                state[nxt] = 1
                path.append(nxt)
                stack.append((nxt, iter(by_id[nxt].operands)))
    return None


def topo_order(d: Dfg) -> list[Node]:
    """Nodes ordered so that every distance-0 operand precedes its user; stable w.r.t. list order."""
    pos = {n.id: i for i, n in enumerate(d.nodes)}
    indeg = {n.id: 0 for n in d.nodes}
    users: dict[str, list[str]] = {n.id: [] for n in d.nodes}
    for n in d.nodes:
        for o in dict.fromkeys(n.operands):
            if d.distance(o, n.id) == 0:
                indeg[n.id] += 1
                users[o].append(n.id)
    heap = [pos[i] for i, k in indeg.items() if k == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        n = d.nodes[heapq.heappop(heap)]
        out.append(n)
        for u in users[n.id]:
            indeg[u] -= 1
            if indeg[u] == 0:
                heapq.heappush(heap, pos[u])
    if len(out) != len(d.nodes):
        raise DfgError("graph has a distance-0 cycle")
    return out


def unsupported_nodes(d: Dfg, ops: Iterable[str]) -> set[str]:
    ops = frozenset(ops)
    return {n.id for n in d.nodes if n.op not in PSEUDO_OPS and n.op not in ops}


def op_cost(op: str, ops: frozenset[str]) -> int:
    if op in PSEUDO_OPS:
        return 0
    return 1 if op in ops else UNSUPPORTED_COST


def cost(d: Dfg, ops: Iterable[str]) -> int:
    ops = frozenset(ops)
    return sum(op_cost(n.op, ops) for n in d.nodes)


def structural_key(d: Dfg) -> tuple:
    """Id-independent key: two graphs share it iff their output terms are identical."""
    memo: dict[str, tuple] = {}
    for n in topo_order(d):
        kids = tuple(("@carry", o, d.distance(o, n.id)) if d.distance(o, n.id) else memo[o] for o in n.operands)
        memo[n.id] = (n.op, n.literal, kids)
    return tuple(memo[o] for o in d.outputs)


# ---------------------------------------------------------------------------
# semantics

_MASK = 0xFFFFFFFF


def wrap32(x: int) -> int:
    x &= _MASK
    return x - (1 << 32) if x & 0x80000000 else x


def _shift_amount(y: int) -> int:
    if not 0 <= y <= 31:
        raise ShiftOutOfRange(f"shift amount {y} outside 0..31")
    return y


def _div(x: int, y: int) -> int:
    if y == 0:
        raise DivisionByZero("integer division by zero")
    q = abs(x) // abs(y)
    return wrap32(q if (x < 0) == (y < 0) else -q)


def _fdiv(x: float, y: float) -> float:
    if y == 0:
        raise DivisionByZero("float division by zero")
    return x / y


_INT_BIN = {
    "add": lambda x, y: wrap32(x + y),
    "sub": lambda x, y: wrap32(x - y),
    "mul": lambda x, y: wrap32(x * y),
    "isc_mul": lambda x, y: wrap32(x * y),  # idealised: the approximate unit is modelled as exact
    "div": _div,
    "shl": lambda x, y: wrap32(x << _shift_amount(y)),
    "shr": lambda x, y: wrap32((x & _MASK) >> _shift_amount(y)),
    "and": lambda x, y: wrap32(x & y),
    "or": lambda x, y: wrap32(x | y),
    "xor": lambda x, y: wrap32(x ^ y),
    "eq": lambda x, y: int(x == y),
    "ne": lambda x, y: int(x != y),
    "lt": lambda x, y: int(x < y),
    "gt": lambda x, y: int(x > y),
    "le": lambda x, y: int(x <= y),
    "ge": lambda x, y: int(x >= y),
}
_FLOAT_BIN = {
    "fadd": lambda x, y: x + y,
    "fsub": lambda x, y: x - y,
    "fmul": lambda x, y: x * y,
    "fdiv": _fdiv,
}


def _as_int(v: int | float | bool) -> int:
    return wrap32(int(v))


def interpret(
    d: Dfg,
    env: Mapping[str, int | float | bool],
    mem: Mapping[int, int | float] | None = None,
    carried: Mapping[tuple[str, int], int | float] | None = None,
) -> dict[str, int | float]:
    """Evaluate one iteration of ``d``.

    Loads read ``mem`` as it was before the iteration; stores return their value.
    Operands on loop-carried edges read ``carried[(producer, distance)]`` (default 0).
    """
    mem = mem or {}
    carried = carried or {}
    vals: dict[str, int | float] = {}
    for n in topo_order(d):
        args = []
        for o in n.operands:
            k = d.distance(o, n.id)
            args.append(carried.get((o, k), 0) if k else vals[o])
        op = n.op
        if op == "input":
            if n.literal not in env:
                raise UnboundInput(f"input {n.literal!r} is not bound")
            v = env[n.literal]  # type: ignore[index]
            vals[n.id] = float(v) if isinstance(v, float) else _as_int(v)
        elif op == "const":
            vals[n.id] = wrap32(n.literal)  # type: ignore[arg-type]
        elif op == "fconst":
            vals[n.id] = float(n.literal)  # type: ignore[arg-type]
        elif op in _INT_BIN:
            vals[n.id] = _INT_BIN[op](_as_int(args[0]), _as_int(args[1]))
        elif op in _FLOAT_BIN:
            vals[n.id] = _FLOAT_BIN[op](float(args[0]), float(args[1]))
        elif op == "neg":
            vals[n.id] = wrap32(-_as_int(args[0]))
        elif op == "not":
            vals[n.id] = wrap32(~_as_int(args[0]))
        elif op == "fneg":
            vals[n.id] = -float(args[0])
        elif op == "select":
            vals[n.id] = args[1] if args[0] != 0 else args[2]
        elif op == "load":
            vals[n.id] = mem.get(_as_int(args[0]), 0)
        elif op == "store":
            vals[n.id] = args[1]
        else:  # pragma: no cover - OPS and the tables above are kept in sync
            raise DfgError(f"no semantics for {op}")
    return {o: vals[o] for o in d.outputs}


# ---------------------------------------------------------------------------
# construction helpers


class DfgBuilder:
    """Incremental construction with optional hash-consing of identical nodes."""

    def __init__(self, share: bool = True, prefix: str = "n"):
        self.nodes: list[Node] = []
        self.share = share
        self.prefix = prefix
        self._memo: dict[tuple, str] = {}

    def add(self, op: str, *operands: str, literal=None) -> str:
        key = (op, tuple(operands), literal if not isinstance(literal, float) else ("f", literal.hex()))
        if self.share and key in self._memo:
            return self._memo[key]
        nid = f"{self.prefix}{len(self.nodes)}"
        self.nodes.append(Node(nid, op, tuple(operands), literal))
        self._memo[key] = nid
        return nid

    def input(self, name: str) -> str:
        return self.add("input", literal=name)

    def const(self, value: int) -> str:
        return self.add("const", literal=wrap32(value))

    def fconst(self, value: float) -> str:
        return self.add("fconst", literal=float(value))

    def build(self, *outputs: str, distances: Mapping[tuple[str, str], int] | None = None) -> Dfg:
        return Dfg(tuple(self.nodes), tuple(outputs), distances or {})


CARRY_PREFIX = "%carry"
_CARRY_RE = re.compile(r"^%carry(\d+)$")


@dataclass(frozen=True)
class CarryInfo:
    n_outputs: int
    edges: tuple[tuple[int, int], ...]  # pseudo-input index -> (producer output slot, distance)


def split_carried(d: Dfg) -> tuple[Dfg, CarryInfo]:
    """Cut loop-carried edges so rewriting sees a plain acyclic graph.

    Every carried operand becomes an input named ``%carryN``; producers are
    appended to the outputs so they survive rewriting.
    """
    if not d.distances or not any(d.distances.values()):
        return Dfg(d.nodes, d.outputs), CarryInfo(len(d.outputs), ())
    producers: list[str] = []
    pseudo: dict[tuple[str, int], str] = {}
    edges: list[tuple[int, int]] = []
    new_nodes: list[Node] = []
    for (src, dst), k in sorted(d.distances.items()):
        if k and (src, k) not in pseudo:
            if src not in producers:
                producers.append(src)
            pid = f"{CARRY_PREFIX}{len(edges)}"
            pseudo[(src, k)] = pid
            edges.append((len(d.outputs) + producers.index(src), k))
            new_nodes.append(Node(pid, "input", (), pid))
    for n in d.nodes:
        ops = tuple(pseudo[(o, d.distance(o, n.id))] if d.distance(o, n.id) else o for o in n.operands)
        new_nodes.append(Node(n.id, n.op, ops, n.literal))
    cut = Dfg(tuple(new_nodes), d.outputs + tuple(producers))
    return cut, CarryInfo(len(d.outputs), tuple(edges))


def join_carried(d: Dfg, info: CarryInfo) -> Dfg:
    """Inverse of :func:`split_carried` applied to a (possibly rewritten) graph."""
    if not info.edges:
        return Dfg(d.nodes, d.outputs[: info.n_outputs], d.distances)
    target: dict[str, tuple[str, int]] = {}
    for n in d.nodes:
        m = _CARRY_RE.match(n.literal) if n.op == "input" and isinstance(n.literal, str) else None
        if m:
            slot, k = info.edges[int(m.group(1))]
            target[n.id] = (d.outputs[slot], k)
    nodes: list[Node] = []
    dists: dict[tuple[str, str], int] = {}
    for n in d.nodes:
        if n.id in target:
            continue
        ops = []
        for o in n.operands:
            if o in target:
                src, k = target[o]
                dists[(src, n.id)] = k
                ops.append(src)
            else:
                ops.append(o)
        nodes.append(Node(n.id, n.op, tuple(ops), n.literal))
    return Dfg(tuple(nodes), d.outputs[: info.n_outputs], dists)

"""E-graphs, equality saturation and cost-based extraction.

The e-graph follows the usual recipe: a union-find over class ids, a hashcons
from canonical e-nodes to classes, parent lists for congruence repair, and a
deferred ``rebuild`` that restores the congruence invariant in batches.
"""
from __future__ import annotations

import math
import time
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

from .dfg import (
    PSEUDO_OPS, Dfg, DfgBuilder, DfgError, cost, join_carried, op_cost,
    split_carried, topo_order,
)
from .expr import Term, Var
from .rules import RewriteRule

__all__ = [
    "ENode", "EClass", "EGraph", "SaturationLimits", "SaturationReport", "ExtractionError",
    "Extraction", "egraph_init", "merge", "rebuild", "ematch", "run_saturation", "extract",
    "extract_best", "eqsat_rewrite", "dump_egraph",
]


class ENode(NamedTuple):
    op: str
    children: tuple[int, ...]
    literal: object = None  # const value, input name, or float.hex() of an fconst


def _lit_key(op: str, literal):
    if op == "fconst":
        return float(literal).hex()
    return literal


def _lit_value(op: str, key):
    if op == "fconst":
        return float.fromhex(key)
    return key


@dataclass
class EClass:
    id: int
    nodes: dict[ENode, None] = field(default_factory=dict)  # insertion-ordered set
    parents: list[tuple[ENode, int]] = field(default_factory=list)


class EGraph:
    def __init__(self) -> None:
        self._parent: list[int] = []
        self._rank: list[int] = []
        self.rank_increases = 0
        self.classes: dict[int, EClass] = {}
        self.hashcons: dict[ENode, int] = {}
        self.pending: list[int] = []
        self.roots: list[int] = []

    # union-find -----------------------------------------------------------
    def find(self, a: int) -> int:
        parent = self._parent
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def canonicalize(self, n: ENode) -> ENode:
        return ENode(n.op, tuple(self.find(c) for c in n.children), n.literal)

    # construction ---------------------------------------------------------
    def lookup(self, n: ENode) -> int | None:
        cid = self.hashcons.get(self.canonicalize(n))
        return None if cid is None else self.find(cid)

    def add(self, n: ENode) -> int:
        n = self.canonicalize(n)
        cid = self.hashcons.get(n)
        if cid is not None:
            return self.find(cid)
        cid = len(self._parent)
        self._parent.append(cid)
        self._rank.append(0)
        self.classes[cid] = EClass(cid, {n: None})
        for c in n.children:
            self.classes[c].parents.append((n, cid))
        self.hashcons[n] = cid
        return cid

    def add_term(self, t: Term | Var, subst: dict[str, int] | None = None) -> int:
        if isinstance(t, Var):
            return self.find(subst[t.name])  # type: ignore[index]
        kids = tuple(self.add_term(c, subst) for c in t.children)
        return self.add(ENode(t.op, kids, _lit_key(t.op, t.literal)))

    def merge(self, a: int, b: int) -> int:
        a, b = self.find(a), self.find(b)
        if a == b:
            return a
        if self._rank[a] < self._rank[b]:
            a, b = b, a
        elif self._rank[a] == self._rank[b]:
            self._rank[a] += 1
            self.rank_increases += 1
        self._parent[b] = a
        winner, loser = self.classes[a], self.classes.pop(b)
        for n in loser.nodes:
            winner.nodes.setdefault(n, None)
        winner.parents.extend(loser.parents)
        self.pending.append(a)
        return a

    def rebuild(self) -> None:
        while True:
            while self.pending:
                todo = dict.fromkeys(self.find(c) for c in self.pending)
                self.pending = []
                for cid in todo:
                    self._repair(self.find(cid))
            if not self._recanonicalize():
                return

    def _repair(self, cid: int) -> None:
        cls = self.classes[cid]
        parents, cls.parents = cls.parents, []
        for pnode, pclass in parents:
            self.hashcons.pop(pnode, None)
            self.hashcons[self.canonicalize(pnode)] = self.find(pclass)
        fresh: dict[ENode, int] = {}
        for pnode, pclass in parents:
            pnode = self.canonicalize(pnode)
            if pnode in fresh:
                self.merge(pclass, fresh[pnode])
            fresh[pnode] = self.find(pclass)
        self.classes[self.find(cid)].parents.extend(fresh.items())

    def _recanonicalize(self) -> bool:
        """Canonicalize every class's node set and the hashcons; merge any leftover duplicates."""
        hashcons: dict[ENode, int] = {}
        dups: list[tuple[int, int]] = []
        for cid, cls in self.classes.items():
            cls.nodes = dict.fromkeys(self.canonicalize(n) for n in cls.nodes)
            for n in cls.nodes:
                other = hashcons.setdefault(n, cid)
                if other != cid:
                    dups.append((other, cid))
        if dups:
            for a, b in dups:
                self.merge(a, b)
            return True
        self.hashcons = hashcons
        return False

    # inspection -----------------------------------------------------------
    @property
    def node_count(self) -> int:
        return sum(len(c.nodes) for c in self.classes.values())

    @property
    def approx_node_count(self) -> int:
        # cheap upper bound between rebuilds: the hashcons may still hold stale keys
        return len(self.hashcons)

    @property
    def class_count(self) -> int:
        return len(self.classes)

    def canonical_roots(self) -> list[int]:
        return [self.find(r) for r in self.roots]

    def class_ids(self) -> list[int]:
        return sorted(self.classes)


def egraph_init(d: Dfg) -> EGraph:
    """One class per structurally distinct subterm of ``d``; roots follow ``d.outputs``."""
    if any(d.distances.values()):
        raise DfgError("split loop-carried edges before building an e-graph")
    g = EGraph()
    ids: dict[str, int] = {}
    for n in topo_order(d):
        ids[n.id] = g.add(ENode(n.op, tuple(ids[o] for o in n.operands), _lit_key(n.op, n.literal)))
    g.roots = [ids[o] for o in d.outputs]
    return g


def merge(g: EGraph, a: int, b: int) -> int:
    return g.merge(a, b)


def rebuild(g: EGraph) -> None:
    g.rebuild()


# ---------------------------------------------------------------------------
# e-matching


class _Timeout(Exception):
    pass


class _Clock:
    def __init__(self, deadline: float | None):
        self.deadline = deadline
        self.ticks = 0

    def tick(self, every: int = 256) -> None:
        self.ticks += 1
        if self.deadline is not None and self.ticks % every == 0 and time.monotonic() > self.deadline:
            raise _Timeout

    def expired(self) -> bool:
        return self.deadline is not None and time.monotonic() > self.deadline


def _match_class(g: EGraph, pat, cid: int, subst: dict[str, int], clock: _Clock) -> Iterator[dict[str, int]]:
    if isinstance(pat, Var):
        bound = subst.get(pat.name)
        if bound is None:
            yield {**subst, pat.name: cid}
        elif g.find(bound) == cid:
            yield subst
        return
    lit = _lit_key(pat.op, pat.literal)
    for node in list(g.classes[cid].nodes):
        clock.tick()
        if node.op != pat.op:
            continue
        if pat.op in PSEUDO_OPS:
            if node.literal == lit and type(node.literal) is type(lit):
                yield subst
            continue
        yield from _match_children(g, pat.children, node.children, 0, subst, clock)


def _match_children(g, pats, kids, i, subst, clock):
    if i == len(pats):
        yield subst
        return
    for s in _match_class(g, pats[i], g.find(kids[i]), subst, clock):
        yield from _match_children(g, pats, kids, i + 1, s, clock)


def _candidates(g: EGraph, pat, by_op: dict[str, list[int]] | None) -> list[int]:
    if isinstance(pat, Var) or by_op is None:
        return g.class_ids()
    return by_op.get(pat.op, [])


def _op_index(g: EGraph) -> dict[str, list[int]]:
    by_op: dict[str, list[int]] = {}
    for cid in g.class_ids():
        for op in dict.fromkeys(n.op for n in g.classes[cid].nodes):
            by_op.setdefault(op, []).append(cid)
    return by_op


def _ematch_outputs(g, outputs, clock, by_op) -> list[tuple[tuple[int, ...], dict[str, int]]]:
    out: list[tuple[tuple[int, ...], dict[str, int]]] = []
    seen: set = set()

    def rec(i, roots, subst):
        if i == len(outputs):
            key = (roots, tuple(sorted(subst.items())))
            if key not in seen:
                seen.add(key)
                out.append((roots, subst))
            return
        for cid in _candidates(g, outputs[i], by_op):
            for s in _match_class(g, outputs[i], cid, subst, clock):
                rec(i + 1, roots + (cid,), s)

    rec(0, (), {})
    return out


def ematch(g: EGraph, pattern, deadline: float | None = None) -> list[tuple[int, dict[str, int]]]:
    """All (class, substitution) pairs where a represented term matches ``pattern``.

    Accepts a single pattern term or a :class:`~flexc.rules.Pattern`; for
    multi-output patterns the class is the first output's and the full root
    tuple is available through :func:`ematch_roots`.
    """
    outputs = getattr(pattern, "outputs", (pattern,))
    return [(roots[0], s) for roots, s in _ematch_outputs(g, outputs, _Clock(deadline), _op_index(g))]


def ematch_roots(g: EGraph, pattern, deadline: float | None = None):
    outputs = getattr(pattern, "outputs", (pattern,))
    return _ematch_outputs(g, outputs, _Clock(deadline), _op_index(g))


# ---------------------------------------------------------------------------
# saturation


@dataclass(frozen=True)
class SaturationLimits:
    iter_limit: int = 10
    node_limit: int = 100_000
    wall_clock_limit: float = 300.0

    def __post_init__(self):
        if self.iter_limit <= 0 or self.node_limit <= 0 or self.wall_clock_limit <= 0:
            raise ValueError("saturation limits must be positive")


@dataclass
class SaturationReport:
    stop_reason: str
    iterations_run: int
    final_node_count: int
    rule_application_counts: dict[str, int]
    class_count: int = 0
    elapsed: float = 0.0
    extraction_time: float = 0.0
    tree_cost: float | None = None
    dag_cost: float | None = None
    extraction_exact: bool | None = None


def run_saturation(g: EGraph, rules: Sequence[RewriteRule], lim: SaturationLimits = SaturationLimits()) -> SaturationReport:
    """Grow ``g`` by non-destructive rule application until a fixpoint or a limit.

    Each iteration first collects every match of every rule, then applies them
    all and rebuilds. The node limit is checked after each application, the
    wall clock during matching and every few applications.
    """
    start = time.monotonic()
    clock = _Clock(start + lim.wall_clock_limit)
    counts: dict[str, int] = {r.name: 0 for r in rules}
    g.rebuild()
    reason, it = "iter_limit", 0

    def report(reason: str, iters: int) -> SaturationReport:
        g.rebuild()
        return SaturationReport(reason, iters, g.node_count, counts, g.class_count, time.monotonic() - start)

    for it in range(1, lim.iter_limit + 1):
        by_op = _op_index(g)
        batch = []
        try:
            for rule in rules:
                if not rule.enabled:
                    continue
                if clock.expired():
                    raise _Timeout
                for roots, s in _ematch_outputs(g, rule.lhs.outputs, clock, by_op):
                    batch.append((rule, roots, s))
        except _Timeout:
            return report("timeout", it)
        changed = False
        for k, (rule, roots, s) in enumerate(batch):
            merged = False
            for root, rhs in zip(roots, rule.rhs.outputs):
                new = g.add_term(rhs, s)
                if g.find(new) != g.find(root):
                    g.merge(root, new)
                    merged = True
            if merged:
                changed = True
                counts[rule.name] += 1
            if g.approx_node_count > lim.node_limit:
                return report("node_limit", it)
            if k % 64 == 63 and clock.expired():
                return report("timeout", it)
        g.rebuild()
        if not changed:
            return report("saturated", it)
        if g.node_count > lim.node_limit:
            return report("node_limit", it)
    return report(reason, it)


# ---------------------------------------------------------------------------
# extraction


class ExtractionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Extraction:
    dfg: Dfg
    cost: float  # cost of the extracted graph with shared subterms counted once
    tree_cost: float  # minimal cost over represented terms, subterms counted per use
    exact: bool  # False when the shared-cost search ran out of budget


def _weight(n: ENode, ops: frozenset[str]) -> int:
    return op_cost(n.op, ops)


def tree_costs(g: EGraph, ops: Iterable[str]) -> tuple[dict[int, float], dict[int, ENode]]:
    """Per-class minimal tree cost by fixpoint iteration; classes without a finite term get inf."""
    ops = frozenset(ops)
    best: dict[int, float] = {c: math.inf for c in g.classes}
    choice: dict[int, ENode] = {}
    changed = True
    while changed:
        changed = False
        for cid in g.class_ids():
            for n in g.classes[cid].nodes:
                c = _weight(n, ops) + sum(best[g.find(k)] for k in n.children)
                if c < best[cid]:
                    best[cid], choice[cid] = c, n
                    changed = True
    return best, choice


def _reachable(g: EGraph, roots: Iterable[int], choice: dict[int, ENode]) -> list[int]:
    seen: dict[int, None] = {}
    stack = list(roots)
    while stack:
        c = g.find(stack.pop())
        if c in seen:
            continue
        seen[c] = None
        stack.extend(choice[c].children)
    return list(seen)


def _dag_cost(g: EGraph, roots, choice, ops) -> float:
    return sum(_weight(choice[c], ops) for c in _reachable(g, roots, choice))


def _dag_search(g: EGraph, roots: list[int], tree: dict[int, float], seed: dict[int, ENode],
                ops: frozenset[str], budget: int) -> tuple[dict[int, ENode], float, bool]:
    """Branch and bound over per-class choices minimising shared cost, seeded with ``seed``."""
    options: dict[int, list[ENode]] = {}
    min_w: dict[int, int] = {}

    def opts(c: int) -> list[ENode]:
        if c not in options:
            ns = [n for n in g.classes[c].nodes if all(tree[g.find(k)] < math.inf for k in n.children)]
            ns = [ENode(n.op, tuple(g.find(k) for k in n.children), n.literal) for n in ns]
            ns.sort(key=lambda n: _weight(n, ops) + sum(tree[k] for k in n.children))
            options[c] = ns
            min_w[c] = min(_weight(n, ops) for n in ns)
        return options[c]

    best_choice = {c: seed[c] for c in _reachable(g, roots, seed)}
    best_cost = _dag_cost(g, roots, best_choice, ops)
    steps = 0
    exhausted = False
    assign: dict[int, ENode] = {}

    def reaches(src: Iterable[int], target: int) -> bool:
        stack, seen = list(src), set()
        while stack:
            c = stack.pop()
            if c == target:
                return True
            if c in seen or c not in assign:
                continue
            seen.add(c)
            stack.extend(assign[c].children)
        return False

    def rec(frontier: list[int], spent: float):
        nonlocal best_cost, best_choice, steps, exhausted
        if exhausted:
            return
        steps += 1
        if steps > budget:
            exhausted = True
            return
        pending = [c for c in dict.fromkeys(frontier) if c not in assign]
        if not pending:
            if spent < best_cost:
                best_cost, best_choice = spent, dict(assign)
            return
        if spent + sum(min_w[c] for c in pending if opts(c)) >= best_cost:
            return
        c, rest = pending[0], pending[1:]
        for n in opts(c):
            if reaches(n.children, c):
                continue
            assign[c] = n
            rec(rest + [k for k in n.children if k not in assign], spent + _weight(n, ops))
            del assign[c]
            if exhausted:
                return

    roots_c = list(dict.fromkeys(g.find(r) for r in roots))
    for c in roots_c:
        opts(c)
    rec(roots_c, 0)
    return best_choice, best_cost, not exhausted


def _to_dfg(g: EGraph, roots: list[int], choice: dict[int, ENode]) -> Dfg:
    b = DfgBuilder(share=False)
    ids: dict[int, str] = {}

    def emit(c: int) -> str:
        # iterative post-order to survive deep chains
        stack = [(c, False)]
        while stack:
            cid, ready = stack.pop()
            cid = g.find(cid)
            if cid in ids:
                continue
            n = choice[cid]
            if ready:
                ids[cid] = b.add(n.op, *(ids[g.find(k)] for k in n.children), literal=_lit_value(n.op, n.literal))
            else:
                stack.append((cid, True))
                stack.extend((k, False) for k in reversed(n.children))
        return ids[g.find(c)]

    outs = [emit(r) for r in roots]
    return b.build(*outs)


def extract(g: EGraph, ops: Iterable[str], roots: Sequence[int] | None = None, dag_budget: int = 200_000) -> Extraction:
    """Pick one represented graph for the roots with minimal cost under ``ops``."""
    ops = frozenset(ops)
    g.rebuild()
    roots = [g.find(r) for r in (g.roots if roots is None else roots)]
    tree, choice = tree_costs(g, ops)
    bad = [r for r in roots if tree[r] == math.inf]
    if bad:
        raise ExtractionError(f"no finite term for class(es) {bad}")
    tree_total = sum(tree[r] for r in dict.fromkeys(roots))
    sel, dag, exact = _dag_search(g, roots, tree, choice, ops, dag_budget)
    return Extraction(_to_dfg(g, roots, sel), dag, tree_total, exact)


def extract_best(g: EGraph, ops: Iterable[str]) -> tuple[Dfg, float]:
    ex = extract(g, ops)
    return ex.dfg, ex.cost


def eqsat_rewrite(d: Dfg, rules: Sequence[RewriteRule], ops: Iterable[str],
                  lim: SaturationLimits = SaturationLimits()) -> tuple[Dfg, SaturationReport]:
    """Saturate an e-graph built from ``d`` and extract the cheapest equivalent graph."""
    ops = frozenset(ops)
    work, info = split_carried(d)
    g = egraph_init(work)
    rep = run_saturation(g, rules, lim)
    t0 = time.monotonic()
    ex = extract(g, ops)
    rep.extraction_time = time.monotonic() - t0
    rep.tree_cost, rep.dag_cost, rep.extraction_exact = ex.tree_cost, ex.cost, ex.exact
    out = join_carried(ex.dfg, info)
    if cost(out, ops) > cost(d, ops):
        return d, rep
    return out, rep


# ---------------------------------------------------------------------------
# debugging


def _fmt_node(n: ENode) -> str:
    if n.op in PSEUDO_OPS:
        lit = _lit_value(n.op, n.literal)
        return f"{n.op} {lit!r}" if n.op == "fconst" else f"{n.op} {lit}"
    return f"{n.op}(" + ", ".join(f"c{k}" for k in n.children) + ")"


def dump_egraph(g: EGraph) -> str:
    """Structured text listing of classes and their e-nodes."""
    g.rebuild()
    roots = set(g.canonical_roots())
    lines = [f"# egraph classes={g.class_count} nodes={g.node_count}"]
    for cid in g.class_ids():
        tag = " root" if cid in roots else ""
        lines.append(f"class c{cid}{tag}")
        lines.extend(f"  {_fmt_node(n)}" for n in g.classes[cid].nodes)
    return "\n".join(lines) + "\n"

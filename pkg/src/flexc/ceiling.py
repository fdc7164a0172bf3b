"""Program spaces, an exhaustive rewriting oracle, and support/ceiling estimates."""
from __future__ import annotations

import itertools
import random
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

from .arch import CgraSpec, supported_ops
from .dfg import (
    OPS, UNSUPPORTED_COST, Dfg, DfgBuilder, cost, join_carried, split_carried, structural_key, topo_order,
)
from .egraph import SaturationLimits, egraph_init, extract, run_saturation
from .expr import Term, term_into
from .hybrid import rewrite
from .mapper import MappingError, UnsupportedOpError, compile, optimal_ii
from .rules import RewriteRule, apply_match, find_matches

__all__ = [
    "ProgramSpace", "CompilerUnderTest", "CeilingEstimate", "OracleBudgetExceeded", "SpaceTooLarge",
    "enumerate_programs", "optimal_rewriter", "supp_fraction", "ceiling_estimate",
]


class OracleBudgetExceeded(RuntimeError):
    pass


class SpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class ProgramSpace:
    ops: tuple[str, ...]
    inputs: tuple[str, ...] = ("a", "b")
    constants: tuple[int, ...] = ()
    max_ops: int = 2
    mode: str = "enumerate"  # enumerate | sample
    exhaustive_upto: int = 1  # sample mode: sizes up to this are still enumerated in full
    samples_per_size: int = 40
    seed: int = 0
    max_bound: int = 6

    def __post_init__(self):
        unknown = [o for o in self.ops if o not in OPS]
        if unknown:
            raise ValueError(f"unknown operations {unknown}")
        if self.mode not in ("enumerate", "sample"):
            raise ValueError("mode must be 'enumerate' or 'sample'")


def _leaves(space: ProgramSpace) -> list[Term]:
    return [Term("input", (), n) for n in space.inputs] + [Term("const", (), c) for c in space.constants]


def _terms_by_size(space: ProgramSpace, upto: int) -> list[list[tuple[Term, frozenset]]]:
    """Terms grouped by the number of distinct operation subterms (the graph's op count)."""
    levels: list[list[tuple[Term, frozenset]]] = [[(t, frozenset()) for t in _leaves(space)]]
    for n in range(1, upto + 1):
        level: list[tuple[Term, frozenset]] = []
        for op in space.ops:
            arity = OPS[op].arity
            if arity == 0:
                continue
            for sizes in itertools.product(range(n), repeat=arity):
                if max(sizes) > n - 1 or sum(sizes) < n - 1:
                    continue
                for kids in itertools.product(*(levels[s] for s in sizes)):
                    sub = frozenset().union(*(k[1] for k in kids))
                    if len(sub) != n - 1:
                        continue
                    t = Term(op, tuple(k[0] for k in kids))
                    level.append((t, sub | {t}))
        levels.append(level)
    return levels


def _to_dfg(t: Term) -> Dfg:
    b = DfgBuilder(share=True)
    return b.build(term_into(b, t))


def _random_program(rng: random.Random, space: ProgramSpace, n: int) -> Dfg | None:
    leaves = _leaves(space)
    ops = [o for o in space.ops if OPS[o].arity > 0]
    b = DfgBuilder(share=True)
    pool = [term_into(b, t) for t in leaves]
    made: list[str] = []
    for _ in range(n):
        op = rng.choice(ops)
        unused = [m for m in made if not any(m in nd.operands for nd in b.nodes)]
        args = []
        for i in range(OPS[op].arity):
            if unused and i == 0:
                args.append(rng.choice(unused))
            else:
                args.append(rng.choice(pool + made))
        if rng.random() < 0.5:
            args.reverse()
        made.append(b.add(op, *args))
    if not made:
        return None
    d = b.build(made[-1])
    live = _live(d)
    d = Dfg(tuple(nd for nd in d.nodes if nd.id in live), d.outputs)
    return d if len(d.op_nodes) == n else None


def _live(d: Dfg) -> set[str]:
    seen: set[str] = set()
    stack = list(d.outputs)
    while stack:
        nid = stack.pop()
        if nid not in seen:
            seen.add(nid)
            stack.extend(d.node(nid).operands)
    return seen


def enumerate_programs(space: ProgramSpace) -> list[Dfg]:
    """All single-output programs up to ``max_ops`` operations (or a seeded sample of the larger sizes)."""
    if space.mode == "enumerate":
        if space.max_ops > space.max_bound:
            raise SpaceTooLarge(f"max_ops {space.max_ops} exceeds the bound {space.max_bound}")
        levels = _terms_by_size(space, space.max_ops)
        return [_to_dfg(t) for level in levels for t, _ in level]
    upto = min(space.exhaustive_upto, space.max_ops)
    levels = _terms_by_size(space, upto)
    out = [_to_dfg(t) for level in levels for t, _ in level]
    seen = {structural_key(d) for d in out}
    rng = random.Random(space.seed)
    for n in range(upto + 1, space.max_ops + 1):
        got, tries = 0, 0
        while got < space.samples_per_size and tries < space.samples_per_size * 200:
            tries += 1
            d = _random_program(rng, space, n)
            if d is None:
                continue
            key = structural_key(d)
            if key in seen:
                continue
            seen.add(key)
            out.append(_renumber(d))
            got += 1
    return out


def _renumber(d: Dfg) -> Dfg:
    b = DfgBuilder(share=True)
    ids: dict[str, str] = {}
    for n in topo_order(d):
        ids[n.id] = b.add(n.op, *(ids[o] for o in n.operands), literal=n.literal)
    return b.build(*(ids[o] for o in d.outputs))


# ---------------------------------------------------------------------------
# exhaustive rewriter


def _bfs(d: Dfg, rules: Sequence[RewriteRule], ops: frozenset[str], depth: int, state_budget: int) -> tuple[Dfg | None, bool]:
    """Breadth-first over rule applications; returns (supported graph or None, completed)."""
    seen = {structural_key(d)}
    frontier = [d]
    for _ in range(depth):
        nxt = []
        for state in frontier:
            for rule in rules:
                for m in find_matches(state, rule):
                    cand = apply_match(state, m, rule)
                    key = structural_key(cand)
                    if key in seen:
                        continue
                    if cost(cand, ops) < UNSUPPORTED_COST:
                        return cand, True
                    seen.add(key)
                    if len(seen) > state_budget:
                        return None, False
                    nxt.append(cand)
        frontier = nxt
        if not frontier:
            break
    return None, True


def optimal_rewriter(
    d: Dfg,
    rules: Sequence[RewriteRule],
    ops: Iterable[str],
    depth: int = 5,
    state_budget: int = 20_000,
    sat_limits: SaturationLimits = SaturationLimits(iter_limit=60, node_limit=20_000, wall_clock_limit=30.0),
) -> Dfg | None:
    """Supported equivalent of ``d`` if one is reachable, else None.

    Reachability is decided by breadth-first search over rule applications up
    to ``depth``, backed by saturating an e-graph to a fixpoint: a saturated
    e-graph with no supported term proves that none exists. When neither
    completes, :class:`OracleBudgetExceeded` is raised.
    """
    ops = frozenset(ops)
    if cost(d, ops) < UNSUPPORTED_COST:
        return d
    work, info = split_carried(d)
    g = egraph_init(work)
    rep = run_saturation(g, rules, sat_limits)
    ex = extract(g, ops)
    saturated = rep.stop_reason == "saturated"
    if saturated and ex.tree_cost >= UNSUPPORTED_COST:
        return None
    found, _ = _bfs(work, rules, ops, depth, state_budget)
    if found is not None:
        return join_carried(found, info)
    if ex.cost < UNSUPPORTED_COST:
        return join_carried(ex.dfg, info)
    if saturated:
        return None
    raise OracleBudgetExceeded(f"neither search depth {depth} nor saturation ({rep.stop_reason}) settled the program")


# ---------------------------------------------------------------------------
# estimates


@dataclass(frozen=True)
class CompilerUnderTest:
    rewriter: str  # none | greedy | eqsat | hybrid | optimal
    rules: tuple[RewriteRule, ...] = ()
    mapper: str = "none"  # none | heuristic | optimal
    limits: SaturationLimits = SaturationLimits()
    depth: int = 5
    map_steps: int = 20_000

    def __post_init__(self):
        if self.rewriter not in ("none", "greedy", "eqsat", "hybrid", "optimal"):
            raise ValueError(f"unknown rewriter {self.rewriter!r}")
        if self.mapper not in ("none", "heuristic", "optimal"):
            raise ValueError(f"unknown mapper {self.mapper!r}")

    def rewrite(self, d: Dfg, ops: frozenset[str]) -> Dfg | None:
        if self.rewriter == "optimal":
            return optimal_rewriter(d, self.rules, ops, self.depth)
        res = rewrite(d, self.rules, ops, self.rewriter, self.limits)
        return res.dfg if res.cost_after < UNSUPPORTED_COST else None

    def succeeds(self, d: Dfg, target: CgraSpec | Iterable[str]) -> bool:
        spec = target if isinstance(target, CgraSpec) else None
        ops = supported_ops(spec) if spec else frozenset(target)  # type: ignore[arg-type]
        out = self.rewrite(d, ops)
        if out is None:
            return False
        if self.mapper == "none":
            return True
        if spec is None:
            raise ValueError("mapping needs an architecture, not a bare operation set")
        if self.mapper == "optimal":
            return optimal_ii(out, spec) is not None
        try:
            compile(out, spec, max_steps=self.map_steps)
            return True
        except (MappingError, UnsupportedOpError):
            return False


def supp_fraction(programs: Sequence[Dfg], cut: CompilerUnderTest, spec: CgraSpec | Iterable[str]) -> float:
    """Fraction of programs the compiler handles; oracle budget overruns count as failures."""
    if not programs:
        raise ValueError("empty program list")
    ok = 0
    for d in programs:
        try:
            ok += cut.succeeds(d, spec)
        except OracleBudgetExceeded:
            pass
    return ok / len(programs)


@dataclass
class CeilingEstimate:
    value: float
    total: int
    counted: int
    optimal_successes: int
    heuristic_successes: int
    excluded: list[int] = field(default_factory=list)  # program indices where the oracle ran out of budget
    misses: list[int] = field(default_factory=list)  # optimal succeeded, heuristic failed


def ceiling_estimate(programs: Sequence[Dfg], rules: Sequence[RewriteRule], heur: CompilerUnderTest,
                     spec: CgraSpec | Iterable[str], optimal: CompilerUnderTest | None = None) -> CeilingEstimate:
    """Share of programs where success of the optimal pipeline implies success of ``heur``."""
    if not programs:
        raise ValueError("empty program list")
    optimal = optimal or CompilerUnderTest("optimal", tuple(rules), "optimal" if heur.mapper != "none" else "none",
                                           heur.limits, heur.depth)
    good = 0
    counted = opt_ok = heur_ok = 0
    excluded: list[int] = []
    misses: list[int] = []
    for i, d in enumerate(programs):
        try:
            o = optimal.succeeds(d, spec)
            h = o if heur == optimal else heur.succeeds(d, spec)
        except OracleBudgetExceeded:
            excluded.append(i)
            continue
        counted += 1
        opt_ok += o
        heur_ok += h
        if not o or h:
            good += 1
        else:
            misses.append(i)
    value = good / counted if counted else 1.0
    return CeilingEstimate(value, len(programs), counted, opt_ok, heur_ok, excluded, misses)

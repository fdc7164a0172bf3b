"""Greedy rewriting with an equality-saturation fallback, plus a strategy dispatcher."""
from __future__ import annotations

import time
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

from .dfg import UNSUPPORTED_COST, Dfg, cost
from .egraph import SaturationLimits, SaturationReport, eqsat_rewrite
from .greedy import greedy_rewrite
from .rules import RewriteRule

STRATEGIES = ("none", "greedy", "eqsat", "hybrid")


@dataclass
class RewriteResult:
    dfg: Dfg
    strategy_used: str  # none | greedy | eqsat
    cost_before: int
    cost_after: int
    trace: list[str] = field(default_factory=list)
    report: SaturationReport | None = None
    greedy_time: float = 0.0
    saturation_time: float = 0.0
    extraction_time: float = 0.0

    @property
    def supported(self) -> bool:
        return self.cost_after < UNSUPPORTED_COST

    def rules_applied(self) -> dict[str, int]:
        if self.strategy_used == "greedy":
            return dict(Counter(self.trace))
        if self.report is not None:
            return {k: v for k, v in self.report.rule_application_counts.items() if v}
        return {}


def hybrid_rewrite(d: Dfg, rules: Sequence[RewriteRule], ops: Iterable[str],
                   lim: SaturationLimits = SaturationLimits()) -> tuple[Dfg, str, RewriteResult]:
    """Greedy first; if that leaves an unsupported op, saturate from the original graph."""
    res = rewrite(d, rules, ops, "hybrid", lim)
    return res.dfg, res.strategy_used, res


def rewrite(d: Dfg, rules: Sequence[RewriteRule], ops: Iterable[str], strategy: str = "hybrid",
            lim: SaturationLimits = SaturationLimits()) -> RewriteResult:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    ops = frozenset(ops)
    before = cost(d, ops)
    if strategy == "none":
        return RewriteResult(d, "none", before, before)
    res = RewriteResult(d, strategy, before, before)
    if strategy in ("greedy", "hybrid"):
        t0 = time.monotonic()
        g, trace = greedy_rewrite(d, rules, ops, deadline=t0 + lim.wall_clock_limit)
        res.greedy_time = time.monotonic() - t0
        res.dfg, res.trace, res.cost_after, res.strategy_used = g, trace, cost(g, ops), "greedy"
        if strategy == "greedy" or res.cost_after < UNSUPPORTED_COST:
            return res
    out, rep = eqsat_rewrite(d, rules, ops, lim)
    res.dfg, res.report, res.cost_after, res.strategy_used = out, rep, cost(out, ops), "eqsat"
    res.saturation_time, res.extraction_time = rep.elapsed, rep.extraction_time
    return res

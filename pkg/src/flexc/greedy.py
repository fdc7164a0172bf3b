"""First-improvement greedy rewriting to a local cost minimum."""
from __future__ import annotations

import time
from collections.abc import Iterable, Sequence

from .dfg import Dfg, cost, join_carried, split_carried
from .rules import RewriteRule, apply_match, find_matches


def greedy_rewrite(
    d: Dfg,
    rules: Sequence[RewriteRule],
    ops: Iterable[str],
    deadline: float | None = None,
) -> tuple[Dfg, list[str]]:
    """Rewrite ``d`` until no single rule application strictly lowers its cost.

    Rules are tried in list order and matches in matcher order; the first
    improving application is accepted, then scanning resumes with the next rule.
    Equal-cost moves are never taken, so rule pairs that undo each other cannot loop.
    ``deadline`` (a ``time.monotonic()`` value) stops early with the best graph so far.
    """
    ops = frozenset(ops)
    work, info = split_carried(d)
    current = cost(work, ops)
    trace: list[str] = []
    local_minimum = False
    while not local_minimum:
        local_minimum = True
        for rule in rules:
            for m in find_matches(work, rule):
                if deadline is not None and time.monotonic() > deadline:
                    return join_carried(work, info), trace
                candidate = apply_match(work, m, rule)
                c = cost(candidate, ops)
                if c < current:
                    work, current = candidate, c
                    trace.append(rule.name)
                    local_minimum = False
                    break
    return join_carried(work, info), trace

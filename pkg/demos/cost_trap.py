"""Why greedy rewriting is not enough: subtraction on an add/xor-only accelerator.

Rewriting ``a - b`` into ``a + -b`` does not lower the cost (negation is
still unsupported), so a greedy rewriter never takes that first step.
Equality saturation keeps every equivalent form and finds the chain
``a + ((b ^ -1) + 1)`` that uses only add and xor.
"""
from flexc.dfg import cost, interpret, make_opset, serialize_dfg
from flexc.expr import dfg_from_expr
from flexc.hybrid import rewrite
from flexc.rules import builtin_ruleset

ops = make_opset(["add", "xor", "const"])
rules = builtin_ruleset("int")
kernel = dfg_from_expr("a - b")

print(f"original cost on {{add, xor}}: {cost(kernel, ops)}")
for strategy in ("greedy", "hybrid"):
    res = rewrite(kernel, rules, ops, strategy)
    print(f"\n== {strategy}: used {res.strategy_used}, cost {res.cost_before} -> {res.cost_after}")
    print(serialize_dfg(res.dfg), end="")
    if res.report:
        print(f"saturation stopped: {res.report.stop_reason} after {res.report.iterations_run} iterations")

res = rewrite(kernel, rules, ops, "hybrid")
for a, b in [(7, 3), (-5, 12), (2**31 - 1, -1)]:
    got = list(interpret(res.dfg, {"a": a, "b": b}).values())[0]
    print(f"a={a} b={b}: rewritten graph computes {got}")

"""How close do the heuristic rewriters get to an exhaustive one on a small program space?"""
from flexc.ceiling import CompilerUnderTest, ProgramSpace, ceiling_estimate, enumerate_programs, supp_fraction
from flexc.dfg import make_opset
from flexc.rules import builtin_ruleset

rules = tuple(builtin_ruleset("int"))
target = make_opset(["add", "xor", "const"])
programs = enumerate_programs(ProgramSpace(("add", "sub", "xor"), constants=(-1, 1), max_ops=2))
print(f"{len(programs)} programs, target ops {sorted(target)}")
print(f"{'rewriter':8s} {'supported':>9s} {'ceiling':>8s}")
for name in ("none", "greedy", "hybrid", "optimal"):
    cut = CompilerUnderTest(name, rules)
    est = ceiling_estimate(programs, rules, cut, target)
    print(f"{name:8s} {supp_fraction(programs, cut, target):9.3f} {est.value:8.3f}")

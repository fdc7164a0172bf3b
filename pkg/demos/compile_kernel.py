"""Rewrite a bundled kernel for each architecture profile, map it, and estimate cycles."""
from flexc.arch import BUILTIN_ARCHS, builtin_arch
from flexc.bench import bundled_corpus, default_rulesets
from flexc.dfg import parse_dfg
from flexc.hybrid import rewrite
from flexc.mapper import MappingError, compile, estimate_cycles, rec_mii, res_mii
from flexc.rules import resolve_rulesets

kernel = parse_dfg((bundled_corpus() / "k01_diff_scale.dfg").read_text())
print(f"kernel: {len(kernel.op_nodes)} ops ({', '.join(sorted({n.op for n in kernel.op_nodes}))})")

for name in BUILTIN_ARCHS:
    spec = builtin_arch(name)
    res = rewrite(kernel, resolve_rulesets(default_rulesets(name)), spec.supported_ops, "hybrid")
    if not res.supported:
        print(f"{name:8s} rewrite failed (cost {res.cost_after})")
        continue
    try:
        m = compile(res.dfg, spec)
    except MappingError as e:
        print(f"{name:8s} mapping failed: {e}")
        continue
    lower = max(res_mii(res.dfg, spec), rec_mii(res.dfg))
    print(f"{name:8s} via {res.strategy_used:6s} ii={m.ii} (lower bound {lower}) "
          f"cycles for 1000 iterations={estimate_cycles(m, 1000)}")

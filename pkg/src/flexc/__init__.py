"""flexc: rewrite loop dataflow graphs onto heterogeneous CGRAs and map them."""
from .arch import CgraSpec, ProcessingElement, builtin_arch, load_arch, parse_arch, supported_ops
from .dfg import Dfg, Node, cost, interpret, make_opset, parse_dfg, serialize_dfg, unsupported_nodes, validate
from .egraph import EGraph, SaturationLimits, SaturationReport, egraph_init, eqsat_rewrite, extract_best, run_saturation
from .greedy import greedy_rewrite
from .hybrid import hybrid_rewrite, rewrite
from .mapper import Mapping, compile, estimate_cycles, map_at, rec_mii, res_mii, verify_mapping
from .rules import RewriteRule, apply_match, builtin_ruleset, find_matches, parse_rule

__version__ = "0.1.0"

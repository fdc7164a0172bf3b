"""Command-line interface: ``flexc rewrite|compile|bench|ceiling|explain``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .arch import BUILTIN_ARCHS, ArchError, CgraSpec, builtin_arch, load_arch, supported_ops
from .dfg import UNSUPPORTED_COST, DfgError, cost, make_opset, parse_dfg, serialize_dfg, split_carried
from .egraph import ExtractionError, SaturationLimits, dump_egraph, egraph_init, run_saturation
from .hybrid import STRATEGIES, rewrite
from .mapper import MappingError, UnsupportedOpError, compile, estimate_cycles, mapping_to_text, verify_mapping
from .rules import RuleSyntaxError, resolve_rulesets

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _limits(args) -> SaturationLimits:
    try:
        return SaturationLimits(args.iter_limit, args.node_limit, args.timeout)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _arch(args, required: bool = True) -> CgraSpec | None:
    try:
        if getattr(args, "arch", None):
            return load_arch(args.arch)
        if getattr(args, "arch_builtin", None):
            return builtin_arch(args.arch_builtin)
    except (OSError, ArchError, ValueError) as e:
        raise UsageError(f"architecture: {e}") from None
    if required:
        raise UsageError("one of --arch or --arch-builtin is required")
    return None


def _rules(args, arch_name: str | None):
    names = args.rulesets
    if not names:
        names = "int,fp,stochastic" if arch_name == "sc_cgra" else "int,fp"
    try:
        return resolve_rulesets(names, args.rules_file)
    except (OSError, RuleSyntaxError, ValueError) as e:
        raise UsageError(f"rulesets: {e}") from None


def _dfg(path: str):
    try:
        return parse_dfg(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e}") from None
    except DfgError as e:
        raise UsageError(f"{path}: {e}") from None


def _ops(args, spec: CgraSpec | None) -> frozenset[str]:
    if getattr(args, "ops", None):
        try:
            return make_opset(args.ops.split(","))
        except ValueError as e:
            raise UsageError(str(e)) from None
    if spec is None:
        raise UsageError("one of --arch, --arch-builtin or --ops is required")
    return supported_ops(spec)


def _add_target(p: argparse.ArgumentParser, with_ops: bool = True) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--arch", help="architecture JSON file")
    g.add_argument("--arch-builtin", choices=BUILTIN_ARCHS, help="bundled architecture profile")
    if with_ops:
        g.add_argument("--ops", help="comma-separated operation set instead of an architecture")


def _add_rewrite_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rulesets", help="comma-separated rulesets (int, fp, bool, stochastic)")
    p.add_argument("--rules-file", help="extra ruleset file with [ruleset:NAME] sections")
    p.add_argument("--strategy", choices=STRATEGIES, default="hybrid")
    p.add_argument("--iter-limit", type=int, default=10)
    p.add_argument("--node-limit", type=int, default=100_000)
    p.add_argument("--timeout", type=float, default=300.0, help="rewriting cutoff in seconds")


def _do_map(args, d, spec: CgraSpec, out) -> int:
    try:
        m = compile(d, spec, max_steps=args.map_steps)
    except (MappingError, UnsupportedOpError) as e:
        print(f"mapping failed: {e}", file=sys.stderr)
        return EXIT_FAIL
    problems = verify_mapping(d, spec, m)
    text = mapping_to_text(d, spec, m)
    if args.mapping_out:
        Path(args.mapping_out).write_text(text, encoding="utf-8")
    else:
        out.write(text)
    print(f"ii={m.ii} schedule_length={m.schedule_length} cycles@100={estimate_cycles(m, 100)}"
          + (f" VERIFY FAILED: {problems}" if problems else ""), file=sys.stderr)
    return EXIT_OK if not problems else EXIT_FAIL


def cmd_rewrite(args, force_map: bool = False) -> int:
    d = _dfg(args.dfg)
    spec = _arch(args, required=False)
    if (force_map or args.map) and spec is None:
        raise UsageError("mapping needs --arch or --arch-builtin")
    ops = _ops(args, spec)
    rules = _rules(args, spec.name if spec else None)
    lim = _limits(args)
    if args.dump_egraph:
        work, _ = split_carried(d)
        g = egraph_init(work)
        run_saturation(g, rules, lim)
        Path(args.dump_egraph).write_text(dump_egraph(g), encoding="utf-8")
    try:
        res = rewrite(d, rules, ops, args.strategy, lim)
    except ExtractionError as e:
        print(f"extraction failed: {e}", file=sys.stderr)
        return EXIT_FAIL if args.strict else EXIT_OK
    text = serialize_dfg(res.dfg)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    ok = res.cost_after < UNSUPPORTED_COST
    print(f"strategy={res.strategy_used} cost {res.cost_before} -> {res.cost_after} "
          f"({'supported' if ok else 'UNSUPPORTED'})", file=sys.stderr)
    status = EXIT_OK
    if not ok:
        status = EXIT_FAIL
    elif force_map or args.map:
        status = _do_map(args, res.dfg, spec, sys.stdout)
    return status if args.strict else EXIT_OK


def cmd_compile(args) -> int:
    return cmd_rewrite(args, force_map=True)


def cmd_bench(args) -> int:
    from .bench import bundled_corpus, emit, markdown, run_corpus, summarize

    corpus = Path(args.corpus) if args.corpus else bundled_corpus()
    if not corpus.is_dir():
        raise UsageError(f"corpus directory {corpus} does not exist")
    if args.arch:
        try:
            specs = [load_arch(args.arch)]
        except (OSError, ArchError) as e:
            raise UsageError(f"architecture: {e}") from None
    else:
        names = args.arch_builtin.split(",") if args.arch_builtin else list(BUILTIN_ARCHS)
        try:
            specs = [builtin_arch(n) for n in names]
        except ValueError as e:
            raise UsageError(str(e)) from None
    strategies = args.strategies.split(",")
    for s in strategies:
        if s not in STRATEGIES:
            raise UsageError(f"unknown strategy {s!r}")
    rulesets = args.rulesets.split(",") if args.rulesets else None
    if rulesets:
        try:
            resolve_rulesets(rulesets)
        except ValueError as e:
            raise UsageError(str(e)) from None
    lim = _limits(args)
    results = []
    try:
        for spec in specs:
            for s in strategies:
                results += run_corpus(corpus, spec, s, rulesets, lim, args.jobs, not args.no_map, args.map_steps)
    except FileNotFoundError as e:
        raise UsageError(str(e)) from None
    rep = summarize(results)
    emit(rep, args.out)
    sys.stdout.write(markdown(rep))
    if args.strict and any(not r.succeeded for r in results):
        return EXIT_FAIL
    return EXIT_OK


def cmd_ceiling(args) -> int:
    from .ceiling import CompilerUnderTest, ProgramSpace, SpaceTooLarge, ceiling_estimate, enumerate_programs, supp_fraction

    try:
        grammar = json.loads(Path(args.grammar).read_text(encoding="utf-8"))
        space = ProgramSpace(
            ops=tuple(grammar["ops"]), inputs=tuple(grammar.get("inputs", ["a", "b"])),
            constants=tuple(grammar.get("constants", [])), max_ops=args.max_ops, mode=args.mode,
            samples_per_size=args.samples, seed=args.seed,
        )
        programs = enumerate_programs(space)
    except (OSError, ValueError, KeyError, TypeError, SpaceTooLarge) as e:
        raise UsageError(f"grammar: {e}") from None
    spec = _arch(args, required=False)
    target = spec if spec is not None else _ops(args, None)
    if args.mapper != "none" and spec is None:
        raise UsageError("--mapper needs --arch or --arch-builtin")
    rules = tuple(_rules(args, spec.name if spec else None))
    lim = _limits(args)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["strategy", "programs", "fraction", "ceiling", "excluded"])
    for s in args.strategies.split(","):
        if s not in ("none", "greedy", "eqsat", "hybrid", "optimal"):
            raise UsageError(f"unknown strategy {s!r}")
        cut = CompilerUnderTest(s, rules, args.mapper, lim, args.depth)
        frac = supp_fraction(programs, cut, target)
        est = ceiling_estimate(programs, rules, cut, target)
        w.writerow([s, len(programs), f"{frac:.4f}", f"{est.value:.4f}", len(est.excluded)])
    return EXIT_OK


def cmd_explain(args) -> int:
    from .greedy import greedy_rewrite
    from .egraph import eqsat_rewrite

    d = _dfg(args.dfg)
    spec = _arch(args, required=False)
    ops = _ops(args, spec)
    rules = _rules(args, spec.name if spec else None)
    lim = _limits(args)
    print(f"kernel {args.dfg}: {len(d.op_nodes)} ops, cost {cost(d, ops)}")
    g, trace = greedy_rewrite(d, rules, ops)
    print(f"greedy: cost {cost(g, ops)} after {len(trace)} step(s)")
    for i, name in enumerate(trace, 1):
        print(f"  {i:3d}. {name}")
    try:
        e, rep = eqsat_rewrite(d, rules, ops, lim)
    except ExtractionError as ex:
        print(f"eqsat: extraction failed: {ex}")
        return EXIT_FAIL if args.strict else EXIT_OK
    print(f"eqsat: cost {cost(e, ops)}; stop={rep.stop_reason} iterations={rep.iterations_run} "
          f"classes={rep.class_count} nodes={rep.final_node_count} tree_cost={rep.tree_cost} "
          f"dag_cost={rep.dag_cost} exact={rep.extraction_exact}")
    for name, n in sorted(rep.rule_application_counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if n:
            print(f"  {n:5d}  {name}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flexc", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    for name, fn, hlp in (("rewrite", cmd_rewrite, "rewrite a kernel for a target"),
                          ("compile", cmd_compile, "rewrite then map a kernel")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--dfg", required=True)
        _add_target(p)
        _add_rewrite_opts(p)
        p.add_argument("--out", help="write the rewritten graph here instead of stdout")
        p.add_argument("--dump-egraph", help="write a text dump of the saturated e-graph")
        p.add_argument("--map", action="store_true", help="map after rewriting")
        p.add_argument("--mapping-out", help="write the mapping here instead of stdout")
        p.add_argument("--map-steps", type=int, default=20_000)
        p.add_argument("--strict", action="store_true", help="exit 1 when the kernel fails")
        p.set_defaults(func=fn)

    p = sub.add_parser("bench", help="run a corpus against architecture profiles")
    p.add_argument("--corpus", help="directory of .dfg files (default: bundled corpus)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--arch", help="architecture JSON file")
    g.add_argument("--arch-builtin", help="comma-separated bundled profiles (default: all)")
    p.add_argument("--strategies", default="none,greedy,hybrid")
    p.add_argument("--rulesets", help="override the per-architecture default rulesets")
    p.add_argument("--iter-limit", type=int, default=10)
    p.add_argument("--node-limit", type=int, default=100_000)
    p.add_argument("--timeout", type=float, default=300.0)
    p.add_argument("--jobs", type=int, default=None, help="worker processes (capped by FLEXC_THREADS)")
    p.add_argument("--no-map", action="store_true")
    p.add_argument("--map-steps", type=int, default=20_000)
    p.add_argument("--out", default="bench-out")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ceiling", help="support fractions and ceiling estimates over a program space")
    p.add_argument("--grammar", required=True, help='JSON {"ops": [...], "inputs": [...], "constants": [...]}')
    p.add_argument("--max-ops", type=int, default=2)
    p.add_argument("--mode", choices=("enumerate", "sample"), default="enumerate")
    p.add_argument("--samples", type=int, default=40, help="programs per size in sample mode")
    p.add_argument("--seed", type=int, default=0)
    _add_target(p)
    p.add_argument("--rulesets")
    p.add_argument("--rules-file")
    p.add_argument("--strategies", default="none,greedy,hybrid")
    p.add_argument("--mapper", choices=("none", "heuristic", "optimal"), default="none")
    p.add_argument("--depth", type=int, default=5)
    p.add_argument("--iter-limit", type=int, default=10)
    p.add_argument("--node-limit", type=int, default=100_000)
    p.add_argument("--timeout", type=float, default=300.0)
    p.set_defaults(func=cmd_ceiling)

    p = sub.add_parser("explain", help="show the greedy rule trace and e-graph statistics")
    p.add_argument("--dfg", required=True)
    _add_target(p)
    _add_rewrite_opts(p)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_explain)
    return ap


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # argparse exits on usage errors and --help
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as e:
        print(f"flexc: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Corpus runner: rewrite and map every kernel of a directory, then tabulate the outcomes."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from collections import Counter
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .arch import CgraSpec, supported_ops
from .dfg import UNSUPPORTED_COST, DfgError, cost, parse_dfg
from .egraph import ExtractionError, SaturationLimits
from .hybrid import rewrite
from .mapper import MappingError, UnsupportedOpError, compile
from .rules import resolve_rulesets

OUTCOMES = ("supported_natively", "rewritten_greedy", "rewritten_eqsat", "failed_rewrite",
            "failed_mapping", "timeout", "failed_parse")
SUCCESS = frozenset({"supported_natively", "rewritten_greedy", "rewritten_eqsat"})
TIME_BUCKETS = (0.01, 0.1, 1.0, 10.0, 100.0, 300.0, math.inf)


def default_rulesets(arch: str) -> tuple[str, ...]:
    """Integer and floating-point rules everywhere; stochastic rules only where the hardware has them."""
    return ("int", "fp", "stochastic") if arch == "sc_cgra" else ("int", "fp")


def bundled_corpus() -> Path:
    return Path(str(resources.files("flexc").joinpath("corpus")))


@dataclass
class KernelResult:
    kernel: str
    strategy: str
    arch: str
    outcome: str
    cost_before: int = 0
    cost_after: int = 0
    ii: int | None = None
    wall_time: float = 0.0
    rules_applied: dict[str, int] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    error: str = ""

    @property
    def succeeded(self) -> bool:
        return self.outcome in SUCCESS


@dataclass(frozen=True)
class _Job:
    path: str
    spec: CgraSpec
    strategy: str
    rulesets: tuple[str, ...]
    limits: SaturationLimits
    map: bool
    map_steps: int


def run_kernel(path: str | Path, spec: CgraSpec, strategy: str = "hybrid", rulesets: Sequence[str] | None = None,
               limits: SaturationLimits = SaturationLimits(), map: bool = True, map_steps: int = 20_000) -> KernelResult:
    rulesets = tuple(rulesets) if rulesets else default_rulesets(spec.name)
    return _run(_Job(str(path), spec, strategy, rulesets, limits, map, map_steps))


def _run(job: _Job) -> KernelResult:
    name = Path(job.path).name
    res = KernelResult(name, job.strategy, job.spec.name, "failed_parse")
    t0 = time.monotonic()
    try:
        d = parse_dfg(Path(job.path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, DfgError) as e:
        res.error = str(e)
        res.wall_time = time.monotonic() - t0
        return res
    ops = supported_ops(job.spec)
    rules = resolve_rulesets(job.rulesets)
    res.cost_before = res.cost_after = cost(d, ops)
    try:
        rw = rewrite(d, rules, ops, job.strategy, job.limits)
    except ExtractionError as e:
        res.outcome, res.error = "failed_rewrite", str(e)
        res.wall_time = time.monotonic() - t0
        return res
    res.cost_after = rw.cost_after
    res.rules_applied = rw.rules_applied()
    res.timings = {"greedy": rw.greedy_time, "saturation": rw.saturation_time, "extraction": rw.extraction_time}
    if res.cost_before < UNSUPPORTED_COST:
        res.outcome = "supported_natively"
    elif rw.cost_after >= UNSUPPORTED_COST:
        timed_out = rw.report is not None and rw.report.stop_reason == "timeout"
        res.outcome = "timeout" if timed_out else "failed_rewrite"
    else:
        res.outcome = "rewritten_greedy" if rw.strategy_used == "greedy" else "rewritten_eqsat"
    if job.map and res.outcome in SUCCESS:
        t1 = time.monotonic()
        try:
            m = compile(rw.dfg, job.spec, max_steps=job.map_steps)
            res.ii = m.ii
        except (MappingError, UnsupportedOpError) as e:
            res.outcome, res.error = "failed_mapping", str(e)
        res.timings["mapping"] = time.monotonic() - t1
    res.wall_time = time.monotonic() - t0
    return res


def _workers(parallelism: int | None) -> int:
    cap = os.environ.get("FLEXC_THREADS")
    n = parallelism or os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, n)


def run_corpus(directory: str | Path, spec: CgraSpec, strategy: str = "hybrid",
               rulesets: Sequence[str] | None = None, limits: SaturationLimits = SaturationLimits(),
               parallelism: int | None = None, map: bool = True, map_steps: int = 20_000) -> list[KernelResult]:
    """Run every ``*.dfg`` file under ``directory``; results come back sorted by kernel name."""
    paths = sorted(Path(directory).glob("*.dfg"))
    if not paths:
        raise FileNotFoundError(f"no .dfg files in {directory}")
    rulesets = tuple(rulesets) if rulesets else default_rulesets(spec.name)
    jobs = [_Job(str(p), spec, strategy, rulesets, limits, map, map_steps) for p in paths]
    workers = min(_workers(parallelism), len(jobs))
    if workers == 1:
        results = [_run(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run, jobs))
    return sorted(results, key=lambda r: (r.kernel, r.arch, r.strategy))


# ---------------------------------------------------------------------------
# reporting


@dataclass
class Report:
    rates: list[dict]  # arch, strategy, kernels, succeeded, rate
    top_rules: dict[str, list[tuple[str, int]]]  # arch -> most applied rules
    rule_totals: dict[str, dict[str, int]]
    time_histogram: dict[str, list[int]]  # "arch/strategy" -> counts per TIME_BUCKETS bucket
    ratios: dict[str, float]  # e.g. "cca hybrid/none"
    results: list[KernelResult]


def summarize(results: Sequence[KernelResult], top_k: int = 4) -> Report:
    if not results:
        raise ValueError("no results to summarize")
    groups: dict[tuple[str, str], list[KernelResult]] = {}
    for r in results:
        groups.setdefault((r.arch, r.strategy), []).append(r)
    rates = []
    for (arch, strat), rs in sorted(groups.items()):
        ok = sum(r.succeeded for r in rs)
        rates.append({"arch": arch, "strategy": strat, "kernels": len(rs), "succeeded": ok, "rate": ok / len(rs)})
    totals: dict[str, Counter] = {}
    for r in results:
        totals.setdefault(r.arch, Counter()).update(r.rules_applied)
    top = {a: sorted(c.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k] for a, c in sorted(totals.items())}
    hist: dict[str, list[int]] = {}
    for (arch, strat), rs in sorted(groups.items()):
        counts = [0] * len(TIME_BUCKETS)
        for r in rs:
            counts[next(i for i, b in enumerate(TIME_BUCKETS) if r.wall_time <= b)] += 1
        hist[f"{arch}/{strat}"] = counts
    succ = {(row["arch"], row["strategy"]): row["succeeded"] for row in rates}
    ratios: dict[str, float] = {}
    for better in ("greedy", "eqsat", "hybrid"):
        num = den = 0
        for arch in sorted({a for a, _ in succ}):
            if (arch, better) in succ and (arch, "none") in succ:
                b, n = succ[(arch, better)], succ[(arch, "none")]
                num, den = num + b, den + n
                ratios[f"{arch} {better}/none"] = b / n if n else math.inf
        if den:
            ratios[f"all {better}/none"] = num / den
    return Report(rates, top, {a: dict(sorted(c.items())) for a, c in sorted(totals.items())}, hist, ratios,
                  sorted(results, key=lambda r: (r.arch, r.strategy, r.kernel)))


def _csv(rows: Iterable[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def summary_csv(rep: Report) -> str:
    return _csv(([r["arch"], r["strategy"], r["kernels"], r["succeeded"], f"{r['rate']:.4f}"] for r in rep.rates),
                ["arch", "strategy", "kernels", "succeeded", "rate"])


def kernels_csv(rep: Report) -> str:
    rows = []
    for r in rep.results:
        rules = ";".join(f"{k}={v}" for k, v in sorted(r.rules_applied.items()))
        rows.append([r.arch, r.strategy, r.kernel, r.outcome, r.cost_before, r.cost_after,
                     "" if r.ii is None else r.ii, rules])
    return _csv(rows, ["arch", "strategy", "kernel", "outcome", "cost_before", "cost_after", "ii", "rules_applied"])


def timings_csv(rep: Report) -> str:
    rows = []
    for r in rep.results:
        t = r.timings
        rows.append([r.arch, r.strategy, r.kernel, f"{r.wall_time:.6f}"] +
                    [f"{t.get(k, 0.0):.6f}" for k in ("greedy", "saturation", "extraction", "mapping")])
    return _csv(rows, ["arch", "strategy", "kernel", "wall_time", "greedy_time", "saturation_time",
                       "extraction_time", "mapping_time"])


def markdown(rep: Report) -> str:
    lines = ["| arch | strategy | kernels | succeeded | rate |", "|---|---|---|---|---|"]
    lines += [f"| {r['arch']} | {r['strategy']} | {r['kernels']} | {r['succeeded']} | {r['rate']:.2f} |" for r in rep.rates]
    lines += ["", "| rank | " + " | ".join(rep.top_rules) + " |", "|---|" + "---|" * len(rep.top_rules)]
    depth = max((len(v) for v in rep.top_rules.values()), default=0)
    for i in range(depth):
        cells = []
        for arch in rep.top_rules:
            rs = rep.top_rules[arch]
            cells.append(f"`{rs[i][0]}` ({rs[i][1]})" if i < len(rs) else "")
        lines.append(f"| {i + 1} | " + " | ".join(cells) + " |")
    if rep.ratios:
        lines += ["", "| ratio | value |", "|---|---|"]
        lines += [f"| {k} | {v:.2f} |" for k, v in rep.ratios.items()]
    return "\n".join(lines) + "\n"


def plot_data(rep: Report) -> dict:
    rate_series = [{"x": f"{r['arch']}/{r['strategy']}", "y": r["rate"]} for r in rep.rates]
    cdf: dict[str, list[list[float]]] = {}
    groups: dict[str, list[float]] = {}
    for r in rep.results:
        groups.setdefault(f"{r.arch}/{r.strategy}", []).append(r.wall_time)
    for key, ts in sorted(groups.items()):
        ts = sorted(ts)
        cdf[key] = [[t, (i + 1) / len(ts)] for i, t in enumerate(ts)]
    return {"compilation_rate": rate_series, "time_cdf": cdf,
            "time_histogram": {"buckets": [b if b != math.inf else "inf" for b in TIME_BUCKETS],
                               "counts": rep.time_histogram}}


def emit(rep: Report, outdir: str | Path, formats: Iterable[str] = ("csv", "markdown", "plot-data")) -> list[Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for fmt in formats:
        if fmt == "csv":
            for name, text in (("summary.csv", summary_csv(rep)), ("kernels.csv", kernels_csv(rep)),
                               ("timings.csv", timings_csv(rep))):
                (out / name).write_text(text, encoding="utf-8")
                written.append(out / name)
        elif fmt == "markdown":
            (out / "report.md").write_text(markdown(rep), encoding="utf-8")
            written.append(out / "report.md")
        elif fmt == "plot-data":
            (out / "plot_data.json").write_text(json.dumps(plot_data(rep), indent=1) + "\n", encoding="utf-8")
            written.append(out / "plot_data.json")
        else:
            raise ValueError(f"unknown format {fmt!r}")
    return written


def result_to_dict(r: KernelResult) -> dict:
    return asdict(r)

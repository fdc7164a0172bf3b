"""Rewrite rules: patterns, the built-in rulesets, matching and destructive application on graphs."""
from __future__ import annotations

import itertools
import math
import random
import re
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field

from .dfg import (
    PSEUDO_OPS, Dfg, DfgBuilder, EvaluationError, Node, interpret, topo_order, wrap32,
)
from .expr import ExprSyntaxError, Term, Var, parse_exprs, render

__all__ = [
    "Pattern", "RewriteRule", "Match", "RuleSyntaxError", "StaleMatchError", "parse_rule",
    "parse_ruleset_text", "builtin_ruleset", "resolve_rulesets", "find_matches", "apply_match",
    "equivalence_check", "RULESETS", "DEFAULT_RULESETS", "DISABLED_RULES",
]

SEMANTICS = ("exact", "fp-relaxed", "boolean-domain", "stochastic")
_SECTION_SEMANTICS = {"int": "exact", "fp": "fp-relaxed", "bool": "boolean-domain", "stochastic": "stochastic"}


class RuleSyntaxError(ValueError):
    pass


class StaleMatchError(ValueError):
    pass


@dataclass(frozen=True)
class Pattern:
    outputs: tuple[Term | Var, ...]

    def vars(self) -> set[str]:
        out: set[str] = set()

        def walk(t):
            if isinstance(t, Var):
                out.add(t.name)
            else:
                for c in t.children:
                    walk(c)

        for t in self.outputs:
            walk(t)
        return out

    def __str__(self) -> str:
        return ", ".join(render(t) for t in self.outputs)


@dataclass(frozen=True)
class RewriteRule:
    name: str
    lhs: Pattern
    rhs: Pattern
    ruleset: str = "int"
    semantics: str = "exact"
    # var -> constraints checked by the equivalence tester, never by the matcher
    domain: tuple[tuple[str, tuple], ...] = ()
    enabled: bool = True

    def __str__(self) -> str:
        return f"{self.lhs} => {self.rhs}"

    def constraints(self, var: str) -> list[tuple]:
        return [c for v, c in self.domain if v == var]


@dataclass(frozen=True)
class Match:
    matched_outputs: tuple[str, ...]
    substitution: dict[str, str] = field(hash=False)


# ---------------------------------------------------------------------------
# parsing

_NAME_PREFIX = re.compile(r"^\s*([A-Za-z][\w.-]*)\s*:\s*(?=\S)")
_DOMAIN_ITEM = re.compile(
    r"^\?(?P<var>[A-Za-z_]\w*)\s*(?:(?P<cmp>>=|!=)\s*0|in\s+(?P<lo>-?\d+)\s*\.\.\s*(?P<hi>-?\d+)|(?P<kw>bool|finite))$"
)


def _check_pattern(t, where: str) -> None:
    if isinstance(t, Var):
        return
    if t.op == "input":
        raise RuleSyntaxError(f"bare name {t.literal!r} in {where}; pattern variables need a '?' prefix")
    for c in t.children:
        _check_pattern(c, where)


def _parse_domain(text: str) -> tuple[tuple[str, tuple], ...]:
    items = []
    for part in text.split(","):
        part = part.strip()
        m = _DOMAIN_ITEM.match(part)
        if not m:
            raise RuleSyntaxError(f"bad domain constraint {part!r}")
        var = m["var"]
        if m["cmp"] == ">=":
            items.append((var, ("nonneg",)))
        elif m["cmp"] == "!=":
            items.append((var, ("nonzero",)))
        elif m["kw"]:
            items.append((var, (m["kw"],)))
        else:
            items.append((var, ("range", int(m["lo"]), int(m["hi"]))))
    return tuple(items)


def parse_rule(text: str, ruleset: str = "int", semantics: str | None = None) -> list[RewriteRule]:
    """Parse ``[name:] lhs => rhs`` or ``lhs <=> rhs`` with an optional ``where`` clause.

    A bidirectional rule yields the forward and the reverse oriented rule.
    """
    semantics = semantics or _SECTION_SEMANTICS.get(ruleset, "exact")
    if semantics not in SEMANTICS:
        raise RuleSyntaxError(f"unknown semantics class {semantics!r}")
    body = text.split("#", 1)[0].strip()
    name = None
    m = _NAME_PREFIX.match(body)
    if m:
        name = m.group(1)
        body = body[m.end():]
    domain: tuple = ()
    if " where " in body:
        body, dom = body.split(" where ", 1)
        domain = _parse_domain(dom)
    if "<=>" in body:
        arrow, bidir = "<=>", True
    elif "=>" in body:
        arrow, bidir = "=>", False
    else:
        raise RuleSyntaxError(f"no '=>' or '<=>' in {text!r}")
    lhs_txt, _, rhs_txt = body.partition(arrow)
    if "=>" in rhs_txt:
        raise RuleSyntaxError(f"more than one arrow in {text!r}")
    try:
        lhs = Pattern(tuple(parse_exprs(lhs_txt)))
        rhs = Pattern(tuple(parse_exprs(rhs_txt)))
    except ExprSyntaxError as e:
        raise RuleSyntaxError(f"{text!r}: {e}") from None
    for t in lhs.outputs:
        _check_pattern(t, "lhs")
    for t in rhs.outputs:
        _check_pattern(t, "rhs")
    if len(lhs.outputs) != len(rhs.outputs):
        raise RuleSyntaxError(f"{text!r}: lhs and rhs have different output counts")
    unknown = {v for v, _ in domain} - lhs.vars()
    if unknown:
        raise RuleSyntaxError(f"{text!r}: domain mentions unbound {sorted(unknown)}")

    def make(a: Pattern, b: Pattern, nm: str | None) -> RewriteRule:
        missing = b.vars() - a.vars()
        if missing:
            raise RuleSyntaxError(f"{a} => {b}: rhs variable(s) {sorted(missing)} not bound by lhs")
        return RewriteRule(nm or f"{a} => {b}", a, b, ruleset, semantics, domain)

    rules = [make(lhs, rhs, name)]
    if bidir:
        rules.append(make(rhs, lhs, f"{name}-rev" if name else None))
    return rules


def parse_ruleset_text(text: str, default: str = "custom") -> dict[str, list[RewriteRule]]:
    """Parse a ruleset file: ``[ruleset:NAME]`` section headers followed by one rule per line."""
    out: dict[str, list[RewriteRule]] = {}
    section, semantics = default, None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            m = re.fullmatch(r"\[ruleset:([\w-]+)(?:\s+semantics=([\w-]+))?\]", line)
            if not m:
                raise RuleSyntaxError(f"line {lineno}: bad section header {line!r}")
            section, semantics = m.group(1), m.group(2)
            out.setdefault(section, [])
            continue
        try:
            out.setdefault(section, []).extend(parse_rule(line, section, semantics))
        except RuleSyntaxError as e:
            raise RuleSyntaxError(f"line {lineno}: {e}") from None
    return out


BUILTIN_RULES = """
[ruleset:int]
?x - ?y <=> ?x + -?y
?x >> ?y <=> ?x / (1 << ?y)            where ?x >= 0, ?y in 0..31
?x & ?y <=> ~(~?x | ~?y)
?x * -1 <=> -?x
-?x <=> (?x ^ -1) + 1
?x * 2 <=> ?x << 1
?x * 4 <=> ?x << 2
?x * 8 <=> ?x << 3
?x * 1 => ?x
?x / 2 <=> ?x >> 1                     where ?x >= 0
?x / 4 <=> ?x >> 2                     where ?x >= 0
?x / 8 <=> ?x >> 3                     where ?x >= 0
?x + ?y => ?y + ?x
?x * ?y => ?y * ?x
?x & ?y => ?y & ?x
?x | ?y => ?y | ?x
?x ^ ?y => ?y ^ ?x
# Shipped disabled (see DISABLED_RULES):
#   -x (floating point) => x + 2^32 (integer)
#   x << y => mul(x, load(csel(y > 32, 33, y)))

[ruleset:fp]
fmul(?x, ?y) <=> fdiv(?x, fdiv(1.0, ?y))   where ?y != 0
fmul(-1.0, ?x) <=> fneg(?x)
fsub(?x, ?y) <=> fadd(?x, fneg(?y))
fadd(?x, ?y) => fadd(?y, ?x)
fmul(?x, ?y) => fmul(?y, ?x)

[ruleset:bool]
?x and ?y => ?x * ?y
?x or ?y => (?x + ?y) > 0
?x xor ?y => ?x != ?y

[ruleset:stochastic]
?x * ?y => ?x and ?y
?x * ?y => isc_mul(?x, ?y)
"""

# Rules seen in rule-frequency listings whose intended semantics cannot be pinned down.
DISABLED_RULES = (
    ("-x (floating point) => x + 2^32 (integer)",
     "bit manipulation is ambiguous as written; a sign flip would be xor with 2^31"),
    ("x << y => mul(x, load(csel(y > 32, 33, y)))",
     "needs a power-of-two table in memory whose initialisation is unspecified"),
)

RULESETS: dict[str, list[RewriteRule]] = parse_ruleset_text(BUILTIN_RULES)
DEFAULT_RULESETS = ("int", "fp")


def builtin_ruleset(name: str) -> list[RewriteRule]:
    try:
        return list(RULESETS[name])
    except KeyError:
        raise ValueError(f"unknown ruleset {name!r}; expected one of {sorted(RULESETS)}") from None


def resolve_rulesets(names: str | Sequence[str] = DEFAULT_RULESETS, extra_file: str | None = None) -> list[RewriteRule]:
    """Concatenate named rulesets (built-in, or sections of ``extra_file``) in the given order."""
    if isinstance(names, str):
        names = [n.strip() for n in names.split(",") if n.strip()]
    extra = {}
    if extra_file:
        with open(extra_file, encoding="utf-8") as f:
            extra = parse_ruleset_text(f.read())
    rules: list[RewriteRule] = []
    for n in names:
        rules.extend(extra[n] if n in extra else builtin_ruleset(n))
    for n, rs in extra.items():
        if n not in names:
            rules.extend(rs)
    return rules


# ---------------------------------------------------------------------------
# matching on concrete graphs


def _lit_eq(a, b) -> bool:
    return type(a) is type(b) and a == b or (isinstance(a, float) and isinstance(b, float) and a == b)


def _match(d: Dfg, pat, nid: str, subst: dict[str, str]) -> Iterator[dict[str, str]]:
    if isinstance(pat, Var):
        bound = subst.get(pat.name)
        if bound is None:
            yield {**subst, pat.name: nid}
        elif bound == nid:
            yield subst
        return
    node = d.node(nid)
    if node.op != pat.op:
        return
    if pat.op in PSEUDO_OPS:
        if _lit_eq(node.literal, pat.literal):
            yield subst
        return
    if any(d.distance(o, nid) for o in node.operands):
        return

    def rec(i: int, s: dict[str, str]):
        if i == len(pat.children):
            yield s
            return
        for s2 in _match(d, pat.children[i], node.operands[i], s):
            yield from rec(i + 1, s2)

    yield from rec(0, subst)


def find_matches(d: Dfg, rule: RewriteRule) -> list[Match]:
    """All occurrences of the rule's left-hand side, ordered by root position then substitution."""
    if not rule.enabled:
        return []
    ids = [n.id for n in d.nodes]
    out: list[Match] = []

    def rec(i: int, roots: tuple[str, ...], s: dict[str, str]):
        if i == len(rule.lhs.outputs):
            out.append(Match(roots, s))
            return
        for nid in ids:
            for s2 in _match(d, rule.lhs.outputs[i], nid, s):
                rec(i + 1, roots + (nid,), s2)

    rec(0, (), {})
    return out


def _fresh_ids(d: Dfg) -> Iterator[str]:
    hi = -1
    for n in d.nodes:
        m = re.fullmatch(r"n(\d+)", n.id)
        if m:
            hi = max(hi, int(m.group(1)))
    return (f"n{i}" for i in itertools.count(hi + 1))


def _node_key(op: str, operands: tuple[str, ...], literal) -> tuple:
    return (op, operands, ("f", literal.hex()) if isinstance(literal, float) else literal)


def apply_match(d: Dfg, m: Match, rule: RewriteRule) -> Dfg:
    """Replace the matched outputs by the instantiated right-hand side and drop dead nodes."""
    sigma = m.substitution
    if len(m.matched_outputs) != len(rule.lhs.outputs):
        raise StaleMatchError("match does not fit this rule")
    for root, pat in zip(m.matched_outputs, rule.lhs.outputs):
        if root not in d or any(v not in d for v in sigma.values()):
            raise StaleMatchError(f"node {root} no longer present")
        if not any(s == sigma for s in _match(d, pat, root, dict(sigma))):
            raise StaleMatchError(f"pattern no longer matches at {root}")

    existing = {_node_key(n.op, n.operands, n.literal): n.id for n in d.nodes
                if not any(d.distance(o, n.id) for o in n.operands)}
    fresh = _fresh_ids(d)
    new_nodes: list[Node] = []

    def inst(t) -> str:
        if isinstance(t, Var):
            return sigma[t.name]
        operands = tuple(inst(c) for c in t.children)
        key = _node_key(t.op, operands, t.literal)
        nid = existing.get(key)
        if nid is None:
            nid = next(fresh)
            new_nodes.append(Node(nid, t.op, operands, t.literal))
            existing[key] = nid
        return nid

    new_roots = [inst(t) for t in rule.rhs.outputs]
    rep = {old: new for old, new in zip(m.matched_outputs, new_roots) if old != new}
    if not rep:
        return _gc(Dfg(d.nodes + tuple(new_nodes), d.outputs, d.distances))

    by_id = {n.id: n for n in d.nodes}
    by_id.update((n.id, n) for n in new_nodes)
    protected: set[str] = set()
    stack = list(new_roots)
    while stack:
        nid = stack.pop()
        if nid in protected:
            continue
        protected.add(nid)
        stack.extend(by_id[nid].operands)

    nodes = []
    for n in d.nodes + tuple(new_nodes):
        if n.id in protected:
            nodes.append(n)
        else:
            nodes.append(Node(n.id, n.op, tuple(rep.get(o, o) for o in n.operands), n.literal))
    dists = {}
    for (src, dst), k in d.distances.items():
        if dst not in protected:
            src = rep.get(src, src)
        dists[(src, dst)] = k
    outputs = tuple(rep.get(o, o) for o in d.outputs)
    return _gc(Dfg(tuple(nodes), outputs, dists))


def _gc(d: Dfg) -> Dfg:
    by_id = {n.id: n for n in d.nodes}
    live: set[str] = set()
    stack = list(d.outputs)
    while stack:
        nid = stack.pop()
        if nid not in live:
            live.add(nid)
            stack.extend(by_id[nid].operands)
    kept = Dfg(tuple(n for n in d.nodes if n.id in live), d.outputs,
               {e: k for e, k in d.distances.items() if e[1] in live and k})
    return Dfg(tuple(topo_order(kept)), kept.outputs, kept.distances)


# ---------------------------------------------------------------------------
# semantics checking

_INT_EDGES = (0, 1, -1, 2, 0x7FFFFFFF, -0x80000000)


def _sample_int(rng: random.Random, cons: list[tuple]) -> int:
    lo, hi = -(2**31), 2**31 - 1
    for c in cons:
        if c[0] == "nonneg":
            lo = max(lo, 0)
        elif c[0] == "range":
            lo, hi = max(lo, c[1]), min(hi, c[2])
        elif c[0] == "bool":
            lo, hi = max(lo, 0), min(hi, 1)
    nonzero = any(c[0] == "nonzero" for c in cons)
    while True:
        if rng.random() < 0.15:
            v = rng.choice(_INT_EDGES)
            if not lo <= v <= hi:
                continue
        elif rng.random() < 0.3 and hi - lo > 64:
            v = rng.randint(max(lo, -64), min(hi, 64))
        else:
            v = rng.randint(lo, hi)
        if not (nonzero and v == 0):
            return v


def _sample_float(rng: random.Random, cons: list[tuple]) -> float:
    nonzero = any(c[0] == "nonzero" for c in cons)
    while True:
        v = math.copysign(10 ** rng.uniform(-30, 30), rng.choice((-1.0, 1.0)))
        if not (nonzero and abs(v) < 1e-12):
            return v


def _pattern_dfg(p: Pattern, names: dict[str, str]) -> Dfg:
    b = DfgBuilder()

    def go(t) -> str:
        if isinstance(t, Var):
            return b.input(names[t.name])
        if t.op == "const":
            return b.const(t.literal)
        if t.op == "fconst":
            return b.fconst(t.literal)
        return b.add(t.op, *(go(c) for c in t.children))

    outs = [go(t) for t in p.outputs]
    return b.build(*outs)


def _uses_float(p: Pattern) -> bool:
    def walk(t) -> bool:
        if isinstance(t, Var):
            return False
        return t.op.startswith("f") or any(walk(c) for c in t.children)

    return any(walk(t) for t in p.outputs)


def equivalence_check(rule: RewriteRule, samples: int = 1000, seed: int = 0, rel_tol: float = 1e-6) -> list[dict]:
    """Compare both sides of a rule with the interpreter; returns the counterexamples found.

    exact: bit-exact on ``samples`` valid integer inputs; fp-relaxed: relative error
    within ``rel_tol`` on finite normal doubles; boolean-domain: every 0/1 assignment.
    Stochastic rules are approximations by design and always return [].
    """
    if rule.semantics == "stochastic":
        return []
    names = {v: f"v_{v}" for v in sorted(rule.lhs.vars())}
    left, right = _pattern_dfg(rule.lhs, names), _pattern_dfg(rule.rhs, names)
    rng = random.Random(seed)
    if rule.semantics == "boolean-domain":
        envs = [dict(zip(names.values(), bits)) for bits in itertools.product((0, 1), repeat=len(names))]
    else:
        floats = rule.semantics == "fp-relaxed" and _uses_float(rule.lhs)
        envs = []
        for _ in range(samples):
            if floats:
                envs.append({names[v]: _sample_float(rng, rule.constraints(v)) for v in names})
            else:
                envs.append({names[v]: _sample_int(rng, rule.constraints(v)) for v in names})
    bad = []
    for env in envs:
        try:
            want = list(interpret(left, env).values())
        except EvaluationError:
            continue
        try:
            got = list(interpret(right, env).values())
        except EvaluationError as e:
            bad.append({"env": env, "error": repr(e)})
            continue
        for a, b in zip(want, got):
            if rule.semantics == "fp-relaxed" and (isinstance(a, float) or isinstance(b, float)):
                ok = a == b or abs(a - b) <= rel_tol * max(abs(a), abs(b))
            else:
                ok = a == b and type(a) is type(b)
            if not ok:
                bad.append({"env": env, "lhs": a, "rhs": b})
                break
    return bad


def rename_vars(t, f) -> Term | Var:
    if isinstance(t, Var):
        return Var(f(t.name))
    return Term(t.op, tuple(rename_vars(c, f) for c in t.children), t.literal)


def int_literal(v: int) -> Term:
    return Term("const", (), wrap32(v))

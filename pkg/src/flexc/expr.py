"""Infix expression syntax shared by rewrite rules and quick DFG construction.

Grammar (C-like precedence, lowest first)::

    |  or        ^  xor       &  and
    == !=        < > <= >=    << >>
    + -          * /          unary - ~ not
    f(a, b, ...) for any operation name, ?name variables, integer and float literals

A unary minus applied directly to a numeric literal folds into a negative literal.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .dfg import OPS, Dfg, DfgBuilder, wrap32


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Term:
    op: str
    children: tuple = ()
    literal: int | float | str | None = None

    def __str__(self) -> str:
        return render(self)


class ExprSyntaxError(ValueError):
    pass


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+|0[xX][0-9a-fA-F]+|\d+)"
    r"|(?P<var>\?[A-Za-z_]\w*)|(?P<name>[A-Za-z_]\w*)"
    r"|(?P<op><<|>>|==|!=|<=|>=|[-+*/&|^~<>(),]))"
)

_BINARY = {
    "|": (1, "or"), "or": (1, "or"),
    "^": (2, "xor"), "xor": (2, "xor"),
    "&": (3, "and"), "and": (3, "and"),
    "==": (4, "eq"), "!=": (4, "ne"),
    "<": (5, "lt"), ">": (5, "gt"), "<=": (5, "le"), ">=": (5, "ge"),
    "<<": (6, "shl"), ">>": (6, "shr"),
    "+": (7, "add"), "-": (7, "sub"),
    "*": (8, "mul"), "/": (8, "div"),
}
_UNARY = {"-": "neg", "~": "not", "not": "not"}
_WORDS = {"and", "or", "xor", "not"}


def tokenize(text: str) -> list[tuple[str, str]]:
    toks = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
        pos = m.end()
        kind = m.lastgroup
        val = m.group(kind)
        if kind == "name" and val.lower() in _WORDS:
            kind, val = "op", val.lower()
        toks.append((kind, val))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, val: str | None = None):
        tok = self.peek()
        if tok[0] is None or (val is not None and tok[1] != val):
            raise ExprSyntaxError(f"expected {val or 'token'}, got {tok[1]!r}")
        self.i += 1
        return tok

    def parse_list(self) -> list:
        items = [self.expr(0)]
        while self.peek()[1] == ",":
            self.take(",")
            items.append(self.expr(0))
        if self.peek()[0] is not None:
            raise ExprSyntaxError(f"trailing input at {self.peek()[1]!r}")
        return items

    def expr(self, min_prec: int):
        lhs = self.unary()
        while True:
            kind, val = self.peek()
            if kind != "op" or val not in _BINARY:
                return lhs
            prec, op = _BINARY[val]
            if prec <= min_prec:
                return lhs
            self.take()
            rhs = self.expr(prec)
            lhs = Term(op, (lhs, rhs))

    def unary(self):
        kind, val = self.peek()
        if kind == "op" and val in _UNARY:
            self.take()
            inner = self.unary()
            if val == "-" and isinstance(inner, Term) and inner.op in ("const", "fconst") and _from_literal_token(inner):
                lit = -inner.literal  # type: ignore[operator]
                return Term(inner.op, (), wrap32(lit) if inner.op == "const" else lit)
            return Term(_UNARY[val], (inner,))
        return self.atom()

    def atom(self):
        kind, val = self.take()
        if kind == "num":
            if re.fullmatch(r"0[xX][0-9a-fA-F]+|\d+", val):
                return _Lit("const", (), wrap32(int(val, 0)))
            return _Lit("fconst", (), float(val))
        if kind == "var":
            return Var(val[1:])
        if kind == "name":
            if self.peek()[1] == "(":
                if val not in OPS:
                    raise ExprSyntaxError(f"unknown operation {val!r}")
                self.take("(")
                args = [] if self.peek()[1] == ")" else [self.expr(0)]
                while self.peek()[1] == ",":
                    self.take(",")
                    args.append(self.expr(0))
                self.take(")")
                if len(args) != OPS[val].arity:
                    raise ExprSyntaxError(f"{val} expects {OPS[val].arity} arguments, got {len(args)}")
                return Term(val, tuple(args))
            return Term("input", (), val)
        if val == "(":
            inner = self.expr(0)
            self.take(")")
            return inner
        raise ExprSyntaxError(f"unexpected {val!r}")


class _Lit(Term):
    """Literal straight from a numeric token (eligible for unary-minus folding)."""


def _from_literal_token(t: Term) -> bool:
    return type(t) is _Lit


def _plain(t):
    if isinstance(t, Var):
        return t
    return Term(t.op, tuple(_plain(c) for c in t.children), t.literal)


def parse_exprs(text: str) -> list[Term | Var]:
    """Parse a comma-separated list of expressions."""
    return [_plain(t) for t in _Parser(text).parse_list()]


def parse_expr(text: str) -> Term | Var:
    items = parse_exprs(text)
    if len(items) != 1:
        raise ExprSyntaxError("expected a single expression")
    return items[0]


# ---------------------------------------------------------------------------
# rendering

_SYMBOL = {op: (prec, sym) for sym, (prec, op) in _BINARY.items() if not sym.isalpha()}
_UNARY_SYMBOL = {"neg": "-", "not": "~"}


def render(t: Term | Var, prec: int = 0) -> str:
    if isinstance(t, Var):
        return t.name
    if t.op == "input":
        return str(t.literal)
    if t.op == "const":
        return str(t.literal)
    if t.op == "fconst":
        return repr(float(t.literal))  # type: ignore[arg-type]
    if t.op in _SYMBOL and len(t.children) == 2:
        p, sym = _SYMBOL[t.op]
        s = f"{render(t.children[0], p - 1)} {sym} {render(t.children[1], p)}"
        return f"({s})" if p <= prec else s
    if t.op in _UNARY_SYMBOL:
        inner = render(t.children[0], 8)
        return _UNARY_SYMBOL[t.op] + (f"({inner})" if inner.startswith("-") else inner)
    return f"{t.op}({', '.join(render(c) for c in t.children)})"


# ---------------------------------------------------------------------------
# expressions as graphs


def term_into(b: DfgBuilder, t: Term) -> str:
    if isinstance(t, Var):
        raise ExprSyntaxError(f"pattern variable ?{t.name} in a concrete expression")
    if t.op == "input":
        return b.input(t.literal)  # type: ignore[arg-type]
    if t.op == "const":
        return b.const(t.literal)  # type: ignore[arg-type]
    if t.op == "fconst":
        return b.fconst(t.literal)  # type: ignore[arg-type]
    return b.add(t.op, *(term_into(b, c) for c in t.children))


def dfg_from_expr(text: str, share: bool = True) -> Dfg:
    """Build a graph from expressions; bare names become inputs, each expression an output.

    >>> len(dfg_from_expr("a - b").nodes)
    3
    """
    b = DfgBuilder(share=share)
    outs = [term_into(b, t) for t in parse_exprs(text)]
    return b.build(*outs)


def dfg_to_terms(d: Dfg) -> list[Term]:
    """Unfold the outputs of an acyclic graph into expression trees."""
    from .dfg import topo_order

    memo: dict[str, Term] = {}
    for n in topo_order(d):
        memo[n.id] = Term(n.op, tuple(memo[o] for o in n.operands), n.literal)
    return [memo[o] for o in d.outputs]

"""Modulo scheduling of dataflow graphs onto a CGRA.

Model
-----
* Every non-pseudo node runs on one PE for one cycle; ``(pe, slot mod ii)`` may host one op.
* Inputs and constants are live-ins/immediates and are never placed.
* A value produced at ``(p, t)`` can be read at ``t + 1`` by ``p`` itself or a linked PE.
  Reading later needs one register hop per extra cycle: hop ``i`` sits on a PE with a
  register at time ``t + i`` and each hop either stays put or follows a link.
  For an edge with iteration distance ``k`` the consumer slot ``s`` satisfies
  ``s + k * ii == t + 1 + hops``.
* Route registers are not capacity limited; only functional units are.
* All slots lie in ``[0, horizon)`` with ``horizon = ops + rows + cols``.
"""
from __future__ import annotations

import itertools
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .arch import CgraSpec
from .dfg import PSEUDO_OPS, Dfg, DfgError, topo_order

__all__ = [
    "Mapping", "MappingError", "UnsupportedOpError", "res_mii", "rec_mii", "horizon", "map_at",
    "compile", "compile_kernel", "verify_mapping", "estimate_cycles", "optimal_mapping", "optimal_ii",
    "mapping_to_text",
]


class MappingError(RuntimeError):
    def __init__(self, ii: int, exhausted: bool, msg: str = ""):
        self.ii = ii
        self.exhausted = exhausted  # True: search space fully explored, no mapping at this ii
        super().__init__(msg or f"no mapping at ii={ii} ({'infeasible' if exhausted else 'budget exhausted'})")


class UnsupportedOpError(ValueError):
    pass


@dataclass
class Mapping:
    ii: int
    placement: dict[str, tuple[int, int]]  # node -> (pe, slot)
    routes: dict[tuple[str, str], list[tuple[int, int]]]  # edge -> register hops (pe, slot)
    lower_bound: int = 1
    attempts: list[tuple[int, bool]] = field(default_factory=list)  # failed (ii, exhausted) before success

    @property
    def schedule_length(self) -> int:
        return max((t for _, t in self.placement.values()), default=-1) + 1

    @property
    def proven_optimal(self) -> bool:
        """True when every smaller ii at or above the lower bound was shown infeasible."""
        return all(ex for _, ex in self.attempts) and len(self.attempts) == self.ii - self.lower_bound


def horizon(d: Dfg, spec: CgraSpec) -> int:
    return len(d.op_nodes) + spec.rows + spec.cols


def _op_edges(d: Dfg) -> list[tuple[str, str, int]]:
    ops = {n.id for n in d.op_nodes}
    edges = {}
    for n in d.nodes:
        if n.id not in ops:
            continue
        for o in n.operands:
            if o in ops:
                edges[(o, n.id, d.distance(o, n.id))] = None
    return list(edges)


def res_mii(d: Dfg, spec: CgraSpec) -> int:
    counts: dict[str, int] = {}
    for n in d.op_nodes:
        counts[n.op] = counts.get(n.op, 0) + 1
    best = 1
    for op, c in counts.items():
        k = len(spec.pes_for(op))
        if k == 0:
            raise UnsupportedOpError(f"no PE supports {op}")
        best = max(best, -(-c // k))
    return best


def rec_mii(d: Dfg) -> int:
    """Smallest ii such that no dependence cycle has latency exceeding distance * ii."""
    edges = _op_edges(d)
    nodes = [n.id for n in d.op_nodes]
    if not any(k for _, _, k in edges):
        return 1
    for ii in range(1, len(nodes) + 1):
        if not _positive_cycle(nodes, [(u, v, 1 - k * ii) for u, v, k in edges]):
            return ii
    raise DfgError("dependence cycle with zero total distance")


def _positive_cycle(nodes: list[str], edges: list[tuple[str, str, int]]) -> bool:
    dist = {n: 0 for n in nodes}
    for _ in range(len(nodes)):
        changed = False
        for u, v, w in edges:
            if dist[u] + w > dist[v]:
                dist[v] = dist[u] + w
                changed = True
        if not changed:
            return False
    return True


# ---------------------------------------------------------------------------
# routing reachability (bitmasks)


class _Reach:
    def __init__(self, spec: CgraSpec, max_h: int):
        n = len(spec.pes)
        self.nbr = [(1 << p) | sum(1 << q for q in spec.successors(p)) for p in range(n)]
        regs = sum(1 << p.id for p in spec.pes if p.has_register)
        hold = [[0] * n]  # hold[i][p]: PEs that may hold the value as hop i
        ok = [list(self.nbr)]
        for h in range(1, max_h + 1):
            row_hold, row_ok = [], []
            for p in range(n):
                prev = self.nbr[p] if h == 1 else self._spread(hold[h - 1][p])
                cur = prev & regs
                row_hold.append(cur)
                row_ok.append(self._spread(cur))
            hold.append(row_hold)
            ok.append(row_ok)
        self.hold, self.ok, self.max_h = hold, ok, max_h

    def _spread(self, mask: int) -> int:
        out = 0
        p = 0
        while mask:
            if mask & 1:
                out |= self.nbr[p]
            mask >>= 1
            p += 1
        return out

    def feasible(self, h: int, p: int, q: int) -> bool:
        return 0 <= h <= self.max_h and (self.ok[h][p] >> q) & 1 == 1

    def route(self, h: int, p: int, q: int) -> list[int]:
        """Register PEs r_1..r_h for a value going from p to q with h hops."""
        path: list[int] = []
        target = q
        for i in range(h, 0, -1):
            cands = [r for r in range(len(self.nbr)) if (self.hold[i][p] >> r) & 1 and (self.nbr[r] >> target) & 1]
            r = target if target in cands else cands[0]
            path.append(r)
            target = r
        return path[::-1]


def _hop_distance(spec: CgraSpec) -> list[list[int]]:
    n = len(spec.pes)
    out = []
    for s in range(n):
        dist = [math.inf] * n
        dist[s] = 0
        dq = deque([s])
        while dq:
            a = dq.popleft()
            for b in spec.successors(a):
                if dist[b] == math.inf:
                    dist[b] = dist[a] + 1
                    dq.append(b)
        out.append(dist)
    return out


# ---------------------------------------------------------------------------
# backtracking search


class _Search:
    def __init__(self, d: Dfg, spec: CgraSpec, ii: int, max_steps: int, deadline: float | None):
        self.spec, self.ii = spec, ii
        self.order = [n.id for n in topo_order(d) if n.op not in PSEUDO_OPS]
        self.op = {n.id: n.op for n in d.op_nodes}
        self.pes = {}
        for v in self.order:
            ps = spec.pes_for(self.op[v])
            if not ps:
                raise UnsupportedOpError(f"no PE supports {self.op[v]} (node {v})")
            self.pes[v] = ps
        self.edges = _op_edges(d)
        self.ins: dict[str, list[tuple[str, int]]] = {v: [] for v in self.order}
        self.outs: dict[str, list[tuple[str, int]]] = {v: [] for v in self.order}
        for u, v, k in self.edges:
            self.ins[v].append((u, k))
            self.outs[u].append((v, k))
        self.H = horizon(d, spec)
        kmax = max((k for _, _, k in self.edges), default=0)
        self.reach = _Reach(spec, self.H + kmax * ii + 1)
        self.hops = _hop_distance(spec)
        # static windows from distance-0 chains
        self.asap = {v: 0 for v in self.order}
        for v in self.order:
            for u, k in self.ins[v]:
                if k == 0:
                    self.asap[v] = max(self.asap[v], self.asap[u] + 1)
        tail = {v: 0 for v in self.order}
        for v in reversed(self.order):
            for w, k in self.outs[v]:
                if k == 0:
                    tail[v] = max(tail[v], tail[w] + 1)
        self.alap = {v: self.H - 1 - tail[v] for v in self.order}
        self.place: dict[str, tuple[int, int]] = {}
        self.fu: dict[tuple[int, int], str] = {}
        self.steps, self.max_steps, self.deadline = 0, max_steps, deadline
        self.aborted = False
        self._groups = self._kind_groups()

    # capacity check (Hall's condition over groups of ops sharing the same PE set)
    def _kind_groups(self):
        groups: dict[frozenset[int], list[str]] = {}
        for v in self.order:
            groups.setdefault(frozenset(self.pes[v]), []).append(v)
        keys = list(groups)
        subsets = []
        for r in range(1, len(keys) + 1):
            for combo in itertools.combinations(range(len(keys)), r):
                pe_union = frozenset().union(*(keys[i] for i in combo))
                subsets.append((combo, pe_union))
        member = {v: keys.index(frozenset(self.pes[v])) for v in self.order}
        return keys, subsets, member

    def capacity_ok(self) -> bool:
        keys, subsets, member = self._groups
        left = [0] * len(keys)
        for v in self.order:
            if v not in self.place:
                left[member[v]] += 1
        used: dict[int, int] = {}
        for p, _ in self.fu:
            used[p] = used.get(p, 0) + 1
        for combo, pe_union in subsets:
            need = sum(left[i] for i in combo)
            if need and need > sum(self.ii - used.get(p, 0) for p in pe_union):
                return False
        return True

    def compatible(self, v: str, p: int, t: int) -> bool:
        if (p, t % self.ii) in self.fu:
            return False
        ii, reach = self.ii, self.reach
        for u, k in self.ins[v]:
            if u == v:
                if not reach.feasible(k * ii - 1, p, p):
                    return False
            elif u in self.place:
                pu, tu = self.place[u]
                if not reach.feasible(t + k * ii - tu - 1, pu, p):
                    return False
        for w, k in self.outs[v]:
            if w != v and w in self.place:
                pw, tw = self.place[w]
                if not reach.feasible(tw + k * ii - t - 1, p, pw):
                    return False
        return True

    def window(self, v: str) -> tuple[int, int]:
        lo, hi = self.asap[v], self.alap[v]
        for u, k in self.ins[v]:
            if u != v and u in self.place:
                lo = max(lo, self.place[u][1] + 1 - k * self.ii)
        for w, k in self.outs[v]:
            if w != v and w in self.place:
                hi = min(hi, self.place[w][1] + k * self.ii - 1)
        return max(lo, 0), hi

    def candidates(self, v: str):
        lo, hi = self.window(v)
        anchors = [self.place[u][0] for u, _ in self.ins[v] + self.outs[v] if u in self.place and u != v]
        pes = sorted(self.pes[v], key=lambda p: (sum(self.hops[a][p] for a in anchors), p))
        for t in range(lo, hi + 1):
            for p in pes:
                if self.compatible(v, p, t):
                    yield p, t

    def has_candidate(self, v: str) -> bool:
        return next(self.candidates(v), None) is not None

    def run(self) -> dict[str, tuple[int, int]] | None:
        if not self.capacity_ok():
            return None
        return self._rec(0)

    def _rec(self, i: int):
        if i == len(self.order):
            return dict(self.place)
        v = self.order[i]
        for p, t in self.candidates(v):
            self.steps += 1
            if self.steps > self.max_steps or (
                self.deadline is not None and self.steps % 64 == 0 and time.monotonic() > self.deadline
            ):
                self.aborted = True
                return None
            self.place[v] = (p, t)
            self.fu[(p, t % self.ii)] = v
            ok = self.capacity_ok() and all(
                self.has_candidate(w) for w in self._neighbours(v) if w not in self.place
            )
            if ok:
                res = self._rec(i + 1)
                if res is not None or self.aborted:
                    return res
            del self.place[v]
            del self.fu[(p, t % self.ii)]
        return None

    def _neighbours(self, v: str):
        return dict.fromkeys([u for u, _ in self.ins[v]] + [w for w, _ in self.outs[v]])


def _build_routes(d: Dfg, spec: CgraSpec, ii: int, place: dict[str, tuple[int, int]]):
    edges = _op_edges(d)
    kmax = max((k for _, _, k in edges), default=0)
    reach = _Reach(spec, horizon(d, spec) + kmax * ii + 1)
    routes: dict[tuple[str, str], list[tuple[int, int]]] = {}
    for u, v, k in edges:
        (pu, tu), (pv, tv) = place[u], place[v]
        h = tv + k * ii - tu - 1
        regs = reach.route(h, pu, pv)
        routes[(u, v)] = [(r, tu + 1 + i) for i, r in enumerate(regs)]
    return routes


def map_at(d: Dfg, spec: CgraSpec, ii: int, max_steps: int = 20_000, time_budget: float | None = 10.0) -> Mapping:
    """Find a modulo schedule at ``ii`` or raise :class:`MappingError`.

    ``MappingError.exhausted`` is True when the whole search space was explored.
    """
    if ii < 1:
        raise ValueError("ii must be positive")
    deadline = None if time_budget is None else time.monotonic() + time_budget
    s = _Search(d, spec, ii, max_steps, deadline)
    place = s.run()
    if place is None:
        raise MappingError(ii, exhausted=not s.aborted)
    return Mapping(ii, place, _build_routes(d, spec, ii, place))


def compile(d: Dfg, spec: CgraSpec, max_steps: int = 20_000, time_budget: float | None = 10.0,
            max_ii: int | None = None) -> Mapping:
    """Try ii upward from the larger of the resource and recurrence bounds."""
    n = len(d.op_nodes)
    if n == 0:
        return Mapping(1, {}, {})
    lb = max(res_mii(d, spec), rec_mii(d))
    cap = max(lb, n) if max_ii is None else max_ii
    attempts: list[tuple[int, bool]] = []
    for ii in range(lb, cap + 1):
        try:
            m = map_at(d, spec, ii, max_steps, time_budget)
        except MappingError as e:
            attempts.append((ii, e.exhausted))
            continue
        m.lower_bound, m.attempts = lb, attempts
        return m
    last_exhausted = attempts[-1][1] if attempts else True
    raise MappingError(cap, last_exhausted, f"no mapping for ii in {lb}..{cap}")


compile_kernel = compile


def estimate_cycles(m: Mapping, iterations: int) -> int:
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    return m.schedule_length + (iterations - 1) * m.ii


# ---------------------------------------------------------------------------
# independent checker


def verify_mapping(d: Dfg, spec: CgraSpec, m: Mapping) -> list[str]:
    """List every violated mapping invariant; empty means valid."""
    bad: list[str] = []
    if m.ii < 1:
        return [f"ii {m.ii} < 1"]
    pe_by_id = {p.id: p for p in spec.pes}
    linked = set(spec.links)
    ops = {n.id: n for n in d.nodes if n.op not in PSEUDO_OPS}
    for nid in ops:
        if nid not in m.placement:
            bad.append(f"node {nid} not placed")
    slots: dict[tuple[int, int], str] = {}
    for nid, (pe, t) in sorted(m.placement.items()):
        if nid not in ops:
            bad.append(f"placed node {nid} is not an operation of the graph")
            continue
        if pe not in pe_by_id:
            bad.append(f"node {nid} on unknown PE {pe}")
            continue
        if ops[nid].op not in pe_by_id[pe].supported:
            bad.append(f"node {nid} ({ops[nid].op}) on PE {pe} which lacks it")
        if t < 0:
            bad.append(f"node {nid} at negative slot {t}")
        key = (pe, t % m.ii)
        if key in slots:
            bad.append(f"modulo conflict on PE {pe} slot {t % m.ii}: {slots[key]} and {nid}")
        else:
            slots[key] = nid

    def step_ok(a: int, b: int) -> bool:
        return a == b or (a, b) in linked

    for n in ops.values():
        for src in dict.fromkeys(n.operands):
            if src not in ops or src not in m.placement or n.id not in m.placement:
                continue
            k = d.distance(src, n.id)
            (pu, tu), (pv, tv) = m.placement[src], m.placement[n.id]
            hops = m.routes.get((src, n.id), [])
            if tv + k * m.ii != tu + 1 + len(hops):
                bad.append(f"edge {src}->{n.id}: consumer slot {tv} (distance {k}) does not meet "
                           f"producer slot {tu} + 1 + {len(hops)} hops")
            prev = pu
            for i, (r, tr) in enumerate(hops, start=1):
                if r not in pe_by_id:
                    bad.append(f"edge {src}->{n.id}: hop through unknown PE {r}")
                    break
                if not pe_by_id[r].has_register:
                    bad.append(f"edge {src}->{n.id}: hop through PE {r} without a register")
                if tr != tu + i:
                    bad.append(f"edge {src}->{n.id}: hop {i} at slot {tr}, expected {tu + i}")
                if not step_ok(prev, r):
                    bad.append(f"edge {src}->{n.id}: PE {prev} is not linked to PE {r}")
                prev = r
            if not step_ok(prev, pv):
                bad.append(f"edge {src}->{n.id}: PE {prev} is not linked to consumer PE {pv}")
    return bad


def mapping_to_text(d: Dfg, spec: CgraSpec, m: Mapping) -> str:
    ops = {n.id: n.op for n in d.nodes}
    lines = [f"# arch {spec.name} ii {m.ii} length {m.schedule_length}",
             "# node op pe row col slot"]
    for nid, (pe, t) in sorted(m.placement.items(), key=lambda kv: (kv[1][1], kv[1][0], kv[0])):
        p = spec.pes[pe]
        lines.append(f"node {nid} {ops[nid]} {pe} {p.row} {p.col} {t}")
    for (u, v), hops in sorted(m.routes.items()):
        if hops:
            lines.append(f"route {u} {v} " + " ".join(f"{r}@{t}" for r, t in hops))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# exact mapper (integer program)


def _hop_matrices(spec: CgraSpec, max_h: int) -> list[np.ndarray]:
    n = len(spec.pes)
    adj = np.eye(n, dtype=np.int64)
    for a, b in spec.links:
        adj[a, b] = 1
    reg = np.diag([1 if p.has_register else 0 for p in spec.pes]).astype(np.int64)
    step = (adj @ reg > 0).astype(np.int64)
    mats, walk = [], np.eye(n, dtype=np.int64)
    for _ in range(max_h + 1):
        mats.append((walk @ adj) > 0)
        walk = ((walk @ step) > 0).astype(np.int64)
    return mats


def optimal_mapping(d: Dfg, spec: CgraSpec, ii: int, time_limit: float = 60.0) -> Mapping | None:
    """Solve placement at ``ii`` exactly with an integer program; None when infeasible."""
    from scipy.optimize import Bounds, LinearConstraint, milp
    from scipy.sparse import coo_array

    ops = [n for n in d.nodes if n.op not in PSEUDO_OPS]
    if not ops:
        return Mapping(ii, {}, {})
    H = len(ops) + spec.rows + spec.cols
    edges = []
    op_ids = {n.id for n in ops}
    for n in ops:
        for o in dict.fromkeys(n.operands):
            if o in op_ids:
                edges.append((o, n.id, d.distance(o, n.id)))
    kmax = max((k for *_, k in edges), default=0)
    mats = _hop_matrices(spec, H + kmax * ii + 1)
    var: dict[tuple[str, int, int], int] = {}
    for n in ops:
        for p in spec.pes:
            if n.op in p.supported:
                for t in range(H):
                    var[(n.id, p.id, t)] = len(var)
    by_node: dict[str, list[tuple[int, int]]] = {n.id: [] for n in ops}
    for (v, p, t) in var:
        by_node[v].append((p, t))
    if any(not c for c in by_node.values()):
        return None
    rows, cols, vals, lo, hi = [], [], [], [], []

    def row(entries, lb, ub):
        r = len(lo)
        for c, val in entries:
            rows.append(r)
            cols.append(c)
            vals.append(val)
        lo.append(lb)
        hi.append(ub)

    for n in ops:
        row([(var[(n.id, p, t)], 1) for p, t in by_node[n.id]], 1, 1)
    for p in spec.pes:
        for r in range(ii):
            entries = [(i, 1) for (v, q, t), i in var.items() if q == p.id and t % ii == r]
            if len(entries) > 1:
                row(entries, -np.inf, 1)

    def reachable(h: int, a: int, b: int) -> bool:
        return 0 <= h < len(mats) and bool(mats[h][a, b])

    for u, v, k in edges:
        for pu, tu in by_node[u]:
            entries: dict[int, float] = {var[(u, pu, tu)]: 1.0}
            for pv, tv in by_node[v]:
                if reachable(tv + k * ii - tu - 1, pu, pv):
                    c = var[(v, pv, tv)]
                    entries[c] = entries.get(c, 0.0) - 1.0
            row([(c, x) for c, x in entries.items() if x != 0], -np.inf, 0)
    nvar = len(var)
    A = coo_array((vals, (rows, cols)), shape=(len(lo), nvar)).tocsr()
    res = milp(
        c=np.zeros(nvar),
        constraints=[LinearConstraint(A, np.array(lo, dtype=float), np.array(hi, dtype=float))],
        integrality=np.ones(nvar),
        bounds=Bounds(0, 1),
        # HiGHS presolve has been seen to report infeasible models as optimal
        options={"time_limit": time_limit, "presolve": False},
    )
    if res.status == 2:  # infeasible
        return None
    if res.x is None:
        raise MappingError(ii, exhausted=False, msg=f"integer program did not finish: {res.message}")
    ax = A @ res.x
    if np.any(ax < np.array(lo) - 1e-6) or np.any(ax > np.array(hi) + 1e-6):
        raise MappingError(ii, exhausted=False, msg="integer program returned an infeasible point")
    place = {v: (p, t) for (v, p, t), i in var.items() if res.x[i] > 0.5}
    return Mapping(ii, place, _build_routes(d, spec, ii, place))


def optimal_ii(d: Dfg, spec: CgraSpec, max_ii: int | None = None, time_limit: float = 60.0) -> int | None:
    """Smallest feasible ii (within the horizon) found by the exact program, or None."""
    if not d.op_nodes:
        return 1
    for op in {n.op for n in d.op_nodes}:
        if not spec.pes_for(op):
            return None
    cap = max_ii or len(d.op_nodes)
    for ii in range(1, cap + 1):
        if optimal_mapping(d, spec, ii, time_limit) is not None:
            return ii
    return None

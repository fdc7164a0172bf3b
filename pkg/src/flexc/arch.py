"""CGRA descriptions: processing elements, supported operations and links, loaded from JSON."""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path

from .dfg import make_opset

__all__ = ["ProcessingElement", "CgraSpec", "ArchError", "parse_arch", "load_arch", "arch_to_json",
           "builtin_arch", "supported_ops", "BUILTIN_ARCHS", "mesh_links"]

BUILTIN_ARCHS = ("cca", "maeri", "revamp", "sc_cgra")
_PE_KEYS = {"row", "col", "ops", "has_register"}
_TOP_KEYS = {"name", "rows", "cols", "pes", "links", "notes"}


class ArchError(ValueError):
    pass


@dataclass(frozen=True)
class ProcessingElement:
    id: int
    row: int
    col: int
    supported: frozenset[str]
    has_register: bool = True

    @property
    def position(self) -> tuple[int, int]:
        return (self.row, self.col)


@dataclass(frozen=True)
class CgraSpec:
    name: str
    rows: int
    cols: int
    pes: tuple[ProcessingElement, ...]
    links: frozenset[tuple[int, int]]
    notes: str = ""

    @cached_property
    def _out(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, list[int]] = {p.id: [] for p in self.pes}
        for a, b in sorted(self.links):
            out[a].append(b)
        return {k: tuple(v) for k, v in out.items()}

    @property
    def supported_ops(self) -> frozenset[str]:
        return supported_ops(self)

    def successors(self, pe: int) -> tuple[int, ...]:
        return self._out[pe]

    def pes_for(self, op: str) -> list[int]:
        return [p.id for p in self.pes if op in p.supported]


def supported_ops(spec: CgraSpec) -> frozenset[str]:
    out: set[str] = set()
    for p in spec.pes:
        out |= p.supported
    return frozenset(out)


def mesh_links(pes: list[ProcessingElement] | tuple[ProcessingElement, ...]) -> frozenset[tuple[int, int]]:
    """Bidirectional links between 4-neighbours on the grid."""
    at = {p.position: p.id for p in pes}
    links = set()
    for p in pes:
        for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0)):
            q = at.get((p.row + dr, p.col + dc))
            if q is not None:
                links.add((p.id, q))
    return frozenset(links)


def _int(obj, key, where) -> int:
    v = obj.get(key)
    if not isinstance(v, int) or isinstance(v, bool):
        raise ArchError(f"{where}: '{key}' must be an integer")
    return v


def parse_arch(text: str) -> CgraSpec:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ArchError(f"invalid JSON: {e}") from None
    if not isinstance(obj, dict):
        raise ArchError("architecture must be a JSON object")
    extra = set(obj) - _TOP_KEYS
    if extra:
        raise ArchError(f"unknown keys {sorted(extra)}")
    name = obj.get("name")
    if not isinstance(name, str) or not name:
        raise ArchError("'name' must be a nonempty string")
    rows, cols = _int(obj, "rows", "arch"), _int(obj, "cols", "arch")
    if rows <= 0 or cols <= 0:
        raise ArchError("rows and cols must be positive")
    raw_pes = obj.get("pes")
    if not isinstance(raw_pes, list) or not raw_pes:
        raise ArchError("'pes' must be a nonempty list")
    pes: list[ProcessingElement] = []
    seen: dict[tuple[int, int], int] = {}
    for i, raw in enumerate(raw_pes):
        where = f"pes[{i}]"
        if not isinstance(raw, dict):
            raise ArchError(f"{where}: must be an object")
        extra = set(raw) - _PE_KEYS
        if extra:
            raise ArchError(f"{where}: unknown keys {sorted(extra)}")
        r, c = _int(raw, "row", where), _int(raw, "col", where)
        if not (0 <= r < rows and 0 <= c < cols):
            raise ArchError(f"{where}: position ({r}, {c}) outside the {rows}x{cols} grid")
        if (r, c) in seen:
            raise ArchError(f"{where}: duplicate position ({r}, {c}) (also pes[{seen[(r, c)]}])")
        seen[(r, c)] = i
        ops = raw.get("ops", [])
        if not isinstance(ops, list) or not all(isinstance(o, str) for o in ops):
            raise ArchError(f"{where}: 'ops' must be a list of operation names")
        try:
            supported = make_opset(ops)
        except ValueError as e:
            raise ArchError(f"{where}: {e}") from None
        reg = raw.get("has_register", True)
        if not isinstance(reg, bool):
            raise ArchError(f"{where}: 'has_register' must be a boolean")
        pes.append(ProcessingElement(i, r, c, supported, reg))
    if "links" in obj:
        raw_links = obj["links"]
        if not isinstance(raw_links, list):
            raise ArchError("'links' must be a list of [src, dst] pairs")
        links = set()
        for j, l in enumerate(raw_links):
            if (not isinstance(l, list) or len(l) != 2
                    or not all(isinstance(x, int) and not isinstance(x, bool) for x in l)):
                raise ArchError(f"links[{j}]: expected [src, dst]")
            if not all(0 <= x < len(pes) for x in l):
                raise ArchError(f"links[{j}]: dangling PE reference {l}")
            links.add((l[0], l[1]))
        link_set = frozenset(links)
    else:
        link_set = mesh_links(pes)
    notes = obj.get("notes", "")
    if not isinstance(notes, str):
        raise ArchError("'notes' must be a string")
    return CgraSpec(name, rows, cols, tuple(pes), link_set, notes)


def _op_list(ops: frozenset[str]) -> list[str]:
    return sorted(ops)


def arch_to_json(spec: CgraSpec) -> str:
    obj = {
        "name": spec.name,
        "rows": spec.rows,
        "cols": spec.cols,
        "pes": [
            {"row": p.row, "col": p.col, "ops": _op_list(p.supported), **({} if p.has_register else {"has_register": False})}
            for p in spec.pes
        ],
        "links": [list(l) for l in sorted(spec.links)],
    }
    if spec.notes:
        obj["notes"] = spec.notes
    return json.dumps(obj, indent=1) + "\n"


def load_arch(path: str | Path) -> CgraSpec:
    return parse_arch(Path(path).read_text(encoding="utf-8"))


def builtin_arch(name: str) -> CgraSpec:
    if name not in BUILTIN_ARCHS:
        raise ValueError(f"unknown architecture {name!r}; expected one of {list(BUILTIN_ARCHS)}")
    text = resources.files("flexc").joinpath("profiles").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return parse_arch(text)

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from flexc.arch import (
    BUILTIN_ARCHS, ArchError, CgraSpec, ProcessingElement, arch_to_json, builtin_arch, load_arch, mesh_links,
    parse_arch, supported_ops,
)


def grid_json(rows, cols, ops, **extra):
    pes = [{"row": r, "col": c, "ops": ops} for r in range(rows) for c in range(cols)]
    return json.dumps({"name": "t", "rows": rows, "cols": cols, "pes": pes, **extra})


def test_mesh_2x2():
    spec = parse_arch(grid_json(2, 2, ["add"]))
    assert len(spec.pes) == 4
    assert len(spec.links) == 8
    assert spec.successors(0) == (1, 2)


def test_builtin_profiles_shapes():
    assert (builtin_arch("revamp").rows, builtin_arch("revamp").cols) == (6, 6)
    assert (builtin_arch("sc_cgra").rows, builtin_arch("sc_cgra").cols) == (4, 4)
    for name in BUILTIN_ARCHS:
        spec = builtin_arch(name)
        assert spec.name == name
        assert "approximation" in spec.notes.lower()


def test_supported_ops_union():
    pes = (ProcessingElement(0, 0, 0, frozenset({"add"})), ProcessingElement(1, 0, 1, frozenset({"mul"})))
    spec = CgraSpec("x", 1, 2, pes, mesh_links(pes))
    assert supported_ops(spec) == {"add", "mul"}
    same = parse_arch(grid_json(2, 2, ["add", "xor"]))
    assert supported_ops(same) == {"add", "xor"}


def test_profile_contents():
    sc = builtin_arch("sc_cgra")
    assert "isc_mul" in sc.supported_ops
    assert len(sc.pes_for("add")) == 1
    cca = builtin_arch("cca")
    assert "mul" not in cca.supported_ops and "sub" not in cca.supported_ops
    rv = builtin_arch("revamp").supported_ops
    assert {"add", "sub", "mul"} <= rv
    assert rv & {"and", "or", "xor", "shl", "shr"}


def test_unknown_builtin():
    with pytest.raises(ValueError):
        builtin_arch("nope")


@pytest.mark.parametrize("mutate, fragment", [
    (lambda o: o.update(extra=1), "unknown keys"),
    (lambda o: o["pes"].append(dict(o["pes"][0])), "duplicate position"),
    (lambda o: o.update(links=[[0, 9]]), "dangling"),
    (lambda o: o["pes"][0].update(ops=["warp"]), "unknown"),
    (lambda o: o["pes"][0].update(row=5), "outside"),
    (lambda o: o.update(rows="2"), "integer"),
    (lambda o: o["pes"][0].update(has_register="yes"), "boolean"),
])
def test_schema_errors(mutate, fragment):
    obj = json.loads(grid_json(2, 2, ["add"]))
    mutate(obj)
    with pytest.raises(ArchError, match=fragment):
        parse_arch(json.dumps(obj))


def test_invalid_json():
    with pytest.raises(ArchError):
        parse_arch("{not json")


def test_load_from_file(tmp_path):
    f = tmp_path / "a.json"
    f.write_text(grid_json(1, 3, ["add", "cmp"]))
    spec = load_arch(f)
    assert "lt" in spec.supported_ops and len(spec.links) == 4


OPS = ("add", "sub", "mul", "xor", "shl", "load", "store", "fadd")


@st.composite
def specs(draw):
    rows, cols = draw(st.integers(1, 3)), draw(st.integers(1, 3))
    cells = [(r, c) for r in range(rows) for c in range(cols)]
    chosen = draw(st.lists(st.sampled_from(cells), min_size=1, unique=True))
    pes = tuple(ProcessingElement(i, r, c, frozenset(draw(st.lists(st.sampled_from(OPS), unique=True))),
                                  draw(st.booleans())) for i, (r, c) in enumerate(chosen))
    links = mesh_links(pes) if draw(st.booleans()) else frozenset(
        draw(st.lists(st.tuples(st.integers(0, len(pes) - 1), st.integers(0, len(pes) - 1)), unique=True)))
    return CgraSpec("gen", rows, cols, pes, links, draw(st.sampled_from(["", "note"])))


@given(specs())
def test_json_round_trip(spec):
    assert parse_arch(arch_to_json(spec)) == spec


@given(specs(), st.lists(st.sampled_from(OPS), unique=True))
def test_supported_ops_monotone(spec, extra_ops):
    free = [(r, c) for r in range(spec.rows) for c in range(spec.cols)
            if (r, c) not in {p.position for p in spec.pes}]
    if not free:
        return
    pes = spec.pes + (ProcessingElement(len(spec.pes), *free[0], frozenset(extra_ops)),)
    bigger = CgraSpec(spec.name, spec.rows, spec.cols, pes, spec.links)
    assert supported_ops(spec) <= supported_ops(bigger)

import json

import pytest

from flexc.bench import bundled_corpus
from flexc.cli import main

CORPUS = bundled_corpus()
K01 = str(CORPUS / "k01_diff_scale.dfg")
K08 = str(CORPUS / "k08_int_divide.dfg")


def test_rewrite_writes_supported_graph(tmp_path, capsys):
    out = tmp_path / "o.dfg"
    assert main(["rewrite", "--dfg", K01, "--arch-builtin", "cca", "--out", str(out), "--strict"]) == 0
    assert "mul" not in out.read_text().split()
    assert "supported" in capsys.readouterr().err


def test_rewrite_failure_exit_codes():
    assert main(["rewrite", "--dfg", K08, "--arch-builtin", "cca"]) == 0
    assert main(["rewrite", "--dfg", K08, "--arch-builtin", "cca", "--strict"]) == 1


def test_ops_target_and_egraph_dump(tmp_path):
    dump = tmp_path / "g.txt"
    src = tmp_path / "k.dfg"
    src.write_text("a input a\nb input b\nd sub a b\nout d\n")
    assert main(["rewrite", "--dfg", str(src), "--ops", "add,xor,const", "--rulesets", "int",
                 "--dump-egraph", str(dump), "--strict"]) == 0
    assert dump.read_text().strip()


def test_compile_prints_mapping(tmp_path, capsys):
    m = tmp_path / "m.txt"
    assert main(["compile", "--dfg", K01, "--arch-builtin", "revamp", "--mapping-out", str(m), "--strict"]) == 0
    assert m.read_text().startswith("# arch revamp")
    assert "ii=" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["rewrite", "--dfg", "/nonexistent.dfg", "--arch-builtin", "cca"],
    ["rewrite", "--dfg", K01],
    ["rewrite", "--dfg", K01, "--arch-builtin", "nope"],
    ["rewrite", "--dfg", K01, "--arch-builtin", "cca", "--rulesets", "bogus"],
    ["rewrite", "--dfg", K01, "--arch-builtin", "cca", "--iter-limit", "0"],
    ["compile", "--dfg", K01, "--ops", "add"],
    ["bench", "--corpus", "/nonexistent"],
    ["bench", "--strategies", "magic"],
    ["explain", "--dfg", K01, "--ops", "warp"],
    ["frobnicate"],
])
def test_usage_errors_exit_2(argv):
    assert main(argv) == 2


def test_bad_dfg_exits_2(tmp_path):
    bad = tmp_path / "bad.dfg"
    bad.write_text("x frobnicate y\n")
    assert main(["explain", "--dfg", str(bad), "--arch-builtin", "cca"]) == 2


def test_bench_outputs(tmp_path, capsys):
    corpus = tmp_path / "c"
    corpus.mkdir()
    for name in ("k01_diff_scale.dfg", "k08_int_divide.dfg"):
        (corpus / name).write_text((CORPUS / name).read_text())
    out = tmp_path / "out"
    argv = ["bench", "--corpus", str(corpus), "--arch-builtin", "cca", "--strategies", "none,hybrid",
            "--jobs", "1", "--out", str(out)]
    assert main(argv) == 0
    assert (out / "summary.csv").read_text().splitlines()[0].startswith("arch,strategy")
    assert "| cca | hybrid |" in capsys.readouterr().out
    assert main(argv + ["--strict"]) == 1


def test_ceiling_csv(tmp_path, capsys):
    g = tmp_path / "g.json"
    g.write_text(json.dumps({"ops": ["add", "sub"], "inputs": ["a", "b"], "constants": [-1]}))
    assert main(["ceiling", "--grammar", str(g), "--max-ops", "1", "--ops", "add,xor,const",
                 "--rulesets", "int", "--strategies", "none,hybrid"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "strategy,programs,fraction,ceiling,excluded"
    rows = {l.split(",")[0]: l.split(",") for l in lines[1:]}
    assert float(rows["hybrid"][2]) >= float(rows["none"][2])
    assert main(["ceiling", "--grammar", str(g), "--max-ops", "9", "--ops", "add"]) == 2


def test_explain_trace(capsys):
    assert main(["explain", "--dfg", K01, "--arch-builtin", "cca"]) == 0
    out = capsys.readouterr().out
    assert "greedy: cost" in out and "eqsat: cost" in out

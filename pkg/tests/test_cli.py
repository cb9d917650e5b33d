"""Command line: exit codes, output formats and golden reports."""

import io
import json
from pathlib import Path

import pytest

from dpcheck.cli import main

GOLDEN = Path(__file__).parent / "golden"

# golden file stem -> command line that produced it
GOLDEN_RUNS = {
    "alg1_buggy_refute_C": ["refute", "C", "alg1_buggy"],
    "alg1_safe_prove": ["prove", "alg1_safe"],
    "alg2_buggy_refute_B_n5": ["refute", "B", "alg2_buggy", "--n", "5"],
    "alg2_safe_noised_refute_all_n5": ["refute", "all", "alg2_safe_noised", "--n", "5",
                                       "--budget", "2eps"],
    "alg2_safe_top_pointwise_n5": ["prove-pointwise", "alg2_safe_top", "--n", "5"],
    "alg3_buggy_refute_A_n2": ["refute", "A", "alg3_buggy", "--n", "2"],
}


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out)
    return code, out.getvalue()


def report(*argv):
    code, text = run(*argv, "--json")
    data = json.loads(text)
    data.pop("timing", None)
    return code, data


def test_every_example_has_a_golden():
    code, text = run("list-examples")
    assert code == 0
    names = {line.split()[0].rstrip(":") for line in text.splitlines()}
    covered = {argv[2] if argv[0] == "refute" else argv[1] for argv in GOLDEN_RUNS.values()}
    assert names == covered
    assert {p.stem for p in GOLDEN.glob("*.json")} == set(GOLDEN_RUNS)


@pytest.mark.parametrize("stem", sorted(GOLDEN_RUNS))
def test_golden_report(stem):
    _, data = report(*GOLDEN_RUNS[stem])
    assert data == json.loads((GOLDEN / f"{stem}.json").read_text())


def test_reports_are_deterministic():
    argv = ["refute", "A", "alg3_buggy", "--n", "2"]
    assert report(*argv) == report(*argv)


def test_exit_codes(tmp_path):
    assert run("prove", "laplace_safe")[0] == 0
    assert run("refute", "C", "laplace_buggy")[0] == 10
    assert run("prove", "alg1_buggy")[0] == 20
    assert run("bogus")[0] == 64
    assert run("prove", "alg1_safe", "--budget", "lots")[0] == 64
    assert run("confirm", "alg1_buggy", "--inputs1", "q=0", "--inputs2", "q=2")[0] == 64
    bad = tmp_path / "bad.pfor"
    bad.write_text("program bad\nbegin\n")
    assert run("prove", str(bad))[0] == 65
    assert run("prove", str(tmp_path / "missing.pfor"))[0] == 66
    assert run("prove", "alg1_safe", "--solver", "/nonexistent/z3")[0] == 69


def test_confirm_and_run():
    code, text = run("confirm", "alg3_buggy", "--n", "2", "--t", "0", "--eps", "1",
                     "--inputs1", "q=[-1,0]", "--inputs2", "q=[0,-1]")
    assert code == 10 and "CONFIRMED" in text
    code, text = run("run", "alg3", "--n", "2", "--t", "0", "--eps", "1", "--inputs", "q=[0,1]")
    assert code == 0 and "[top, top]" in text


def test_json_and_output_file(tmp_path):
    target = tmp_path / "report.json"
    code, text = run("prove", "alg1_safe", "--output", str(target))
    assert code == 0 and text.startswith("prove alg1_safe: PROVED")
    assert json.loads(target.read_text())["verdict"]["status"] == "proved"
    code, text = run("prove", "alg1_safe", "--json")
    assert json.loads(text)["program"] == "alg1_safe"


def test_fixed_witness_option():
    assert run("prove", "alg2_buggy", "--n", "2", "--witness", "12:3#0=0")[0] == 0
    assert run("prove", "alg2_buggy", "--n", "2", "--witness", "12:3#0=1")[0] == 20
    assert run("prove", "alg2_buggy", "--n", "2", "--witness", "nowhere=0")[0] == 64


def test_dump_traces():
    code, text = run("dump-traces", "alg1_safe")
    data = json.loads(text)
    assert code == 0 and len(data["traces"]) == 1
    assert len(data["traces"][0]["kvec"]) == 1
    code, text = run("dump-traces", "alg1_safe", "--mode", "A")
    assert json.loads(text)["traces"][0]["kvec"] == []

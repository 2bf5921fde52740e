import json
import subprocess
import sys

import pytest

from magschrod.cli import main
from magschrod.manifest import ManifestError, format_value, parse_manifest

CASE1 = """
[grid]
dim = 1
nx = {nx}
nt = {nt}
T = 3

[weight]
x0 = {x0}
s_min = 1
s_max = 100
s_count = {s_count}

[experiment]
case = case1
seed = 11

[pair]
delta = {delta}
"""


def write_manifest(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def case1(tmp_path, nx=51, nt=76, x0=-0.3, s_count=4, delta="0.1, 0.01", name="run.ini"):
    return write_manifest(tmp_path, CASE1.format(nx=nx, nt=nt, x0=x0, s_count=s_count, delta=delta), name)


def run(argv):
    return main([str(a) for a in argv])


def test_case1_stability_passes_and_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    assert run(["stability", "--manifest", case1(tmp_path), "--out", out]) == 0
    header = (out / "stability.csv").read_text().splitlines()[0]
    assert header.startswith("case,delta,h,tau")
    summary = json.loads((out / "summary_stability.json").read_text())
    assert summary["seed"] == 11
    assert "PASS" in capsys.readouterr().out


def test_degenerate_pair_marked_and_exit_zero(tmp_path, capsys):
    out = tmp_path / "out"
    assert run(["stability", "--manifest", case1(tmp_path, delta="0"), "--out", out]) == 0
    summary = json.loads((out / "summary_stability.json").read_text())
    (entry,) = summary["experiments"].values()
    assert entry["degenerate"] is True
    assert "DEGENERATE" in capsys.readouterr().out


def test_x0_inside_domain_rejected(tmp_path, capsys):
    code = run(["stability", "--manifest", case1(tmp_path, x0=0.5), "--out", tmp_path / "o"])
    assert code != 0
    err = capsys.readouterr().err
    assert "[weight] precondition" in err
    assert not (tmp_path / "o").exists()


def test_golden_case1_rerun_is_byte_identical(tmp_path):
    manifest = case1(tmp_path, nx=201, nt=401, delta="0.01")
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["stability", "--manifest", manifest, "--out", a, "--seed", 5]) == 0
    assert run(["stability", "--manifest", manifest, "--out", b, "--seed", 5]) == 0
    for name in ("stability.csv", "summary_stability.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_carleman_outputs_depend_only_on_seed(tmp_path):
    manifest = case1(tmp_path, nx=21, nt=31)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    run(["carleman-verify", "--manifest", manifest, "--out", a, "--seed", 3])
    run(["carleman-verify", "--manifest", manifest, "--out", b, "--seed", 3, "--threads", 2])
    run(["carleman-verify", "--manifest", manifest, "--out", c, "--seed", 4])
    name = "carleman_lambda1_field000.csv"
    assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / name).read_bytes() != (c / name).read_bytes()


def test_single_s_carleman_report_has_one_row(tmp_path):
    out = tmp_path / "out"
    run(["carleman-verify", "--manifest", case1(tmp_path, nx=21, nt=31, s_count=1), "--out", out])
    lines = (out / "carleman_lambda1_field000.csv").read_text().splitlines()
    assert len(lines) == 2
    assert lines[0].split(",")[0] == "s" and lines[0].split(",")[-1] == "ok"


def test_unknown_subcommand_prints_usage(capsys):
    assert main(["explode"]) != 0
    assert "usage" in capsys.readouterr().err
    assert main([]) != 0


def test_module_entry_point_usage():
    proc = subprocess.run([sys.executable, "-m", "magschrod"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr


def test_case3_without_vanishing_cutoff_gradient_rejected(tmp_path, capsys):
    text = """
[grid]
dim = 2
nx = 11
nt = 11
[weight]
x0 = -0.3 0.5
[pair]
delta = 0.1
power = 1
"""
    code = run(["stability", "case3", "--manifest", write_manifest(tmp_path, text), "--out", tmp_path / "o"])
    assert code == 2
    assert "cutoff gradient" in capsys.readouterr().err


def test_validator_failure_names_condition(tmp_path, capsys):
    text = """
[grid]
dim = 2
nx = 11
nt = 11
[weight]
x0 = -0.3 0.5
[experiment]
case = case2
[pair]
delta = 0.1
M = 0.001
"""
    assert run(["stability", "--manifest", write_manifest(tmp_path, text), "--out", tmp_path / "o"]) == 2
    assert "violated at node" in capsys.readouterr().err


def test_parse_errors_name_the_field():
    with pytest.raises(ManifestError, match=r"\[grid\] nx"):
        parse_manifest("[grid]\nnx = many\nnt = 5\n")
    with pytest.raises(ManifestError, match=r"line\s+2"):
        parse_manifest("[grid]\nthis is not a key value pair\n")
    with pytest.raises(ManifestError, match=r"\[grid\] nt: missing"):
        parse_manifest("[grid]\nnx = 11\n")
    with pytest.raises(ManifestError, match=r"\[experiment\] case"):
        parse_manifest("[grid]\nnx = 11\nnt = 5\n[experiment]\ncase = case7\n")


def test_convergence_orders_in_range(tmp_path):
    text = "[grid]\nnx = 51\nnt = 51\nT = 1\n"
    out = tmp_path / "out"
    assert run(["convergence", "--manifest", write_manifest(tmp_path, text), "--out", out]) == 0
    rows = (out / "convergence.csv").read_text().splitlines()[1:]
    orders = [float(r.split(",")[-1]) for r in rows[1:]]
    assert len(orders) == 2 and all(1.8 <= o <= 2.2 for o in orders)


def test_solve_writes_solution_and_no_temporaries(tmp_path):
    text = "[grid]\nnx = 11\nnt = 6\n[potential]\nrho = 0.3\nA_amp = 0.2\n"
    out = tmp_path / "out"
    assert run(["solve", "--manifest", write_manifest(tmp_path, text), "--out", out]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["solution.csv", "summary_solve.json"]
    assert len((out / "solution.csv").read_text().splitlines()) == 1 + 11 * 6


def test_float_format_round_trips():
    for v in (0.1, 1 / 3, 1e-300, -2.5e17):
        assert float(format_value(v)) == v
    assert format_value(True) == "true"

import json
import time

import pytest
from click.testing import CliRunner

from lattice_lie.cli import main


def run(*args, env=None):
    return CliRunner().invoke(main, list(args), env=env)


def run_json(*args, env=None):
    res = run("--format", "json", *args, env=env)
    assert res.exit_code == 0, res.output
    return json.loads(res.output)


def test_algebra_check_valid_and_invalid():
    assert run("algebra", "check", "toda_algebra.json").exit_code == 0
    res = run("--format", "json", "algebra", "check", "broken_jacobi.json")
    assert res.exit_code == 1
    assert [3, 4, 5, 4] in json.loads(res.output)["jacobi_violations"]


def test_unreadable_input_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("algebra", "check", str(bad)).exit_code == 2
    assert run("aut", "solve", str(tmp_path / "missing.json")).exit_code == 2


def test_verify_failure_exits_3():
    assert run("verify", "toda_fields.json", "toda_equation.json").exit_code == 0
    assert run("verify", "volterra_fields.json", "toda_equation.json").exit_code == 3


def test_bad_options_rejected():
    assert run("--trials", "0", "aut", "solve", "abelian_2d.json").exit_code != 0
    assert run("--h", "-1", "aut", "solve", "abelian_2d.json").exit_code != 0
    assert run("--h", "pi", "aut", "solve", "abelian_2d.json").exit_code != 0
    assert run("dp1", "--alpha", "x", "--beta", "0", "--gamma", "0").exit_code != 0


def test_adjoint_command():
    out = run_json("algebra", "adjoint", "toda_algebra.json", "-i", "5")
    assert len(out["matrix"]) == 5
    assert run("algebra", "adjoint", "toda_algebra.json", "-i", "9").exit_code == 1


def test_aut_system_counts():
    out = run_json("aut", "system", "toda_algebra.json")
    assert len(out["equations"]) == 36
    zeros = {p["unknown"] for p in out["propagated"] if p["value"] == {"rat": "0"}}
    assert {"b21", "b31", "b41", "b51"} <= zeros


def test_aut_normalize_families():
    out = run_json("aut", "normalize", "toda_algebra.json")
    assert sorted(f["branch"] for f in out["families"]) == ["b33=0 & b55=-1", "b52=0 & b55=+1"]


def test_discrete_toda():
    out = run_json("discrete", "toda_algebra.json", "toda_fields.json", "toda_equation.json")
    assert out["continuous"]["dim"] == 5
    assert [d["text"] for d in out["discrete"]] == ["t^ = -t, x^ = x, u^ = u", "t^ = t, x^ = -x, u^ = -u"]


@pytest.mark.parametrize("abg,dim,disc", [
    (("1", "3", "6"), 0, []),
    (("0", "3", "6"), 1, []),
    (("0", "0", "6"), 4, []),
    (("1", "3", "0"), 0, ["x^ = x, u^ = -u"]),
    (("1/2", "-3", "0"), 0, ["x^ = x, u^ = -u"]),
])
def test_dp1(abg, dim, disc):
    a, b, g = abg
    out = run_json("dp1", "--alpha", a, "--beta", b, "--gamma", g)
    assert out["continuous"]["dim"] == dim
    assert [d["text"] for d in out["discrete"]] == disc


def test_json_output_is_deterministic():
    args = ("discrete", "toda_algebra.json", "toda_fields.json", "toda_equation.json")
    assert run("--format", "json", *args).output == run("--format", "json", *args).output


def test_seed_from_environment():
    a = run("--format", "json", "dp1", "--alpha", "0", "--beta", "0", "--gamma", "0",
            env={"LATTICE_LIE_SEED": "7"})
    b = run("--format", "json", "--seed", "7", "dp1", "--alpha", "0", "--beta", "0", "--gamma", "0")
    assert a.exit_code == 0 and a.output == b.output


def test_out_file(tmp_path):
    path = tmp_path / "o.json"
    res = run("--format", "json", "--out", str(path), "aut", "solve", "abelian_2d.json")
    assert res.exit_code == 0 and res.output == ""
    assert "families" in json.loads(path.read_text())


@pytest.mark.parametrize("name", ["toda", "dp1", "volterra"])
def test_demos_run_quickly(name):
    start = time.perf_counter()
    res = run("demo", name)
    assert res.exit_code == 0, res.output
    assert time.perf_counter() - start < 10
    assert res.output.strip().endswith("s)")


def test_volterra_demo_reports_sign_symmetries():
    out = run_json("demo", "volterra")
    assert {d["text"] for d in out["discrete"]} == {"t^ = -t, x^ = -x, u^ = u", "t^ = -t, x^ = x, u^ = -u"}
    assert out["determining_equation"]["underdetermined"]

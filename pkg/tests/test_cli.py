import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from heatlab.cli import RunConfig, main, parse_bytes, parse_count, parse_point
from heatlab.io import read_field, read_field_csv

CONFIGS = Path(__file__).resolve().parent.parent / "scripts" / "configs"
LAZY = {"dimension": 1, "increments": None, "alpha": "1/4", "kind": "constant", "params": {"hold": "1/2"}, "seed": None}
ASYM = {"dimension": 1, "increments": None, "alpha": "1/10", "kind": "tabulated",
        "params": {"origin": [0], "shape": [2], "rows": [["1/2", "3/10", "1/5"], ["1/2", "1/4", "1/4"]]}}
RANDOM1 = {"dimension": 1, "alpha": 0.1, "kind": "random", "params": {"size": 16}, "seed": 3}


@pytest.fixture
def envs(tmp_path):
    out = {}
    for name, spec in [("lazy", LAZY), ("asym", ASYM), ("rand", RANDOM1)]:
        p = tmp_path / f"{name}.json"
        p.write_text(json.dumps(spec))
        out[name] = str(p)
    return out


def test_parsers():
    assert parse_bytes("2G") == 2 * 1024**3 and parse_bytes("512k") == 512 * 1024 and parse_bytes("100") == 100
    assert parse_point("3,-1") == (3, -1) and parse_point([1, 2]) == (1, 2)
    assert parse_count("1e6") == 1_000_000
    with pytest.raises(ValueError):
        parse_bytes("lots")


def test_env_validate(envs, capsys):
    assert main(["env", "validate", envs["lazy"]]) == 0
    assert main(["env", "validate", envs["asym"]]) == 2
    err = capsys.readouterr().err
    assert "symmetry" in err


def test_env_generate_is_exact_and_tabulated(envs, tmp_path):
    out = tmp_path / "gen.json"
    assert main(["env", "generate", envs["rand"], "-o", str(out)]) == 0
    spec = json.loads(out.read_text())
    assert spec["kind"] == "tabulated"
    assert main(["env", "validate", str(out)]) == 0


def test_kernel_row_formats(envs, tmp_path, capsys):
    assert main(["kernel", "row", "--env", envs["lazy"], "--n", "6", "-o", str(tmp_path / "k.bin")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["mass"] == pytest.approx(1.0)
    box, vals = read_field(tmp_path / "k.bin")
    assert vals.sum() == pytest.approx(1.0)
    assert main(["kernel", "row", "--env", envs["lazy"], "--n", "6", "-o", str(tmp_path / "k.csv")]) == 0
    capsys.readouterr()
    box2, vals2 = read_field_csv(tmp_path / "k.csv")
    assert box2 == box and np.array_equal(vals, vals2)
    assert main(["kernel", "row", "--env", envs["lazy"], "--n", "6", "--radius", "3"]) == 0
    assert json.loads(capsys.readouterr().out)["escaped"] > 0


def test_green_row(envs, capsys):
    assert main(["green", "row", "--env", envs["lazy"], "--radius", "5", "--x", "1"]) == 0
    s = json.loads(capsys.readouterr().out)
    assert s["row_sum"] == pytest.approx(48.0)  # (25 - 1) / step variance 1/2


def test_adjoint_build_and_verify(envs, tmp_path, capsys):
    M = tmp_path / "M.csv"
    assert main(["adjoint", "build", envs["rand"], "--window", "20", "--l-max", "8", "-o", str(M)]) == 0
    assert M.exists() and (tmp_path / "M.csv.meta.json").exists()
    capsys.readouterr()
    rep = tmp_path / "rep.json"
    code = main(["verify", "volume_doubling", "--env", envs["rand"], "--adjoint", str(M),
                 "--grid", '{"radii": [2, 4], "centers": 4}', "-o", str(rep), "--csv", str(tmp_path / "rows.csv")])
    doc = json.loads(rep.read_text())
    assert code == (0 if doc["passed"] else 1)
    assert (tmp_path / "rows.csv").read_text().startswith("argmax")


def test_verify_failure_keeps_report(envs, tmp_path):
    rep = tmp_path / "rep.json"
    code = main(["verify", "local_clt", "--env", envs["rand"], "--grid", '{"ns": [64]}', "-o", str(rep)])
    assert code == 1
    assert json.loads(rep.read_text())["passed"] is False


@pytest.mark.parametrize("argv", [
    ["verify", "no_such_estimate", "--env", "{lazy}"],
    ["verify", "local_clt", "--env", "{lazy}", "--grid", "{{not json"],
    ["verify", "local_clt", "--env", "{lazy}", "--grid", '{{"bogus": 1}}'],
    ["kernel", "row", "--env", "/nonexistent.json", "--n", "3"],
    ["run", "/nonexistent/config.json"],
])
def test_invalid_inputs_exit_2(envs, argv):
    argv = [a.format(**envs) for a in argv]
    assert main(argv) == 2


def test_budget_exit_3(envs):
    assert main(["kernel", "row", "--env", envs["lazy"], "--n", "100000", "--trim", "0", "--budget-mem", "1M"]) == 3


def test_mc_commands(envs, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["mc", "kernel", "--env", envs["rand"], "--n", "8", "--paths", "70000", "--seed", "4", "-o", str(a)]) == 0
    assert main(["mc", "kernel", "--env", envs["rand"], "--n", "8", "--paths", "70000", "--seed", "4",
                 "--jobs", "2", "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    e = tmp_path / "e.csv"
    assert main(["mc", "exit", "--env", envs["lazy"], "--radius", "3", "--height", "10", "--paths", "1000",
                 "-o", str(e)]) == 0
    assert e.read_text().startswith("k,x1,frequency")


def test_report_merge(envs, tmp_path):
    r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
    main(["verify", "local_clt", "--env", envs["lazy"], "--grid", '{"ns": [256]}', "-o", str(r1)])
    main(["verify", "local_clt", "--env", envs["rand"], "--grid", '{"ns": [64]}', "-o", str(r2)])
    m = tmp_path / "m.json"
    assert main(["report", "merge", str(r1), str(r2), "-o", str(m)]) == 1
    assert len(json.loads(m.read_text())["reports"]) == 2


def _small_config(tmp_path, envs, jobs):
    cfg = {
        "env": Path(envs["rand"]).name,
        "output": "out",
        "kernels": [{"x": [0], "n": 10}],
        "verify": [
            {"estimate": "harnack", "name": "par", "params": {"kind": "parabolic", "r": 4, "n_random": 5}},
            {"estimate": "harnack", "name": "adj", "params": {"kind": "adjoint", "r": 4, "n_random": 5}},
            {"estimate": "boundary", "name": "low", "params": {"kind": "caloric_lower", "r": 2, "R0": 16}},
            {"estimate": "maximum_principle", "name": "mp", "params": {"n_problems": 5, "radius": 3, "height": 6}},
        ],
        "adjoint": {"window": 20, "l_max": 8},
        "jobs": jobs,
    }
    p = tmp_path / f"cfg{jobs}.json"
    p.write_text(json.dumps(cfg))
    return p


def test_run_is_deterministic_across_jobs(envs, tmp_path):
    outs = []
    for jobs in (1, 3):
        cfg = _small_config(tmp_path, envs, jobs)
        out = tmp_path / f"out{jobs}"
        assert main(["run", str(cfg), "-o", str(out)]) in (0, 1)
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == sorted(p.name for p in outs[1].iterdir())
    assert {"manifest.json", "report.json", "kernel_0.bin", "adjoint.csv", "par.json"} <= set(names)
    for name in names:
        if name != "manifest.json":
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
    man = json.loads((outs[0] / "manifest.json").read_text())
    assert man["exit_status"] in (0, 1) and set(man["artifacts"]) >= {"report.json", "par.json"}


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig.from_dict({"env": "x", "surprise": 1})
    with pytest.raises(ValueError):
        RunConfig.from_dict({"verify": []})
    with pytest.raises(ValueError):
        RunConfig.from_dict({"env": "x", "verify": [{"estimate": "nope"}]})


def test_shipped_configs_validate():
    for name in ("lazy1d.json", "random2d.json"):
        assert main(["env", "validate", str(CONFIGS / name)]) == 0
    assert main(["env", "validate", str(CONFIGS / "asymmetric.json")]) == 2


@pytest.mark.skipif(shutil.which("heatlab") is None, reason="console script not installed")
def test_console_script(envs):
    proc = subprocess.run(["heatlab", "env", "validate", envs["asym"]], capture_output=True, text=True)
    assert proc.returncode == 2 and "symmetry" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "heatlab.cli", "env", "validate", envs["lazy"]],
                          capture_output=True, text=True)
    assert proc.returncode == 0

import json
import subprocess
import sys

import numpy as np
import pytest

from fracbsde import config as C
from fracbsde.cli import admissibility_table, exit_code_for, main, run
from fracbsde.errors import ConfigError, DivergenceError, FactorizationError
from fracbsde.scenarios import SCENARIOS


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def report(out):
    return json.loads((out / "report.json").read_text())


def small(scenario, out, **kw):
    cfg = {"scenario": scenario, "n_paths": 400, "N": 32, "outputs": {"dir": str(out)}}
    cfg.update(kw)
    return cfg


def test_scenarios_listing(capsys):
    assert main(["scenarios"]) == 0
    lines = capsys.readouterr().out.splitlines()
    names = {ln.split(":")[0] for ln in lines}
    assert len(lines) >= 8 and {"example43", "delay_ge_T", "certified_contraction"} <= names
    assert names == set(SCENARIOS)


def test_admissibility_values(capsys):
    assert main(["admissibility", "--L", "1", "--M", "2.5", "--H", "0.75", "--json"]) == 0
    tab = json.loads(capsys.readouterr().out)
    assert tab["existence"]["beta"] == pytest.approx(15.1914, abs=1e-4)
    assert tab["existence"]["delta_max"] == pytest.approx(0.065827, abs=1e-6)
    assert tab["comparison"]["delta_max"] == pytest.approx(0.0178681, abs=1e-7)
    assert tab["horizon"]["T_max"] > 0
    assert main(["admissibility", "--L", "1", "--M", "2.5", "--H", "0.75"]) == 0
    assert "comparison" in capsys.readouterr().out
    assert main(["admissibility", "--L", "1", "--M", "2", "--H", "0.75"]) == 2


def test_admissibility_table_edge_cases():
    assert admissibility_table(0.0, 2.5, 0.75)["horizon"]["T_max"] == 1e3
    tab = admissibility_table(1.0, 2.5, 0.75, v=1.0)
    assert tab["horizon"]["T_max"] is None and tab["horizon"]["violated"] in ("v-coupling", "both")


def test_exit_code_mapping():
    assert exit_code_for(ConfigError("x")) == 2
    assert exit_code_for(DivergenceError("x", None)) == 3
    assert exit_code_for(FactorizationError("x", 1)) == 3


def test_run_writes_outputs(tmp_path):
    out = tmp_path / "out"
    cfg = write_cfg(tmp_path, small("zero_generator", out, outputs={"dir": str(out), "emit_paths": True}))
    assert main(["run", str(cfg)]) == 0
    rep = report(out)
    assert rep["exit_code"] == 0 and rep["passed"] and rep["error"] is None
    assert rep["verdicts"] == {"y0_equals_eta0": True, "apriori": True}
    for f in ("solution.csv", "trace.csv", "Y_mean_vs_t.csv", "contraction.csv", "paths.csv"):
        assert (out / f).exists()
    assert (out / "Y_mean_vs_t.csv").read_text().splitlines()[0] == "t,Y_mean,Y_std,Z_mean,Z_std"


def test_unknown_key_is_validation_error(tmp_path):
    out = tmp_path / "out"
    cfg = write_cfg(tmp_path, small("zero_generator", out, bogus=1))
    assert run(cfg) == 2
    rep = report(out)
    assert rep["error"]["type"] == "ConfigError" and "bogus" in rep["error"]["message"]


@pytest.mark.parametrize("bad", [{"H": "0.5"}, {"delta_steps": 64}, {"scenario": "nope"},
                                 {"solver": {"M": "2"}}, {"T": "-1"}])
def test_range_errors(tmp_path, bad):
    out = tmp_path / "out"
    cfg = small("zero_generator", out)
    cfg.update(bad)
    assert run(write_cfg(tmp_path, cfg)) == 2
    assert report(out)["exit_code"] == 2


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert run(p, out=str(tmp_path / "o")) == 2
    assert report(tmp_path / "o")["error"]["type"] == "ConfigError"


def test_divergence_exit_code(tmp_path):
    out = tmp_path / "out"
    cfg = {"n_paths": 300, "N": 32, "T": "1", "delta_steps": 1, "eta0": "1", "h": "id",
           "generator": {"linear_delay": "50"}, "solver": {"max_iter": 4}, "checks": [],
           "outputs": {"dir": str(out)}}
    assert run(write_cfg(tmp_path, cfg)) == 3
    err = report(out)["error"]
    assert err["type"] == "DivergenceError" and len(err["trace"]["distances"]) == 4


def test_failing_check_exit_code(tmp_path):
    out = tmp_path / "out"
    cfg = small("zero_generator", out, generator={"const": "5", "L": "0"}, checks=["y0_equals_eta0"])
    assert run(write_cfg(tmp_path, cfg)) == 4
    rep = report(out)
    assert rep["verdicts"] == {"y0_equals_eta0": False}
    assert rep["error"]["type"] == "AcceptanceCheckFailure"


def test_determinism_and_roundtrip(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    cfg = small("certified_contraction", a)
    assert run(write_cfg(tmp_path, cfg)) == 0
    cfg["outputs"]["dir"] = str(b)
    assert run(write_cfg(tmp_path, cfg, "b.json")) == 0
    for f in ("solution.csv", "trace.csv", "Y_mean_vs_t.csv", "contraction.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    # the resolved config in report.json reproduces the run on its own
    resolved = report(a)["config"]
    resolved["outputs"]["dir"] = str(c)
    assert run(write_cfg(tmp_path, resolved, "c.json")) == 0
    assert (a / "solution.csv").read_bytes() == (c / "solution.csv").read_bytes()
    assert report(a)["content_hash"] == C.content_hash(C.resolve(report(a)["config"], SCENARIOS))


def test_seed_override_changes_paths(tmp_path):
    cfg = write_cfg(tmp_path, small("zero_generator", tmp_path / "x"))
    assert run(cfg, out=str(tmp_path / "s1"), seed=1) == 0
    assert run(cfg, out=str(tmp_path / "s2"), seed=2) == 0
    assert report(tmp_path / "s1")["config"]["seed"] == 1
    assert (tmp_path / "s1" / "solution.csv").read_bytes() != (tmp_path / "s2" / "solution.csv").read_bytes()


def test_table_generator_matches_linear_delay(tmp_path):
    tab = C.table_generator({"axes": {"y_delay": ["-10", "0", "10"]}, "values": ["-5", "0", "5"],
                             "L": "0.25", "monotone_in_y_delay": True})
    yd = np.linspace(-20, 20, 9)
    assert np.allclose(tab(0 * yd, 0 * yd, 0 * yd, 0 * yd, yd, 0 * yd), 0.5 * yd)
    assert tab.delayed and not tab.uses_y
    with pytest.raises(ConfigError):
        C.table_generator({"axes": {"y": ["1", "0"]}, "values": ["0", "0"], "L": "1"})
    with pytest.raises(ConfigError):
        C.table_generator({"axes": {"y": ["0", "1"]}, "values": ["0"], "L": "1"})


def test_decimal_strings_are_exact():
    assert C.num("0.1") == 0.1 and C.num(0.25) == 0.25
    with pytest.raises(ConfigError):
        C.num("abc")


def test_bad_thread_setting(tmp_path, monkeypatch):
    monkeypatch.setenv("FRACBSDE_THREADS", "many")
    out = tmp_path / "out"
    assert run(write_cfg(tmp_path, small("zero_generator", out))) == 2
    monkeypatch.setenv("FRACBSDE_THREADS", "1")
    assert run(write_cfg(tmp_path, small("zero_generator", out))) == 0


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "fracbsde.cli", "scenarios"], capture_output=True, text=True)
    assert res.returncode == 0 and "example43" in res.stdout

import json
import os
import subprocess
import sys

import pytest
import yaml

from fragim.cli import main, shipped_acceptance_path
from fragim.config import SCHEMA, ConfigError, load_text


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _run(tmp_path, text, name="cfg.yaml"):
    return main(["--log-level", "ERROR", "run", _write(tmp_path, name, text)])


def test_phi_rows(tmp_path):
    out = tmp_path / "out"
    code = _run(tmp_path, f"experiment: phi\noutput: {out}\nmeasure: binary\ngrids: {{p: [0, 1]}}\n")
    assert code == 0
    rows = (out / "phi.csv").read_text().splitlines()
    assert rows[0] == "p,phi,phi_prime"
    assert [r.split(",")[:2] for r in rows[1:]] == [["0.0", "0.0"], ["1.0", "0.5"]]
    man = json.loads((out / "manifest.json").read_text())
    assert man["experiment"] == "phi" and "phi.csv" in man["outputs"]


def test_malformed_config_exit_2_no_outputs(tmp_path, capsys):
    out = tmp_path / "never"
    text = f"experiment: stopline\noutput: {out}\nmeasure: binary\ngrids:\n  eta: [0.1]\nmc: {{n_paths: 0}}\n"
    assert _run(tmp_path, text) == 2
    assert not out.exists()
    err = capsys.readouterr().err
    assert "cfg.yaml:6:" in err and "n_paths" in err


def test_semantic_error_has_line(tmp_path, capsys):
    out = tmp_path / "never"
    text = f"experiment: stopline\noutput: {out}\nmeasure: binary\ngrids:\n  eta: [0.1]\ntest_functions:\n  - one\n  - ind:0.9,0.1\n"
    assert _run(tmp_path, text) == 2
    assert "cfg.yaml:8:" in capsys.readouterr().err
    assert not out.exists()


def test_yaml_syntax_error(tmp_path, capsys):
    assert _run(tmp_path, "experiment: [phi\n") == 2
    assert "YAML syntax error" in capsys.readouterr().err


def test_missing_grid(tmp_path, capsys):
    assert _run(tmp_path, f"experiment: decay\noutput: {tmp_path}/o\nmeasure: mixture\n") == 2
    assert "needs a 't' grid" in capsys.readouterr().err


def test_hypothesis_violation_exit_2(tmp_path):
    out = tmp_path / "never"
    text = f"experiment: spine\noutput: {out}\nmeasure: dissipative\ngrids: {{p: [0.5], q: [1], t: [1]}}\nmc: {{n_paths: 10}}\n"
    assert _run(tmp_path, text) == 2
    assert not out.exists()


def test_custom_measure_and_schedule(tmp_path):
    out = tmp_path / "imm"
    text = f"""
experiment: immigration
output: {out}
measure:
  - {{weight: 1, ratios: [0.5, 0.25]}}
schedule: {{u: [1], rate: 1, theta: 0.5, horizon: 3, mark: {{atoms: [{{weight: 1, masses: [0.6, 0.4]}}]}}}}
grids: {{eta: [0.1], p: [0.5], t: [1, 3]}}
mc: {{n_paths: 50, batch: 20}}
"""
    assert _run(tmp_path, text) == 0
    summary = (out / "summary.csv").read_text()
    assert "rhoI,0.1," in summary and "MI(p=0.5),3.0," in summary
    assert (out / "composite.csv").read_text().startswith("path_id,j,grid,value")


@pytest.mark.parametrize(
    "kind,extra,files",
    [
        ("simulate", "grids: {p: [0.5], t: [1, 2]}", {"summary.csv", "events.csv"}),
        ("stopline", "grids: {eta: [0.1, 0.01]}\ntest_functions: ['ind:0.4,0.8']", {"summary.csv", "stopped.csv"}),
        ("characteristic", "grids: {eta: [0.1]}\ncharacteristics: [count, 'adapter:one']", {"summary.csv"}),
        ("spine", "grids: {p: [0.5], q: [1], t: [1]}", {"summary.csv", "spine.csv"}),
        ("decay", "grids: {t: [2, 3, 4]}\nmc: {n_paths: 30, bootstrap_n: 50}", {"summary.csv"}),
    ],
)
def test_kinds_reproducible(tmp_path, kind, extra, files):
    outs = []
    for k in range(2):
        out = tmp_path / f"{kind}{k}"
        text = f"experiment: {kind}\noutput: {out}\nmeasure: mixture\n{extra}\n"
        if "mc:" not in extra:
            text += "mc: {n_paths: 60, batch: 25}\n"
        assert _run(tmp_path, text, f"{kind}{k}.yaml") == 0
        outs.append(out)
    assert set(os.listdir(outs[0])) == files | {"manifest.json"}
    for f in files:
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_workers_do_not_change_csv(tmp_path):
    text = "experiment: stopline\noutput: {out}\nmeasure: mixture\ngrids: {{eta: [0.05]}}\nmc: {{n_paths: 200, batch: 30}}\n"
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--log-level", "ERROR", "--workers", "1", "run", _write(tmp_path, "a.yaml", text.format(out=a))]) == 0
    assert main(["--log-level", "ERROR", "--workers", "4", "run", _write(tmp_path, "b.yaml", text.format(out=b))]) == 0
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()


def test_verify_subset_writes_verdict(tmp_path):
    out = tmp_path / "v"
    cfg = _write(tmp_path, "v.yaml", f"experiment: verify\noutput: {out}\nacceptance: {{criteria: [1, 4]}}\n")
    assert main(["--log-level", "ERROR", "verify", cfg]) == 0
    doc = json.loads((out / "verdict.json").read_text())
    assert doc["passed"] and [c["criterion"] for c in doc["criteria"]] == [1, 4]
    for c in doc["criteria"]:
        for chk in c["checks"]:
            assert {"observed", "expected", "tolerance", "passed"} <= set(chk)


def test_verify_failure_exit_1(tmp_path):
    out = tmp_path / "v"
    text = f"experiment: verify\noutput: {out}\nacceptance: {{criteria: [5], overrides: {{'5': {{n_paths: 300, batch: 300}}}}}}\n"
    assert main(["--log-level", "ERROR", "verify", _write(tmp_path, "v.yaml", text)]) == 1
    assert json.loads((out / "verdict.json").read_text())["passed"] is False


def test_verify_rejects_other_kinds(tmp_path):
    cfg = _write(tmp_path, "p.yaml", f"experiment: phi\noutput: {tmp_path}/o\nmeasure: binary\ngrids: {{p: [0]}}\n")
    assert main(["verify", cfg]) == 2


def test_shipped_acceptance_config_valid():
    ex = load_text(open(shipped_acceptance_path()).read())
    assert ex.kind == "verify" and ex.criteria == list(range(1, 12))


def test_schema_subcommand(capsys):
    assert main(["schema"]) == 0
    assert json.loads(capsys.readouterr().out)["properties"]["experiment"]["enum"] == list(SCHEMA["properties"]["experiment"]["enum"])


def test_json_config_accepted():
    ex = load_text(json.dumps({"experiment": "phi", "output": "x", "measure": "binary", "grids": {"p": [0.0]}}))
    assert ex.grids["p"] == [0.0]


def test_config_error_lists_all_schema_problems():
    with pytest.raises(ConfigError) as e:
        load_text("experiment: nope\noutput: 3\nbogus: 1\n", "c.yaml")
    assert len(e.value.diagnostics) == 3


def test_console_script_entry():
    r = subprocess.run([sys.executable, "-m", "fragim.cli", "schema"], capture_output=True, text=True)
    assert r.returncode == 0 and yaml.safe_load(r.stdout)["title"] == "fragim experiment config"

import json
import subprocess
import sys
from pathlib import Path

import pytest

from poisson_suspensions.cli.config import build, load_config
from poisson_suspensions.cli.main import (EXIT_BUDGET, EXIT_CONFIG, EXIT_FAIL, EXIT_OK,
                                          bundled_configs, list_experiments, main, run_experiment)
from poisson_suspensions.errors import ConfigError

HITTING = """
schema_version = 1
kind = "sample"
name = "tiny_hitting"
anchor = "hitting probability"
seed = 5
replicas = {replicas}
runtime_budget_s = {budget}

[intensity]
components = [{{ label = "R", kind = "constant" }}]

[regions]
unit = {{ component = "R", lower = [0.0], upper = [1.0] }}

[[tests]]
type = "{test}"
region = "unit"
{extra}
"""


def write(tmp_path, replicas=2000, budget=60, test="hitting", extra=""):
    p = tmp_path / "cfg.toml"
    p.write_text(HITTING.format(replicas=replicas, budget=budget, test=test, extra=extra))
    return p


def test_zero_replicas_is_config_error(tmp_path, capsys):
    assert main(["run", str(write(tmp_path, replicas=0)), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_missing_file_is_config_error(tmp_path):
    assert main(["run", str(tmp_path / "absent.toml")]) == EXIT_CONFIG


def test_unknown_region_is_config_error(tmp_path):
    p = write(tmp_path)
    p.write_text(p.read_text().replace('region = "unit"', 'region = "nowhere"'))
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_schema_violation_names_the_field():
    with pytest.raises(ConfigError, match="kind"):
        build({"schema_version": 1, "kind": "bogus", "name": "x", "seed": 1,
               "intensity": {"components": [{"label": "R", "kind": "constant"}]}})


def test_passing_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", str(write(tmp_path)), "--out", str(out)]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out
    summary = json.loads((out / "summary.json").read_text())
    assert summary["passed"] and summary["schema_version"] == 1
    rep = [json.loads(line) for line in (out / "reports.jsonl").read_text().splitlines()]
    assert rep[0]["details"]["expected"] == pytest.approx(0.6321205588285577)


def test_failing_assertion_exit_one(tmp_path):
    # a zero-width band around the hitting probability cannot hold for a sample frequency
    p = write(tmp_path, extra="sigmas = 0.0")
    code, summary = run_experiment(p, out=tmp_path / "o")
    assert code == EXIT_FAIL and not summary["passed"]


def test_budget_exceeded_exit_three(tmp_path):
    p = write(tmp_path, replicas=20000, budget=1e-3)
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == EXIT_BUDGET


def test_replica_multiplier_and_seed_override(tmp_path):
    p = write(tmp_path)
    _, a = run_experiment(p, seed=9, replica_scale=0.5, out=tmp_path / "a")
    assert a["seed"] == 9 and a["replica_scale"] == 0.5
    rep = json.loads((tmp_path / "a" / "reports.jsonl").read_text().splitlines()[0])
    assert rep["replicas"] == 1000


def test_rerun_is_byte_identical(tmp_path):
    p = write(tmp_path)
    run_experiment(p, out=tmp_path / "a")
    run_experiment(p, out=tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_catalog():
    cat = list_experiments()
    assert len(cat) >= 8
    assert all(e["anchor"] for e in cat)
    assert json.loads(json.dumps(cat)) == cat
    assert {e["kind"] for e in cat} == {"sample", "equivariance", "ergodic", "mixing", "chaos", "cf",
                                        "maharam", "witness"}


def test_list_command_prints_json(capsys):
    assert main(["list"]) == EXIT_OK
    assert len(json.loads(capsys.readouterr().out)) >= 8


@pytest.mark.parametrize("path", bundled_configs(), ids=lambda p: p.stem)
def test_bundled_configs_validate(path):
    cfg = load_config(path)
    assert cfg.name == path.stem


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "poisson_suspensions.cli.main", "list"],
                       capture_output=True, text=True, check=True)
    assert json.loads(r.stdout)

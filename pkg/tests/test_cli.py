import json

import pytest

from podreach import cli
from podreach.cli import EXIT_CONFIG, EXIT_CORRUPT, EXIT_MISMATCH, EXIT_OK, main

SMALL = {"schema_version": 1, "solver": {"horizon": 2, "belief_count": 5, "reduce_to": 10, "probe_count": 2},
         "sweep": {"mu0_grid": [18.0, 19.5, 21.0], "n_runs": 5}}


def _config(tmp_path, doc=None, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(SMALL if doc is None else doc), encoding="utf-8")
    return str(path)


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    d = tmp_path_factory.mktemp("solve")
    cfg = _config(d)
    assert main(["solve", "--config", cfg, "--out", str(d / "out")]) == EXIT_OK
    return d, cfg


def test_solve_writes_policy_and_report(solved):
    d, _ = solved
    report = json.loads((d / "out" / "solve_report.json").read_text())
    assert (d / "out" / "policy.json").is_file()
    assert report["horizon"] == 2 and report["belief_count"] == 5 and report["policy_file"] == "policy.json"
    assert len(report["gamma_sizes"]) == 3 and report["gamma_sizes"][-1] == 1
    assert report["delta_diagnostic"] >= 0 and "estimate" in report["delta_diagnostic_note"]
    assert report["wall_time_s"] > 0


def test_solve_is_byte_identical(solved, tmp_path):
    d, cfg = solved
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "policy.json").read_bytes() == (d / "out" / "policy.json").read_bytes()


def test_output_dir_is_relative_to_config(tmp_path):
    doc = dict(SMALL, output_dir="results", solver=dict(SMALL["solver"], horizon=1, belief_count=2))
    assert main(["solve", "--config", _config(tmp_path, doc)]) == EXIT_OK
    assert (tmp_path / "results" / "policy.json").is_file()


def test_missing_model_file(tmp_path, capsys):
    doc = dict(SMALL, model="nowhere/model.json")
    assert main(["solve", "--config", _config(tmp_path, doc)]) == EXIT_CONFIG
    assert "nowhere" in capsys.readouterr().err


@pytest.mark.parametrize("doc", [
    dict(SMALL, colour="red"),
    dict(SMALL, solver=dict(SMALL["solver"], speed=3)),
    dict(SMALL, model_params={"gain": 1.0}),
    dict(SMALL, schema_version=2),
    {k: v for k, v in SMALL.items() if k != "schema_version"},
    dict(SMALL, solver=dict(SMALL["solver"], horizon=0)),
    dict(SMALL, sweep=dict(SMALL["sweep"], mu0_grid=[19.0, 18.0])),
])
def test_invalid_config(tmp_path, doc):
    assert main(["solve", "--config", _config(tmp_path, doc)]) == EXIT_CONFIG


def test_missing_or_malformed_config(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "absent.json")]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{oops", encoding="utf-8")
    assert main(["solve", "--config", str(bad)]) == EXIT_CONFIG


def test_model_file_config(tmp_path, thermo):
    from podreach import save_model
    save_model(thermo, tmp_path / "model.json")
    doc = dict(SMALL, model="model.json", solver=dict(SMALL["solver"], horizon=1, belief_count=2))
    assert main(["solve", "--config", _config(tmp_path, doc), "--out", str(tmp_path / "o")]) == EXIT_OK


def test_sweep_rows(solved, tmp_path):
    d, cfg = solved
    out = tmp_path / "sw"
    assert main(["sweep", "--config", cfg, "--policy", str(d / "out" / "policy.json"), "--out", str(out)]) == EXIT_OK
    (csv_path,) = out.glob("sweep_T2_*.csv")
    lines = csv_path.read_bytes().decode().split("\r\n")
    assert lines[0] == "mu0,V_pbvi,mc_estimate,mc_stderr,u0"
    assert len([ln for ln in lines[1:] if ln]) == 3


def test_sweep_single_point_grid(solved, tmp_path):
    d, _ = solved
    cfg = _config(tmp_path, dict(SMALL, sweep={"mu0_grid": [19.75], "n_runs": 3}))
    assert main(["sweep", "--config", cfg, "--policy", str(d / "out" / "policy.json"),
                 "--out", str(tmp_path)]) == EXIT_OK
    (csv_path,) = tmp_path.glob("sweep_T2_*.csv")
    assert len(csv_path.read_text().splitlines()) == 2


def test_sweep_horizon_mismatch(solved, tmp_path):
    d, _ = solved
    cfg = _config(tmp_path, dict(SMALL, solver=dict(SMALL["solver"], horizon=3)))
    assert main(["sweep", "--config", cfg, "--policy", str(d / "out" / "policy.json"),
                 "--out", str(tmp_path)]) == EXIT_MISMATCH


def test_sweep_model_mismatch(solved, tmp_path):
    d, _ = solved
    cfg = _config(tmp_path, dict(SMALL, model_params={"actuation_prob": 0.8}))
    assert main(["sweep", "--config", cfg, "--policy", str(d / "out" / "policy.json"),
                 "--out", str(tmp_path)]) == EXIT_MISMATCH


def test_stationary_sweep_ignores_horizon(solved, tmp_path):
    d, _ = solved
    doc = dict(SMALL, solver=dict(SMALL["solver"], horizon=4), sweep={"mu0_grid": [19.75], "n_runs": 3,
                                                                     "stationary": True})
    assert main(["sweep", "--config", _config(tmp_path, doc), "--policy", str(d / "out" / "policy.json"),
                 "--out", str(tmp_path)]) == EXIT_OK


def test_seed_override_changes_output_name(solved, tmp_path):
    d, cfg = solved
    pol = str(d / "out" / "policy.json")
    for seed in ("1", "2"):
        assert main(["sweep", "--config", cfg, "--policy", pol, "--seed", seed, "--out", str(tmp_path)]) == EXIT_OK
    assert len(list(tmp_path.glob("sweep_T2_*.csv"))) == 2


@pytest.mark.parametrize("mu0,action", [(18.0, 1), (21.0, 0)])
def test_inspect_threshold_policy(stack_T20, tmp_path, capsys, mu0, action):
    pol = tmp_path / "policy.json"
    stack_T20.save(pol)
    cfg = _config(tmp_path, {"schema_version": 1, "inspect": {"mu0": mu0}})
    assert main(["inspect", "--config", cfg, "--policy", str(pol)]) == EXIT_OK
    line = capsys.readouterr().out.strip()
    assert line.startswith(f"mu0={mu0} t=0 value=") and line.endswith(f"action={action}")


def test_inspect_requires_policy(tmp_path):
    assert main(["inspect", "--config", _config(tmp_path)]) == EXIT_CONFIG
    assert main(["inspect", "--config", _config(tmp_path), "--policy", str(tmp_path / "none.json")]) == EXIT_CONFIG


def test_inspect_time_out_of_range(solved, tmp_path):
    d, _ = solved
    cfg = _config(tmp_path, {"schema_version": 1, "inspect": {"t": 9}})
    assert main(["inspect", "--config", cfg, "--policy", str(d / "out" / "policy.json")]) == EXIT_MISMATCH


@pytest.mark.parametrize("payload", [b"{not json", b'{"format": "podreach-policy", "version": 1}',
                                     b"\x00\xff\xfe"])
def test_corrupt_policy(tmp_path, payload):
    pol = tmp_path / "policy.json"
    pol.write_bytes(payload)
    assert main(["inspect", "--config", _config(tmp_path), "--policy", str(pol)]) == EXIT_CORRUPT


def test_bad_command_line(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["fly", "--config", _config(tmp_path)])
    assert e.value.code == EXIT_CONFIG
    assert main(["solve", "--config", _config(tmp_path), "--threads", "0"]) == EXIT_CONFIG


def test_module_exit_codes_are_distinct():
    codes = [cli.EXIT_OK, cli.EXIT_CONFIG, cli.EXIT_NUMERIC, cli.EXIT_MISMATCH, cli.EXIT_CORRUPT]
    assert codes == [0, 2, 3, 4, 5]

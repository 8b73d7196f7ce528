import csv
import json

import pytest

from sle_lab import cli


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def test_pde_check_kappa0(tmp_path):
    assert cli.main(["--out-dir", str(tmp_path), "pde-check", "--kappa", "0"]) == 0
    v = read_json(tmp_path / "verdict.json")
    assert v["pass"] is True
    assert set(v["max_residual"]) == {"k0_G", "k0_G_I"}
    assert max(v["max_residual"].values()) < 1e-7
    m = read_json(tmp_path / "manifest.json")
    assert m["exit_code"] == 0 and m["subcommand"] == "pde-check"
    assert {"python", "numpy", "scipy", "numba"} <= set(m["versions"])


def test_empty_subcommand(capsys):
    assert cli.main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kappa": 2.0, "bogus": 1}))
    assert cli.main(["--out-dir", str(tmp_path), "fk-solve", "--config", str(cfg)]) == 2
    with pytest.raises(cli.ConfigError):
        cli.resolve("fk-solve", {}, str(cfg))


def test_config_then_flags():
    par = cli.resolve("experiment", {"n": 7, "kind": None})
    assert par["n"] == 7 and par["kind"] == "endpoint"


def test_fk_solve_columns(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n_paths": 500, "x": [0.8], "seed": 3}))
    assert cli.main(["--out-dir", str(tmp_path), "fk-solve", "--config", str(cfg)]) == 0
    with open(tmp_path / "fk_solve.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x", "lambda", "stderr", "psi", "psi_stderr"]
    assert len(rows) == 2
    assert read_json(tmp_path / "manifest.json")["seed"]["seed"] == 3


def test_manifest_round_trip(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert cli.main(["--out-dir", str(a), "sample-trace", "--seed", "5", "--n-trace", "8"]) == 0
    assert cli.main(["--out-dir", str(b), "--from-manifest", str(a / "manifest.json")]) == 0
    for name in read_json(a / "manifest.json")["artifacts"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_experiment_endpoint_small(tmp_path):
    args = ["--out-dir", str(tmp_path), "experiment", "--kind", "endpoint", "--n", "150",
            "--seed", "7", "--refine", "false"]
    code = cli.main(args)
    v = read_json(tmp_path / "verdict.json")
    assert code == (0 if v["pass"] else 1)
    assert 0 <= v["report"]["p_value"] <= 1 and v["report"]["dof"] == 15
    with open(tmp_path / "observables.csv") as fh:
        assert sum(1 for _ in fh) == 151

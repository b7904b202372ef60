import csv
import json
import subprocess
import sys

import pytest

from qpdyn.cli import main, schema_for, validate_config, ConfigError


def run_cli(tmp_path, command, cfg, *extra, out="out"):
    path = tmp_path / f"{command}.json"
    path.write_text(json.dumps(cfg))
    target = tmp_path / out
    code = main([command, str(path), "--out", str(target), *extra])
    return code, target


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_frequency(tmp_path):
    code, out = run_cli(tmp_path, "frequency", {"frequency": {"kind": "diophantine", "depth": 20},
                                                "N_verify": 1000})
    assert code == 0
    rows = read_csv(out / "convergents.csv")
    assert rows[0] == ["k", "a_k", "p_k", "q_k"] and rows[1][1] == "1"
    summary = json.loads((out / "frequency.json").read_text())
    assert summary["condition_margin"]["holds"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "frequency" and "frequency.json" in manifest["outputs"]


def test_discrepancy(tmp_path):
    cfg = {"frequency": {"kind": "diophantine"}, "Ns": [100, 1000]}
    code, out = run_cli(tmp_path, "discrepancy", cfg)
    assert code == 0
    rows = read_csv(out / "discrepancy.csv")
    assert len(rows) == 3
    assert float(rows[1][1]) <= float(rows[1][2])  # exact below ETK


def test_lyapunov(tmp_path):
    cfg = {"potential": {"lambda": 3.0}, "energies": [[0.0, 0.0], [0.5, 0.1]], "Ns": [50, 100],
           "theta_samples": 64, "workers": 1}
    code, out = run_cli(tmp_path, "lyapunov", cfg)
    assert code == 0
    assert len(read_csv(out / "lyapunov.csv")) == 5


def test_ldt(tmp_path):
    cfg = {"energy": [0.0, 0.0], "Ns": [50, 100], "theta_samples": 2000, "workers": 1}
    code, out = run_cli(tmp_path, "ldt", cfg)
    assert code == 0
    assert "c2_fit" in json.loads((out / "ldt.json").read_text())


def test_greenbox_with_dump(tmp_path):
    cfg = {"N": 200, "psi_delta": 0.3, "thetas": [0.1], "z_points": 4, "workers": 1}
    code, out = run_cli(tmp_path, "greenbox", cfg, "--dump-green")
    assert code == 0
    summary = json.loads((out / "greenbox.json").read_text())
    assert summary["found_fraction"] == 1.0
    assert (out / "green_heat.csv").exists()


def test_moments_and_verify(tmp_path):
    base = {"potential": {"lambda": 3.0}, "T_grid": {"logspace": [1, 3, 6]}, "box_half_width": 60}
    code, out = run_cli(tmp_path, "moments", base, out="m")
    assert code == 0
    assert len(read_csv(out / "moments.csv")) == 7
    cfg = dict(base, bounds=[{"theorem": "qdDC", "gamma": 1.0}])
    code, out = run_cli(tmp_path, "verify-bounds", cfg, out="v")
    assert code == 0
    rows = read_csv(out / "verify_bounds.csv")
    assert rows[0] == ["T", "moment", "bound", "ratio", "theorem_tag"]
    assert all(r[4] == "qdDC" for r in rows[1:])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["calibration_constants"]["qdDC"] > 0


def test_malformed_config_exit_2(tmp_path, capsys):
    code, _ = run_cli(tmp_path, "discrepancy", {"Ns": [100], "bogus": 1})
    assert code == 2
    assert "bogus" in capsys.readouterr().err


def test_wrong_type_field_named(tmp_path, capsys):
    code, _ = run_cli(tmp_path, "lyapunov", {"energies": [[0, 0]], "Ns": ["ten"]})
    assert code == 2
    assert "Ns" in capsys.readouterr().err


def test_unreadable_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["frequency", str(bad)]) == 2


def test_domain_error_exit_2(tmp_path):
    cfg = {"T_grid": [10.0], "bounds": [{"theorem": "qdLiou", "gamma": 0.5}]}
    code, _ = run_cli(tmp_path, "verify-bounds", cfg)
    assert code == 2


def test_box_too_small_exit_3(tmp_path):
    cfg = {"potential": {"lambda": 0.0}, "T_grid": [100.0], "box_half_width": 10}
    code, _ = run_cli(tmp_path, "moments", cfg)
    assert code == 3


def test_deterministic_csv(tmp_path):
    cfg = {"N": 200, "psi_delta": 0.3, "theta_samples": 3, "seed": 11, "z_points": 4, "workers": 1}
    _, a = run_cli(tmp_path, "greenbox", cfg, out="a")
    _, b = run_cli(tmp_path, "greenbox", cfg, out="b")
    assert (a / "greenbox.csv").read_bytes() == (b / "greenbox.csv").read_bytes()


def test_env_override(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv("QPDYN_OUTPUT_DIR", str(target))
    run_cli(tmp_path, "discrepancy", {"Ns": [100]}, out="ignored")
    assert (target / "discrepancy.csv").exists()
    assert not (tmp_path / "ignored").exists()


def test_schemas_reject_extra_keys():
    with pytest.raises(ConfigError):
        validate_config("moments", {"T_grid": [1.0], "extra": True})
    assert schema_for("ldt")["additionalProperties"] is False


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "qpdyn", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "verify-bounds" in proc.stdout

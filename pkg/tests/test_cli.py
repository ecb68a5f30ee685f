import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from fraclap import io
from fraclap.cli import EXIT_FAIL, EXIT_FORMAT, EXIT_OK, EXIT_USAGE, fmt, main, parse_fraction


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_fraction_parsing():
    assert str(parse_fraction("1/256")) == "1/256"
    assert str(parse_fraction(" 0.25 ")) == "1/4"
    for bad in ["1/x", "1/0", "-1/4", "0", ""]:
        with pytest.raises(Exception):
            parse_fraction(bad)


def test_fmt_round_trip():
    x = 0.1 + 0.2
    assert float(fmt(x)) == x
    assert fmt(None) == "" and fmt(float("nan")) == ""


def test_op_error_single_level_empty_rates(tmp_path):
    code = main(["op-error", "--alpha", "0.4", "--s", "1", "--h", "1/4",
                 "--ref-h", "1/32", "--out", str(tmp_path)])
    assert code == EXIT_OK
    rows = read_csv(tmp_path / "op_error.csv")
    assert list(rows[0]) == ["h", "err_inf", "rate_inf", "err_2", "rate_2"]
    assert len(rows) == 1 and rows[0]["rate_inf"] == "" and rows[0]["rate_2"] == ""
    assert float(rows[0]["err_inf"]) > 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["config"]["alpha"] == 0.4


def test_malformed_fraction_writes_nothing(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["op-error", "--h", "1/x", "--out", str(out)]) == EXIT_USAGE
    assert not out.exists()
    assert "fraction" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["poisson", "--rhs", "two"],
    ["poisson", "--rhs", "manufactured:s=2", "--h", "1/8"],          # no reference mesh
    ["allen-cahn", "--tau", "0"],
    ["allen-cahn", "--centers", "0.4,0.4"],
    ["op-error", "--alpha", "2.5"],
    ["op-error", "--h", "1/16", "--ref-h", "1/40"],
    ["stencil", "verify"],
    ["poisson", "--compare", "successive", "--h", "1/8"],                # needs --rhs one
])
def test_validation_exit_2(tmp_path, argv):
    out = tmp_path / "run"
    assert main(argv + ["--out", str(out)]) == EXIT_USAGE
    assert not out.exists()


def test_unknown_flag_exit_2(capsys):
    assert main(["op-error", "--bogus"]) == EXIT_USAGE


def test_poisson_one_max_inside(tmp_path):
    code = main(["poisson", "--rhs", "one", "--alpha", "1.5", "--h", "1/16",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    u = io.read_field(tmp_path / "u_N32.frlp").as_array()
    i, j = np.unravel_index(np.argmax(u), u.shape)
    assert 0 < i < u.shape[0] - 1 and 0 < j < u.shape[1] - 1
    assert not (tmp_path / "poisson_error.csv").exists()


def test_poisson_manufactured_csv(tmp_path):
    code = main(["poisson", "--alpha", "1.0", "--h", "1/4,1/8", "--ref-h", "1/64",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    rows = read_csv(tmp_path / "poisson_error.csv")
    assert [r["h"] for r in rows] == ["0.25", "0.125"]
    assert float(rows[1]["err_inf"]) < float(rows[0]["err_inf"])


def test_poisson_successive_csv(tmp_path):
    code = main(["poisson", "--rhs", "one", "--compare", "successive", "--alpha", "0.5",
                 "--h", "1/8,1/16", "--out", str(tmp_path)])
    assert code == EXIT_OK
    rows = read_csv(tmp_path / "poisson_error.csv")
    assert len(rows) == 2 and rows[0]["rate_inf"] == "" and float(rows[1]["rate_inf"]) > 0


def test_allen_cahn_zero_end_time(tmp_path):
    code = main(["allen-cahn", "--h", "1/32", "--t-end", "0", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert sorted(p.name for p in tmp_path.glob("snapshot_*.frlp")) == ["snapshot_0000.frlp"]
    rows = read_csv(tmp_path / "mass.csv")
    assert list(rows[0]) == ["t", "mass"] and len(rows) == 1


def test_allen_cahn_short_run(tmp_path):
    code = main(["allen-cahn", "--h", "1/64", "--t-end", "0.02", "--out", str(tmp_path)])
    assert code == EXIT_OK
    snaps = sorted(tmp_path.glob("snapshot_*.frlp"))
    assert len(snaps) >= 2
    m = [float(r["mass"]) for r in read_csv(tmp_path / "mass.csv")]
    assert len(m) == 21
    assert all(b < a for a, b in zip(m[5:], m[6:]))


def test_allen_cahn_picard_failure_exit_1(tmp_path):
    code = main(["allen-cahn", "--h", "1/32", "--t-end", "0.002", "--plain-picard",
                 "--picard-max", "2", "--out", str(tmp_path)])
    assert code == EXIT_FAIL
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "failed" and manifest["results"]["step"] == 1


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"alpha": 0.7, "s": 1.0, "h": "1/4", "ref_h": "1/32"}))
    out = tmp_path / "a"
    assert main(["op-error", "--config", str(cfg), "--alpha", "0.3", "--out", str(out)]) == 0
    conf = json.loads((out / "manifest.json").read_text())["config"]
    assert conf["alpha"] == 0.3          # flag beats file
    assert conf["s"] == 1.0              # file beats default
    assert conf["gamma"] == 2.0          # default
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"alpha": 0.7, "nonsense": 1}))
    assert main(["op-error", "--config", str(bad), "--out", str(tmp_path / "b")]) == EXIT_USAGE


def test_manifest_rerun_reproduces_csv(tmp_path):
    first = tmp_path / "first"
    argv = ["op-error", "--alpha", "1.0", "--h", "1/4,1/8", "--ref-h", "1/64", "--out", str(first)]
    assert main(argv) == EXIT_OK
    second = tmp_path / "second"
    assert main(["op-error", "--config", str(first / "manifest.json"),
                 "--out", str(second)]) == EXIT_OK
    assert (first / "op_error.csv").read_bytes() == (second / "op_error.csv").read_bytes()
    m1 = json.loads((first / "manifest.json").read_text())
    m2 = json.loads((second / "manifest.json").read_text())
    m1["config"].pop("out")
    m2["config"].pop("out")
    assert m1["config"] == m2["config"]


def test_stencil_build_inspect_verify(tmp_path, capsys):
    path = tmp_path / "s.frst"
    assert main(["stencil", "build", "--alpha", "1.3", "--N", "16", "--output", str(path),
                 "--out", str(tmp_path)]) == EXIT_OK
    st, header = io.read_stencil(path)
    assert header["N"] == 16 and header["h"] == 0.125
    assert main(["stencil", "inspect", str(path), "--out", str(tmp_path / "i")]) == EXIT_OK
    assert main(["stencil", "verify", str(path), "--out", str(tmp_path / "v")]) == EXIT_OK
    res = json.loads((tmp_path / "v" / "manifest.json").read_text())["results"]
    assert len(res["checked"]) == 10 and res["worst_rel"] <= 1e-12


def test_stencil_verify_detects_tampering(tmp_path):
    path = tmp_path / "s.frst"
    assert main(["stencil", "build", "--N", "8", "--output", str(path),
                 "--out", str(tmp_path)]) == EXIT_OK
    st, header = io.read_stencil(path)
    coeffs = st.coeffs.copy()
    coeffs[1:, 1:] *= 1.001
    from dataclasses import replace
    io.write_stencil(path, replace(st, coeffs=coeffs), header["rel_tol"])
    assert main(["stencil", "verify", str(path), "--out", str(tmp_path / "v")]) == EXIT_FAIL


def test_corrupt_magic_exit_3(tmp_path):
    path = tmp_path / "s.frst"
    assert main(["stencil", "build", "--N", "4", "--output", str(path),
                 "--out", str(tmp_path)]) == EXIT_OK
    raw = bytearray(path.read_bytes())
    raw[:4] = b"ABCD"
    path.write_bytes(bytes(raw))
    assert main(["stencil", "inspect", str(path), "--out", str(tmp_path / "i")]) == EXIT_FORMAT


def test_cache_dir_from_env(tmp_path, monkeypatch):
    monkeypatch.setenv("FRACLAP_CACHE_DIR", str(tmp_path / "cache"))
    assert main(["stencil", "build", "--N", "8", "--out", str(tmp_path)]) == EXIT_OK
    assert len(list((tmp_path / "cache").iterdir())) == 1


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fraclap.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "fraclap" in proc.stdout

"""CLI: subcommands, exit codes, artifact determinism."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ppcoupling.chain import GeometricBinaryModel, simulate_path
from ppcoupling.cli import build_density, build_model, build_space, main

COUPLE_CFG = """\
space: {kind: discrete, weights: [1.0, 1.0]}
densities:
  f: {kind: weights, values: [0.5, 0.5]}
  g: {kind: weights, values: [0.7, 0.3]}
"""

GEO_CFG = "model: {family: geometric-binary, c: 0.3, r: 0.5}\n"


@pytest.fixture
def couple_cfg(tmp_path):
    p = tmp_path / "couple.yaml"
    p.write_text(COUPLE_CFG)
    return p


@pytest.fixture
def geo_cfg(tmp_path):
    p = tmp_path / "geo.yaml"
    p.write_text(GEO_CFG)
    return p


def run_cli(args):
    return main([str(a) for a in args])


def test_race_json_fields(tmp_path):
    out = tmp_path / "out"
    code = run_cli(["--seed", 7, "--replicas", 20000, "--out-dir", out,
                    "race", "--p", "0.5,0.5", "--q", "0.7,0.3"])
    assert code == 0
    doc = json.loads((out / "race.json").read_text())
    assert doc["exact"] == pytest.approx(0.8, abs=1e-12)
    assert doc["tv"] == pytest.approx(0.2)
    assert doc["paper_lower_bound"] == pytest.approx(2 / 3)
    assert abs(doc["mc_estimate"] - 0.8) <= 3 * doc["stderr"]
    assert doc["meta"]["version"]
    assert doc["meta"]["config_hash"]


def test_couple_identical_densities_full_agreement(tmp_path):
    cfg = tmp_path / "same.yaml"
    cfg.write_text(
        "space: {kind: discrete, weights: [1.0, 1.0]}\n"
        "densities:\n  f: {kind: weights, values: [0.5, 0.5]}\n"
        "  g: {kind: weights, values: [0.5, 0.5]}\n"
    )
    out = tmp_path / "out"
    code = run_cli(["--seed", 3, "--replicas", 500, "--out-dir", out,
                    "--config", cfg, "couple"])
    assert code == 0
    doc = json.loads((out / "couple.json").read_text())
    assert doc["t_rate"] == 1.0 and doc["x_rate"] == 1.0


def test_couple_artifacts(tmp_path, couple_cfg):
    out = tmp_path / "out"
    code = run_cli(["--seed", 11, "--replicas", 2000, "--out-dir", out,
                    "--config", couple_cfg, "couple"])
    assert code == 0
    lines = (out / "couple.csv").read_text().splitlines()
    assert lines[0] == "seed,x_f,x_g,t_f,t_g,agree_t,agree_x"
    assert len(lines) == 2001


def test_determinism_byte_identical(tmp_path, couple_cfg):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run_cli(["--seed", 13, "--replicas", 1000, "--out-dir", out,
                        "--config", couple_cfg, "couple"]) == 0
        outs.append((out / "couple.csv").read_bytes() + (out / "couple.json").read_bytes())
    assert outs[0] == outs[1]


def test_missing_seed_exits_2(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "ppcoupling.cli", "race", "--p", "1", "--q", "1"],
        capture_output=True,
    )
    assert proc.returncode == 2


def test_bad_config_exits_2(tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("space: {kind: hyperbolic}\n")
    out = tmp_path / "out"
    code = run_cli(["--seed", 1, "--out-dir", out, "--config", cfg, "couple"])
    assert code == 2


def test_missing_config_file_exits_2(tmp_path):
    code = run_cli(["--seed", 1, "--out-dir", tmp_path, "--config",
                    tmp_path / "nope.yaml", "couple"])
    assert code == 2


def test_govern_roundtrip(tmp_path, geo_cfg):
    model = GeometricBinaryModel(0.3, 0.5)
    path = simulate_path(model, 99, 300)
    pcsv = tmp_path / "path.csv"
    pcsv.write_text("x\n" + "\n".join(str(int(v)) for v in path) + "\n")
    out = tmp_path / "out"
    code = run_cli(["--seed", 5, "--out-dir", out, "--config", geo_cfg,
                    "govern", "--path-csv", pcsv])
    assert code == 0
    doc = json.loads((out / "govern.json").read_text())
    assert doc["recursion_all_ok"] is True
    assert doc["exp1_ks_pvalue"] > 1e-4


def test_prime_subcommand(tmp_path, geo_cfg):
    out = tmp_path / "out"
    code = run_cli(["--seed", 9, "--replicas", 20000, "--out-dir", out,
                    "--config", geo_cfg, "prime", "--ell", "3", "--epsilon", "0.3"])
    assert code == 0
    doc = json.loads((out / "prime.json").read_text())
    assert len(doc["constants"]) == 3
    assert doc["conditional_mismatch"] <= 0.3 + 3 * max(doc["conditional_mismatch_stderr"], 1e-6)
    assert doc["zh_independence_pvalue"] > 1e-4


def test_influence_subcommand(tmp_path, geo_cfg):
    out = tmp_path / "out"
    code = run_cli(["--seed", 15, "--replicas", 800, "--out-dir", out,
                    "--config", geo_cfg, "influence", "--max-n", "4"])
    assert code == 0
    rows = (out / "influence.csv").read_text().splitlines()
    assert rows[0] == "n,delta_exact,eta_hat,eta_stderr"
    assert len(rows) == 6


def test_ppp_check_subcommand(tmp_path):
    out = tmp_path / "out"
    code = run_cli(["--seed", 17, "--replicas", 3000, "--out-dir", out, "ppp-check"])
    assert code == 0
    doc = json.loads((out / "ppp_check.json").read_text())
    assert doc["discrete"]["dispersion_ok"] and doc["interval"]["independence_ok"]
    assert doc["coincidence"]["discrete-pair"]["ok"]


def test_reconstruct_subcommand(tmp_path, geo_cfg):
    out = tmp_path / "out"
    code = run_cli(["--seed", 19, "--replicas", 4000, "--out-dir", out,
                    "--config", geo_cfg, "reconstruct", "--stages", "2", "--horizon", "4"])
    assert code == 0
    doc = json.loads((out / "reconstruct.json").read_text())
    assert doc["disagreement"]["checks"]["final_rate_within_3eps"]
    assert all(s["ok"] for s in doc["stagewise"])
    lines = (out / "reconstruct.csv").read_text().splitlines()
    assert lines[0] == "stage,replica,hit"


# -- config builders -------------------------------------------------------------------


def test_build_space_and_densities():
    sp = build_space({"kind": "interval", "lo": 0.0, "hi": 1.0})
    d = build_density(sp, {"kind": "linear", "lo_value": 0.0, "hi_value": 2.0})
    assert d.is_probability
    assert float(d.evaluate(np.array([1.0]))[0]) == pytest.approx(2.0)
    pw = build_density(
        sp, {"kind": "piecewise-constant", "breakpoints": [0.0, 0.5, 1.0], "values": [1.5, 0.5]}
    )
    assert pw.is_probability
    assert float(pw.evaluate(np.array([0.25]))[0]) == pytest.approx(1.5)


def test_build_model_families():
    assert build_model({"family": "geometric-binary", "c": 0.3, "r": 0.5}).memory
    assert build_model({"family": "iid-uniform"}).space.is_probability
    m = build_model({"family": "markov", "order": 1, "rows": [[0.9, 0.1], [0.2, 0.8]]})
    assert m.order == 1

import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from fwl.cli import main
from fwl.io_utils import read_csv


def run_cli(args, env_extra=None):
    env = dict(os.environ)
    env.setdefault("FWL_THREADS", "2")
    if env_extra:
        env.update(env_extra)
    return subprocess.run([sys.executable, "-m", "fwl.cli", *args],
                          capture_output=True, text=True, env=env)


def test_parse_valid_simulate(tmp_path):
    rc = main(["simulate", "--beta", "0.5", "--horizon", "2", "--seed", "7",
               "--replicas", "3", "--out", str(tmp_path)])
    assert rc == 0
    cols = read_csv(tmp_path / "observables.csv")
    assert set(cols) == {"time", "replica", "Z", "Y"}
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["complete"] is True
    assert "observables.csv" in man["files"]


def test_conflicting_model_block(tmp_path):
    rc = main(["simulate", "--beta", "0.5", "--N", "100", "--c", "0.5",
               "--horizon", "1", "--seed", "1", "--out", str(tmp_path)])
    assert rc == 1


def test_missing_seed(tmp_path):
    rc = main(["simulate", "--beta", "0.5", "--horizon", "1",
               "--out", str(tmp_path)])
    assert rc == 1


def test_below_threshold_names_n0(tmp_path):
    proc = run_cli(["simulate", "--N", "3", "--c", "0.5", "--horizon", "1",
                    "--seed", "1", "--out", str(tmp_path)])
    assert proc.returncode == 1
    assert "N0=4" in proc.stderr


def test_config_file_with_flag_override(tmp_path):
    cfgf = tmp_path / "cfg.json"
    cfgf.write_text(json.dumps({"beta": 0.5, "horizon": 1.0, "seed": 3,
                                "replicas": 2}))
    out = tmp_path / "out"
    rc = main(["simulate", "--config", str(cfgf), "--replicas", "4",
               "--out", str(out)])
    assert rc == 0
    cols = read_csv(out / "observables.csv")
    assert len(set(cols["replica"])) == 4  # flag overrode the file value


def test_spectral_outputs(tmp_path):
    rc = main(["spectral", "--N", "10000", "--c", "0.5",
               "--out", str(tmp_path), "--grid", "256"])
    assert rc == 0
    cols = read_csv(tmp_path / "profile.csv")
    assert list(cols) == ["x", "v1", "h", "h_tilde", "Pi", "Sigma_sq_cum"]
    assert len(cols["x"]) == 256
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["A_N"] is not None and summary["J_A"] > 0
    assert summary["sigma_sq_limit"] == pytest.approx(4096 * np.pi ** 2)


def test_manifest_reproducibility(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        rc = main(["simulate", "--beta", "0.5", "--horizon", "2", "--seed",
                   "11", "--replicas", "20", "--record-at", "1", "--out",
                   str(out)])
        assert rc == 0
    ma = json.loads((a / "manifest.json").read_text())["files"]
    mb = json.loads((b / "manifest.json").read_text())["files"]
    assert ma == mb  # identical content hashes


def test_worker_count_invariance(tmp_path):
    outs = {}
    for workers in ("1", "2"):
        out = tmp_path / f"w{workers}"
        proc = run_cli(["simulate", "--beta", "0.5", "--horizon", "2",
                        "--seed", "5", "--replicas", "50", "--out", str(out)],
                       env_extra={"FWL_THREADS": workers})
        assert proc.returncode == 0, proc.stderr
        outs[workers] = json.loads((out / "manifest.json").read_text())["files"]
    assert outs["1"] == outs["2"]


def test_interrupted_run_marks_incomplete(tmp_path):
    # a failing run leaves manifest.json with complete = false
    rc = main(["simulate", "--beta", "0.5", "--horizon", "-1", "--seed", "1",
               "--out", str(tmp_path)])
    assert rc == 1
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["complete"] is False


def test_verify_cli_reports(tmp_path):
    rc = main(["verify", "identities", "--beta", "0.5", "--out", str(tmp_path)])
    assert rc == 0
    reports = json.loads((tmp_path / "reports.json").read_text())["reports"]
    assert all(r["verdict"] == "pass" for r in reports)


def test_verify_cli_bit_exact_rerun(tmp_path):
    """Same seed twice: every artifact byte-identical."""
    hashes = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        rc = main(["verify", "moments", "--beta", "0.5", "--t", "1.0",
                   "--replicas", "2000", "--seed", "9", "--k", "2",
                   "--out", str(out)])
        assert rc == 0
        hashes.append(json.loads((out / "manifest.json").read_text())["files"])
    assert hashes[0] == hashes[1]


def test_spine_and_cpp_subcommands(tmp_path):
    rc = main(["spine-sample", "--beta", "0.5", "--k", "2", "--t", "1.5",
               "--x", "1.0", "--n", "50", "--seed", "3",
               "--out", str(tmp_path / "sp")])
    assert rc == 0
    cols = read_csv(tmp_path / "sp" / "spine_samples.csv")
    assert "log_delta" in cols and len(cols["sample_id"]) == 50

    rc = main(["spine-quadrature", "--beta", "0.5", "--k", "2", "--t", "1.0",
               "--x", "1.0", "--out", str(tmp_path / "sq")])
    assert rc == 0
    val = json.loads((tmp_path / "sq" / "spine_quadrature.json").read_text())
    assert val["error_estimate"] < 1e-6 * abs(val["value"]) + 1e-12

    rc = main(["cpp-sample", "--k", "3", "--T", "1.0", "--n", "40",
               "--seed", "2", "--out", str(tmp_path / "cs")])
    assert rc == 0
    cols = read_csv(tmp_path / "cs" / "cpp_samples.csv")
    assert "d_1_3" in cols

    rc = main(["cpp-moment", "--k", "2", "--T", "1.0", "--n", "20000",
               "--seed", "2", "--phi", "one", "--out", str(tmp_path / "cm")])
    assert rc == 0
    res = json.loads((tmp_path / "cm" / "cpp_moment.json").read_text())
    assert res["formula"] == pytest.approx(2.0, rel=1e-9)
    assert abs(res["mc"] - 2.0) < 3 * res["se"]

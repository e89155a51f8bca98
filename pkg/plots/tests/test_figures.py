"""Figure-rendering tests, on canned schema-v1 fixtures plus (when the
simulator package is importable) the real beta = 0.995 profile."""

import json
import math
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from fwlplots import figures
from fwlplots.cli import main
from fwlplots.io import SchemaError, read_csv


def _write_csv(path, fields, rows):
    lines = ["# schema=v1", ",".join(fields)]
    lines += [",".join(repr(float(v)) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _write_json(path, obj):
    obj = dict(obj)
    obj.setdefault("schema", "v1")
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))


@pytest.fixture()
def artifact_dir(tmp_path):
    """Schema-conformant miniature artifact set."""
    L = 30.45
    x = np.linspace(0, L, 512)
    h_t = np.exp(0.995 * x) * np.sin(0.0999 * (L - x))
    h_t /= np.max(h_t)
    h = np.exp(-0.995 * x) * np.sin(0.0999 * (L - x))
    s2 = np.cumsum(np.exp(-x) * np.sin(0.0999 * (L - x)) ** 3)
    _write_csv(tmp_path / "profile.csv",
               ["x", "v1", "h", "h_tilde", "Pi", "Sigma_sq_cum"],
               zip(x, np.sin(0.0999 * (L - x)), h, h_t, h * h_t, s2))
    _write_json(tmp_path / "summary.json", {"beta": 0.995, "L": L, "A_N": 8.0})
    rng = np.random.default_rng(1)
    _write_csv(tmp_path / "yaglom_t100.csv", ["z_rescaled"],
               [(v,) for v in rng.exponential(size=400)])
    _write_csv(tmp_path / "feller_t1.csv", ["ybar0", "ybar", "zbar"],
               zip(np.ones(300), rng.exponential(size=300),
                   rng.exponential(size=300)))
    _write_csv(tmp_path / "genealogy_k2.csv",
               ["depth_first_pair", "mrca_depth", "merge_pos_first"],
               zip(100 * rng.random(500), 100 * rng.random(500),
                   3 * rng.random(500)))
    _write_json(tmp_path / "reports.json", {"reports": [
        {"name": "kolmogorov_ratio_t100", "estimate": 1.60, "target": 1.615,
         "se": 0.01, "n_replicas": 1000, "rule": "rel 0.10",
         "verdict": "pass", "extra": {}},
        {"name": "extinction_bound_t100", "estimate": 0.016, "target": 0.02,
         "se": 0.0004, "n_replicas": 1000, "rule": "leq", "verdict": "pass",
         "extra": {}},
        {"name": "extinction_bound_t200", "estimate": 0.008, "target": 0.01,
         "se": 0.0003, "n_replicas": 1000, "rule": "leq", "verdict": "pass",
         "extra": {}},
        {"name": "yaglom_mean_t100", "estimate": 0.99, "target": 1.0,
         "se": 0.01, "n_replicas": 900, "rule": "rel 0.10",
         "verdict": "pass", "extra": {}},
        {"name": "feller_laplace_t1_lam1", "estimate": 0.61, "target": 0.62,
         "se": 0.004, "n_replicas": 1000, "rule": "rel 0.05",
         "verdict": "pass", "extra": {"H": 0.12}},
    ]})
    return tmp_path


def test_all_kinds_render(artifact_dir, tmp_path):
    for kind in ("profile", "survival", "yaglom", "laplace", "genealogy",
                 "reports"):
        out = tmp_path / f"{kind}.png"
        rc = main(["--kind", kind, "--in", str(artifact_dir),
                   "--out", str(out), "--t", "100" if kind == "yaglom" else "1"])
        assert rc == 0, kind
        assert out.exists() and out.stat().st_size > 2000


def test_missing_raw_csv_gives_summary_only(artifact_dir, tmp_path):
    (artifact_dir / "yaglom_t100.csv").unlink()
    out = tmp_path / "y.png"
    rc = main(["--kind", "yaglom", "--in", str(artifact_dir),
               "--out", str(out)])
    assert rc == 0
    assert out.exists()


def test_empty_csv_is_explicit_error(artifact_dir, tmp_path):
    (artifact_dir / "profile.csv").write_text(
        "# schema=v1\nx,v1,h,h_tilde,Pi,Sigma_sq_cum\n")
    rc = main(["--kind", "profile", "--in", str(artifact_dir),
               "--out", str(tmp_path / "p.png")])
    assert rc == 1


def test_schema_mismatch_rejected(artifact_dir, tmp_path):
    (artifact_dir / "profile.csv").write_text("x,v1\n0.0,1.0\n")
    with pytest.raises(SchemaError):
        read_csv(artifact_dir / "profile.csv")
    rc = main(["--kind", "profile", "--in", str(artifact_dir),
               "--out", str(tmp_path / "p.png")])
    assert rc == 1


def test_rendering_is_deterministic(artifact_dir, tmp_path):
    outs = []
    for name in ("a.png", "b.png"):
        out = tmp_path / name
        assert main(["--kind", "reports", "--in", str(artifact_dir),
                     "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def _have_fwl():
    try:
        import fwl  # noqa: F401
        return True
    except ImportError:
        return False


@pytest.mark.skipif(not _have_fwl(), reason="simulator package not installed")
def test_qualitative_profile_structure(tmp_path):
    """Acceptance: the beta = 0.995 profile has the expected shape.

    The stable-configuration bulk peaks within distance 3 of the killing
    boundary while at least 99% of the variance mass accumulates below
    L/2; the normalised variance share ends at 1.
    """
    spec_dir = tmp_path / "spec995"
    proc = subprocess.run([sys.executable, "-m", "fwl.cli", "spectral",
                           "--beta", "0.995", "--out", str(spec_dir)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    cols = read_csv(spec_dir / "profile.csv")
    L = float(json.loads((spec_dir / "summary.json").read_text())["L"])
    x = cols["x"]
    bulk = x[int(np.argmax(cols["h_tilde"]))]
    print(f"[{'PASS' if L - bulk <= 3 else 'FAIL'}] stable-configuration "
          f"bulk at {bulk:.2f}, boundary {L:.2f}")
    assert L - bulk <= 3.0
    s2 = np.maximum(cols["Sigma_sq_cum"], 0.0)
    share_below_half = s2[np.searchsorted(x, L / 2)] / s2[-1]
    print(f"[{'PASS' if share_below_half >= 0.99 else 'FAIL'}] variance "
          f"share below L/2: {share_below_half:.5f}")
    assert share_below_half >= 0.99
    assert s2[-1] > 0 and abs(s2[-1] / s2[-1] - 1.0) == 0.0
    out = tmp_path / "fig1.png"
    assert main(["--kind", "profile", "--in", str(spec_dir),
                 "--out", str(out)]) == 0
    assert out.exists()

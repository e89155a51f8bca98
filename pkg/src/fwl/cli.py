"""Command-line entry point.

Subcommands: spectral, simulate, spine-sample, spine-quadrature,
cpp-sample, cpp-moment, verify.  Options may come from a JSON config file
(--config); explicit flags override file values.  Every stochastic
subcommand requires a seed, and (config, seed) fully determines all
outputs including the replica-to-stream assignment; FWL_THREADS caps the
worker count without changing any number.

Artifacts: versioned CSVs, JSON summaries and a manifest.json carrying a
SHA-256 per emitted file.  The manifest is written up-front marked
incomplete and finalized on success, so interrupted runs are detectable.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import bbm, cpp, rng as rngmod, spine, verify
from . import spectral as sp
from .errors import ParamsError
from .io_utils import RunManifest, write_csv, write_json
from .params import ModelParams, params_for_drift, params_for_population


def model_from(cfg: dict) -> ModelParams:
    """Model block: exactly one of beta | (N, c)."""
    beta, N, c = cfg.get("beta"), cfg.get("N"), cfg.get("c")
    if beta is not None and (N is not None or c is not None):
        raise ParamsError("conflicting model block: give either --beta or "
                          "--N with --c, not both")
    if beta is not None:
        return params_for_drift(float(beta))
    if N is None or c is None:
        raise ParamsError("model block missing: give --beta or --N with --c")
    return params_for_population(int(N), float(c),
                                 float(cfg.get("loglog_coeff", 6.0)))


def _merge_config(args: argparse.Namespace) -> dict:
    """File values overridden by explicitly-set flags."""
    cfg = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            cfg.update(json.load(f))
    for key, val in vars(args).items():
        if key in ("config", "func", "command") or val is None:
            continue
        cfg[key] = val
    return cfg


def _require_seed(cfg: dict) -> int:
    if cfg.get("seed") is None:
        raise ParamsError("missing seed: stochastic subcommands require --seed")
    return int(cfg["seed"])


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg.get("out") or "fwl-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_init(spec_str: str):
    kind, _, val = spec_str.partition(":")
    if kind == "single":
        return ("single", float(val))
    if kind == "stable":
        return ("stable", int(val))
    raise ParamsError(f"init must be single:<x> or stable:<M>, got {spec_str!r}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_spectral(args):
    cfg = _merge_config(args)
    params = model_from(cfg)
    grid = int(cfg.get("grid", 2048))
    out = _out_dir(cfg)
    manifest = RunManifest(out, cfg)
    basis = sp.build_basis(params, K_max=int(cfg.get("K_max", 64)))
    xs = np.linspace(0.0, params.L, grid)
    cf = sp.closed_forms(params, xs)
    rows = zip(xs.tolist(), basis.v1(xs).tolist(), basis.h(xs).tolist(),
               basis.h_tilde(xs).tolist(), basis.pi_density(xs).tolist(),
               np.asarray(cf.Sigma_sq).tolist())
    manifest.add(write_csv(out / "profile.csv",
                           ["x", "v1", "h", "h_tilde", "Pi", "Sigma_sq_cum"],
                           rows))
    summary = {
        "beta": params.beta, "L": params.L, "c": params.c, "N": params.N,
        "gammas": basis.gammas.tolist(),
        "sigma_sq_limit": (sp.sigma_sq_limit_constant(params.c)
                           if params.c is not None else None),
        "Sigma_sq_L": float(sp.closed_forms(params, params.L).Sigma_sq),
        "A_N": None, "J_A": None,
    }
    if params.N is not None:
        stats = sp.best_class_stats(params)
        summary["A_N"] = stats.A_N
        summary["J_A"] = stats.expected_count_below_A / params.N
    manifest.add(write_json(out / "summary.json", summary))
    manifest.finalize()
    return 0


def cmd_simulate(args):
    cfg = _merge_config(args)
    params = model_from(cfg)
    seed = _require_seed(cfg)
    out = _out_dir(cfg)
    manifest = RunManifest(out, cfg)
    basis = sp.build_basis(params)
    init = _parse_init(cfg.get("init", "single:1.0"))
    horizon = float(cfg["horizon"])
    record_at = sorted(set(
        [float(t) for t in cfg.get("record_at", [])] + [horizon]))
    replicas = int(cfg.get("replicas", 1))
    sim_cfg = bbm.SimConfig(dt=float(cfg.get("dt", 1e-3)))
    try:
        run = bbm.run_observables(basis, init, record_at, replicas, seed,
                                  sim_cfg)
        rows = []
        for r in range(run.replicas):
            for j, t in enumerate(run.rec_times):
                rows.append((float(t), r, int(run.Z[r, j]), float(run.Y[r, j])))
        manifest.add(write_csv(out / "observables.csv",
                               ["time", "replica", "Z", "Y"], rows))
        if cfg.get("forest_dump"):
            path = out / "forest.ndjson"
            with open(path, "w") as f:
                for r in range(replicas):
                    _, forest = bbm.run(basis, init, horizon, record_at, seed,
                                        sim_cfg, replica=r)
                    for i in range(forest.size):
                        d = forest.death_time[i]
                        f.write(json.dumps({
                            "replica": r, "id": i,
                            "parent": int(forest.parent[i]),
                            "birth_time": float(forest.birth_time[i]),
                            "birth_pos": float(forest.birth_pos[i]),
                            "death_time": None if math.isnan(d) else float(d),
                            "label": forest.ulam_harris(i),
                        }) + "\n")
            manifest.add(path)
    except Exception as exc:
        manifest.write()  # leaves complete=false with partial results
        print(f"error: {exc}", file=sys.stderr)
        return 1
    manifest.finalize()
    return 0


def cmd_spine_sample(args):
    cfg = _merge_config(args)
    params = model_from(cfg)
    seed = _require_seed(cfg)
    out = _out_dir(cfg)
    manifest = RunManifest(out, cfg)
    basis = sp.build_basis(params, K_max=256)
    k = int(cfg.get("k", 2))
    t = float(cfg["t"])
    x = float(cfg.get("x", 1.0))
    n = int(cfg.get("n", 1000))
    batch = spine.sample_marked_spines(basis, k, t, x, n, seed,
                                       accelerate=float(cfg.get("accelerate", 1.0)))
    lw = spine.log_weight_delta(basis, batch.branch_marks, batch.leaf_marks)
    fields = (["sample_id", "k", "t"]
              + [f"branch_depth_{i}" for i in range(k - 1)]
              + [f"branch_mark_{i}" for i in range(k - 1)]
              + [f"leaf_mark_{i}" for i in range(k)] + ["log_delta"])
    rows = []
    for i in range(n):
        rows.append((i, k, t, *batch.depths[i].tolist(),
                     *batch.branch_marks[i].tolist(),
                     *batch.leaf_marks[i].tolist(), float(lw[i])))
    manifest.add(write_csv(out / "spine_samples.csv", fields, rows))
    manifest.finalize()
    return 0


def cmd_spine_quadrature(args):
    cfg = _merge_config(args)
    params = model_from(cfg)
    out = _out_dir(cfg)
    manifest = RunManifest(out, cfg)
    basis = sp.build_basis(params, K_max=256)
    k = int(cfg.get("k", 2))
    t = float(cfg["t"])
    x = cfg.get("x")
    f_name = cfg.get("f_leaf", "h")
    f = {"h": basis.h, "one": lambda y: np.ones_like(np.asarray(y))}[f_name]
    n_steps = int(cfg.get("n_steps", 2048))
    val, _ = spine.biased_measure(basis, k, t,
                                  None if x is None else float(x), f,
                                  "quadrature", n_steps=n_steps)
    val2, _ = spine.biased_measure(basis, k, t,
                                   None if x is None else float(x), f,
                                   "quadrature", n_steps=n_steps // 2)
    manifest.add(write_json(out / "spine_quadrature.json", {
        "k": k, "t": t, "x": x, "f_leaf": f_name, "value": val,
        "error_estimate": abs(val - val2),
    }))
    manifest.finalize()
    return 0


def cmd_cpp_sample(args):
    cfg = _merge_config(args)
    seed = _require_seed(cfg)
    out = _out_dir(cfg)
    manifest = RunManifest(out, cfg)
    k = int(cfg.get("k", 2))
    T = float(cfg["T"])
    n = int(cfg.get("n", 1000))
    g = rngmod.stream(seed, rngmod.TAG_CPP)
    fields = ["sample_id", "k", "T", "Y"] + [
        f"d_{i+1}_{j+1}" for i in range(k) for j in range(i + 1, k)]
    rows = []
    for s in range(n):
        samp = cpp.sample_cpp_distances(k, T, g)
        m = samp.distance_matrix()
        rows.append((s, k, T, samp.Y,
                     *[float(m[i, j]) for i in range(k)
                       for j in range(i + 1, k)]))
    manifest.add(write_csv(out / "cpp_samples.csv", fields, rows))
    manifest.finalize()
    return 0


def cmd_cpp_moment(args):
    cfg = _merge_config(args)
    seed = _require_seed(cfg)
    out = _out_dir(cfg)
    manifest = RunManifest(out, cfg)
    k = int(cfg.get("k", 2))
    T = float(cfg["T"])
    n = int(cfg.get("n", 100_000))
    phi_name = cfg.get("phi", "one")
    phi = verify._phi_basket(T)[phi_name]
    vf, sf = cpp.cpp_moment(k, T, phi, "formula", n,
                            rngmod.stream(seed, rngmod.TAG_CPP, 1))
    vm, sm = cpp.cpp_moment(k, T, phi, "monte-carlo", n,
                            rngmod.stream(seed, rngmod.TAG_CPP, 2))
    manifest.add(write_json(out / "cpp_moment.json", {
        "k": k, "T": T, "phi_name": phi_name, "formula": vf,
        "formula_se": sf, "mc": vm, "se": sm,
    }))
    manifest.finalize()
    return 0


VERIFY_TESTS = ("identities", "survival", "yaglom", "feller", "feller-fixed",
                "genealogy", "moments", "cpp", "constant-trend", "merger-trend",
                "all")


def cmd_verify(args):
    cfg = _merge_config(args)
    name = cfg["test"]
    out = _out_dir(cfg)
    manifest = RunManifest(out, cfg)
    reports = []
    needs_seed = name not in ("identities", "constant-trend", "merger-trend")
    seed = _require_seed(cfg) if needs_seed else int(cfg.get("seed") or 0)
    t = float(cfg.get("t", 50.0))
    replicas = int(cfg.get("replicas", 10_000))
    dt = float(cfg.get("dt", 2e-3))
    x = float(cfg.get("x", 1.0))

    def params():
        return model_from(cfg)

    try:
        if name in ("identities", "all"):
            reports += verify.verify_identities(params(), out_dir=out)
        if name in ("constant-trend", "all"):
            reports += verify.verify_constant_trend(
                c=float(cfg.get("c", 0.5)), out_dir=out)
        if name in ("merger-trend", "all"):
            reports += verify.verify_merger_trend(out_dir=out)
        if name in ("survival", "all"):
            grid = [float(v) for v in cfg.get("t_grid", [t / 2, t])]
            reports += verify.verify_survival(params(), x, grid, replicas,
                                              seed, dt, out_dir=out)
        if name in ("yaglom", "all"):
            reports += verify.verify_yaglom(params(), x, t, replicas, seed,
                                            dt, out_dir=out)
        if name == "feller" or (name == "all" and cfg.get("N") is not None):
            reports += verify.verify_feller(
                params(), float(cfg.get("z0", 1.0)),
                [float(v) for v in cfg.get("t_grid", [1.0])],
                [float(v) for v in cfg.get("lambda_grid", [0.5, 1.0, 2.0])],
                replicas, seed, float(cfg.get("dt", 1e-2)), out_dir=out)
        if name == "feller-fixed" or (name == "all" and cfg.get("N") is None):
            reports += verify.verify_feller_fixed_boundary(
                params(), int(cfg.get("M", 400)), t,
                [float(v) for v in cfg.get("lambda_grid", [0.5, 1.0, 2.0])],
                replicas, seed, dt, out_dir=out)
        if name in ("genealogy", "all"):
            reports += verify.verify_genealogy(params(), x, t,
                                               int(cfg.get("k", 2)),
                                               replicas, seed, dt, out_dir=out)
        if name in ("moments", "all"):
            reports += verify.verify_moments(params(), x, float(cfg.get("t", 2.0)),
                                             int(cfg.get("k", 2)), replicas,
                                             seed, float(cfg.get("dt", 1e-3)),
                                             out_dir=out)
        if name in ("cpp", "all"):
            reports += verify.verify_cpp(float(cfg.get("T", 1.0)), seed,
                                         out_dir=out)
    except Exception as exc:
        manifest.write()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    manifest.add(write_json(out / "reports.json",
                            {"reports": [r.to_dict() for r in reports]}))
    manifest.finalize()
    for r in reports:
        print(r.line())
    return 0 if all(r.verdict != "fail" for r in reports) else 2


# ---------------------------------------------------------------------------

def _add_model_flags(p):
    p.add_argument("--beta", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--c", type=float)
    p.add_argument("--loglog-coeff", dest="loglog_coeff", type=float)
    p.add_argument("--config", type=str)
    p.add_argument("--out", type=str)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fwl", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectral", help="profile table and eigen summary")
    _add_model_flags(p)
    p.add_argument("--grid", type=int)
    p.set_defaults(func=cmd_spectral)

    p = sub.add_parser("simulate", help="replica simulation")
    _add_model_flags(p)
    p.add_argument("--init", type=str)
    p.add_argument("--horizon", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--record-at", dest="record_at", type=float, nargs="*")
    p.add_argument("--replicas", type=int)
    p.add_argument("--forest-dump", dest="forest_dump", action="store_true",
                   default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("spine-sample", help="marked k-spine samples")
    _add_model_flags(p)
    for name, typ in (("k", int), ("t", float), ("x", float), ("n", int),
                      ("accelerate", float)):
        p.add_argument(f"--{name}", type=typ)
    p.set_defaults(func=cmd_spine_sample)

    p = sub.add_parser("spine-quadrature", help="biased-measure recursion")
    _add_model_flags(p)
    for name, typ in (("k", int), ("t", float), ("x", float),
                      ("n-steps", int)):
        p.add_argument(f"--{name}", type=typ,
                       dest=name.replace("-", "_"))
    p.add_argument("--f-leaf", dest="f_leaf", choices=["h", "one"])
    p.set_defaults(func=cmd_spine_quadrature)

    p = sub.add_parser("cpp-sample", help="coalescent point process draws")
    p.add_argument("--config", type=str)
    p.add_argument("--out", type=str)
    p.add_argument("--seed", type=int)
    for name, typ in (("k", int), ("T", float), ("n", int)):
        p.add_argument(f"--{name}", type=typ)
    p.set_defaults(func=cmd_cpp_sample)

    p = sub.add_parser("cpp-moment", help="CPP moment, formula vs MC")
    p.add_argument("--config", type=str)
    p.add_argument("--out", type=str)
    p.add_argument("--seed", type=int)
    for name, typ in (("k", int), ("T", float), ("n", int)):
        p.add_argument(f"--{name}", type=typ)
    p.add_argument("--phi", type=str)
    p.set_defaults(func=cmd_cpp_moment)

    p = sub.add_parser("verify", help="verification harness")
    p.add_argument("test", choices=VERIFY_TESTS)
    _add_model_flags(p)
    for name, typ in (("t", float), ("replicas", int), ("dt", float),
                      ("x", float), ("k", int), ("z0", float), ("T", float),
                      ("M", int)):
        p.add_argument(f"--{name}", type=typ)
    p.add_argument("--t-grid", dest="t_grid", type=float, nargs="*")
    p.add_argument("--lambda-grid", dest="lambda_grid", type=float, nargs="*")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParamsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

import numpy as np
import pytest

from fwl import verify
from fwl.params import params_for_drift, params_for_population
from fwl.verify import McReport, evaluate_rule


def test_rule_engine():
    assert evaluate_rule(1.0000001, 1.0, 0.0, "exact 1e-6")
    assert not evaluate_rule(1.01, 1.0, 0.0, "exact 1e-6")
    assert evaluate_rule(1.05, 1.0, 0.0, "rel 0.10")
    assert evaluate_rule(1.2, 1.0, 0.1, "se 3")
    assert not evaluate_rule(1.4, 1.0, 0.1, "se 3")
    assert evaluate_rule(0.5, 0.6, 0.0, "leq")
    assert evaluate_rule(0.01, 0.0, 0.0, "ks 0.05")
    assert evaluate_rule(0, 0, 0, "decreasing", {"sequence": [3, 2, 1]})
    assert not evaluate_rule(0, 0, 0, "decreasing", {"sequence": [1, 2]})


def test_report_verdict_recomputable():
    r = McReport("x", 1.05, 1.0, 0.02, 100, "se 3")
    assert r.verdict == "fail"
    assert evaluate_rule(r.estimate, r.target, r.se, r.rule) is False
    r2 = McReport("y", 1.05, 1.0, 0.02, 100, "rel 0.10")
    assert r2.passed
    d = r2.to_dict()
    assert evaluate_rule(d["estimate"], d["target"], d["se"], d["rule"])


def test_ks_utilities():
    g = np.random.default_rng(0)
    u = g.random(20_000)
    assert verify.ks_one_sample(u, lambda s: s) < 0.02
    assert verify.ks_two_sample(u, g.random(20_000)) < 0.03
    assert verify.ks_one_sample(u ** 2, lambda s: s) > 0.1


def test_identities_all_pass(pars_half):
    reports = verify.verify_identities(pars_half)
    assert all(r.passed for r in reports), [r.line() for r in reports
                                            if not r.passed]


def test_constant_trend_shape():
    reports = verify.verify_constant_trend(0.5, (10 ** 4, 10 ** 8, 10 ** 16))
    by = {r.name: r for r in reports}
    assert by["sigma_trend_monotone_toward_1"].passed
    assert by["best_class_count_trend_toward_6"].passed
    # the 25% gate cannot hold at desk scale (log-log convergence); the
    # acceptance suite carries the full analysis
    assert not by["sigma_trend_within_25pct_at_top"].passed
    ratios = by["sigma_trend_within_25pct_at_top"].extra["ratios"]
    assert ratios == sorted(ratios)


def test_survival_small_scale(pars_half):
    reports = verify.verify_survival(pars_half, 1.0, [10.0, 20.0], 40_000, 5,
                                     dt=4e-3)
    by = {r.name: r for r in reports}
    # extinction bound must hold even pre-asymptotically
    assert by["extinction_bound_t10"].passed
    assert by["extinction_bound_t20"].passed
    assert by["survival_halving_t10"].passed


def test_yaglom_inconclusive_without_survivors(pars_half):
    reports = verify.verify_yaglom(pars_half, 1.0, 30.0, 200, 6, dt=4e-3)
    assert any(r.verdict == "inconclusive" for r in reports)


def test_yaglom_small_scale(pars_half):
    # t = 50: the population lattice spacing 2/(Sigma^2 t) = 0.032 sits
    # safely below the 0.05 KS gate (at t = 30 discreteness alone hits it)
    reports = verify.verify_yaglom(pars_half, 1.0, 50.0, 80_000, 7, dt=4e-3)
    by = {r.name: r for r in reports}
    assert by["yaglom_mean_t50"].passed
    assert by["yaglom_ks_t50"].verdict in ("pass", "inconclusive")


def test_feller_fixed_boundary_small(pars_half):
    # needs enough replicas that heavy-tail skew does not inflate the mean
    reports = verify.verify_feller_fixed_boundary(
        pars_half, M=200, t=40.0, lambda_grid=[0.5, 1.0], replicas=1500,
        seed=8, dt=4e-3)
    by = {r.name: r for r in reports}
    assert by["feller_fixed_martingale"].passed
    for lam in (0.5, 1.0):
        assert by[f"feller_fixed_laplace_lam{lam:g}"].passed


def test_moments_small_scale(pars_half):
    reports = verify.verify_moments(pars_half, 1.0, 2.0, 2, 30_000, 9,
                                    dt=1e-3, n_spine=30_000)
    by = {r.name: r for r in reports}
    assert by["moment_k1_martingale"].passed
    assert by["moment_k2_bbm_vs_quadrature"].passed
    assert by["moment_k2_spine_vs_quadrature"].passed


def test_genealogy_small_scale(pars_half):
    reports = verify.verify_genealogy(pars_half, 1.0, 30.0, 2, 60_000, 10,
                                      dt=2e-3, min_survivors=300)
    by = {r.name: r for r in reports}
    assert by["genealogy_ultrametric_k2"].estimate == 1.0
    assert by["genealogy_pair_depth_ks_k2"].verdict in ("pass", "inconclusive")


def test_merger_trend_quadrature():
    reports = verify.verify_merger_trend(L_values=(5.0, 10.0),
                                         t_of_L=lambda L: L * L)
    by = {r.name: r for r in reports}
    assert by["merger_median_L5"].passed  # below L/2
    assert by["merger_median_L10"].passed
    seq = by["merger_median_rel_decreasing"].extra["sequence"]
    assert seq[1] < seq[0]


def test_cpp_suite_small():
    reports = verify.verify_cpp(T=1.0, seed=2, n_moment=20_000, n_law=100_000)
    assert all(r.passed for r in reports), [r.line() for r in reports
                                            if not r.passed]


def test_persistence(tmp_path, pars_half):
    verify.verify_identities(pars_half, out_dir=tmp_path)
    from fwl.io_utils import read_csv
    cols = read_csv(tmp_path / "identities.csv")
    assert "verdict" in cols and len(cols["name"]) > 10

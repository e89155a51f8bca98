"""Monte Carlo and quadrature verification of the limit laws.

Each check produces an :class:`McReport` whose verdict is recomputable
from (estimate, target, se, rule).  Finite-boundary targets use the
profile value Sigma(L)^2 rather than the asymptotic constant: desk-scale
boundaries cannot reach the N -> infinity regime, whose constant is
probed only as a trend along an N ladder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from pathlib import Path

from . import bbm, cpp, rng as rngmod, spine
from . import spectral as sp
from .errors import ParamsError
from .io_utils import write_csv
from .params import ModelParams, params_for_length, params_for_population

__all__ = [
    "McReport", "evaluate_rule", "verify_identities", "verify_survival",
    "verify_yaglom", "verify_feller", "verify_feller_fixed_boundary",
    "verify_genealogy", "verify_moments", "verify_constant_trend",
    "verify_cpp", "verify_merger_trend", "ks_one_sample", "ks_two_sample",
]

# large-L threshold for the leading-mode envelope bounds (they require
# gamma <= 1/2, i.e. beta >= sqrt(3)/2, i.e. L >= L(sqrt(3)/2) = 5 pi / 3)
L_ENVELOPE = 5.0 * math.pi / 3.0


@dataclass
class McReport:
    """One verification verdict.

    rule grammar: ``exact TOL`` (|est-target| <= TOL), ``rel TOL``
    (relative), ``se K`` (|est-target| <= K*se), ``leq`` (est <= target),
    ``ks TOL`` (est is a KS distance, target ignored), ``decreasing`` /
    ``increasing`` (est is ignored; extra carries the sequence).
    """

    name: str
    estimate: float
    target: float
    se: float
    n_replicas: int
    rule: str
    verdict: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.verdict:
            self.verdict = "pass" if evaluate_rule(
                self.estimate, self.target, self.se, self.rule, self.extra) \
                else "fail"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {
            "name": self.name, "estimate": self.estimate, "target": self.target,
            "se": self.se, "n_replicas": self.n_replicas, "rule": self.rule,
            "verdict": self.verdict, "extra": self.extra,
        }

    def line(self) -> str:
        return (f"[{'PASS' if self.passed else self.verdict.upper():4s}] "
                f"{self.name}: estimate={self.estimate:.6g} "
                f"target={self.target:.6g} se={self.se:.2g} ({self.rule})")


def evaluate_rule(estimate, target, se, rule: str, extra: dict | None = None) -> bool:
    parts = rule.split()
    kind = parts[0]
    if kind == "exact":
        return abs(estimate - target) <= float(parts[1])
    if kind == "rel":
        return abs(estimate - target) <= float(parts[1]) * abs(target)
    if kind == "se":
        return abs(estimate - target) <= float(parts[1]) * se
    if kind == "leq":
        return estimate <= target
    if kind == "ks":
        return estimate <= float(parts[1])
    if kind in ("decreasing", "increasing"):
        seq = (extra or {}).get("sequence", [])
        diffs = np.diff(np.asarray(seq, dtype=float))
        return bool(np.all(diffs < 0) if kind == "decreasing" else np.all(diffs > 0))
    raise ParamsError(f"unknown rule {rule!r}")


def _inconclusive(report: McReport, reason: str) -> McReport:
    report.verdict = "inconclusive"
    report.extra["reason"] = reason
    return report


# ---------------------------------------------------------------------------
# KS utilities
# ---------------------------------------------------------------------------

def ks_one_sample(data: np.ndarray, cdf) -> float:
    x = np.sort(np.asarray(data, dtype=float))
    n = x.shape[0]
    f = np.asarray(cdf(x), dtype=float)
    hi = np.max(np.arange(1, n + 1) / n - f)
    lo = np.max(f - np.arange(0, n) / n)
    return float(max(hi, lo))


def ks_two_sample(a: np.ndarray, b: np.ndarray) -> float:
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.shape[0]
    fb = np.searchsorted(b, grid, side="right") / b.shape[0]
    return float(np.max(np.abs(fa - fb)))


# ---------------------------------------------------------------------------
# exact-identity suite
# ---------------------------------------------------------------------------

def verify_identities(params: ModelParams, K_check: int = 50,
                      out_dir=None) -> list[McReport]:
    """Spectral invariants: eigen residuals, normalisations, closed forms,
    Green's function, kernel symmetry/conservativity/semigroup."""
    reports = []
    basis = sp.build_basis(params, K_max=max(256, K_check))
    beta, L, g1 = params.beta, params.L, basis.gamma1

    res = np.abs(beta * np.sin(basis.gammas[:K_check] * L)
                 + basis.gammas[:K_check] * np.cos(basis.gammas[:K_check] * L))
    reports.append(McReport("eigen_residual_max", float(np.max(res)), 0.0, 0.0,
                            K_check, "exact 1e-9"))
    k = np.arange(1, K_check + 1)
    in_bracket = np.all((basis.gammas[:K_check] * L >= (k - 0.5) * np.pi)
                        & (basis.gammas[:K_check] * L <= k * np.pi))
    reports.append(McReport("eigen_bracket_containment", float(in_bracket), 1.0,
                            0.0, K_check, "exact 0"))
    reports.append(McReport("criticality_gamma1", g1 ** 2 + beta ** 2, 1.0, 0.0,
                            1, "exact 1e-10"))
    reports.append(McReport("sin_gamma_L", math.sin(g1 * L), g1, 0.0, 1,
                            "exact 1e-9"))
    reports.append(McReport("cos_gamma_L", math.cos(g1 * L), -beta, 0.0, 1,
                            "exact 1e-9"))
    reports.append(McReport("norm_v1", float(basis.norms_sq[0]),
                            (L + beta) / 2.0, 0.0, 1, "exact 1e-10"))

    i_ht, _ = integrate.quad(basis.h_tilde, 0.0, L, epsabs=1e-13, limit=200)
    i_hht, _ = integrate.quad(lambda s: basis.h(s) * basis.h_tilde(s), 0.0, L,
                              epsabs=1e-13, limit=200)
    reports.append(McReport("normalisation_h_tilde", i_ht, 1.0, 0.0, 1,
                            "exact 1e-10"))
    reports.append(McReport("normalisation_h_htilde", i_hht, 1.0, 0.0, 1,
                            "exact 1e-10"))
    if beta > 0:
        num, _ = integrate.quad(lambda s: math.exp(beta * s) * basis.v1(s),
                                0.0, L, epsabs=1e-13, limit=200)
        reports.append(McReport("c_tilde_closed_form", 1.0 / num, basis.c_tilde,
                                0.0, 1, "rel 1e-10"))

    zg = np.linspace(0.0, L, 41)
    cf = sp.closed_forms(params, zg)
    # relative to the value, floored at 1% of the profile's range so the
    # z -> 0 limit (where both routes vanish) is not a 0/0 comparison
    scales = {name: max(float(np.max(np.abs(arr))) * 1e-2, 1e-30)
              for name, arr in zip(("I1", "I3", "J", "Sigma_sq"), cf)}
    worst = {"I1": 0.0, "I3": 0.0, "J": 0.0, "Sigma_sq": 0.0}
    for z, i1, i3, jz, s2 in zip(zg, cf.I1, cf.I3, cf.J, cf.Sigma_sq):
        q1, _ = integrate.quad(lambda s: math.exp(-beta * s) * basis.v1(s),
                               0.0, z, epsabs=1e-14, epsrel=1e-13, limit=200)
        q3, _ = integrate.quad(
            lambda s: math.exp(-beta * s) * math.sin(3 * g1 * (L - s)),
            0.0, z, epsabs=1e-14, epsrel=1e-13, limit=200)
        qj = sp.quad_h_tilde_mass(basis, z)
        qs = sp.quad_sigma_sq(basis, z)
        worst["I1"] = max(worst["I1"], abs(i1 - q1) / max(abs(q1), scales["I1"]))
        worst["I3"] = max(worst["I3"], abs(i3 - q3) / max(abs(q3), scales["I3"]))
        worst["J"] = max(worst["J"], abs(jz - qj) / max(abs(qj), scales["J"]))
        worst["Sigma_sq"] = max(worst["Sigma_sq"],
                                abs(s2 - qs) / max(abs(qs), scales["Sigma_sq"]))
    for name, err in worst.items():
        reports.append(McReport(f"closed_form_{name}_vs_quadrature", err, 0.0,
                                0.0, len(zg), "exact 1e-8"))
    reports.append(McReport("J_at_L", float(sp.closed_forms(params, L).J), 1.0,
                            0.0, 1, "exact 1e-12"))

    # Sigma^2 profile monotone, zero at the origin (relative to the total:
    # the closed form cancels catastrophically at z = 0 for large L)
    s2_total = float(cf.Sigma_sq[-1])
    reports.append(McReport("sigma_sq_profile_monotone",
                            float(np.all(np.diff(cf.Sigma_sq)
                                         >= -1e-12 * s2_total)), 1.0,
                            0.0, len(zg), "exact 0"))
    reports.append(McReport("sigma_sq_at_zero",
                            float(cf.Sigma_sq[0]) / s2_total, 0.0,
                            0.0, 1, "exact 1e-12"))

    # Green's function: exact time-integral of the spectral sum vs closed form
    big = sp.build_basis(params, K_max=4096)
    pts = [(0.25 * L, 0.75 * L), (0.1 * L, 0.6 * L), (0.5 * L, 0.9 * L)]
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    T = 50.0 * L * L
    approx = np.diag(sp.time_integrated_kernel(big, T, xs, ys))
    exact = np.diag(sp.greens_function(big, xs, ys))
    reports.append(McReport("green_time_integral", float(np.max(
        np.abs(approx / exact - 1.0))), 0.0, 0.0, len(pts), "exact 1e-4"))
    # monotone approach from below (T small enough that the remaining gap
    # dominates the 1e-7-level mode-truncation noise)
    seq = [float(np.sum(np.diag(sp.time_integrated_kernel(big, s * L * L,
                                                          xs, ys))))
           for s in (0.25, 0.5, 1.0, 2.0)]
    reports.append(McReport("green_monotone_in_T", seq[-1],
                            float(np.sum(exact)), 0.0, len(seq), "leq",
                            extra={"sequence": seq}))
    reports.append(McReport("green_increasing", 0.0, 0.0, 0.0, len(seq),
                            "increasing", extra={"sequence": seq}))

    if beta > 0:
        t = max(0.5, 0.02 * L * L)
        yg, wg = np.polynomial.legendre.leggauss(600)
        yg = 0.5 * L * (yg + 1.0)
        wg = 0.5 * L * wg
        xg = np.linspace(0.04 * L, 0.96 * L, 8)
        Q = sp.spine_kernel(basis, t, xg, yg, rel_tol=1e-12)
        reports.append(McReport("q_conservativity", float(np.max(
            np.abs(Q @ wg - 1.0))), 0.0, 0.0, xg.size, "exact 1e-8"))
        P, _ = sp.heat_kernel(basis, t, xg, yg, rel_tol=1e-12)
        reports.append(McReport("h_fixed_point", float(np.max(np.abs(
            (P @ (wg * basis.h(yg))) / basis.h(xg) - 1.0))), 0.0, 0.0,
            xg.size, "exact 1e-8"))
        # symmetry of the self-adjoint kernel g_t
        P2, _ = sp.heat_kernel(basis, t, yg[:200], xg, rel_tol=1e-12)
        g_xy = (np.exp(beta * np.subtract.outer(xg, yg[:200]))
                * math.exp((beta ** 2 - 1.0) * t / 2.0)
                * sp.heat_kernel(basis, t, xg, yg[:200], rel_tol=1e-12)[0])
        g_yx = (np.exp(beta * np.subtract.outer(yg[:200], xg))
                * math.exp((beta ** 2 - 1.0) * t / 2.0) * P2)
        reports.append(McReport("g_kernel_symmetry", float(np.max(
            np.abs(g_xy - g_yx.T))), 0.0, 0.0, xg.size, "exact 1e-10"))
        # Chapman-Kolmogorov on a coarse grid
        s2 = t / 2.0
        Qa = sp.spine_kernel(basis, s2, xg, yg, rel_tol=1e-12)
        Qb = sp.spine_kernel(basis, s2, yg, yg, rel_tol=1e-12)
        Qc = sp.spine_kernel(basis, t, xg, yg, rel_tol=1e-12)
        comp = Qa @ (wg[:, None] * Qb)
        reports.append(McReport("chapman_kolmogorov", float(np.max(
            np.abs(comp - Qc))), 0.0, 0.0, xg.size, "exact 1e-6"))
        # long-time convergence to the invariant density, certified
        t_long = L ** 3
        Ql = sp.spine_kernel(basis, t_long, np.array([xg[0]]), yg,
                             rel_tol=1e-12)
        cert = basis.truncation_tail(1, t_long) + 1e-9
        reports.append(McReport("q_relaxes_to_pi", float(np.max(
            np.abs(Ql[0] / basis.pi_density(yg) - 1.0))),
            0.0, 0.0, 1, f"exact {cert:.6g}"))

    if L > L_ENVELOPE:
        xs = np.linspace(0.0, L, 1000)
        v1 = basis.v1(xs)
        lo = np.minimum(g1 * (2 * (1 - g1) * xs / (2 * g1 * L - math.pi) + 1.0),
                        (2 * g1 / math.pi) * (L - xs))
        hi = np.minimum(g1 * (beta * xs + 1.0), g1 * (L - xs))
        ok = np.all((v1 >= lo - 1e-12) & (v1 <= hi + 1e-12))
        reports.append(McReport("v1_envelope_sandwich", float(ok), 1.0, 0.0,
                                xs.size, "exact 0"))

    if out_dir is not None:
        write_csv(Path(out_dir) / "identities.csv",
                  ["name", "estimate", "target", "se", "rule", "verdict"],
                  [(r.name, r.estimate, r.target, r.se, r.rule, r.verdict)
                   for r in reports])
    return reports


def _persist_reports(out_dir, name, reports):
    if out_dir is None:
        return
    write_csv(Path(out_dir) / f"{name}.csv",
              ["name", "estimate", "target", "se", "n", "rule", "verdict"],
              [(r.name, r.estimate, r.target, r.se, r.n_replicas, r.rule,
                r.verdict) for r in reports])


# ---------------------------------------------------------------------------
# survival / Yaglom
# ---------------------------------------------------------------------------

def verify_survival(params: ModelParams, x: float, t_grid, replicas: int,
                    seed: int, dt: float = 4e-3, out_dir=None,
                    run: bbm.ObservableRun | None = None,
                    run_stable: bbm.ObservableRun | None = None,
                    ) -> list[McReport]:
    """Survival asymptotics: t P(Z_t > 0) / h(x) vs 2 / Sigma(L)^2, the
    extinction bound a(t) <= 2/t, and the 1/t halving ratio."""
    basis = sp.build_basis(params)
    t_grid = sorted(t_grid)
    cfg = bbm.SimConfig(dt=dt)
    if run is None:
        run = bbm.run_observables(basis, ("single", x), t_grid, replicas, seed,
                                  cfg)
    sigma2 = float(sp.closed_forms(params, params.L).Sigma_sq)
    hx = float(basis.h(x))
    target = 2.0 / sigma2
    reports = []
    psurv = {}
    for j, t in enumerate(t_grid):
        surv = run.Z[:, j] > 0
        p = float(np.mean(surv))
        se = math.sqrt(max(p * (1 - p), 1e-300) / run.replicas)
        psurv[t] = (p, se)
        est = t * p / hx
        reports.append(McReport(f"kolmogorov_ratio_t{t:g}", est, target,
                                t * se / hx, run.replicas, "rel 0.10",
                                extra={"p_surv": p}))
    # unconditional extinction bound, stable-configuration start
    if run_stable is None:
        run_stable = bbm.run_observables(basis, ("stable", 1), t_grid,
                                         replicas, seed + 1, cfg)
    for j, t in enumerate(t_grid):
        a = float(np.mean(run_stable.Z[:, j] > 0))
        se = math.sqrt(max(a * (1 - a), 1e-300) / run_stable.replicas)
        reports.append(McReport(f"extinction_bound_t{t:g}", a, 2.0 / t, se,
                                run_stable.replicas, "leq"))
    # halving: P(2t) / P(t) in [0.45, 0.55]
    for t in t_grid:
        if 2 * t in psurv:
            p1, se1 = psurv[t]
            p2, se2 = psurv[2 * t]
            ratio = p2 / p1
            se = ratio * math.sqrt((se1 / p1) ** 2 + (se2 / p2) ** 2)
            reports.append(McReport(f"survival_halving_t{t:g}", ratio, 0.5,
                                    se, run.replicas, "exact 0.05"))
    _persist_reports(out_dir, "survival", reports)
    return reports


def verify_yaglom(params: ModelParams, x: float, t: float, replicas: int,
                  seed: int, dt: float = 4e-3, out_dir=None,
                  run: bbm.ObservableRun | None = None,
                  min_survivors: int = 500) -> list[McReport]:
    """Conditional-on-survival population law: Z(t) / (Sigma^2 t / 2) vs
    the unit-mean exponential."""
    basis = sp.build_basis(params)
    cfg = bbm.SimConfig(dt=dt)
    if run is None:
        run = bbm.run_observables(basis, ("single", x), [t], replicas, seed, cfg)
    j = int(np.argmin(np.abs(run.rec_times - t)))
    z = run.Z[:, j]
    zs = z[z > 0]
    sigma2 = float(sp.closed_forms(params, params.L).Sigma_sq)
    scale = sigma2 * t / 2.0
    w = zs / scale
    n = w.shape[0]
    reports = []
    mean = float(np.mean(w)) if n else math.nan
    m2 = float(np.mean(w ** 2)) if n else math.nan
    r_mean = McReport(f"yaglom_mean_t{t:g}", mean, 1.0,
                      float(np.std(w, ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
                      n, "rel 0.10")
    r_m2 = McReport(f"yaglom_second_moment_t{t:g}", m2, 2.0,
                    float(np.std(w ** 2, ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
                    n, "rel 0.20")
    ks = ks_one_sample(w, lambda s: 1.0 - np.exp(-s)) if n else math.nan
    r_ks = McReport(f"yaglom_ks_t{t:g}", ks, 0.0, 0.0, n, "ks 0.05")
    if n < min_survivors:
        for r in (r_mean, r_m2, r_ks):
            _inconclusive(r, f"only {n} surviving replicas (< {min_survivors})")
    reports += [r_mean, r_m2, r_ks]
    if out_dir is not None:
        write_csv(Path(out_dir) / f"yaglom_t{t:g}.csv", ["z_rescaled"],
                  [(float(v),) for v in w])
    _persist_reports(out_dir, "yaglom", reports)
    return reports


# ---------------------------------------------------------------------------
# Feller fluctuations
# ---------------------------------------------------------------------------

def verify_feller(params: ModelParams, z0: float, t_grid, lambda_grid,
                  replicas: int, seed: int, dt: float = 1e-2,
                  out_dir=None) -> list[McReport]:
    """Laplace transform of the rescaled additive martingale vs the
    finite-N Feller target exp(-z0 lambda / (1 + H lambda))."""
    if params.N is None:
        raise ParamsError("verify_feller needs population-scaled params (N, c)")
    N, c = params.N, params.c
    basis = sp.build_basis(params)
    scale_t = N ** (1.0 - c)
    m_init = int(round(N * z0))
    rec = [0.0] + [t * scale_t for t in sorted(t_grid)]
    cfg = bbm.SimConfig(dt=dt, population_cap=10 ** 9)
    run = bbm.run_observables(basis, ("stable", m_init), rec, replicas, seed, cfg)
    sigma2 = float(sp.closed_forms(params, params.L).Sigma_sq)
    reports = []
    ybar0 = run.Y[:, 0] / N
    for j, t in enumerate(sorted(t_grid), start=1):
        ybar = run.Y[:, j] / N
        zbar = run.Z[:, j] / N
        H = sigma2 * t / (2.0 * N ** c)
        for lam in lambda_grid:
            emp = np.exp(-lam * ybar)
            tgt = float(np.mean(np.exp(-ybar0 * lam / (1.0 + H * lam))))
            se = float(np.std(emp, ddof=1) / math.sqrt(replicas))
            reports.append(McReport(
                f"feller_laplace_t{t:g}_lam{lam:g}", float(np.mean(emp)), tgt,
                se, replicas, "rel 0.05", extra={"H": H}))
        diff = ybar - ybar0
        se = float(np.std(diff, ddof=1) / math.sqrt(replicas))
        reports.append(McReport(f"martingale_t{t:g}", float(np.mean(diff)),
                                0.0, se, replicas, "se 3"))
        dz = zbar - ybar
        se = float(np.std(dz, ddof=1) / math.sqrt(replicas))
        reports.append(McReport(f"z_tracks_y_t{t:g}", float(np.mean(dz)), 0.0,
                                se, replicas, "se 3"))
        if out_dir is not None:
            write_csv(Path(out_dir) / f"feller_t{t:g}.csv",
                      ["ybar0", "ybar", "zbar"],
                      zip(ybar0.tolist(), ybar.tolist(), zbar.tolist()))
    _persist_reports(out_dir, "feller", reports)
    return reports


def verify_feller_fixed_boundary(params: ModelParams, M: int, t: float,
                                 lambda_grid, replicas: int, seed: int,
                                 dt: float = 4e-3,
                                 out_dir=None) -> list[McReport]:
    """Feller-transform check at a fixed moderate boundary.

    Starts M stable-configuration particles and compares the Laplace
    transform of Y(t)/M against exp(-Ybar0 lam / (1 + H lam)) with
    H = Sigma(L)^2 t / (2M).  Unlike the population-scaled variant, the
    horizon here can well exceed the shape-mixing time ~L^2, so the limit
    law is actually reachable at desk scale.
    """
    basis = sp.build_basis(params)
    cfg = bbm.SimConfig(dt=dt, population_cap=10 ** 9)
    run = bbm.run_observables(basis, ("stable", int(M)), [0.0, t], replicas,
                              seed, cfg)
    sigma2 = float(sp.closed_forms(params, params.L).Sigma_sq)
    H = sigma2 * t / (2.0 * M)
    ybar0 = run.Y[:, 0] / M
    ybar = run.Y[:, 1] / M
    reports = []
    for lam in lambda_grid:
        emp = np.exp(-lam * ybar)
        tgt = float(np.mean(np.exp(-ybar0 * lam / (1.0 + H * lam))))
        se = float(np.std(emp, ddof=1) / math.sqrt(replicas))
        reports.append(McReport(
            f"feller_fixed_laplace_lam{lam:g}", float(np.mean(emp)), tgt, se,
            replicas, "rel 0.05", extra={"H": H, "t": t, "M": M}))
    diff = ybar - ybar0
    se = float(np.std(diff, ddof=1) / math.sqrt(replicas))
    reports.append(McReport("feller_fixed_martingale", float(np.mean(diff)),
                            0.0, se, replicas, "se 3"))
    _persist_reports(out_dir, "feller_fixed", reports)
    return reports


# ---------------------------------------------------------------------------
# genealogy
# ---------------------------------------------------------------------------

def verify_genealogy(params: ModelParams, x: float, t: float, k: int,
                     replicas: int, seed: int, dt: float = 2e-3,
                     out_dir=None, run: bbm.GenealogyRun | None = None,
                     min_survivors: int = 500) -> list[McReport]:
    """Sampled k-leaf distance matrices vs the limit-genealogy law.

    Pairwise depths (rescaled by Sigma^2/2) follow the theta-mixture of
    height Sigma^2 t / 2; ultrametry must hold exactly; merger positions
    are compared against the exact pair-merger density.
    """
    basis = sp.build_basis(params, K_max=256)
    cfg = bbm.SimConfig(dt=dt)
    if run is None:
        run = bbm.run_genealogy(basis, ("single", x), t, k, replicas, seed, cfg)
    sigma2 = float(sp.closed_forms(params, params.L).Sigma_sq)
    sampled = run.Z >= k
    n = int(np.sum(sampled))
    reports = []
    depth1 = run.depth[sampled, 0]
    # (a) pairwise depth: first sampled pair per replica (iid across replicas)
    if k == 2:
        ks = ks_one_sample(depth1, lambda s: cpp.pair_depth_cdf(s, t))
    else:
        ref = cpp.sample_H_matrices(k, t, sigma2,
                                    max(10 * n, 10000),
                                    rngmod.stream(seed, rngmod.TAG_CPP, 1))
        ks = ks_two_sample(depth1 * sigma2 / 2.0, ref[:, 0, 1])
    r = McReport(f"genealogy_pair_depth_ks_k{k}", ks, 0.0, 0.0, n, "ks 0.05")
    if n < min_survivors:
        _inconclusive(r, f"only {n} sampled replicas")
    reports.append(r)
    # (b) MRCA depth (max entry)
    ref = cpp.sample_H_matrices(k, t, sigma2, max(10 * n, 10000),
                                rngmod.stream(seed, rngmod.TAG_CPP, 2))
    mrca = np.max(run.depth[sampled], axis=1) * sigma2 / 2.0
    ks_m = ks_two_sample(mrca, np.max(ref, axis=(1, 2)))
    r = McReport(f"genealogy_mrca_depth_ks_k{k}", ks_m, 0.0, 0.0, n, "ks 0.05")
    if n < min_survivors:
        _inconclusive(r, f"only {n} sampled replicas")
    reports.append(r)
    # ultrametry of the full sampled matrices
    frac = _ultrametric_fraction(run.depth[sampled], k)
    reports.append(McReport(f"genealogy_ultrametric_k{k}", frac, 1.0, 0.0, n,
                            "exact 0"))
    # (c) merger localisation: empirical mass below L/2 vs exact density
    mpos = run.merge_pos[sampled].reshape(-1)
    mpos = mpos[np.isfinite(mpos)]
    yg, rho, wg = spine.pair_merge_density(basis, t, x, n_steps=1024)
    mass = float(np.sum(rho * wg))
    frac_q = float(np.sum((rho * wg)[yg <= params.L / 2.0]) / mass)
    frac_e = float(np.mean(mpos <= params.L / 2.0))
    se = math.sqrt(max(frac_e * (1 - frac_e), 1e-12) / max(mpos.size, 1))
    reports.append(McReport(
        f"genealogy_merger_mass_below_half_k{k}", frac_e, frac_q,
        se + 0.01, n, "se 3",
        extra={"note": "se includes 0.01 sampling-vs-pair-weighting allowance"}))
    if out_dir is not None:
        write_csv(Path(out_dir) / f"genealogy_k{k}.csv",
                  ["depth_first_pair", "mrca_depth", "merge_pos_first"],
                  zip(depth1.tolist(),
                      np.max(run.depth[sampled], axis=1).tolist(),
                      run.merge_pos[sampled, 0].tolist()))
    _persist_reports(out_dir, f"genealogy_k{k}", reports)
    return reports


def _ultrametric_fraction(depths: np.ndarray, k: int) -> float:
    """Fraction of sampled matrices satisfying d_il <= max(d_ij, d_jl)."""
    n = depths.shape[0]
    if n == 0:
        return math.nan
    mats = np.zeros((n, k, k))
    p = 0
    for i in range(k):
        for j in range(i + 1, k):
            mats[:, i, j] = mats[:, j, i] = depths[:, p]
            p += 1
    ok = np.ones(n, dtype=bool)
    for i in range(k):
        for j in range(k):
            for l in range(k):
                ok &= mats[:, i, l] <= np.maximum(mats[:, i, j],
                                                  mats[:, j, l]) + 1e-9
    return float(np.mean(ok))


def verify_merger_trend(L_values=(5.0, 10.0, 18.0), t_of_L=None,
                        out_dir=None) -> list[McReport]:
    """Merger-position localisation along a boundary ladder (quadrature).

    Exact pair-merger densities at near-mixed horizons; the median scaled
    by L must decrease as L grows and sit below L/2.
    """
    if t_of_L is None:
        t_of_L = lambda L: 2.0 * L * L
    med_rel = []
    reports = []
    for L in L_values:
        pars = params_for_length(L)
        basis = sp.build_basis(pars, K_max=256)
        t = t_of_L(L)
        x = min(1.0, 0.4 * L)
        yg, rho, wg = spine.pair_merge_density(basis, t, x, n_steps=1024)
        cdf = np.cumsum(rho * wg)
        cdf /= cdf[-1]
        med = float(np.interp(0.5, cdf, yg))
        med_rel.append(med / L)
        reports.append(McReport(f"merger_median_L{L:g}", med, L / 2.0, 0.0, 1,
                                "leq", extra={"median_over_L": med / L}))
    reports.append(McReport("merger_median_rel_decreasing",
                            med_rel[-1], med_rel[0], 0.0, len(L_values),
                            "decreasing", extra={"sequence": med_rel}))
    _persist_reports(out_dir, "merger_trend", reports)
    return reports


# ---------------------------------------------------------------------------
# moments (three-route cross-checks)
# ---------------------------------------------------------------------------

def verify_moments(params: ModelParams, x: float, t: float, k_max: int,
                   replicas: int, seed: int, dt: float = 1e-3,
                   n_spine: int = 100_000, out_dir=None,
                   include_hform: bool = False,
                   run: bbm.ObservableRun | None = None) -> list[McReport]:
    """Factorial moments of the additive martingale by three routes:
    direct simulation, spine Monte Carlo, and the quadrature recursion."""
    if k_max > 3:
        raise ParamsError("k_max <= 3 for the simulation route")
    basis = sp.build_basis(params, K_max=256)
    cfg = bbm.SimConfig(dt=dt)
    if run is None:
        run = bbm.run_observables(basis, ("single", x), [t], replicas, seed, cfg)
    j = int(np.argmin(np.abs(run.rec_times - t)))
    hx = float(basis.h(x))
    Y = run.Y[:, j]
    Q2 = run.Q2[:, j]
    Q3 = run.Q3[:, j]
    sigma2 = float(sp.closed_forms(params, params.L).Sigma_sq)
    H = sigma2 * t / 2.0
    # power sums -> sums over ordered distinct tuples
    S = {1: Y, 2: Y ** 2 - Q2, 3: Y ** 3 - 3 * Y * Q2 + 2 * Q3}
    rec = spine.SpineRecursion(basis, n_steps=1024)
    reports = []
    for k in range(1, k_max + 1):
        mc = S[k] / hx
        est = float(np.mean(mc))
        se = float(np.std(mc, ddof=1) / math.sqrt(run.replicas))
        if se > 0.2 * abs(est):
            reports.append(_inconclusive(
                McReport(f"moment_k{k}_bbm", est, est, se, run.replicas, "se 3"),
                "variance blow-up: se/estimate > 0.2"))
            continue
        # spine MC of k! t^{k-1} Delta prod h(leaves) (leaf h's cancel)
        val_s, se_s = spine.biased_measure(basis, k, t, x, basis.h, "mc",
                                           n_spine, seed + 17 * k)
        val_s *= math.factorial(k)
        se_s = (se_s or 0.0) * math.factorial(k)
        # quadrature recursion
        val_q = math.factorial(k) * rec.solve(k, t, basis.h).value_at(x)
        comb = math.hypot(se, se_s)
        reports.append(McReport(f"moment_k{k}_bbm_vs_spine", est, val_s,
                                comb if comb > 0 else 1e-12, run.replicas, "se 3"))
        reports.append(McReport(f"moment_k{k}_bbm_vs_quadrature", est, val_q,
                                se if se > 0 else 1e-12, run.replicas, "se 3"))
        reports.append(McReport(f"moment_k{k}_spine_vs_quadrature", val_s,
                                val_q, se_s if se_s > 0 else 1e-12, n_spine,
                                "se 3"))
        if include_hform:
            tgt = math.factorial(k) * H ** (k - 1)
            reports.append(McReport(f"moment_k{k}_vs_hform", est, tgt,
                                    se if se > 0 else 1e-12, run.replicas,
                                    "se 3"))
        if k == 1:
            reports.append(McReport("moment_k1_martingale", est, 1.0, se,
                                    run.replicas, "se 3"))
    _persist_reports(out_dir, "moments", reports)
    return reports


# ---------------------------------------------------------------------------
# asymptotic-constant trends along an N ladder (pure quadrature)
# ---------------------------------------------------------------------------

def verify_constant_trend(c: float = 0.5, N_ladder=(10 ** 4, 10 ** 8, 10 ** 16),
                          out_dir=None) -> list[McReport]:
    """Rescaled variance vs the stated constant 64 pi^2/c^6, and the
    best-class count vs a = 6, along an N ladder.

    Convergence is log-log slow: L carries a 6 loglog N term, so
    (c log N / L)^6 suppresses the ratio far below 1 at any desk-scale N
    (see the decisions ledger for the full analysis, including the
    companion ratio against 64 pi^4/c^6 implied by the profile formulas).
    """
    sigma2_stated = sp.sigma_sq_limit_constant(c)
    sigma2_implied = sigma2_stated * math.pi ** 2
    ratios, ratios4, count = [], [], []
    for N in N_ladder:
        pars = params_for_population(int(N), c)
        s2 = float(sp.closed_forms(pars, pars.L).Sigma_sq) / float(N) ** c
        ratios.append(s2 / sigma2_stated)
        ratios4.append(s2 / sigma2_implied)
        count.append(sp.best_class_stats(pars).count_ratio)
    reports = []
    gaps = [abs(r - 1.0) for r in ratios]
    reports.append(McReport("sigma_trend_monotone_toward_1", gaps[-1], gaps[0],
                            0.0, len(N_ladder), "decreasing",
                            extra={"sequence": gaps, "ratios": ratios,
                                   "ratios_vs_64pi4_c6": ratios4}))
    reports.append(McReport("sigma_trend_within_25pct_at_top", ratios[-1], 1.0,
                            0.0, 1, "rel 0.25",
                            extra={"ratios": ratios,
                                   "ratios_vs_64pi4_c6": ratios4}))
    jgaps = [abs(v - 6.0) for v in count]
    reports.append(McReport("best_class_count_trend_toward_6", jgaps[-1],
                            jgaps[0], 0.0, len(N_ladder), "decreasing",
                            extra={"sequence": jgaps, "values": count}))
    _persist_reports(out_dir, "constant_trend", reports)
    return reports


# ---------------------------------------------------------------------------
# CPP internal consistency
# ---------------------------------------------------------------------------

def _phi_basket(T: float):
    return {
        "one": lambda m: 1.0,
        "all_below_half": lambda m: float(np.all(m[np.triu_indices_from(m, 1)]
                                                 <= T / 2.0)),
        "exp_mean": lambda m: math.exp(-float(np.mean(
            m[np.triu_indices_from(m, 1)])) / T),
        "max_over_T": lambda m: float(np.max(m)) / T,
        "first_pair_below_third": lambda m: float(m[0, 1] <= T / 3.0),
    }


def verify_cpp(T: float = 1.0, seed: int = 0, n_moment: int = 100_000,
               n_law: int = 1_000_000, out_dir=None) -> list[McReport]:
    """Formula vs Monte Carlo moments, the exponential mass law, and the
    uniform-gap law."""
    reports = []
    for k in (2, 3, 4):
        for name, phi in _phi_basket(T).items():
            vf, sf = cpp.cpp_moment(k, T, phi, "formula", n_moment,
                                    rngmod.stream(seed, rngmod.TAG_CPP, 10 + k))
            vm, sm = cpp.cpp_moment(k, T, phi, "monte-carlo", n_moment,
                                    rngmod.stream(seed, rngmod.TAG_CPP, 20 + k))
            se = math.hypot(sf, sm)
            reports.append(McReport(f"cpp_moment_k{k}_{name}", vm, vf,
                                    se if se > 0 else 1e-12, n_moment, "se 3"))
    g = rngmod.stream(seed, rngmod.TAG_CPP, 30)
    ys = g.exponential(scale=T, size=n_law)
    se = float(np.std(ys, ddof=1) / math.sqrt(n_law))
    reports.append(McReport("cpp_mass_mean", float(np.mean(ys)), T, se,
                            n_law, "se 3"))
    gaps = T * g.random(n_law)
    ks = ks_one_sample(gaps, lambda s: np.clip(s / T, 0.0, 1.0))
    reports.append(McReport("cpp_uniform_gap_ks", ks, 0.0, 0.0, n_law,
                            "ks 0.005"))
    _persist_reports(out_dir, "cpp", reports)
    return reports

"""Eigen-system, kernels, Green's function and variance profile.

Everything here is exact-in-principle numerics for the operator
(1/2) d^2/dx^2 with Robin(beta) flux at 0 and Dirichlet killing at L.
Mode frequencies gamma_k solve beta*sin(gamma*L) + gamma*cos(gamma*L) = 0
with gamma_k*L in [(k-1/2)pi, k*pi]; the product form avoids the tangent
asymptote so plain bisection converges unconditionally.  At the critical
boundary the leading mode has gamma_1 = sqrt(1-beta^2), sin(gamma_1 L) =
gamma_1 and cos(gamma_1 L) = -beta.

Normalisations used throughout (all verified by the test suite):

    h_tilde(x) = c * e^{beta x} v1(x),  c = e^{-beta L} / gamma_1
    h(x)       = (1/c) * (2/(L+beta)) * e^{-beta x} v1(x)
    Pi(x)      = h(x) h_tilde(x) = (2/(L+beta)) v1(x)^2

so that integral(h_tilde) = integral(h * h_tilde) = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate

from .errors import DomainError, KernelFloorError, ParamsError
from .params import ModelParams

__all__ = [
    "SpectralBasis",
    "VarianceProfile",
    "BestClassStats",
    "ClosedForms",
    "build_basis",
    "closed_forms",
    "variance_profile",
    "best_class_stats",
    "sigma_sq_limit_constant",
    "heat_kernel",
    "spine_kernel",
    "greens_function",
    "time_integrated_kernel",
    "stable_cdf",
    "stable_quantile_table",
]

# Bisection depth for eigenvalues: interval width (pi/L) * 2^-110 is far
# below double resolution, so residuals are limited by fp evaluation only.
_BISECT_ITERS = 110
_RESIDUAL_TOL = 1e-9


def _eigen_residual(beta: float, L: float, gammas: np.ndarray) -> np.ndarray:
    return np.abs(beta * np.sin(gammas * L) + gammas * np.cos(gammas * L))


def _solve_gammas(beta: float, L: float, k_max: int) -> np.ndarray:
    """All mode frequencies gamma_1 < ... < gamma_Kmax by vector bisection."""
    k = np.arange(1, k_max + 1)
    lo = (k - 0.5) * np.pi / L
    hi = k * np.pi / L
    if beta == 0.0:
        return lo.astype(float)  # degenerate Robin: cosine modes
    g = lambda x: beta * np.sin(x * L) + x * np.cos(x * L)
    flo, fhi = g(lo), g(hi)
    if np.any(np.sign(flo) == np.sign(fhi)):
        raise ParamsError("eigenvalue bracket does not change sign; "
                          "parameters are corrupted")
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        fmid = g(mid)
        take_lo = np.sign(fmid) == np.sign(flo)
        lo = np.where(take_lo, mid, lo)
        flo = np.where(take_lo, fmid, flo)
        hi = np.where(take_lo, hi, mid)
    gammas = 0.5 * (lo + hi)
    # bisection converges to the fp limit; the raw residual then scales as
    # gamma * ulp(gamma L), so high modes need a scaled sanity tolerance
    tol = _RESIDUAL_TOL + 100.0 * np.finfo(float).eps * gammas * (1.0 + gammas * L)
    bad = _eigen_residual(beta, L, gammas) > tol
    if np.any(bad):
        raise ParamsError(f"eigenvalue residuals exceed tolerance "
                          f"at modes {np.nonzero(bad)[0] + 1}")
    return gammas


@dataclass(frozen=True)
class SpectralBasis:
    """Immutable eigen-system of a critical model; safe to share across workers."""

    params: ModelParams
    gammas: np.ndarray      # ascending mode frequencies, gammas[0] = sqrt(1-beta^2)
    norms_sq: np.ndarray    # ||v_k||^2 = (L + beta/(beta^2+gamma_k^2)) / 2
    K_max: int
    t_floor: float          # below this, heat_kernel refuses to certify

    def __post_init__(self):
        self.gammas.setflags(write=False)
        self.norms_sq.setflags(write=False)

    # -- scalars -----------------------------------------------------------
    @property
    def beta(self) -> float:
        return self.params.beta

    @property
    def L(self) -> float:
        return self.params.L

    @property
    def gamma1(self) -> float:
        return float(self.gammas[0])

    @property
    def c_tilde(self) -> float:
        """Perron-Frobenius normaliser e^{-beta L} / gamma_1 (exact)."""
        return math.exp(-self.beta * self.L) / self.gamma1

    @property
    def h_amp(self) -> float:
        """Prefactor of h: (1/c_tilde) * 2/(L+beta)."""
        return (1.0 / self.c_tilde) * 2.0 / (self.L + self.beta)

    # -- eigenfunction evaluators -------------------------------------------
    def _check_domain(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any(x < 0.0) or np.any(x > self.L):
            raise DomainError(f"position outside [0, {self.L}]")
        return x

    def v(self, x, k: int | None = None) -> np.ndarray:
        """v_k(x) = sin(gamma_k (L - x)); all modes (..., K) when k is None."""
        x = self._check_domain(x)
        if k is not None:
            return np.sin(self.gammas[k - 1] * (self.L - x))
        return np.sin(np.multiply.outer(self.L - x, self.gammas))

    def v1(self, x) -> np.ndarray:
        return np.sin(self.gamma1 * (self.L - self._check_domain(x)))

    def h(self, x) -> np.ndarray:
        """Reproductive value; h(L) = 0, integral(h * h_tilde) = 1."""
        x = self._check_domain(x)
        return self.h_amp * np.exp(-self.beta * x) * np.sin(self.gamma1 * (self.L - x))

    def h_tilde(self, x) -> np.ndarray:
        """Stable-configuration density; integral over [0, L] is 1."""
        x = self._check_domain(x)
        return self.c_tilde * np.exp(self.beta * x) * np.sin(self.gamma1 * (self.L - x))

    def pi_density(self, x) -> np.ndarray:
        """Spine invariant density h * h_tilde = (2/(L+beta)) v1^2."""
        x = self._check_domain(x)
        return (2.0 / (self.L + self.beta)) * np.sin(self.gamma1 * (self.L - x)) ** 2

    # -- certified truncation ------------------------------------------------
    def _mode_bound(self, gammas: np.ndarray,
                    norm_ratio: np.ndarray) -> np.ndarray:
        """Upper bound on sup_{x,y} |term_k(x,y)| / (h(x) h_tilde(y)) at t = 0.

        Uses sin(theta) >= (2/pi) min(theta, pi - theta) for the leading mode
        and |v_k| <= min(1, gamma_k u); valid for every L (no large-L proviso).
        """
        edge = math.pi / (2.0 * math.atan2(self.gamma1, self.beta))
        ratio = np.maximum((math.pi / 2.0) * gammas / self.gamma1, edge)
        return ratio ** 2 * norm_ratio

    def truncation_tail(self, K: int, t: float) -> float:
        """Certified bound on the relative (to h(x)h_tilde(y)) tail beyond mode K."""
        decay = lambda g: np.exp(-(g ** 2 - self.gamma1 ** 2) * t / 2.0)
        tail = 0.0
        if K < self.K_max:
            g = self.gammas[K:]
            nr = self.norms_sq[0] / self.norms_sq[K:]
            tail += float(np.sum(self._mode_bound(g, nr) * decay(g)))
        # analytic continuation past K_max: gamma_k in [(k-1/2)pi/L, k pi/L]
        k0 = max(K, self.K_max) + 1
        ks = np.arange(k0, k0 + 4000)
        g_lo = (ks - 0.5) * np.pi / self.L
        g_hi = ks * np.pi / self.L
        nr = (self.L + self.beta) / self.L
        tail += float(np.sum(self._mode_bound(g_hi, np.full_like(g_hi, nr))
                             * decay(g_lo)))
        return tail

    def modes_for_tolerance(self, t: float, rel_tol: float) -> int:
        """Smallest K whose certified tail at time t is below rel_tol."""
        if t < self.t_floor:
            raise KernelFloorError(
                f"t={t} below t_floor={self.t_floor}; spectral sum refuses "
                f"to certify (use short-time simulation instead)")
        lo, hi = 1, self.K_max
        if self.truncation_tail(hi, t) > rel_tol:
            raise KernelFloorError(
                f"cannot certify rel_tol={rel_tol} at t={t} with K_max={self.K_max}")
        while lo < hi:
            mid = (lo + hi) // 2
            if self.truncation_tail(mid, t) <= rel_tol:
                hi = mid
            else:
                lo = mid + 1
        return lo


def build_basis(params: ModelParams, K_max: int = 64,
                t_floor: float | None = None) -> SpectralBasis:
    """Solve the first K_max modes; t_floor defaults to 0.01 * L^2."""
    if K_max < 1:
        raise ParamsError("K_max must be >= 1")
    beta, L = params.beta, params.L
    gammas = _solve_gammas(beta, L, K_max)
    # cos^2(gamma L) = beta^2/(beta^2+gamma^2) at a root; stable at beta = 0
    norms_sq = 0.5 * (L + beta / (beta ** 2 + gammas ** 2))
    if beta > 0.0:
        crit = abs(gammas[0] ** 2 + beta ** 2 - 1.0)
        if crit > 1e-10:
            raise ParamsError(f"criticality violated: gamma_1^2+beta^2-1 = {crit:.2e}")
    if t_floor is None:
        t_floor = 0.01 * L * L
    return SpectralBasis(params=params, gammas=gammas, norms_sq=norms_sq,
                         K_max=K_max, t_floor=t_floor)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def _mode_matrices(basis: SpectralBasis, t: float, x, y, K: int):
    x = np.atleast_1d(basis._check_domain(x))
    y = np.atleast_1d(basis._check_domain(y))
    g = basis.gammas[:K]
    w = np.exp(-(g ** 2 - basis.gamma1 ** 2) * t / 2.0) / basis.norms_sq[:K]
    Vx = np.sin(np.multiply.outer(basis.L - x, g))
    Vy = np.sin(np.multiply.outer(basis.L - y, g))
    return x, y, w, Vx, Vy


def heat_kernel(basis: SpectralBasis, t: float, x, y, rel_tol: float = 1e-10):
    """Particle density p_t(x, y); returns (value, certified absolute bound).

    p_t(x,y) = e^{(1-b^2)t/2} e^{b(y-x)} sum_k e^{-g_k^2 t/2} v_k(x)v_k(y)/|v_k|^2,
    truncated at the smallest K whose tail is certified below
    rel_tol * h(x) h_tilde(y).  Scalar in, scalar out; arrays broadcast to
    an outer (x, y) grid.
    """
    scalar = np.isscalar(x) and np.isscalar(y)
    K = basis.modes_for_tolerance(t, rel_tol)
    x, y, w, Vx, Vy = _mode_matrices(basis, t, x, y, K)
    core = np.einsum("ik,k,jk->ij", Vx, w, Vy)
    value = np.exp(basis.beta * np.subtract.outer(-x, -y)) * core
    bound = basis.truncation_tail(K, t) * np.multiply.outer(basis.h(x), basis.h_tilde(y))
    if scalar:
        return float(value[0, 0]), float(bound[0, 0])
    return value, bound


def spine_kernel(basis: SpectralBasis, t: float, x, y, rel_tol: float = 1e-10):
    """Spine transition density q_t(x,y) = h(y) p_t(x,y) / h(x).

    The exponential tilts cancel: q_t(x,y) = (v1(y)/v1(x)) * core, so the
    kernel is conservative by mode-1 orthogonality.  Undefined at x = L.
    """
    if np.any(np.asarray(x) >= basis.L):
        raise DomainError("spine kernel undefined at the killing boundary")
    scalar = np.isscalar(x) and np.isscalar(y)
    K = basis.modes_for_tolerance(t, rel_tol)
    x, y, w, Vx, Vy = _mode_matrices(basis, t, x, y, K)
    core = np.einsum("ik,k,jk->ij", Vx, w, Vy)
    value = np.multiply.outer(1.0 / np.sin(basis.gamma1 * (basis.L - x)),
                              np.sin(basis.gamma1 * (basis.L - y))) * core
    if scalar:
        return float(value[0, 0])
    return value


def greens_function(basis: SpectralBasis, x, y) -> np.ndarray:
    """Occupation density G(x,y) = 2 (beta*min+1)(L - max) / (beta*L + 1).

    Normalised so that E[int_0^tau g(B_s) ds] = int G(x,y) g(y) dy for the
    half-Laplacian diffusion, i.e. G = int_0^inf g_s ds; the generator's
    1/2 contributes the speed-measure factor 2 (the time-integrated
    spectral sum pins it down, see the verification suite).
    """
    scalar = np.isscalar(x) and np.isscalar(y)
    x = np.atleast_1d(basis._check_domain(x))
    y = np.atleast_1d(basis._check_domain(y))
    lo = np.minimum.outer(x, y)
    hi = np.maximum.outer(x, y)
    val = (2.0 * (basis.beta * lo + 1.0) * (basis.L - hi)
           / (basis.beta * basis.L + 1.0))
    return float(val[0, 0]) if scalar else val


def time_integrated_kernel(basis: SpectralBasis, T: float, x, y) -> np.ndarray:
    """integral_0^T g_s(x,y) ds via exact per-mode time integrals.

    g_s is the self-adjoint (driftless) kernel; the integral converges
    upward to the Green's function as T grows.  Uses every mode in the
    basis, so pass a large K_max basis for tight pointwise accuracy.
    """
    x = np.atleast_1d(basis._check_domain(x))
    y = np.atleast_1d(basis._check_domain(y))
    g = basis.gammas
    w = (2.0 / g ** 2) * (1.0 - np.exp(-g ** 2 * T / 2.0)) / basis.norms_sq
    Vx = np.sin(np.multiply.outer(basis.L - x, g))
    Vy = np.sin(np.multiply.outer(basis.L - y, g))
    out = np.einsum("ik,k,jk->ij", Vx, w, Vy)
    return out


# ---------------------------------------------------------------------------
# closed forms of the variance profile
# ---------------------------------------------------------------------------

class ClosedForms(NamedTuple):
    I1: np.ndarray        # integral_0^z e^{-bx} v1 dx
    I3: np.ndarray        # integral_0^z e^{-bx} sin(3 g (L-x)) dx
    J: np.ndarray         # integral_0^z h_tilde dx  (J_L = 1)
    Sigma_sq: np.ndarray  # integral_0^z h^2 h_tilde dx


def closed_forms(params: ModelParams, z) -> ClosedForms:
    """Exact antiderivatives of the variance-profile integrands at z in [0, L]."""
    beta, L = params.beta, params.L
    gamma = params.gamma
    z = np.asarray(z, dtype=float)
    if np.any(z < 0.0) or np.any(z > L):
        raise DomainError(f"z outside [0, {L}]")
    u = gamma * (L - z)
    ez = np.exp(-beta * z)
    I1 = 2.0 * beta * gamma + ez * (gamma * np.cos(u) - beta * np.sin(u))
    I3 = (6.0 * beta * gamma - 16.0 * beta * gamma ** 3
          + ez * (3.0 * gamma * np.cos(3.0 * u) - beta * np.sin(3.0 * u)))
    I3 = I3 / (1.0 + 8.0 * gamma ** 2)
    J = (1.0 / gamma) * np.exp(-beta * (L - z)) * (
        beta * np.sin(u) + gamma * np.cos(u))
    pref = 4.0 * gamma * math.exp(beta * L) / (L + beta) ** 2
    sigma_sq = pref * (0.75 * I1 - 0.25 * I3)
    return ClosedForms(I1=I1, I3=I3, J=J, Sigma_sq=sigma_sq)


def sigma_sq_limit_constant(c: float) -> float:
    """Limit constant 64 pi^2 / c^6 of the rescaled reproductive variance.

    This is the constant stated with the concentration result; the trend
    checks report the measured ratio against it (convergence in N is
    log-log slow, see the verification suite).
    """
    return 64.0 * math.pi ** 2 / c ** 6


@dataclass(frozen=True)
class VarianceProfile:
    """Cumulative reproductive variance Sigma(z)^2 and its N-scaling data."""

    sigma_sq_of_z: Callable[[np.ndarray], np.ndarray]
    sigma_sq_total: float
    sigma_sq_limit: float | None    # 64 pi^2 / c^6 when c is known
    A_N: float | None               # best-class boundary when N is known


def variance_profile(params: ModelParams) -> VarianceProfile:
    total = float(closed_forms(params, params.L).Sigma_sq)
    limit = sigma_sq_limit_constant(params.c) if params.c is not None else None
    a_n = best_class_boundary(params) if params.N is not None else None
    return VarianceProfile(
        sigma_sq_of_z=lambda z: closed_forms(params, z).Sigma_sq,
        sigma_sq_total=total, sigma_sq_limit=limit, A_N=a_n)


def best_class_boundary(params: ModelParams) -> float:
    """A_N = loglog_coeff * loglog(N) - logloglog(N)."""
    if params.N is None:
        raise ParamsError("best-class boundary requires a population scale N")
    llN = math.log(math.log(params.N))
    return params.loglog_coeff * llN - math.log(llN)


@dataclass(frozen=True)
class BestClassStats:
    A_N: float
    expected_count_below_A: float   # N * J(A_N)
    sigma_sq_at_A: float
    count_ratio: float              # expected_count / N^{1-c}  (trend -> a)
    var_ratio: float                # sigma_sq_at_A / sigma_sq(L) (trend -> 1)


def best_class_stats(params: ModelParams) -> BestClassStats:
    """Best-class summary; raises if N is too small for A_N < L."""
    a_n = best_class_boundary(params)
    if a_n >= params.L:
        raise ParamsError(
            f"A_N={a_n:.4f} >= L={params.L:.4f}: N too small for the "
            f"asymptotic regime (not clamping)")
    cf_a = closed_forms(params, a_n)
    cf_l = closed_forms(params, params.L)
    expected = params.N * float(cf_a.J)
    return BestClassStats(
        A_N=a_n,
        expected_count_below_A=expected,
        sigma_sq_at_A=float(cf_a.Sigma_sq),
        count_ratio=expected / params.N ** (1.0 - params.c),
        var_ratio=float(cf_a.Sigma_sq) / float(cf_l.Sigma_sq),
    )


# ---------------------------------------------------------------------------
# stable configuration sampling support
# ---------------------------------------------------------------------------

def stable_cdf(params: ModelParams, x) -> np.ndarray:
    """CDF of the stable configuration h_tilde: J(x) (J(L) = 1)."""
    return closed_forms(params, x).J


def stable_quantile_table(params: ModelParams, n: int = 16384):
    """(u_grid, x_grid) table for inverse-CDF sampling of h_tilde.

    Built by inverting the exact CDF J on a fine x-grid; linear
    interpolation in between keeps the KS error well below 1e-3.
    """
    x = np.linspace(0.0, params.L, n)
    u = np.asarray(stable_cdf(params, x), dtype=float)
    u[0], u[-1] = 0.0, 1.0
    u = np.maximum.accumulate(u)
    return u, x


# ---------------------------------------------------------------------------
# quadrature oracles (independent routes for the closed forms)
# ---------------------------------------------------------------------------

def quad_sigma_sq(basis: SpectralBasis, z: float, tol: float = 1e-12) -> float:
    """Adaptive quadrature of integral_0^z h^2 h_tilde (oracle for Sigma^2)."""
    val, _ = integrate.quad(lambda s: basis.h(s) ** 2 * basis.h_tilde(s),
                            0.0, z, epsabs=tol, epsrel=1e-12, limit=200)
    return val


def quad_h_tilde_mass(basis: SpectralBasis, z: float, tol: float = 1e-12) -> float:
    """Adaptive quadrature of integral_0^z h_tilde (oracle for J)."""
    val, _ = integrate.quad(basis.h_tilde, 0.0, z, epsabs=tol, epsrel=1e-12,
                            limit=200)
    return val

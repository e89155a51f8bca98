"""Brownian coalescent point process: exact samplers and moment formulas.

The raw Poisson construction (intensity dt * x^{-2} dx) is never
simulated; the finite-dimensional laws are exact and cheap:

  * population size Y ~ Exponential(mean T);
  * given k uniform sample points, consecutive-pair depths are i.i.d.
    Uniform[0, T] and d(i, j) = max of the intervening depths;
  * the k-sample distance matrix of the limit genealogy follows the
    theta-mixture law: theta integrates k (1+theta)^{-2} (theta/(1+theta))^{k-1},
    sampled exactly via u = V^{1/k}, theta = u/(1-u); each depth inverts
    P(U <= s) = (1+theta)(s/T) / (1+theta s/T) as s = T r / ((1+theta) - theta r).

Moments: E[Phi] = k! T^k E[phi(U_{sigma_i, sigma_j})] (formula route), or
size-biased integration over CPP realisations (Monte Carlo route).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParamsError

__all__ = [
    "CppSample", "HMatrix", "sample_cpp_distances", "sample_H_matrix",
    "sample_H_matrices", "pair_depth_cdf", "cpp_moment", "gaps_to_matrix",
]


def gaps_to_matrix(gaps: np.ndarray) -> np.ndarray:
    """Distance matrix d(i,j) = max(gaps[i..j-1]) from consecutive depths."""
    k = gaps.shape[0] + 1
    d = np.zeros((k, k))
    for i in range(k):
        run = 0.0
        for j in range(i + 1, k):
            run = max(run, gaps[j - 1])
            d[i, j] = d[j, i] = run
    return d


def _batch_gaps_to_matrix(gaps: np.ndarray) -> np.ndarray:
    """(n, k-1) gap depths -> (n, k, k) matrices, vectorised over n."""
    n, km1 = gaps.shape
    k = km1 + 1
    d = np.zeros((n, k, k))
    for i in range(k):
        run = np.zeros(n)
        for j in range(i + 1, k):
            run = np.maximum(run, gaps[:, j - 1])
            d[:, i, j] = d[:, j, i] = run
    return d


@dataclass(frozen=True)
class CppSample:
    """One realisation: population size Y and k-1 consecutive-pair depths."""

    T: float
    Y: float
    gaps: np.ndarray

    def distance_matrix(self) -> np.ndarray:
        return gaps_to_matrix(self.gaps)


@dataclass(frozen=True)
class HMatrix:
    """k-sample distance matrix of the limit genealogy (theta-mixture law)."""

    k: int
    T: float
    entries: np.ndarray

    def max_depth(self) -> float:
        return float(np.max(self.entries))


def sample_cpp_distances(k: int, T: float, rng: np.random.Generator) -> CppSample:
    """Exact finite-dimensional CPP sample: Y ~ Exp(mean T), gaps ~ U[0,T]."""
    if k < 2 or T <= 0.0:
        raise ParamsError("need k >= 2 and T > 0")
    y = rng.exponential(scale=T)
    gaps = T * rng.random(k - 1)
    return CppSample(T=float(T), Y=float(y), gaps=gaps)


def _sample_theta(k: int, n: int, rng: np.random.Generator) -> np.ndarray:
    # substitution u = theta/(1+theta) turns the mixture density into k u^{k-1}
    u = rng.random(n) ** (1.0 / k)
    return u / (1.0 - u)


def sample_H_matrices(k: int, t: float, sigma_sq: float, n: int,
                      rng: np.random.Generator) -> np.ndarray:
    """(n, k, k) matrices from the theta-mixture at height T = sigma_sq*t/2."""
    if k < 2 or t <= 0.0 or sigma_sq <= 0.0:
        raise ParamsError("need k >= 2, t > 0, sigma_sq > 0")
    T = 0.5 * sigma_sq * t
    theta = _sample_theta(k, n, rng)[:, None]
    r = rng.random((n, k - 1))
    depths = T * r / ((1.0 + theta) - theta * r)
    mats = _batch_gaps_to_matrix(depths)
    # independent uniform permutation of the sample labels
    for i in range(n):
        p = rng.permutation(k)
        mats[i] = mats[i][np.ix_(p, p)]
    return mats


def sample_H_matrix(k: int, t: float, sigma_sq: float,
                    rng: np.random.Generator) -> HMatrix:
    m = sample_H_matrices(k, t, sigma_sq, 1, rng)[0]
    return HMatrix(k=k, T=0.5 * sigma_sq * t, entries=m)


def pair_depth_cdf(s, T: float, k: int = 2) -> np.ndarray:
    """Marginal CDF of one entry of the k=2 H-matrix at height T.

    Integrating the theta-mixture for a single uniform copy gives
    F(s) = 2u (u - 1 - log u) / (1 - u)^2 with u = s/T.
    """
    if k != 2:
        raise ParamsError("closed-form marginal implemented for k = 2 only")
    u = np.clip(np.asarray(s, dtype=float) / T, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = 2.0 * u * (u - 1.0 - np.log(u)) / (1.0 - u) ** 2
    f = np.where(u <= 0.0, 0.0, f)
    f = np.where(u >= 1.0, 1.0, f)
    # remove the removable singularity at u -> 1
    near = np.abs(u - 1.0) < 1e-6
    if np.any(near):
        e = 1.0 - u[near]
        f = np.asarray(f)
        f[near] = 1.0 - e / 3.0 * (1.0 + e / 2.0)
    return f


def _conditional_gap_depths(gap_lengths: np.ndarray, T: float,
                            rng: np.random.Generator) -> np.ndarray:
    """Depths over intervals of given lengths: P(H <= s) = exp(-l(1/s - 1/T))."""
    u = rng.random(gap_lengths.shape)
    with np.errstate(divide="ignore"):
        s = 1.0 / (1.0 / T - np.log(u) / gap_lengths)
    return s


def cpp_moment(k: int, T: float, phi, mode: str, n: int = 100_000,
               rng: np.random.Generator | None = None):
    """Moment of the CPP polynomial for phi: returns (value, se).

    mode 'formula': k! T^k times the U-expectation over i.i.d. uniform
    depths with an independent permutation.  mode 'monte-carlo': draws the
    population size Y, k uniform points in [0, Y], the conditional PPP
    depths of the k-1 spacings, and weights by Y^k (size-biasing).
    """
    if rng is None:
        raise ParamsError("cpp_moment needs an explicit Generator")
    if k < 1:
        raise ParamsError("k must be >= 1")
    if mode == "formula":
        gaps = T * rng.random((n, k - 1))
        mats = _batch_gaps_to_matrix(gaps)
        vals = np.empty(n)
        for i in range(n):
            p = rng.permutation(k)
            vals[i] = phi(mats[i][np.ix_(p, p)])
        vals *= math.factorial(k) * T ** k
        return float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(n))
    if mode == "monte-carlo":
        y = rng.exponential(scale=T, size=n)
        pts = np.sort(y[:, None] * rng.random((n, k)), axis=1)
        lengths = np.diff(pts, axis=1)
        depths = _conditional_gap_depths(lengths, T, rng)
        mats = _batch_gaps_to_matrix(depths)
        vals = np.empty(n)
        for i in range(n):
            # unsorted i.i.d. picks = sorted picks under a uniform relabelling
            p = rng.permutation(k)
            vals[i] = phi(mats[i][np.ix_(p, p)])
        vals *= y ** k
        return float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(n))
    raise ParamsError(f"unknown mode {mode!r}")

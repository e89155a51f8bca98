"""k-spine trees: planar topology, diffusion marks, weights, biased measures.

A topology of depth t on k leaves comes from k-1 i.i.d. Uniform[0, t]
gap depths U_i; the pairwise tree distance is U_{i,j} = max(U_i..U_{j-1}).
Marks run the leading-mode Doob transform (the spine diffusion) along the
branches, splitting into independent copies at branch points.  The weight

    Delta = (1/2)^(k-1) * prod_branch h(mark) / prod_leaf h(mark)

turns spine averages into factorial-moment formulas: for a leaf functional
F, E_x[sum over ordered distinct k-tuples] = k! h(x) t^(k-1) E[Delta * F].

The biased measure L^{k,t}_x(F) = t^(k-1) E_Q[Delta F] satisfies a
branching recursion in (k, t); `SpineRecursion` evaluates it by an
exponential integrator in the eigenbasis (exact semigroup steps, second
order in the source), which stays accurate where naive time quadrature
would need uncertifiably-small kernel times near s -> t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import rng as rngmod
from ._rngcore import normal, state_for
from .errors import DomainError, ParamsError
from .spectral import SpectralBasis

__all__ = [
    "SpineTopology", "MarkedSpine", "MarkedSpineBatch",
    "sample_topology", "run_marks", "sample_marked_spines",
    "log_weight_delta", "weight_delta", "biased_measure",
    "SpineRecursion", "pair_merge_density",
]


# ---------------------------------------------------------------------------
# topology
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpineTopology:
    """Planar ultrametric tree of depth t with k leaves (gap depths U_i)."""

    k: int
    t: float
    depths: np.ndarray  # (k-1,) gap depths in (0, t)

    def __post_init__(self):
        if self.k < 1:
            raise ParamsError("k must be >= 1")
        if self.depths.shape != (self.k - 1,):
            raise ParamsError("need k-1 gap depths")
        if self.k > 1:
            u = np.sort(self.depths)
            if np.any(np.diff(u) == 0.0):
                raise ParamsError("tied branch depths: topology not binary")

    def matrix(self) -> np.ndarray:
        """U_{i,j} = max of the gap depths between leaves i and j."""
        k = self.k
        m = np.zeros((k, k))
        for i in range(k):
            for j in range(i + 1, k):
                m[i, j] = m[j, i] = np.max(self.depths[i:j])
        return m

    @property
    def tau(self) -> float:
        """Depth of the first (deepest) branch point."""
        return float(np.max(self.depths)) if self.k > 1 else 0.0


def sample_topology(k: int, t: float, rng_: np.random.Generator,
                    max_retries: int = 16) -> SpineTopology:
    """Topology from k-1 i.i.d. Uniform[0, t] depths; resamples ties."""
    if k < 1 or t <= 0.0:
        raise ParamsError("need k >= 1 and t > 0")
    for _ in range(max_retries):
        u = t * rng_.random(k - 1)
        if k == 1 or np.unique(u).size == k - 1:
            return SpineTopology(k=k, t=float(t), depths=u)
    raise RuntimeError("persistent depth ties; broken RNG?")


# tree expansion: nodes are (kind, index, parent, time); kind 0 = branch
# (index = gap), kind 1 = leaf (index = leaf number)

def _expand_tree(depths: np.ndarray, t: float):
    """Edge list by wave for one topology; nodes numbered in build order."""
    k = depths.shape[0] + 1
    nodes = []   # (wave, parent_node, kind, index, time)
    stack = [(0, -1, 0, k, 0.0)]  # (wave, parent, leaf_lo, leaf_hi, time)
    while stack:
        wave, par, lo, hi, t0 = stack.pop()
        if hi - lo == 1:
            nodes.append((wave, par, 1, lo, t))
            continue
        g = lo + int(np.argmax(depths[lo:hi - 1]))
        tb = t - depths[g]
        nid = len(nodes)
        nodes.append((wave, par, 0, g, tb))
        stack.append((wave + 1, nid, lo, g + 1, tb))
        stack.append((wave + 1, nid, g + 1, hi, tb))
    return nodes


# ---------------------------------------------------------------------------
# edge sampling: exact kernel when certified, Euler-Maruyama otherwise
# ---------------------------------------------------------------------------

@njit(cache=True)
def _euler_edges(seeds0, seeds1, xs, durs, L, gamma1, dt0):
    """Spine diffusion dX = -gamma1*cot(gamma1(L-X))dt + dW, reflected at 0.

    Steps shrink as (L-x)^2/25 near the killing boundary, where the
    repelling drift blows up; overshoots past L are redrawn.
    """
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        s = state_for(seeds0[i], seeds1[i], 0)
        spare = np.zeros(2)
        x = xs[i]
        rem = durs[i]
        while rem > 0.0:
            gap = L - x
            h = dt0
            cap = gap * gap / 25.0
            if cap < h:
                h = cap
            if rem < h:
                h = rem
            b = -gamma1 / math.tan(gamma1 * gap)
            sq = math.sqrt(h)
            while True:
                xp = x + b * h + sq * normal(s, spare)
                if xp < L:
                    break
            if xp < 0.0:
                xp = -xp
            x = xp
            rem -= h
        out[i] = x
    return out


class EdgeSampler:
    """Batched endpoint sampler for spine edges of arbitrary durations.

    Durations at or above the kernel floor use inverse-CDF sampling of the
    exact transition kernel on a uniform grid (per-mode antiderivatives are
    closed-form, so the CDF is exact up to certified mode truncation);
    shorter edges fall back to Euler-Maruyama.
    """

    def __init__(self, basis: SpectralBasis, grid: int = 4096,
                 rel_tol: float = 1e-9, euler_dt: float = 1e-3,
                 allow_euler: bool = True):
        self.basis = basis
        self.rel_tol = rel_tol
        self.euler_dt = euler_dt
        self.allow_euler = allow_euler
        L, g1 = basis.L, basis.gamma1
        self.yg = np.linspace(0.0, L, grid + 1)
        g = basis.gammas
        # Phi_k(y) = int_0^y v1 v_k, by product-to-sum antiderivatives
        d = g1 - g
        sm = g1 + g
        u = L - self.yg[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            term_d = (np.sin(d * L) - np.sin(d * u)) / d
        term_d[:, 0] = self.yg  # k = 1: integrand cos(0) = 1
        term_s = (np.sin(sm * L) - np.sin(sm * u)) / sm
        self.phi = 0.5 * (term_d - term_s)          # (grid+1, K)
        self.delta = 0.5 * (g ** 2 - g1 ** 2)
        self.v1g = np.sin(g1 * (L - self.yg))

    def _sample_exact(self, xs, durs, rng_):
        b = self.basis
        K = b.modes_for_tolerance(float(np.min(durs)), self.rel_tol)
        vx = np.sin(b.gamma1 * (b.L - xs))
        A = (np.sin(np.multiply.outer(b.L - xs, b.gammas[:K]))
             * np.exp(-np.multiply.outer(durs, self.delta[:K]))
             / (vx[:, None] * b.norms_sq[:K]))
        F = A @ self.phi[:, :K].T               # (m, grid+1)
        F = np.maximum.accumulate(np.maximum(F, 0.0), axis=1)
        F /= F[:, -1:]
        u = rng_.random(xs.shape[0])
        out = np.empty(xs.shape[0])
        for i in range(xs.shape[0]):
            j = int(np.searchsorted(F[i], u[i]))
            j = min(max(j, 1), F.shape[1] - 1)
            f0, f1 = F[i, j - 1], F[i, j]
            w = 0.0 if f1 <= f0 else (u[i] - f0) / (f1 - f0)
            out[i] = self.yg[j - 1] + w * (self.yg[j] - self.yg[j - 1])
        return out

    def sample(self, xs, durs, rng_, chunk: int = 2048) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        durs = np.asarray(durs, dtype=float)
        if np.any(xs < 0.0) or np.any(xs >= self.basis.L):
            raise DomainError("edge start must lie in [0, L)")
        out = np.empty(xs.shape[0])
        zero = durs <= 0.0
        out[zero] = xs[zero]
        exact = (~zero) & (durs >= self.basis.t_floor)
        short = (~zero) & ~exact
        idx = np.nonzero(exact)[0]
        for i0 in range(0, idx.size, chunk):
            sl = idx[i0:i0 + chunk]
            out[sl] = self._sample_exact(xs[sl], durs[sl], rng_)
        if np.any(short):
            if not self.allow_euler:
                from .errors import KernelFloorError
                raise KernelFloorError(
                    "edge below kernel floor and Euler fallback disabled")
            seeds = rng_.integers(0, 2 ** 63, size=(int(np.sum(short)), 2),
                                  dtype=np.uint64)
            out[short] = _euler_edges(seeds[:, 0], seeds[:, 1],
                                      np.ascontiguousarray(xs[short]),
                                      np.ascontiguousarray(durs[short]),
                                      self.basis.L, self.basis.gamma1,
                                      self.euler_dt)
        return out


# ---------------------------------------------------------------------------
# marked spines
# ---------------------------------------------------------------------------

@dataclass
class MarkedSpine:
    topology: SpineTopology
    root: float
    branch_marks: np.ndarray  # (k-1,), indexed by gap
    leaf_marks: np.ndarray    # (k,)


@dataclass
class MarkedSpineBatch:
    k: int
    t: float
    root: float
    depths: np.ndarray        # (n, k-1)
    branch_marks: np.ndarray  # (n, k-1)
    leaf_marks: np.ndarray    # (n, k)

    def __len__(self):
        return self.depths.shape[0]


def _run_marks_batch(depth_rows: np.ndarray, t: float, x: float,
                     sampler: EdgeSampler, rng_, accelerate: float = 1.0):
    """Sample marks for n topologies sharing (k, t, root x)."""
    n, km1 = depth_rows.shape
    k = km1 + 1
    branch = np.full((n, max(km1, 1)), np.nan)
    leaf = np.full((n, k), np.nan)
    if k == 1:
        leaf[:, 0] = sampler.sample(np.full(n, x), np.full(n, t * accelerate),
                                    rng_)
        return branch[:, :0], leaf
    # expand all rows into per-wave edge lists
    pos = np.full((n, 2 * k - 1), np.nan)
    waves: dict[int, list] = {}
    node_meta = []
    for r in range(n):
        nodes = _expand_tree(depth_rows[r], t)
        node_meta.append(nodes)
        for nid, (wave, par, kind, idx, tnode) in enumerate(nodes):
            waves.setdefault(wave, []).append((r, nid, par, kind, idx, tnode))
    for w in sorted(waves):
        entries = waves[w]
        rows = np.array([e[0] for e in entries])
        starts = np.where(
            np.array([e[2] for e in entries]) < 0, x,
            pos[rows, np.array([max(e[2], 0) for e in entries])])
        t_par = np.array([
            0.0 if e[2] < 0 else node_meta[e[0]][e[2]][4] for e in entries])
        t_node = np.array([e[5] for e in entries])
        durs = (t_node - t_par) * accelerate
        ends = sampler.sample(starts, durs, rng_)
        for (r, nid, par, kind, idx, tnode), y in zip(entries, ends):
            pos[r, nid] = y
            if kind == 0:
                branch[r, idx] = y
            else:
                leaf[r, idx] = y
    return branch, leaf


def run_marks(topology: SpineTopology, x: float, basis: SpectralBasis,
              rng_: np.random.Generator, accelerate: float = 1.0,
              sampler: EdgeSampler | None = None) -> MarkedSpine:
    """Marks for one topology rooted at x (edges composed kernel-exactly)."""
    if not 0.0 <= x < basis.L:
        raise DomainError(f"root must lie in [0, L), got {x}")
    sampler = sampler or EdgeSampler(basis)
    branch, leaf = _run_marks_batch(topology.depths[None, :], topology.t, x,
                                    sampler, rng_, accelerate)
    return MarkedSpine(topology, x, branch[0], leaf[0])


def sample_marked_spines(basis: SpectralBasis, k: int, t: float, x: float,
                         n: int, master_seed: int, accelerate: float = 1.0,
                         sampler: EdgeSampler | None = None,
                         batch: int = 4096) -> MarkedSpineBatch:
    """n i.i.d. marked spines; deterministic in (master_seed)."""
    if not 0.0 <= x < basis.L:
        raise DomainError(f"root must lie in [0, L), got {x}")
    rng_ = rngmod.stream(master_seed, rngmod.TAG_SPINE)
    sampler = sampler or EdgeSampler(basis)
    depths = t * rng_.random((n, max(k - 1, 1)))[:, : k - 1]
    if k > 2:
        # binary topology needs distinct depths; ties have probability ~0
        for _ in range(16):
            tied = np.nonzero((np.diff(np.sort(depths, axis=1), axis=1) == 0.0)
                              .any(axis=1))[0]
            if tied.size == 0:
                break
            depths[tied] = t * rng_.random((tied.size, k - 1))
    branch = np.empty((n, max(k - 1, 0)))
    leaf = np.empty((n, k))
    for i0 in range(0, n, batch):
        sl = slice(i0, min(i0 + batch, n))
        b, l = _run_marks_batch(depths[sl], t, x, sampler, rng_, accelerate)
        branch[sl] = b.reshape(sl.stop - sl.start, -1)
        leaf[sl] = l
    return MarkedSpineBatch(k=k, t=float(t), root=float(x), depths=depths,
                            branch_marks=branch, leaf_marks=leaf)


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------

def log_weight_delta(basis: SpectralBasis, branch_marks, leaf_marks):
    """log Delta, elementwise over the batch (log-space: h spans decades)."""
    branch_marks = np.atleast_2d(branch_marks)
    leaf_marks = np.atleast_2d(leaf_marks)
    k = leaf_marks.shape[1]
    lw = (k - 1) * math.log(0.5) * np.ones(leaf_marks.shape[0])
    if k > 1:
        lw += np.sum(np.log(basis.h(branch_marks)), axis=1)
    lw -= np.sum(np.log(basis.h(leaf_marks)), axis=1)
    return lw


def weight_delta(marked: MarkedSpine, basis: SpectralBasis) -> float:
    """Delta = (1/2)^{k-1} prod_B h / prod_L h (computed in log-space)."""
    return float(np.exp(log_weight_delta(
        basis, marked.branch_marks[None, :], marked.leaf_marks[None, :]))[0])


# ---------------------------------------------------------------------------
# biased spine measure: Monte Carlo and exact quadrature
# ---------------------------------------------------------------------------

def _phi12(z: np.ndarray):
    """phi1(z) = (e^z-1)/z, phi2(z) = (e^z-1-z)/z^2, stable near 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-6
    zs = np.where(small, 1.0, z)
    p1 = np.where(small, 1.0 + z / 2.0 + z * z / 6.0, np.expm1(zs) / zs)
    p2 = np.where(small, 0.5 + z / 6.0 + z * z / 24.0,
                  (np.expm1(zs) - zs) / (zs * zs))
    return p1, p2


class SpineRecursion:
    """Eigenbasis evaluation of the biased-measure recursion.

    State per level j is the coefficient vector of v1 * l_j in the
    eigenbasis, where l_j(s, x) = L^{j,s}_x(leaf product); the semigroup
    acts diagonally and the quadratic source is collocated on a
    Gauss-Legendre grid.  Second-order exponential-trapezoid time stepping.
    """

    MAX_K = 4

    def __init__(self, basis: SpectralBasis, modes: int = 160,
                 grid: int = 640, n_steps: int = 2048):
        if basis.K_max < modes:
            raise ParamsError(f"basis needs K_max >= {modes}")
        self.basis = basis
        self.modes = modes
        self.n_steps = n_steps
        yy, ww = np.polynomial.legendre.leggauss(grid)
        self.yg = 0.5 * basis.L * (yy + 1.0)
        self.wg = 0.5 * basis.L * ww
        g = basis.gammas[:modes]
        self.delta = 0.5 * (g ** 2 - basis.gamma1 ** 2)
        self.V = np.sin(np.multiply.outer(basis.L - self.yg, g))
        self.Ft = (self.wg[:, None] * self.V) / basis.norms_sq[:modes]  # grid->modes
        self.v1g = self.V[:, 0]
        # h / v1 on the grid (closed form, no division by v1)
        self.h_over_v1 = basis.h_amp * np.exp(-basis.beta * self.yg)

    def _coeff(self, grid_vals: np.ndarray) -> np.ndarray:
        return grid_vals @ self.Ft

    def solve(self, k: int, t: float, f_leaf) -> "SpineRecursionResult":
        """Biased measure of the leaf-product functional prod f_leaf."""
        if not 1 <= k <= self.MAX_K:
            raise ParamsError(f"quadrature recursion supports k <= {self.MAX_K}")
        if t <= 0.0:
            raise ParamsError("t must be positive")
        fg = np.asarray(f_leaf(self.yg), dtype=float)
        # v1 * f/h on the grid: f * e^{beta y} / h_amp
        w1_src = fg * np.exp(self.basis.beta * self.yg) / self.basis.h_amp
        c1 = self._coeff(w1_src)
        n = self.n_steps
        dtau = t / n
        E = np.exp(-self.delta * dtau)
        p1, p2 = _phi12(-self.delta * dtau)
        levels = list(range(2, k + 1))
        coeff = {j: np.zeros(self.modes) for j in levels}
        W = {1: self.V @ (c1 * 1.0)}  # level-1 grid values at s = 0
        for j in levels:
            W[j] = np.zeros(self.yg.shape[0])
        Wnew: dict[int, np.ndarray] = {}
        src_at = {}
        for j in levels:
            src_at[j] = self._source(j, W)
        for m in range(n):
            s_new = (m + 1) * dtau
            Wnew[1] = self.V @ (c1 * np.exp(-self.delta * s_new))
            for j in levels:
                # step with source interpolated linearly on [s, s+dtau]
                cs = src_at[j]
                # provisional new-state needs lower levels at s_new (done in
                # ascending j order, so Wnew[...] for n < j exists)
                cs_new = self._source(j, Wnew, partial_with=W)
                coeff[j] = (E * coeff[j]
                            + dtau * (p1 * cs + p2 * (cs_new - cs)))
                Wnew[j] = self.V @ coeff[j]
                src_at[j] = cs_new
            W, Wnew = Wnew, {}
        return SpineRecursionResult(self, k, t, c1, coeff)

    def _source(self, j: int, Wd: dict[int, np.ndarray],
                partial_with: dict[int, np.ndarray] | None = None):
        """Coefficients of v1 * psi_j, psi_j = 0.5 h sum_n l_n l_{j-n}."""
        fallback = partial_with or {}
        acc = np.zeros(self.yg.shape[0])
        for nsub in range(1, j):
            a = Wd.get(nsub, fallback.get(nsub))
            b = Wd.get(j - nsub, fallback.get(j - nsub))
            acc += a * b
        # v1 * 0.5 h * (W_n/v1)(W_m/v1) summed = 0.5 (h/v1) * sum W_n W_m
        grid_vals = 0.5 * self.h_over_v1 * acc
        return self._coeff(grid_vals)


class SpineRecursionResult:
    """Evaluations of L^{k,t}_x for the solved functional."""

    def __init__(self, rec: SpineRecursion, k: int, t: float,
                 c1: np.ndarray, coeff: dict[int, np.ndarray]):
        self.rec = rec
        self.k = k
        self.t = t
        self._c1 = c1
        self._coeff = coeff

    def _final_coeff(self) -> np.ndarray:
        if self.k == 1:
            return self._c1 * np.exp(-self.rec.delta * self.t)
        return self._coeff[self.k]

    def value_at(self, x: float) -> float:
        b = self.rec.basis
        if not 0.0 <= x < b.L:
            raise DomainError("x must lie in [0, L)")
        vx = np.sin(np.multiply.outer(b.L - np.atleast_1d(float(x)),
                                      b.gammas[:self.rec.modes]))[0]
        return float(vx @ self._final_coeff()
                     / math.sin(b.gamma1 * (b.L - x)))

    def value_at_pi(self) -> float:
        """Rooted at the spine's invariant density (mode-1 projection)."""
        return float(self._final_coeff()[0])


def biased_measure(basis: SpectralBasis, k: int, t: float, x: float | None,
                   f_leaf, mode: str, n_samples: int = 20000,
                   master_seed: int = 0, recursion: SpineRecursion | None = None,
                   n_steps: int = 2048):
    """L^{k,t}_x(prod f_leaf); x = None roots at the invariant density.

    mode 'quadrature' runs the exact recursion (k <= 4); 'mc' averages
    t^{k-1} Delta prod f(leaf marks) over sampled spines and also returns
    a standard error.
    """
    if mode == "quadrature":
        rec = recursion or SpineRecursion(basis, n_steps=n_steps)
        res = rec.solve(k, t, f_leaf)
        return (res.value_at_pi() if x is None else res.value_at(x)), None
    if mode != "mc":
        raise ParamsError(f"unknown mode {mode!r}")
    if x is None:
        raise ParamsError("MC mode needs an explicit root")
    batch = sample_marked_spines(basis, k, t, x, n_samples, master_seed)
    lw = log_weight_delta(basis, batch.branch_marks, batch.leaf_marks)
    vals = np.exp(lw + np.sum(np.log(np.maximum(
        np.asarray(f_leaf(batch.leaf_marks), dtype=float), 1e-300)), axis=1))
    vals *= t ** (k - 1)
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(n_samples))


def pair_merge_density(basis: SpectralBasis, t: float, x: float,
                       modes: int = 160, grid: int = 640,
                       n_steps: int = 2048, f_leaf=None):
    """Pair-merger position density on a grid: rho(y), y-grid, weights.

    rho(y) dy = contribution to L^{2,t}_x from branch points at y,
    i.e. the (unnormalised) distribution of merger positions of pairs.
    """
    rec = SpineRecursion(basis, modes=modes, grid=grid, n_steps=n_steps)
    b = basis
    if f_leaf is None:
        f_leaf = lambda y: np.ones_like(y)
    fg = np.asarray(f_leaf(rec.yg), dtype=float)
    c1 = rec._coeff(fg * np.exp(b.beta * rec.yg) / b.h_amp)
    dtau = t / n_steps
    dec = np.exp(-rec.delta * dtau)
    p1, p2 = _phi12(-rec.delta * dtau)
    J = np.zeros((rec.modes, rec.yg.shape[0]))
    g_prev = None
    for m in range(n_steps + 1):
        s = m * dtau
        W1 = rec.V @ (c1 * np.exp(-rec.delta * s))
        g_cur = 0.5 * rec.h_over_v1 * W1 * W1
        if g_prev is not None:
            J = dec[:, None] * J + dtau * (
                np.multiply.outer(p1, g_prev) + np.multiply.outer(p2, g_cur - g_prev))
        g_prev = g_cur
    vx = np.sin(b.gamma1 * (b.L - x))
    ax = np.sin((b.L - x) * b.gammas[:rec.modes]) / (vx * b.norms_sq[:rec.modes])
    # rho(y) = sum_k a_k(x) v_k(y) J_k(y); the kernel's v1(y) cancelled one
    # power in g = (h/v1) W1^2, leaving h l1^2 as required
    rho = np.einsum("k,jk,kj->j", ax, rec.V, J)
    return rec.yg, np.maximum(rho, 0.0), rec.wg

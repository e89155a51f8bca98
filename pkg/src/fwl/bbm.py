"""Event-driven branching-diffusion simulator with genealogy recording.

The public surface follows the domain contract (population states,
forests, distance matrices); the heavy lifting happens in the compiled
kernels of :mod:`fwl._sim`.  One replica is single-threaded; replica
fan-out uses independent counter-keyed streams, so results do not depend
on the number of threads.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import _sim, rng
from .errors import DomainError, ParamsError, PopulationCapError
from .spectral import SpectralBasis, stable_quantile_table

__all__ = [
    "SimConfig", "PopulationState", "GenealogyForest", "ObservableRun",
    "GenealogyRun", "init_single", "init_stable", "step", "run",
    "run_observables", "run_genealogy", "distance_matrix", "resolve_threads",
]


def resolve_threads(threads: int | None = None) -> int:
    """Worker count: explicit argument, else FWL_THREADS, else all cores."""
    if threads is None:
        env = os.environ.get("FWL_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, threads)


def _set_threads(threads: int | None):
    import numba
    numba.set_num_threads(resolve_threads(threads))


@dataclass(frozen=True)
class SimConfig:
    """Discretisation and memory-guard knobs.

    dt is the maximum diffusion sub-step; halving it must leave the
    t=2 survival estimate within one MC standard error (tested).  The
    population cap bounds recorded births per replica and aborts loudly
    instead of clamping.
    """

    dt: float = 1e-3
    branch_rate: float = 0.5
    max_stack: int = 1 << 22
    population_cap: int = 10_000_000
    table_size: int = 16384

    def __post_init__(self):
        if self.dt <= 0:
            raise ParamsError("dt must be positive")


def _require_drift(basis: SpectralBasis):
    if basis.beta <= 0.0:
        raise ParamsError("the simulator requires drift beta in (0, 1)")


def _init_arrays(basis: SpectralBasis, init, config: SimConfig):
    """(init_mode, x0, m_init, cdf_u, cdf_x) for the kernels."""
    kind = init[0]
    if kind == "single":
        x0 = float(init[1])
        if not 0.0 <= x0 < basis.L:
            raise DomainError(f"start position must lie in [0, L), got {x0}")
        return 0, x0, 1, np.zeros(2), np.zeros(2)
    if kind == "stable":
        m = int(init[1])
        if m < 1:
            raise ParamsError("stable init needs M >= 1")
        u, x = stable_quantile_table(basis.params, config.table_size)
        return 1, 0.0, m, u, x
    raise ParamsError(f"unknown init spec {init!r}")


# ---------------------------------------------------------------------------
# population states (contract-level, used by the single-step operator)
# ---------------------------------------------------------------------------

@dataclass
class PopulationState:
    """Positions plus branch clocks at a fixed time.

    Z is the number of live particles and Y the additive-martingale value
    sum_v h(X_v), recomputable from the positions.
    """

    time: float
    positions: np.ndarray
    next_branch: np.ndarray
    Y: float

    @property
    def Z(self) -> int:
        return int(self.positions.shape[0])

    def recompute_y(self, basis: SpectralBasis) -> float:
        return float(np.sum(basis.h(self.positions))) if self.Z else 0.0


def init_single(basis: SpectralBasis, x: float,
                rng_: np.random.Generator) -> PopulationState:
    """One particle at x in [0, L)."""
    _require_drift(basis)
    if not 0.0 <= x < basis.L:
        raise DomainError(f"start position must lie in [0, L), got {x}")
    pos = np.array([float(x)])
    clocks = rng_.exponential(scale=2.0, size=1)
    return PopulationState(0.0, pos, clocks, float(basis.h(pos)[0]))


def init_stable(basis: SpectralBasis, M: int, rng_: np.random.Generator,
                table_size: int = 16384) -> PopulationState:
    """M i.i.d. draws from the stable configuration (inverse-CDF)."""
    _require_drift(basis)
    if M < 1:
        raise ParamsError("stable init needs M >= 1")
    u, x = stable_quantile_table(basis.params, table_size)
    pos = np.interp(rng_.random(M), u, x)
    clocks = rng_.exponential(scale=2.0, size=M)
    return PopulationState(0.0, pos, clocks,
                           float(np.sum(basis.h(pos))))


def step(basis: SpectralBasis, state: PopulationState, dt: float,
         rng_: np.random.Generator, dt_max: float = 1e-2) -> PopulationState:
    """Advance the whole population by dt (branching interleaved exactly).

    Reference implementation of the update rule; replica-scale runs go
    through :func:`run_observables` instead.
    """
    _require_drift(basis)
    if dt > dt_max:
        raise ParamsError(f"dt={dt} exceeds dt_max={dt_max}")
    beta, L = basis.beta, basis.L
    t_end = state.time + dt
    pos = list(state.positions)
    clk = list(state.next_branch)
    tim = [state.time] * len(pos)
    out_pos = []
    while pos:
        x, tb, t = pos.pop(), clk.pop(), tim.pop()
        while True:
            tnext = min(tb, t_end)
            tau = tnext - t
            if tau > 0.0:
                xp = x + beta * tau + math.sqrt(tau) * rng_.normal()
                if xp < 0.0:
                    xp = -xp
                if xp >= L:
                    x = None
                    break
                d = (L - x) * (L - xp)
                if rng_.random() < math.exp(-2.0 * d / tau):
                    x = None
                    break
                x = xp
            t = tnext
            if tb < t_end:
                # branch: push one child, continue as the other
                pos.append(x)
                clk.append(t + rng_.exponential(scale=2.0))
                tim.append(t)
                tb = t + rng_.exponential(scale=2.0)
            else:
                break
        if x is not None:
            out_pos.append((x, tb))
    if out_pos:
        new_pos = np.array([p for p, _ in out_pos])
        new_clk = np.array([c for _, c in out_pos])
    else:
        new_pos = np.empty(0)
        new_clk = np.empty(0)
    st = PopulationState(t_end, new_pos, new_clk, 0.0)
    st.Y = st.recompute_y(basis)
    return st


# ---------------------------------------------------------------------------
# forests
# ---------------------------------------------------------------------------

@dataclass
class GenealogyForest:
    """Birth/split records of every particle of one replica.

    parent is -1 for roots; death_time is NaN for particles alive at the
    horizon.  Split times strictly increase along any lineage.
    """

    parent: np.ndarray
    birth_time: np.ndarray
    birth_pos: np.ndarray
    death_time: np.ndarray
    uh_bit: np.ndarray
    leaf_ids: np.ndarray

    @property
    def size(self) -> int:
        return int(self.parent.shape[0])

    def ulam_harris(self, i: int) -> str:
        """Planar label: bit-string from root to the particle."""
        bits = []
        while i >= 0 and self.uh_bit[i] >= 0:
            bits.append(str(int(self.uh_bit[i])))
            i = int(self.parent[i])
        return "".join(reversed(bits))

    def alive_at(self, i: int, t: float) -> bool:
        d = self.death_time[i]
        return self.birth_time[i] <= t and (math.isnan(d) or d > t)

    def split_time(self, i: int, j: int) -> float:
        """Birth epoch of the last common ancestor branch of i and j."""
        n = self.size
        if not (0 <= i < n and 0 <= j < n):
            raise KeyError(f"unknown particle id: {i if not 0 <= i < n else j}")
        if i == j:
            return float(self.birth_time[i])
        ca, cb = i, j
        while i != j:
            if i > j:
                ca, i = i, int(self.parent[i])
            else:
                cb, j = j, int(self.parent[j])
            if i < 0 or j < 0:
                raise ValueError("particles belong to disjoint trees")
        return float(self.birth_time[ca])


def distance_matrix(forest: GenealogyForest, ids, t: float) -> np.ndarray:
    """Pairwise genealogical distances t - (last common split time).

    All particles must be alive at t; the result is symmetric, zero on
    the diagonal and ultrametric.
    """
    ids = np.asarray(ids, dtype=np.int64)
    for i in ids:
        if not (0 <= i < forest.size):
            raise KeyError(f"unknown particle id: {int(i)}")
        if not forest.alive_at(int(i), t):
            raise ValueError(f"particle {int(i)} not alive at t={t}")
    k = ids.shape[0]
    d = np.zeros((k, k))
    for a in range(k):
        for b in range(a + 1, k):
            if ids[a] == ids[b]:
                continue
            d[a, b] = d[b, a] = t - forest.split_time(int(ids[a]), int(ids[b]))
    return d


# ---------------------------------------------------------------------------
# replica-scale runs
# ---------------------------------------------------------------------------

@dataclass
class ObservableRun:
    """Per-replica snapshots: Z, Y = sum h, Q2/Q3 = sums of h^2/h^3,
    Z_ind = count at or below the indicator threshold."""

    rec_times: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    Q2: np.ndarray
    Q3: np.ndarray
    Z_ind: np.ndarray
    births: np.ndarray
    status: np.ndarray
    ind_hi: float

    @property
    def replicas(self) -> int:
        return int(self.Z.shape[0])


@dataclass
class GenealogyRun:
    """Per-replica sampled-pair genealogy data at one horizon."""

    horizon: float
    k: int
    Z: np.ndarray
    depth: np.ndarray   # (replicas, k(k-1)/2); NaN when Z < k
    merge_pos: np.ndarray
    merge_id: np.ndarray
    status: np.ndarray


def _check_status(status: np.ndarray):
    bad = np.nonzero(status != _sim.STATUS_OK)[0]
    if bad.size:
        raise PopulationCapError(
            f"{bad.size} replica(s) exceeded the memory guard "
            f"(first: replica {int(bad[0])}, status {int(status[bad[0]])}); "
            f"raise population_cap/max_stack or lower the horizon")


def run_observables(basis: SpectralBasis, init, rec_times, replicas: int,
                    master_seed: int, config: SimConfig = SimConfig(),
                    ind_hi: float | None = None,
                    threads: int | None = None,
                    replica_offset: int = 0) -> ObservableRun:
    """Simulate replicas and collect snapshot observables at rec_times."""
    _require_drift(basis)
    rec = np.asarray(sorted(rec_times), dtype=float)
    if rec.size == 0 or rec[0] < 0.0 or rec[-1] <= 0.0:
        raise ParamsError("record times must be nonnegative with a positive horizon")
    init_mode, x0, m_init, cdf_u, cdf_x = _init_arrays(basis, init, config)
    nrec = rec.size
    R = int(replicas)
    Z = np.zeros((R, nrec), dtype=np.int64)
    Y = np.zeros((R, nrec))
    Q2 = np.zeros((R, nrec))
    Q3 = np.zeros((R, nrec))
    Zi = np.zeros((R, nrec), dtype=np.int64)
    births = np.zeros(R, dtype=np.int64)
    status = np.zeros(R, dtype=np.int64)
    key0, key1 = rng.kernel_key(master_seed, rng.TAG_BBM)
    hi = basis.L / 2.0 if ind_hi is None else float(ind_hi)
    _set_threads(threads)
    _sim.sim_observables(key0, key1, replica_offset, replica_offset + R,
                         init_mode, x0, m_init, cdf_u, cdf_x,
                         basis.beta, basis.L, basis.gamma1, basis.h_amp,
                         config.dt, config.branch_rate, rec, hi,
                         config.max_stack, config.population_cap,
                         Z, Y, Q2, Q3, Zi, births, status)
    _check_status(status)
    return ObservableRun(rec, Z, Y, Q2, Q3, Zi, births, status, hi)


def run_genealogy(basis: SpectralBasis, init, horizon: float, k: int,
                  replicas: int, master_seed: int,
                  config: SimConfig = SimConfig(),
                  threads: int | None = None,
                  replica_offset: int = 0) -> GenealogyRun:
    """Simulate replicas to one horizon, sampling k leaves per survivor."""
    _require_drift(basis)
    if not 2 <= k <= 8:
        raise ParamsError("k must be in [2, 8]")
    init_mode, x0, m_init, cdf_u, cdf_x = _init_arrays(basis, init, config)
    R = int(replicas)
    npairs = (k * (k - 1)) // 2
    Z = np.zeros(R, dtype=np.int64)
    depth = np.full((R, npairs), np.nan)
    mpos = np.full((R, npairs), np.nan)
    mid = np.full((R, npairs), -1, dtype=np.int64)
    status = np.zeros(R, dtype=np.int64)
    key0, key1 = rng.kernel_key(master_seed, rng.TAG_GENEALOGY)
    _set_threads(threads)
    _sim.sim_genealogy(key0, key1, replica_offset, replica_offset + R,
                       init_mode, x0, m_init, cdf_u, cdf_x,
                       basis.beta, basis.L, basis.gamma1, basis.h_amp,
                       config.dt, config.branch_rate, float(horizon), k,
                       config.max_stack, config.population_cap,
                       Z, depth, mpos, mid, status)
    _check_status(status)
    return GenealogyRun(float(horizon), k, Z, depth, mpos, mid, status)


def run(basis: SpectralBasis, init, horizon: float, record_at,
        master_seed: int, config: SimConfig = SimConfig(),
        replica: int = 0):
    """One replica with full genealogy: returns (snapshots, forest).

    snapshots is a list of (time, Z, Y); deterministic given
    (params, init, seed, replica index).
    """
    _require_drift(basis)
    rec = sorted(set(float(t) for t in record_at) | {float(horizon)})
    if any(t < 0.0 or t > horizon for t in rec) or horizon <= 0.0:
        raise ParamsError("record times must lie in [0, horizon], horizon > 0")
    rec = np.asarray(rec, dtype=float)
    init_mode, x0, m_init, cdf_u, cdf_x = _init_arrays(basis, init, config)
    key0, key1 = rng.kernel_key(master_seed, rng.TAG_BBM)
    (par, bt, bx, dth, uh, n, Z_rec, Y_rec, leaf_ids, status) = _sim.sim_forest(
        key0, key1, replica, init_mode, x0, m_init, cdf_u, cdf_x,
        basis.beta, basis.L, basis.gamma1, basis.h_amp,
        config.dt, config.branch_rate, rec,
        config.max_stack, config.population_cap)
    _check_status(np.array([status]))
    forest = GenealogyForest(par.copy(), bt.copy(), bx.copy(), dth.copy(),
                             uh.copy(), leaf_ids.copy())
    snapshots = [(float(t), int(z), float(y))
                 for t, z, y in zip(rec, Z_rec, Y_rec)]
    return snapshots, forest

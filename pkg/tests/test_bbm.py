import math

import numpy as np
import pytest

from fwl import bbm, rng as rngmod
from fwl import spectral as sp
from fwl.errors import DomainError, ParamsError, PopulationCapError
from fwl.params import params_for_drift

CFG = bbm.SimConfig(dt=1e-3)


def test_init_single(basis_half):
    g = rngmod.stream(1, 0)
    st = bbm.init_single(basis_half, 0.0, g)
    assert st.Z == 1 and st.Y == pytest.approx(float(basis_half.h(0.0)))
    st = bbm.init_single(basis_half, 1.0, g)
    assert st.Y == pytest.approx(float(basis_half.h(1.0)), abs=1e-12)
    with pytest.raises(DomainError):
        bbm.init_single(basis_half, basis_half.L, g)


def test_init_stable_law(basis_half, pars_half):
    g = rngmod.stream(2, 0)
    st = bbm.init_stable(basis_half, 1, g)
    assert st.Z == 1 and 0.0 <= st.positions[0] < pars_half.L
    # empirical CDF of many draws vs the closed-form J_z
    big = bbm.init_stable(basis_half, 1_000_000, rngmod.stream(3, 0))
    xs = np.sort(big.positions)
    grid = np.linspace(0.0, pars_half.L, 512)
    emp = np.searchsorted(xs, grid) / xs.shape[0]
    exact = np.asarray(sp.stable_cdf(pars_half, grid))
    assert np.max(np.abs(emp - exact)) < 0.002
    # E[Y/M] = 1 within 3 standard errors
    m = 10_000
    ys = bbm.init_stable(basis_half, m, rngmod.stream(4, 0))
    hvals = basis_half.h(ys.positions)
    se = np.std(hvals, ddof=1) / math.sqrt(m)
    assert abs(ys.Y / m - 1.0) < 3 * se


def test_step_drift_mean(basis_half, pars_half):
    # interior start, short dt: displacement mean beta*dt before boundaries
    g = rngmod.stream(5, 0)
    n = 100_000
    dt = 5e-3
    x0 = 1.2
    st = bbm.PopulationState(0.0, np.full(n, x0), np.full(n, 1e9), 0.0)
    out = bbm.step(basis_half, st, dt, g)
    disp = out.positions - x0
    se = np.std(disp, ddof=1) / math.sqrt(out.Z)
    assert abs(np.mean(disp) - pars_half.beta * dt) < 3 * se
    assert out.time == pytest.approx(dt)


def test_step_branches_and_kills(basis_half):
    g = rngmod.stream(6, 0)
    st = bbm.init_stable(basis_half, 2000, g)
    out = st
    for _ in range(10):
        out = bbm.step(basis_half, out, 1e-2, g)
    assert out.time == pytest.approx(0.1)
    assert out.Z != 2000  # some births/deaths happened
    assert out.Y == pytest.approx(out.recompute_y(basis_half), abs=1e-9)


def test_run_determinism(basis_half):
    a = bbm.run_observables(basis_half, ("single", 1.0), [1.0, 2.0], 500, 42, CFG)
    b = bbm.run_observables(basis_half, ("single", 1.0), [1.0, 2.0], 500, 42, CFG)
    assert np.array_equal(a.Z, b.Z)
    assert np.array_equal(a.Y, b.Y)
    # thread-count invariance
    c = bbm.run_observables(basis_half, ("single", 1.0), [1.0, 2.0], 500, 42,
                            CFG, threads=1)
    assert np.array_equal(a.Z, c.Z) and np.array_equal(a.Y, c.Y)
    # different seed differs
    d = bbm.run_observables(basis_half, ("single", 1.0), [1.0, 2.0], 500, 43, CFG)
    assert not np.array_equal(a.Y, d.Y)


def test_replica_offset_extends_streams(basis_half):
    whole = bbm.run_observables(basis_half, ("single", 1.0), [1.0], 100, 7, CFG)
    tail = bbm.run_observables(basis_half, ("single", 1.0), [1.0], 40, 7, CFG,
                               replica_offset=60)
    assert np.array_equal(whole.Y[60:], tail.Y)


def test_martingale_and_criticality(basis_half):
    run = bbm.run_observables(basis_half, ("single", 1.0), [2.0], 40_000, 9, CFG)
    y = run.Y[:, 0]
    h1 = float(basis_half.h(1.0))
    se = np.std(y, ddof=1) / math.sqrt(run.replicas)
    assert abs(np.mean(y) - h1) < 3 * se
    # critical population: E[Z(t)] stays within 10% of M for stable init
    run2 = bbm.run_observables(basis_half, ("stable", 50), [5.0, 10.0], 1000,
                               10, CFG)
    for j in range(2):
        assert abs(np.mean(run2.Z[:, j]) / 50.0 - 1.0) < 0.10


def test_survival_matches_nonbranching_kernel(basis_half, pars_half, gl_grid):
    # single-particle (no branching) survival = e^{-t/2} int p_t(x, y) dy
    yg, wg = gl_grid
    t = 2.0
    P, _ = sp.heat_kernel(basis_half, t, np.array([1.0]), yg, rel_tol=1e-12)
    target = math.exp(-t / 2.0) * float(P[0] @ wg)
    g = rngmod.stream(11, 0)
    n = 200_000
    pos = np.full(n, 1.0)
    alive = np.ones(n, dtype=bool)
    dt, L, beta = 2e-3, pars_half.L, pars_half.beta
    for _ in range(int(t / dt)):
        step = beta * dt + math.sqrt(dt) * g.standard_normal(n)
        nxt = np.abs(pos + np.where(alive, step, 0.0))
        crossed = nxt >= L
        dpr = (L - pos) * (L - nxt)
        bridge = g.random(n) < np.exp(-2.0 * np.clip(dpr, 0, None) / dt)
        alive &= ~(crossed | bridge)
        pos = np.where(alive, nxt, pos)
    est = np.mean(alive)
    se = math.sqrt(est * (1 - est) / n)
    assert abs(est - target) < 3 * se


def test_dt_halving_survival(basis_half):
    # halving dt moves the t=2 survival estimate by less than one MC se
    t = 2.0
    runs = {}
    for dt in (1e-3, 5e-4):
        run = bbm.run_observables(basis_half, ("single", 1.0), [t], 100_000,
                                  123, bbm.SimConfig(dt=dt))
        p = np.mean(run.Z[:, 0] > 0)
        runs[dt] = (p, math.sqrt(p * (1 - p) / run.replicas))
    p1, se1 = runs[1e-3]
    p2, se2 = runs[5e-4]
    assert abs(p1 - p2) < math.hypot(se1, se2)


def test_forest_structure(basis_half):
    snaps, forest = bbm.run(basis_half, ("single", 1.0), 3.0, [0.0, 1.5, 3.0],
                            77, CFG, replica=5)
    assert snaps[0][1] == 1  # Z(0) = 1
    n = forest.size
    assert forest.parent[0] == -1
    for i in range(1, n):
        p = forest.parent[i]
        assert 0 <= p < i  # acyclic, parents precede children
        assert forest.birth_time[i] > forest.birth_time[p]  # strict increase
        # parent's death is the split epoch
        assert forest.death_time[p] == pytest.approx(forest.birth_time[i])
    # Ulam-Harris labels: siblings get complementary suffixes
    kids = {}
    for i in range(1, n):
        kids.setdefault(int(forest.parent[i]), []).append(i)
    for p, ch in kids.items():
        assert len(ch) == 2
        assert {int(forest.uh_bit[ch[0]]), int(forest.uh_bit[ch[1]])} == {0, 1}
        lab = forest.ulam_harris(ch[0])
        assert lab[:-1] == forest.ulam_harris(p)


def test_distance_matrix_properties(basis_half):
    # find a replica with at least 3 leaves
    for r in range(200):
        _, forest = bbm.run(basis_half, ("single", 1.0), 2.5, [2.5], 31, CFG,
                            replica=r)
        if forest.leaf_ids.shape[0] >= 3:
            break
    ids = forest.leaf_ids[:3]
    d = bbm.distance_matrix(forest, ids, 2.5)
    assert np.allclose(d, d.T)
    assert np.all(np.diag(d) == 0)
    assert np.all(d[~np.eye(3, dtype=bool)] > 0)
    assert np.all(d <= 2.5 + 1e-12)
    for i in range(3):
        for j in range(3):
            for l in range(3):
                assert d[i, l] <= max(d[i, j], d[j, l]) + 1e-12
    # siblings split at s have distance t - s
    i, j = int(ids[0]), int(ids[1])
    s = forest.split_time(i, j)
    assert d[0, 1] == pytest.approx(2.5 - s)
    # single particle: 1x1 zero matrix
    d1 = bbm.distance_matrix(forest, ids[:1], 2.5)
    assert d1.shape == (1, 1) and d1[0, 0] == 0.0
    with pytest.raises(KeyError):
        bbm.distance_matrix(forest, [forest.size + 5], 2.5)


def test_distance_matrix_disjoint_trees(basis_half):
    def root_of(forest, i):
        while forest.parent[i] >= 0:
            i = int(forest.parent[i])
        return i

    for r in range(100):
        _, forest = bbm.run(basis_half, ("stable", 2), 0.5, [0.5], 15, CFG,
                            replica=r)
        leaves = forest.leaf_ids
        roots = [root_of(forest, int(i)) for i in leaves]
        pair = [(a, b) for ia, a in enumerate(leaves)
                for b in leaves[ia + 1:] if root_of(forest, int(a))
                != root_of(forest, int(b))]
        if pair:
            with pytest.raises(ValueError, match="disjoint"):
                bbm.distance_matrix(forest, list(pair[0]), 0.5)
            return
    pytest.skip("no replica produced two surviving roots")


def test_population_cap_aborts(basis_half):
    with pytest.raises(PopulationCapError):
        bbm.run_observables(basis_half, ("stable", 200), [50.0], 5, 3,
                            bbm.SimConfig(dt=1e-2, population_cap=100))


def test_simulator_rejects_degenerate_drift():
    basis0 = sp.build_basis(params_for_drift(0.0))
    with pytest.raises(ParamsError):
        bbm.run_observables(basis0, ("single", 0.5), [1.0], 10, 1, CFG)


def test_genealogy_run_basics(basis_half):
    run = bbm.run_genealogy(basis_half, ("single", 1.0), 5.0, 2, 3000, 99,
                            bbm.SimConfig(dt=2e-3))
    sampled = run.Z >= 2
    assert np.sum(sampled) > 10
    d = run.depth[sampled, 0]
    assert np.all(d > 0) and np.all(d <= 5.0 + 1e-9)
    m = run.merge_pos[sampled, 0]
    assert np.all(m >= 0) and np.all(m < basis_half.L)
    # depths are NaN when fewer than k leaves survive
    few = run.Z < 2
    if np.any(few):
        assert np.all(np.isnan(run.depth[few, 0]))

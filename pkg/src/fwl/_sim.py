"""Compiled replica kernels for the branching diffusion.

Update rule per particle (drift beta, reflection at 0, killing at L,
dyadic branching at rate 1/2):

  * diffusion sub-steps are exact drifted-Gaussian increments truncated
    at branch epochs, record times and the horizon;
  * reflection folds x' <- |x'| (exact for driftless increments, O(beta dt)
    biased near 0 where the drift points away from the boundary);
  * killing combines the endpoint test x' >= L with the Brownian-bridge
    crossing probability exp(-2 (L-x)(L-x') / dt); the bridge draw is
    skipped when the exponent exceeds 40 (miss probability < 5e-18);
  * each branch replaces the parent by two children at the same position
    with fresh exponential clocks and randomly ordered planar labels.

Replica r of a run keyed by (key0, key1) draws from its own xoshiro
stream, so results are bit-identical for any thread count.
"""

import math

import numpy as np
from numba import njit, prange

from ._rngcore import exponential, normal, state_for, u01

STATUS_OK = 0
STATUS_STACK_CAP = 1
STATUS_BIRTH_CAP = 2


@njit(cache=True, inline="always")
def _h_val(x, beta, L, gamma1, h_amp):
    return h_amp * math.exp(-beta * x) * math.sin(gamma1 * (L - x))


@njit(cache=True, inline="always")
def _table_draw(s, cdf_u, cdf_x):
    u = u01(s)
    lo = 0
    hi = cdf_u.shape[0] - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if cdf_u[mid] <= u:
            lo = mid
        else:
            hi = mid
    du = cdf_u[hi] - cdf_u[lo]
    if du <= 0.0:
        return cdf_x[lo]
    return cdf_x[lo] + (cdf_x[hi] - cdf_x[lo]) * (u - cdf_u[lo]) / du


@njit(cache=True, inline="always")
def _diffuse_to(s, spare, x, tcur, tnext, beta, L, dt, sqdt):
    """Advance one particle to tnext; returns (x, t_reached, alive)."""
    while tcur < tnext:
        rem = tnext - tcur
        if rem > dt:
            tau = dt
            sq = sqdt
            tcur = tcur + dt
        else:
            tau = rem
            sq = math.sqrt(rem)
            tcur = tnext
        xp = x + beta * tau + sq * normal(s, spare)
        if xp < 0.0:
            xp = -xp
        if xp >= L:
            return xp, tcur, False
        d = (L - x) * (L - xp)
        if d < 20.0 * tau:
            if -math.log(u01(s)) > 2.0 * d / tau:
                return xp, tcur, False
        x = xp
    return x, tcur, True


@njit(cache=True)
def _grow_f8(a):
    b = np.empty(2 * a.shape[0], dtype=np.float64)
    b[: a.shape[0]] = a
    return b


@njit(cache=True)
def _grow_i8(a):
    b = np.empty(2 * a.shape[0], dtype=np.int64)
    b[: a.shape[0]] = a
    return b


@njit(cache=True, parallel=True)
def sim_observables(key0, key1, r_lo, r_hi,
                    init_mode, x0, m_init, cdf_u, cdf_x,
                    beta, L, gamma1, h_amp,
                    dt, rate, rec_times, ind_hi,
                    max_stack, max_births,
                    out_Z, out_Y, out_Q2, out_Q3, out_Zind,
                    out_births, out_status):
    """Population observables at record times, one row per replica.

    Record-time snapshots accumulate Z (count), Y (sum of h), Q2/Q3
    (sums of h^2, h^3) and the count at or below ind_hi.
    """
    nrec = rec_times.shape[0]
    sqdt = math.sqrt(dt)
    for ridx in prange(r_hi - r_lo):
        s = state_for(key0, key1, r_lo + ridx)
        spare = np.zeros(2)
        cap = m_init + 4096
        st_x = np.empty(cap)
        st_t = np.empty(cap)
        st_tb = np.empty(cap)
        top = 0
        status = STATUS_OK
        births = 0
        for _ in range(m_init):
            if init_mode == 0:
                xi = x0
            else:
                xi = _table_draw(s, cdf_u, cdf_x)
            st_x[top] = xi
            st_t[top] = 0.0
            st_tb[top] = exponential(s, rate)
            top += 1
        while top > 0 and status == STATUS_OK:
            top -= 1
            x = st_x[top]
            tcur = st_t[top]
            tb = st_tb[top]
            ri = 0
            while ri < nrec and rec_times[ri] < tcur:
                ri += 1
            while ri < nrec:
                if tb < rec_times[ri]:
                    tnext = tb
                    is_branch = True
                else:
                    tnext = rec_times[ri]
                    is_branch = False
                x, tcur, alive = _diffuse_to(s, spare, x, tcur, tnext, beta,
                                             L, dt, sqdt)
                if not alive:
                    break
                if is_branch:
                    births += 1
                    if births > max_births:
                        status = STATUS_BIRTH_CAP
                        break
                    if top >= st_x.shape[0]:
                        if 2 * st_x.shape[0] > max_stack:
                            status = STATUS_STACK_CAP
                            break
                        st_x = _grow_f8(st_x)
                        st_t = _grow_f8(st_t)
                        st_tb = _grow_f8(st_tb)
                    st_x[top] = x
                    st_t[top] = tcur
                    st_tb[top] = tcur + exponential(s, rate)
                    top += 1
                    tb = tcur + exponential(s, rate)
                else:
                    hv = _h_val(x, beta, L, gamma1, h_amp)
                    out_Z[ridx, ri] += 1
                    out_Y[ridx, ri] += hv
                    out_Q2[ridx, ri] += hv * hv
                    out_Q3[ridx, ri] += hv * hv * hv
                    if x <= ind_hi:
                        out_Zind[ridx, ri] += 1
                    ri += 1
        out_births[ridx] = births
        out_status[ridx] = status


@njit(cache=True, parallel=True)
def sim_genealogy(key0, key1, r_lo, r_hi,
                  init_mode, x0, m_init, cdf_u, cdf_x,
                  beta, L, gamma1, h_amp,
                  dt, rate, horizon, k_sample,
                  max_stack, max_births,
                  out_Z, out_depth, out_mpos, out_mid, out_status):
    """Genealogy run to a single horizon with in-kernel pair sampling.

    For replicas with Z >= k_sample, k leaves are drawn uniformly without
    replacement; for every leaf pair (i < j) the outputs hold the MRCA
    depth (horizon minus split time), the split position, and the split
    node id (for deduplicating merge events).  Replicas with Z < k_sample
    get NaN depths.
    """
    npairs = (k_sample * (k_sample - 1)) // 2
    sqdt = math.sqrt(dt)
    for ridx in prange(r_hi - r_lo):
        s = state_for(key0, key1, r_lo + ridx)
        spare = np.zeros(2)
        cap = m_init + 4096
        st_x = np.empty(cap)
        st_t = np.empty(cap)
        st_tb = np.empty(cap)
        st_id = np.empty(cap, dtype=np.int64)
        pcap = 4096
        par = np.empty(pcap, dtype=np.int64)
        bt = np.empty(pcap)
        bx = np.empty(pcap)
        lcap = 1024
        leaf_id = np.empty(lcap, dtype=np.int64)
        nleaf = 0
        top = 0
        nid = 0
        status = STATUS_OK
        births = 0
        for _ in range(m_init):
            if init_mode == 0:
                xi = x0
            else:
                xi = _table_draw(s, cdf_u, cdf_x)
            st_x[top] = xi
            st_t[top] = 0.0
            st_tb[top] = exponential(s, rate)
            st_id[top] = nid
            par[nid] = -1
            bt[nid] = 0.0
            bx[nid] = xi
            nid += 1
            top += 1
        while top > 0 and status == STATUS_OK:
            top -= 1
            x = st_x[top]
            tcur = st_t[top]
            tb = st_tb[top]
            pid = st_id[top]
            while True:
                alive = True
                if tb < horizon:
                    x, tcur, alive = _diffuse_to(s, spare, x, tcur, tb, beta,
                                                 L, dt, sqdt)
                else:
                    x, tcur, alive = _diffuse_to(s, spare, x, tcur, horizon,
                                                 beta, L, dt, sqdt)
                    if alive:
                        if nleaf >= leaf_id.shape[0]:
                            leaf_id = _grow_i8(leaf_id)
                        leaf_id[nleaf] = pid
                        nleaf += 1
                    break
                if not alive:
                    break
                # branch: two fresh particles at (x, tcur)
                births += 1
                if births > max_births:
                    status = STATUS_BIRTH_CAP
                    break
                if nid + 2 > par.shape[0]:
                    par = _grow_i8(par)
                    bt = _grow_f8(bt)
                    bx = _grow_f8(bx)
                ida = nid
                idb = nid + 1
                par[ida] = pid
                par[idb] = pid
                bt[ida] = tcur
                bt[idb] = tcur
                bx[ida] = x
                bx[idb] = x
                nid += 2
                u01(s)  # planar label coin (order immaterial here)
                if top >= st_x.shape[0]:
                    if 2 * st_x.shape[0] > max_stack:
                        status = STATUS_STACK_CAP
                        break
                    st_x = _grow_f8(st_x)
                    st_t = _grow_f8(st_t)
                    st_tb = _grow_f8(st_tb)
                    st_id = _grow_i8(st_id)
                st_x[top] = x
                st_t[top] = tcur
                st_tb[top] = tcur + exponential(s, rate)
                st_id[top] = idb
                top += 1
                pid = ida
                tb = tcur + exponential(s, rate)
        out_Z[ridx] = nleaf
        out_status[ridx] = status
        for p in range(npairs):
            out_depth[ridx, p] = np.nan
            out_mpos[ridx, p] = np.nan
            out_mid[ridx, p] = -1
        if status == STATUS_OK and nleaf >= k_sample:
            # partial Fisher-Yates for k distinct leaves
            for i in range(k_sample):
                j = i + int(u01(s) * (nleaf - i))
                tmp = leaf_id[i]
                leaf_id[i] = leaf_id[j]
                leaf_id[j] = tmp
            p = 0
            for i in range(k_sample):
                for j in range(i + 1, k_sample):
                    ia = leaf_id[i]
                    ib = leaf_id[j]
                    ca = ia
                    cb = ib
                    while ia != ib:
                        if ia > ib:
                            ca = ia
                            ia = par[ia]
                        else:
                            cb = ib
                            ib = par[ib]
                    if ia < 0:
                        # disjoint trees (multi-root init); no MRCA
                        out_depth[ridx, p] = np.nan
                        out_mpos[ridx, p] = np.nan
                        out_mid[ridx, p] = -1
                    else:
                        out_depth[ridx, p] = horizon - bt[ca]
                        out_mpos[ridx, p] = bx[ca]
                        out_mid[ridx, p] = ia
                    p += 1


@njit(cache=True)
def sim_forest(key0, key1, replica,
               init_mode, x0, m_init, cdf_u, cdf_x,
               beta, L, gamma1, h_amp,
               dt, rate, rec_times,
               max_stack, max_births):
    """Single replica with full forest recording and snapshots.

    Returns (parent, birth_time, birth_pos, death_time, uh_bit, n_particles,
    Z_rec, Y_rec, leaf_ids, status).  death_time is NaN for particles still
    alive at the horizon (the returned leaves).
    """
    nrec = rec_times.shape[0]
    horizon = rec_times[nrec - 1]
    sqdt = math.sqrt(dt)
    s = state_for(key0, key1, replica)
    spare = np.zeros(2)
    cap = m_init + 4096
    st_x = np.empty(cap)
    st_t = np.empty(cap)
    st_tb = np.empty(cap)
    st_id = np.empty(cap, dtype=np.int64)
    pcap = 4096
    par = np.empty(pcap, dtype=np.int64)
    bt = np.empty(pcap)
    bx = np.empty(pcap)
    dth = np.empty(pcap)
    uh = np.empty(pcap, dtype=np.int8)
    lcap = 1024
    leaf_id = np.empty(lcap, dtype=np.int64)
    nleaf = 0
    Z_rec = np.zeros(nrec, dtype=np.int64)
    Y_rec = np.zeros(nrec)
    top = 0
    nid = 0
    status = STATUS_OK
    births = 0
    for _ in range(m_init):
        if init_mode == 0:
            xi = x0
        else:
            xi = _table_draw(s, cdf_u, cdf_x)
        st_x[top] = xi
        st_t[top] = 0.0
        st_tb[top] = exponential(s, rate)
        st_id[top] = nid
        par[nid] = -1
        bt[nid] = 0.0
        bx[nid] = xi
        dth[nid] = np.nan
        uh[nid] = -1
        nid += 1
        top += 1
    while top > 0 and status == STATUS_OK:
        top -= 1
        x = st_x[top]
        tcur = st_t[top]
        tb = st_tb[top]
        pid = st_id[top]
        ri = 0
        while ri < nrec and rec_times[ri] < tcur:
            ri += 1
        while True:
            if ri >= nrec:
                if nleaf >= leaf_id.shape[0]:
                    leaf_id = _grow_i8(leaf_id)
                leaf_id[nleaf] = pid
                nleaf += 1
                break
            if tb < rec_times[ri]:
                tnext = tb
                is_branch = True
            else:
                tnext = rec_times[ri]
                is_branch = False
            x, tcur, alive = _diffuse_to(s, spare, x, tcur, tnext, beta, L,
                                         dt, sqdt)
            if not alive:
                dth[pid] = tcur
                break
            if is_branch:
                births += 1
                if births > max_births:
                    status = STATUS_BIRTH_CAP
                    break
                if nid + 2 > par.shape[0]:
                    par = _grow_i8(par)
                    bt = _grow_f8(bt)
                    bx = _grow_f8(bx)
                    dth = _grow_f8(dth)
                    uh2 = np.empty(2 * uh.shape[0], dtype=np.int8)
                    uh2[: uh.shape[0]] = uh
                    uh = uh2
                dth[pid] = tcur
                ida = nid
                idb = nid + 1
                par[ida] = pid
                par[idb] = pid
                bt[ida] = tcur
                bt[idb] = tcur
                bx[ida] = x
                bx[idb] = x
                dth[ida] = np.nan
                dth[idb] = np.nan
                if u01(s) < 0.5:
                    uh[ida] = 0
                    uh[idb] = 1
                else:
                    uh[ida] = 1
                    uh[idb] = 0
                nid += 2
                if top >= st_x.shape[0]:
                    if 2 * st_x.shape[0] > max_stack:
                        status = STATUS_STACK_CAP
                        break
                    st_x = _grow_f8(st_x)
                    st_t = _grow_f8(st_t)
                    st_tb = _grow_f8(st_tb)
                    st_id = _grow_i8(st_id)
                st_x[top] = x
                st_t[top] = tcur
                st_tb[top] = tcur + exponential(s, rate)
                st_id[top] = idb
                top += 1
                pid = ida
                tb = tcur + exponential(s, rate)
            else:
                hv = _h_val(x, beta, L, gamma1, h_amp)
                Z_rec[ri] += 1
                Y_rec[ri] += hv
                ri += 1
    return (par[:nid], bt[:nid], bx[:nid], dth[:nid], uh[:nid], nid,
            Z_rec, Y_rec, leaf_id[:nleaf], status)

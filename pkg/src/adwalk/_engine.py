"""Compiled simulation kernels.

One world = ``d`` users, ``m`` advertisers and two budget copies (arm 0 and
arm 1).  An unsplit chain puts every user in arm 0 and gives arm 1 a zero
budget share, so the same loop serves the full-population chain and the
budget-split experiment.

Per-user integer state, columns of ``ust``:
    0 page (-1 when idle), 1 impressions so far in the session,
    2 xi counter, 3 arrival counter, 4 tick of the next successful arrival coin.
``scal`` holds the impression counter and the number of active sessions.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .market import clear
from .rng import nb_stream_key, nb_uniform

PAGE, STEPS, XI, ARR, NEXT = 0, 1, 2, 3, 4
NEVER = np.int64(2**62)

# record columns
R_N, R_TICK, R_USER, R_PAGE, R_WIN, R_ARM = 0, 1, 2, 3, 4, 5
R_RESERVE, R_PAY = 0, 1


@njit(cache=True)
def sample_cdf(cdf, u):
    for i in range(cdf.shape[0]):
        if u < cdf[i]:
            return i
    return cdf.shape[0] - 1


@njit(cache=True)
def arrival_gap(key, counter, p):
    """Number of failed per-tick coins before the next success."""
    if p >= 1.0:
        return 0
    if p <= 0.0:
        return NEVER
    u = nb_uniform(key, counter)
    g = np.floor(np.log1p(-u) / np.log1p(-p))
    if g > 2.0**61:
        return NEVER
    return np.int64(g)


@njit(cache=True)
def init_state(d, m, arrival_p, arr_key, init_budget, frac):
    ust = np.zeros((d, 5), dtype=np.int64)
    for i in range(d):
        ust[i, PAGE] = -1
        ust[i, NEXT] = arrival_gap(arr_key[i], 0, arrival_p)
        ust[i, ARR] = 1
    scal = np.zeros(2, dtype=np.int64)
    budgets = np.zeros((2, m))
    ghost = np.zeros(m)
    for j in range(m):
        budgets[0, j] = frac[0] * init_budget[j]
        budgets[1, j] = frac[1] * init_budget[j]
        ghost[j] = init_budget[j]
    return ust, scal, budgets, ghost


@njit(cache=True)
def run_ticks(
    t0, t1, tpd, S, L, arrival_p,
    start_cdf, kcdf, val, repl_p, repl_amt,
    reserve, frac, group,
    xi_key, arr_key, zeta_key,
    ust, scal, budgets, ghost,
    rec_on, rec_int, rec_flt, rec_bids, rec_budg, rec_repl,
    day0, day_cnt, day_sum, day_sold,
    pay_on, pay_buf, pay_len,
):
    d = ust.shape[0]
    m = val.shape[0]
    npages = kcdf.shape[0]
    bids = np.empty(m)
    amt = np.empty(m)
    nrec = 0
    maxdev = 0.0
    for t in range(t0, t1):
        # admissions, lowest index first, gated by the concurrency cap
        for i in range(d):
            if ust[i, PAGE] < 0 and ust[i, NEXT] == t:
                if scal[1] < S:
                    ust[i, PAGE] = sample_cdf(start_cdf, nb_uniform(xi_key[i], ust[i, XI]))
                    ust[i, XI] += 1
                    ust[i, STEPS] = 0
                    scal[1] += 1
                else:
                    ust[i, NEXT] = t + 1 + arrival_gap(arr_key[i], ust[i, ARR], arrival_p)
                    ust[i, ARR] += 1
        day = t // tpd
        # one impression per active session, in user order
        for i in range(d):
            pg = ust[i, PAGE]
            if pg < 0:
                continue
            g = group[i]
            r = reserve[g, pg]
            for j in range(m):
                bids[j] = min(val[j, pg], budgets[g, j])
            win, pay = clear(r, bids)
            if win >= 0:
                budgets[g, win] -= pay
                ghost[win] -= pay
            n = scal[0]
            for j in range(m):
                if nb_uniform(zeta_key[j], n) < repl_p[j]:
                    amt[j] = repl_amt[j]
                else:
                    amt[j] = 0.0
                budgets[0, j] += frac[0] * amt[j]
                budgets[1, j] += frac[1] * amt[j]
                ghost[j] += amt[j]
                dev = abs(budgets[0, j] + budgets[1, j] - ghost[j])
                if dev > maxdev:
                    maxdev = dev
            if rec_on:
                rec_int[nrec, R_N] = n
                rec_int[nrec, R_TICK] = t
                rec_int[nrec, R_USER] = i
                rec_int[nrec, R_PAGE] = pg
                rec_int[nrec, R_WIN] = win
                rec_int[nrec, R_ARM] = g
                rec_flt[nrec, R_RESERVE] = r
                rec_flt[nrec, R_PAY] = pay
                for j in range(m):
                    rec_bids[nrec, j] = bids[j]
                    rec_budg[nrec, j] = budgets[g, j]
                    rec_repl[nrec, j] = amt[j]
                nrec += 1
            dd = day - day0
            day_cnt[dd, g] += 1
            day_sum[dd, g] += pay
            if win >= 0:
                day_sold[dd, g] += 1
            if pay_on:
                pay_buf[g, pay_len[g]] = pay
                pay_len[g] += 1
            scal[0] = n + 1
            # page transition, with the session hard-capped at L impressions
            ust[i, STEPS] += 1
            ended = True
            if ust[i, STEPS] < L:
                u = nb_uniform(xi_key[i], ust[i, XI])
                ust[i, XI] += 1
                nxt = sample_cdf(kcdf[pg, win + 1], u)
                if nxt < npages:
                    ust[i, PAGE] = nxt
                    ended = False
            if ended:
                ust[i, PAGE] = -1
                scal[1] -= 1
                ust[i, NEXT] = t + 1 + arrival_gap(arr_key[i], ust[i, ARR], arrival_p)
                ust[i, ARR] += 1
    return nrec, maxdev


@njit(cache=True)
def isqrt(n):
    r = np.int64(np.sqrt(n))
    while r * r > n:
        r -= 1
    while (r + 1) * (r + 1) <= n:
        r += 1
    return r


@njit(cache=True)
def batch_means(x):
    """Batch-means asymptotic variance with batch size floor(sqrt(n))."""
    n = x.shape[0]
    size = isqrt(n)
    count = n // size
    batch = np.empty(count)
    for b in range(count):
        s = 0.0
        for i in range(b * size, (b + 1) * size):
            s += x[i]
        batch[b] = s / size
    grand = 0.0
    for b in range(count):
        grand += batch[b]
    grand /= count
    ss = 0.0
    for b in range(count):
        ss += (batch[b] - grand) ** 2
    return size * ss / (count - 1), size, count


@njit(cache=True)
def keys_for(seed, tag, rep, n):
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        out[i] = nb_stream_key(seed, tag, rep, i)
    return out


@njit(cache=True)
def replicate(
    seed, reps, groups, n_days, tpd, S, L, arrival_p,
    start_cdf, kcdf, val, repl_p, repl_amt, init_budget,
    reserve, frac, want_var,
):
    """Run independent worlds; per-day per-arm counts, sums, sold counts.

    With ``want_var`` the batch-means variance and mean of each arm's
    payment sequence over the full horizon are returned as well.
    """
    R = reps.shape[0]
    d = groups.shape[1]
    m = val.shape[0]
    n_ticks = n_days * tpd
    counts = np.zeros((R, n_days, 2), dtype=np.int64)
    sums = np.zeros((R, n_days, 2))
    sold = np.zeros((R, n_days, 2), dtype=np.int64)
    var = np.full((R, 2), np.nan)
    mean = np.full((R, 2), np.nan)
    maxdev = np.zeros(R)
    arms = 2 if (frac[1] > 0.0 or groups.max() > 0) else 1
    cap = n_ticks * min(S, d) if want_var else 1
    pay_buf = np.empty((arms, cap))
    pay_len = np.zeros(2, dtype=np.int64)
    e_int = np.empty((1, 6), dtype=np.int64)
    e_flt = np.empty((1, 2))
    e_m = np.empty((1, m))
    for r in range(R):
        xi_key = keys_for(seed, 1, reps[r], d)
        arr_key = keys_for(seed, 2, reps[r], d)
        zeta_key = keys_for(seed, 3, reps[r], m)
        ust, scal, budgets, ghost = init_state(d, m, arrival_p, arr_key, init_budget, frac)
        pay_len[:] = 0
        _, dev = run_ticks(
            0, n_ticks, tpd, S, L, arrival_p,
            start_cdf, kcdf, val, repl_p, repl_amt,
            reserve, frac, groups[r],
            xi_key, arr_key, zeta_key,
            ust, scal, budgets, ghost,
            False, e_int, e_flt, e_m, e_m, e_m,
            0, counts[r], sums[r], sold[r],
            want_var, pay_buf, pay_len,
        )
        maxdev[r] = dev
        if want_var:
            for g in range(arms):
                n = pay_len[g]
                if n > 0:
                    s = 0.0
                    for i in range(n):
                        s += pay_buf[g, i]
                    mean[r, g] = s / n
                if n >= 4:
                    var[r, g] = batch_means(pay_buf[g, :n])[0]
    return counts, sums, sold, var, mean, maxdev

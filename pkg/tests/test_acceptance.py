"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are collected and repeated in the pytest terminal summary.
Monte Carlo sizes are the ones stated by the criteria; the whole file
takes a few minutes on one core.
"""

import csv
import json
import math
import time

import numpy as np
import pytest

from adwalk.chain import run_chain
from adwalk.cli import main
from adwalk.experiment import experiment_batch, simulate_split
from adwalk.inference import (
    anscombe_diagnostic,
    batch_means_variance,
    coverage_experiment,
    oracle_delta,
    pilot_estimates,
    plan_horizon,
    split_epsilons,
    wald_table,
)
from adwalk.market import ReservePolicy
from adwalk.permutation import permute_and_replay, window_permute
from adwalk.rng import derive_seed

pytestmark = pytest.mark.slow

V_DESK, W_DESK, Q = 1.5, 0.5, 0.5
SEED = 20240601


def report(log, number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} :: {detail}"
    log.append(line)
    print(line)
    return ok


def nonincreasing(values, errors=None):
    """Strict check, and the same check allowing two standard errors of each difference."""
    strict = all(b <= a for a, b in zip(values, values[1:]))
    if errors is None:
        return strict, strict
    loose = all(
        b <= a + 2 * math.hypot(ea, eb)
        for a, b, ea, eb in zip(values, values[1:], errors, errors[1:])
    )
    return strict, loose


@pytest.fixture(scope="module")
def desk_oracle_100(desk):
    return oracle_delta(desk, V_DESK, W_DESK, 100, 5000, derive_seed(SEED, "oracle"))


def test_revenue_curve_reproduction(tmp_path, acceptance_log):
    start = time.perf_counter()
    code = main(["revenue-curve", "--out-dir", str(tmp_path)])
    elapsed = time.perf_counter() - start
    rows = list(csv.DictReader((tmp_path / "revenue_curve.csv").open()))
    worst = 0.0
    for i, row in enumerate(rows):
        p = i / 100
        expected = 1.0 if p <= 1 else (p if p <= 2 else 0.0)
        worst = max(worst, abs(float(row["revenue"]) - expected), abs(float(row["reserve"]) - p))
    ok = code == 0 and len(rows) == 301 and worst == 0.0 and elapsed < 1.0
    assert report(acceptance_log, 1, "two-bidder revenue curve", ok,
                  f"{len(rows)} grid points, max error {worst}, {elapsed:.3f}s")


def test_permutation_example_reproduction(tmp_path, acceptance_log):
    code = main(["permute-demo", "--users", "1,2,1,3,2,1", "--window", "6", "--out-dir", str(tmp_path)])
    rows = list(csv.DictReader((tmp_path / "permutation.csv").open()))
    users = [int(r["user"]) for r in rows]
    pages = [r["page"] for r in rows]
    ok = code == 0 and users == [1, 1, 1, 2, 2, 3] and pages == ["X^1_1", "X^1_3", "X^1_6", "X^2_2", "X^2_5", "X^3_4"]
    assert report(acceptance_log, 2, "window permutation example", ok, f"users {users}, pages {pages}")


def test_permutation_properties(acceptance_log):
    rng = np.random.default_rng(SEED)
    failures = 0
    for _ in range(10_000):
        n = int(rng.integers(0, 201))
        users = rng.integers(0, int(rng.integers(1, 11)), size=n).tolist()
        T = int(rng.integers(1, 51))
        perm = window_permute(users, T)
        inv = perm.inverse
        out = [users[i] for i in inv]
        ok = sorted(out) == sorted(users) and sorted(inv.tolist()) == list(range(n))
        ok &= bool(np.all(np.abs(perm.forward - np.arange(n)) < T))
        for s in range(0, n, T):
            block, origin = out[s:s + T], inv[s:s + T]
            changes = [u for k, u in enumerate(block) if k == 0 or block[k - 1] != u]
            ok &= len(changes) == len(set(changes))
            firsts = list(dict.fromkeys(users[s:s + T]))
            ok &= changes == firsts
            for u in set(block):
                pos = [int(o) for o, b in zip(origin, block) if b == u]
                ok &= pos == sorted(pos)
        failures += not ok
    assert report(acceptance_log, 3, "permutation property suite", failures == 0,
                  f"10000 random sequences, {failures} failures")


def test_permutation_gap(desk, acceptance_log):
    policy = ReservePolicy.constant(1.0)
    days = 3
    N = len(run_chain(desk, policy, days, SEED))
    ample = desk.with_budgets(N * desk.bid_cap)
    traj = run_chain(ample, policy, days, SEED)
    _, _, gap = permute_and_replay(traj, ample)
    vanish = gap.revenue_gap == 0.0 and len(traj) == N

    scales = [N * desk.bid_cap / 8, N * desk.bid_cap / 4, N * desk.bid_cap / 2, N * desk.bid_cap]
    means, ses = [], []
    for s in scales:
        cfg = desk.with_budgets(s)
        gaps = [permute_and_replay(run_chain(cfg, policy, days, seed), cfg)[2].revenue_gap for seed in range(40)]
        means.append(float(np.mean(gaps)))
        ses.append(float(np.std(gaps, ddof=1) / math.sqrt(len(gaps))))
    finite = all(np.isfinite(means))
    strict, loose = nonincreasing(means, ses)
    ok = vanish and finite and loose
    detail = (
        f"N={N}, gap at budgets N*B: {gap.revenue_gap}; mean gap over 40 seeds at budget scales "
        f"{[round(s) for s in scales]}: {[round(m, 3) for m in means]} (se {[round(e, 3) for e in ses]}); "
        f"nonincreasing strictly={strict}, within 2 se={loose}"
    )
    assert report(acceptance_log, 4, "permutation gap", ok, detail)


def test_budget_conservation(desk, acceptance_log):
    rng = np.random.default_rng(SEED)
    violations = 0
    steps = 0
    for t in range(100):
        scale = float(rng.choice([5.0, 50.0, 500.0, 1e6]))
        cfg = desk.with_budgets(scale)
        traj = run_chain(cfg, ReservePolicy.constant(float(rng.uniform(0, 2.5))), 2, int(rng.integers(2**32)), rep=t)
        prev = traj.initial_budgets.copy()
        for i in range(len(traj)):
            expect = prev.copy()
            w = traj.winner[i]
            if w >= 0:
                violations += traj.payment[i] > prev[w]
                expect[w] -= traj.payment[i]
            expect += traj.replenishment[i]
            violations += not np.array_equal(expect, traj.budgets[i])
            prev = traj.budgets[i]
            steps += 1
    split_dev = 0.0
    for r in range(20):
        run = simulate_split(desk.with_budgets(50.0), V_DESK, W_DESK, Q, 5, SEED, rep=r)
        split_dev = max(split_dev, run.split_deviation)
    batch = experiment_batch(desk.with_budgets(50.0), V_DESK, W_DESK, 0.3, 10, SEED, 200, want_variance=False)
    split_dev = max(split_dev, float(batch.runs.split_deviation.max()))
    ok = violations == 0 and split_dev <= 1e-9
    assert report(acceptance_log, 5, "budget conservation", ok,
                  f"{steps} steps on 100 trajectories, {violations} violations; "
                  f"max split-copy deviation {split_dev:.3g} over 220 split runs")


def test_wald_factorization(desk, acceptance_log):
    rows = wald_table(desk, 1.0, [10, 50, 250], 500, SEED)
    disc = [r.discrepancy for r in rows]
    ses = [r.std_error for r in rows]
    strict, loose = nonincreasing(disc, ses)
    final = rows[-1].discrepancy
    ok = final <= 0.02 and loose
    detail = ", ".join(f"k={r.k}: {r.discrepancy:.2e} (se {r.std_error:.1e})" for r in rows)
    assert report(acceptance_log, 6, "Wald-like factorization", ok,
                  f"{detail}; nonincreasing strictly={strict}, within 2 se={loose}")


def test_stopped_sum_normality(desk, acceptance_log):
    rep = anscombe_diagnostic(desk, 1.0, 50, 10_000, SEED)
    lo, mid, hi = rep.quantiles
    ok = abs(lo + 1.96) <= 0.15 and abs(hi - 1.96) <= 0.15 and not rep.degenerate
    assert report(acceptance_log, 7, "normality of standardized stopped sums", ok,
                  f"quantiles (2.5%, 50%, 97.5%) = ({lo:.3f}, {mid:.3f}, {hi:.3f}) over {rep.reps} replications")


def test_interval_coverage(desk, desk_oracle_100, acceptance_log):
    rep = coverage_experiment(desk, V_DESK, W_DESK, Q, 100, 0.05, 1000, SEED, oracle=desk_oracle_100)
    bar = 0.90 - 3 * rep.std_error
    bar_c = 0.90 - 3 * rep.std_error_corrected
    ok = rep.coverage >= bar and rep.coverage_corrected >= bar_c
    bern = coverage_experiment(desk, V_DESK, W_DESK, Q, 100, 0.05, 1000, SEED, oracle=desk_oracle_100,
                               assignment="bernoulli")
    detail = (
        f"verbatim {rep.coverage:.3f} (se {rep.std_error:.3f}), corrected {rep.coverage_corrected:.3f} "
        f"(se {rep.std_error_corrected:.3f}), oracle {desk_oracle_100.delta_mc:.1f} +/- "
        f"{desk_oracle_100.mc_std_error:.1f}; for reference, independent per-user assignment gives "
        f"{bern.coverage:.3f}"
    )
    assert report(acceptance_log, 8, "interval coverage at alpha=0.05", ok, detail)


def test_estimator_consistency(desk, acceptance_log):
    k = 250
    oracle = oracle_delta(desk, V_DESK, W_DESK, k, 2000, derive_seed(SEED, "oracle-250"))
    batch = experiment_batch(desk, V_DESK, W_DESK, Q, k, SEED, 1000, want_variance=False)
    d = batch.deltas()
    mean = float(np.nanmean(d))
    rel = abs(mean / k - oracle.delta_mc / k) / abs(oracle.delta_mc / k)
    ok = rel <= 0.05 and not np.isnan(d).any()
    assert report(acceptance_log, 9, "estimator consistency at k=250", ok,
                  f"mean estimate/k {mean / k:.3f}, oracle/k {oracle.delta_mc / k:.3f} "
                  f"(se {oracle.mc_std_error / k:.3f}), relative gap {rel:.4f}")


def test_planner_round_trip(desk, acceptance_log):
    worked = plan_horizon(1.0, 0.05, 1.0, 1.0, 100.0, 100.0)
    pilot = pilot_estimates(desk, V_DESK, W_DESK, Q, 20, SEED)
    eps0 = 30.0
    k = plan_horizon(eps0, 0.05, pilot.sigma_a, pilot.sigma_b, pilot.eta_v, pilot.eta_w)
    batch = experiment_batch(desk, V_DESK, W_DESK, Q, k, derive_seed(SEED, "planned"), 100)
    V, W, _, _ = batch.measurements()
    eps = split_epsilons(V, W, batch.runs.variance, Q, k, 0.05)
    achieved = float(np.mean(eps)) / k
    ok = worked == 12293 and achieved <= 1.1 * eps0
    assert report(acceptance_log, 10, "planner round trip", ok,
                  f"worked example k={worked}; target {eps0}/day -> k={k}, achieved mean half-width "
                  f"{achieved:.2f}/day over 100 experiments")


def test_batch_means_sanity(acceptance_log):
    rng = np.random.default_rng(SEED)
    big = batch_means_variance(rng.standard_normal(1_000_000)).sigma_sq
    worst_loc = worst_scale = 0.0
    for _ in range(200):
        x = rng.standard_normal(int(rng.integers(4, 5000))) * rng.uniform(0.1, 10)
        base = batch_means_variance(x).sigma_sq
        shift = float(rng.uniform(-100, 100))
        c = float(rng.uniform(-5, 5))
        if base > 0:
            worst_loc = max(worst_loc, abs(batch_means_variance(x + shift).sigma_sq - base) / base)
            worst_scale = max(worst_scale, abs(batch_means_variance(c * x).sigma_sq - c * c * base) / (c * c * base))
    ok = 0.95 <= big <= 1.05 and worst_loc <= 1e-9 and worst_scale <= 1e-12
    assert report(acceptance_log, 11, "batch-means sanity", ok,
                  f"iid unit variance n=1e6 -> {big:.4f}; max relative change under shift {worst_loc:.1e}, "
                  f"under c^2 scaling {worst_scale:.1e} (200 random inputs)")


RERUNS = {
    "simulate": ["--days", "3"],
    "experiment": ["--days", "20"],
    "oracle": ["--days", "10", "--reps", "200"],
    "coverage": ["--days", "10", "--reps", "100", "--oracle-reps", "200"],
    "plan": ["--epsilon0", "30", "--pilot-days", "10", "--reps", "5"],
    "permute-demo": [],
    "revenue-curve": [],
    "diagnostics": ["--days", "5,10", "--reps", "100", "--normal-days", "5", "--normal-reps", "1000"],
}


def test_determinism(tmp_path, acceptance_log):
    differing = []
    for command, extra in RERUNS.items():
        argv = [command] + extra
        if command not in ("permute-demo", "revenue-curve"):
            argv += ["--seed", str(SEED)]
        outs = []
        for tag in ("first", "second"):
            out = tmp_path / command / tag
            assert main(argv + ["--out-dir", str(out)]) == 0
            files = {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "manifest.json"}
            manifest = json.loads((out / "manifest.json").read_text())
            manifest.pop("timestamp")
            outs.append((files, manifest))
        if outs[0] != outs[1] or not outs[0][0]:
            differing.append(command)
    ok = not differing
    assert report(acceptance_log, 12, "byte-identical reruns", ok,
                  f"{len(RERUNS)} subcommands rerun, differing: {differing or 'none'}")

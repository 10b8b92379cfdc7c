import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from adwalk.errors import ConfigError, EstimationError
from adwalk.experiment import (
    Measurements,
    assign_users,
    estimate_delta,
    experiment_batch,
    run_experiment,
    simulate_split,
    split_budgets,
)

from _scenarios import tiny


def _meas(V, W, ta, tb, q):
    return Measurements(V, W, ta / V if V else None, tb / W if W else None, 0, 0, ta, tb, 1, q, 1.0, 0.0, 0)


def test_estimate_by_hand():
    m = _meas(100, 50, 150.0, 40.0, 0.5)
    # (100 / 0.5) * 1.5 - (50 / 0.5) * 0.8
    assert estimate_delta(m) == pytest.approx(300.0 - 80.0)


@given(
    st.integers(1, 10**6), st.integers(1, 10**6),
    st.floats(0, 1e6), st.floats(0, 1e6), st.floats(0.01, 0.99),
)
def test_estimate_equals_scaled_totals(V, W, ta, tb, q):
    got = estimate_delta(_meas(V, W, ta, tb, q))
    want = ta / q - tb / (1 - q)
    assert got == pytest.approx(want, rel=1e-9, abs=1e-6)


@pytest.mark.parametrize("V, W, q", [(0, 5, 0.5), (5, 0, 0.5), (5, 5, 0.0), (5, 5, 1.0)])
def test_estimate_undefined(V, W, q):
    with pytest.raises(EstimationError):
        estimate_delta(_meas(V, W, 1.0, 1.0, q))


@pytest.mark.parametrize("d, q", [(50, 0.5), (7, 0.3), (10, 0.0), (10, 1.0)])
def test_complete_assignment_size(d, q):
    a = assign_users(d, q, 3, scheme="complete")
    assert a.size_a == math.floor(q * d + 0.5)


def test_bernoulli_marginal():
    hits = np.mean([assign_users(40, 0.3, 5, rep=r).groups == 0 for r in range(300)])
    assert abs(hits - 0.3) < 0.02


def test_complete_marginal_per_user():
    rate = np.mean([assign_users(10, 0.5, 2, rep=r, scheme="complete").groups for r in range(2000)], axis=0)
    assert np.all(np.abs(rate - 0.5) < 0.05)


def test_assignment_errors():
    with pytest.raises(ConfigError):
        assign_users(0, 0.5, 1)
    with pytest.raises(ConfigError):
        assign_users(5, 1.5, 1)
    with pytest.raises(ConfigError):
        assign_users(5, 0.5, 1, scheme="stratified")


def test_split_budgets():
    a, b = split_budgets([10.0, 4.0], 0.25)
    assert list(a) == [2.5, 1.0] and list(b) == [7.5, 3.0]
    a, b = split_budgets([10.0], 0.25, replenishments=[2.0])
    assert list(a) == [0.5] and list(b) == [1.5]
    with pytest.raises(ConfigError):
        split_budgets([-1.0], 0.5)


@pytest.mark.parametrize("seed", range(10))
def test_split_run_conserves_budget(seed):
    c = tiny(arrival_prob=0.6)
    run = simulate_split(c, 0.3, 1.1, 0.4, 6, seed)
    cols = run.columns
    assert run.split_deviation <= 1e-9 * (1 + c.initial_budgets.sum())
    # each arm only ever bids against its own copy
    for arm, frac in ((0, 0.4), (1, 0.6)):
        rows = np.flatnonzero(cols["arm"] == arm)
        assert np.all(np.isin(cols["user"][rows], np.flatnonzero(run.assignment.groups == arm)))
    final = cols["final_budgets"]
    assert np.all(final >= 0)


def test_split_arm_counts_match_records():
    c = tiny(arrival_prob=0.6)
    run = simulate_split(c, 0.3, 1.1, 0.5, 6, 4)
    m = run.measurements
    assert m.V == run.payments_a.size and m.W == run.payments_b.size
    assert m.total_a == pytest.approx(run.payments_a.sum())
    assert m.V + m.W == run.columns["n"].size


def test_batch_replication_equals_single_run():
    c = tiny(arrival_prob=0.6)
    batch = experiment_batch(c, 0.3, 1.1, 0.5, 6, 17, 4)
    V, W, SV, SW = batch.measurements()
    deltas = batch.deltas()
    for r in range(4):
        m = run_experiment(c, 0.3, 1.1, 0.5, 6, 17, rep=r)
        assert (m.V, m.W, m.total_a, m.total_b) == (V[r], W[r], SV[r], SW[r])
        if not m.undefined:
            assert estimate_delta(m) == deltas[r]


def test_empty_arm_yields_nan_in_batch():
    c = tiny(num_users=1)
    batch = experiment_batch(c, 0.3, 1.1, 0.5, 3, 1, 3)
    assert np.all(np.isnan(batch.deltas()))

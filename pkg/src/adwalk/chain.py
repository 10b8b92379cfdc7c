"""The interleaved multi-user chain: sessions, the world clock and partial sums.

Time advances in ticks.  At the start of a tick every idle user whose
arrival coin succeeds is admitted (lowest index first) while fewer than
``concurrency_cap`` sessions are active; then every active user, in index
order, generates exactly one impression: reserve, bids, auction, budget
update, page step.  A day is ``ticks_per_day`` ticks, so the number of
impressions in ``k`` days is a stopping time of the chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _engine as E
from .config import ScenarioConfig
from .errors import ConfigError, EstimationError
from .market import AuctionOutcome, ReservePolicy
from .rng import Streams


@dataclass(frozen=True)
class ImpressionRecord:
    n: int  # 1-based position in the chain
    day: int
    user: int
    page: str
    reserve: float
    bids: tuple[float, ...]
    winner: Optional[int]
    payment: float


@dataclass(frozen=True)
class MarketState:
    users: np.ndarray = field(repr=False)  # engine per-user state, see adwalk._engine
    budgets: np.ndarray
    tick: int
    n: int
    active: int
    ticks_per_day: int
    active_user: Optional[int] = None

    @property
    def day(self) -> int:
        return self.tick // self.ticks_per_day

    @property
    def pages(self) -> np.ndarray:
        """Current page index per user, -1 for idle users."""
        return self.users[:, E.PAGE].copy()


def initial_state(config: ScenarioConfig, streams: Streams) -> MarketState:
    ust, scal, budgets, _ = E.init_state(
        config.num_users, config.num_advertisers, config.arrival_prob,
        streams.arrival, config.initial_budgets, np.array([1.0, 0.0]),
    )
    return MarketState(ust, budgets[0].copy(), 0, 0, 0, config.ticks_per_day)


def step_user(
    config: ScenarioConfig,
    page: str,
    outcome: AuctionOutcome,
    xi: float,
    impressions: int = 1,
) -> Optional[str]:
    """Next page for a user who just saw ``outcome`` on ``page``; None ends the session.

    ``impressions`` counts the session's impressions including this one; at
    ``session_cap`` the session ends without consulting the kernel.
    """
    if not 0.0 <= xi < 1.0:
        raise ConfigError([f"xi: must lie in [0, 1), got {xi!r}"])
    i = config.page_index(page)
    slot = 0 if outcome.winner is None else 1 + outcome.winner
    if slot > config.num_advertisers:
        raise ConfigError([f"transitions.{page}: no row for winner {outcome.winner}"])
    if impressions >= config.session_cap:
        return None
    nxt = E.sample_cdf(config.kernel_cdf[i, slot], xi)
    return None if nxt == config.num_pages else config.pages[nxt]


def _world_arrays(config: ScenarioConfig):
    return (
        config.ticks_per_day, config.concurrency_cap, config.session_cap, config.arrival_prob,
        config.start_cdf, config.kernel_cdf, config.valuations,
        config.replenish_prob, config.replenish_amount,
    )


class _Recorder:
    def __init__(self, n_ticks: int, config: ScenarioConfig, n_days: int):
        cap = max(1, n_ticks * min(config.concurrency_cap, config.num_users))
        m = config.num_advertisers
        self.ints = np.zeros((cap, 6), dtype=np.int64)
        self.flts = np.zeros((cap, 2))
        self.bids = np.zeros((cap, m))
        self.budgets = np.zeros((cap, m))
        self.repl = np.zeros((cap, m))
        self.day_cnt = np.zeros((max(n_days, 1), 2), dtype=np.int64)
        self.day_sum = np.zeros((max(n_days, 1), 2))
        self.day_sold = np.zeros((max(n_days, 1), 2), dtype=np.int64)

    def args(self):
        return (True, self.ints, self.flts, self.bids, self.budgets, self.repl)

    def trim(self, n: int) -> dict:
        return dict(
            n=self.ints[:n, E.R_N] + 1,
            tick=self.ints[:n, E.R_TICK].copy(),
            user=self.ints[:n, E.R_USER].copy(),
            page=self.ints[:n, E.R_PAGE].copy(),
            winner=self.ints[:n, E.R_WIN].copy(),
            arm=self.ints[:n, E.R_ARM].copy(),
            reserve=self.flts[:n, E.R_RESERVE].copy(),
            payment=self.flts[:n, E.R_PAY].copy(),
            bids=self.bids[:n].copy(),
            budgets=self.budgets[:n].copy(),
            replenishment=self.repl[:n].copy(),
        )


def advance_world(
    state: MarketState,
    config: ScenarioConfig,
    policy: ReservePolicy,
    streams: Streams,
) -> tuple[MarketState, list[ImpressionRecord]]:
    """Advance one tick.  The input state is not modified."""
    ust = state.users.copy()
    scal = np.array([state.n, state.active], dtype=np.int64)
    budgets = np.zeros((2, config.num_advertisers))
    budgets[0] = state.budgets
    ghost = state.budgets.copy()
    reserve = np.vstack([policy.as_array(config.pages)] * 2)
    rec = _Recorder(1, config, 1)
    tpd, S, L, a, start, kern, val, rp, ra = _world_arrays(config)
    nrec, _ = E.run_ticks(
        state.tick, state.tick + 1, tpd, S, L, a, start, kern, val, rp, ra,
        reserve, np.array([1.0, 0.0]), np.zeros(config.num_users, dtype=np.int64),
        streams.xi, streams.arrival, streams.zeta,
        ust, scal, budgets, ghost,
        *rec.args(),
        state.day, rec.day_cnt, rec.day_sum, rec.day_sold,
        False, np.empty((1, 1)), np.zeros(2, dtype=np.int64),
    )
    cols = rec.trim(nrec)
    records = [
        ImpressionRecord(
            n=int(cols["n"][i]),
            day=int(cols["tick"][i]) // tpd,
            user=int(cols["user"][i]),
            page=config.pages[cols["page"][i]],
            reserve=float(cols["reserve"][i]),
            bids=tuple(float(b) for b in cols["bids"][i]),
            winner=None if cols["winner"][i] < 0 else int(cols["winner"][i]),
            payment=float(cols["payment"][i]),
        )
        for i in range(nrec)
    ]
    new = replace(
        state,
        users=ust,
        budgets=budgets[0].copy(),
        tick=state.tick + 1,
        n=int(scal[0]),
        active=int(scal[1]),
        active_user=records[-1].user if records else state.active_user,
    )
    return new, records


def record_world(
    config: ScenarioConfig,
    reserve: np.ndarray,
    frac: np.ndarray,
    group: np.ndarray,
    n_days: int,
    seed: int,
    rep: int,
) -> tuple[dict, float]:
    """Simulate one world for ``n_days`` and return every impression as columns."""
    streams = Streams(seed, rep, config.num_users, config.num_advertisers)
    ust, scal, budgets, ghost = E.init_state(
        config.num_users, config.num_advertisers, config.arrival_prob,
        streams.arrival, config.initial_budgets, frac,
    )
    n_ticks = n_days * config.ticks_per_day
    rec = _Recorder(n_ticks, config, n_days)
    tpd, S, L, a, start, kern, val, rp, ra = _world_arrays(config)
    nrec, maxdev = E.run_ticks(
        0, n_ticks, tpd, S, L, a, start, kern, val, rp, ra,
        reserve, frac, group,
        streams.xi, streams.arrival, streams.zeta,
        ust, scal, budgets, ghost,
        *rec.args(),
        0, rec.day_cnt, rec.day_sum, rec.day_sold,
        False, np.empty((1, 1)), np.zeros(2, dtype=np.int64),
    )
    cols = rec.trim(nrec)
    cols["day_counts"] = rec.day_cnt[:n_days].copy()
    cols["day_sums"] = rec.day_sum[:n_days].copy()
    cols["day_sold"] = rec.day_sold[:n_days].copy()
    cols["final_budgets"] = budgets.copy()
    return cols, maxdev


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Every impression of one chain over ``days`` days, as column arrays."""

    days: int
    seed: int
    rep: int
    pages: tuple[str, ...]
    initial_budgets: np.ndarray
    n: np.ndarray
    day: np.ndarray
    tick: np.ndarray
    user: np.ndarray
    page: np.ndarray
    reserve: np.ndarray
    bids: np.ndarray
    winner: np.ndarray  # -1 when unsold
    payment: np.ndarray
    budgets: np.ndarray  # after each impression, replenishment included
    replenishment: np.ndarray
    final_budgets: np.ndarray

    def __len__(self) -> int:
        return int(self.payment.shape[0])

    @property
    def per_day_counts(self) -> np.ndarray:
        return np.bincount(self.day, minlength=self.days)[: self.days] if self.days else np.zeros(0, int)

    @property
    def partial_sums(self) -> np.ndarray:
        """S_1, ..., S_N (sequential accumulation)."""
        return np.cumsum(self.payment)

    @property
    def total(self) -> float:
        return float(self.partial_sums[-1]) if len(self) else 0.0

    def record(self, i: int) -> ImpressionRecord:
        w = int(self.winner[i])
        return ImpressionRecord(
            n=int(self.n[i]), day=int(self.day[i]), user=int(self.user[i]),
            page=self.pages[self.page[i]], reserve=float(self.reserve[i]),
            bids=tuple(float(b) for b in self.bids[i]),
            winner=None if w < 0 else w, payment=float(self.payment[i]),
        )

    @property
    def records(self) -> list[ImpressionRecord]:
        return [self.record(i) for i in range(len(self))]

    def csv_rows(self):
        """Rows of (n, day, user, page, reserve, max_bid, second_bid, winner, payment)."""
        for i in range(len(self)):
            b = np.sort(self.bids[i])[::-1]
            w = int(self.winner[i])
            yield (
                int(self.n[i]), int(self.day[i]), int(self.user[i]), self.pages[self.page[i]],
                float(self.reserve[i]), float(b[0]), float(b[1]) if b.size > 1 else "",
                "" if w < 0 else w, float(self.payment[i]),
            )


CSV_HEADER = ("n", "day", "user", "page", "reserve", "max_bid", "second_bid", "winner", "payment")


def run_chain(
    config: ScenarioConfig,
    policy: ReservePolicy,
    k: int,
    seed: int,
    rep: int = 0,
) -> Trajectory:
    """Full-population chain under ``policy`` for ``k`` days."""
    if k < 0:
        raise ConfigError([f"days: must be >= 0, got {k}"])
    reserve = np.vstack([policy.as_array(config.pages)] * 2)
    cols, _ = record_world(
        config, reserve, np.array([1.0, 0.0]), np.zeros(config.num_users, dtype=np.int64), k, seed, rep
    )
    return Trajectory(
        days=k, seed=int(seed), rep=int(rep), pages=config.pages,
        initial_budgets=config.initial_budgets.copy(),
        n=cols["n"], day=cols["tick"] // config.ticks_per_day, tick=cols["tick"],
        user=cols["user"], page=cols["page"], reserve=cols["reserve"], bids=cols["bids"],
        winner=cols["winner"], payment=cols["payment"], budgets=cols["budgets"],
        replenishment=cols["replenishment"], final_budgets=cols["final_budgets"][0],
    )


def stopping_time(trajectory: Trajectory, k: int) -> int:
    """K_k: impressions generated during days 0..k-1."""
    if k < 0 or k > trajectory.days:
        raise ConfigError([f"k: must lie in [0, {trajectory.days}], got {k}"])
    return int(np.count_nonzero(trajectory.day < k))


def partial_average(trajectory: Trajectory, n: int) -> float:
    if n < 1 or n > len(trajectory):
        raise EstimationError(f"partial average needs 1 <= n <= {len(trajectory)}, got {n}")
    return float(trajectory.partial_sums[n - 1]) / n


@dataclass(frozen=True, eq=False)
class Replications:
    """Per-replication, per-day, per-arm aggregates from the compiled kernel."""

    counts: np.ndarray  # (R, days, 2)
    sums: np.ndarray
    sold: np.ndarray
    variance: np.ndarray  # (R, 2) batch-means variance over the whole horizon
    mean: np.ndarray  # (R, 2)
    split_deviation: np.ndarray  # (R,) max |A + B - unsplit| budget gap

    def stopped(self, k: int, arm: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """(K_k, S_{K_k}) per replication for one arm (sums over days are exactly rounded)."""
        return self.counts[:, :k, arm].sum(axis=1), np.array([math.fsum(row) for row in self.sums[:, :k, arm]])


def replicate(
    config: ScenarioConfig,
    reserve: np.ndarray,
    n_days: int,
    seed: int,
    reps: np.ndarray,
    groups: Optional[np.ndarray] = None,
    frac: tuple[float, float] = (1.0, 0.0),
    want_variance: bool = False,
) -> Replications:
    """Run ``len(reps)`` independent worlds; ``reps`` are the replication ids."""
    reps = np.asarray(reps, dtype=np.int64)
    if groups is None:
        groups = np.zeros((reps.size, config.num_users), dtype=np.int64)
    reserve = np.asarray(reserve, dtype=np.float64)
    if reserve.ndim == 1:
        reserve = np.vstack([reserve, reserve])
    tpd, S, L, a, start, kern, val, rp, ra = _world_arrays(config)
    out = E.replicate(
        np.uint64(seed), reps, np.ascontiguousarray(groups, dtype=np.int64), int(n_days),
        tpd, S, L, a, start, kern, val, rp, ra, config.initial_budgets,
        np.ascontiguousarray(reserve), np.asarray(frac, dtype=np.float64), bool(want_variance),
    )
    return Replications(*out)


def policy_reserve(config: ScenarioConfig, policy) -> np.ndarray:
    if isinstance(policy, ReservePolicy):
        return policy.as_array(config.pages)
    if not (isinstance(policy, (int, float)) and math.isfinite(policy) and policy >= 0):
        raise ConfigError([f"reserve: must be a nonnegative number, got {policy!r}"])
    return np.full(config.num_pages, float(policy))

"""Window permutation that groups interleaved impressions by user session.

The sequence is cut into consecutive, non-overlapping windows of ``T``
impressions.  Inside a window, each user's impressions are moved into one
contiguous block, blocks ordered by the user's first appearance in the
window, impressions inside a block kept in their original order.  So no
impression moves ``T`` or more positions.

Budgets are not permuted: they are replayed by re-running the auctions in
the permuted order from the same initial budgets (``replay_budgets``).
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .chain import Trajectory
from .config import ScenarioConfig
from .errors import ConfigError
from .market import clear
from .rng import Streams, uniform


@dataclass(frozen=True, eq=False)
class WindowPermutation:
    """``forward[n]`` is the new position of impression ``n``; ``inverse`` undoes it (0-based)."""

    window: int
    forward: np.ndarray
    inverse: np.ndarray

    def __len__(self) -> int:
        return int(self.forward.shape[0])

    def apply(self, seq):
        """Permuted copy of ``seq``: element at new position p is ``seq[inverse[p]]``."""
        if len(seq) != len(self):
            raise ConfigError([f"permutation: length {len(self)} does not match sequence length {len(seq)}"])
        if isinstance(seq, np.ndarray):
            return seq[self.inverse]
        return [seq[i] for i in self.inverse]


def window_permute(active_users: Sequence[int], window: int) -> WindowPermutation:
    if window < 1:
        raise ConfigError([f"window: must be >= 1, got {window}"])
    users = list(active_users)
    n = len(users)
    inverse = np.empty(n, dtype=np.int64)
    pos = 0
    for start in range(0, n, window):
        blocks: dict = {}
        for i in range(start, min(start + window, n)):
            blocks.setdefault(users[i], []).append(i)  # dicts keep first-appearance order
        for idx in blocks.values():
            inverse[pos : pos + len(idx)] = idx
            pos += len(idx)
    forward = np.empty(n, dtype=np.int64)
    forward[inverse] = np.arange(n)
    return WindowPermutation(window, forward, inverse)


def default_window(config: ScenarioConfig) -> int:
    return config.session_cap * config.concurrency_cap


@dataclass(frozen=True, eq=False)
class PermutedRecords:
    """Impressions of a trajectory in permuted order; ``origin`` is the original position."""

    origin: np.ndarray
    user: np.ndarray
    page: np.ndarray
    reserve: np.ndarray

    def __len__(self) -> int:
        return int(self.origin.shape[0])


def apply_permutation(trajectory: Trajectory, perm: WindowPermutation) -> PermutedRecords:
    if len(perm) != len(trajectory):
        raise ConfigError([f"permutation: length {len(perm)} does not match trajectory length {len(trajectory)}"])
    inv = perm.inverse
    return PermutedRecords(inv.copy(), trajectory.user[inv], trajectory.page[inv], trajectory.reserve[inv])


@dataclass(frozen=True, eq=False)
class Replay:
    payment: np.ndarray
    winner: np.ndarray
    budgets: np.ndarray  # (N, m) after each replayed impression

    @property
    def final_budgets(self) -> Optional[np.ndarray]:
        return self.budgets[-1] if len(self.payment) else None


def replay_budgets(
    records: PermutedRecords,
    initial_budgets: Sequence[float],
    config: ScenarioConfig,
    seed: int,
    rep: int = 0,
) -> Replay:
    """Re-run bids, auctions and budget updates in the given order.

    Replenishment at position ``n`` uses the ``n``-th draw of each
    advertiser's stream, exactly as the original chain did, so the identity
    permutation reproduces the original budgets bit for bit.
    """
    m = config.num_advertisers
    budgets = np.array(initial_budgets, dtype=np.float64)
    if budgets.shape != (m,) or np.any(budgets < 0):
        raise ConfigError([f"initial budgets: expected {m} nonnegative values"])
    zeta = [int(k) for k in Streams(seed, rep, config.num_users, m).zeta]
    N = len(records)
    pay = np.zeros(N)
    win = np.full(N, -1, dtype=np.int64)
    hist = np.zeros((N, m))
    val = config.valuations
    rp, ra = config.replenish_prob, config.replenish_amount
    bids = np.empty(m)
    for n in range(N):
        pg = records.page[n]
        for j in range(m):
            bids[j] = min(val[j, pg], budgets[j])
        w, p = clear(float(records.reserve[n]), bids)
        if w >= 0:
            budgets[w] -= p
        for j in range(m):
            if uniform(zeta[j], n) < rp[j]:
                budgets[j] += ra[j]
        pay[n] = p
        win[n] = w
        hist[n] = budgets
    return Replay(pay, win, hist)


@dataclass(frozen=True)
class PermutationGap:
    revenue_gap: float
    budget_gap: tuple[float, ...]
    original_total: float
    replayed_total: float


def permutation_gap(original: Trajectory, replayed: Replay) -> PermutationGap:
    if len(original) != len(replayed.payment):
        raise ConfigError(["permutation gap: trajectories differ in length"])
    a = math.fsum(original.payment)
    b = math.fsum(replayed.payment)
    if len(original):
        gap = tuple(float(x) for x in original.budgets[-1] - replayed.budgets[-1])
    else:
        gap = tuple(0.0 for _ in original.initial_budgets)
    return PermutationGap(abs(a - b), gap, a, b)


def permute_and_replay(
    trajectory: Trajectory,
    config: ScenarioConfig,
    window: Optional[int] = None,
) -> tuple[WindowPermutation, Replay, PermutationGap]:
    perm = window_permute(trajectory.user, window or default_window(config))
    replay = replay_budgets(
        apply_permutation(trajectory, perm), trajectory.initial_budgets, config, trajectory.seed, trajectory.rep
    )
    return perm, replay, permutation_gap(trajectory, replay)

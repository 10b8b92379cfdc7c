"""Second-price auctions with a publisher reserve and budget-capped bidders.

Bid and budget profiles are plain float arrays indexed by advertiser
(0-based).  Money is an unrounded nonnegative real.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from numba import njit

from .errors import ConfigError, InvariantError


@dataclass(frozen=True)
class ReservePolicy:
    """Static reserve price: one constant, or one value per page."""

    kind: str
    value: float = 0.0
    table: Optional[Mapping[str, float]] = None

    @classmethod
    def constant(cls, value: float) -> "ReservePolicy":
        if not value >= 0:
            raise ConfigError([f"reserve: must be >= 0, got {value!r}"])
        return cls("constant", float(value))

    @classmethod
    def from_table(cls, table: Mapping[str, float]) -> "ReservePolicy":
        bad = [f"reserve[{k}]: must be >= 0, got {v!r}" for k, v in table.items() if not v >= 0]
        if bad:
            raise ConfigError(bad)
        return cls("table", table=dict((k, float(v)) for k, v in table.items()))

    def as_array(self, pages: Sequence[str]) -> np.ndarray:
        return np.array([reserve_price(self, p) for p in pages], dtype=np.float64)

    def describe(self) -> Union[float, dict]:
        return self.value if self.kind == "constant" else dict(self.table)


@dataclass(frozen=True)
class AuctionOutcome:
    winner: Optional[int]
    payment: float
    bids: np.ndarray
    reserve: float

    @property
    def sold(self) -> bool:
        return self.winner is not None


def reserve_price(policy: ReservePolicy, page: str) -> float:
    if policy.kind == "constant":
        return policy.value
    try:
        return policy.table[page]
    except KeyError:
        raise ConfigError([f"reserve: no entry for page {page!r}"]) from None


def bid_profile(
    page: str,
    reserve: float,
    budgets: Sequence[float],
    valuations: Mapping[str, Sequence[float]],
) -> np.ndarray:
    """Truthful bids capped by remaining budget: ``min(valuation, budget)``.

    ``valuations`` maps page -> per-advertiser values.  The reserve is part of
    the bidding context but this reference policy does not use it.
    """
    try:
        vals = np.asarray(valuations[page], dtype=np.float64)
    except KeyError:
        raise ConfigError([f"valuations: no entry for page {page!r}"]) from None
    budgets = np.asarray(budgets, dtype=np.float64)
    if vals.shape != budgets.shape:
        raise ConfigError([f"valuations[{page}]: expected {budgets.size} advertisers, got {vals.size}"])
    return np.minimum(vals, budgets)


@njit(cache=True)
def clear(reserve, bids):
    """Return ``(winner, payment)``; winner is -1 when the opportunity is unsold.

    Highest bid wins, ties to the lowest index.  The winner pays the
    second-highest value of ``bids + [reserve]``, i.e. ``max(second bid,
    reserve)``.  All-zero bids never sell, even at reserve 0.
    """
    top = -1.0
    second = -np.inf
    winner = -1
    for j in range(bids.shape[0]):
        b = bids[j]
        if b > top:
            second = top
            top = b
            winner = j
        elif b > second:
            second = b
    if winner < 0 or top < reserve or top <= 0.0:
        return -1, 0.0
    return winner, max(second, reserve)


def auction_revenue(reserve: float, bids: Sequence[float]) -> float:
    """Publisher revenue ``smax(bids, reserve) * 1[max(bids) >= reserve]``."""
    bids = np.asarray(bids, dtype=np.float64)
    if bids.size == 0:
        raise ConfigError(["auction: at least one advertiser is required"])
    return clear(float(reserve), bids)[1]


def run_auction(
    page: str,
    policy: ReservePolicy,
    budgets: Sequence[float],
    valuations: Mapping[str, Sequence[float]],
) -> AuctionOutcome:
    reserve = reserve_price(policy, page)
    bids = bid_profile(page, reserve, budgets, valuations)
    if bids.size == 0:
        raise ConfigError(["auction: at least one advertiser is required"])
    winner, payment = clear(reserve, bids)
    return AuctionOutcome(None if winner < 0 else int(winner), payment, bids, reserve)


def update_budgets(
    budgets: Sequence[float],
    outcome: AuctionOutcome,
    replenishment: Sequence[float],
) -> np.ndarray:
    out = np.array(budgets, dtype=np.float64)
    repl = np.asarray(replenishment, dtype=np.float64)
    if np.any(repl < 0):
        raise ConfigError(["replenishment: entries must be >= 0"])
    if outcome.winner is not None:
        if outcome.payment > out[outcome.winner]:
            raise InvariantError(
                f"advertiser {outcome.winner} pays {outcome.payment} with only {out[outcome.winner]} left"
            )
        out[outcome.winner] -= outcome.payment
    out += repl
    return out

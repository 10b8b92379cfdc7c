"""Budget-splitting experiment.

Users are randomized into arm A (reserve ``v``) and arm B (reserve ``w``).
Every advertiser is cloned: the A copy starts with a fraction ``q`` of the
budget and receives a fraction ``q`` of every replenishment, the B copy gets
the rest.  One world runs with a shared clock and a shared concurrency cap;
each impression updates the chain of its user's arm.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np

from .chain import Replications, policy_reserve, record_world, replicate
from .config import ScenarioConfig
from .errors import ConfigError, EstimationError
from .market import ReservePolicy
from .rng import TAG_ASSIGN, stream_key, uniform

Reserve = Union[float, ReservePolicy]
ASSIGNMENTS = ("complete", "bernoulli")
ARM_A, ARM_B = 0, 1


@dataclass(frozen=True, eq=False)
class Assignment:
    groups: np.ndarray  # 0 = A, 1 = B
    q: float
    seed: int
    scheme: str

    @property
    def size_a(self) -> int:
        return int(np.count_nonzero(self.groups == ARM_A))


def assign_users(d: int, q: float, seed: int, rep: int = 0, scheme: str = "bernoulli") -> Assignment:
    """Randomize ``d`` users into A/B.

    ``bernoulli``: each user independently joins A with probability ``q``.
    ``complete``: exactly ``floor(q*d + 1/2)`` users, a uniformly random
    subset, join A; each user is still in A with probability ``q`` (up to
    the rounding of ``q*d``), but the arm sizes are fixed.
    """
    if d < 1:
        raise ConfigError([f"users: need at least one user, got {d}"])
    if not 0.0 <= q <= 1.0:
        raise ConfigError([f"q: must lie in [0, 1], got {q!r}"])
    if scheme not in ASSIGNMENTS:
        raise ConfigError([f"assignment: unknown scheme {scheme!r}, expected one of {ASSIGNMENTS}"])
    key = stream_key(seed, TAG_ASSIGN, rep, 0)
    draws = np.array([uniform(key, i) for i in range(d)])
    if scheme == "bernoulli":
        groups = np.where(draws < q, ARM_A, ARM_B)
    else:
        size_a = int(np.floor(q * d + 0.5))
        groups = np.full(d, ARM_B)
        groups[np.argsort(draws, kind="stable")[:size_a]] = ARM_A
    return Assignment(groups.astype(np.int64), float(q), int(seed), scheme)


def split_budgets(
    budgets: Sequence[float],
    q: float,
    replenishments: Optional[Sequence[float]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Proportional copies ``(q * x, (1 - q) * x)`` of budgets or of a replenishment."""
    if not 0.0 <= q <= 1.0:
        raise ConfigError([f"q: must lie in [0, 1], got {q!r}"])
    x = np.asarray(budgets if replenishments is None else replenishments, dtype=np.float64)
    if np.any(x < 0):
        raise ConfigError(["budgets: entries must be >= 0"])
    return q * x, (1.0 - q) * x


@dataclass(frozen=True)
class Measurements:
    """Impression counts and average revenues of both arms after ``k`` days.

    An average is ``None`` when its arm saw no impressions.  ``sold_a`` and
    ``sold_b`` count cleared auctions, so an arm with opportunities but no
    sales has average 0 and ``sold == 0``.
    """

    V: int
    W: int
    rbar_a: Optional[float]
    rbar_b: Optional[float]
    sold_a: int
    sold_b: int
    total_a: float
    total_b: float
    k: int
    q: float
    v: Union[float, dict]
    w: Union[float, dict]
    seed: int
    rep: int = 0

    @property
    def undefined(self) -> bool:
        return self.rbar_a is None or self.rbar_b is None

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_delta(meas: Measurements) -> float:
    """``(V/q) * rbar_A - (W/(1-q)) * rbar_B``."""
    if meas.V < 1 or meas.W < 1 or meas.undefined:
        raise EstimationError(f"estimate undefined: V={meas.V}, W={meas.W} (each arm needs an impression)")
    if not 0.0 < meas.q < 1.0:
        raise EstimationError(f"estimate undefined for q={meas.q}")
    return (meas.V / meas.q) * meas.rbar_a - (meas.W / (1.0 - meas.q)) * meas.rbar_b


def measurements_from_sums(
    V: int, W: int, total_a: float, total_b: float, sold_a: int, sold_b: int,
    k: int, q: float, v, w, seed: int, rep: int = 0,
) -> Measurements:
    return Measurements(
        V=int(V), W=int(W),
        rbar_a=float(total_a) / V if V else None,
        rbar_b=float(total_b) / W if W else None,
        sold_a=int(sold_a), sold_b=int(sold_b),
        total_a=float(total_a), total_b=float(total_b),
        k=int(k), q=float(q), v=v, w=w, seed=int(seed), rep=int(rep),
    )


def _reserves(config: ScenarioConfig, v: Reserve, w: Reserve) -> np.ndarray:
    return np.vstack([policy_reserve(config, v), policy_reserve(config, w)])


def _describe(r: Reserve):
    return r.describe() if isinstance(r, ReservePolicy) else float(r)


def _check(q: float, k: int) -> None:
    if not 0.0 <= q <= 1.0:
        raise ConfigError([f"q: must lie in [0, 1], got {q!r}"])
    if k < 0:
        raise ConfigError([f"days: must be >= 0, got {k}"])


@dataclass(frozen=True, eq=False)
class SplitRun:
    """One budget-split world with its per-arm payment sequences."""

    measurements: Measurements
    assignment: Assignment
    payments_a: np.ndarray
    payments_b: np.ndarray
    columns: dict
    split_deviation: float


def simulate_split(
    config: ScenarioConfig,
    v: Reserve,
    w: Reserve,
    q: float,
    k: int,
    seed: int,
    rep: int = 0,
    assignment: str = "complete",
) -> SplitRun:
    _check(q, k)
    asg = assign_users(config.num_users, q, seed, rep, assignment)
    cols, dev = record_world(
        config, _reserves(config, v, w), np.array([q, 1.0 - q]), asg.groups, k, seed, rep
    )
    arm = cols["arm"]
    pay = cols["payment"]
    pa, pb = pay[arm == ARM_A], pay[arm == ARM_B]
    counts, sums, sold = cols["day_counts"], cols["day_sums"], cols["day_sold"]
    meas = measurements_from_sums(
        counts[:, ARM_A].sum(), counts[:, ARM_B].sum(),
        math.fsum(sums[:, ARM_A]), math.fsum(sums[:, ARM_B]),
        sold[:, ARM_A].sum(), sold[:, ARM_B].sum(),
        k, q, _describe(v), _describe(w), seed, rep,
    )
    return SplitRun(meas, asg, pa, pb, cols, dev)


def run_experiment(
    config: ScenarioConfig,
    v: Reserve,
    w: Reserve,
    q: float,
    k: int,
    seed: int,
    rep: int = 0,
    assignment: str = "complete",
) -> Measurements:
    """Run one budget-split experiment for ``k`` days and return its measurements."""
    return simulate_split(config, v, w, q, k, seed, rep, assignment).measurements


@dataclass(frozen=True, eq=False)
class ExperimentBatch:
    reps: np.ndarray
    groups: np.ndarray
    runs: Replications
    q: float
    k: int

    def measurements(self, k: Optional[int] = None) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(V, W, S_V, S_W) per replication over the first ``k`` days."""
        k = self.k if k is None else k
        V, SV = self.runs.stopped(k, ARM_A)
        W, SW = self.runs.stopped(k, ARM_B)
        return V, W, SV, SW

    def deltas(self, k: Optional[int] = None) -> np.ndarray:
        """Estimates for every replication; NaN where an arm is empty."""
        V, W, SV, SW = self.measurements(k)
        with np.errstate(invalid="ignore", divide="ignore"):
            ra = np.where(V > 0, SV / np.maximum(V, 1), np.nan)
            rb = np.where(W > 0, SW / np.maximum(W, 1), np.nan)
            return (V / self.q) * ra - (W / (1.0 - self.q)) * rb


def experiment_batch(
    config: ScenarioConfig,
    v: Reserve,
    w: Reserve,
    q: float,
    k: int,
    seed: int,
    reps: Union[int, Sequence[int]],
    assignment: str = "complete",
    want_variance: bool = True,
) -> ExperimentBatch:
    """Many independent experiments; replication ``r`` equals ``run_experiment(..., seed, rep=r)``."""
    _check(q, k)
    reps = np.arange(reps) if isinstance(reps, (int, np.integer)) else np.asarray(reps, dtype=np.int64)
    groups = np.vstack(
        [assign_users(config.num_users, q, seed, int(r), assignment).groups for r in reps]
    ) if reps.size else np.zeros((0, config.num_users), dtype=np.int64)
    runs = replicate(
        config, _reserves(config, v, w), k, seed, reps, groups, (q, 1.0 - q), want_variance
    )
    return ExperimentBatch(reps, groups, runs, float(q), int(k))

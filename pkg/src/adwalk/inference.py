"""Statistics on top of the simulator.

Batch-means variance, the normal quantile, the half-width of the
budget-split confidence interval, the horizon planner, a Monte Carlo
oracle for the treatment effect and three empirical checks of the
asymptotics: the Wald-like factorization of stopped sums, normality of
standardized stopped sums and interval coverage.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _engine as E
from .chain import policy_reserve, replicate
from .config import ScenarioConfig
from .errors import ConfigError, EstimationError
from .experiment import ARM_A, ARM_B, Reserve, experiment_batch
from .rng import derive_seed


@dataclass(frozen=True)
class VarianceEstimate:
    sigma_sq: float
    n: int
    batch_size: int
    batch_count: int


def batch_means_variance(payments: Sequence[float]) -> VarianceEstimate:
    """Asymptotic variance of a dependent sequence by non-overlapping batch means.

    Batch size is ``floor(sqrt(n))``; trailing points that do not fill a
    batch are dropped.
    """
    x = np.ascontiguousarray(payments, dtype=np.float64)
    if x.ndim != 1 or x.size < 4:
        raise EstimationError(f"batch means needs at least 4 observations, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise EstimationError("batch means: payments must be finite")
    s2, size, count = E.batch_means(x)
    return VarianceEstimate(max(float(s2), 0.0), int(x.size), int(size), int(count))


# Wichura's AS241 (PPND16) rational approximations, relative error ~1e-16.
_A = (3.387132872796366608, 133.14166789178437745, 1971.5909503065514427, 13731.693765509461125,
      45921.953931549871457, 67265.770927008700853, 33430.575583588128105, 2509.0809287301226727)
_B = (1.0, 42.313330701600911252, 687.1870074920579083, 5394.1960214247511077,
      21213.794301586595867, 39307.89580009271061, 28729.085735721942674, 5226.495278852545925)
_C = (1.42343711074968357734, 4.6303378461565452959, 5.7694972214606914055, 3.64784832476320460504,
      1.27045825245236838258, 0.24178072517745061177, 0.0227238449892691845833, 7.7454501427834140764e-4)
_D = (1.0, 2.05319162663775882187, 1.6763848301838038494, 0.68976733498510000455,
      0.14810397642748007459, 0.0151986665636164571966, 5.475938084995344946e-4, 1.05075007164441684324e-9)
_E = (6.6579046435011037772, 5.4637849111641143699, 1.7848265399172913358, 0.29656057182850489123,
      0.026532189526576123093, 0.0012426609473880784386, 2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 0.59983220655588793769, 0.13692988092273580531, 0.0148753612908506148525,
      7.868691311456132591e-4, 1.8463183175100546818e-5, 1.4215117583164458887e-7, 2.04426310338993978564e-15)


def _horner(coef, x):
    acc = 0.0
    for c in reversed(coef):
        acc = acc * x + c
    return acc


def normal_ppf(p: float) -> float:
    """Inverse standard normal CDF for ``0 < p < 1``."""
    if not 0.0 < p < 1.0:
        raise ConfigError([f"p: must lie in (0, 1), got {p!r}"])
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _horner(_A, r) / _horner(_B, r)
    r = math.sqrt(-math.log(min(p, 1.0 - p)))
    if r <= 5.0:
        r -= 1.6
        val = _horner(_C, r) / _horner(_D, r)
    else:
        r -= 5.0
        val = _horner(_E, r) / _horner(_F, r)
    return -val if q < 0 else val


def standard_normal_quantile(alpha: float) -> float:
    """Two-sided critical value ``z`` with ``Psi(z) = 1 - alpha/2``."""
    if not (isinstance(alpha, (int, float)) and 0.0 < alpha <= 1.0):
        raise ConfigError([f"alpha: must lie in (0, 1], got {alpha!r}"])
    if alpha == 1.0:
        return 0.0
    return normal_ppf(1.0 - alpha / 2.0)


def _check_q(q: float) -> None:
    if not 0.0 < q < 1.0:
        raise ConfigError([f"q: must lie strictly between 0 and 1, got {q!r}"])


def epsilon_bound(
    V: float,
    W: float,
    sigma_a: float,
    sigma_b: float,
    q: float,
    alpha: float,
    eta_v: float,
    bias_v: float = 0.0,
    bias_w: float = 0.0,
    corrected: bool = False,
) -> float:
    """Half-width of the interval around the budget-split estimate.

    ``max(2 eta_v bias_v + (4/q) z sigma_a sqrt(V), 2 eta_v bias_w + c z sigma_b sqrt(W))``
    with ``c = 4/q``, or ``c = 4/(1-q)`` when ``corrected`` is set.
    """
    _check_q(q)
    if V < 1 or W < 1:
        raise ConfigError([f"counts: V and W must be >= 1, got V={V}, W={W}"])
    if min(sigma_a, sigma_b, bias_v, bias_w, eta_v) < 0:
        raise ConfigError(["epsilon: sigmas, biases and eta must be nonnegative"])
    z = standard_normal_quantile(alpha)
    cw = 4.0 / (1.0 - q) if corrected else 4.0 / q
    a = 2.0 * eta_v * bias_v + (4.0 / q) * z * sigma_a * math.sqrt(V)
    b = 2.0 * eta_v * bias_w + cw * z * sigma_b * math.sqrt(W)
    return max(a, b)


@dataclass(frozen=True)
class IntervalEstimate:
    delta_hat: float
    epsilon: float
    alpha: float
    lower: float
    upper: float
    nominal_coverage: float
    inputs: dict = field(default_factory=dict)

    def covers(self, value: float) -> bool:
        return abs(self.delta_hat - value) <= self.epsilon


def confidence_interval(delta_hat: float, epsilon: float, alpha: float, inputs: Optional[dict] = None) -> IntervalEstimate:
    if not epsilon >= 0:
        raise ConfigError([f"epsilon: must be >= 0, got {epsilon!r}"])
    if not 0.0 < alpha < 0.5:
        raise ConfigError([f"alpha: must lie in (0, 0.5), got {alpha!r}"])
    return IntervalEstimate(
        float(delta_hat), float(epsilon), float(alpha),
        float(delta_hat - epsilon), float(delta_hat + epsilon), 1.0 - 2.0 * alpha, dict(inputs or {}),
    )


@dataclass(frozen=True)
class RateEstimate:
    """Impressions per day: ``rate = mean(K_k)/k``, ``dispersion = std(K_k/k)``."""

    rate: float
    dispersion: float
    k: int
    samples: int


def estimate_eta(counts: Sequence[float], k: int) -> RateEstimate:
    if k < 1:
        raise ConfigError([f"k: must be >= 1, got {k}"])
    x = np.asarray(counts, dtype=np.float64).ravel()
    if x.size == 0:
        raise EstimationError("estimate_eta needs at least one count")
    disp = float(np.std(x / k, ddof=1)) if x.size > 1 else 0.0
    return RateEstimate(float(np.mean(x)) / k, disp, int(k), int(x.size))


def plan_horizon(
    epsilon_0: float,
    alpha: float,
    sigma_a: float,
    sigma_b: float,
    eta_v: float,
    eta_w: float,
) -> int:
    """Smallest day count whose per-day half-width ``8 z max(...) / sqrt(2k)`` is at most ``epsilon_0``."""
    if not epsilon_0 > 0:
        raise ConfigError([f"epsilon_0: must be > 0, got {epsilon_0!r}"])
    if min(sigma_a, sigma_b, eta_v, eta_w) < 0:
        raise ConfigError(["plan: sigmas and rates must be nonnegative"])
    z = standard_normal_quantile(alpha)
    s = max(sigma_a * math.sqrt(eta_v), sigma_b * math.sqrt(eta_w))
    return max(1, math.ceil((8.0 * z * s / epsilon_0) ** 2 / 2.0))


def planned_precision(k: int, alpha: float, sigma_a: float, sigma_b: float, eta_v: float, eta_w: float) -> float:
    """Per-day half-width achieved by a ``k``-day experiment; inverse of ``plan_horizon``."""
    z = standard_normal_quantile(alpha)
    s = max(sigma_a * math.sqrt(eta_v), sigma_b * math.sqrt(eta_w))
    return 8.0 * z * s / math.sqrt(2.0 * k)


@dataclass(frozen=True)
class OracleDelta:
    delta_mc: float
    mc_std_error: float
    reps: int
    k: int
    mean_v: float
    mean_w: float
    std_v: float
    std_w: float
    common_random_numbers: bool = False


def stopped_sums(config: ScenarioConfig, policy: Reserve, k: int, reps: int, seed: int, want_variance: bool = False):
    """Unsplit chains: (K_k, S_{K_k}, replications) for ``reps`` independent worlds."""
    runs = replicate(config, policy_reserve(config, policy), k, seed, np.arange(reps), want_variance=want_variance)
    K, S = runs.stopped(k, ARM_A)
    return K, S, runs


def oracle_delta(
    config: ScenarioConfig,
    v: Reserve,
    w: Reserve,
    k: int,
    reps: int,
    seed: int,
    crn: bool = False,
) -> OracleDelta:
    """Monte Carlo estimate of ``E S_{K^v_k}(v) - E S_{K^w_k}(w)`` from unsplit chains.

    The two arms use independent streams unless ``crn`` is set, in which
    case replication ``r`` of both arms shares its random numbers.
    """
    if reps < 2:
        raise ConfigError([f"reps: need at least 2, got {reps}"])
    if k < 1:
        raise ConfigError([f"days: must be >= 1, got {k}"])
    sv = derive_seed(seed, "oracle-v")
    sw = sv if crn else derive_seed(seed, "oracle-w")
    _, Sv, _ = stopped_sums(config, v, k, reps, sv)
    _, Sw, _ = stopped_sums(config, w, k, reps, sw)
    if crn:
        diff = Sv - Sw
        se = float(np.std(diff, ddof=1)) / math.sqrt(reps)
    else:
        se = math.sqrt(np.var(Sv, ddof=1) / reps + np.var(Sw, ddof=1) / reps)
    mv, mw = math.fsum(Sv) / reps, math.fsum(Sw) / reps
    return OracleDelta(
        mv - mw, se, int(reps), int(k), mv, mw,
        float(np.std(Sv, ddof=1)), float(np.std(Sw, ddof=1)), bool(crn),
    )


@dataclass(frozen=True)
class LongRun:
    """Long-run per-impression revenue mean and asymptotic variance of one treatment."""

    mean: float
    sigma_sq: float
    impressions: int
    days: int
    reps: int

    @property
    def std_error(self) -> float:
        return math.sqrt(self.sigma_sq / self.impressions) if self.impressions else 0.0


def long_run(
    config: ScenarioConfig,
    policy: Reserve,
    days: int,
    seed: int,
    reps: int = 32,
    q: Optional[float] = None,
    other: Optional[Reserve] = None,
) -> LongRun:
    """Long independent runs.  With ``q`` set, the A arm of a split world is measured instead."""
    if days < 1 or reps < 1:
        raise ConfigError(["long run: days and reps must be >= 1"])
    if q is None:
        runs = replicate(config, policy_reserve(config, policy), days, seed, np.arange(reps), want_variance=True)
        arm = ARM_A
    else:
        batch = experiment_batch(config, policy, policy if other is None else other, q, days, seed, reps)
        runs = batch.runs
        arm = ARM_A
    K = runs.counts[:, :, arm].sum()
    if K == 0:
        return LongRun(0.0, 0.0, 0, days, reps)
    S = math.fsum(runs.sums[:, :, arm].ravel())
    var = runs.variance[:, arm]
    var = var[np.isfinite(var)]
    return LongRun(S / K, float(np.mean(var)) if var.size else 0.0, int(K), int(days), int(reps))


@dataclass(frozen=True)
class WaldRow:
    k: int
    mean_stopped_sum: float
    mean_count: float
    long_run_mean: float
    discrepancy: float  # relative, or absolute when the long-run mean is 0
    std_error: float  # Monte Carlo standard error of the discrepancy, long-run mean error included
    relative: bool


def wald_table(
    config: ScenarioConfig,
    policy: Reserve,
    ks: Sequence[int],
    reps: int,
    seed: int,
    long_run_days: int = 500,
    long_run_reps: int = 32,
) -> list[WaldRow]:
    """``|E S_{K_k} - mu E K_k| / (mu E K_k)`` for every ``k`` from one set of replications.

    ``mu`` is the per-impression mean of independent long runs.
    """
    ks = sorted(int(k) for k in ks)
    if reps < 2 or not ks or ks[0] < 1:
        raise ConfigError(["wald: need reps >= 2 and every k >= 1"])
    lr = long_run(config, policy, long_run_days, derive_seed(seed, "long-run"), long_run_reps)
    mu = lr.mean
    runs = replicate(config, policy_reserve(config, policy), ks[-1], seed, np.arange(reps))
    rows = []
    for k in ks:
        K, S = runs.stopped(k, ARM_A)
        es, ek = float(np.mean(S)), float(np.mean(K))
        resid = S - mu * K
        gap = abs(float(np.mean(resid)))
        se = math.hypot(float(np.std(resid, ddof=1)) / math.sqrt(reps), lr.std_error * ek)
        rel = mu != 0 and ek > 0
        scale = mu * ek if rel else 1.0
        rows.append(WaldRow(k, es, ek, mu, gap / scale, se / scale, bool(rel)))
    return rows


def wald_check(config: ScenarioConfig, policy: Reserve, k: int, reps: int, seed: int = 0, **kw) -> float:
    return wald_table(config, policy, [k], reps, seed, **kw)[0].discrepancy


@dataclass(frozen=True, eq=False)
class NormalityReport:
    probs: tuple[float, ...]
    quantiles: tuple[float, ...]
    targets: tuple[float, ...]
    max_deviation: float
    degenerate: bool
    reps: int
    k: int
    long_run_mean: float
    long_run_sigma: float
    z: np.ndarray = field(repr=False)


NORMAL_PROBS = (0.025, 0.5, 0.975)


def standardize_stopped(K: np.ndarray, S: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    """``(S/K - mu) / (sigma / sqrt(K))``; rows with ``K = 0`` are dropped."""
    K = np.asarray(K, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    keep = K > 0
    K, S = K[keep], S[keep]
    if sigma <= 0:
        return np.zeros(K.size)
    return (S / K - mu) / (sigma / np.sqrt(K))


def anscombe_diagnostic(
    config: ScenarioConfig,
    policy: Reserve,
    k: int,
    reps: int,
    seed: int,
    long_run_days: int = 500,
    long_run_reps: int = 32,
) -> NormalityReport:
    """Empirical quantiles of standardized stopped sums against the standard normal."""
    if reps < 1000:
        raise ConfigError([f"reps: normality diagnostic needs at least 1000, got {reps}"])
    if k < 1:
        raise ConfigError([f"days: must be >= 1, got {k}"])
    lr = long_run(config, policy, long_run_days, derive_seed(seed, "long-run"), long_run_reps)
    K, S, _ = stopped_sums(config, policy, k, reps, seed)
    sigma = math.sqrt(lr.sigma_sq)
    z = standardize_stopped(K, S, lr.mean, sigma)
    targets = tuple(0.0 if p == 0.5 else normal_ppf(p) for p in NORMAL_PROBS)
    if z.size == 0:
        raise EstimationError("normality diagnostic: no replication produced an impression")
    qs = tuple(float(x) for x in np.quantile(z, NORMAL_PROBS))
    degenerate = sigma <= 0 or float(np.ptp(z)) == 0.0
    return NormalityReport(
        NORMAL_PROBS, qs, targets, max(abs(a - b) for a, b in zip(qs, targets)),
        bool(degenerate), int(reps), int(k), lr.mean, sigma, z,
    )


@dataclass(frozen=True, eq=False)
class CoverageReport:
    coverage: float
    std_error: float
    coverage_corrected: float
    std_error_corrected: float
    nominal: float
    reps: int
    undefined: int
    oracle: OracleDelta
    mean_delta_hat: float
    mean_epsilon: float
    mean_epsilon_corrected: float
    delta_hat: np.ndarray = field(repr=False)
    epsilon: np.ndarray = field(repr=False)
    epsilon_corrected: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "coverage": self.coverage, "std_error": self.std_error,
            "coverage_corrected": self.coverage_corrected, "std_error_corrected": self.std_error_corrected,
            "nominal": self.nominal, "reps": self.reps, "undefined": self.undefined,
            "delta_oracle": self.oracle.delta_mc, "oracle_std_error": self.oracle.mc_std_error,
            "oracle_reps": self.oracle.reps,
            "mean_delta_hat": self.mean_delta_hat, "mean_epsilon": self.mean_epsilon,
            "mean_epsilon_corrected": self.mean_epsilon_corrected,
        }


def _binomial(hits: np.ndarray) -> tuple[float, float]:
    p = float(np.mean(hits))
    return p, math.sqrt(p * (1.0 - p) / hits.size)


def split_epsilons(
    V: np.ndarray, W: np.ndarray, var: np.ndarray, q: float, k: int, alpha: float,
    bias: tuple[float, float] = (0.0, 0.0), corrected: bool = False,
) -> np.ndarray:
    """Half-width per replication from the arm counts and batch-means variances; NaN when undefined."""
    out = np.full(len(V), np.nan)
    for r in range(len(V)):
        if V[r] < 1 or W[r] < 1 or not np.all(np.isfinite(var[r])):
            continue
        out[r] = epsilon_bound(
            V[r], W[r], math.sqrt(var[r, ARM_A]), math.sqrt(var[r, ARM_B]), q, alpha,
            V[r] / (q * k), bias[0], bias[1], corrected,
        )
    return out


def coverage_experiment(
    config: ScenarioConfig,
    v: Reserve,
    w: Reserve,
    q: float,
    k: int,
    alpha: float,
    reps: int,
    seed: int,
    oracle_reps: int = 5000,
    assignment: str = "complete",
    force_epsilon: Optional[float] = None,
    bias: tuple[float, float] = (0.0, 0.0),
    oracle: Optional[OracleDelta] = None,
) -> CoverageReport:
    """Fraction of ``reps`` budget-split experiments whose interval contains the oracle effect.

    An experiment with an empty arm has no estimate and counts as a miss.
    """
    if reps < 100:
        raise ConfigError([f"reps: coverage needs at least 100, got {reps}"])
    _check_q(q)
    if oracle is None:
        oracle = oracle_delta(config, v, w, k, oracle_reps, derive_seed(seed, "oracle"))
    batch = experiment_batch(config, v, w, q, k, seed, reps, assignment)
    V, W, _, _ = batch.measurements()
    dh = batch.deltas()
    var = batch.runs.variance
    if force_epsilon is None:
        eps = split_epsilons(V, W, var, q, k, alpha, bias)
        eps_c = split_epsilons(V, W, var, q, k, alpha, bias, corrected=True)
    else:
        eps = eps_c = np.full(reps, float(force_epsilon))
    with np.errstate(invalid="ignore"):
        err = np.abs(dh - oracle.delta_mc)
        hit = np.where(np.isnan(err) | np.isnan(eps), False, err <= eps)
        hit_c = np.where(np.isnan(err) | np.isnan(eps_c), False, err <= eps_c)
    cov, se = _binomial(hit)
    cov_c, se_c = _binomial(hit_c)
    ok = ~np.isnan(dh)
    return CoverageReport(
        cov, se, cov_c, se_c, 1.0 - 2.0 * alpha, int(reps), int(np.count_nonzero(~ok)), oracle,
        float(np.mean(dh[ok])) if ok.any() else math.nan,
        float(np.nanmean(eps)) if np.isfinite(eps).any() else float(eps[0]),
        float(np.nanmean(eps_c)) if np.isfinite(eps_c).any() else float(eps_c[0]),
        dh, eps, eps_c,
    )


def estimate_bias_terms(
    config: ScenarioConfig,
    v: Reserve,
    w: Reserve,
    q: float,
    days: int,
    seed: int,
    reps: int = 2,
) -> tuple[float, float]:
    """Long-run gaps ``|mean(split arm) - mean(unsplit chain)|`` for the A and B arms."""
    _check_q(q)
    a = long_run(config, v, days, derive_seed(seed, "bias-split-a"), reps, q=q, other=w).mean
    b = long_run(config, w, days, derive_seed(seed, "bias-split-b"), reps, q=1.0 - q, other=v).mean
    fv = long_run(config, v, days, derive_seed(seed, "bias-full-v"), reps).mean
    fw = long_run(config, w, days, derive_seed(seed, "bias-full-w"), reps).mean
    return abs(a - fv), abs(b - fw)



@dataclass(frozen=True)
class PilotEstimates:
    """Planner inputs measured from short budget-split experiments."""

    sigma_a: float
    sigma_b: float
    eta_v: float
    eta_w: float
    k: int
    reps: int


def pilot_estimates(
    config: ScenarioConfig,
    v: Reserve,
    w: Reserve,
    q: float,
    k: int,
    seed: int,
    reps: int = 20,
) -> PilotEstimates:
    """Average batch-means sigmas and per-arm daily rates (``V/(q k)``, ``W/((1-q) k)``)."""
    _check_q(q)
    if k < 1 or reps < 1:
        raise ConfigError(["pilot: days and reps must be >= 1"])
    batch = experiment_batch(config, v, w, q, k, derive_seed(seed, "pilot"), reps)
    V, W, _, _ = batch.measurements()
    var = batch.runs.variance
    if not np.all(np.isfinite(var)):
        raise EstimationError("pilot: an arm produced fewer than 4 impressions; lengthen the pilot")
    return PilotEstimates(
        float(np.mean(np.sqrt(var[:, ARM_A]))), float(np.mean(np.sqrt(var[:, ARM_B]))),
        float(np.mean(V)) / (q * k), float(np.mean(W)) / ((1.0 - q) * k), int(k), int(reps),
    )

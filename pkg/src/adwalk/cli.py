"""Command line entry point.

Every subcommand writes its payload files plus ``manifest.json`` into
``--out-dir``.  Payloads depend only on the command, its arguments, the
scenario and the seed; the wall-clock time lives in the manifest's
``timestamp`` field.  Failures print a JSON record on stderr and exit
with a nonzero status.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import math
import sys
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .chain import CSV_HEADER, run_chain
from .config import ScenarioConfig, bundled_path, canonical_json, load_config
from .errors import AdwalkError, ConfigError
from .experiment import ASSIGNMENTS, simulate_split, estimate_delta
from .inference import (
    anscombe_diagnostic,
    batch_means_variance,
    confidence_interval,
    coverage_experiment,
    epsilon_bound,
    oracle_delta,
    pilot_estimates,
    plan_horizon,
    planned_precision,
    wald_table,
)
from .market import ReservePolicy, auction_revenue
from .permutation import window_permute

EXIT_USAGE = 2
EXIT_FAILURE = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# output helpers ---------------------------------------------------------------


def _clean(obj: Any) -> Any:
    """JSON-ready copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


class Outputs:
    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.paths: list[str] = []

    def json(self, name: str, payload: dict) -> None:
        self._write(name, json.dumps(_clean(payload), indent=2, sort_keys=True, allow_nan=False) + "\n")

    def csv(self, name: str, header, rows) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
        self.paths.append(name)

    def _write(self, name: str, text: str) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / name).write_text(text)
        self.paths.append(name)


def _arg_value(v: Any) -> Any:
    if isinstance(v, ReservePolicy):
        return v.describe()
    if isinstance(v, Path):
        return str(v)
    return v


def _manifest(args, config: Optional[ScenarioConfig], outputs: Outputs) -> dict:
    arguments = {k: _arg_value(v) for k, v in sorted(vars(args).items()) if k not in ("func", "out_dir")}
    return {
        "command": args.command,
        "config_hash": config.digest if config is not None else None,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "arguments": arguments,
        "outputs": list(outputs.paths),
        "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
    }


# argument parsing -------------------------------------------------------------


def _reserve(text: str) -> ReservePolicy:
    """A number, or a JSON object mapping page -> reserve."""
    try:
        return ReservePolicy.constant(float(text))
    except ValueError:
        pass
    try:
        table = json.loads(text)
    except json.JSONDecodeError:
        raise argparse.ArgumentTypeError(f"expected a number or a JSON page table, got {text!r}") from None
    if not isinstance(table, dict):
        raise argparse.ArgumentTypeError("reserve table must be a JSON object")
    try:
        return ReservePolicy.from_table(table)
    except (ConfigError, TypeError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2**64)")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="adwalk", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"adwalk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_, scenario=True):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--out-dir", type=Path, default=Path("."), help="output directory")
        if scenario:
            p.add_argument("--config", type=Path, default=None, help="scenario JSON (default: bundled desk scenario)")
            p.add_argument("--seed", type=_seed, default=0)
        p.set_defaults(func=func)
        return p

    def treatments(p):
        p.add_argument("--reserve-v", type=_reserve, default=ReservePolicy.constant(1.5), help="treatment reserve")
        p.add_argument("--reserve-w", type=_reserve, default=ReservePolicy.constant(0.5), help="baseline reserve")

    p = add("simulate", cmd_simulate, "run one full-population chain and dump every impression")
    p.add_argument("--days", type=_positive, default=10)
    p.add_argument("--reserve-v", type=_reserve, default=ReservePolicy.constant(1.0), help="reserve policy")
    p.add_argument("--rep", type=int, default=0)

    p = add("experiment", cmd_experiment, "one budget-split experiment with its confidence interval")
    treatments(p)
    p.add_argument("--days", type=_positive, default=100)
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--corrected-epsilon", action="store_true", help="use 4/(1-q) for the baseline arm")
    p.add_argument("--assignment", choices=ASSIGNMENTS, default="complete")
    p.add_argument("--rep", type=int, default=0)

    p = add("oracle", cmd_oracle, "Monte Carlo value of the treatment effect from unsplit chains")
    treatments(p)
    p.add_argument("--days", type=_positive, default=100)
    p.add_argument("--reps", type=_positive, default=1000)
    p.add_argument("--crn", action="store_true", help="share random numbers between the two arms")

    p = add("coverage", cmd_coverage, "empirical coverage of the interval over many experiments")
    treatments(p)
    p.add_argument("--days", type=_positive, default=100)
    p.add_argument("--reps", type=_positive, default=1000)
    p.add_argument("--oracle-reps", type=_positive, default=5000)
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--assignment", choices=ASSIGNMENTS, default="complete")
    p.add_argument("--corrected-epsilon", action="store_true", help="headline the 4/(1-q) variant")

    p = add("plan", cmd_plan, "days needed for a target per-day half-width")
    treatments(p)
    p.add_argument("--epsilon0", type=float, required=True, help="target half-width per day")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--sigma-a", type=float)
    p.add_argument("--sigma-b", type=float)
    p.add_argument("--eta-v", type=float)
    p.add_argument("--eta-w", type=float)
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--pilot-days", type=_positive, default=20, help="pilot length when inputs are omitted")
    p.add_argument("--reps", type=_positive, default=20, help="pilot replications")

    p = add("permute-demo", cmd_permute_demo, "window permutation of a user sequence", scenario=False)
    p.add_argument("--users", type=_int_list, default=[1, 2, 1, 3, 2, 1])
    p.add_argument("--window", type=_positive, default=6)

    p = add("revenue-curve", cmd_revenue_curve, "seller revenue as a function of the reserve", scenario=False)
    p.add_argument("--bids", type=_float_list, default=[1.0, 2.0])
    p.add_argument("--max-reserve", type=float, default=3.0)
    p.add_argument("--steps", type=_positive, default=300)

    p = add("diagnostics", cmd_diagnostics, "Wald factorization and normality of stopped sums")
    p.add_argument("--reserve-v", type=_reserve, default=ReservePolicy.constant(1.0), help="reserve policy")
    p.add_argument("--days", type=_int_list, default=[10, 50, 250], help="comma-separated horizons")
    p.add_argument("--reps", type=_positive, default=500, help="replications for the Wald table")
    p.add_argument("--normal-days", type=_positive, default=50)
    p.add_argument("--normal-reps", type=_positive, default=10000)
    return parser


def _config(args) -> ScenarioConfig:
    return load_config(args.config if args.config is not None else bundled_path())


# subcommands ------------------------------------------------------------------


def cmd_simulate(args, out: Outputs) -> ScenarioConfig:
    config = _config(args)
    traj = run_chain(config, args.reserve_v, args.days, args.seed, args.rep)
    out.csv("impressions.csv", CSV_HEADER, traj.csv_rows())
    counts = traj.per_day_counts
    out.json("summary.json", {
        "days": args.days,
        "impressions": len(traj),
        "impressions_per_day": counts,
        "total_revenue": traj.total,
        "sold": int(np.count_nonzero(traj.winner >= 0)),
        "initial_budgets": dict(zip(config.advertisers, traj.initial_budgets)),
        "final_budgets": dict(zip(config.advertisers, traj.final_budgets)),
        "reserve": args.reserve_v.describe(),
    })
    return config


def cmd_experiment(args, out: Outputs) -> ScenarioConfig:
    config = _config(args)
    run = simulate_split(config, args.reserve_v, args.reserve_w, args.q, args.days, args.seed, args.rep, args.assignment)
    meas = run.measurements
    delta = estimate_delta(meas)
    sa = math.sqrt(batch_means_variance(run.payments_a).sigma_sq)
    sb = math.sqrt(batch_means_variance(run.payments_b).sigma_sq)
    eta_v = meas.V / (args.q * args.days)
    inputs = {"V": meas.V, "W": meas.W, "sigma_a": sa, "sigma_b": sb, "q": args.q, "eta_v": eta_v,
              "bias_v": 0.0, "bias_w": 0.0}
    eps = epsilon_bound(meas.V, meas.W, sa, sb, args.q, args.alpha, eta_v)
    eps_c = epsilon_bound(meas.V, meas.W, sa, sb, args.q, args.alpha, eta_v, corrected=True)
    chosen = eps_c if args.corrected_epsilon else eps
    ci = confidence_interval(delta, chosen, args.alpha, inputs)
    out.json("experiment.json", {
        "measurements": meas.to_dict(),
        "delta_hat": delta,
        "interval": {"lower": ci.lower, "upper": ci.upper, "epsilon": ci.epsilon,
                     "alpha": ci.alpha, "nominal_coverage": ci.nominal_coverage},
        "epsilon": eps,
        "epsilon_corrected": eps_c,
        "corrected_epsilon": args.corrected_epsilon,
        "inputs": inputs,
        "assignment": args.assignment,
        "arm_a_users": run.assignment.size_a,
        "split_deviation": run.split_deviation,
    })
    return config


def _oracle_payload(o) -> dict:
    return {
        "delta_mc": o.delta_mc, "mc_std_error": o.mc_std_error, "reps": o.reps, "days": o.k,
        "mean_v": o.mean_v, "mean_w": o.mean_w, "std_v": o.std_v, "std_w": o.std_w,
        "common_random_numbers": o.common_random_numbers,
    }


def cmd_oracle(args, out: Outputs) -> ScenarioConfig:
    config = _config(args)
    o = oracle_delta(config, args.reserve_v, args.reserve_w, args.days, args.reps, args.seed, crn=args.crn)
    payload = _oracle_payload(o)
    payload.update(reserve_v=args.reserve_v.describe(), reserve_w=args.reserve_w.describe())
    out.json("oracle.json", payload)
    return config


def cmd_coverage(args, out: Outputs) -> ScenarioConfig:
    config = _config(args)
    rep = coverage_experiment(
        config, args.reserve_v, args.reserve_w, args.q, args.days, args.alpha, args.reps, args.seed,
        oracle_reps=args.oracle_reps, assignment=args.assignment,
    )
    payload = rep.to_dict()
    payload["headline"] = "corrected" if args.corrected_epsilon else "verbatim"
    payload["oracle"] = _oracle_payload(rep.oracle)
    out.json("coverage.json", payload)
    truth = rep.oracle.delta_mc
    out.csv(
        "coverage.csv",
        ("rep", "delta_hat", "epsilon", "epsilon_corrected", "covered", "covered_corrected"),
        (
            (r, float(d), float(e), float(ec), int(abs(d - truth) <= e), int(abs(d - truth) <= ec))
            for r, (d, e, ec) in enumerate(zip(rep.delta_hat, rep.epsilon, rep.epsilon_corrected))
        ),
    )
    return config


def cmd_plan(args, out: Outputs) -> Optional[ScenarioConfig]:
    given = [args.sigma_a, args.sigma_b, args.eta_v, args.eta_w]
    config = None
    if all(x is not None for x in given):
        sa, sb, ev, ew = given
        source = "arguments"
    elif any(x is not None for x in given):
        raise ConfigError(["plan: give all of --sigma-a --sigma-b --eta-v --eta-w, or none to run a pilot"])
    else:
        config = _config(args)
        pilot = pilot_estimates(config, args.reserve_v, args.reserve_w, args.q, args.pilot_days, args.seed, args.reps)
        sa, sb, ev, ew = pilot.sigma_a, pilot.sigma_b, pilot.eta_v, pilot.eta_w
        source = "pilot"
    k = plan_horizon(args.epsilon0, args.alpha, sa, sb, ev, ew)
    out.json("plan.json", {
        "days": k,
        "epsilon0": args.epsilon0,
        "achieved_epsilon_per_day": planned_precision(k, args.alpha, sa, sb, ev, ew),
        "alpha": args.alpha,
        "sigma_a": sa, "sigma_b": sb, "eta_v": ev, "eta_w": ew,
        "source": source,
    })
    return config


def cmd_permute_demo(args, out: Outputs) -> None:
    users = args.users
    perm = window_permute(users, args.window)
    rows = []
    for pos, origin in enumerate(perm.inverse):
        rows.append((pos + 1, users[origin], int(origin) + 1, f"X^{users[origin]}_{origin + 1}"))
    out.csv("permutation.csv", ("position", "user", "original_position", "page"), rows)
    return None


def cmd_revenue_curve(args, out: Outputs) -> None:
    bids = np.asarray(args.bids, dtype=np.float64)
    if bids.size == 0 or np.any(bids < 0):
        raise ConfigError(["bids: need at least one nonnegative bid"])
    if not args.max_reserve >= 0:
        raise ConfigError([f"max-reserve: must be >= 0, got {args.max_reserve!r}"])
    rows = []
    for i in range(args.steps + 1):
        p = i * args.max_reserve / args.steps
        rows.append((p, auction_revenue(p, bids)))
    out.csv("revenue_curve.csv", ("reserve", "revenue"), rows)
    return None


def cmd_diagnostics(args, out: Outputs) -> ScenarioConfig:
    config = _config(args)
    if not args.days or min(args.days) < 1:
        raise ConfigError(["days: need at least one horizon, all >= 1"])
    rows = wald_table(config, args.reserve_v, args.days, args.reps, args.seed)
    out.csv(
        "wald.csv",
        ("k", "mean_stopped_sum", "mean_count", "long_run_mean", "discrepancy", "std_error", "relative"),
        ((r.k, r.mean_stopped_sum, r.mean_count, r.long_run_mean, r.discrepancy, r.std_error, int(r.relative))
         for r in rows),
    )
    rep = anscombe_diagnostic(config, args.reserve_v, args.normal_days, args.normal_reps, args.seed)
    out.csv("normality.csv", ("prob", "quantile", "target"), zip(rep.probs, rep.quantiles, rep.targets))
    out.json("diagnostics.json", {
        "wald": [vars(r) for r in rows],
        "normality": {
            "probs": rep.probs, "quantiles": rep.quantiles, "targets": rep.targets,
            "max_deviation": rep.max_deviation, "degenerate": rep.degenerate,
            "reps": rep.reps, "days": rep.k,
            "long_run_mean": rep.long_run_mean, "long_run_sigma": rep.long_run_sigma,
        },
        "reserve": args.reserve_v.describe(),
    })
    return config


# entry point ------------------------------------------------------------------


def _fail(record: dict, code: int) -> int:
    sys.stderr.write(canonical_json(record) + "\n")
    return code


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail({"error": "usage_error", "message": str(exc)}, EXIT_USAGE)
    out = Outputs(args.out_dir)
    try:
        config = args.func(args, out)
    except AdwalkError as exc:
        return _fail(exc.record(), EXIT_FAILURE)
    except OSError as exc:
        return _fail({"error": "io_error", "message": str(exc)}, EXIT_FAILURE)
    manifest = _manifest(args, config, out)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "manifest.json").write_text(json.dumps(_clean(manifest), indent=2, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())

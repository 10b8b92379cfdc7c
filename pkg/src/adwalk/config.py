"""Scenario configuration: JSON schema, validation and array views.

A scenario file looks like::

    {
      "name": "desk",
      "num_users": 50,
      "pages": ["home", "search", ...],
      "start": {"home": 0.5, "search": 0.5},
      "advertisers": [
        {"name": "a0", "valuations": {"home": 1.2, ...},
         "initial_budget": 1e6, "replenish_prob": 0.05, "replenish_amount": 1.0},
        ...
      ],
      "transitions": {
        "home": {"unsold": {"search": 0.5, "end": 0.5},
                 "sold":   {"search": 0.3, "end": 0.7},
                 "winner": {"a2": {"checkout": 0.4, "end": 0.6}}},
        ...
      },
      "session_cap": 20, "concurrency_cap": 15, "bid_cap": 3.0,
      "arrival_prob": 0.02, "ticks_per_day": 100
    }

Transition rows are distributions over pages plus ``"end"``.  A page's
``"sold"`` row applies to every winner unless ``"winner"`` overrides it.
"""

from __future__ import annotations

import hashlib
import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError

END = "end"
ROW_TOL = 1e-12

_INT_FIELDS = ("num_users", "session_cap", "concurrency_cap", "ticks_per_day")


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    name: str
    num_users: int
    pages: tuple[str, ...]
    advertisers: tuple[str, ...]
    start: np.ndarray  # (P,)
    kernel: np.ndarray  # (P, m + 1, P + 1): [page, 0=unsold | 1+winner, next page | end]
    valuations: np.ndarray  # (m, P)
    initial_budgets: np.ndarray  # (m,)
    replenish_prob: np.ndarray  # (m,)
    replenish_amount: np.ndarray  # (m,)
    session_cap: int
    concurrency_cap: int
    bid_cap: float
    arrival_prob: float
    ticks_per_day: int
    raw: dict = field(repr=False)

    @property
    def num_advertisers(self) -> int:
        return len(self.advertisers)

    @property
    def num_pages(self) -> int:
        return len(self.pages)

    def page_index(self, page: str) -> int:
        try:
            return self.pages.index(page)
        except ValueError:
            raise ConfigError([f"pages: unknown page {page!r}"]) from None

    @cached_property
    def valuation_table(self) -> dict[str, np.ndarray]:
        return {p: self.valuations[:, i].copy() for i, p in enumerate(self.pages)}

    @cached_property
    def start_cdf(self) -> np.ndarray:
        return _cdf(self.start[None, :])[0]

    @cached_property
    def kernel_cdf(self) -> np.ndarray:
        P, slots, _ = self.kernel.shape
        return _cdf(self.kernel.reshape(P * slots, P + 1)).reshape(self.kernel.shape)

    @cached_property
    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.raw).encode()).hexdigest()

    def with_budgets(self, budgets) -> "ScenarioConfig":
        """Copy with every advertiser's initial budget replaced."""
        raw = json.loads(json.dumps(self.raw))
        budgets = np.broadcast_to(np.asarray(budgets, dtype=float), (self.num_advertisers,))
        for adv, b in zip(raw["advertisers"], budgets):
            adv["initial_budget"] = float(b)
        return parse_config(raw)

    def with_changes(self, **changes: Any) -> "ScenarioConfig":
        raw = json.loads(json.dumps(self.raw))
        raw.update(changes)
        return parse_config(raw)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.raw))


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _cdf(rows: np.ndarray) -> np.ndarray:
    # Entries from the last positive mass onward are pushed to 2.0 so that any
    # u in [0, 1) resolves even when the row sums to 1 - 1e-12.
    out = np.cumsum(rows, axis=1)
    for r in range(rows.shape[0]):
        pos = np.flatnonzero(rows[r] > 0)
        if pos.size:
            out[r, pos[-1]:] = 2.0
    return out


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read ({exc.strerror})"]) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from None
    return parse_config(raw)


def desk_scenario() -> ScenarioConfig:
    """The bundled desk-scale scenario (50 users, 3 advertisers, 5 pages)."""
    text = resources.files("adwalk.data").joinpath("desk.json").read_text()
    return parse_config(json.loads(text))


def bundled_path(name: str = "desk.json") -> Path:
    return Path(str(resources.files("adwalk.data").joinpath(name)))


def parse_config(raw: Mapping) -> ScenarioConfig:
    """Validate a decoded scenario; every problem is reported in one ConfigError."""
    errs: list[str] = []
    if not isinstance(raw, Mapping):
        raise ConfigError(["$: expected a JSON object"])

    def need(key: str):
        if key not in raw:
            errs.append(f"$.{key}: missing")
            return None
        return raw[key]

    ints = {}
    for key in _INT_FIELDS:
        v = need(key)
        if v is None:
            continue
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            errs.append(f"$.{key}: must be a positive integer, got {v!r}")
        else:
            ints[key] = v

    bid_cap = need("bid_cap")
    if bid_cap is not None and not (_is_num(bid_cap) and bid_cap > 0):
        errs.append(f"$.bid_cap: must be a positive number, got {bid_cap!r}")
        bid_cap = None
    arrival = need("arrival_prob")
    if arrival is not None and not (_is_num(arrival) and 0 <= arrival <= 1):
        errs.append(f"$.arrival_prob: must be a probability, got {arrival!r}")
        arrival = None

    pages = need("pages")
    if pages is not None:
        if (
            not isinstance(pages, list)
            or not pages
            or not all(isinstance(p, str) and p for p in pages)
        ):
            errs.append("$.pages: must be a non-empty list of page names")
            pages = None
        elif len(set(pages)) != len(pages) or END in pages:
            errs.append(f"$.pages: names must be unique and may not be {END!r}")
            pages = None
    if pages is None:
        raise ConfigError(errs)
    P = len(pages)
    pidx = {p: i for i, p in enumerate(pages)}

    advs = need("advertisers")
    names: list[str] = []
    if not isinstance(advs, list) or not advs:
        errs.append("$.advertisers: must be a non-empty list (at least one advertiser)")
        advs = []
    m = len(advs)
    val = np.zeros((m, P))
    budget = np.zeros(m)
    rprob = np.zeros(m)
    ramt = np.zeros(m)
    for j, adv in enumerate(advs):
        at = f"$.advertisers[{j}]"
        if not isinstance(adv, Mapping):
            errs.append(f"{at}: expected an object")
            continue
        names.append(str(adv.get("name", f"a{j}")))
        table = adv.get("valuations")
        if not isinstance(table, Mapping):
            errs.append(f"{at}.valuations: missing")
        else:
            for p in pages:
                if p not in table:
                    errs.append(f"{at}.valuations: missing entry for page {p!r}")
                    continue
                v = table[p]
                if not _is_num(v) or v < 0:
                    errs.append(f"{at}.valuations.{p}: must be >= 0, got {v!r}")
                elif bid_cap is not None and v > bid_cap:
                    errs.append(f"{at}.valuations.{p}: {v} exceeds bid_cap {bid_cap}")
                else:
                    val[j, pidx[p]] = v
            for p in table:
                if p not in pidx:
                    errs.append(f"{at}.valuations: unknown page {p!r}")
        for key, arr, lo, hi in (
            ("initial_budget", budget, 0.0, np.inf),
            ("replenish_prob", rprob, 0.0, 1.0),
            ("replenish_amount", ramt, 0.0, np.inf),
        ):
            v = adv.get(key, 0.0)
            if not _is_num(v) or not (lo <= v <= hi) or not np.isfinite(v):
                errs.append(f"{at}.{key}: out of range, got {v!r}")
            else:
                arr[j] = v
    if len(set(names)) != len(names):
        errs.append("$.advertisers: names must be unique")
    aidx = {a: j for j, a in enumerate(names)}

    start = np.zeros(P)
    row = need("start")
    if row is not None:
        _fill_row(row, "$.start", pidx, start, errs, allow_end=False)

    kernel = np.zeros((P, m + 1, P + 1))
    trans = need("transitions")
    if trans is not None and not isinstance(trans, Mapping):
        errs.append("$.transitions: expected an object")
        trans = None
    if trans is not None:
        for p in trans:
            if p not in pidx:
                errs.append(f"$.transitions: unknown page {p!r}")
        for p in pages:
            at = f"$.transitions.{p}"
            entry = trans.get(p)
            if not isinstance(entry, Mapping):
                errs.append(f"{at}: missing")
                continue
            i = pidx[p]
            if "unsold" not in entry:
                errs.append(f"{at}.unsold: missing")
            else:
                _fill_row(entry["unsold"], f"{at}.unsold", pidx, kernel[i, 0], errs)
            overrides = entry.get("winner", {})
            if not isinstance(overrides, Mapping):
                errs.append(f"{at}.winner: expected an object")
                overrides = {}
            for a in overrides:
                if a not in aidx:
                    errs.append(f"{at}.winner: unknown advertiser {a!r}")
            for a, j in aidx.items():
                if a in overrides:
                    _fill_row(overrides[a], f"{at}.winner.{a}", pidx, kernel[i, 1 + j], errs)
                elif "sold" in entry:
                    _fill_row(entry["sold"], f"{at}.sold", pidx, kernel[i, 1 + j], errs)
                else:
                    errs.append(f"{at}.sold: missing (no row for winner {a!r})")

    if errs:
        raise ConfigError(_dedupe(errs))
    return ScenarioConfig(
        name=str(raw.get("name", "scenario")),
        num_users=ints["num_users"],
        pages=tuple(pages),
        advertisers=tuple(names),
        start=start,
        kernel=kernel,
        valuations=val,
        initial_budgets=budget,
        replenish_prob=rprob,
        replenish_amount=ramt,
        session_cap=ints["session_cap"],
        concurrency_cap=ints["concurrency_cap"],
        bid_cap=float(bid_cap),
        arrival_prob=float(arrival),
        ticks_per_day=ints["ticks_per_day"],
        raw=json.loads(json.dumps(raw)),
    )


def _fill_row(row, at, pidx, out, errs, allow_end=True):
    if not isinstance(row, Mapping) or not row:
        errs.append(f"{at}: expected a non-empty object of probabilities")
        return
    ok = True
    for key, v in row.items():
        if key == END and allow_end:
            slot = len(pidx)
        elif key in pidx:
            slot = pidx[key]
        else:
            errs.append(f"{at}: unknown outcome {key!r}")
            ok = False
            continue
        if not _is_num(v) or v < 0 or not np.isfinite(v):
            errs.append(f"{at}.{key}: probability must be >= 0, got {v!r}")
            ok = False
            continue
        out[slot] = v
    total = float(np.sum(out))
    if ok and abs(total - 1.0) > ROW_TOL:
        errs.append(f"{at}: probabilities sum to {total!r}, expected 1")


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _dedupe(items):
    seen = set()
    return [x for x in items if not (x in seen or seen.add(x))]

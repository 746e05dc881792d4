"""Experiment grid: growth pathways, scenario construction, and the sweep."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, GridPEError, NoConvergence
from .market import Equilibrium, Scenario, solve_equilibrium
from .model import Model

log = logging.getLogger(__name__)

YEAR_GRID = tuple(range(2020, 2051, 5))
SHOCK_GRID = tuple(-k / 100 for k in range(51))
BENCHMARK = (2020, 0.0)
VARIABLES = ("population", "income", "tfp", "biofuel")
_SCEN_FIELD = {"population": "pop_multiplier", "income": "income_multiplier",
               "tfp": "tfp_multiplier", "biofuel": "biofuel_multiplier"}


@dataclass(frozen=True)
class Period:
    region_id: str
    start: int
    end: int
    rates: dict     # variable -> annual growth rate over (start, end]


@dataclass(frozen=True)
class PathwaySpec:
    """Annual growth rates per region and period, from ``base_year`` on."""
    periods: tuple

    def __post_init__(self):
        for p in self.periods:
            if p.end <= p.start:
                raise DomainError(f"empty period {p.start}-{p.end} for {p.region_id}")
            for var, rate in p.rates.items():
                if var not in VARIABLES:
                    raise DomainError(f"unknown pathway variable {var!r}")
                if not 1.0 + rate > 0:
                    raise DomainError(f"growth rate {rate} gives a nonpositive multiplier")
        if not self.periods:
            raise DomainError("pathway has no periods")
        base = min(p.start for p in self.periods)
        for rid in {p.region_id for p in self.periods}:
            spans = sorted((p.start, p.end) for p in self.periods if p.region_id == rid)
            if spans[0][0] != base or spans[-1][1] < YEAR_GRID[-1] or base > YEAR_GRID[0]:
                raise DomainError(f"periods for {rid} must run from {base} through {YEAR_GRID[-1]}")
            if any(a[1] != b[0] for a, b in zip(spans, spans[1:])):
                raise DomainError(f"periods for {rid} overlap or leave a gap")

    @property
    def base_year(self) -> int:
        return min(p.start for p in self.periods)

    @property
    def region_ids(self):
        return sorted({p.region_id for p in self.periods})

    @property
    def period_ends(self):
        return sorted({p.end for p in self.periods})

    def multiplier(self, region_id, variable, year) -> float:
        m = 1.0
        for p in self.periods:
            if p.region_id == region_id and p.end <= year:
                m *= (1.0 + p.rates.get(variable, 0.0)) ** (p.end - p.start)
        return m

    @classmethod
    def constant(cls, region_ids, rates: dict, base_year=2020, end_year=2050, step=5):
        periods = [Period(r, y, y + step, dict(rates.get(r, rates.get("*", {}))))
                   for r in region_ids for y in range(base_year, end_year, step)]
        return cls(tuple(periods))


def valid_years(pathway: PathwaySpec):
    ends = set(pathway.period_ends)
    return sorted({pathway.base_year} | {y for y in YEAR_GRID if y in ends or y == pathway.base_year})


def on_shock_grid(shock: float) -> bool:
    k = -shock * 100
    return 0 <= round(k) <= 50 and abs(k - round(k)) < 1e-9


def snap_shock(shock: float) -> float:
    if not on_shock_grid(shock):
        raise DomainError(f"shock {shock} is not on the 1% grid from 0 to -0.50")
    return -round(-shock * 100) / 100 if shock != 0 else 0.0


def build_scenario(pathway: PathwaySpec, year: int, shock: float) -> Scenario:
    if year not in valid_years(pathway):
        raise DomainError(f"year {year} not on the scenario grid {valid_years(pathway)}")
    shock = snap_shock(shock)
    mults = {f: {} for f in _SCEN_FIELD.values()}
    for rid in pathway.region_ids:
        for var, fname in _SCEN_FIELD.items():
            mults[fname][rid] = pathway.multiplier(rid, var, year)
    return Scenario(year, us_feedstock_shock=shock, **mults)


# -- sweep ------------------------------------------------------------------------

@dataclass
class SweepResult:
    """Solved scenarios keyed by (year, shock), plus basin aggregates per key."""
    years: tuple
    shocks: tuple
    aggregates: dict = field(default_factory=dict)   # key -> {basin: (land, production, leaching)}
    prices: dict = field(default_factory=dict)       # key -> (world, nonland, fert)
    iterations: dict = field(default_factory=dict)
    digests: dict = field(default_factory=dict)      # key -> sha256 of per-cell physical arrays
    diagnostics: dict = field(default_factory=dict)  # key -> (max residual, max zero-profit gap)
    equilibria: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    benchmark: tuple = BENCHMARK

    def keys(self):
        return [(y, s) for y in self.years for s in self.shocks]

    def __len__(self):
        return len(self.aggregates) + len(self.failures)

    def __getitem__(self, key) -> Equilibrium:
        return self.equilibria[key]

    def value(self, basin, metric, year, shock) -> float:
        from .report import METRICS
        from .errors import MissingKey
        key = (year, snap_shock(shock))
        if key not in self.aggregates:
            why = self.failures.get(key, "not in sweep")
            raise MissingKey(f"no result for {key}: {why}")
        return self.aggregates[key][basin][METRICS.index(metric)]


def _solve_chain(model, pathway, year, shocks, opts, masks, keep, backend):
    """Solve one year's shocks in increasing magnitude, warm-starting each."""
    from .report import aggregate_all
    results = {}
    start = None
    for shock in sorted(shocks, key=abs):
        scen = build_scenario(pathway, year, shock)
        try:
            try:
                eq = solve_equilibrium(model, scen, start=start, backend=backend, **opts)
            except GridPEError:
                if start is None:
                    raise
                eq = solve_equilibrium(model, scen, start=None, backend=backend, **opts)
        except GridPEError as exc:
            log.warning("solve failed for (%s, %s): %s", year, shock, exc)
            results[(year, shock)] = exc
            start = None
            continue
        start = eq.log_prices
        results[(year, shock)] = (aggregate_all(eq, model, masks), eq if keep else None)
    return results


def run_sweep(model: Model, pathway: PathwaySpec, years=YEAR_GRID, shocks=SHOCK_GRID,
              workers: int = 1, opts: dict | None = None, masks: dict | None = None,
              keep_equilibria: bool = True, backend=None) -> SweepResult:
    """Solve every (year, shock) pair.

    Work is split by year; within a year shocks are solved in increasing
    magnitude, each warm-started from the previous solution, so the result is
    independent of ``workers``.
    """
    if workers < 1:
        raise DomainError("workers must be >= 1")
    years = tuple(sorted(set(years)))
    shocks = tuple(sorted({snap_shock(s) for s in shocks}, key=abs))
    masks = model.masks if masks is None else masks
    opts = dict(opts or {})
    args = [(model, pathway, y, shocks, opts, masks, keep_equilibria, backend) for y in years]
    if workers == 1:
        chunks = [_solve_chain(*a) for a in args]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda a: _solve_chain(*a), args))

    result = SweepResult(years, shocks)
    for chunk in chunks:
        for key in sorted(chunk):
            val = chunk[key]
            if isinstance(val, Exception):
                result.failures[key] = f"{type(val).__name__}: {val}"
                continue
            agg, eq = val
            result.aggregates[key] = agg["basins"]
            result.prices[key] = agg["prices"]
            result.iterations[key] = agg["iterations"]
            result.digests[key] = agg["digest"]
            result.diagnostics[key] = agg["diagnostics"]
            if eq is not None:
                result.equilibria[key] = eq
    if not result.aggregates:
        raise NoConvergence(f"all {len(result.failures)} sweep solves failed")
    return result

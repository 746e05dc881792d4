"""World commodity market and US factor markets.

The solved price vector is ``x = (log world price, log nonland wage,
log fertilizer price)``, each relative to its benchmark value, so the
benchmark world price is the unit of account.  Land rents and water prices
clear inside each cell (see :mod:`gridpe.production`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CellNoConvergence, DomainError, MisuseError, NoConvergence, NonFiniteResidual
from .model import Model, Region
from .production import CellOutcomes, evaluate_cells, raise_on_failure

FD_STEP = 1e-6
MAX_HALVINGS = 20


@dataclass(frozen=True)
class Scenario:
    """Cumulative exogenous multipliers relative to the calibrated benchmark."""
    year_label: int
    pop_multiplier: dict
    income_multiplier: dict
    tfp_multiplier: dict
    biofuel_multiplier: dict
    us_feedstock_shock: float = 0.0

    def __post_init__(self):
        for name in ("pop_multiplier", "income_multiplier", "tfp_multiplier", "biofuel_multiplier"):
            if any(not m > 0 for m in getattr(self, name).values()):
                raise DomainError(f"{name} entries must be positive")
        if not -0.5 - 1e-12 <= self.us_feedstock_shock <= 0.0:
            raise DomainError(f"feedstock shock {self.us_feedstock_shock} outside [-0.5, 0]")

    @classmethod
    def baseline(cls, model_or_ids, year_label=0, shock=0.0):
        ids = [r.region_id for r in model_or_ids.regions] if hasattr(model_or_ids, "regions") else list(model_or_ids)
        ones = {r: 1.0 for r in ids}
        return cls(year_label, dict(ones), dict(ones), dict(ones), dict(ones), shock)

    def get(self, name, region_id):
        return getattr(self, name).get(region_id, 1.0)


def _food(region: Region, rel_price, scen: Scenario):
    rid = region.region_id
    return (region.base_food_demand * scen.get("pop_multiplier", rid)
            * scen.get("income_multiplier", rid) ** region.income_elasticity
            * rel_price ** (-region.demand_price_elasticity))


def _biofuel(region: Region, scen: Scenario):
    b = region.base_biofuel_demand * scen.get("biofuel_multiplier", region.region_id)
    return b * (1.0 + scen.us_feedstock_shock) if region.is_gridded else b


def regional_demand(region: Region, price: float, scen: Scenario, base_world_price: float = 1.0) -> float:
    """Food plus biofuel-feedstock demand at the nominal regional ``price``."""
    if not price > 0:
        raise DomainError("price must be positive")
    rel = price / (region.price_margin * base_world_price)
    return _food(region, rel, scen) + _biofuel(region, scen)


def row_supply(region: Region, price: float, scen: Scenario, base_world_price: float = 1.0) -> float:
    if region.is_gridded:
        raise MisuseError("gridded-region supply comes from the cells, not a supply curve")
    if not price > 0:
        raise DomainError("price must be positive")
    rel = price / (region.price_margin * base_world_price)
    return (region.base_supply * scen.get("tfp_multiplier", region.region_id)
            * rel ** region.supply_price_elasticity)


class MarketSystem:
    """Excess-demand system of one model under one scenario."""

    def __init__(self, model: Model, scen: Scenario, backend=None):
        self.model = model
        self.scen = scen
        self.backend = backend
        self.ta = model.arrays
        regs = model.regions
        ids = [r.region_id for r in regs]
        self.region_ids = ids
        gridded = np.array([r.is_gridded for r in regs])
        self.gridded = gridded
        pop = np.array([scen.get("pop_multiplier", i) for i in ids])
        inc = np.array([scen.get("income_multiplier", i) for i in ids])
        tfp = np.array([scen.get("tfp_multiplier", i) for i in ids])
        bio = np.array([scen.get("biofuel_multiplier", i) for i in ids])
        self.food0 = np.array([r.base_food_demand for r in regs]) * pop * inc ** np.array(
            [r.income_elasticity for r in regs])
        self.dem_el = np.array([r.demand_price_elasticity for r in regs])
        self.biofuel = np.array([r.base_biofuel_demand for r in regs]) * bio * np.where(
            gridded, 1.0 + scen.us_feedstock_shock, 1.0)
        self.supply0 = np.where(gridded, 0.0, np.array([r.base_supply for r in regs]) * tfp)
        self.sup_el = np.array([r.supply_price_elasticity for r in regs])
        us = model.gridded
        self.us_tfp = scen.get("tfp_multiplier", us.region_id)
        self.nonland_el = us.nonland_supply_elasticity
        self.fert_el = us.fert_supply_elasticity
        self.nonland0 = float(np.sum(self.ta.x0))
        self.fert0 = float(np.sum(self.ta.f0))

    def cells(self, x) -> CellOutcomes:
        return evaluate_cells(self.ta, x[0], x[1], x[2], tfp=self.us_tfp, backend=self.backend)

    def evaluate(self, x):
        """Residual vector and the cell outcomes behind it."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise NonFiniteResidual("non-finite price vector", prices=x)
        out = self.cells(x)
        raise_on_failure(out)
        rel = math.exp(x[0])
        demand = self.food0 * rel ** (-self.dem_el) + self.biofuel
        row = self.supply0 * rel ** self.sup_el
        grid = float(np.sum(out.output))
        world_demand = float(np.sum(demand))
        world_supply = grid + float(np.sum(row))
        nonland_d = float(np.sum(out.nonland))
        fert_d = float(np.sum(out.fert))
        nonland_s = self.nonland0 * math.exp(self.nonland_el * x[1])
        fert_s = self.fert0 * math.exp(self.fert_el * x[2])
        r = np.array([
            (world_demand - world_supply) / world_demand,
            (nonland_d - nonland_s) / max(nonland_d, 1e-300),
            (fert_d - fert_s) / max(fert_d, 1e-300),
        ])
        if not np.all(np.isfinite(r)):
            raise NonFiniteResidual("non-finite residual", prices=x)
        supplies = np.where(self.gridded, grid, row)
        return r, out, demand, supplies


def excess_demand(prices, model: Model, scen: Scenario, backend=None) -> np.ndarray:
    """Relative excess demands of the world, US nonland, and US fertilizer markets.

    ``prices`` are logs of the three solved prices relative to the benchmark.
    """
    return MarketSystem(model, scen, backend).evaluate(prices)[0]


@dataclass(frozen=True, eq=False)
class Equilibrium:
    world_price: float
    regional_prices: dict
    nonland_wage: float
    fert_price: float
    log_prices: tuple
    cells: CellOutcomes
    regional_demands: dict
    regional_supplies: dict
    residual: tuple
    residual_norm: float
    iterations: int
    trace: list = field(default_factory=list)

    @property
    def cell_outcomes(self):
        return self.cells


def solve_equilibrium(model: Model, scen: Scenario, tol: float = 1e-8, max_iter: int = 100,
                      damping: float = 1.0, start=None, backend=None) -> Equilibrium:
    """Damped Newton in log-price space with a forward-difference Jacobian."""
    if not 0 < damping <= 1:
        raise DomainError("damping must lie in (0, 1]")
    system = MarketSystem(model, scen, backend)
    x = np.zeros(3) if start is None else np.array(start, dtype=float)
    r, out, dem, sup = system.evaluate(x)
    trace = [float(np.max(np.abs(r)))]
    it = 0
    while trace[-1] >= tol:
        if it >= max_iter:
            raise NoConvergence(f"no convergence after {max_iter} iterations "
                                f"(max residual {trace[-1]:.3e})", trace)
        it += 1
        jac = np.empty((3, 3))
        for j in range(3):
            xj = x.copy()
            xj[j] += FD_STEP
            jac[:, j] = (system.evaluate(xj)[0] - r) / FD_STEP
        try:
            dx = np.linalg.solve(jac, -r) * damping
        except np.linalg.LinAlgError:
            raise NoConvergence("singular Jacobian", trace) from None
        norm = float(np.linalg.norm(r))
        step = 1.0
        best = None
        for _ in range(MAX_HALVINGS + 1):
            trial = x + step * dx
            try:
                res = system.evaluate(trial)
            except (CellNoConvergence, NonFiniteResidual):
                res = None
            if res is not None:
                best = (trial, res)
                if float(np.linalg.norm(res[0])) < norm:
                    break
            step *= 0.5
        if best is None:
            raise NonFiniteResidual("line search found no evaluable point", prices=x + dx)
        x, (r, out, dem, sup) = best
        trace.append(float(np.max(np.abs(r))))

    p0 = model.base_world_price
    wp = p0 * math.exp(x[0])
    return Equilibrium(
        world_price=wp,
        regional_prices={reg.region_id: reg.price_margin * wp for reg in model.regions},
        nonland_wage=model.base_nonland_wage * math.exp(x[1]),
        fert_price=model.base_fert_price * math.exp(x[2]),
        log_prices=tuple(float(v) for v in x),
        cells=out,
        regional_demands=dict(zip(system.region_ids, dem.tolist())),
        regional_supplies=dict(zip(system.region_ids, sup.tolist())),
        residual=tuple(float(v) for v in r),
        residual_norm=trace[-1],
        iterations=it,
        trace=trace,
    )

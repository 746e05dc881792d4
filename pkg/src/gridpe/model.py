"""Calibrated model: grid cells, technologies, regions, and consistency checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .transfer import TransferParams, gompertz_yield

IRRIGATED = "irrigated"
RAINFED = "rainfed"
KINDS = (IRRIGATED, RAINFED)
NEST_COUNT = {IRRIGATED: 3, RAINFED: 2}
N_REGIONS = 16


@dataclass(frozen=True)
class CesNest:
    scale: float
    share: float
    sigma: float


@dataclass(frozen=True)
class Technology:
    """One production practice in a cell, calibrated to its benchmark.

    ``base_input_values`` holds the benchmark expenditure on each input
    (keys ``land``, ``water``, ``nonland``, ``fert``); rainfed practices have
    no water entry.
    """
    kind: str
    nests: tuple
    transfer: TransferParams
    base_acres: float
    base_n_rate: float
    base_yield: float
    base_input_values: dict

    @property
    def base_output(self) -> float:
        return self.base_acres * self.base_yield

    @property
    def base_fert(self) -> float:
        return self.base_acres * self.base_n_rate

    @property
    def sigma_fert(self) -> float:
        return self.nests[-1].sigma


@dataclass(frozen=True)
class GridCell:
    cell_id: int
    lon: float
    lat: float
    land_endowment: float
    water_endowment: float
    technologies: tuple
    land_supply_elasticity: float = 0.25
    water_supply_elasticity: float = 0.15
    base_water_price: float = 0.0
    basin_tags: frozenset = frozenset()

    def technology(self, kind):
        for t in self.technologies:
            if t.kind == kind:
                return t
        raise KeyError(kind)


@dataclass(frozen=True)
class Region:
    region_id: str
    is_gridded: bool
    base_food_demand: float
    base_biofuel_demand: float
    income_elasticity: float
    demand_price_elasticity: float
    base_supply: float = 0.0
    supply_price_elasticity: float = 0.0
    nonland_supply_elasticity: float = 1.0
    fert_supply_elasticity: float = 5.0
    price_margin: float = 1.0


@dataclass(frozen=True, eq=False)
class Model:
    cells: tuple
    regions: tuple
    base_world_price: float
    base_nonland_wage: float
    base_fert_price: float
    numeraire: str = "world_price"
    masks: dict = field(default_factory=dict)

    @cached_property
    def gridded(self) -> Region:
        return next(r for r in self.regions if r.is_gridded)

    @cached_property
    def cell_index(self) -> dict:
        return {c.cell_id: i for i, c in enumerate(self.cells)}

    @property
    def base_output_price(self) -> float:
        """Benchmark price received by grid cells (gridded-region price)."""
        return self.gridded.price_margin * self.base_world_price

    @cached_property
    def arrays(self):
        from .production import pack_technologies
        return pack_technologies(self)

    def rescale_prices(self, factor: float) -> "Model":
        """Same physical model with every nominal price multiplied by ``factor``."""
        cells = []
        for c in self.cells:
            techs = tuple(replace(t, base_input_values={k: v * factor for k, v in t.base_input_values.items()})
                          for t in c.technologies)
            cells.append(replace(c, technologies=techs, base_water_price=c.base_water_price * factor))
        return Model(tuple(cells), self.regions, self.base_world_price * factor,
                     self.base_nonland_wage * factor, self.base_fert_price * factor,
                     self.numeraire, dict(self.masks))


def exact_value_shares(values) -> dict:
    """Cost shares of a value dict, correctly rounded from exact rational sums."""
    exact = {k: Fraction(v) for k, v in values.items()}
    total = sum(exact.values())
    return {k: float(v / total) for k, v in exact.items()}


# -- validation ----------------------------------------------------------------

class Violation(NamedTuple):
    code: str
    location: str
    message: str

    def __str__(self):
        return f"{self.code} @ {self.location}: {self.message}"


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def _check_transfer(p: TransferParams, loc, out):
    if not (p.y_max > 0 and p.b > 0 and p.c > 0):
        out.append(Violation("PARAM_TRANSFER", loc, "y_max, b, c must be positive"))
    if not (p.alpha0 >= 0 and p.alpha1 >= 0 and p.alpha2 > 0):
        out.append(Violation("PARAM_TRANSFER", loc, "leaching needs alpha0, alpha1 >= 0 and alpha2 > 0"))


def _check_technology(model: Model, cell: GridCell, t: Technology, out):
    from .production import technology_unit_cost
    loc = f"cell {cell.cell_id}/{t.kind}"
    if t.kind not in KINDS:
        out.append(Violation("KIND", loc, f"unknown technology kind {t.kind!r}"))
        return
    if len(t.nests) != NEST_COUNT[t.kind]:
        out.append(Violation("NEST_COUNT", loc, f"{t.kind} needs {NEST_COUNT[t.kind]} nests, got {len(t.nests)}"))
        return
    for i, nest in enumerate(t.nests):
        if not (0 < nest.share < 1 and nest.sigma > 0 and nest.scale > 0):
            out.append(Violation("PARAM_NEST", f"{loc}/nest{i}", "need 0<share<1, sigma>0, scale>0"))
            return
    _check_transfer(t.transfer, loc, out)
    if not (t.base_acres >= 0 and t.base_n_rate > 0 and t.base_yield > 0):
        out.append(Violation("BASE_QTY", loc, "need acres >= 0, n_rate > 0, yield > 0"))
        return
    needed = {"land", "nonland", "fert"} | ({"water"} if t.kind == IRRIGATED else set())
    if set(t.base_input_values) != needed:
        out.append(Violation("BASE_VALUES", loc, f"input values must be exactly {sorted(needed)}"))
        return
    if any(not (v > 0 and math.isfinite(v)) for v in t.base_input_values.values()):
        out.append(Violation("BASE_VALUES", loc, "input values must be positive and finite"))
        return
    p = t.transfer
    if p.y_max > 0 and p.b > 0 and p.c > 0:
        if _rel(t.base_yield, float(gompertz_yield(t.base_n_rate, p))) > 1e-10:
            out.append(Violation("CALIB_YIELD", loc, "base_yield differs from gompertz(base_n_rate)"))
        if t.base_n_rate <= p.inflection:
            out.append(Violation("CALIB_INFLECTION", loc, "base N rate not beyond the Gompertz inflection"))
    fert_cost = model.base_fert_price * t.base_fert
    if _rel(fert_cost, t.base_input_values["fert"]) > 1e-10:
        out.append(Violation("CALIB_FERT", loc, "fert value differs from fert price x acres x N rate"))
    revenue = model.base_output_price * t.base_output
    cost = math.fsum(t.base_input_values.values())
    if _rel(revenue, cost) > 1e-10:
        out.append(Violation("CALIB_PROFIT", loc, f"benchmark revenue {revenue!r} != cost {cost!r}"))
    if t.base_acres > 0:
        prices = {"land": t.base_input_values["land"] / t.base_acres,
                  "nonland": model.base_nonland_wage, "fert": model.base_fert_price,
                  "water": cell.base_water_price}
        uc = technology_unit_cost(t, prices)
        if not _rel(uc, model.base_output_price) <= 1e-10:
            out.append(Violation("CALIB_UNIT_COST", loc, f"unit cost {uc!r} != output price"))


def validate_model(model: Model, n_regions: int | None = N_REGIONS) -> list:
    """Check every type invariant and both benchmark identities.

    Never raises; returns a list of :class:`Violation` (empty when clean).
    """
    out = []
    seen = set()
    for cell in model.cells:
        loc = f"cell {cell.cell_id}"
        if cell.cell_id in seen:
            out.append(Violation("DUPLICATE_ID", loc, "cell id repeated"))
        seen.add(cell.cell_id)
        if not 1 <= len(cell.technologies) <= 2 or len({t.kind for t in cell.technologies}) != len(cell.technologies):
            out.append(Violation("TECH_COUNT", loc, "a cell carries one or two distinct technologies"))
        for name in ("land_supply_elasticity", "water_supply_elasticity"):
            if not getattr(cell, name) >= 0:
                out.append(Violation("ELASTICITY", loc, f"{name} must be >= 0"))
        acres = math.fsum(t.base_acres for t in cell.technologies)
        if acres > cell.land_endowment:
            out.append(Violation("LAND_ENDOWMENT", loc, "base acres exceed the land endowment"))
        irrigated = [t for t in cell.technologies if t.kind == IRRIGATED]
        if irrigated:
            if not cell.water_endowment > 0:
                out.append(Violation("WATER_ENDOWMENT", loc, "irrigated cell without water"))
            elif not cell.base_water_price > 0:
                out.append(Violation("WATER_PRICE", loc, "irrigated cell needs a positive water price"))
            elif "water" in irrigated[0].base_input_values and \
                    irrigated[0].base_input_values["water"] / cell.base_water_price > cell.water_endowment * (1 + 1e-12):
                out.append(Violation("WATER_ENDOWMENT", loc, "base water use exceeds the endowment"))
        for t in cell.technologies:
            _check_technology(model, cell, t, out)

    gridded = [r for r in model.regions if r.is_gridded]
    if len(gridded) != 1:
        out.append(Violation("TOPOLOGY", "regions", f"need exactly one gridded region, found {len(gridded)}"))
    if n_regions is not None and len(model.regions) != n_regions:
        out.append(Violation("TOPOLOGY", "regions", f"need {n_regions} regions, found {len(model.regions)}"))
    if len({r.region_id for r in model.regions}) != len(model.regions):
        out.append(Violation("DUPLICATE_ID", "regions", "region id repeated"))
    for r in model.regions:
        loc = f"region {r.region_id}"
        if min(r.base_food_demand, r.base_biofuel_demand, r.base_supply) < 0:
            out.append(Violation("REGION_QTY", loc, "base quantities must be >= 0"))
        if not r.demand_price_elasticity > 0:
            out.append(Violation("ELASTICITY", loc, "demand price elasticity must be > 0"))
        if min(r.supply_price_elasticity, r.nonland_supply_elasticity, r.fert_supply_elasticity) < 0:
            out.append(Violation("ELASTICITY", loc, "supply elasticities must be >= 0"))
        if not r.price_margin > 0:
            out.append(Violation("REGION_MARGIN", loc, "price margin must be > 0"))
    for name in ("base_world_price", "base_nonland_wage", "base_fert_price"):
        if not getattr(model, name) > 0:
            out.append(Violation("PRICE", "model", f"{name} must be > 0"))

    for basin, ids in model.masks.items():
        unknown = set(ids) - seen
        if unknown:
            out.append(Violation("MASK_UNKNOWN_CELL", f"basin {basin}", f"{len(unknown)} unknown cell ids"))

    if len(gridded) == 1:
        grid_supply = math.fsum(t.base_output for c in model.cells for t in c.technologies)
        row_supply = math.fsum(r.base_supply for r in model.regions if not r.is_gridded)
        demand = math.fsum(r.base_food_demand + r.base_biofuel_demand for r in model.regions)
        if _rel(grid_supply + row_supply, demand) > 1e-10:
            out.append(Violation("CALIB_CLEARING", "world", f"supply {grid_supply + row_supply!r} != demand {demand!r}"))
    return out


def base_totals(model: Model):
    """National benchmark land, output, and leaching."""
    from .transfer import leach_rate
    land = prod = leach = 0.0
    for c in model.cells:
        for t in c.technologies:
            land += t.base_acres
            prod += t.base_output
            leach += t.base_acres * float(leach_rate(t.base_n_rate, t.transfer))
    return land, prod, leach


def region_arrays(model: Model):
    r = model.regions
    return {
        "food": np.array([x.base_food_demand for x in r]),
        "bio": np.array([x.base_biofuel_demand for x in r]),
        "inc_el": np.array([x.income_elasticity for x in r]),
        "dem_el": np.array([x.demand_price_elasticity for x in r]),
        "supply": np.array([0.0 if x.is_gridded else x.base_supply for x in r]),
        "sup_el": np.array([x.supply_price_elasticity for x in r]),
        "gridded": np.array([x.is_gridded for x in r]),
    }

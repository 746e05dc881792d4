"""Deterministic synthetic calibration with the same schema as real inputs.

Cells sit on a 1/12-degree raster over the conterminous US, concentrated in
a corn-belt cluster.  Every benchmark identity (Gompertz yield at the base N
rate, zero profit, world market clearing) holds by construction: quantities
are drawn first and prices/values are back-solved from them.

Nominal prices and input values are rounded to a 48-bit mantissa so that
rescaling every price by a small integer is exact in floating point.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError
from .model import IRRIGATED, RAINFED, GridCell, Model, Region
from .production import BaselineRecord, calibrate_technology
from .scenario import PathwaySpec
from .transfer import TransferParams, gompertz_yield

DEFAULT_SEED = 42
GRID_STEP = 1.0 / 12.0
LON_RANGE = (-125.0, -67.0)
LAT_RANGE = (25.0, 49.0)

# lon_min, lon_max, lat_min, lat_max; mississippi and great_lakes overlap
BASINS = {
    "mississippi": (-110.0, -80.5, 29.0, 49.0),
    "great_lakes": (-92.5, -75.0, 41.0, 49.0),
    "chesapeake": (-80.5, -75.0, 37.0, 42.5),
}


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings; the defaults are the documented default tuning."""
    n_cells: int = 10_000
    irrigated_share: float = 0.15     # fraction of cells with an irrigated practice
    both_share: float = 0.7           # of irrigated cells, fraction that also farm rainfed
    n_regions: int = 16
    land_elasticity: tuple = (0.25, 0.25)
    water_elasticity: tuple = (0.15, 0.15)
    sigma_nonland: tuple = (0.25, 0.25)
    sigma_land_water: tuple = (0.15, 0.15)
    cn0: tuple = (3.0, 4.0)           # c * n0, sets curvature at the base N rate
    leach_n_elasticity: tuple = (0.8, 0.95)
    leach_intercept_share: tuple = (0.25, 0.3)   # alpha0 share of leaching at n0
    land_value_share: tuple = (0.35, 0.5)   # of non-fertilizer cost
    water_value_share: tuple = (0.05, 0.1)
    world_price: float = 160.0
    nonland_wage: float = 1.0
    fert_price: float = 1.45
    us_world_share: float = 0.4
    us_biofuel_share: float = 0.7     # of US production
    us_food_share: float = 0.15       # of US production
    us_demand_elasticity: float = 0.05
    row_demand_elasticity: tuple = (0.05, 0.1)
    row_supply_elasticity: tuple = (0.02, 0.08)
    income_elasticity: tuple = (0.1, 0.4)
    nonland_supply_elasticity: float = 2.0
    fert_supply_elasticity: float = 5.0

    def __post_init__(self):
        if self.n_cells < 2:
            raise DomainError("n_cells must be >= 2")
        if self.n_regions < 2:
            raise DomainError("need the gridded region plus at least one other")
        if not 0 <= self.irrigated_share <= 1 or not 0 <= self.both_share <= 1:
            raise DomainError("shares must lie in [0, 1]")
        for name in ("land_elasticity", "water_elasticity", "sigma_nonland", "sigma_land_water",
                     "cn0", "leach_n_elasticity", "leach_intercept_share", "land_value_share", "water_value_share",
                     "row_demand_elasticity", "row_supply_elasticity", "income_elasticity"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise DomainError(f"{name} must be an ordered nonnegative range")
        if self.cn0[0] <= math.log(3.0):
            raise DomainError("cn0 must exceed ln(3) to keep base N beyond the inflection")
        f_lo, f_hi = self.leach_intercept_share
        if not (self.leach_n_elasticity[0] > 1.0 - f_lo and self.leach_n_elasticity[1] <= 2.0 - 2.0 * f_hi):
            raise DomainError("leaching N elasticity range incompatible with nonnegative convex coefficients")
        if not 0 < self.us_world_share < 1 or self.us_biofuel_share + self.us_food_share >= 1 / self.us_world_share:
            raise DomainError("US shares inconsistent with world clearing")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def round48(x: float) -> float:
    """Round to a 48-bit significand (exact under scaling by small integers)."""
    if x == 0 or not math.isfinite(x):
        return x
    m, e = math.frexp(x)
    return math.ldexp(round(m * 2**48), e - 48)


def _u(rng, rng_pair, size=None):
    lo, hi = rng_pair
    return rng.uniform(lo, hi, size) if hi > lo else (np.full(size, lo) if size else lo)


def _locations(rng, n):
    ncol = int(round((LON_RANGE[1] - LON_RANGE[0]) / GRID_STEP))
    nrow = int(round((LAT_RANGE[1] - LAT_RANGE[0]) / GRID_STEP))
    lon_c = LON_RANGE[0] + (np.arange(ncol) + 0.5) * GRID_STEP
    lat_c = LAT_RANGE[0] + (np.arange(nrow) + 0.5) * GRID_STEP
    if n > ncol * nrow:
        raise DomainError(f"at most {ncol * nrow} cells fit the raster")
    # corn belt cluster plus a thin eastern band
    w_lon = np.exp(-0.5 * ((lon_c + 92.0) / 6.0) ** 2) + 0.15 * np.exp(-0.5 * ((lon_c + 78.0) / 2.5) ** 2)
    w_lat = np.exp(-0.5 * ((lat_c - 41.5) / 3.5) ** 2)
    w = np.outer(w_lat, w_lon).ravel()
    w /= w.sum()
    idx = np.sort(rng.choice(w.size, size=n, replace=False, p=w))
    taken = set(idx.tolist())
    # make sure every basin holds at least one cell
    for box in BASINS.values():
        r, c = np.divmod(idx, ncol)
        inside = _in_box(lon_c[c], lat_c[r], box)
        if not inside.any():
            cc = int(np.searchsorted(lon_c, 0.5 * (box[0] + box[1])))
            rr = int(np.searchsorted(lat_c, 0.5 * (box[2] + box[3])))
            new = rr * ncol + cc
            while new in taken:
                new += 1
            taken.add(new)
            victim = idx.size - 1 - int(np.argmax(~inside[::-1]))
            taken.discard(int(idx[victim]))
            idx[victim] = new
            idx = np.sort(idx)
    r, c = np.divmod(idx, ncol)
    return idx.astype(np.int64), lon_c[c], lat_c[r]


def _in_box(lon, lat, box):
    return (box[0] <= lon) & (lon <= box[1]) & (box[2] <= lat) & (lat <= box[3])


def _transfer(rng, spec, n0, irrigated):
    y_max = rng.uniform(4.0, 6.0) * (1.15 if irrigated else 1.0)
    b = rng.uniform(1.5, 3.0)
    c = _u(rng, spec.cn0) / n0
    y0 = float(gompertz_yield(n0, TransferParams(y_max, b, c)))
    # leaching at n0 and its N elasticity fix alpha1, alpha2 given alpha0
    l0 = rng.uniform(12.0, 25.0)
    f0 = _u(rng, spec.leach_intercept_share)
    eta = _u(rng, spec.leach_n_elasticity)
    a2 = (eta - 1.0 + f0) * l0 / n0**2
    a1 = max((2.0 - 2.0 * f0 - eta) * l0 / n0, 0.0)
    return TransferParams(y_max, b, c, f0 * l0, a1, a2), y0


def _technology(rng, spec, kind, acres, prices, water_price):
    irrigated = kind == IRRIGATED
    n0 = rng.uniform(55.0, 85.0) * (1.1 if irrigated else 1.0)
    transfer, y0 = _transfer(rng, spec, n0, irrigated)
    revenue = prices["output"] * acres * y0
    fert = round48(prices["fert"] * acres * n0)
    rest = revenue - fert
    if rest <= 0.3 * revenue:
        raise DomainError("fertilizer cost share too high; lower fert_price")
    land = round48(rest * _u(rng, spec.land_value_share))
    values = {"land": land}
    if irrigated:
        values["water"] = round48(rest * _u(rng, spec.water_value_share))
    values["fert"] = fert
    values["nonland"] = round48(revenue - math.fsum(values.values()))
    base = BaselineRecord(kind, acres, n0, y0, values)
    sig = {"nonland": _u(rng, spec.sigma_nonland), "land_water": _u(rng, spec.sigma_land_water)}
    pr = dict(prices, water=water_price)
    return calibrate_technology(base, transfer, pr, sig)


def synthesize(spec: SynthSpec | None = None, seed: int = DEFAULT_SEED):
    """Build (Model, PathwaySpec) in memory; identical output for identical seed."""
    spec = spec or SynthSpec()
    rng = np.random.default_rng(seed)
    prices = {"output": round48(spec.world_price), "nonland": round48(spec.nonland_wage),
              "fert": round48(spec.fert_price)}
    ids, lon, lat = _locations(rng, spec.n_cells)
    n = ids.size
    irr = rng.random(n) < spec.irrigated_share
    both = rng.random(n) < spec.both_share
    land_el = _u(rng, spec.land_elasticity, n)
    water_el = _u(rng, spec.water_elasticity, n)
    cells = []
    for i in range(n):
        kinds = [IRRIGATED, RAINFED] if irr[i] and both[i] else ([IRRIGATED] if irr[i] else [RAINFED])
        techs = []
        water_price = round48(rng.uniform(20.0, 60.0)) if irr[i] else 0.0
        for kind in kinds:
            acres = float(rng.lognormal(math.log(2500.0), 0.6))
            techs.append(_technology(rng, spec, kind, acres, prices, water_price))
        total = math.fsum(t.base_acres for t in techs)
        endow = total * rng.uniform(1.2, 2.0)
        water = 0.0
        if irr[i]:
            w_use = techs[0].base_input_values["water"] / water_price
            water = w_use * rng.uniform(1.1, 1.5)
        tags = frozenset(b for b, box in BASINS.items() if _in_box(lon[i], lat[i], box))
        cells.append(GridCell(int(ids[i]), float(lon[i]), float(lat[i]), endow, water, tuple(techs),
                              float(land_el[i]), float(water_el[i]), water_price, tags))

    regions = _regions(rng, spec, math.fsum(t.base_output for c in cells for t in c.technologies))
    masks = {b: tuple(c.cell_id for c in cells if b in c.basin_tags) for b in BASINS}
    model = Model(tuple(cells), regions, prices["output"], prices["nonland"], prices["fert"], masks=masks)
    return model, default_pathway([r.region_id for r in regions])


def _regions(rng, spec, us_output):
    world = us_output / spec.us_world_share
    us = Region("US", True, spec.us_food_share * us_output, spec.us_biofuel_share * us_output,
                float(_u(rng, spec.income_elasticity)), spec.us_demand_elasticity,
                nonland_supply_elasticity=spec.nonland_supply_elasticity,
                fert_supply_elasticity=spec.fert_supply_elasticity)
    k = spec.n_regions - 1
    supply_w = rng.dirichlet(np.full(k, 2.0))
    demand_w = rng.dirichlet(np.full(k, 2.0))
    row_supply = (world - us_output) * supply_w
    row_demand = world - us.base_food_demand - us.base_biofuel_demand
    bio = 0.03 * row_demand * demand_w
    food = (row_demand - bio.sum()) * demand_w
    regions = [us]
    for j in range(k):
        regions.append(Region(
            f"R{j + 1:02d}", False, float(food[j]), float(bio[j]),
            float(_u(rng, spec.income_elasticity)), float(_u(rng, spec.row_demand_elasticity)),
            float(row_supply[j]), float(_u(rng, spec.row_supply_elasticity)),
            price_margin=round48(rng.uniform(0.9, 1.2))))
    # last region absorbs rounding so the world market clears
    supply = us_output + math.fsum(r.base_supply for r in regions[1:])
    demand = math.fsum(r.base_food_demand + r.base_biofuel_demand for r in regions[:-1]) + regions[-1].base_biofuel_demand
    last = regions[-1]
    regions[-1] = Region(last.region_id, False, supply - demand, last.base_biofuel_demand,
                         last.income_elasticity, last.demand_price_elasticity, last.base_supply,
                         last.supply_price_elasticity, price_margin=last.price_margin)
    return tuple(regions)


# synthetic growth paths (annual rates), not projections of any real pathway
DEFAULT_RATES = {
    "US": {"population": 0.006, "income": 0.015, "tfp": 0.006, "biofuel": 0.02},
    "*": {"population": 0.01, "income": 0.03, "tfp": 0.01, "biofuel": 0.03},
}


def default_pathway(region_ids, rates=None, base_year=2020):
    rates = rates or DEFAULT_RATES
    full = {r: rates.get(r, rates["*"]) for r in region_ids}
    return PathwaySpec.constant(region_ids, full, base_year=base_year)


def generate_synthetic(spec: SynthSpec | None = None, seed: int = DEFAULT_SEED, out_dir=None):
    """Write a synthetic model directory (model files plus pathway) and return its path."""
    from .io import save_model, save_pathway
    model, pathway = synthesize(spec, seed)
    save_model(model, out_dir)
    save_pathway(pathway, out_dir)
    return out_dir

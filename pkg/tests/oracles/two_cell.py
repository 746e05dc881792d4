"""Hand-built 2-cell / 2-region instance and a brute-force equilibrium oracle.

The oracle shares nothing with the package solver: cell supply comes from
closed-form inversion of the standard-form (scale, share) unit cost
functions, the world price from a scan over 10**6 log-spaced prices refined
by bisection, and the two US factor prices from nested bisection in a
Gauss-Seidel loop.

Run as a script to print the world prices frozen into the tests.
"""
import math

import numpy as np

from gridpe.market import Scenario
from gridpe.model import RAINFED, GridCell, Model, Region
from gridpe.production import BaselineRecord, calibrate_technology
from gridpe.transfer import TransferParams, gompertz_yield

P0, W0, PF0 = 160.0, 1.0, 1.5
SHOCKS = (0.0, -0.10, -0.25, -0.50)

_CELLS = [
    # id, acres, n0, (y_max, b, c), land value share of non-fert cost, endowment factor, eps_land
    (1, 1000.0, 70.0, (5.0, 2.0, 0.05), 0.4, 1.5, 0.25),
    (2, 600.0, 80.0, (5.5, 2.5, 0.045), 0.45, 1.3, 0.4),
]


def build_instance() -> Model:
    cells = []
    us_output = 0.0
    prices = {"output": P0, "nonland": W0, "fert": PF0}
    for cid, acres, n0, tp, land_share, endow, eps in _CELLS:
        p = TransferParams(*tp, alpha0=3.0, alpha1=0.05, alpha2=0.002)
        y0 = float(gompertz_yield(n0, p))
        revenue = P0 * acres * y0
        fert = PF0 * acres * n0
        land = (revenue - fert) * land_share
        values = {"land": land, "nonland": revenue - fert - land, "fert": fert}
        t = calibrate_technology(BaselineRecord(RAINFED, acres, n0, y0, values), p, prices,
                                 {"nonland": 0.3})
        cells.append(GridCell(cid, -90.0 + cid, 40.0, acres * endow, 0.0, (t,), eps, 0.15))
        us_output += t.base_output
    world = us_output / 0.4
    us = Region("US", True, 0.2 * us_output, 0.6 * us_output, 0.3, 0.1,
                nonland_supply_elasticity=1.5, fert_supply_elasticity=4.0)
    row_supply = world - us_output
    row = Region("ROW", False, world - us.base_food_demand - us.base_biofuel_demand - 0.02 * world,
                 0.02 * world, 0.3, 0.15, row_supply, 0.2)
    return Model(tuple(cells), (us, row), P0, W0, PF0)


# -- independent oracle ------------------------------------------------------------

def _inv_cost(c, w2, nest):
    """Price of the first input making the nest's unit cost equal ``c``; nan if none."""
    s, d, sig = nest.scale, nest.share, nest.sigma
    k = 1.0 - sig
    top = (s * c) ** k - (1.0 - d) ** sig * w2 ** k
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(top > 0, (top / d**sig) ** (1.0 / k), np.nan)


def _per_unit(w, c, nest, first):
    """Input per unit of nest output (Shephard's lemma)."""
    s, d, sig = nest.scale, nest.share, nest.sigma
    share = d if first else 1.0 - d
    return (share * s * c / w) ** sig / s


def cell_supply(model, p, w, pf):
    """Output, nonland and fertilizer of every cell at prices (vectorized over p)."""
    p = np.asarray(p, dtype=float)
    q_tot = np.zeros_like(p)
    x_tot = np.zeros_like(p)
    f_tot = np.zeros_like(p)
    for cell in model.cells:
        t = cell.technologies[0]
        bottom, top = t.nests
        rent0 = t.base_input_values["land"] / t.base_acres
        pa = _inv_cost(p, pf, top)            # augmented-land composite price
        r = _inv_cost(pa, w, bottom)          # land rent
        ok = np.isfinite(r) & (r > 0)
        r = np.where(ok, r, rent0)
        pa = np.where(ok, pa, 1.0)
        cap = math.log(cell.land_endowment / t.base_acres)
        la = np.minimum(cell.land_supply_elasticity * (np.log(r / rent0) - np.log(p / P0)), cap)
        acres = np.where(ok, t.base_acres * np.exp(la), 0.0)
        aug_per_q = _per_unit(pa, p, top, True)
        land_per_aug = _per_unit(r, pa, bottom, True)
        q = acres / (aug_per_q * land_per_aug)
        q_tot += q
        x_tot += q * aug_per_q * _per_unit(w, pa, bottom, False)
        f_tot += q * _per_unit(pf, p, top, False)
    return q_tot, x_tot, f_tot


def _bases(model):
    x0 = sum(c.technologies[0].base_input_values["nonland"] / W0 for c in model.cells)
    f0 = sum(c.technologies[0].base_fert for c in model.cells)
    return x0, f0


def world_excess(model, scen, p, w, pf):
    p = np.asarray(p, dtype=float)
    demand = np.zeros_like(p)
    supply = cell_supply(model, p, w, pf)[0]
    for r in model.regions:
        demand = demand + r.base_food_demand * (p / P0) ** (-r.demand_price_elasticity)
        demand = demand + r.base_biofuel_demand * ((1.0 + scen.us_feedstock_shock) if r.is_gridded else 1.0)
        if not r.is_gridded:
            supply = supply + r.base_supply * (p / P0) ** r.supply_price_elasticity
    return demand - supply


def _bisect(f, lo, hi, iters=200):
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_world_price(model, scen, w, pf, n_grid=10**6, span=2.0):
    grid = P0 * np.exp(np.linspace(-span, span, n_grid))
    ed = world_excess(model, scen, grid, w, pf)
    sign = np.flatnonzero((ed[:-1] > 0) & (ed[1:] <= 0))
    if sign.size != 1:
        raise RuntimeError(f"expected one sign change, found {sign.size}")
    i = sign[0]
    return _bisect(lambda x: float(world_excess(model, scen, x, w, pf)), grid[i], grid[i + 1])


def oracle(model, shock, tol=1e-14, max_outer=200):
    scen = Scenario.baseline(model, shock=shock)
    x0, f0 = _bases(model)
    us = model.gridded
    p, w, pf = P0, W0, PF0
    for _ in range(max_outer):
        p_new = solve_world_price(model, scen, w, pf)

        def nonland(wi):
            return float(cell_supply(model, p_new, wi, pf)[1]) - x0 * (wi / W0) ** us.nonland_supply_elasticity

        w_new = _bisect(nonland, W0 * 0.2, W0 * 5.0)

        def fert(pi):
            return float(cell_supply(model, p_new, w_new, pi)[2]) - f0 * (pi / PF0) ** us.fert_supply_elasticity

        pf_new = _bisect(fert, PF0 * 0.2, PF0 * 5.0)
        step = max(abs(p_new / p - 1), abs(w_new / w - 1), abs(pf_new / pf - 1))
        p, w, pf = p_new, w_new, pf_new
        if step < tol:
            break
    return p, w, pf


if __name__ == "__main__":
    m = build_instance()
    for s in SHOCKS:
        p, w, pf = oracle(m, s)
        print(f"{s:+.2f}: world {p!r} wage {w!r} fert {pf!r}")

"""Nested CES technologies: primitives, calibration, and per-cell supply.

A rainfed practice nests (land, nonland) into an augmented-land composite
that is combined with fertilizer.  An irrigated practice first combines land
with water, then that composite with nonland inputs, then with fertilizer.

The market solver does not evaluate the (scale, share) form directly.  It
works with prices relative to the benchmark and benchmark cost shares
("calibrated share form"); both forms describe the same technology and the
test suite checks one against the other.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from . import kernel
from .errors import CalibrationError, CellNoConvergence, DomainError
from .model import IRRIGATED, RAINFED, CesNest, GridCell, Model, Technology, exact_value_shares
from .transfer import TransferParams, gompertz_derivatives, gompertz_yield, leach_rate

SIGMA_NF_BOUNDS = (0.05, 3.0)
DEFAULT_SIGMAS = {"land_water": 0.15, "nonland": 0.5}
_CD_EPS = 1e-9


# -- CES primitives -----------------------------------------------------------

def ces_output(x1, x2, nest: CesNest):
    if x1 < 0 or x2 < 0:
        raise DomainError("CES inputs must be nonnegative")
    if abs(nest.sigma - 1.0) < _CD_EPS:
        return nest.scale * x1**nest.share * x2 ** (1.0 - nest.share)
    rho = (nest.sigma - 1.0) / nest.sigma
    if x1 == 0 or x2 == 0:
        if rho < 0:
            return 0.0
        return nest.scale * (nest.share * x1**rho + (1.0 - nest.share) * x2**rho) ** (1.0 / rho)
    return nest.scale * math.exp(_log_power_mean(math.log(x1), math.log(x2), nest.share, rho))


def _log_power_mean(a, b, d, k):
    """log of (d e^(k a) + (1-d) e^(k b))^(1/k), accurate as k -> 0."""
    t = k * (a - b)
    if t < 0:   # a nonnegative expm1 argument keeps log1p free of cancellation
        a, b, d, t = b, a, 1.0 - d, -t
    if t > 30.0:
        return a + (math.log(d) + math.log1p((1.0 - d) / d * math.exp(-t))) / k
    return b + math.log1p(d * math.expm1(t)) / k


def unit_cost(w1, w2, nest: CesNest):
    if w1 <= 0 or w2 <= 0:
        raise DomainError("CES input prices must be positive")
    d, s = nest.share, nest.sigma
    if abs(s - 1.0) < _CD_EPS:
        return (w1 / d) ** d * (w2 / (1.0 - d)) ** (1.0 - d) / nest.scale
    # d^s w1^(1-s) = d (w1/d)^(1-s): a power mean of w/d with weights d
    return math.exp(_log_power_mean(math.log(w1 / d), math.log(w2 / (1.0 - d)), d, 1.0 - s)) / nest.scale


def ces_cost_and_demands(w1, w2, q, nest: CesNest):
    """Minimum cost of ``q`` composite units and the cost-minimizing bundle."""
    if q < 0:
        raise DomainError("output must be nonnegative")
    c = unit_cost(w1, w2, nest)
    if q == 0:
        return 0.0, 0.0, 0.0
    d, s = nest.share, nest.sigma
    c_raw = c * nest.scale
    x1 = q / nest.scale * (d * c_raw / w1) ** s
    x2 = q / nest.scale * ((1.0 - d) * c_raw / w2) ** s
    return q * c, x1, x2


def calibrate_nest(w1, x1, w2, x2, q0, sigma) -> CesNest:
    """Share and scale so that (x1, x2) is cost-minimizing and yields q0."""
    e = 1.0 / sigma
    a, b = w1 * x1**e, w2 * x2**e
    share = a / (a + b)
    if not 0.0 < share < 1.0:
        raise CalibrationError(f"nest share {share!r} is not strictly inside (0, 1)")
    probe = CesNest(1.0, share, sigma)
    return CesNest(q0 / ces_output(x1, x2, probe), share, sigma)


# -- calibration --------------------------------------------------------------

class BaselineRecord(NamedTuple):
    kind: str
    acres: float
    n_rate: float
    yield_: float
    input_values: dict


def sigma_from_gompertz(n0: float, p: TransferParams, clamp=SIGMA_NF_BOUNDS) -> float:
    """Price elasticity of the profit-maximizing N rate along the yield curve."""
    if n0 <= p.inflection:
        raise CalibrationError(
            f"N rate {n0} not beyond the Gompertz inflection {p.inflection:.6g}; "
            "yield is locally convex in N")
    d1, d2 = gompertz_derivatives(n0, p)
    sigma = float(-d1 / (n0 * d2))
    lo, hi = clamp
    return min(max(sigma, lo), hi)


def calibrate_technology(base: BaselineRecord, transfer: TransferParams, prices: dict,
                         sigma_defaults: dict | None = None) -> Technology:
    """Build a Technology reproducing ``base`` at the benchmark ``prices``.

    ``prices`` carries ``output``, ``nonland``, ``fert`` and, for irrigated
    practices, ``water``; the land rent is the land value per acre.
    """
    sig = dict(DEFAULT_SIGMAS)
    sig.update(sigma_defaults or {})
    vals = base.input_values
    if any(v <= 0 for v in vals.values()):
        raise CalibrationError("benchmark input values must be positive")
    sigma_nf = sigma_from_gompertz(base.n_rate, transfer)
    rent = vals["land"] / base.acres
    nonland_qty = vals["nonland"] / prices["nonland"]
    fert_qty = base.acres * base.n_rate
    output = base.acres * base.yield_
    if base.kind == RAINFED:
        aug = vals["land"] + vals["nonland"]
        nests = (
            calibrate_nest(rent, base.acres, prices["nonland"], nonland_qty, aug, sig["nonland"]),
            calibrate_nest(1.0, aug, prices["fert"], fert_qty, output, sigma_nf),
        )
    elif base.kind == IRRIGATED:
        water_qty = vals["water"] / prices["water"]
        lw = vals["land"] + vals["water"]
        aug = lw + vals["nonland"]
        nests = (
            calibrate_nest(rent, base.acres, prices["water"], water_qty, lw, sig["land_water"]),
            calibrate_nest(1.0, lw, prices["nonland"], nonland_qty, aug, sig["nonland"]),
            calibrate_nest(1.0, aug, prices["fert"], fert_qty, output, sigma_nf),
        )
    else:
        raise DomainError(f"unknown technology kind {base.kind!r}")
    return Technology(base.kind, nests, transfer, base.acres, base.n_rate, base.yield_, dict(vals))


def technology_unit_cost(t: Technology, prices: dict) -> float:
    """Unit cost of the full nest chain in (scale, share) form."""
    if t.kind == RAINFED:
        c_aug = unit_cost(prices["land"], prices["nonland"], t.nests[0])
    else:
        c_lw = unit_cost(prices["land"], prices["water"], t.nests[0])
        c_aug = unit_cost(c_lw, prices["nonland"], t.nests[1])
    return unit_cost(c_aug, prices["fert"], t.nests[-1])


def technology_demands(t: Technology, prices: dict, q: float) -> dict:
    """Cost-minimizing input bundle for ``q`` tons in (scale, share) form."""
    if t.kind == RAINFED:
        c_aug = unit_cost(prices["land"], prices["nonland"], t.nests[0])
        _, aug, fert = ces_cost_and_demands(c_aug, prices["fert"], q, t.nests[1])
        _, land, nonland = ces_cost_and_demands(prices["land"], prices["nonland"], aug, t.nests[0])
        return {"land": land, "nonland": nonland, "fert": fert}
    c_lw = unit_cost(prices["land"], prices["water"], t.nests[0])
    c_aug = unit_cost(c_lw, prices["nonland"], t.nests[1])
    _, aug, fert = ces_cost_and_demands(c_aug, prices["fert"], q, t.nests[2])
    _, lw, nonland = ces_cost_and_demands(c_lw, prices["nonland"], aug, t.nests[1])
    _, land, water = ces_cost_and_demands(prices["land"], prices["water"], lw, t.nests[0])
    return {"land": land, "water": water, "nonland": nonland, "fert": fert}


# -- packed share-form arrays ---------------------------------------------------

class TechArrays(NamedTuple):
    cell_pos: np.ndarray
    cell_id: np.ndarray
    irrigated: np.ndarray   # int8
    theta_f: np.ndarray     # fertilizer share of total cost
    theta_lw: np.ndarray    # land-water share of the augmented composite (irrigated)
    theta_l: np.ndarray     # land share of the bottom nest
    sig_t: np.ndarray
    sig_m: np.ndarray
    sig_b: np.ndarray
    eps_l: np.ndarray
    eps_w: np.ndarray
    cap_l: np.ndarray       # log of land cap over base acres
    cap_w: np.ndarray       # log of water cap over base water use
    a0: np.ndarray
    q0: np.ndarray
    x0: np.ndarray
    f0: np.ndarray
    w0: np.ndarray
    n0: np.ndarray
    s_land: np.ndarray      # cost shares of total benchmark cost
    s_water: np.ndarray
    s_nonland: np.ndarray
    s_fert: np.ndarray
    cost0: np.ndarray       # total benchmark cost (nominal)
    alpha0: np.ndarray
    alpha1: np.ndarray
    alpha2: np.ndarray
    y_max: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @property
    def kernel_params(self):
        return (self.irrigated, self.theta_f, self.theta_lw, self.theta_l, self.sig_t,
                self.sig_m, self.sig_b, self.eps_l, self.eps_w, self.cap_l, self.cap_w)

    def __len__(self):
        return self.a0.shape[0]


def pack_technologies(model: Model) -> TechArrays:
    rows = []
    for pos, cell in enumerate(model.cells):
        acres = math.fsum(t.base_acres for t in cell.technologies)
        for t in sorted(cell.technologies, key=lambda t: t.kind):
            rows.append(_pack_one(model, pos, cell, t, acres))
    cols = list(zip(*rows)) if rows else [[] for _ in TechArrays._fields]
    arrays = []
    for name, col in zip(TechArrays._fields, cols):
        dtype = {"cell_pos": np.int64, "cell_id": np.int64, "irrigated": np.int8}.get(name, np.float64)
        arrays.append(np.ascontiguousarray(np.array(col, dtype=dtype)))
    return TechArrays(*arrays)


def _pack_one(model, pos, cell: GridCell, t: Technology, cell_acres):
    v = t.base_input_values
    shares = exact_value_shares(v)
    irr = t.kind == IRRIGATED
    if irr:
        theta_lw = _share_of(v, ("land", "water"), ("land", "water", "nonland"))
        theta_l = _share_of(v, ("land",), ("land", "water"))
        sig_b, sig_m = t.nests[0].sigma, t.nests[1].sigma
        w0 = v["water"] / cell.base_water_price
        cap_w = math.log(cell.water_endowment / w0)
    else:
        theta_lw = 1.0
        theta_l = _share_of(v, ("land",), ("land", "nonland"))
        sig_b, sig_m = t.nests[0].sigma, 1.0
        w0 = 0.0
        cap_w = 0.0
    if t.base_acres > 0 and cell_acres > 0:
        cap_l = math.log(cell.land_endowment / cell_acres) if cell.land_endowment > 0 else 0.0
    else:
        cap_l = 0.0
    p = t.transfer
    return (pos, cell.cell_id, int(irr), shares["fert"], theta_lw, theta_l,
            t.nests[-1].sigma, sig_m, sig_b,
            cell.land_supply_elasticity, cell.water_supply_elasticity, cap_l, cap_w,
            t.base_acres, t.base_output, v["nonland"] / model.base_nonland_wage, t.base_fert, w0,
            t.base_n_rate, shares["land"], shares.get("water", 0.0), shares["nonland"], shares["fert"],
            math.fsum(v.values()), p.alpha0, p.alpha1, p.alpha2, p.y_max, p.b, p.c)


def _share_of(values, num, den):
    top = sum(Fraction(values[k]) for k in num)
    bottom = sum(Fraction(values[k]) for k in den)
    return float(top / bottom)


# -- evaluation after the kernel solve -----------------------------------------

def _lnces(theta, la, lb, sig):
    cd = np.abs(sig - 1.0) < _CD_EPS
    k = np.where(cd, 1.0, 1.0 - sig)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        ces = np.logaddexp(np.log(theta) + k * la, np.log1p(-theta) + k * lb) / k
    return np.where(cd, theta * la + (1.0 - theta) * lb, ces)


STATUS_OK, STATUS_SHUTDOWN, STATUS_FAILED = 0, 1, 2
CAP_LAND, CAP_WATER = 1, 2


@dataclass(frozen=True, eq=False)
class CellOutcomes:
    """Per-technology results of a cell sub-equilibrium solve (array form)."""
    cell_id: np.ndarray
    irrigated: np.ndarray
    acres: np.ndarray
    n_rate: np.ndarray
    output: np.ndarray
    leaching: np.ndarray
    nonland: np.ndarray
    fert: np.ndarray
    water: np.ndarray
    log_rent: np.ndarray        # log land rent relative to benchmark
    log_water_price: np.ndarray
    profit_residual: np.ndarray  # nominal, diagnostic
    zero_profit_gap: np.ndarray  # |unit cost - output price| / output price
    cap: np.ndarray
    status: np.ndarray
    iterations: np.ndarray

    def __len__(self):
        return self.acres.shape[0]

    def record(self, i) -> "CellOutcome":
        return CellOutcome(
            int(self.cell_id[i]), IRRIGATED if self.irrigated[i] else RAINFED,
            float(self.acres[i]), float(self.n_rate[i]), float(self.output[i]),
            float(self.leaching[i]),
            {"land": float(self.acres[i]), "water": float(self.water[i]),
             "nonland": float(self.nonland[i]), "fert": float(self.fert[i])},
            float(self.profit_residual[i]), bool(self.cap[i]),
        )


class CellOutcome(NamedTuple):
    cell_id: int
    kind: str
    acres: float
    n_rate: float
    output: float
    leaching: float
    input_quantities: dict
    profit_residual: float
    cap_binding: bool

    def intensity_factor(self, transfer: TransferParams) -> float:
        """Output relative to acres x yield(n_rate); exactly 1 at the benchmark."""
        return self.output / (self.acres * float(gompertz_yield(self.n_rate, transfer)))


def evaluate_cells(ta: TechArrays, log_output, log_wage, log_fert, tfp=1.0, log_price=None,
                   base_output_price=1.0, backend=None) -> CellOutcomes:
    """Solve every cell sub-equilibrium at the given relative prices.

    ``log_output``, ``log_wage``, ``log_fert`` are logs of prices relative to
    the benchmark; ``tfp`` is the Hicks-neutral productivity multiplier.
    ``log_price`` is the log relative output price used to deflate rents in
    land and water supply (defaults to ``log_output``).
    """
    lp = log_output if log_price is None else log_price
    ltau = log_output + math.log(tfp)
    u, v, status, iters = kernel.solve_cells(ta.kernel_params, ltau, lp, log_wage, log_fert,
                                             backend=backend)
    return _quantities(ta, u, v, status, iters, ltau, lp, log_wage, log_fert, tfp, base_output_price,
                       log_output)


def _quantities(ta, u, v, status, iters, ltau, lp, lx, lf, tfp, p0, log_output):
    irr = ta.irrigated.astype(bool)
    lc_bot = _lnces(ta.theta_l, u, np.where(irr, v, lx), ta.sig_b)
    lc_aug = np.where(irr, _lnces(ta.theta_lw, lc_bot, lx, ta.sig_m), lc_bot)
    lc = _lnces(1.0 - ta.theta_f, lc_aug, lf, ta.sig_t)
    land_arg = ta.eps_l * (u - lp)
    la = np.minimum(land_arg, ta.cap_l)
    water_arg = ta.eps_w * (v - lp)
    cap = np.where(land_arg > ta.cap_l, CAP_LAND, 0) | np.where(irr & (water_arg > ta.cap_w), CAP_WATER, 0)

    lq = la + ta.sig_t * (lc_aug - lc) + np.where(
        irr, ta.sig_m * (lc_bot - lc_aug) + ta.sig_b * (u - lc_bot), ta.sig_b * (u - lc_aug))
    l_aug = lq - ta.sig_t * (lc_aug - lc)
    lx_rel = l_aug - np.where(irr, ta.sig_m, ta.sig_b) * (lx - lc_aug)
    lf_rel = lq - ta.sig_t * (lf - lc)
    lw_rel = np.where(irr, l_aug - ta.sig_m * (lc_bot - lc_aug) - ta.sig_b * (v - lc_bot), -np.inf)

    live = (status == STATUS_OK) & (ta.a0 > 0)
    zero = np.zeros_like(u)
    q_rel = np.where(live, np.exp(lq), 0.0)
    a_rel = np.where(live, np.exp(la), 0.0)
    x_rel = np.where(live, np.exp(lx_rel), 0.0)
    f_rel = np.where(live, np.exp(lf_rel), 0.0)
    w_rel = np.where(live & irr, np.exp(lw_rel), 0.0)

    acres = ta.a0 * a_rel
    output = ta.q0 * tfp * q_rel
    with np.errstate(invalid="ignore", divide="ignore"):
        n_rate = np.where(live, ta.n0 * np.exp(lf_rel - la), 0.0)
    leaching = acres * (ta.alpha0 + n_rate * (ta.alpha1 + ta.alpha2 * n_rate))
    # nominal profit: revenue minus cost, both scaled by benchmark total cost
    revenue = np.exp(ltau) * q_rel
    cost = (ta.s_land * np.exp(u) * a_rel + ta.s_water * np.exp(v) * w_rel
            + ta.s_nonland * np.exp(lx) * x_rel + ta.s_fert * np.exp(lf) * f_rel)
    gap = np.where(live, np.abs(np.expm1(lc - ltau)), 0.0)
    return CellOutcomes(
        cell_id=ta.cell_id, irrigated=ta.irrigated, acres=acres, n_rate=n_rate, output=output,
        leaching=leaching, nonland=ta.x0 * x_rel, fert=ta.f0 * f_rel, water=ta.w0 * w_rel,
        log_rent=u, log_water_price=np.where(irr, v, zero),
        profit_residual=ta.cost0 * (revenue - cost), zero_profit_gap=gap,
        cap=cap.astype(np.int8), status=status, iterations=iters,
    )


def raise_on_failure(out: CellOutcomes):
    bad = np.flatnonzero(out.status == STATUS_FAILED)
    if bad.size:
        raise CellNoConvergence(
            f"{bad.size} cell sub-equilibria failed to converge",
            cell_ids=out.cell_id[bad].tolist(), residuals=out.zero_profit_gap[bad].tolist())


@dataclass(frozen=True)
class CellPrices:
    output_price: float
    nonland_wage: float
    fert_price: float
    land_rent: float
    water_price: float


def cell_supply(model: Model, cell: GridCell, output_price: float, nonland_wage: float,
                fert_price: float, tfp: float = 1.0, backend=None) -> list:
    """Sub-equilibrium of one cell at nominal prices; one CellOutcome per technology.

    Raises CellNoConvergence if any technology fails to converge.
    """
    if min(output_price, nonland_wage, fert_price) <= 0:
        raise DomainError("prices must be positive")
    sub = Model((cell,), model.regions, model.base_world_price, model.base_nonland_wage,
                model.base_fert_price, model.numeraire)
    ta = sub.arrays
    lp = math.log(output_price / model.base_output_price)
    out = evaluate_cells(ta, lp, math.log(nonland_wage / model.base_nonland_wage),
                         math.log(fert_price / model.base_fert_price), tfp=tfp, backend=backend)
    raise_on_failure(out)
    return [out.record(i) for i in range(len(out))]


def cell_prices(model: Model, out: CellOutcomes, i: int, log_output, log_wage, log_fert) -> CellPrices:
    """Nominal price vector faced by technology ``i`` after a solve."""
    cell = model.cells[model.cell_index[int(out.cell_id[i])]]
    kind = IRRIGATED if out.irrigated[i] else RAINFED
    t = cell.technology(kind)
    rent0 = t.base_input_values["land"] / t.base_acres
    return CellPrices(
        model.base_output_price * math.exp(log_output),
        model.base_nonland_wage * math.exp(log_wage),
        model.base_fert_price * math.exp(log_fert),
        rent0 * math.exp(out.log_rent[i]),
        cell.base_water_price * math.exp(out.log_water_price[i]) if out.irrigated[i] else 0.0,
    )

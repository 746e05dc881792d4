"""Delimited-text formats for models, pathways, transfer points, and sweeps.

A model directory holds::

    model.csv         key,value (benchmark world price, nonland wage, fertilizer price, numeraire)
    cells.csv         one row per grid cell
    technologies.csv  one row per (cell, practice)
    nests.csv         one row per (cell, practice, nest level)
    transfer.csv      Gompertz and leaching coefficients per (cell, practice)
    regions.csv       one row per demand/supply region
    masks.csv         basin_id,cell_id membership rows
    pathway.csv       optional growth pathway

Every file has a header row, comma separators, and a decimal point.  Floats
are written with 17 significant digits, so a load/save round trip is exact.
"""
from __future__ import annotations

import csv
import io as _io
import math
import os
from collections import defaultdict

from .errors import ParseError, SchemaMismatch, ValidationFailed
from .model import IRRIGATED, N_REGIONS, CesNest, GridCell, Model, Region, Technology, validate_model
from .report import atomic_write
from .scenario import Period, PathwaySpec, SweepResult
from .transfer import ResponsePoint, TransferParams

CELLS = ("cell_id", "lon", "lat", "land_endowment", "water_endowment",
         "land_supply_elasticity", "water_supply_elasticity", "base_water_price")
TECHNOLOGIES = ("cell_id", "kind", "base_acres", "base_n_rate", "base_yield",
                "land_value", "water_value", "nonland_value", "fert_value")
NESTS = ("cell_id", "kind", "level", "scale", "share", "sigma")
TRANSFER = ("cell_id", "kind", "y_max", "b", "c", "alpha0", "alpha1", "alpha2")
REGIONS = ("region_id", "is_gridded", "base_food_demand", "base_biofuel_demand",
           "income_elasticity", "demand_price_elasticity", "base_supply",
           "supply_price_elasticity", "nonland_supply_elasticity", "fert_supply_elasticity",
           "price_margin")
MODEL_KEYS = ("base_world_price", "base_nonland_wage", "base_fert_price", "numeraire")
MASKS = ("basin_id", "cell_id")
PATHWAY = ("region_id", "start", "end", "variable", "rate")
POINTS = ("group", "n_rate", "yield", "leaching")
FITS = ("group", "y_max", "b", "c", "alpha0", "alpha1", "alpha2", "rmse", "iterations", "converged")
SWEEP = ("year", "shock", "basin", "land", "production", "leaching",
         "world_price", "nonland_wage", "fert_price", "iterations")
FAILURES = ("year", "shock", "error")


def fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return "%.17g" % x
    return str(x)


def render(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    return buf.getvalue()


def write_csv(path, header, rows):
    atomic_write(path, render(header, rows))


class _Reader:
    """Rows of one file as dicts, with typed accessors that report positions."""

    def __init__(self, path, header):
        self.path = os.fspath(path)
        try:
            with open(self.path, newline="") as fh:
                text = fh.read()
        except FileNotFoundError:
            raise
        lines = list(csv.reader(_io.StringIO(text)))
        if not lines:
            raise ParseError(self.path, 1, 1, "empty file (no header row)")
        got = [h.strip() for h in lines[0]]
        missing = [h for h in header if h not in got]
        unknown = [h for h in got if h not in header]
        if missing or unknown:
            raise SchemaMismatch(self.path, missing, unknown)
        self.col = {h: got.index(h) for h in header}
        self.rows = []
        for ln, fields in enumerate(lines[1:], start=2):
            if not fields:
                continue
            if len(fields) != len(got):
                raise ParseError(self.path, ln, min(len(fields), len(got)) + 1,
                                 f"expected {len(got)} fields, found {len(fields)}")
            self.rows.append((ln, fields))

    def __iter__(self):
        for ln, fields in self.rows:
            yield _Row(self, ln, fields)


class _Row:
    __slots__ = ("r", "ln", "fields")

    def __init__(self, r, ln, fields):
        self.r, self.ln, self.fields = r, ln, fields

    def _raw(self, name):
        return self.fields[self.r.col[name]].strip()

    def _err(self, name, msg):
        return ParseError(self.r.path, self.ln, self.r.col[name] + 1, msg)

    def str(self, name):
        v = self._raw(name)
        if not v:
            raise self._err(name, f"empty {name}")
        return v

    def float(self, name, optional=False):
        v = self._raw(name)
        if optional and v == "":
            return None
        try:
            x = float(v)
        except ValueError:
            raise self._err(name, f"cannot parse {v!r} as a number") from None
        if not math.isfinite(x):
            raise self._err(name, f"non-finite value {v!r}")
        return x

    def int(self, name):
        v = self._raw(name)
        try:
            return int(v)
        except ValueError:
            raise self._err(name, f"cannot parse {v!r} as an integer") from None

    def bool(self, name):
        v = self._raw(name).lower()
        if v in ("1", "true"):
            return True
        if v in ("0", "false"):
            return False
        raise self._err(name, f"cannot parse {v!r} as a boolean")


# -- model -----------------------------------------------------------------------

def _tech_key(cell_id, kind):
    return cell_id, kind


def save_model(model: Model, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    p = lambda name: os.path.join(out_dir, name)
    write_csv(p("model.csv"), ("key", "value"),
              [("base_world_price", model.base_world_price), ("base_nonland_wage", model.base_nonland_wage),
               ("base_fert_price", model.base_fert_price), ("numeraire", model.numeraire)])
    cells = sorted(model.cells, key=lambda c: c.cell_id)
    write_csv(p("cells.csv"), CELLS, [
        (c.cell_id, c.lon, c.lat, c.land_endowment, c.water_endowment, c.land_supply_elasticity,
         c.water_supply_elasticity, c.base_water_price) for c in cells])
    techs = [(c, t) for c in cells for t in sorted(c.technologies, key=lambda t: t.kind)]
    write_csv(p("technologies.csv"), TECHNOLOGIES, [
        (c.cell_id, t.kind, t.base_acres, t.base_n_rate, t.base_yield, t.base_input_values["land"],
         t.base_input_values.get("water", ""), t.base_input_values["nonland"], t.base_input_values["fert"])
        for c, t in techs])
    write_csv(p("nests.csv"), NESTS, [
        (c.cell_id, t.kind, i, n.scale, n.share, n.sigma) for c, t in techs for i, n in enumerate(t.nests)])
    write_csv(p("transfer.csv"), TRANSFER, [
        (c.cell_id, t.kind, t.transfer.y_max, t.transfer.b, t.transfer.c, t.transfer.alpha0,
         t.transfer.alpha1, t.transfer.alpha2) for c, t in techs])
    write_csv(p("regions.csv"), REGIONS, [
        (r.region_id, r.is_gridded, r.base_food_demand, r.base_biofuel_demand, r.income_elasticity,
         r.demand_price_elasticity, r.base_supply, r.supply_price_elasticity,
         r.nonland_supply_elasticity, r.fert_supply_elasticity, r.price_margin) for r in model.regions])
    write_csv(p("masks.csv"), MASKS, [
        (b, cid) for b in sorted(model.masks) for cid in sorted(model.masks[b])])
    return out_dir


def load_model(model_dir, validate: bool = True, n_regions: int | None = N_REGIONS,
               require_nests: bool = True) -> Model:
    """Read a model directory; raises ParseError, SchemaMismatch or ValidationFailed.

    With ``require_nests=False`` a missing nests.csv yields technologies
    without nests (input to calibration).
    """
    p = lambda name: os.path.join(model_dir, name)
    kv = {}
    for row in _Reader(p("model.csv"), ("key", "value")):
        key = row.str("key")
        if key not in MODEL_KEYS:
            raise row._err("key", f"unknown model key {key!r}")
        kv[key] = row.str("value") if key == "numeraire" else row.float("value")
    missing = [k for k in MODEL_KEYS if k not in kv]
    if missing:
        raise SchemaMismatch(p("model.csv"), missing=missing)

    nests = defaultdict(dict)
    nest_rows = _Reader(p("nests.csv"), NESTS) if require_nests or os.path.exists(p("nests.csv")) else ()
    for row in nest_rows:
        key = _tech_key(row.int("cell_id"), row.str("kind"))
        nests[key][row.int("level")] = CesNest(row.float("scale"), row.float("share"), row.float("sigma"))
    transfer = {}
    for row in _Reader(p("transfer.csv"), TRANSFER):
        key = _tech_key(row.int("cell_id"), row.str("kind"))
        transfer[key] = TransferParams(*(row.float(k) for k in TRANSFER[2:]))
    techs = defaultdict(list)
    for row in _Reader(p("technologies.csv"), TECHNOLOGIES):
        cid, kind = row.int("cell_id"), row.str("kind")
        key = _tech_key(cid, kind)
        if key not in transfer:
            raise row._err("kind", f"no transfer parameters for cell {cid}/{kind}")
        values = {"land": row.float("land_value"), "nonland": row.float("nonland_value"),
                  "fert": row.float("fert_value")}
        water = row.float("water_value", optional=True)
        if water is not None:
            values["water"] = water
        levels = nests.get(key, {})
        techs[cid].append(Technology(
            kind, tuple(levels[i] for i in sorted(levels)), transfer[key], row.float("base_acres"),
            row.float("base_n_rate"), row.float("base_yield"), values))

    masks = defaultdict(list)
    tags = defaultdict(set)
    for row in _Reader(p("masks.csv"), MASKS):
        b, cid = row.str("basin_id"), row.int("cell_id")
        masks[b].append(cid)
        tags[cid].add(b)

    cells = []
    for row in _Reader(p("cells.csv"), CELLS):
        cid = row.int("cell_id")
        cells.append(GridCell(
            cid, row.float("lon"), row.float("lat"), row.float("land_endowment"),
            row.float("water_endowment"), tuple(techs.get(cid, ())), row.float("land_supply_elasticity"),
            row.float("water_supply_elasticity"), row.float("base_water_price"), frozenset(tags[cid])))

    regions = []
    for row in _Reader(p("regions.csv"), REGIONS):
        regions.append(Region(row.str("region_id"), row.bool("is_gridded"),
                              *(row.float(k) for k in REGIONS[2:])))

    model = Model(tuple(cells), tuple(regions), kv["base_world_price"], kv["base_nonland_wage"],
                  kv["base_fert_price"], kv["numeraire"], {b: tuple(ids) for b, ids in masks.items()})
    if validate:
        report = validate_model(model, n_regions=n_regions)
        if report:
            raise ValidationFailed(report)
    return model


# -- pathway -----------------------------------------------------------------------

def save_pathway(pathway: PathwaySpec, out_dir, name="pathway.csv"):
    os.makedirs(out_dir, exist_ok=True)
    rows = [(p.region_id, p.start, p.end, var, float(rate))
            for p in pathway.periods for var, rate in sorted(p.rates.items())]
    write_csv(os.path.join(out_dir, name), PATHWAY, rows)


def load_pathway(path) -> PathwaySpec:
    if os.path.isdir(path):
        path = os.path.join(path, "pathway.csv")
    periods = {}
    for row in _Reader(path, PATHWAY):
        key = (row.str("region_id"), row.int("start"), row.int("end"))
        periods.setdefault(key, {})[row.str("variable")] = row.float("rate")
    return PathwaySpec(tuple(Period(r, s, e, rates) for (r, s, e), rates in periods.items()))


# -- transfer points and fits --------------------------------------------------------

def load_points(path) -> dict:
    """Group id -> (yield points, leaching points)."""
    out = {}
    for row in _Reader(path, POINTS):
        g = row.str("group")
        n = row.float("n_rate")
        ys, ls = out.setdefault(g, ([], []))
        y = row.float("yield", optional=True)
        if y is not None:
            ys.append(ResponsePoint(n, y))
        lv = row.float("leaching", optional=True)
        if lv is not None:
            ls.append(ResponsePoint(n, lv))
    return out


def save_fits(rows, path):
    write_csv(path, FITS, rows)


# -- sweeps ----------------------------------------------------------------------------

def sweep_rows(sweep: SweepResult):
    rows = []
    for key in sorted(sweep.aggregates, key=lambda k: (k[0], -k[1])):
        y, s = key
        prices = sweep.prices[key]
        for basin in sorted(sweep.aggregates[key]):
            land, prod, leach = sweep.aggregates[key][basin]
            rows.append((y, s, basin, land, prod, leach, *prices, sweep.iterations[key]))
    return rows


def save_sweep(sweep: SweepResult, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    write_csv(os.path.join(out_dir, "sweep.csv"), SWEEP, sweep_rows(sweep))
    write_csv(os.path.join(out_dir, "failures.csv"), FAILURES,
              [(y, s, msg) for (y, s), msg in sorted(sweep.failures.items())])


def load_sweep(out_dir) -> SweepResult:
    path = os.path.join(out_dir, "sweep.csv") if os.path.isdir(out_dir) else out_dir
    agg, prices, iters = {}, {}, {}
    for row in _Reader(path, SWEEP):
        key = (row.int("year"), row.float("shock"))
        agg.setdefault(key, {})[row.str("basin")] = (row.float("land"), row.float("production"),
                                                      row.float("leaching"))
        prices[key] = (row.float("world_price"), row.float("nonland_wage"), row.float("fert_price"))
        iters[key] = row.int("iterations")
    failures = {}
    fpath = os.path.join(os.path.dirname(path), "failures.csv")
    if os.path.exists(fpath):
        for row in _Reader(fpath, FAILURES):
            failures[(row.int("year"), row.float("shock"))] = row.str("error")
    keys = set(agg) | set(failures)
    years = tuple(sorted({k[0] for k in keys}))
    shocks = tuple(sorted({k[1] for k in keys}, key=abs))
    return SweepResult(years, shocks, agg, prices, iters, failures=failures)

"""Basin aggregation, table conventions, shock elasticities, and thresholds."""
from __future__ import annotations

import hashlib
import math
import os
import tempfile
from typing import NamedTuple

import numpy as np

from .errors import DomainError, MissingKey

METRICS = ("land", "production", "leaching")
NATIONAL = "national"
TABLE_SHOCKS = (-0.24, -0.41)


class BasinMask(NamedTuple):
    basin_id: str
    cell_ids: frozenset


class _NotAchievable:
    """Returned by :func:`find_threshold` when no shock on the grid suffices."""
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "NOT_ACHIEVABLE"

    __str__ = __repr__

    def __bool__(self):
        return False


NOT_ACHIEVABLE = _NotAchievable()


def atomic_write(path, text: str):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- aggregation -------------------------------------------------------------------

def _cell_ids(mask):
    return mask.cell_ids if isinstance(mask, BasinMask) else mask


def _selection(cells, mask):
    ids = np.fromiter(sorted(set(_cell_ids(mask))), dtype=np.int64)
    known = np.isin(ids, cells.cell_id)
    if not known.all():
        raise MissingKey(f"mask names unknown cell id(s): {ids[~known][:10].tolist()}")
    sel = np.flatnonzero(np.isin(cells.cell_id, ids))
    return sel[np.argsort(cells.cell_id[sel], kind="stable")]


def _sums(cells, sel):
    return (math.fsum(cells.acres[sel]), math.fsum(cells.output[sel]), math.fsum(cells.leaching[sel]))


def aggregate(equilibrium, mask) -> tuple:
    """(land acres, production tons, leaching kg-N) summed over the mask cells.

    ``mask`` is a :class:`BasinMask` or any iterable of cell ids.  Sums are
    correctly rounded, so the result does not depend on summation order.
    """
    cells = getattr(equilibrium, "cells", equilibrium)
    return _sums(cells, _selection(cells, mask))


def aggregate_all(equilibrium, model, masks=None) -> dict:
    masks = model.masks if masks is None else masks
    cells = equilibrium.cells
    basins = {NATIONAL: _sums(cells, np.arange(len(cells)))}
    for name in sorted(masks):
        basins[name] = aggregate(equilibrium, masks[name])
    return {
        "basins": basins,
        "prices": (equilibrium.world_price, equilibrium.nonland_wage, equilibrium.fert_price),
        "iterations": equilibrium.iterations,
        "digest": physical_digest(equilibrium),
        "diagnostics": solve_diagnostics(equilibrium),
    }


PHYSICAL_FIELDS = ("acres", "n_rate", "output", "leaching", "nonland", "fert", "water")


def physical_digest(equilibrium) -> str:
    """sha256 over the raw bytes of every per-technology physical quantity."""
    h = hashlib.sha256()
    cells = equilibrium.cells
    h.update(np.ascontiguousarray(cells.cell_id).tobytes())
    for name in PHYSICAL_FIELDS:
        h.update(np.ascontiguousarray(getattr(cells, name), dtype=np.float64).tobytes())
    return h.hexdigest()


def solve_diagnostics(equilibrium) -> tuple:
    """(max |market residual|, max zero-profit gap over live uncapped technologies)."""
    cells = equilibrium.cells
    free = (cells.cap == 0) & (cells.status == 0)
    gap = float(np.max(cells.zero_profit_gap[free])) if free.any() else 0.0
    return float(np.max(np.abs(equilibrium.residual))), gap


# -- table conventions -------------------------------------------------------------

def relative_to_status_quo(sweep, basin, metric, year, shock) -> float:
    """Percent change against the same year's zero-shock solve."""
    base = sweep.value(basin, metric, year, 0.0)
    if base == 0:
        raise DomainError(f"zero status-quo {metric} for {basin} in {year}")
    return 100.0 * (sweep.value(basin, metric, year, shock) - base) / base


def relative_to_base_year(sweep, basin, metric, year, shock) -> float:
    """Level as a percentage of the benchmark key."""
    by, bs = sweep.benchmark
    base = sweep.value(basin, metric, by, bs)
    if base == 0:
        raise DomainError(f"zero benchmark {metric} for {basin}")
    return 100.0 * sweep.value(basin, metric, year, shock) / base


def shock_elasticity(sweep, metric, year, basin=NATIONAL) -> float:
    """OLS slope of ln(value) on ln(1 + shock) across the year's shocks, as a magnitude."""
    pts = [(s, sweep.value(basin, metric, y, s)) for (y, s) in sorted(sweep.aggregates) if y == year]
    if len(pts) < 3:
        raise DomainError(f"need at least 3 shock levels at {year}, have {len(pts)}")
    s, v = np.array(pts).T
    if np.any(v <= 0):
        raise DomainError("elasticity needs positive values")
    x = np.log1p(s)
    y = np.log(v)
    xc = x - x.mean()
    return abs(float(np.dot(xc, y - y.mean()) / np.dot(xc, xc)))


def find_threshold(sweep, through_year, metrics=("leaching", "land"), basin=NATIONAL):
    """Smallest shock (integer percent) keeping every metric at or below the
    benchmark in every sweep year up to ``through_year``.

    Returns :data:`NOT_ACHIEVABLE` when even a 50% reduction does not suffice.
    """
    by, bs = sweep.benchmark
    years = sorted(y for y in sweep.years if y <= through_year)
    if not years:
        raise MissingKey(f"sweep has no year <= {through_year}")
    bench = {m: sweep.value(basin, m, by, bs) for m in metrics}
    for k in range(51):
        s = -k / 100
        if all(sweep.value(basin, m, y, s) <= bench[m] for y in years for m in metrics):
            return k
    return NOT_ACHIEVABLE


# -- files -------------------------------------------------------------------------

GRIDDED_HEADER = ("cell_id", "lon", "lat", "land_acres", "production_tons", "n_rate", "leaching_kg")


def _g(x):
    return "%.17g" % x


def gridded_rows(equilibrium, model):
    """Per-cell totals in ascending cell_id: (id, lon, lat, acres, tons, n_rate, leaching)."""
    cells = equilibrium.cells
    ids = np.unique(cells.cell_id)
    pos = np.searchsorted(ids, cells.cell_id)
    k = ids.size
    acres = np.zeros(k)
    out = np.zeros(k)
    fert = np.zeros(k)
    leach = np.zeros(k)
    for i in np.argsort(cells.cell_id, kind="stable"):
        acres[pos[i]] += cells.acres[i]
        out[pos[i]] += cells.output[i]
        fert[pos[i]] += cells.fert[i]
        leach[pos[i]] += cells.leaching[i]
    rows = []
    for j, cid in enumerate(ids.tolist()):
        c = model.cells[model.cell_index[cid]]
        n = fert[j] / acres[j] if acres[j] > 0 else 0.0
        rows.append((cid, c.lon, c.lat, acres[j], out[j], n, leach[j]))
    return rows


def emit_gridded(equilibrium, model, path):
    """Write one row per cell; decimal values at 17 significant digits."""
    lines = [",".join(GRIDDED_HEADER)]
    for r in gridded_rows(equilibrium, model):
        lines.append(",".join([str(r[0])] + [_g(x) for x in r[1:]]))
    atomic_write(path, "\n".join(lines) + "\n")


TABLE_HEADER = ("basin", "metric", "year", "shock", "value")


def outcome_table(sweep, kind="status-quo", basins=None, years=None, shocks=TABLE_SHOCKS):
    """Rows (basin, metric, year, shock, percent) in one of the two conventions."""
    fn = {"status-quo": relative_to_status_quo, "base-year": relative_to_base_year}.get(kind)
    if fn is None:
        raise DomainError(f"unknown table kind {kind!r}")
    if basins is None:
        any_key = next(iter(sweep.aggregates))
        basins = [b for b in sweep.aggregates[any_key] if b != NATIONAL] + [NATIONAL]
    years = sweep.years if years is None else years
    rows = []
    for b in basins:
        for m in METRICS:
            for y in years:
                for s in shocks:
                    v = fn(sweep, b, m, y, s)
                    if not math.isfinite(v):
                        raise DomainError(f"non-finite table value at {(b, m, y, s)}")
                    rows.append((b, m, y, s, v))
    return rows


def format_table(rows) -> str:
    lines = [",".join(TABLE_HEADER)]
    for b, m, y, s, v in rows:
        lines.append(f"{b},{m},{y},{s:.2f},{v:.17g}")
    return "\n".join(lines) + "\n"


def write_table(rows, path):
    atomic_write(path, format_table(rows))


def layout(rows) -> str:
    """Human-readable grid: one line per (basin, metric), one column per (year, shock)."""
    cols = sorted({(y, s) for _, _, y, s, _ in rows}, key=lambda k: (k[0], -k[1]))
    vals = {(b, m, y, s): v for b, m, y, s, v in rows}
    order = list(dict.fromkeys((b, m) for b, m, *_ in rows))
    head = "basin/metric".ljust(26) + "".join(f"{y}:{round(-s * 100)}%".rjust(11) for y, s in cols)
    out = [head]
    for b, m in order:
        out.append(f"{b}/{m}".ljust(26) + "".join(f"{vals[(b, m, y, s)]:11.1f}" for y, s in cols))
    return "\n".join(out) + "\n"

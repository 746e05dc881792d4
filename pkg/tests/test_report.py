import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridpe.errors import DomainError, MissingKey
from gridpe.market import solve_equilibrium
from gridpe.report import (METRICS, NATIONAL, NOT_ACHIEVABLE, BasinMask, aggregate, aggregate_all,
                           emit_gridded, find_threshold, format_table, layout, outcome_table,
                           relative_to_base_year, relative_to_status_quo, shock_elasticity)
from gridpe.scenario import SHOCK_GRID, YEAR_GRID, SweepResult, build_scenario
from tests.conftest import rel


def make_sweep(fn, years=YEAR_GRID, shocks=SHOCK_GRID, basins=(NATIONAL,)):
    """SweepResult whose value(basin, metric, year, shock) is fn(basin, metric, year, shock)."""
    agg = {(y, s): {b: tuple(fn(b, m, y, s) for m in METRICS) for b in basins}
           for y in years for s in shocks}
    return SweepResult(tuple(years), tuple(shocks), agg)


def scan_oracle(table, bench, through_index):
    """First shock index where every covered year is at or below the benchmark.

    ``table`` has shape (metric, year, shock); vectorized, independent of the
    package's loop."""
    ok = (table[:, : through_index + 1, :] <= bench[:, None, None]).all(axis=(0, 1))
    hits = np.flatnonzero(ok)
    return int(hits[0]) if hits.size else None


# -- aggregation -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def eq(small):
    model, pathway = small
    return solve_equilibrium(model, build_scenario(pathway, 2035, -0.3))


def test_all_cells_equal_national(small, eq):
    model, _ = small
    national = aggregate_all(eq, model)["basins"][NATIONAL]
    assert aggregate(eq, [c.cell_id for c in model.cells]) == national
    assert national[0] == pytest.approx(eq.cells.acres.sum(), rel=1e-12)


def test_empty_mask(eq):
    assert aggregate(eq, BasinMask("none", frozenset())) == (0.0, 0.0, 0.0)


def test_unknown_cell_rejected(eq):
    with pytest.raises(MissingKey):
        aggregate(eq, [-1])


@settings(max_examples=30, deadline=None)
@given(st.randoms(use_true_random=False))
def test_partition_additivity(small, eq, rnd):
    model, _ = small
    ids = [c.cell_id for c in model.cells]
    rnd.shuffle(ids)
    cut = rnd.randint(0, len(ids))
    a, b = aggregate(eq, ids[:cut]), aggregate(eq, ids[cut:])
    total = aggregate(eq, ids)
    for x, y, t in zip(a, b, total):
        assert abs(x + y - t) <= 1e-12 * t


def test_basins_overlap_and_are_reported(small, eq):
    model, _ = small
    basins = aggregate_all(eq, model)["basins"]
    assert set(basins) == {NATIONAL, *model.masks}
    for name, ids in model.masks.items():
        assert 0 < basins[name][0] <= basins[NATIONAL][0]


# -- table conventions -------------------------------------------------------------------

def test_status_quo_arithmetic():
    sw = make_sweep(lambda b, m, y, s: 100.0 if s == 0 else 83.4)
    assert relative_to_status_quo(sw, NATIONAL, "leaching", 2030, -0.24) == pytest.approx(-16.6, rel=1e-12)
    assert relative_to_status_quo(sw, NATIONAL, "leaching", 2030, 0.0) == 0.0


def test_base_year_arithmetic():
    sw = make_sweep(lambda b, m, y, s: 200.0 if (y, s) == (2020, 0.0) else 229.0)
    assert relative_to_base_year(sw, NATIONAL, "leaching", 2030, -0.24) == pytest.approx(114.5, rel=1e-12)
    assert relative_to_base_year(sw, NATIONAL, "land", 2020, 0.0) == 100.0
    low = make_sweep(lambda b, m, y, s: 200.0 if (y, s) == (2020, 0.0) else 150.0)
    assert relative_to_base_year(low, NATIONAL, "land", 2050, -0.5) < 100.0


@settings(max_examples=50)
@given(st.floats(1e-3, 1e3), st.floats(0.5, 2.0))
def test_percentages_are_unit_free(scale, ratio):
    def fn(b, m, y, s):
        return 7.0 * (1 + s) ** 0.3 * (ratio if y > 2020 else 1.0)
    a = make_sweep(fn)
    b = make_sweep(lambda *k: scale * fn(*k))
    for key in [(2030, -0.24), (2050, -0.41)]:
        assert relative_to_status_quo(a, NATIONAL, "land", *key) == pytest.approx(
            relative_to_status_quo(b, NATIONAL, "land", *key), rel=1e-12)
        assert relative_to_base_year(a, NATIONAL, "land", *key) == pytest.approx(
            relative_to_base_year(b, NATIONAL, "land", *key), rel=1e-12)


def test_missing_keys():
    sw = make_sweep(lambda *k: 1.0, years=(2030,), shocks=(0.0, -0.24))
    with pytest.raises(MissingKey):
        relative_to_status_quo(sw, NATIONAL, "land", 2030, -0.41)
    with pytest.raises(MissingKey):
        relative_to_base_year(sw, NATIONAL, "land", 2030, -0.24)


def test_zero_benchmark_rejected():
    sw = make_sweep(lambda *k: 0.0, years=(2020,), shocks=(0.0, -0.24))
    with pytest.raises(DomainError):
        relative_to_base_year(sw, NATIONAL, "land", 2020, -0.24)


def test_outcome_table_layout():
    basins = ("mississippi", "great_lakes", "chesapeake", NATIONAL)
    sw = make_sweep(lambda b, m, y, s: (1 + s) * (1 + (y - 2020) / 100), basins=basins)
    rows = outcome_table(sw, "status-quo", basins=basins[:3], years=(2020, 2030))
    assert len(rows) == 3 * 3 * 2 * 2
    assert {r[3] for r in rows} == {-0.24, -0.41}
    assert all(math.isfinite(r[4]) for r in rows)
    assert rows[0][:4] == ("mississippi", "land", 2020, -0.24)
    assert rows[0][4] == pytest.approx(-24.0, rel=1e-12)
    text = format_table(rows)
    assert text.splitlines()[0] == "basin,metric,year,shock,value"
    grid = layout(rows).splitlines()
    assert len(grid) == 1 + 3 * 3
    assert "2030:41%" in grid[0]
    base = outcome_table(sw, "base-year", basins=[NATIONAL], years=(2030,))
    assert base[0][4] == pytest.approx(100 * 0.76 * 1.1, rel=1e-12)
    with pytest.raises(DomainError):
        outcome_table(sw, "per-capita")


# -- elasticities ------------------------------------------------------------------------

@pytest.mark.parametrize("eta", [0.2, 0.4, 0.5, 1.3])
def test_elasticity_of_exact_power_law(eta):
    sw = make_sweep(lambda b, m, y, s: 42.0 * (1 + s) ** eta)
    assert abs(shock_elasticity(sw, "production", 2030) - eta) < 1e-10


def test_elasticity_uses_the_named_year_only():
    sw = make_sweep(lambda b, m, y, s: (1 + s) ** (0.1 if y == 2030 else 0.9))
    assert shock_elasticity(sw, "land", 2030) == pytest.approx(0.1, abs=1e-10)


def test_elasticity_preconditions():
    with pytest.raises(DomainError):
        shock_elasticity(make_sweep(lambda *k: 1.0, shocks=(0.0, -0.1)), "land", 2030)
    with pytest.raises(DomainError):
        shock_elasticity(make_sweep(lambda b, m, y, s: s), "land", 2030)


# -- thresholds --------------------------------------------------------------------------

def test_threshold_closed_form_example():
    bench = 500.0

    def fn(b, m, y, s):
        if m == "leaching" and y == 2025:
            return bench * (1.1 + s / 0.4)   # crosses the benchmark at s = -0.04
        return bench * (1 + s)
    sw = make_sweep(fn)
    assert find_threshold(sw, 2025) == 4
    assert find_threshold(sw, 2020) == 0


def test_threshold_not_achievable():
    sw = make_sweep(lambda b, m, y, s: 10.0 * (1 + s / 10) * (1.5 if (m == "land" and y > 2020) else 1.0))
    assert find_threshold(sw, 2030) is NOT_ACHIEVABLE
    assert not NOT_ACHIEVABLE


def test_threshold_missing_year():
    sw = make_sweep(lambda *k: 1.0, years=(2030,))
    with pytest.raises(MissingKey):
        find_threshold(sw, 2025)


def _random_table(rng):
    """(metric, year, shock) values; monotone, noisy, or flat at the benchmark."""
    kind = rng.integers(3)
    s = np.array(SHOCK_GRID)
    t = np.arange(len(YEAR_GRID))[:, None]
    out = np.empty((3, len(YEAR_GRID), len(SHOCK_GRID)))
    for m in range(3):
        growth = 1 + rng.uniform(0, 0.05) * t
        slope = rng.uniform(0.05, 1.0)
        out[m] = 100 * growth * (1 + s) ** slope
        if kind == 1:
            out[m] *= 1 + rng.normal(0, 0.02, out[m].shape)
        elif kind == 2:
            out[m] = np.where(rng.random(out[m].shape) < 0.3, out[m, 0, 0], out[m])
    out[:, 0, 0] = 100.0
    return out


def _sweep_from(table):
    return make_sweep(lambda b, m, y, s: float(table[METRICS.index(m), YEAR_GRID.index(y),
                                                     SHOCK_GRID.index(s)]))


@pytest.mark.parametrize("seed", range(20))
def test_threshold_matches_scan(seed):
    rng = np.random.default_rng(seed)
    table = _random_table(rng)
    sw = _sweep_from(table)
    metrics = ("leaching", "land")
    idx = [METRICS.index(m) for m in metrics]
    for through in YEAR_GRID:
        want = scan_oracle(table[idx], table[idx, 0, 0], YEAR_GRID.index(through))
        got = find_threshold(sw, through, metrics)
        assert (got is NOT_ACHIEVABLE) if want is None else got == want


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("scale", [2.0**-7, 3.0, 1e6])
def test_threshold_unit_invariant(seed, scale):
    table = _random_table(np.random.default_rng(100 + seed))
    a = find_threshold(_sweep_from(table), 2040)
    b = find_threshold(_sweep_from(table * scale), 2040)
    assert a == b or (a is NOT_ACHIEVABLE and b is NOT_ACHIEVABLE)


# -- gridded output ----------------------------------------------------------------------

def test_emit_gridded(tmp_path, small, eq):
    model, _ = small
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    emit_gridded(eq, model, p1)
    emit_gridded(eq, model, p2)
    assert p1.read_bytes() == p2.read_bytes()
    lines = p1.read_text().splitlines()
    assert lines[0] == "cell_id,lon,lat,land_acres,production_tons,n_rate,leaching_kg"
    assert len(lines) == 1 + len(model.cells)
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    assert (np.diff(data[:, 0]) > 0).all()
    totals = aggregate(eq, [c.cell_id for c in model.cells])
    for col, t in zip((3, 4, 6), totals):
        assert rel(math.fsum(data[:, col]), t) < 1e-12
    # 17 significant digits round-trip exactly
    first = lines[1].split(",")
    c0 = model.cells[model.cell_index[int(first[0])]]
    assert float(first[1]) == c0.lon and float(first[2]) == c0.lat


def test_no_temp_files_left(tmp_path, small, eq):
    model, _ = small
    emit_gridded(eq, model, tmp_path / "g.csv")
    assert [p.name for p in tmp_path.iterdir()] == ["g.csv"]

from dataclasses import replace

import pytest

from gridpe.market import Scenario, solve_equilibrium
from gridpe.model import validate_model
from gridpe.synth import SynthSpec, synthesize


def _swap_cell(model, i, cell):
    return replace(model, cells=model.cells[:i] + (cell,) + model.cells[i + 1:])


def test_generated_model_is_clean(small):
    model, _ = small
    assert validate_model(model) == []


def test_yield_mismatch_reports_one_violation(small):
    model, _ = small
    cell = model.cells[3]
    t = cell.technologies[0]
    bad = replace(t, transfer=replace(t.transfer, y_max=t.transfer.y_max * 1.01))
    report = validate_model(_swap_cell(model, 3, replace(cell, technologies=(bad,) + cell.technologies[1:])))
    assert [v.code for v in report] == ["CALIB_YIELD"]
    assert str(cell.cell_id) in report[0].location


def test_two_gridded_regions_is_topology_error(small):
    model, _ = small
    regs = model.regions
    report = validate_model(replace(model, regions=(regs[0], replace(regs[1], is_gridded=True)) + regs[2:]))
    assert [v.code for v in report] == ["TOPOLOGY"]


def test_region_count(small):
    model, _ = small
    report = validate_model(replace(model, regions=model.regions[:-1]))
    assert "TOPOLOGY" in {v.code for v in report}


def test_irrigated_cell_without_water(small):
    model, _ = small
    i = next(k for k, c in enumerate(model.cells) if any(t.kind == "irrigated" for t in c.technologies))
    report = validate_model(_swap_cell(model, i, replace(model.cells[i], water_endowment=0.0)))
    assert "WATER_ENDOWMENT" in {v.code for v in report}


def test_land_endowment_below_base_acres(small):
    model, _ = small
    cell = model.cells[0]
    acres = sum(t.base_acres for t in cell.technologies)
    report = validate_model(_swap_cell(model, 0, replace(cell, land_endowment=0.5 * acres)))
    assert "LAND_ENDOWMENT" in {v.code for v in report}


def test_validation_is_pure(small):
    model, _ = small
    bad = replace(model, regions=model.regions[:-1])
    assert validate_model(bad) == validate_model(bad)
    assert validate_model(model) == validate_model(model)


@pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
def test_valid_models_solve_at_baseline(seed):
    model, _ = synthesize(SynthSpec(n_cells=60, irrigated_share=0.4), seed=seed)
    assert validate_model(model) == []
    eq = solve_equilibrium(model, Scenario.baseline(model))
    assert eq.iterations == 0
    assert eq.residual_norm < 1e-10

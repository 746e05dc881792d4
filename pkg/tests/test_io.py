import filecmp
import os

import pytest

from gridpe.errors import ParseError, SchemaMismatch, ValidationFailed
from gridpe.io import (load_model, load_pathway, load_points, load_sweep, save_model, save_pathway,
                       save_sweep)
from gridpe.model import validate_model
from gridpe.scenario import run_sweep
from gridpe.synth import SynthSpec, generate_synthetic


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("model")
    generate_synthetic(SynthSpec(n_cells=100), seed=42, out_dir=str(d))
    return d


def _same_tree(a, b):
    names = sorted(os.listdir(a))
    assert names == sorted(os.listdir(b))
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    return not mismatch and not errors


def test_generator_output_loads_clean(model_dir, small):
    model = load_model(model_dir)
    assert validate_model(model) == []
    ref, _ = small
    assert len(model.cells) == len(ref.cells) == 100
    assert [c.cell_id for c in model.cells] == sorted(c.cell_id for c in ref.cells)


def test_round_trip_is_field_exact(model_dir, small):
    ref, _ = small
    model = load_model(model_dir)
    by_id = {c.cell_id: c for c in ref.cells}
    for c in model.cells:
        r = by_id[c.cell_id]
        assert (c.lon, c.lat, c.land_endowment, c.water_endowment) == (r.lon, r.lat, r.land_endowment,
                                                                       r.water_endowment)
        assert c.basin_tags == r.basin_tags
        for t, u in zip(sorted(c.technologies, key=lambda t: t.kind),
                        sorted(r.technologies, key=lambda t: t.kind)):
            assert t == u
    assert model.regions == ref.regions
    assert {k: sorted(v) for k, v in model.masks.items()} == {k: sorted(v) for k, v in ref.masks.items()}


def test_emit_of_load_is_byte_identical(model_dir, tmp_path):
    save_model(load_model(model_dir), tmp_path)
    save_pathway(load_pathway(model_dir), tmp_path)
    assert _same_tree(model_dir, tmp_path)


def test_generator_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    generate_synthetic(SynthSpec(n_cells=100), seed=42, out_dir=str(a))
    generate_synthetic(SynthSpec(n_cells=100), seed=42, out_dir=str(b))
    assert _same_tree(a, b)
    c = tmp_path / "c"
    generate_synthetic(SynthSpec(n_cells=100), seed=43, out_dir=str(c))
    assert not filecmp.cmp(a / "cells.csv", c / "cells.csv", shallow=False)


def _copy(src, dst):
    dst.mkdir()
    for name in os.listdir(src):
        (dst / name).write_bytes((src / name).read_bytes())
    return dst


def test_missing_sigma_column(model_dir, tmp_path):
    d = _copy(model_dir, tmp_path / "m")
    lines = (d / "nests.csv").read_text().splitlines()
    cut = [",".join(f for i, f in enumerate(ln.split(",")) if i != 5) for ln in lines]
    assert lines[0].split(",")[5] == "sigma"
    (d / "nests.csv").write_text("\n".join(cut) + "\n")
    with pytest.raises(SchemaMismatch) as info:
        load_model(d)
    assert info.value.missing == ("sigma",)
    assert "sigma" in str(info.value)


def test_unknown_column(model_dir, tmp_path):
    d = _copy(model_dir, tmp_path / "m")
    lines = (d / "regions.csv").read_text().splitlines()
    lines = [lines[0] + ",colour"] + [ln + ",red" for ln in lines[1:]]
    (d / "regions.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaMismatch) as info:
        load_model(d)
    assert info.value.unknown == ("colour",)


def test_truncated_last_line(model_dir, tmp_path):
    d = _copy(model_dir, tmp_path / "m")
    text = (d / "cells.csv").read_text()
    n_lines = text.count("\n")
    last = text.rstrip("\n").rsplit("\n", 1)[1]
    (d / "cells.csv").write_text(text[: -len(last) - 1] + last[: len(last) // 2])
    with pytest.raises(ParseError) as info:
        load_model(d)
    assert info.value.line == n_lines
    assert info.value.path.endswith("cells.csv")
    assert f":{n_lines}:" in str(info.value)


def test_bad_number_names_column(model_dir, tmp_path):
    d = _copy(model_dir, tmp_path / "m")
    lines = (d / "transfer.csv").read_text().splitlines()
    fields = lines[3].split(",")
    fields[4] = "1;5"
    lines[3] = ",".join(fields)
    (d / "transfer.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as info:
        load_model(d)
    # columns are 1-based; column 5 of transfer.csv is c
    assert (info.value.line, info.value.column) == (4, 5)
    assert "1;5" in str(info.value)


def test_validation_failure_embeds_report(model_dir, tmp_path):
    d = _copy(model_dir, tmp_path / "m")
    lines = (d / "regions.csv").read_text().splitlines()
    lines = lines[:-1]
    (d / "regions.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationFailed) as info:
        load_model(d)
    assert "TOPOLOGY" in {v.code for v in info.value.report}
    # validation can be deferred
    assert len(load_model(d, validate=False).regions) == 15


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        load_model(tmp_path)


def test_sweep_round_trip(tmp_path, small):
    model, pathway = small
    sw = run_sweep(model, pathway, years=[2020, 2030], shocks=[0.0, -0.24, -0.41], keep_equilibria=False)
    save_sweep(sw, tmp_path)
    back = load_sweep(tmp_path)
    assert back.aggregates == sw.aggregates
    assert back.prices == sw.prices and back.iterations == sw.iterations
    assert back.years == sw.years and set(back.shocks) == set(sw.shocks)
    save_sweep(back, tmp_path / "again")
    assert (tmp_path / "sweep.csv").read_bytes() == (tmp_path / "again" / "sweep.csv").read_bytes()


def test_points_file(tmp_path):
    p = tmp_path / "points.csv"
    p.write_text("group,n_rate,yield,leaching\na,0,3.1,1.0\na,50,6.0,\nb,10,,2.5\n")
    pts = load_points(p)
    assert [q.n_rate for q in pts["a"][0]] == [0.0, 50.0]
    assert [q.value for q in pts["a"][1]] == [1.0]
    assert pts["b"][0] == [] and pts["b"][1][0].value == 2.5


def test_pathway_round_trip(tmp_path, small):
    _, pathway = small
    save_pathway(pathway, tmp_path)
    back = load_pathway(tmp_path)
    for rid in pathway.region_ids:
        for var in ("population", "income", "tfp", "biofuel"):
            assert back.multiplier(rid, var, 2050) == pathway.multiplier(rid, var, 2050)


def test_in_memory_and_file_models_solve_identically(model_dir, small):
    from gridpe.market import solve_equilibrium
    from gridpe.scenario import build_scenario
    ref, pathway = small
    loaded = load_model(model_dir)
    scen = build_scenario(pathway, 2040, -0.2)
    a = solve_equilibrium(ref, scen)
    b = solve_equilibrium(loaded, scen)
    assert a.world_price == b.world_price
    assert sorted(a.cells.output.tolist()) == sorted(b.cells.output.tolist())

import numpy as np
import pytest

from gridpe import kernel
from gridpe.market import Scenario, solve_equilibrium
from gridpe.production import evaluate_cells

needs_cython = pytest.mark.skipif("cython" not in kernel.available(), reason="extension not built")

FIELDS = ("acres", "n_rate", "output", "leaching", "nonland", "fert", "water", "log_rent",
          "log_water_price", "zero_profit_gap")


def test_python_backend_always_available():
    assert "python" in kernel.available()
    assert kernel.get_backend() in kernel.available()


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        kernel.set_backend("fortran")


def test_set_backend_round_trip():
    prev = kernel.set_backend("python")
    try:
        assert kernel.get_backend() == "python"
    finally:
        kernel.set_backend(prev)
    assert kernel.get_backend() == prev


def _max_rel(a, b):
    scale = np.maximum(np.abs(b), 1e-300)
    return float(np.max(np.abs(a - b) / scale)) if a.size else 0.0


@needs_cython
def test_backends_agree_on_cells(medium):
    model, _ = medium
    rng = np.random.default_rng(11)
    for _ in range(25):
        lp, lx, lf = rng.uniform(-0.5, 0.5, 3)
        tfp = rng.uniform(0.8, 1.3)
        c = evaluate_cells(model.arrays, lp, lx, lf, tfp=tfp, backend="cython")
        p = evaluate_cells(model.arrays, lp, lx, lf, tfp=tfp, backend="python")
        assert (c.status == p.status).all()
        assert (c.cap == p.cap).all()
        for name in FIELDS[:-1]:
            assert _max_rel(getattr(c, name), getattr(p, name)) < 1e-10, name


@needs_cython
def test_backends_agree_on_shutdown():
    from tests.oracles.two_cell import build_instance
    model = build_instance()
    lf = np.log(9.0 / model.base_fert_price)
    c = evaluate_cells(model.arrays, 0.0, 0.0, lf, backend="cython")
    p = evaluate_cells(model.arrays, 0.0, 0.0, lf, backend="python")
    assert (c.status == p.status).all() and (c.status == 1).any()


@needs_cython
def test_backends_agree_on_equilibrium(small):
    model, pathway = small
    from gridpe.scenario import build_scenario
    scen = build_scenario(pathway, 2040, -0.3)
    a = solve_equilibrium(model, scen, backend="cython")
    b = solve_equilibrium(model, scen, backend="python")
    assert abs(a.world_price / b.world_price - 1) < 1e-9
    assert _max_rel(a.cells.output, b.cells.output) < 1e-8

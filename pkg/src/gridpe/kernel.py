"""Backend selection for the per-cell solve.

The compiled extension is used when it imports; otherwise the numpy
implementation.  ``set_backend`` switches explicitly (tests, benchmarks).
"""
from . import _kernel_py

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

BACKENDS = {"python": _kernel_py}
if _ckernel is not None:
    BACKENDS["cython"] = _ckernel

_active = "cython" if _ckernel is not None else "python"


def available():
    return sorted(BACKENDS)


def get_backend() -> str:
    return _active


def set_backend(name: str) -> str:
    """Select a backend by name; returns the previously active one."""
    global _active
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} not available (have {available()})")
    prev, _active = _active, name
    return prev


def solve_cells(params, ltau, lp, lx, lf, max_iter=200, backend=None):
    """Solve every technology's sub-equilibrium.

    Returns ``(log_rent, log_water_price, status, iterations)`` arrays; status
    is 0 converged, 1 shut down (no positive rent clears zero profit), 2 failed.
    """
    mod = BACKENDS[backend or _active]
    return mod.solve_cells(params, float(ltau), float(lp), float(lx), float(lf), int(max_iter))

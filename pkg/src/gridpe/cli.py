"""Command-line interface: ``gridpe <command> ...``.

Exit codes: 0 success, 1 usage error, 2 solver failure, 3 I/O error.
Diagnostics go to stderr; data goes to files only.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field

from . import io as gio
from .errors import (CalibrationError, CellNoConvergence, DomainError, GridPEError, MissingKey,
                     NoConvergence, NonFiniteResidual, ParseError, SchemaMismatch, ValidationFailed)
from .report import atomic_write

log = logging.getLogger("gridpe")

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    model: str = ""
    pathway: str = ""
    masks: str = ""
    out: str = ""
    tol: float = 1e-8
    max_iter: int = 100
    damping: float = 1.0
    years: list = field(default_factory=lambda: list(range(2020, 2051, 5)))
    shocks: list = field(default_factory=lambda: [-k / 100 for k in range(51)])
    workers: int = 1
    seed: int = 42
    backend: str = ""

    def __post_init__(self):
        from .scenario import on_shock_grid
        if not self.tol > 0:
            raise DomainError("tol must be > 0")
        if not 0 < self.damping <= 1:
            raise DomainError("damping must lie in (0, 1]")
        if self.max_iter < 1 or self.workers < 1:
            raise DomainError("max_iter and workers must be >= 1")
        bad = [s for s in self.shocks if not on_shock_grid(s)]
        if bad:
            raise DomainError(f"shocks off the 1% grid: {bad[:5]}")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    @property
    def solver_opts(self):
        return {"tol": self.tol, "max_iter": self.max_iter, "damping": self.damping}

    @classmethod
    def from_file(cls, path, **overrides):
        with open(path) as fh:
            data = json.load(fh)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise DomainError(f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None


def build_parser():
    p = _Parser(prog="gridpe", description="Gridded partial-equilibrium corn-soy simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", help="write a synthetic model directory")
    s.add_argument("--out", required=True)
    s.add_argument("--n-cells", type=int, default=None)
    s.add_argument("--irrigated-share", type=float, default=None)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--spec", help="JSON file of generator settings")

    s = sub.add_parser("fit-transfer", help="fit Gompertz yield and quadratic leaching curves")
    s.add_argument("--points", required=True, help="CSV with group,n_rate,yield,leaching")
    s.add_argument("--out", required=True)

    s = sub.add_parser("calibrate", help="derive CES nests from benchmark records and transfer curves")
    s.add_argument("--model", required=True, help="model directory (nests.csv may be absent)")
    s.add_argument("--out", help="output directory (default: in place)")
    s.add_argument("--sigma-nonland", type=float, default=None)
    s.add_argument("--sigma-land-water", type=float, default=None)

    for name, helptext in (("solve", "solve one (year, shock) scenario"), ("sweep", "solve the years x shocks grid")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--model", required=name == "solve")
        s.add_argument("--pathway", help="pathway CSV (default: model directory's pathway.csv)")
        s.add_argument("--out", required=name == "solve")
        s.add_argument("--tol", type=float)
        s.add_argument("--max-iter", type=int)
        s.add_argument("--damping", type=float)
        s.add_argument("--backend", choices=("cython", "python"))
        if name == "solve":
            s.add_argument("--year", type=int, required=True)
            s.add_argument("--shock", type=float, default=0.0)
        else:
            s.add_argument("--config", help="JSON RunConfig")
            s.add_argument("--years", type=_ints)
            s.add_argument("--shocks", type=_floats)
            s.add_argument("--workers", type=int)
            s.add_argument("--keep-gridded", action="store_true", help="also write per-cell files")

    s = sub.add_parser("report", help="tables, elasticities, and thresholds from a sweep")
    s.add_argument("--sweep", required=True, help="sweep output directory")
    s.add_argument("--out", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--table", choices=("status-quo", "base-year"))
    g.add_argument("--elasticities", type=int, metavar="YEAR")
    g.add_argument("--threshold", type=int, metavar="THROUGH_YEAR")
    s.add_argument("--basins", help="comma-separated basins (default: all)")
    s.add_argument("--shocks", type=_floats, default=[-0.24, -0.41])
    s.add_argument("--layout", help="also write a human-readable grid to this file")
    return p


# -- commands --------------------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_tree(path):
    if os.path.isfile(path):
        return {os.path.basename(path): _sha256(path)}
    return {name: _sha256(os.path.join(path, name))
            for name in sorted(os.listdir(path)) if os.path.isfile(os.path.join(path, name))}


def _load_pathway(args):
    from .scenario import PathwaySpec
    path = args.pathway or os.path.join(args.model, "pathway.csv")
    return gio.load_pathway(path), path


def cmd_synth(args):
    from .synth import SynthSpec, generate_synthetic
    d = SynthSpec().to_dict()
    if args.spec:
        with open(args.spec) as fh:
            d.update(json.load(fh))
    if args.n_cells is not None:
        d["n_cells"] = args.n_cells
    if args.irrigated_share is not None:
        d["irrigated_share"] = args.irrigated_share
    generate_synthetic(SynthSpec.from_dict(d), args.seed, args.out)
    log.info("wrote synthetic model (%d cells, seed %d) to %s", d["n_cells"], args.seed, args.out)


def cmd_fit_transfer(args):
    from .transfer import fit_gompertz, fit_quadratic
    groups = gio.load_points(args.points)
    rows = []
    for g in sorted(groups):
        ys, ls = groups[g]
        p, diag = fit_gompertz(ys)
        lq = fit_quadratic(ls)
        if not diag.converged:
            log.warning("group %s: Gompertz fit did not converge (rmse %.3g)", g, diag.rmse)
        rows.append((g, p.y_max, p.b, p.c, lq.alpha0, lq.alpha1, lq.alpha2, diag.rmse,
                     diag.iterations, diag.converged))
    gio.save_fits(rows, args.out)
    log.info("fitted %d groups", len(rows))


def cmd_calibrate(args):
    from .model import Model, validate_model
    from .production import BaselineRecord, calibrate_technology
    from dataclasses import replace
    model = gio.load_model(args.model, validate=False, require_nests=False)
    sig = {}
    if args.sigma_nonland is not None:
        sig["nonland"] = args.sigma_nonland
    if args.sigma_land_water is not None:
        sig["land_water"] = args.sigma_land_water
    cells = []
    for c in model.cells:
        prices = {"output": model.base_output_price, "nonland": model.base_nonland_wage,
                  "fert": model.base_fert_price, "water": c.base_water_price}
        techs = []
        for t in c.technologies:
            base = BaselineRecord(t.kind, t.base_acres, t.base_n_rate, t.base_yield, t.base_input_values)
            try:
                techs.append(calibrate_technology(base, t.transfer, prices, sig))
            except CalibrationError as exc:
                raise CalibrationError(f"cell {c.cell_id}/{t.kind}: {exc}") from None
        cells.append(replace(c, technologies=tuple(techs)))
    out = Model(tuple(cells), model.regions, model.base_world_price, model.base_nonland_wage,
                model.base_fert_price, model.numeraire, model.masks)
    report = validate_model(out)
    for v in report:
        log.warning("%s", v)
    gio.save_model(out, args.out or args.model)
    if report:
        raise ValidationFailed(report)


def _solve_config(args, base=None):
    kw = {k: getattr(args, k, None) for k in ("tol", "max_iter", "damping", "workers", "years", "shocks")}
    kw = {k: v for k, v in kw.items() if v is not None}
    if getattr(args, "backend", None):
        kw["backend"] = args.backend
    for k in ("model", "pathway", "out"):
        if getattr(args, k, None):
            kw[k] = getattr(args, k)
    if base:
        return RunConfig.from_file(base, **kw)
    return RunConfig(**kw)


def cmd_solve(args):
    from .market import solve_equilibrium
    from .report import aggregate_all, emit_gridded
    from .scenario import build_scenario
    cfg = _solve_config(args)
    model = gio.load_model(args.model)
    pathway, _ = _load_pathway(args)
    scen = build_scenario(pathway, args.year, args.shock)
    eq = solve_equilibrium(model, scen, backend=cfg.backend or None, **cfg.solver_opts)
    os.makedirs(args.out, exist_ok=True)
    agg = aggregate_all(eq, model)
    rows = [("world_price", "", eq.world_price), ("nonland_wage", "", eq.nonland_wage),
            ("fert_price", "", eq.fert_price), ("residual_norm", "", eq.residual_norm),
            ("iterations", "", eq.iterations)]
    rows += [("regional_price", r, p) for r, p in eq.regional_prices.items()]
    for basin, vals in agg["basins"].items():
        rows += [(m, basin, v) for m, v in zip(("land", "production", "leaching"), vals)]
    gio.write_csv(os.path.join(args.out, "equilibrium.csv"), ("quantity", "scope", "value"), rows)
    emit_gridded(eq, model, os.path.join(args.out, "gridded.csv"))
    log.info("solved year %d shock %.2f in %d iterations; world price %.10g", args.year, args.shock,
             eq.iterations, eq.world_price)


def cmd_sweep(args):
    from .report import emit_gridded
    from .scenario import run_sweep
    cfg = _solve_config(args, args.config)
    if not cfg.model or not cfg.out:
        raise UsageError("sweep needs --model and --out (or a config naming them)")
    model = gio.load_model(cfg.model)
    pathway_path = cfg.pathway or os.path.join(cfg.model, "pathway.csv")
    pathway = gio.load_pathway(pathway_path)
    sweep = run_sweep(model, pathway, cfg.years, cfg.shocks, cfg.workers, cfg.solver_opts,
                      keep_equilibria=args.keep_gridded, backend=cfg.backend or None)
    gio.save_sweep(sweep, cfg.out)
    if args.keep_gridded:
        gdir = os.path.join(cfg.out, "gridded")
        os.makedirs(gdir, exist_ok=True)
        for (y, s), eq in sorted(sweep.equilibria.items()):
            emit_gridded(eq, model, os.path.join(gdir, f"gridded_{y}_{round(-s * 100):02d}.csv"))
    inputs = {"model/" + k: v for k, v in _hash_tree(cfg.model).items() if k != "pathway.csv"}
    inputs["pathway"] = _sha256(pathway_path)
    outputs = {}
    for root, _, files in os.walk(cfg.out):
        for name in files:
            full = os.path.join(root, name)
            rel = os.path.relpath(full, cfg.out)
            if rel != "manifest.json" and not name.startswith(".tmp-"):
                outputs[rel] = _sha256(full)
    manifest = {"config": asdict(cfg), "inputs": inputs, "outputs": dict(sorted(outputs.items())),
                "solved": len(sweep.aggregates), "failed": len(sweep.failures)}
    atomic_write(os.path.join(cfg.out, "manifest.json"), json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for key, msg in sorted(sweep.failures.items()):
        log.error("failed %s: %s", key, msg)
    log.info("sweep: %d solved, %d failed", len(sweep.aggregates), len(sweep.failures))
    if sweep.failures:
        return EXIT_SOLVER


def cmd_report(args):
    from .report import (METRICS, NOT_ACHIEVABLE, find_threshold, layout, outcome_table,
                         shock_elasticity, write_table)
    sweep = gio.load_sweep(args.sweep)
    basins = args.basins.split(",") if args.basins else None
    if args.table:
        rows = outcome_table(sweep, args.table, basins=basins, shocks=tuple(args.shocks))
        write_table(rows, args.out)
        if args.layout:
            atomic_write(args.layout, layout(rows))
    elif args.elasticities is not None:
        rows = [(m, args.elasticities, shock_elasticity(sweep, m, args.elasticities)) for m in METRICS]
        gio.write_csv(args.out, ("metric", "year", "elasticity"), rows)
    else:
        k = find_threshold(sweep, args.threshold)
        value = "NOT_ACHIEVABLE" if k is NOT_ACHIEVABLE else str(k)
        gio.write_csv(args.out, ("through_year", "metrics", "threshold_percent"),
                      [(args.threshold, "leaching;land", value)])


COMMANDS = {"synth": cmd_synth, "fit-transfer": cmd_fit_transfer, "calibrate": cmd_calibrate,
            "solve": cmd_solve, "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        return COMMANDS[args.command](args) or EXIT_OK
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (NoConvergence, CellNoConvergence, NonFiniteResidual, CalibrationError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, ParseError, SchemaMismatch, ValidationFailed) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DomainError, MissingKey) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

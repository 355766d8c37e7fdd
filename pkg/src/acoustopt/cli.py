"""Command-line entry point ``acoustopt``.

Exit codes: 0 success, 1 configuration or usage error, 2 solver failure.
Frequencies on the command line are in kHz, lengths in mm.
"""
from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config, parse_config
from .design import PenaltyConfig, read_design, render_pgm
from .fem import SolverError, solve_state
from .geometry import build_mesh, mesh_statistics
from .modes import mode_basis, reduced_wavenumbers, wavenumber
from .objective import Evaluator, gradient_check
from .parallel import WORKERS_ENV
from .runs import write_csv
from .waves import Spectrum, cpd, evaluation_grid, performance_spectrum

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2

log = logging.getLogger("acoustopt")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _domain_args(p):
    p.add_argument("--config", type=Path, help="TOML/JSON run config (geometry, filter, evaluation)")
    p.add_argument("--h-mm", type=float, help="override mesh size")
    p.add_argument("--c-m-per-s", type=float, help="override speed of sound")


def _config(args, extra: dict | None = None):
    over = {"domain": {}}
    if getattr(args, "h_mm", None) is not None:
        over["domain"]["h_mm"] = args.h_mm
    if getattr(args, "c_m_per_s", None) is not None:
        over["domain"]["c_m_per_s"] = args.c_m_per_s
    for section, values in (extra or {}).items():
        over.setdefault(section, {}).update(values)
    if getattr(args, "config", None) is not None:
        return load_config(args.config, over)
    return parse_config(over)


def _emit_csv(path, header, rows):
    if path is None:
        buf = io.StringIO()
        import csv

        from .runs import format_float

        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([format_float(v) for v in r])
        sys.stdout.write(buf.getvalue())
    else:
        write_csv(path, header, rows)


def _design_alpha(path, mesh):
    if path is None:
        return np.ones(mesh.n_design)
    values, shape, _ = read_design(path)
    if tuple(shape) != tuple(mesh.design_shape):
        raise ConfigError(f"{path}: design grid {shape} does not match mesh design grid {mesh.design_shape}")
    return values


def cmd_mesh_info(args):
    mesh = build_mesh(_config(args).domain)
    print(json.dumps(mesh_statistics(mesh), indent=2))


def cmd_modes(args):
    cfg = _config(args)
    mesh = build_mesh(cfg.domain)
    basis = mode_basis(mesh, "left" if args.side.upper() == "L" else "right")
    k = wavenumber(args.freq * 1e3, cfg.domain.c)
    km = reduced_wavenumbers(k, basis.eigenvalues)
    rows = [(m, lam, kk.real, kk.imag, int(lam <= k * k)) for m, (lam, kk) in enumerate(zip(basis.eigenvalues, km))]
    _emit_csv(args.out, ["mode_index", "lambda", "re_km", "im_km", "propagating"], rows)


def cmd_solve(args):
    cfg = _config(args)
    ev = Evaluator.create(build_mesh(cfg.domain))
    mesh = ev.mesh
    alpha = ev.full_alpha(_design_alpha(args.design, mesh))
    sol = solve_state(ev.problem.context(alpha, args.freq * 1e3))
    rows = ((i, z, r, p.real, p.imag) for i, ((z, r), p) in enumerate(zip(mesh.node_coords, sol.p)))
    _emit_csv(args.out, ["node_id", "z_m", "r_m", "re_p", "im_p"], rows)


def cmd_spectrum(args):
    cfg = _config(args)
    ev = Evaluator.create(build_mesh(cfg.domain))
    alpha = ev.full_alpha(_design_alpha(args.design, ev.mesh))
    grid = evaluation_grid(cfg.f_min, cfg.f_max, cfg.step)
    spec = performance_spectrum(ev.problem, alpha, grid, workers=cfg.workers)
    _emit_csv(args.out, ["frequency_hz", "performance"], zip(spec.frequencies, spec.performance))


def _read_spectrum(path) -> Spectrum:
    data = np.genfromtxt(path, delimiter=",", names=True)
    try:
        return Spectrum(frequencies=np.atleast_1d(data["frequency_hz"]), performance=np.atleast_1d(data["performance"]))
    except ValueError as exc:
        raise ConfigError(f"{path}: expected columns frequency_hz,performance") from exc


def cmd_cpd(args):
    spec = _read_spectrum(args.spectrum)
    curve = cpd(spec, np.linspace(0.0, 1.0, args.points))
    _emit_csv(args.out, ["threshold", "cpd"], zip(curve.thresholds, curve.values))


def cmd_render(args):
    values, shape, _ = read_design(args.design)
    render_pgm(args.out, values, shape)


def cmd_grad_check(args):
    cfg = _config(args, {"filter": {"mode": args.filter_mode, "radius_mm": args.radius_mm}})
    mesh = build_mesh(cfg.domain)
    ev = Evaluator.create(mesh, radius=cfg.filter_radius, mode=cfg.filter_mode, p=cfg.filter_p)
    rng = np.random.default_rng(args.seed)
    d = rng.uniform(args.low, args.high, mesh.n_design)
    res = gradient_check(ev, d, args.freq * 1e3, PenaltyConfig(gamma=args.gamma), n_elements=args.elements, step=args.step, seed=args.seed)
    for e, g, fd in zip(res.elements, res.adjoint, res.finite_difference):
        log.info("element %d adjoint %.10e fd %.10e", e, g, fd)
    print(f"max_relative_error {res.max_relative_error:.3e}")


def _run_config(args, kind=None):
    extra = {"output": {}}
    if kind is not None:
        extra["optimizer"] = {"kind": kind}
    if getattr(args, "seed", None) is not None:
        extra["output"]["seed"] = args.seed
    cfg = load_config(args.config, extra)
    return cfg


def cmd_optimize(args):
    from .pipeline import optimize

    cfg = _run_config(args, args.kind)
    run = optimize(cfg, args.out)
    print(json.dumps({"status": run.status, "iterations": run.iterations, "evaluations": run.evaluations,
                      "final_objective_150": run.metadata.get("final_objective_150")}))


def cmd_campaign(args):
    from .pipeline import campaign

    cfg = _run_config(args, args.kind)
    res = campaign(cfg, args.out, args.runs)
    done = sum(r is not None and r.status == "ok" for r in res.runs)
    print(json.dumps({"runs": len(res.runs), "completed": done}))


def cmd_evaluate(args):
    from .pipeline import evaluate

    cfg = _run_config(args, "none")
    meta = evaluate(cfg, args.out, args.design)
    print(json.dumps(meta["spectrum"]))


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="acoustopt", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("mesh-info", help="print mesh counts as JSON")
    _domain_args(p)
    p.set_defaults(fn=cmd_mesh_info)

    p = sub.add_parser("modes", help="radial modes of one truncation boundary as CSV")
    _domain_args(p)
    p.add_argument("--side", choices=["L", "R", "l", "r"], required=True)
    p.add_argument("--freq", type=float, required=True, help="kHz")
    p.add_argument("--out", type=Path)
    p.set_defaults(fn=cmd_modes)

    p = sub.add_parser("solve", help="nodal pressure at one frequency as CSV")
    _domain_args(p)
    p.add_argument("--freq", type=float, required=True, help="kHz")
    p.add_argument("--design", type=Path, help="design file (default: all air)")
    p.add_argument("--out", type=Path)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("spectrum", help="transmitted planar power on the evaluation grid")
    _domain_args(p)
    p.add_argument("--design", type=Path)
    p.add_argument("--out", type=Path)
    p.set_defaults(fn=cmd_spectrum)

    p = sub.add_parser("cpd", help="cumulative performance density of a spectrum CSV")
    p.add_argument("--spectrum", type=Path, required=True)
    p.add_argument("--points", type=int, default=1001)
    p.add_argument("--out", type=Path)
    p.set_defaults(fn=cmd_cpd)

    p = sub.add_parser("render-design", help="greyscale PGM of a design file")
    p.add_argument("--design", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("grad-check", help="adjoint gradient against central differences")
    _domain_args(p)
    p.set_defaults(h_mm=2.0)
    p.add_argument("--freq", type=float, default=9.0, help="kHz")
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--filter-mode", choices=["linear", "fw-open-close"], default="linear")
    p.add_argument("--radius-mm", type=float, default=4.5)
    p.add_argument("--elements", type=int, default=10)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--low", type=float, default=0.3, help="lower bound of the random design")
    p.add_argument("--high", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_grad_check)

    p = sub.add_parser("optimize", help="run one optimiser and write its artifacts")
    p.add_argument("kind", choices=["mma", "sg", "csg"])
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)
    p.set_defaults(fn=cmd_optimize)

    p = sub.add_parser("campaign", help="independent SG/CSG runs with quantile aggregation")
    p.add_argument("kind", choices=["sg", "csg"])
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int, help="first seed")
    p.add_argument("--out", type=Path)
    p.set_defaults(fn=cmd_campaign)

    p = sub.add_parser("evaluate", help="spectrum and CPD of a stored design, no optimisation")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--design", type=Path)
    p.add_argument("--out", type=Path)
    p.set_defaults(fn=cmd_evaluate)
    ap.epilog = f"Set {WORKERS_ENV} to the number of worker threads."
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"acoustopt: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"acoustopt: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

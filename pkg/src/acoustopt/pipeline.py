"""Run orchestration: build the problem from a config, optimise or evaluate, persist artifacts.

Artifacts written to the output directory:

    design.txt, design_rounded.txt   final densities (optimiser runs only)
    history.csv                      per-iteration record (optimiser runs only)
    spectrum.csv, cpd.csv            performance of the reported design
    design.pgm                       greyscale render of the reported design
    metadata.json                    effective configuration and run summary
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .design import read_design, render_pgm, write_design
from .fem import SolverError
from .geometry import build_mesh
from .mma import continuation_run
from .objective import Evaluator
from .runs import OptimizerRun, _jsonable, write_csv
from .stochastic import csg_run, run_campaign, sg_run
from .waves import cpd, evaluation_grid, performance_spectrum

__all__ = ["make_evaluator", "initial_design", "optimize", "evaluate", "campaign", "write_spectrum", "write_cpd"]

log = logging.getLogger(__name__)


def make_evaluator(cfg: RunConfig) -> Evaluator:
    mesh = build_mesh(cfg.domain)
    return Evaluator.create(mesh, radius=cfg.filter_radius, mode=cfg.filter_mode, p=cfg.filter_p)


def _load_design(path: Path, mesh) -> np.ndarray:
    values, shape, _ = read_design(path)
    if tuple(shape) != tuple(mesh.design_shape):
        raise ValueError(f"{path}: design grid {shape} does not match mesh design grid {mesh.design_shape}")
    return values


def initial_design(cfg: RunConfig, mesh) -> np.ndarray:
    if cfg.initial_design is not None:
        return _load_design(cfg.initial_design, mesh)
    return np.full(mesh.n_design, cfg.initial_value)


def write_spectrum(path, spectrum) -> None:
    write_csv(path, ["frequency_hz", "performance"], zip(spectrum.frequencies, spectrum.performance))


def write_cpd(path, curve) -> None:
    write_csv(path, ["threshold", "cpd"], zip(curve.thresholds, curve.values))


def _report(cfg: RunConfig, ev: Evaluator, alpha, out: Path, meta: dict) -> None:
    grid = evaluation_grid(cfg.f_min, cfg.f_max, cfg.step)
    spec = performance_spectrum(ev.problem, ev.full_alpha(alpha), grid, workers=cfg.workers)
    write_spectrum(out / "spectrum.csv", spec)
    curve = cpd(spec, np.linspace(0.0, 1.0, cfg.cpd_points))
    write_cpd(out / "cpd.csv", curve)
    render_pgm(out / "design.pgm", alpha, ev.mesh.design_shape)
    perf = spec.performance[~np.isnan(spec.performance)]
    meta["spectrum"] = {
        "points": int(len(spec)),
        "failed_frequencies_hz": spec.failed.tolist(),
        "mean_performance": float(perf.mean()) if perf.size else None,
        "min_performance": float(perf.min()) if perf.size else None,
        "cpd_area": curve.area(),
    }


def _write_meta(path: Path, meta: dict) -> None:
    path.write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n", encoding="ascii")


def optimize(cfg: RunConfig, out: Path | None = None) -> OptimizerRun:
    """Run the configured optimiser and persist every artifact; raises SolverError on failure."""
    if cfg.optimizer not in ("mma", "sg", "csg"):
        raise ValueError(f"no optimiser configured (kind={cfg.optimizer!r})")
    out = Path(out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    ev = make_evaluator(cfg)
    d0 = initial_design(cfg, ev.mesh)
    t0 = time.perf_counter()
    if cfg.optimizer == "mma":
        run = continuation_run(ev, cfg.optimizer_cfg, d0)
    else:
        fn = sg_run if cfg.optimizer == "sg" else csg_run
        run = fn(ev, replace(cfg.optimizer_cfg, seed=cfg.seed), d0)
    run.write_history(out / "history.csv")
    shape = ev.mesh.design_shape
    write_design(out / "design.txt", run.alpha_final, shape, ev.epsilon)
    write_design(out / "design_rounded.txt", run.alpha_rounded, shape, ev.epsilon)
    meta = {
        "run": dict(run.metadata, kind=run.kind, iterations=run.iterations, evaluations=run.evaluations, status=run.status),
        "config": cfg.snapshot(),
        "wall_time_s": time.perf_counter() - t0,
        "reported_design": "rounded" if cfg.report_rounded else "filtered",
    }
    if run.status == "ok":
        _report(cfg, ev, run.alpha_rounded if cfg.report_rounded else run.alpha_final, out, meta)
    _write_meta(out / "metadata.json", meta)
    if run.status != "ok":
        raise SolverError(f"optimiser stopped with status {run.status}; partial history in {out}")
    return run


def evaluate(cfg: RunConfig, out: Path | None = None, design: Path | None = None) -> dict:
    """Spectrum, CPD and render of a stored design (or the empty design); no optimiser artifacts."""
    out = Path(out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    ev = make_evaluator(cfg)
    path = design or cfg.design
    alpha = _load_design(path, ev.mesh) if path is not None else np.ones(ev.mesh.n_design)
    meta = {"config": cfg.snapshot(), "design_file": str(path) if path else None}
    _report(cfg, ev, alpha, out, meta)
    _write_meta(out / "metadata.json", meta)
    return meta


def campaign(cfg: RunConfig, out: Path | None = None, runs: int | None = None):
    """Independent SG/CSG runs with seeds ``seed, seed+1, ...``; writes per-run histories and quantiles."""
    if cfg.optimizer not in ("sg", "csg"):
        raise ValueError("campaigns need optimizer kind 'sg' or 'csg'")
    out = Path(out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    n = runs or cfg.runs
    seeds = [cfg.seed + i for i in range(n)]
    mesh = build_mesh(cfg.domain)
    d0 = initial_design(cfg, mesh)
    result = run_campaign(
        lambda: make_evaluator(cfg),
        cfg.optimizer,
        cfg.optimizer_cfg,
        seeds,
        d0=d0,
        f_grid=evaluation_grid(cfg.f_min, cfg.f_max, cfg.step),
        workers=cfg.workers,
        rounded=cfg.report_rounded,
    )
    summary = []
    for seed, run in zip(seeds, result.runs):
        if run is None:
            summary.append({"seed": seed, "status": "error"})
            continue
        run.write_history(out / f"history_seed{seed}.csv")
        summary.append(
            {
                "seed": seed,
                "status": run.status,
                "evaluations": run.evaluations,
                "final_objective_150": run.metadata.get("final_objective_150"),
                "final_objective_150_rounded": run.metadata.get("final_objective_150_rounded"),
            }
        )
    result.write_quantiles(out / "quantiles.csv")
    _write_meta(out / "metadata.json", {"config": cfg.snapshot(), "runs": summary})
    return result

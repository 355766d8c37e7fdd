"""Stochastic gradient (SG) and continuous stochastic gradient (CSG) optimisers.

Both draw one frequency per iteration, uniformly from the target band, and
pay one state factorisation for it.  SG steps along that single gradient
sample with move limits shrinking like ``1/sqrt(n)``.  CSG keeps every past
sample and steps along the weighted model gradient ``sum_i beta_i g_i``;
the weights are the exact measures of the nearest-sample regions of the
band under a metric mixing design and frequency distance.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .design import EPSILON, PenaltyConfig, project_box, round_design
from .fem import SolverError
from .objective import Evaluator, cutoff_frequencies, nudge_off_cutoffs, reference_frequencies
from .parallel import map_ordered
from .runs import OptimizerRun, write_csv
from .waves import evaluation_grid, performance_spectrum

__all__ = [
    "SGConfig",
    "CSGConfig",
    "CSGHistory",
    "CampaignResult",
    "csg_weights",
    "design_distance",
    "sg_run",
    "csg_run",
    "run_campaign",
    "SG_COLUMNS",
    "CSG_COLUMNS",
]

log = logging.getLogger(__name__)

SG_COLUMNS = ["iteration", "evaluations", "frequency_hz", "loss_sample", "move_limit", "step_inf", "objective_150"]
CSG_COLUMNS = [
    "iteration",
    "evaluations",
    "frequency_hz",
    "loss_sample",
    "model_objective",
    "move_limit",
    "step_inf",
    "objective_150",
]


@dataclass(frozen=True)
class SGConfig:
    f_min: float = 4000.0
    f_max: float = 16000.0
    learning_rate: float = 30.0
    move_limit_c0: float = 0.1
    iters: int = 500
    gamma: float = 0.0
    seed: int = 0
    round_threshold: float = 0.5
    epsilon: float = EPSILON
    reference_count: int = 150
    reference_every: int = 0  # 0: final design only
    cutoff_guard_hz: float = 1.0

    def move_limit(self, n: int) -> float:
        return self.move_limit_c0 / np.sqrt(n)


@dataclass(frozen=True)
class CSGConfig(SGConfig):
    move_limit_min: float = 1e-4
    shrink: float = 0.5
    grow: float = 1.2
    c_f: float | None = None  # default 1 / |F|
    c_d: float = 1.0


def design_distance(a, b) -> np.ndarray:
    """Root-mean-square entrywise difference between ``a`` (N,) and rows of ``b`` (n, N)."""
    b = np.atleast_2d(b)
    return np.sqrt(np.mean((b - np.asarray(a)[None, :]) ** 2, axis=1))


def csg_weights(f_samples, offsets, f_min: float, f_max: float, c_f: float | None = None) -> np.ndarray:
    """Exact integration weights for samples at ``f_samples``.

    Sample j owns the part of ``[f_min, f_max]`` where
    ``offsets[j] + c_f * |f - f_j|`` is smallest; ``offsets`` carries the
    (scaled) design distance of each sample to the current design.  Regions
    of equal value go to the more recent sample.  Each region is an
    interval, so the weights are interval lengths divided by the band width.
    """
    f = np.asarray(f_samples, dtype=float)
    a = np.asarray(offsets, dtype=float)
    n = f.size
    if n == 0:
        raise ValueError("no samples")
    width = f_max - f_min
    c = 1.0 / width if c_f is None else float(c_f)
    lo = np.full(n, float(f_min))
    hi = np.full(n, float(f_max))
    idx = np.arange(n)
    for j in range(n):
        fi, ai = np.delete(f, j), np.delete(a, j)
        newer = np.delete(idx, j) > j
        # D(f) = V_j(f) - V_i(f) is monotone between the constants dl and dr
        sgn = np.sign(fi - f[j])
        gap = c * np.abs(fi - f[j])
        dl = a[j] - ai - gap  # limit on the side away from f_i ...
        dr = a[j] - ai + gap  # ... and towards/behind f_i
        cross = 0.5 * (fi + f[j]) + sgn * (ai - a[j]) / (2.0 * c)
        # strict inequality against newer samples, ties go to them
        win_all = np.where(newer, dr < 0, dr <= 0)
        win_none = np.where(newer, dl >= 0, dl > 0)
        same = sgn == 0
        win_all |= same & np.where(newer, a[j] < ai, a[j] <= ai)
        win_none |= same & ~np.where(newer, a[j] < ai, a[j] <= ai)
        partial = ~win_all & ~win_none & ~same
        if np.any(win_none):
            lo[j], hi[j] = 0.0, -1.0
            continue
        right_i = partial & (sgn > 0)  # f_i to the right: j wins for f <= cross
        left_i = partial & (sgn < 0)  # f_i to the left: j wins for f >= cross
        if np.any(right_i):
            hi[j] = min(hi[j], cross[right_i].min())
        if np.any(left_i):
            lo[j] = max(lo[j], cross[left_i].max())
    lengths = np.clip(hi - lo, 0.0, None)
    return lengths / width


@dataclass
class CSGHistory:
    frequencies: list = field(default_factory=list)
    designs: list = field(default_factory=list)
    gradients: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    weights: np.ndarray | None = None

    def append(self, f, d, g, J):
        self.frequencies.append(float(f))
        self.designs.append(np.array(d, copy=True))
        self.gradients.append(np.array(g, copy=True))
        self.losses.append(float(J))

    def reweight(self, d_now, cfg: CSGConfig) -> np.ndarray:
        dist = design_distance(d_now, np.asarray(self.designs))
        self.weights = csg_weights(self.frequencies, cfg.c_d * dist, cfg.f_min, cfg.f_max, cfg.c_f)
        return self.weights

    @property
    def model_gradient(self) -> np.ndarray:
        return self.weights @ np.asarray(self.gradients)

    @property
    def model_objective(self) -> float:
        return float(self.weights @ np.asarray(self.losses))


def _sample(evaluator, rng, d, cfg, pen, cutoffs):
    """Draw a frequency and evaluate the gradient there; one resample on solver failure."""
    for attempt in range(2):
        f = nudge_off_cutoffs(float(rng.uniform(cfg.f_min, cfg.f_max)), cutoffs, cfg.cutoff_guard_hz)
        try:
            return f, evaluator.design_gradient(d, f, pen)
        except SolverError as exc:
            log.warning("solve failed at sampled %.3f Hz (attempt %d): %s", f, attempt + 1, exc)
    raise SolverError("state solve failed twice in a row")


def _finish(run, evaluator, d, cfg, ref):
    alpha = evaluator.densities(d)
    run.d_final = d
    run.alpha_final = alpha
    run.alpha_rounded = round_design(alpha, cfg.round_threshold, cfg.epsilon)
    if run.status == "ok":
        run.metadata["final_objective_150"] = evaluator.mean_loss(alpha, ref)
        run.metadata["final_objective_150_rounded"] = evaluator.mean_loss(run.alpha_rounded, ref)


def _reference_due(cfg, n):
    return cfg.reference_every and (n - 1) % cfg.reference_every == 0


def sg_run(evaluator: Evaluator, cfg: SGConfig, d0) -> OptimizerRun:
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    cutoffs = cutoff_frequencies(evaluator.problem)
    ref = reference_frequencies(cfg.f_min, cfg.f_max, cfg.reference_count)
    pen = PenaltyConfig(cfg.gamma, cfg.epsilon)
    d = project_box(d0, cfg.epsilon)
    run = OptimizerRun(kind="sg", columns=list(SG_COLUMNS))
    evals = 0
    for n in range(1, cfg.iters + 1):
        try:
            before = evaluator.evaluations
            f, dg = _sample(evaluator, rng, d, cfg, pen, cutoffs)
            evals += evaluator.evaluations - before
        except SolverError as exc:
            log.error("SG run aborted at iteration %d: %s", n, exc)
            run.status = "solver_failure"
            break
        obj150 = evaluator.mean_loss(evaluator.densities(d), ref) if _reference_due(cfg, n) else None
        C = cfg.move_limit(n)
        step = np.clip(cfg.learning_rate * dg.g, -C, C)
        d_new = project_box(d - step, cfg.epsilon)
        run.history.append(
            {
                "iteration": n,
                "evaluations": evals,
                "frequency_hz": f,
                "loss_sample": dg.loss,
                "move_limit": C,
                "step_inf": float(np.max(np.abs(d_new - d))),
                "objective_150": obj150,
            }
        )
        d = d_new
    run.evaluations = evals
    run.metadata = {"optimizer": "sg", "config": asdict(cfg), "filter": evaluator.filter.metadata()}
    _finish(run, evaluator, d, cfg, ref)
    run.wall_time = time.perf_counter() - t0
    return run


def csg_run(evaluator: Evaluator, cfg: CSGConfig, d0) -> OptimizerRun:
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    cutoffs = cutoff_frequencies(evaluator.problem)
    ref = reference_frequencies(cfg.f_min, cfg.f_max, cfg.reference_count)
    pen = PenaltyConfig(cfg.gamma, cfg.epsilon)
    d = project_box(d0, cfg.epsilon)
    hist = CSGHistory()
    run = OptimizerRun(kind="csg", columns=list(CSG_COLUMNS))
    C = cfg.move_limit_c0
    model_prev = None
    evals = 0
    weight_sums = []
    for n in range(1, cfg.iters + 1):
        try:
            before = evaluator.evaluations
            f, dg = _sample(evaluator, rng, d, cfg, pen, cutoffs)
            evals += evaluator.evaluations - before
        except SolverError as exc:
            log.error("CSG run aborted at iteration %d: %s", n, exc)
            run.status = "solver_failure"
            break
        hist.append(f, d, dg.g, dg.value)
        beta = hist.reweight(d, cfg)
        weight_sums.append((float(beta.sum()), float(beta.min())))
        model = hist.model_objective
        if model_prev is not None:
            C = min(cfg.move_limit_c0, C * cfg.grow) if model < model_prev else max(cfg.move_limit_min, C * cfg.shrink)
        model_prev = model
        obj150 = evaluator.mean_loss(evaluator.densities(d), ref) if _reference_due(cfg, n) else None
        step = np.clip(cfg.learning_rate * hist.model_gradient, -C, C)
        d_new = project_box(d - step, cfg.epsilon)
        run.history.append(
            {
                "iteration": n,
                "evaluations": evals,
                "frequency_hz": f,
                "loss_sample": dg.loss,
                "model_objective": model,
                "move_limit": C,
                "step_inf": float(np.max(np.abs(d_new - d))),
                "objective_150": obj150,
            }
        )
        d = d_new
    run.evaluations = evals
    run.metadata = {
        "optimizer": "csg",
        "config": asdict(cfg),
        "c_f_effective": 1.0 / (cfg.f_max - cfg.f_min) if cfg.c_f is None else cfg.c_f,
        "design_metric": "root-mean-square entrywise difference of raw design variables",
        "filter": evaluator.filter.metadata(),
        "weight_checks": weight_sums,
    }
    _finish(run, evaluator, d, cfg, ref)
    run.wall_time = time.perf_counter() - t0
    return run


QUANTILES = (10, 25, 50, 75, 90)


@dataclass(eq=False)
class CampaignResult:
    runs: list
    frequencies: np.ndarray
    performance: np.ndarray  # (completed runs, frequencies)
    quantiles: dict  # percentile -> per-frequency values

    def band(self, lo: int, hi: int):
        return self.quantiles[lo], self.quantiles[hi]

    @property
    def median(self) -> np.ndarray:
        return self.quantiles[50]

    def write_quantiles(self, path) -> None:
        cols = [self.quantiles[q] for q in QUANTILES]
        write_csv(path, ["frequency_hz", "p10", "p25", "p50", "p75", "p90"], zip(self.frequencies, *cols))


def run_campaign(evaluator_factory, optimizer: str, cfg: SGConfig, seeds, d0=None, f_grid=None, workers=None, rounded=True) -> CampaignResult:
    """Independent runs, one per seed, then per-frequency percentiles of final performance.

    ``evaluator_factory`` returns a fresh :class:`Evaluator` so runs share
    no mutable state.
    """
    from dataclasses import replace

    if optimizer not in ("sg", "csg"):
        raise ValueError(f"optimizer must be 'sg' or 'csg', got {optimizer!r}")
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one run")
    f_grid = evaluation_grid(cfg.f_min, cfg.f_max) if f_grid is None else np.asarray(f_grid, dtype=float)
    fn = sg_run if optimizer == "sg" else csg_run

    def one(seed):
        try:
            ev = evaluator_factory()
            start = np.ones(ev.n_design) if d0 is None else d0
            run = fn(ev, replace(cfg, seed=int(seed)), start)
        except Exception as exc:  # recorded, campaign continues
            log.error("run with seed %s failed: %s", seed, exc)
            return None, None
        if run.status != "ok":
            return run, None
        alpha = run.alpha_rounded if rounded else run.alpha_final
        spec = performance_spectrum(ev.problem, ev.full_alpha(alpha), f_grid, workers=1)
        return run, spec.performance

    results = map_ordered(one, seeds, workers=workers)
    runs = [r for r, _ in results]
    perf = np.array([p for _, p in results if p is not None])
    if perf.size == 0:
        raise RuntimeError("no campaign run completed")
    qs = {q: np.nanpercentile(perf, q, axis=0) for q in QUANTILES}
    return CampaignResult(runs=runs, frequencies=f_grid, performance=perf, quantiles=qs)

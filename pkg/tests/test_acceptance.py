"""Acceptance criteria 1 to 11, one test each.

Each test records a PASS/FAIL line that is printed in the terminal summary.
Criterion 7 at full resolution needs ACOUSTOPT_FULLSCALE=1; otherwise the
desk-scale baseline is regression-locked.
"""
import time
from contextlib import contextmanager

import numpy as np
import pytest
import scipy.linalg
from scipy.special import jnp_zeros

from acoustopt.design import PenaltyConfig
from acoustopt.geometry import DomainSpec, build_mesh, mesh_statistics, standard_domain
from acoustopt.mma import MMAConfig, continuation_run
from acoustopt.modes import assemble_radial_matrices, count_propagating, mode_basis
from acoustopt.objective import Evaluator, gradient_check, reference_frequencies
from acoustopt.stochastic import CSGConfig, SGConfig, csg_run, csg_weights, run_campaign, sg_run
from acoustopt.waves import cpd, evaluation_grid, modal_amplitudes, outgoing_powers, performance_spectrum

from conftest import ACCEPTANCE, FULLSCALE

DESK_BASELINE = 0.5479756  # 150-frequency mean loss of the empty design at h = 1 mm
FULL_BASELINE = 0.547


@contextmanager
def criterion(n, title):
    t0 = time.perf_counter()
    detail = {}
    try:
        yield detail
    except BaseException:
        ACCEPTANCE[n] = f"criterion {n:2d} FAIL  {title}  {detail.get('msg', '')}".rstrip()
        raise
    ACCEPTANCE[n] = f"criterion {n:2d} PASS  {title}  {detail.get('msg', '')} ({time.perf_counter() - t0:.1f} s)"


@pytest.fixture(scope="module")
def desk_mesh():
    return build_mesh(standard_domain(1e-3))


def test_c01_mesh_fidelity():
    with criterion(1, "mesh counts at h = 0.25 mm") as out:
        stats = mesh_statistics(build_mesh(standard_domain(0.25e-3)))
        out["msg"] = f"dofs={stats['n_dof']} design={stats['n_design_elements']}"
        assert stats["n_dof"] == 250_721
        assert stats["n_design_elements"] == 40_000


def test_c02_modes(desk_mesh):
    with criterion(2, "radial modes vs Bessel roots") as out:
        worst = 0.0
        for side, W in (("left", 0.03), ("right", 0.04)):
            basis = mode_basis(desk_mesh, side)
            oracle = jnp_zeros(0, 3) / W
            rel = np.abs(np.sqrt(basis.eigenvalues[1:4]) / oracle - 1)
            worst = max(worst, rel.max())
            V = basis.vectors
            ortho = np.abs(V.T @ basis.local_mass @ V - np.eye(V.shape[1])).max()
            assert ortho < 1e-10
            K, M = assemble_radial_matrices(desk_mesh, side)
            lam = scipy.linalg.eigh(K, M, eigvals_only=True)
            assert abs(lam[0]) < 1e-9 * lam[1]
        left = np.sqrt(mode_basis(desk_mesh, "left").eigenvalues[1:3])
        assert np.allclose(left, [127.72, 233.85], rtol=1e-2)
        out["msg"] = f"max root error {worst:.2e}"
        assert worst < 1e-2


def test_c03_propagating_counts(desk_mesh):
    with criterion(3, "propagating mode counts") as out:
        left, right = mode_basis(desk_mesh, "left"), mode_basis(desk_mesh, "right")
        got = [(count_propagating(f, left, 343.0), count_propagating(f, right, 343.0)) for f in (4000.0, 16000.0)]
        out["msg"] = f"{got}"
        assert got == [(1, 1), (3, 4)]


def test_c04_energy_conservation(desk_mesh):
    with criterion(4, "energy conservation, empty design") as out:
        ev = Evaluator.create(desk_mesh)
        errs = []
        for f in (5000.0, 8000.0, 10000.0, 13000.0, 16000.0):
            sol = ev.problem.solve(ev.problem.full_alpha(), f)
            errs.append(abs(outgoing_powers(modal_amplitudes(sol), sol.context).total - 1))
        out["msg"] = f"max |P-1| {max(errs):.2e}"
        assert max(errs) < 1e-6


def test_c05_straight_pipe():
    with criterion(5, "straight pipe transmits everything") as out:
        mesh = build_mesh(DomainSpec(r_design=0.03, r_left=0.03, r_right=0.03, h=0.5e-3))
        ev = Evaluator.create(mesh)
        spec = performance_spectrum(ev.problem, ev.problem.full_alpha(), evaluation_grid())
        out["msg"] = f"min performance {np.nanmin(spec.performance):.6f} over {len(spec)} points"
        assert spec.failed.size == 0
        assert np.min(spec.performance) >= 0.999


def test_c06_adjoint():
    with criterion(6, "adjoint vs central differences") as out:
        mesh = build_mesh(standard_domain(2e-3))
        d = np.random.default_rng(7).uniform(0.3, 0.7, mesh.n_design)
        errs = {}
        for mode in ("linear", "fw-open-close"):
            ev = Evaluator.create(mesh, radius=4.5e-3, mode=mode)
            for g in (0.0, 10.0):
                errs[mode, g] = gradient_check(ev, d, 9000.0, PenaltyConfig(gamma=g), n_elements=10, step=1e-5, seed=3).max_relative_error
        out["msg"] = ", ".join(f"{m} gamma={g:g}: {e:.1e}" for (m, g), e in errs.items())
        assert max(errs.values()) < 1e-5


@pytest.mark.skipif(not FULLSCALE, reason="full-resolution baseline needs ACOUSTOPT_FULLSCALE=1")
@pytest.mark.fullscale
def test_c07_empty_baseline_fullscale():
    with criterion(7, "empty-design baseline at h = 0.25 mm") as out:
        ev = Evaluator.create(build_mesh(standard_domain(0.25e-3)))
        J = ev.mean_loss(np.ones(ev.n_design), reference_frequencies())
        out["msg"] = f"J = {J:.7f}"
        assert abs(J - FULL_BASELINE) <= 0.01


def test_c07_empty_baseline_desk(desk_mesh):
    if FULLSCALE:
        pytest.skip("full-resolution check active")
    with criterion(7, "empty-design baseline (desk lock, h = 1 mm)") as out:
        ev = Evaluator.create(desk_mesh)
        J = ev.mean_loss(np.ones(ev.n_design), reference_frequencies())
        out["msg"] = f"J = {J:.7f}"
        assert J == pytest.approx(DESK_BASELINE, abs=5e-7)
        assert abs(J - FULL_BASELINE) <= 0.01


@pytest.mark.slow
def test_c08_mma_desk(desk_mesh):
    with criterion(8, "MMA desk run") as out:
        ev = Evaluator.create(desk_mesh)
        cfg = MMAConfig(freqs=(4000.0, 8000.0, 12000.0, 16000.0), gamma_schedule=(1.0, 10.0), max_iters_per_stage=25, reference_every=0)
        run = continuation_run(ev, cfg, np.ones(desk_mesh.n_design))
        J = run.metadata["final_objective_150"]
        out["msg"] = f"J = {J:.4f} (limit {0.8 * DESK_BASELINE:.4f}), {run.iterations} iterations, {run.evaluations} evaluations"
        assert run.status == "ok"
        assert run.evaluations == 4 * run.iterations
        assert J < 0.8 * DESK_BASELINE


CAMPAIGN_SEEDS = [0, 1, 2, 3, 4]
CAMPAIGN_GRID = np.linspace(4000.0, 16000.0, 13)


@pytest.fixture(scope="module")
def campaigns(desk_mesh):
    factory = lambda: Evaluator.create(desk_mesh)  # noqa: E731
    d0 = np.ones(desk_mesh.n_design)
    t0 = time.perf_counter()
    sg = run_campaign(factory, "sg", SGConfig(iters=100), CAMPAIGN_SEEDS, d0=d0, f_grid=CAMPAIGN_GRID)
    csg = run_campaign(factory, "csg", CSGConfig(iters=100, reference_every=10), CAMPAIGN_SEEDS, d0=d0, f_grid=CAMPAIGN_GRID)
    return sg, csg, time.perf_counter() - t0


def _dense_grid_weights(f, a, f_min, f_max, n=20_001):
    g = np.linspace(f_min, f_max, n)
    V = a[:, None] + np.abs(g[None, :] - f[:, None]) / (f_max - f_min)
    last = len(f) - 1 - np.argmin(V[::-1], axis=0)
    return np.bincount(last, minlength=len(f)) / n


@pytest.mark.slow
def test_c09_stochastic_campaign(campaigns):
    with criterion(9, "SG/CSG desk campaign") as out:
        sg, csg, elapsed = campaigns
        msgs = [f"campaigns {elapsed:.0f} s"]
        assert all(r is not None and r.status == "ok" for r in sg.runs + csg.runs)
        # (a) median final objective below the empty-design baseline
        med = {k: float(np.median([r.metadata["final_objective_150"] for r in c.runs])) for k, c in (("sg", sg), ("csg", csg))}
        msgs.append("(a) median J sg {sg:.4f} csg {csg:.4f}".format(**med))
        out["msg"] = "; ".join(msgs)
        assert med["sg"] < DESK_BASELINE and med["csg"] < DESK_BASELINE
        # (b) SG move limit follows c0 / sqrt(n) and bounds every step
        c0 = SGConfig().move_limit_c0
        for run in sg.runs:
            for row in run.history:
                assert row["move_limit"] == c0 / np.sqrt(row["iteration"])
                assert row["step_inf"] <= row["move_limit"] * (1 + 1e-12)
        msgs.append("(b) ok")
        # (c) CSG weights every iteration, plus a frozen-design oracle comparison
        for run in csg.runs:
            for total, smallest in run.metadata["weight_checks"]:
                assert abs(total - 1) < 1e-12 and smallest >= 0
        rng = np.random.default_rng(11)
        f = rng.uniform(4000.0, 16000.0, 60)
        w = csg_weights(f, np.zeros(60), 4000.0, 16000.0)
        assert np.abs(w - _dense_grid_weights(f, np.zeros(60), 4000.0, 16000.0)).max() < 2e-4
        msgs.append("(c) ok")
        # (d) CSG model error shrinks from the first to the second half
        shrinking = []
        for run in csg.runs:
            err = [(r["iteration"], abs(r["model_objective"] - r["objective_150"])) for r in run.history if r["objective_150"] is not None]
            first = np.median([e for i, e in err if i <= 50])
            last = np.median([e for i, e in err if i > 50])
            shrinking.append(bool(last < first))
        msgs.append(f"(d) error shrinks in {sum(shrinking)}/5 runs")
        out["msg"] = "; ".join(msgs)
        assert sum(shrinking) >= 4


def test_c10_cpd_identities(ev2):
    with criterion(10, "CPD identities") as out:
        t = np.linspace(0.0, 1.0, 1001)
        rng = np.random.default_rng(5)
        spectra = [rng.uniform(0, 1, 601), rng.beta(0.5, 0.5, 601)]
        spectra.append(performance_spectrum(ev2.problem, ev2.problem.full_alpha(), evaluation_grid()).performance)
        worst = 0.0
        for perf in spectra:
            curve = cpd(perf, t)
            assert np.all(np.diff(curve.values) >= 0) and curve.values[-1] == 1.0
            worst = max(worst, abs(curve.area() - (1 - np.mean(np.minimum(perf, 1.0)))))
        out["msg"] = f"max layer-cake error {worst:.1e}"
        assert worst < 1e-3


def _history_bytes(run, path):
    run.write_history(path)
    return path.read_bytes()


def test_c11_determinism(ev2, tmp_path):
    with criterion(11, "byte-identical reruns") as out:
        d0 = np.ones(ev2.n_design)
        jobs = {
            "mma": lambda: continuation_run(Evaluator.create(ev2.mesh), MMAConfig(freqs=(6000.0, 12000.0), gamma_schedule=(1.0, 10.0), max_iters_per_stage=3, reference_count=10, reference_every=2), d0),
            "sg": lambda: sg_run(Evaluator.create(ev2.mesh), SGConfig(iters=8, seed=4, reference_count=10, reference_every=3), d0),
            "csg": lambda: csg_run(Evaluator.create(ev2.mesh), CSGConfig(iters=8, seed=4, reference_count=10, reference_every=3), d0),
        }
        same = {}
        for name, job in jobs.items():
            a = _history_bytes(job(), tmp_path / f"{name}_a.csv")
            b = _history_bytes(job(), tmp_path / f"{name}_b.csv")
            same[name] = a == b
        out["msg"] = ", ".join(f"{k} {'identical' if v else 'DIFFER'}" for k, v in same.items())
        assert all(same.values())

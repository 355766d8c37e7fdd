from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acoustopt import fem
from acoustopt.design import EPSILON, round_design
from acoustopt.objective import Evaluator
from acoustopt.stochastic import (
    CSG_COLUMNS,
    SG_COLUMNS,
    CSGConfig,
    CSGHistory,
    SGConfig,
    csg_run,
    csg_weights,
    design_distance,
    run_campaign,
    sg_run,
)

F_MIN, F_MAX = 4000.0, 16000.0


def grid_weights(f, a, f_min=F_MIN, f_max=F_MAX, c_f=None, n=10_001):
    """Dense-grid argmin oracle; ties go to the most recent sample."""
    c = 1.0 / (f_max - f_min) if c_f is None else c_f
    g = np.linspace(f_min, f_max, n)
    V = np.asarray(a)[:, None] + c * np.abs(g[None, :] - np.asarray(f)[:, None])
    last = len(f) - 1 - np.argmin(V[::-1], axis=0)
    return np.bincount(last, minlength=len(f)) / n, (f_max - f_min) / (n - 1)


def test_single_sample():
    assert csg_weights([7000.0], [0.3], F_MIN, F_MAX).tolist() == [1.0]


def test_two_samples_same_design():
    # equal offsets: the split is the midpoint 10 kHz, giving [4,10] and [10,16]
    w = csg_weights([5000.0, 15000.0], [0.0, 0.0], F_MIN, F_MAX)
    oracle, _ = grid_weights([5000.0, 15000.0], [0.0, 0.0])
    assert np.allclose(w, [0.5, 0.5])
    assert np.allclose(w, oracle, atol=2e-4)


def test_two_samples_asymmetric():
    w = csg_weights([5000.0, 13000.0], [0.0, 0.0], F_MIN, F_MAX)
    assert np.allclose(w, [5 / 12, 7 / 12])


def test_far_design_is_dominated():
    w = csg_weights([5000.0, 15000.0], [100.0, 0.0], F_MIN, F_MAX)
    assert np.allclose(w, [0.0, 1.0])


def test_ties_go_to_recent_sample():
    w = csg_weights([8000.0, 8000.0, 8000.0], [0.1, 0.1, 0.1], F_MIN, F_MAX)
    assert w.tolist() == [0.0, 0.0, 1.0]


def test_zero_design_weight_is_midpoint_rule():
    f = np.sort(np.random.default_rng(3).uniform(F_MIN, F_MAX, 12))
    w = csg_weights(f, np.zeros(12), F_MIN, F_MAX)
    edges = np.concatenate([[F_MIN], 0.5 * (f[1:] + f[:-1]), [F_MAX]])
    assert np.allclose(w, np.diff(edges) / (F_MAX - F_MIN), rtol=1e-12)


@given(st.integers(1, 40), st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.05, 0.3, 1.0]))
@settings(max_examples=60, deadline=None)
def test_weights_match_dense_grid(n, seed, spread):
    rng = np.random.default_rng(seed)
    f = rng.uniform(F_MIN, F_MAX, n)
    a = rng.uniform(0, spread, n)
    w = csg_weights(f, a, F_MIN, F_MAX)
    oracle, cell = grid_weights(f, a)
    assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-12
    # each region has two ends, each within one grid cell of the oracle
    assert np.abs(w - oracle).max() <= 2 * cell / (F_MAX - F_MIN) + 1e-12


def test_weights_custom_cf():
    f, a = [5000.0, 9000.0, 14000.0], [0.0, 0.5, 0.1]
    w = csg_weights(f, a, F_MIN, F_MAX, c_f=1e-3)
    oracle, cell = grid_weights(f, a, c_f=1e-3)
    assert np.abs(w - oracle).max() <= 2 * cell / (F_MAX - F_MIN)
    with pytest.raises(ValueError):
        csg_weights([], [], F_MIN, F_MAX)


def test_design_distance():
    a = np.array([0.0, 1.0, 0.5, 0.5])
    b = np.array([[0.0, 1.0, 0.5, 0.5], [1.0, 0.0, 0.5, 0.5]])
    assert np.allclose(design_distance(a, b), [0.0, np.sqrt(0.5)])


def test_history_model():
    h = CSGHistory()
    d = np.zeros(4)
    for f, J in ((5000.0, 1.0), (15000.0, 3.0)):
        h.append(f, d, np.full(4, J), J)
    h.reweight(d, CSGConfig())
    assert h.model_objective == pytest.approx(2.0)
    assert np.allclose(h.model_gradient, 2.0)


def test_move_limit_law():
    cfg = SGConfig(move_limit_c0=0.2)
    assert [cfg.move_limit(n) for n in (1, 4, 100)] == [0.2, 0.1, 0.02]


SMALL = dict(iters=6, reference_count=4, learning_rate=30.0)


def test_sg_zero_learning_rate(mesh2, rng):
    ev = Evaluator.create(mesh2, radius=0.0)
    d0 = rng.uniform(0.2, 0.9, mesh2.n_design)
    run = sg_run(ev, SGConfig(**{**SMALL, "learning_rate": 0.0}), d0)
    assert np.array_equal(run.d_final, d0)
    assert np.array_equal(run.alpha_rounded, round_design(d0))
    assert all(r["step_inf"] == 0 for r in run.history)


def test_sg_step_bound_and_columns(ev2):
    cfg = SGConfig(**{**SMALL, "learning_rate": 1e4})
    run = sg_run(ev2, cfg, np.full(ev2.n_design, 0.5))
    assert run.columns == SG_COLUMNS and run.iterations == 6
    for r in run.history:
        C = cfg.move_limit_c0 / np.sqrt(r["iteration"])
        assert r["move_limit"] == C
        # huge learning rate: the clamp is always active somewhere
        assert r["step_inf"] == pytest.approx(C, rel=1e-12)
    assert run.evaluations == 6
    assert [r["evaluations"] for r in run.history] == list(range(1, 7))
    assert F_MIN <= min(r["frequency_hz"] for r in run.history)
    assert max(r["frequency_hz"] for r in run.history) <= F_MAX + 1


def test_sg_deterministic(mesh2, tmp_path):
    out = []
    for i in range(2):
        run = sg_run(Evaluator.create(mesh2), SGConfig(**SMALL, seed=9), np.ones(mesh2.n_design))
        run.write_history(tmp_path / f"{i}.csv")
        out.append((tmp_path / f"{i}.csv").read_bytes())
    assert out[0] == out[1]
    other = sg_run(Evaluator.create(mesh2), SGConfig(**SMALL, seed=10), np.ones(mesh2.n_design))
    assert other.history[0]["frequency_hz"] != float(out[0].split(b"\n")[1].split(b",")[2])


def test_csg_first_step_equals_sg(mesh2):
    d0 = np.full(mesh2.n_design, 0.8)
    sg = sg_run(Evaluator.create(mesh2), SGConfig(**{**SMALL, "iters": 1}, seed=4), d0)
    csg = csg_run(Evaluator.create(mesh2), CSGConfig(**{**SMALL, "iters": 1}, seed=4), d0)
    assert np.array_equal(sg.d_final, csg.d_final)
    assert csg.history[0]["model_objective"] == csg.history[0]["loss_sample"]


def test_csg_weights_every_iteration(ev2):
    run = csg_run(ev2, CSGConfig(**{**SMALL, "iters": 10}, seed=2), np.ones(ev2.n_design))
    assert run.columns == CSG_COLUMNS
    for total, smallest in run.metadata["weight_checks"]:
        assert abs(total - 1) < 1e-12 and smallest >= 0
    limits = [r["move_limit"] for r in run.history]
    assert all(1e-4 <= c <= 0.1 for c in limits)
    # the move limit reacts to the model objective
    for prev, cur, lim_prev, lim in zip(run.history, run.history[1:], limits, limits[1:]):
        if cur["model_objective"] < prev["model_objective"]:
            assert lim == pytest.approx(min(0.1, 1.2 * lim_prev))
        else:
            assert lim == pytest.approx(max(1e-4, 0.5 * lim_prev))


def test_csg_frozen_design_model_matches_reference(ev1):
    # lr = 0 freezes the design; the model becomes nearest-sample quadrature
    cfg = CSGConfig(iters=200, learning_rate=0.0, seed=5)
    run = csg_run(ev1, cfg, np.ones(ev1.n_design))
    ref = run.metadata["final_objective_150"]
    model = run.history[-1]["model_objective"]
    assert abs(model - ref) < 0.05 * ref


def test_sampler_resamples_once(mesh2, monkeypatch):
    real = fem._factorize
    calls = {"n": 0}

    def flaky(A, f):
        calls["n"] += 1
        if calls["n"] == 2:
            raise fem.SolverError("synthetic")
        return real(A, f)

    monkeypatch.setattr(fem, "_factorize", flaky)
    run = sg_run(Evaluator.create(mesh2), SGConfig(**SMALL), np.ones(mesh2.n_design))
    assert run.status == "ok" and run.iterations == 6


def test_sampler_aborts_after_two_failures(mesh2, monkeypatch):
    def broken(A, f):
        raise fem.SolverError("synthetic")

    monkeypatch.setattr(fem, "_factorize", broken)
    run = csg_run(Evaluator.create(mesh2), CSGConfig(**SMALL), np.ones(mesh2.n_design))
    assert run.status == "solver_failure" and run.iterations == 0


def test_campaign_single_run_collapses(mesh2):
    res = run_campaign(lambda: Evaluator.create(mesh2), "sg", SGConfig(**SMALL), [1], f_grid=[5000.0, 9000.0, 13000.0])
    for q in (10, 25, 75, 90):
        assert np.array_equal(res.quantiles[q], res.median)
    assert np.array_equal(res.median, res.performance[0])


def test_campaign_bands_nested(mesh2, tmp_path):
    grid = np.linspace(4000, 16000, 5)
    res = run_campaign(lambda: Evaluator.create(mesh2), "csg", CSGConfig(**SMALL), [1, 2, 3, 4], f_grid=grid, workers=2)
    lo10, hi90 = res.band(10, 90)
    lo25, hi75 = res.band(25, 75)
    assert np.all(lo10 <= lo25) and np.all(lo25 <= res.median) and np.all(res.median <= hi75) and np.all(hi75 <= hi90)
    res.write_quantiles(tmp_path / "q.csv")
    lines = (tmp_path / "q.csv").read_text().splitlines()
    assert lines[0] == "frequency_hz,p10,p25,p50,p75,p90" and len(lines) == 6


def test_campaign_records_failures(mesh2):
    calls = {"n": 0}

    def factory():
        calls["n"] += 1
        if calls["n"] == 2:
            raise RuntimeError("synthetic")
        return Evaluator.create(mesh2)

    res = run_campaign(factory, "sg", SGConfig(**SMALL), [1, 2, 3], f_grid=[6000.0], workers=1)
    assert res.runs[1] is None and len(res.performance) == 2
    with pytest.raises(ValueError):
        run_campaign(factory, "adam", SGConfig(), [1])
    with pytest.raises(ValueError):
        run_campaign(factory, "sg", SGConfig(), [])

from __future__ import annotations

import json

import numpy as np
import pytest

from uniskel.benchmarks import PROBLEMS, get_problem
from uniskel.errors import EmptySet, MissingArtifact
from uniskel.evaluation import EvalConfig, GAConfig
from uniskel.expr import evaluate
from uniskel.mst import MSTConfig, build_model, save_model
from uniskel.pipeline import (
    MSTSolver,
    OracleSolver,
    PipelineConfig,
    build_artificial_collection,
    make_observed_data,
    make_solver,
    mssp_on_curves,
    observed_bounds,
    predict_univariate_skeletons,
    run_benchmark,
)
from uniskel.regressor import MLPConfig, train_mlp
from uniskel.skeleton import Skeleton

TINY_EVAL = EvalConfig(n_test=100, repeats=2, ga=GAConfig(population=40, max_generations=30))


class RecordingSolver:
    needs_data = True

    def __init__(self):
        self.seen = []

    def solve(self, collection, problem=None, v=None):
        self.seen.append(collection)
        return problem.target(v) if problem is not None else None


def test_observed_data_within_domains(rng):
    problem = get_problem("E3")
    X, y = make_observed_data(problem, 2000, rng)
    assert X.shape == (2000, problem.n_vars) and y.shape == (2000,)
    for k, (lo, hi) in enumerate(problem.domains):
        assert X[:, k].min() >= lo and X[:, k].max() <= hi
    recomputed = evaluate(problem.expr, {i + 1: X[:, i] for i in range(problem.n_vars)})
    assert np.allclose(recomputed, y, rtol=1e-12)
    assert np.isfinite(y).all()


def test_observed_data_deterministic():
    problem = get_problem("E1")
    a = make_observed_data(problem, 100, np.random.default_rng([3, 0]))
    b = make_observed_data(problem, 100, np.random.default_rng([3, 0]))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_artificial_sets_vary_only_one_input(rng):
    problem = get_problem("E4")
    X, y = make_observed_data(problem, 500, rng)
    model, _ = train_mlp(X, y, MLPConfig(hidden=(8,), epochs=3))
    bounds = observed_bounds(X)
    for v in range(1, problem.n_vars + 1):
        coll = build_artificial_collection(model, bounds, v, n_sets=5, n=200, rng=rng)
        assert coll.n_sets == 5
        lo, hi = bounds[v - 1]
        for x, yy in coll:
            assert x.shape == yy.shape == (200,)
            assert x.min() >= lo and x.max() <= hi
            assert (x.max() - x.min()) >= 0.9 * (hi - lo)
        assert len({float(yy[0]) for yy in coll.ys}) > 1


def test_oracle_predictions_need_no_data(rng):
    problem = get_problem("E2")
    preds = predict_univariate_skeletons(OracleSolver(), None, problem, PipelineConfig(), rng)
    assert sorted(preds) == [1, 2, 3]
    assert all(preds[v] == problem.target(v) for v in preds)


def test_data_solver_requires_regressor(rng):
    with pytest.raises(MissingArtifact):
        predict_univariate_skeletons(RecordingSolver(), None, get_problem("E1"), PipelineConfig(), rng)


def test_curves_are_passed_as_one_collection():
    solver = RecordingSolver()
    x = np.linspace(-3, 3, 50)
    curves = [(x, np.tanh(a * x) + b) for a, b in [(0.5, 1.0), (2.0, -1.0), (1.0, 0.0)]]
    mssp_on_curves(curves, solver)
    coll = solver.seen[0]
    assert coll.n_sets == 3
    assert np.allclose(coll.ys[1], np.tanh(2.0 * x) - 1.0)


def test_single_and_unequal_curves():
    solver = RecordingSolver()
    mssp_on_curves([(np.arange(5.0), np.arange(5.0))], solver)
    mssp_on_curves([(np.arange(5.0), np.arange(5.0)), (np.arange(9.0), np.arange(9.0) ** 2)], solver)
    assert [c.n_sets for c in solver.seen] == [1, 2]
    with pytest.raises(EmptySet):
        mssp_on_curves([], solver)
    with pytest.raises(EmptySet):
        mssp_on_curves([(np.arange(3.0), np.arange(4.0))], solver)


def test_missing_model_path():
    with pytest.raises(MissingArtifact):
        make_solver(PipelineConfig(solver="mst", model_path="/nonexistent/model.bin"))


def test_mst_solver_returns_skeleton_or_diagnostic(tmp_path):
    path = tmp_path / "m.bin"
    save_model(build_model(MSTConfig(d=16, heads=2, inducing=4, k_seed=1, n_isab=1, n_decoder=1, max_len=12)), path)
    solver = MSTSolver.from_path(path)
    x = np.linspace(-1, 1, 20)
    out = mssp_on_curves([(x, x**2), (x, 2 * x**2)], solver)
    assert isinstance(out, Skeleton) or hasattr(out, "reason")


def test_report_has_one_row_per_cell():
    cfg = PipelineConfig(problems=("E1", "E2"), evaluation=TINY_EVAL)
    report = run_benchmark(cfg)
    assert [(c.problem, c.variable) for c in report.cells] == [("E1", 1), ("E1", 2), ("E2", 1), ("E2", 2), ("E2", 3)]
    data = json.loads(report.to_json())
    assert len(data["cells"]) == 5
    assert report.to_csv().count("\n") == 6
    assert all(c.valid for c in report.cells)


def test_cells_do_not_depend_on_selection():
    alone = run_benchmark(PipelineConfig(problems=("E3",), evaluation=TINY_EVAL))
    both = run_benchmark(PipelineConfig(problems=("E1", "E3"), evaluation=TINY_EVAL))
    assert alone.cells[0].to_dict() == both.cells[2].to_dict()


def test_report_is_deterministic():
    cfg = PipelineConfig(problems=("E5",), evaluation=TINY_EVAL)
    assert run_benchmark(cfg).to_json() == run_benchmark(cfg).to_json()


def test_config_checks():
    with pytest.raises(ValueError):
        PipelineConfig(solver="magic")
    with pytest.raises(ValueError):
        PipelineConfig(n_sets=0)
    assert PipelineConfig(problems="E1").problems == ("E1",)
    assert PipelineConfig().problems == tuple(PROBLEMS)

"""End-to-end univariate skeleton prediction on the benchmark problems.

For every problem: draw observed data, fit the regressor, and for each
variable build artificial sets in which only that variable moves. A solver
turns each collection into a skeleton, which is then scored against the
registered target skeleton with the GA similarity metric.
"""

from __future__ import annotations

import csv
import io
import json
import platform
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np

from . import __version__
from .benchmarks import PROBLEMS, BenchmarkProblem, get_problem
from .errors import EmptySet, MissingArtifact
from .evaluation import EvalConfig, EvalResult, evaluate_skeleton
from .expr import evaluate, finite_mask, to_infix, to_text
from .regressor import MLPConfig, MLPModel, predict, train_mlp
from .sets import SetCollection
from .skeleton import Skeleton


@dataclass
class PipelineConfig:
    n_samples: int = 10_000
    n_sets: int = 10
    n: int = 256
    problems: tuple[str, ...] = tuple(PROBLEMS)
    solver: str = "oracle"
    model_path: str = ""
    seed: int = 0
    regressor: MLPConfig = field(default_factory=MLPConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.n_samples < 1 or self.n_sets < 1 or self.n < 1:
            raise ValueError("sample counts must be positive")
        if isinstance(self.problems, str):
            self.problems = (self.problems,)
        self.problems = tuple(self.problems)
        if self.solver not in ("oracle", "mst"):
            raise ValueError(f"unknown solver {self.solver!r}")


# ---------------------------------------------------------------------------
# data


def make_observed_data(problem: BenchmarkProblem, n_samples: int, rng: np.random.Generator):
    """Uniform inputs over the problem's domains and finite responses."""
    cols, ys = [], []
    have = 0
    for _ in range(100):
        k = max(n_samples - have, 16)
        X = np.column_stack([rng.uniform(lo, hi, size=k) for lo, hi in problem.domains])
        y = np.asarray(evaluate(problem.expr, {i + 1: X[:, i] for i in range(problem.n_vars)}), dtype=float)
        ok = finite_mask(y)
        cols.append(X[ok])
        ys.append(y[ok])
        have += int(ok.sum())
        if have >= n_samples:
            break
    return np.concatenate(cols)[:n_samples], np.concatenate(ys)[:n_samples]


def build_artificial_collection(model: MLPModel, bounds, v: int, n_sets: int, n: int, rng) -> SetCollection:
    """Sets where ``x_v`` is uniform on its bounds and every other input is one shared random value.

    ``bounds`` holds one ``(low, high)`` pair per input, usually the observed
    minimum and maximum.
    """
    t = len(bounds)
    xs, ys = [], []
    for _ in range(n_sets):
        X = np.empty((n, t))
        for k, (lo, hi) in enumerate(bounds):
            X[:, k] = rng.uniform(lo, hi, size=n) if k == v - 1 else rng.uniform(lo, hi)
        fixed = [k for k in range(t) if k != v - 1]
        assert np.all(X[:, fixed] == X[:1, fixed]), "non-analyzed inputs must be constant within a set"
        xs.append(X[:, v - 1])
        ys.append(predict(model, X))
    return SetCollection(xs, ys)


def observed_bounds(X: np.ndarray) -> list[tuple[float, float]]:
    return [(float(lo), float(hi)) for lo, hi in zip(X.min(axis=0), X.max(axis=0))]


# ---------------------------------------------------------------------------
# solvers


class Solver(Protocol):
    needs_data: bool

    def solve(self, collection: SetCollection, problem: BenchmarkProblem, v: int): ...


class OracleSolver:
    """Returns the registered target; checks the plumbing without a trained model."""

    needs_data = False

    def solve(self, collection, problem, v):
        return problem.target(v)


class MSTSolver:
    needs_data = True

    def __init__(self, model):
        self.model = model

    @classmethod
    def from_path(cls, path):
        from pathlib import Path

        from .mst import load_model

        if not path or not Path(path).exists():
            raise MissingArtifact(f"no transformer checkpoint at {path!r}")
        return cls(load_model(path))

    def solve(self, collection, problem=None, v=None):
        from .mst import predict_skeleton

        return predict_skeleton(self.model, collection)


def make_solver(config: PipelineConfig):
    if config.solver == "oracle":
        return OracleSolver()
    return MSTSolver.from_path(config.model_path)


def predict_univariate_skeletons(solver, model: MLPModel | None, problem: BenchmarkProblem, config: PipelineConfig, rng, bounds=None) -> dict:
    """One skeleton (or decode diagnostic) per variable of ``problem``."""
    out = {}
    for v in range(1, problem.n_vars + 1):
        collection = None
        if getattr(solver, "needs_data", True):
            if model is None:
                raise MissingArtifact("a trained regressor is required to build artificial sets")
            collection = build_artificial_collection(model, bounds or problem.domains, v, config.n_sets, config.n, rng)
        out[v] = solver.solve(collection, problem, v)
    return out


def mssp_on_curves(curves: Sequence, solver) -> Skeleton:
    """Skeleton shared by several response curves, each a pair of ``(x, y)`` arrays."""
    if not curves:
        raise EmptySet("no curves given")
    xs, ys = [], []
    for x, y in curves:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if len(x) < 2 or len(x) != len(y):
            raise EmptySet("every curve needs at least two (x, y) points")
        xs.append(x)
        ys.append(y)
    return solver.solve(SetCollection(xs, ys))


# ---------------------------------------------------------------------------
# benchmark


@dataclass
class CellResult:
    problem: str
    variable: int
    predicted: str
    target: str
    valid: bool
    diagnostic: str = ""
    evaluation: EvalResult | None = None

    def to_dict(self) -> dict:
        d = {
            "problem": self.problem,
            "variable": self.variable,
            "predicted": self.predicted,
            "target": self.target,
            "valid": self.valid,
            "diagnostic": self.diagnostic,
        }
        d["evaluation"] = self.evaluation.to_dict() if self.evaluation else None
        return d


@dataclass
class RunReport:
    cells: list[CellResult]
    metadata: dict

    def to_dict(self) -> dict:
        return {"metadata": self.metadata, "cells": [c.to_dict() for c in self.cells]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["problem", "variable", "predicted", "target", "mean", "std", "mean_normalized", "std_normalized"])
        for c in self.cells:
            e = c.evaluation
            stats = [f"{e.mean:.6g}", f"{e.std:.6g}", f"{e.mean_normalized:.6g}", f"{e.std_normalized:.6g}"] if e else ["", "", "", ""]
            writer.writerow([c.problem, f"x{c.variable}", c.predicted, c.target, *stats])
        return buf.getvalue()


def _config_metadata(config: PipelineConfig) -> dict:
    data = asdict(config)
    data["problems"] = list(config.problems)
    return data


def run_benchmark(config: PipelineConfig, solver=None, log=None) -> RunReport:
    """Predict and score every (problem, variable) cell of ``config.problems``.

    Problem ``k`` draws from a stream seeded by ``(seed, k)``, so cells do not
    depend on which other problems are selected.
    """
    solver = solver or make_solver(config)
    cells = []
    for name in config.problems:
        problem = get_problem(name)
        k = list(PROBLEMS).index(name)
        rng = np.random.default_rng([config.seed, k])
        model, bounds = None, None
        if getattr(solver, "needs_data", True):
            X, y = make_observed_data(problem, config.n_samples, rng)
            model, _ = train_mlp(X, y, config.regressor)
            bounds = observed_bounds(X)
        predictions = predict_univariate_skeletons(solver, model, problem, config, rng, bounds)
        for v, pred in predictions.items():
            target = problem.target(v)
            if isinstance(pred, Skeleton):
                evaluation = evaluate_skeleton(pred, target, problem.domains[v - 1], config.evaluation)
                cell = CellResult(name, v, to_infix(pred.tree), to_infix(target.tree), True, evaluation=evaluation)
            else:
                cell = CellResult(name, v, " ".join(pred.tokens), to_infix(target.tree), False, str(pred))
            cells.append(cell)
            if log is not None:
                score = f"{cell.evaluation.mean_normalized:.3g}" if cell.evaluation else "invalid"
                log(f"{name} x{v}: {cell.predicted}  r_norm={score}")
    metadata = {
        "package_version": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "config": _config_metadata(config),
    }
    return RunReport(cells, metadata)


def skeleton_text(skeleton) -> str:
    return to_text(skeleton.tree) if isinstance(skeleton, Skeleton) else " ".join(skeleton.tokens)

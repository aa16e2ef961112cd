"""Benchmark problems E1..E13 with their domains and per-variable target skeletons."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .expr import Abs, Expr, cos, exp, log, placeholder, sin, sqrt, tanh, var
from .skeleton import Skeleton, make_skeleton

x1, x2, x3, x4 = var(1), var(2), var(3), var(4)


def _c() -> Expr:
    return placeholder()


@dataclass(frozen=True)
class BenchmarkProblem:
    id: str
    expr: Expr
    domains: tuple[tuple[float, float], ...]
    targets: tuple[Skeleton, ...]
    notes: str = ""
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def n_vars(self) -> int:
        return len(self.domains)

    def target(self, v: int) -> Skeleton:
        return self.targets[v - 1]


def _targets(*trees: Expr) -> tuple[Skeleton, ...]:
    return tuple(make_skeleton(t) for t in trees)


def _poly4(x):
    return _c() + _c() * x + _c() * x**2 + _c() * x**4


def _poly2(x):
    return _c() + _c() * x + _c() * x**2


def _build() -> dict[str, BenchmarkProblem]:
    c = _c
    problems = [
        BenchmarkProblem(
            "E1",
            (3.0375 * x1 * x2 + 5.5 * sin(9 / 4 * (x1 - 2 / 3) * (x2 - 2 / 3))) / 5,
            ((-5, 5), (-5, 5)),
            _targets(
                c() * x1 + c() * sin(c() * (c() + x1)),
                c() * x2 + c() * sin(c() * (c() + x2)),
            ),
        ),
        BenchmarkProblem(
            "E2",
            5.5 + (1 - x1 / 4) ** 2 + sqrt(x2 + 10) * sin(x3 / 5),
            ((-10, 10), (-10, 10), (-10, 10)),
            _targets(
                c() + (c() + c() * x1) ** 2,
                c() * sqrt(x2 + c()) + c(),
                c() + c() * sin(c() * x3),
            ),
            notes="domain is printed as a square for a three-variable problem; all three use [-10, 10]",
        ),
        BenchmarkProblem(
            "E3",
            (1.5 * exp(1.5 * x1) + 5 * cos(3 * x2)) / 10,
            ((-5, 5), (-5, 5)),
            _targets(c() + c() * exp(c() * x1), c() + c() * cos(c() * x2)),
        ),
        BenchmarkProblem(
            "E4",
            ((1 - x1) ** 2 + (1 - x3) ** 2 + 100 * (x2 - x1**2) ** 2 + 100 * (x4 - x3**2) ** 2) / 10000,
            ((-5, 5),) * 4,
            _targets(_poly4(x1), _poly2(x2), _poly4(x3), _poly2(x4)),
            notes="x2 and x3 targets use the corrected forms c1 + c2*x2 + c3*x2**2 and c1 + c2*x3 + c3*x3**2 + c4*x3**4",
        ),
        BenchmarkProblem(
            "E5",
            sin(x1 + x2 * x3) + exp(1.2 * x4),
            ((-10, 10), (-5, 5), (-5, 5), (-3, 3)),
            _targets(
                c() + sin(c() + c() * x1),
                c() + sin(c() + c() * x2),
                c() + sin(c() + c() * x3),
                c() + exp(c() * x4),
            ),
        ),
        BenchmarkProblem(
            "E6",
            tanh(x1 / 2) + Abs(x2) * cos(x3**2 / 5),
            ((-10, 10),) * 3,
            _targets(c() + tanh(c() * x1), c() + c() * Abs(x2), c() + c() * cos(c() * x3**2)),
        ),
        BenchmarkProblem(
            "E7",
            (1 - x2**2) / (sin(2 * math.pi * x1) + 1.5),
            ((-5, 5), (-5, 5)),
            _targets(c() / (c() + sin(c() * x1)), c() + c() * x2**2),
        ),
        BenchmarkProblem(
            "E8",
            x1**4 / (x1**4 + 1) + x2**4 / (x2**4 + 1),
            ((-5, 5), (-5, 5)),
            _targets(
                c() + c() * x1**4 / (c() + c() * x1**4),
                c() + c() * x2**4 / (c() + c() * x2**4),
            ),
        ),
        BenchmarkProblem(
            "E9",
            log(2 * x2 + 1) - log(4 * x1**2 + 1),
            ((0, 5), (0, 5)),
            _targets(c() + c() * log(c() + c() * x1**2), c() + log(c() + c() * x2)),
        ),
        BenchmarkProblem(
            "E10",
            sin(x1 * exp(x2)),
            ((-2, 2), (-4, 4)),
            _targets(sin(c() * x1), sin(c() * exp(x2))),
        ),
        BenchmarkProblem(
            "E11",
            x1 * log(x2**4),
            ((-5, 5), (-5, 5)),
            _targets(c() * x1, c() * log(x2**4)),
        ),
        BenchmarkProblem(
            "E12",
            1 + x1 * sin(1 / x2),
            ((-10, 10), (-10, 10)),
            _targets(c() + c() * x1, c() + c() * sin(1 / x2)),
        ),
        BenchmarkProblem(
            "E13",
            sqrt(x1) * log(x2**2),
            ((0, 20), (-5, 5)),
            _targets(c() * sqrt(x1), c() * log(x2**2)),
        ),
    ]
    return {p.id: p for p in problems}


PROBLEMS: dict[str, BenchmarkProblem] = _build()


def get_problem(problem_id: str) -> BenchmarkProblem:
    try:
        return PROBLEMS[problem_id.upper()]
    except KeyError:
        raise KeyError(f"unknown benchmark problem {problem_id!r}") from None


def cells() -> list[tuple[BenchmarkProblem, int]]:
    """All (problem, variable) pairs in registry order."""
    return [(p, v) for p in PROBLEMS.values() for v in range(1, p.n_vars + 1)]

"""Skeleton similarity: fit an estimated skeleton's constants to a concrete target.

For each repeat a target function is drawn by giving the target skeleton random
constants, test inputs are drawn from the widened domain, and a genetic
algorithm searches the estimated skeleton's constants that minimize the sum of
absolute deviations ``r``. Points where the estimate is undefined cost a fixed
penalty each.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .expr import Expr, _eval, evaluate, finite_mask, has_placeholder, variables
from .sets import ConcreteFunction, sample_constants
from .skeleton import Skeleton, as_skeleton, set_constants

UNDEFINED_PENALTY = 1e6


@dataclass
class GAConfig:
    population: int = 500
    init_low: float = -10.0
    init_high: float = 10.0
    tournament: int = 3
    crossover_rate: float = 0.5
    mutation_rate: float = 0.1
    mutation_sigma: float = 0.5
    elitism: int = 1
    patience: int = 20
    tolerance: float = 1e-5
    max_generations: int = 500


@dataclass
class EvalConfig:
    n_test: int = 3000
    repeats: int = 30
    expansion: float = 2.0
    threshold: float = 1e-2
    seed: int = 0
    ga: GAConfig = field(default_factory=GAConfig)

    def __post_init__(self):
        if self.n_test < 1 or self.repeats < 1:
            raise ValueError("n_test and repeats must be positive")
        if self.expansion < 1:
            raise ValueError("expansion factor must be at least 1")
        if isinstance(self.ga, dict):
            self.ga = GAConfig(**self.ga)


@dataclass
class FitResult:
    constants: np.ndarray
    r: float
    r_normalized: float
    generations: int


@dataclass
class EvalResult:
    r: list[float]
    r_normalized: list[float]
    constants: list[list[float]]
    generations: list[int]

    @property
    def mean(self) -> float:
        return float(np.mean(self.r))

    @property
    def std(self) -> float:
        return float(np.std(self.r))

    @property
    def mean_normalized(self) -> float:
        return float(np.mean(self.r_normalized))

    @property
    def std_normalized(self) -> float:
        return float(np.std(self.r_normalized))

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "mean_normalized": self.mean_normalized,
            "std_normalized": self.std_normalized,
            "r": self.r,
            "r_normalized": self.r_normalized,
            "constants": self.constants,
            "generations": self.generations,
        }


def _single_variable(tree: Expr) -> int:
    vs = variables(tree)
    if len(vs) > 1:
        raise ValueError(f"expected a univariate expression, found variables {sorted(vs)}")
    return vs.pop() if vs else 1


def widened_domain(domain, factor: float) -> tuple[float, float]:
    low, high = domain
    return factor * low, factor * high


def sample_test_points(f_target: Expr, domain, n: int, rng, max_rounds: int = 50):
    """``n`` points of ``domain`` where ``f_target`` is defined, with its values.

    Points where the target is undefined are redrawn. Returns ``None`` when
    fewer than ``n`` valid points turn up within ``max_rounds`` draws.
    """
    v = _single_variable(f_target)
    low, high = domain
    xs, ys = [], []
    have = 0
    for _ in range(max_rounds):
        x = rng.uniform(low, high, size=max(n - have, 16))
        y = np.asarray(evaluate(f_target, {v: x}), dtype=float)
        ok = finite_mask(y)
        xs.append(x[ok])
        ys.append(y[ok])
        have += int(ok.sum())
        if have >= n:
            return np.concatenate(xs)[:n], np.concatenate(ys)[:n]
    return None


_RAW_UNARY = {
    "abs": np.abs, "acos": np.arccos, "asin": np.arcsin, "atan": np.arctan, "cos": np.cos,
    "cosh": np.cosh, "exp": np.exp, "log": np.log, "sin": np.sin, "sinh": np.sinh,
    "sqrt": np.sqrt, "tan": np.tan, "tanh": np.tanh,
}
_RAW_BINARY = {"add": np.add, "mul": np.multiply, "div": np.divide, "pow": np.power}


def compile_population(est: Expr, x: np.ndarray, dtype=np.float64):
    """Fast evaluator ``f(consts) -> (P, n)`` for a fixed input vector ``x``.

    Placeholder-free subtrees are computed once (in float64, then cast to
    ``dtype``). Intermediate NaN and inf
    propagate through plain numpy ufuncs, so callers must screen the output.
    A non-finite intermediate that turns finite again downstream (``1/inf``)
    is not flagged, unlike :func:`evaluate`.
    """
    v = _single_variable(est)
    env = {v: np.asarray(x, dtype=float)[None, :]}

    def build(node: Expr):
        if not has_placeholder(node):
            with np.errstate(all="ignore"):
                value = np.asarray(_eval(node, env, None), dtype=float).astype(dtype)
            return lambda consts: value
        if node.is_placeholder:
            j = node.value - 1
            return lambda consts: consts[j]
        if len(node.args) == 1:
            f, inner = _RAW_UNARY[node.op], build(node.args[0])
            return lambda consts: f(inner(consts))
        g, left, right = _RAW_BINARY[node.op], build(node.args[0]), build(node.args[1])
        if node.op == "pow" and not has_placeholder(node.args[1]):
            exponent = float(_eval(node.args[1], env, None))
            if exponent.is_integer() and exponent < 0:
                return lambda consts: 1.0 / np.power(left(consts), -exponent)
        return lambda consts: g(left(consts), right(consts))

    return build(est)


def population_errors(est: Expr, x: np.ndarray, y: np.ndarray, population: np.ndarray, compiled=None, dtype=np.float64) -> np.ndarray:
    """``r`` for every row of ``population`` (shape (P, n_c)).

    ``compiled`` must have been built by :func:`compile_population` with the
    same ``x`` and ``dtype``.
    """
    f = compiled or compile_population(est, x, dtype)
    consts = [population[:, j: j + 1].astype(dtype) for j in range(population.shape[1])]
    with np.errstate(all="ignore"):
        pred = np.broadcast_to(f(consts), (population.shape[0], len(x)))
        dev = np.abs(pred - y.astype(dtype)[None, :])
        bad = ~(np.abs(pred) <= 1e12)
    dev[bad] = UNDEFINED_PENALTY
    return dev.sum(axis=1, dtype=np.float64)


def genetic_fit(est: Skeleton, x: np.ndarray, y: np.ndarray, config: GAConfig, rng) -> tuple[np.ndarray, float, int]:
    """Minimize ``r`` over the constants of ``est``; return (best, r, generations).

    Selection runs on a single-precision fitness for speed; the returned ``r``
    of the winner is recomputed in double precision.
    """
    tree = est.tree
    n_c = est.n_constants
    if n_c == 0:
        return np.zeros(0), float(population_errors(tree, x, y, np.zeros((1, 0)))[0]), 0
    dtype = np.float32
    compiled = compile_population(tree, x, dtype)
    pop = rng.uniform(config.init_low, config.init_high, size=(config.population, n_c))
    fit = population_errors(tree, x, y, pop, compiled, dtype)
    history = [float(fit.min())]
    generation = 0
    for generation in range(1, config.max_generations + 1):
        order = np.argsort(fit, kind="stable")
        elite = pop[order[: config.elitism]]
        n_child = config.population - config.elitism
        contenders = rng.integers(0, config.population, size=(2, n_child, config.tournament))
        winners = contenders[np.arange(2)[:, None], np.arange(n_child)[None, :], np.argmin(fit[contenders], axis=2)]
        a, b = pop[winners[0]], pop[winners[1]]
        take_b = rng.random((n_child, n_c)) < config.crossover_rate
        children = np.where(take_b, b, a)
        mutate = rng.random((n_child, n_c)) < config.mutation_rate
        children = children + mutate * rng.normal(0.0, config.mutation_sigma, size=(n_child, n_c))
        pop = np.vstack([elite, children])
        fit = np.concatenate([fit[order[: config.elitism]], population_errors(tree, x, y, children, compiled, dtype)])
        history.append(float(fit.min()))
        if len(history) > config.patience and history[-config.patience - 1] - history[-1] < config.tolerance:
            break
    best = pop[int(np.argmin(fit))].copy()
    return best, float(population_errors(tree, x, y, best[None, :])[0]), generation


def normalize_r(r: float, y: np.ndarray) -> float:
    spread = float(np.ptp(y)) if len(y) else 0.0
    return r / (len(y) * (spread if spread > 0 else 1.0))


def fit_constants(est, f_target: Expr, domain, config: EvalConfig | None = None, rng=None) -> FitResult:
    """GA fit of ``est`` against ``f_target`` on the widened ``domain``.

    Raises ``ValueError`` when the target is undefined almost everywhere on the
    test domain.
    """
    config = config or EvalConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    est = as_skeleton(est)
    test = sample_test_points(f_target, widened_domain(domain, config.expansion), config.n_test, rng)
    if test is None:
        raise ValueError("target is undefined on almost all of the test domain")
    x, y = test
    consts, r, gens = genetic_fit(est, x, y, config.ga, rng)
    return FitResult(consts, r, normalize_r(r, y), gens)


def _draw_target(target: Skeleton, domain, config: EvalConfig, rng, attempts: int = 20):
    for _ in range(attempts):
        f = sample_constants(target, rng)
        test = sample_test_points(f.tree, widened_domain(domain, config.expansion), config.n_test, rng)
        if test is not None:
            return f, test
    raise ValueError(f"no target draw of {target} is defined on the test domain")


def evaluate_skeleton(est, target, domain, config: EvalConfig | None = None) -> EvalResult:
    """Mean and spread of ``r`` over ``config.repeats`` random target functions.

    Repeat ``i`` uses its own stream seeded by ``(seed, i)``, so results do not
    depend on the order in which repeats run.
    """
    config = config or EvalConfig()
    est = as_skeleton(est)
    target = as_skeleton(target)
    rs, norms, consts, gens = [], [], [], []
    for i in range(config.repeats):
        rng = np.random.default_rng([config.seed, i])
        _, (x, y) = _draw_target(target, domain, config, rng)
        c, r, g = genetic_fit(est, x, y, config.ga, rng)
        rs.append(r)
        norms.append(normalize_r(r, y))
        consts.append([float(v) for v in c])
        gens.append(g)
    return EvalResult(rs, norms, consts, gens)


def concretize(est, constants) -> Expr:
    return set_constants(as_skeleton(est), constants)


def config_with(config: EvalConfig, **changes) -> EvalConfig:
    return dataclasses.replace(config, **changes)

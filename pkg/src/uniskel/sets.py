"""Multi-set training data: constant sampling, support sampling, domain repair.

``generate_sets`` draws ``N_S`` sets for one skeleton. Each set gets its own
constants and support; ``avoid_nans`` then adjusts constants inside special
function arguments (log, sqrt, exp family, asin/acos) or resamples the support
away from singular points (tan, division, negative powers) so that every
response is finite.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ArityMismatch, MalformedSequence, RepairFailed
from .expr import _UNARY_FUNCS, Expr, _eval, evaluate, finite_mask, num, op_count, parse_prefix, to_text
from .rewrite import absorb, flatten, simplify
from .skeleton import Skeleton, _replace_constants, canonical_key, make_skeleton, set_constants

CONST_LOW, CONST_HIGH = -10.0, 10.0
MIN_ABS_CONST = 0.01
LOG_MARGIN = 0.05
SQRT_MARGIN = 1e-9
GROWTH_CAP = 7.0
ARC_SHRINK = 1.0 - 1e-9
EXCLUSION_FRACTION = 0.05
GRID_FACTOR = 10
REPAIR_PASSES = 20
SET_BUDGET = 200
UNKNOWN_TARGET = "?"

SINGLE_BOUNDED = ("log", "sqrt", "exp", "sinh", "cosh", "tanh")
DOUBLE_BOUNDED = ("asin", "acos")


@dataclass
class SupportSet:
    values: np.ndarray
    domain: tuple[float, float]


@dataclass
class ConcreteFunction:
    tree: Expr
    source: Skeleton | None = None
    restructured: bool = False


@dataclass
class SetCollection:
    """``N_S`` sets of (x, y) pairs believed to share one skeleton."""

    xs: list[np.ndarray]
    ys: list[np.ndarray]
    target: Skeleton | None = None
    functions: list[Expr] = field(default_factory=list)

    @property
    def n_sets(self) -> int:
        return len(self.xs)

    def __iter__(self):
        return iter(zip(self.xs, self.ys))


# ---------------------------------------------------------------------------
# constants and supports


def _draw_constants(k: int, rng, low=CONST_LOW, high=CONST_HIGH) -> np.ndarray:
    out = rng.uniform(low, high, size=k)
    small = np.abs(out) < MIN_ABS_CONST
    while small.any():
        out[small] = rng.uniform(low, high, size=int(small.sum()))
        small = np.abs(out) < MIN_ABS_CONST
    return out


def sample_constants(skeleton: Skeleton, rng: np.random.Generator) -> ConcreteFunction:
    """Give every placeholder an independent U(-10, 10) value (|c| >= 0.01)."""
    values = _draw_constants(skeleton.n_constants, rng)
    return ConcreteFunction(set_constants(skeleton, values), skeleton)


def _placeholder_parents(tree: Expr) -> list[str | None]:
    """Parent operator of each placeholder, in index order."""
    parents: dict[int, str | None] = {}

    def go(node: Expr, parent: str | None):
        if node.is_placeholder:
            parents[node.value] = parent
        for a in node.args:
            go(a, node.op)

    go(tree, None)
    return [parents[i] for i in sorted(parents)]


def _repair_handles(tree: Expr) -> set[int]:
    """Placeholders that domain repair adjusts in place.

    These are the additive constants directly inside log/sqrt and the
    coefficients directly inside the exp family and asin/acos. Dropping them
    would force repair to insert a new node, which changes the skeleton.
    """
    handles: set[int] = set()
    for node in tree.walk():
        if node.op in ("log", "sqrt"):
            handles.update(t.value for t in flatten(node.args[0], "add") if t.is_placeholder)
        elif node.op in SINGLE_BOUNDED or node.op in DOUBLE_BOUNDED:
            for term in flatten(node.args[0], "add"):
                handles.update(f.value for f in flatten(term, "mul") if f.is_placeholder)
    return handles


def select_constants(skeleton: Skeleton, n_f: int, rng: np.random.Generator) -> Skeleton:
    """Keep ``n_f`` randomly chosen placeholders and neutralize the others.

    A dropped placeholder becomes 0 under ``add`` and 1 under ``mul``; the tree
    is then simplified. Placeholders that cannot be neutralized (any other
    parent) or that domain repair relies on always survive, so more than
    ``n_f`` may remain.
    """
    n_c = skeleton.n_constants
    if n_c < 2:
        return skeleton
    if n_f > n_c:
        raise ArityMismatch(f"cannot keep {n_f} of {n_c} placeholders")
    parents = _placeholder_parents(skeleton.tree)
    handles = _repair_handles(skeleton.tree)
    droppable = [i for i, p in enumerate(parents, start=1) if p in ("add", "mul") and i not in handles]
    fixed = [i for i in range(1, n_c + 1) if i not in droppable]
    n_keep_free = max(0, n_f - len(fixed))
    kept = set(fixed)
    if n_keep_free < len(droppable):
        chosen = rng.choice(len(droppable), size=n_keep_free, replace=False)
        kept.update(droppable[i] for i in chosen)
    else:
        kept.update(droppable)
    if len(kept) == n_c:
        return skeleton
    return _neutralize(to_text(skeleton.tree, indexed=True), frozenset(kept))


def keep_constants(skeleton: Skeleton, kept) -> Skeleton:
    """Neutralize every placeholder whose index is not in ``kept``, then simplify."""
    return _neutralize(to_text(skeleton.tree, indexed=True), frozenset(kept))


@functools.lru_cache(maxsize=16384)
def _neutralize(text: str, kept: frozenset) -> Skeleton:
    def go(node: Expr, parent: str | None) -> Expr:
        if node.is_placeholder and node.value not in kept:
            return num(0.0 if parent == "add" else 1.0)
        if node.is_leaf:
            return node
        return node.replace_args(*(go(a, node.op) for a in node.args))

    return make_skeleton(simplify(go(parse_prefix(text), None)))


def sample_support(n: int, rng: np.random.Generator) -> SupportSet:
    """``n`` values from U(-L, L) with L ~ U(1, 10) drawn once per call."""
    if n < 1:
        raise ValueError("support size must be positive")
    limit = rng.uniform(1.0, 10.0)
    return SupportSet(rng.uniform(-limit, limit, size=n), (-limit, limit))


# ---------------------------------------------------------------------------
# domain repair


def _is_singular(node: Expr) -> bool:
    if node.op in ("tan", "div"):
        return True
    return node.op == "pow" and node.args[1].is_num and node.args[1].value < 0


def is_special(node: Expr) -> bool:
    return node.op in SINGLE_BOUNDED or node.op in DOUBLE_BOUNDED or _is_singular(node)


def contains_special(node: Expr) -> bool:
    memo = node.memo
    if memo[2] is None:
        memo[2] = is_special(node) or any(contains_special(a) for a in node.args)
    return memo[2]


def shift_expr(tree: Expr, delta: float) -> Expr:
    """``tree + delta``, folded into an existing additive constant when there is one."""
    if tree.op == "add":
        terms = flatten(tree, "add")
        for i, t in enumerate(terms):
            if t.is_num:
                terms[i] = num(t.value + delta)
                out = terms[-1]
                for item in reversed(terms[:-1]):
                    out = Expr("add", (item, out))
                return out
    return Expr("add", (tree, num(delta)))


def scale_expr(tree: Expr, factor: float) -> Expr:
    """``factor * tree``, folded into existing numeric coefficients when possible."""
    if tree.is_num:
        return num(tree.value * factor)
    if tree.op == "mul":
        a, b = tree.args
        if a.is_num:
            return tree.replace_args(num(a.value * factor), b)
        if b.is_num:
            return tree.replace_args(a, num(b.value * factor))
        return tree.replace_args(scale_expr(a, factor), b)
    if tree.op == "add":
        return tree.replace_args(*(scale_expr(a, factor) for a in tree.args))
    if tree.op == "div":
        return tree.replace_args(scale_expr(tree.args[0], factor), tree.args[1])
    return Expr("mul", (num(factor), tree))


def _bounded_violation(op: str, inner_vals: np.ndarray) -> bool:
    finite = inner_vals[np.isfinite(inner_vals)]
    if finite.size == 0:
        return True
    if op == "log":
        return finite.min() <= 0
    if op == "sqrt":
        return finite.min() < 0
    if op in ("exp", "tanh"):
        return finite.max() > GROWTH_CAP
    if op in ("sinh", "cosh"):
        return np.abs(finite).max() > GROWTH_CAP
    return np.abs(finite).max() > 1


def modify_single_bounded(op: str, inner: Expr, inner_vals: np.ndarray) -> Expr:
    finite = inner_vals[np.isfinite(inner_vals)]
    if op == "log":
        return shift_expr(inner, LOG_MARGIN - finite.min())
    if op == "sqrt":
        return shift_expr(inner, -finite.min() + SQRT_MARGIN * max(1.0, np.abs(finite).max()))
    peak = finite.max() if op in ("exp", "tanh") else np.abs(finite).max()
    return scale_expr(inner, GROWTH_CAP / peak)


def modify_double_bounded(inner: Expr, inner_vals: np.ndarray) -> Expr:
    finite = inner_vals[np.isfinite(inner_vals)]
    return scale_expr(inner, ARC_SHRINK / np.abs(finite).max())


def _denominator(node: Expr) -> Expr:
    if node.op == "tan":
        return Expr("cos", node.args)
    if node.op == "div":
        return node.args[1]
    return node.args[0]


def find_singularities(node: Expr, domain: tuple[float, float], n: int) -> list[float]:
    """Points where ``node`` blows up, from a scan at ``GRID_FACTOR * n`` resolution.

    A singular point is a sign change of the denominator, a grid point where it
    is exactly zero, or a grid point where ``node`` itself is invalid.
    """
    lo, hi = domain
    grid = np.linspace(lo, hi, max(GRID_FACTOR * n, 16))
    den = np.asarray(evaluate(_denominator(node), grid), dtype=float) * np.ones_like(grid)
    vals = np.asarray(evaluate(node, grid), dtype=float) * np.ones_like(grid)
    points = list(grid[(den == 0) | ~finite_mask(vals)])
    ok = np.isfinite(den)
    s = np.sign(den)
    crossing = ok[:-1] & ok[1:] & (s[:-1] * s[1:] < 0)
    for i in np.flatnonzero(crossing):
        a, b = grid[i], grid[i + 1]
        da, db = den[i], den[i + 1]
        points.append(a - da * (b - a) / (db - da))
    return sorted(points)


def _allowed_intervals(domain, singular, half_width):
    lo, hi = domain
    intervals = []
    start = lo
    for s in sorted(singular):
        a, b = s - half_width, s + half_width
        if b <= start:
            continue
        if a > start:
            intervals.append((start, min(a, hi)))
        start = max(start, b)
        if start >= hi:
            break
    if start < hi:
        intervals.append((start, hi))
    return [(a, b) for a, b in intervals if b > a]


def avoid_singularities(n: int, node: Expr, singular: list[float], domain, rng) -> tuple[np.ndarray, list[float]]:
    """Resample ``n`` support points uniformly outside neighbourhoods of singular points."""
    singular = sorted(set(singular) | set(find_singularities(node, domain, n)))
    half_width = EXCLUSION_FRACTION * (domain[1] - domain[0]) / n
    intervals = _allowed_intervals(domain, singular, half_width)
    if not intervals:
        raise RepairFailed("no admissible support left after excluding singular points")
    widths = np.array([b - a for a, b in intervals])
    u = rng.uniform(0.0, widths.sum(), size=n)
    edges = np.concatenate([[0.0], np.cumsum(widths)])
    idx = np.clip(np.searchsorted(edges, u, side="right") - 1, 0, len(intervals) - 1)
    starts = np.array([a for a, _ in intervals])
    return starts[idx] + (u - edges[idx]), singular


class _RepairState:
    def __init__(self, x: np.ndarray, domain, rng):
        self.x = x
        self.domain = domain
        self.rng = rng
        self.singular: list[float] = []
        self.resampled = False
        self.restructured = False


def _values(tree: Expr, x: np.ndarray) -> np.ndarray:
    out = np.asarray(_eval(tree, {1: x}, None), dtype=float)
    return out if out.shape == x.shape else np.broadcast_to(out, x.shape)


def _repair_args(args: Iterable[Expr], state: _RepairState) -> list[Expr]:
    out = []
    for arg in args:
        if contains_special(arg):
            if not is_special(arg):
                arg = arg.replace_args(*_repair_args(arg.args, state))
            else:
                if any(contains_special(a) for a in arg.args):
                    arg = arg.replace_args(*_repair_args(arg.args, state))
                arg = _repair_special(arg, state)
        out.append(arg)
    return out


def _repair_special(arg: Expr, state: _RepairState) -> Expr:
    op = arg.op
    if op in SINGLE_BOUNDED or op in DOUBLE_BOUNDED:
        inner = arg.args[0]
        inner_vals = _values(inner, state.x)
        vals = _UNARY_FUNCS[op](inner_vals)
        if finite_mask(vals).all() and not _bounded_violation(op, inner_vals):
            return arg
        if not np.isfinite(inner_vals).any():
            raise RepairFailed(f"argument of {op} is undefined on the whole support")
        if op in SINGLE_BOUNDED:
            new_inner = modify_single_bounded(op, inner, inner_vals)
        else:
            new_inner = modify_double_bounded(inner, inner_vals)
        state.restructured |= op_count(new_inner) != op_count(inner)
        return arg.replace_args(new_inner)
    if not finite_mask(_values(arg, state.x)).all():
        state.x, state.singular = avoid_singularities(len(state.x), arg, state.singular, state.domain, state.rng)
        state.resampled = True
    return arg


def avoid_nans(
    support: SupportSet, f: ConcreteFunction, rng: np.random.Generator, passes: int = REPAIR_PASSES
) -> tuple[SupportSet, ConcreteFunction, list[float]]:
    """Make ``f`` finite on the support by adjusting constants or resampling points.

    Each pass walks the tree once, fixing special-function arguments that are
    out of their domain (or above the growth cap) and resampling the support
    around singular points. A pass that resampled the support is followed by
    another one, since the new points can expose new violations. Raises
    :class:`RepairFailed` if responses are still undefined at that point or
    after ``passes`` passes.

    The returned function carries ``restructured=True`` when a repair had to
    add a node instead of adjusting an existing constant.
    """
    state = _RepairState(np.asarray(support.values, dtype=float).copy(), support.domain, rng)
    tree = f.tree
    with np.errstate(all="ignore"):
        for _ in range(passes):
            state.resampled = False
            (tree,) = _repair_args([tree], state)
            if not state.resampled:
                break
        else:
            raise RepairFailed(f"support still needs repair after {passes} passes")
        if not finite_mask(_values(tree, state.x)).all():
            raise RepairFailed("responses undefined outside any repairable special function")
    repaired = ConcreteFunction(tree, f.source, state.restructured)
    return SupportSet(state.x, support.domain), repaired, state.singular


# ---------------------------------------------------------------------------
# collections


@functools.lru_cache(maxsize=16384)
def _normalized(text: str) -> Skeleton:
    """Skeleton of a selected skeleton: literal numbers left by neutralization become placeholders."""
    return make_skeleton(absorb(_replace_constants(parse_prefix(text))))


@functools.lru_cache(maxsize=65536)
def _canonical_of_structure(text: str) -> str:
    return canonical_key(absorb(parse_prefix(text)))


def structure_text(tree: Expr) -> str:
    return to_text(_replace_constants(tree))


def function_skeleton_key(tree: Expr) -> str:
    """Canonical key of the skeleton of a concrete function."""
    return _canonical_of_structure(structure_text(tree))


def generate_sets(
    skeleton: Skeleton,
    n_sets: int,
    n: int,
    rng: np.random.Generator,
    set_budget: int = SET_BUDGET,
    reselect: int = 5,
) -> SetCollection:
    """Draw ``n_sets`` finite sets that all share the skeleton of ``skeleton``.

    Constants are selected once, then each set gets fresh constants and
    support, is repaired, and is kept only if its function still has the
    collection's skeleton. When ``set_budget`` attempts are not enough the
    selection is redrawn, up to ``reselect`` times.
    """
    if not any(node.is_var for node in skeleton.tree.walk()):
        raise ValueError("skeleton has no variable")
    last_error = None
    for _ in range(reselect):
        n_c = skeleton.n_constants
        ex = select_constants(skeleton, int(rng.integers(2, n_c + 1)), rng) if n_c >= 2 else skeleton
        structure = structure_text(ex.tree)
        target = _normalized(structure)
        xs, ys, fs = [], [], []
        attempts = 0
        while len(xs) < n_sets and attempts < set_budget:
            attempts += 1
            support = sample_support(n, rng)
            try:
                support, f, _ = avoid_nans(support, sample_constants(ex, rng), rng)
            except RepairFailed as exc:
                last_error = exc
                continue
            if f.restructured:
                text = structure_text(f.tree)
                if text != structure and _canonical_of_structure(text) != target.canonical:
                    continue
            y = np.asarray(evaluate(f.tree, support.values), dtype=float)
            xs.append(support.values)
            ys.append(y)
            fs.append(f.tree)
        if len(xs) == n_sets:
            return SetCollection(xs, ys, target, fs)
    raise RepairFailed(f"could not build {n_sets} consistent sets: {last_error}")


# ---------------------------------------------------------------------------
# record files


def format_record(collection: SetCollection) -> str:
    """One line: skeleton tokens (``?`` if unknown), tab, N_S, then per set ``n x1 y1 x2 y2 ...``."""
    head = to_text(collection.target.tree) if collection.target is not None else UNKNOWN_TARGET
    parts = [head, str(collection.n_sets)]
    for x, y in collection:
        pairs = np.column_stack([x, y]).ravel()
        parts.append(" ".join([str(len(x))] + [repr(float(v)) for v in pairs]))
    return "\t".join(parts)


def parse_record(line: str) -> SetCollection:
    fields = line.rstrip("\n").split("\t")
    if len(fields) < 2:
        raise MalformedSequence("record needs a skeleton and a set count", 1)
    target = None if fields[0].strip() == UNKNOWN_TARGET else make_skeleton(parse_prefix(fields[0]))
    n_sets = int(fields[1])
    if len(fields) != n_sets + 2:
        raise MalformedSequence(f"expected {n_sets} sets, found {len(fields) - 2}", 2)
    xs, ys = [], []
    for block in fields[2:]:
        values = block.split()
        n = int(values[0])
        pairs = np.array([float(v) for v in values[1:]], dtype=float)
        if pairs.size != 2 * n:
            raise MalformedSequence(f"set declares {n} pairs but holds {pairs.size / 2:g}", 3)
        pairs = pairs.reshape(n, 2)
        xs.append(pairs[:, 0])
        ys.append(pairs[:, 1])
    return SetCollection(xs, ys, target)


def write_records(path, collections: Iterable[SetCollection]) -> int:
    count = 0
    with open(path, "w") as fh:
        for c in collections:
            fh.write(format_record(c) + "\n")
            count += 1
    return count


def read_records(path) -> list[SetCollection]:
    return [parse_record(line) for line in Path(path).read_text().splitlines() if line.strip()]

"""Skeletons: expressions whose numeric constants are indexed placeholders."""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ArityMismatch
from .expr import Expr, has_variable, is_int_exponent, num, parse_prefix, placeholder, placeholder_count, to_text
from .rewrite import absorb, canonical_form, reindex, simplify


@dataclass(frozen=True)
class Skeleton:
    """A placeholder tree (indices 1..n_c in preorder) plus its comparison key."""

    tree: Expr

    @functools.cached_property
    def canonical(self) -> str:
        return canonical_key(self.tree)

    @property
    def n_constants(self) -> int:
        return placeholder_count(self.tree)

    @property
    def tokens(self) -> list[str]:
        return to_text(self.tree).split()

    def __str__(self) -> str:
        return str(self.tree)


def canonical_key(tree: Expr) -> str:
    return _canonical_of_text(to_text(tree))


@functools.lru_cache(maxsize=65536)
def _canonical_of_text(text: str) -> str:
    return to_text(canonical_form(parse_prefix(text)))


def make_skeleton(tree: Expr) -> Skeleton:
    return Skeleton(reindex(tree))


def as_skeleton(obj) -> Skeleton:
    if isinstance(obj, Skeleton):
        return obj
    if isinstance(obj, Expr):
        return make_skeleton(obj)
    return make_skeleton(parse_prefix(obj))


def _replace_constants(node: Expr, keep_exponent: bool = False) -> Expr:
    if node.is_num:
        return node if keep_exponent and is_int_exponent(node) else placeholder()
    if node.is_leaf:
        return node
    if node.op == "pow":
        base, exponent = node.args
        return node.replace_args(_replace_constants(base), _replace_constants(exponent, True))
    return node.replace_args(*(_replace_constants(a) for a in node.args))


def skeletonize(tree: Expr) -> Skeleton:
    """Replace every numeric constant by a fresh placeholder, keeping the structure.

    Integer exponents of ``pow`` are structural and stay. Existing placeholders
    are re-indexed, so the function is idempotent.
    """
    return make_skeleton(_replace_constants(tree))


def _collapse(node: Expr, v: int, exponent: bool = False) -> Expr:
    if not any(n.is_var and n.value == v for n in node.walk()):
        if exponent and is_int_exponent(node):
            return node
        return placeholder()
    if node.is_leaf:
        return node
    if node.op == "pow":
        base, e = node.args
        return node.replace_args(_collapse(base, v), _collapse(e, v, True))
    return node.replace_args(*(_collapse(a, v) for a in node.args))


def skeletonize_wrt(tree: Expr, v: int) -> Skeleton:
    """Skeleton of ``tree`` as a function of ``x_v`` alone.

    Every maximal subtree without ``x_v`` (other variables included) becomes a
    placeholder, then redundant placeholders are merged.
    """
    collapsed = _collapse(simplify(tree), v)
    if not has_variable(collapsed):
        return make_skeleton(placeholder())
    return make_skeleton(absorb(collapsed))


def normalize(tree: Expr) -> Skeleton:
    """Skeleton with redundant placeholders merged, in display form."""
    return make_skeleton(absorb(_replace_constants(tree)))


def set_constants(skeleton, values: Sequence[float]) -> Expr:
    """Substitute ``values[i-1]`` for placeholder ``c_i``."""
    tree = skeleton.tree if isinstance(skeleton, Skeleton) else reindex(skeleton)
    values = np.asarray(values, dtype=float).ravel()
    n_c = placeholder_count(tree)
    if len(values) != n_c:
        raise ArityMismatch(f"skeleton has {n_c} placeholders, got {len(values)} values")

    def go(node: Expr) -> Expr:
        if node.is_placeholder:
            return num(values[node.value - 1])
        if node.is_leaf:
            return node
        return node.replace_args(*(go(a) for a in node.args))

    return go(tree)


def canonical_equal(a, b) -> bool:
    """True when both skeletons describe the same family of functions."""
    return as_skeleton(a).canonical == as_skeleton(b).canonical

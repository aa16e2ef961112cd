"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from uniskel.expr import Expr, evaluate, finite_mask, num
from uniskel.generate import GenConfig, _raw_tree, insert_placeholders
from uniskel.skeleton import make_skeleton, set_constants


def random_concrete_tree(seed: int, low: float = -10.0, high: float = 10.0) -> Expr:
    """Unsimplified generator tree with placeholders filled by random constants."""
    rng = np.random.default_rng(seed)
    skel = make_skeleton(insert_placeholders(_raw_tree(rng, GenConfig())))
    return set_constants(skel, rng.uniform(low, high, skel.n_constants))


def jitter_constants(tree: Expr, rng, rel: float = 1e-13) -> Expr:
    def go(node: Expr) -> Expr:
        if node.is_num and not float(node.value).is_integer():
            return num(node.value * (1 + rel * rng.standard_normal()))
        if node.is_leaf:
            return node
        return node.replace_args(*(go(a) for a in node.args))

    return go(tree)


def values_agree(a: Expr, b: Expr, x: np.ndarray, rng, rel: float = 1e-9) -> bool:
    """Same definedness and values within ``rel`` at every well-conditioned point of ``x``.

    A point is ill-conditioned when rounding-level changes of the constants of
    ``a`` already move its value by more than 1e-10 relative.
    """
    va = np.broadcast_to(evaluate(a, x), x.shape)
    vb = np.broadcast_to(evaluate(b, x), x.shape)
    vj = np.broadcast_to(evaluate(jitter_constants(a, rng), x), x.shape)
    fa, fb, fj = finite_mask(va), finite_mask(vb), finite_mask(vj)
    with np.errstate(all="ignore"):
        scale = np.maximum(np.maximum(np.abs(va), np.abs(vb)), 1e-12)
        stable = fa & fj & (np.abs(va - vj) <= 1e-10 * scale)
        edge = fa != fj
    if np.any((fa != fb) & ~edge):
        return False
    both = stable & fb
    return bool(np.all(np.abs(va - vb)[both] <= rel * scale[both]))

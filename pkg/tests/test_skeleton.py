from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uniskel.errors import ArityMismatch
from uniskel.expr import evaluate, exp, log, num, parse_prefix, placeholder, sin, sqrt, to_text, var, variables
from uniskel.generate import GenConfig, random_skeleton
from uniskel.skeleton import (
    as_skeleton,
    canonical_equal,
    make_skeleton,
    set_constants,
    skeletonize,
    skeletonize_wrt,
)

x, x1, x2, x3 = var(1), var(1), var(2), var(3)
c = placeholder


def test_skeleton_of_polynomial_plus_exponential():
    got = skeletonize(3 * x**2 + exp(2 * x) - 4)
    assert canonical_equal(got, c() * x**2 + exp(c() * x) + c())
    assert to_text(got.tree, indexed=True) == "add add mul c1 pow x 2 exp mul c2 x c3"


def test_skeleton_of_bare_variable():
    assert skeletonize(x).tree == x


def test_skeleton_of_singular_quotient():
    got = skeletonize(num(-3.12) * x / sin(num(1.45) * x) - 2.2)
    assert canonical_equal(got, c() * x / sin(c() * x) + c())
    assert got.n_constants == 3


def test_skeleton_with_respect_to_one_variable():
    f = 3 * x1**2 + sqrt(x2 + 1) / exp(2 * x3)
    assert canonical_equal(skeletonize_wrt(f, 1), c() * x1**2 + c())


def test_skeleton_wrt_product_with_log():
    f = x1 * log(x2**4)
    assert canonical_equal(skeletonize_wrt(f, 1), c() * x1)
    assert canonical_equal(skeletonize_wrt(f, 2), c() * log(x2**4))


def test_set_constants_substitutes_in_order():
    tree = set_constants(as_skeleton("add mul c x c"), [2, -1])
    assert evaluate(tree, 3.0) == pytest.approx(5.0)


def test_set_constants_matches_literal_tree_on_probe_grid():
    tree = set_constants(make_skeleton(c() * sqrt(x + c()) + c()), [1, 10, 0])
    grid = np.linspace(-9, 9, 37)
    assert np.allclose(evaluate(tree, grid), evaluate(sqrt(x + 10), grid))


def test_set_constants_arity_mismatch():
    with pytest.raises(ArityMismatch):
        set_constants(make_skeleton(c() * x), [2, 3])


def test_canonical_equal_examples():
    assert canonical_equal(c() + c() * x, c() * x + c())
    assert not canonical_equal(c() * sin(x), c() * parse_prefix("cos x"))
    assert canonical_equal(skeletonize(2 * x + sin(3 * x)), skeletonize(5 * x + sin(-x)))


def test_placeholders_are_contiguous_in_preorder():
    skel = make_skeleton(c(9) * sin(c(4) * x) + c(2))
    assert [n.value for n in skel.tree.walk() if n.is_placeholder] == [1, 2, 3]


def _random_skeleton(seed):
    return random_skeleton(GenConfig(), np.random.default_rng(seed))


@given(st.integers(0, 10**6))
def test_skeletonize_is_idempotent(seed):
    skel = _random_skeleton(seed)
    assert canonical_equal(skeletonize(skel.tree), skel)
    assert canonical_equal(skeletonize(skeletonize(skel.tree).tree), skeletonize(skel.tree))


@given(st.integers(0, 10**6), st.integers(1, 3))
def test_skeleton_wrt_keeps_only_that_variable(seed, v):
    rng = np.random.default_rng(seed)
    tree = random_skeleton(GenConfig(), rng).tree
    # spread the single variable over three indices, then concretize
    def spread(node):
        if node.is_var:
            return var(int(rng.integers(1, 4)))
        if node.is_placeholder:
            return num(float(rng.uniform(-5, 5)))
        return node if node.is_leaf else node.replace_args(*(spread(a) for a in node.args))

    out = skeletonize_wrt(spread(tree), v)
    assert variables(out.tree) <= {v}
    assert all(not n.is_num or float(n.value).is_integer() for n in out.tree.walk())


def test_canonical_equality_is_an_equivalence():
    skels = [_random_skeleton(s) for s in range(1000)]
    rng = np.random.default_rng(3)
    for s in skels:
        assert canonical_equal(s, s)
    for _ in range(300):
        a, b = (skels[i] for i in rng.integers(0, len(skels), 2))
        assert canonical_equal(a, b) == canonical_equal(b, a)
    # transitivity on triples of commutatively shuffled copies
    for s in skels[:200]:
        a, b = _shuffled(s.tree, rng), _shuffled(s.tree, rng)
        assert canonical_equal(s, a) and canonical_equal(a, b) and canonical_equal(s, b)


def _shuffled(tree, rng):
    if tree.is_leaf:
        return tree
    args = [_shuffled(a, rng) for a in tree.args]
    if tree.op in ("add", "mul") and rng.random() < 0.5:
        args.reverse()
    return make_skeleton(tree.replace_args(*args)).tree

"""Tree rewriting: numeric simplification and skeleton normal forms.

Three layers, each built on the previous one:

``simplify``
    Semantics-preserving rules for concrete trees: constant folding,
    identities and annihilators, like-term and like-base merging, log/exp
    cancellation, pow-of-pow merging, and sorting of add/mul chains.
``absorb``
    Skeleton rules where every placeholder is a free constant: variable-free
    subtrees collapse to one placeholder, placeholders in a chain merge,
    ``exp(c + u) -> c*exp(u)`` and ``c*(c*u + c*v) -> c*u + c*v``.
``canonical_form``
    Comparison form: divisions become negative powers, products are expanded
    over sums, and summands next to a free additive placeholder get their own
    multiplicative placeholder. Only used for equality testing.
"""

from __future__ import annotations

import itertools
import math

from .expr import Expr, evaluate, has_placeholder, has_variable, is_int_exponent, num, placeholder

MAX_PASSES = 12
MAX_EXPANDED_TERMS = 256


def _key(node: Expr, merge_placeholders: bool) -> str:
    slot = node.memo
    cached = slot[merge_placeholders]
    if cached is not None:
        return cached
    if node.is_leaf:
        if node.is_var:
            key = f"x{node.value}"
        elif node.is_placeholder:
            key = "c" if merge_placeholders else f"c{node.value}"
        else:
            key = repr(node.value)
    else:
        key = node.op + "(" + ",".join(_key(a, merge_placeholders) for a in node.args) + ")"
    slot[merge_placeholders] = key
    return key


def _rank(node: Expr) -> int:
    return {"num": 0, "c": 1, "x": 2}.get(node.op, 3)


def sort_key(node: Expr, merge_placeholders: bool = True):
    return (_rank(node), _key(node, merge_placeholders))


def flatten(node: Expr, op: str) -> list[Expr]:
    if node.op != op:
        return [node]
    out = []
    for a in node.args:
        out.extend(flatten(a, op))
    return out


def chain(op: str, items: list[Expr]) -> Expr:
    if not items:
        return num(0.0 if op == "add" else 1.0)
    out = items[-1]
    for item in reversed(items[:-1]):
        out = Expr(op, (item, out))
    return out


def _int_pow(base: Expr, k: int) -> Expr:
    if k == 1:
        return base
    return Expr("pow", (base, num(k)))


def _power_parts(node: Expr) -> tuple[Expr, int]:
    if node.op == "pow" and is_int_exponent(node.args[1]):
        return node.args[0], int(node.args[1].value)
    return node, 1


def _split_coefficient(term: Expr) -> tuple[float, Expr]:
    factors = flatten(term, "mul")
    coef = 1.0
    rest = []
    for f in factors:
        if f.is_num:
            coef *= f.value
        else:
            rest.append(f)
    return coef, chain("mul", rest)


# ---------------------------------------------------------------------------
# numeric simplification


def _fold(op: str, args: tuple[Expr, ...]) -> Expr | None:
    value = evaluate(Expr(op, args), {})
    if math.isfinite(value):
        return num(value)
    return None


def _simplify_sum(args, merge):
    terms = []
    for a in args:
        terms.extend(flatten(a, "add"))
    constant = 0.0
    groups: dict[str, list] = {}
    for t in terms:
        if t.is_num:
            constant += t.value
            continue
        coef, rest = _split_coefficient(t)
        k = _key(rest, merge)
        if k in groups:
            groups[k][0] += coef
        else:
            groups[k] = [coef, rest]
    out = []
    for coef, rest in groups.values():
        if coef == 0:
            continue
        if coef == 1:
            out.append(rest)
        else:
            out.append(chain("mul", [num(coef)] + flatten(rest, "mul")))
    if constant != 0 or not out:
        out.append(num(constant))
    out.sort(key=lambda n: sort_key(n, merge))
    return chain("add", out)


def _simplify_product(args, merge):
    factors = []
    for a in args:
        factors.extend(flatten(a, "mul"))
    coef = 1.0
    groups: dict[str, list] = {}
    for f in factors:
        if f.is_num:
            coef *= f.value
            continue
        base, k = _power_parts(f)
        key = _key(base, merge)
        if key in groups:
            groups[key][1] += k
        else:
            groups[key] = [base, k]
    if coef == 0:
        return num(0.0)
    out = [_int_pow(base, k) for base, k in groups.values() if k != 0]
    out.sort(key=lambda n: sort_key(n, merge))
    if coef != 1 or not out:
        out.insert(0, num(coef))
    return chain("mul", out)


def _simplify_node(node: Expr, merge: bool) -> Expr:
    if node.is_leaf:
        return node
    args = tuple(_simplify_node(a, merge) for a in node.args)
    op = node.op
    if all(a.is_num for a in args):
        folded = _fold(op, args)
        if folded is not None:
            return folded
        return Expr(op, args)
    if op == "add":
        return _simplify_sum(args, merge)
    if op == "mul":
        return _simplify_product(args, merge)
    if op == "div":
        a, b = args
        if b.is_num and b.value != 0:
            return _simplify_product((num(1.0 / b.value), a), merge)
        if a.is_num and a.value == 1:
            return _simplify_pow(b, num(-1))
        if a.is_num and a.value == 0:
            return num(0.0)
        if a == b and not has_placeholder(a):
            return num(1.0)
        return Expr("div", args)
    if op == "pow":
        return _simplify_pow(*args)
    inner = args[0]
    if (op, inner.op) in (("log", "exp"), ("exp", "log")):
        return inner.args[0]
    if op == "abs" and inner.op == "abs":
        return inner
    return Expr(op, args)


def _simplify_pow(base: Expr, exponent: Expr) -> Expr:
    if exponent.is_num:
        if exponent.value == 1:
            return base
        if exponent.value == 0:
            return num(1.0)
        if base.op == "pow" and is_int_exponent(base.args[1]) and is_int_exponent(exponent):
            return _simplify_pow(base.args[0], num(base.args[1].value * exponent.value))
    return Expr("pow", (base, exponent))


def simplify(tree: Expr, merge_placeholders: bool = False) -> Expr:
    """Apply the numeric rewrite rules until nothing changes.

    The result evaluates like the input wherever the input is defined, and its
    operator count is never larger.
    """
    current = tree
    for _ in range(MAX_PASSES):
        nxt = _simplify_node(current, merge_placeholders)
        if nxt == current:
            break
        current = nxt
    return current


# ---------------------------------------------------------------------------
# skeleton absorption


def _is_free_constant(node: Expr) -> bool:
    return not has_variable(node) and has_placeholder(node)


def _has_free_coefficient(term: Expr) -> bool:
    return term.is_placeholder or any(f.is_placeholder for f in flatten(term, "mul"))


def _strip_coefficients(term: Expr) -> Expr:
    return chain("mul", [f for f in flatten(term, "mul") if not (f.is_num or f.is_placeholder)])


def _absorb_sum(args) -> Expr:
    terms = []
    for a in args:
        terms.extend(flatten(a, "add"))
    has_c = any(t.is_placeholder for t in terms)
    groups: dict[str, list] = {}
    out: list[Expr] = []
    for t in terms:
        if t.is_placeholder or (has_c and t.is_num):
            continue
        rest = _strip_coefficients(t)
        k = _key(rest, True)
        if k in groups:
            groups[k][1] = True
        else:
            groups[k] = [t, _has_free_coefficient(t), rest]
    for t, free, rest in groups.values():
        out.append(chain("mul", [placeholder()] + flatten(rest, "mul")) if free and t is not rest else t)
    if has_c:
        out.append(placeholder())
    return chain("add", out)


def _absorb_product(args) -> Expr:
    factors = []
    for a in args:
        factors.extend(flatten(a, "mul"))
    has_c = any(f.is_placeholder for f in factors)
    out = [f for f in factors if not (f.is_placeholder or (has_c and f.is_num))]
    if has_c:
        for i, f in enumerate(out):
            if f.op == "add" and all(_has_free_coefficient(t) for t in flatten(f, "add")):
                return chain("mul", out)
        out.insert(0, placeholder())
    return chain("mul", out)


def _absorb_node(node: Expr) -> Expr:
    if node.is_leaf:
        return node
    args = tuple(_absorb_node(a) for a in node.args)
    rebuilt = Expr(node.op, args)
    if _is_free_constant(rebuilt):
        return placeholder()
    op = node.op
    if op == "add":
        return _absorb_sum(args)
    if op == "mul":
        return _absorb_product(args)
    if op == "div" and args[1].is_placeholder:
        return _absorb_product((args[0], args[1]))
    if op == "exp" and args[0].op == "add":
        terms = flatten(args[0], "add")
        if any(t.is_placeholder for t in terms):
            rest = [t for t in terms if not t.is_placeholder]
            return Expr("mul", (placeholder(), Expr("exp", (chain("add", rest),))))
    return rebuilt


def absorb(tree: Expr) -> Expr:
    """Merge redundant placeholders of a skeleton (placeholders are free constants)."""
    current = simplify(tree, merge_placeholders=True)
    for _ in range(MAX_PASSES):
        nxt = simplify(_absorb_node(current), merge_placeholders=True)
        if nxt == current:
            break
        current = nxt
    return current


# ---------------------------------------------------------------------------
# canonical comparison form


def _expand_product(factors: list[Expr]) -> Expr:
    sums = [flatten(f, "add") for f in factors]
    total = 1
    for s in sums:
        total *= len(s)
    if total > MAX_EXPANDED_TERMS:
        return chain("mul", factors)
    terms = [chain("mul", list(combo)) for combo in itertools.product(*sums)]
    return chain("add", terms)


def _expand_node(node: Expr) -> Expr:
    if node.is_leaf:
        return node
    args = tuple(_expand_node(a) for a in node.args)
    op = node.op
    if op == "div":
        return _expand_node(Expr("mul", (args[0], Expr("pow", (args[1], num(-1))))))
    if op == "pow" and is_int_exponent(args[1]):
        base, k = args[0], int(args[1].value)
        if base.op == "mul":
            return chain("mul", [Expr("pow", (f, num(k))) for f in flatten(base, "mul")])
        if base.op == "add" and 2 <= k <= 5:
            return _expand_product([base] * k)
    if op == "mul":
        factors = []
        for a in args:
            factors.extend(flatten(a, "mul"))
        if any(f.op == "add" for f in factors):
            return _expand_product(factors)
    return Expr(op, args)


def _lift_node(node: Expr) -> Expr:
    if node.is_leaf:
        return node
    args = tuple(_lift_node(a) for a in node.args)
    if node.op != "add":
        return Expr(node.op, args)
    terms = []
    for a in args:
        terms.extend(flatten(a, "add"))
    if not any(t.is_placeholder for t in terms):
        return chain("add", terms)
    lifted = [
        t if _has_free_coefficient(t) else chain("mul", [placeholder()] + flatten(t, "mul"))
        for t in terms
    ]
    return chain("add", lifted)


def _unindex(tree: Expr) -> Expr:
    if tree.is_placeholder:
        return placeholder()
    if tree.is_leaf:
        return tree
    return tree.replace_args(*(_unindex(a) for a in tree.args))


def canonical_form(tree: Expr) -> Expr:
    """Normal form used to decide whether two skeletons describe the same family."""
    current = absorb(_unindex(tree))
    for _ in range(MAX_PASSES):
        nxt = absorb(_lift_node(absorb(_expand_node(current))))
        if nxt == current:
            break
        current = nxt
    return current


def reindex(tree: Expr) -> Expr:
    """Number placeholders 1, 2, ... in preorder."""
    counter = itertools.count(1)

    def go(node: Expr) -> Expr:
        if node.is_placeholder:
            return placeholder(next(counter))
        if node.is_leaf:
            return node
        return node.replace_args(*(go(a) for a in node.args))

    return go(tree)

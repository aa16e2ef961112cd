"""Expression trees over the skeleton vocabulary.

Trees are immutable :class:`Expr` nodes. Leaves are variables (``x``), numeric
constants (``num``) and constant placeholders (``c``); inner nodes carry one of
the unary or binary operator names below. Prefix token text uses the same
names, e.g. ``add mul c x sin mul c x``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import MalformedSequence, UnboundVariable

UNARY_OPS = (
    "abs", "acos", "asin", "atan", "cos", "cosh", "exp", "log",
    "sin", "sinh", "sqrt", "tan", "tanh",
)
BINARY_OPS = ("add", "div", "mul", "pow")
OPERATORS = tuple(sorted(UNARY_OPS + BINARY_OPS))
ARITY = {**{op: 1 for op in UNARY_OPS}, **{op: 2 for op in BINARY_OPS}}
INTEGER_TOKENS = tuple(range(-3, 6))
COMMUTATIVE = ("add", "mul")

_VAR_RE = re.compile(r"^x_?(\d*)$")
_CONST_RE = re.compile(r"^c_?(\d*)$")


@dataclass(frozen=True, slots=True)
class Expr:
    """One node of an expression tree.

    ``value`` holds the variable index for ``x`` leaves, the placeholder index
    for ``c`` leaves (0 when not yet indexed) and the real value for ``num``.
    """

    op: str
    args: tuple[Expr, ...] = ()
    value: float | int | None = None
    # per-node memo slots (sort keys, derived flags); not part of equality
    _memo: list | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        expected = ARITY.get(self.op, 0)
        if len(self.args) != expected:
            raise ValueError(f"{self.op} expects {expected} children, got {len(self.args)}")

    @property
    def memo(self) -> list:
        """Scratch slots for derived per-node values (sort keys, flags)."""
        slots = self._memo
        if slots is None:
            slots = [None] * 6
            object.__setattr__(self, "_memo", slots)
        return slots

    @property
    def is_leaf(self) -> bool:
        return not self.args

    @property
    def is_num(self) -> bool:
        return self.op == "num"

    @property
    def is_placeholder(self) -> bool:
        return self.op == "c"

    @property
    def is_var(self) -> bool:
        return self.op == "x"

    def walk(self) -> Iterator[Expr]:
        """Yield nodes in preorder."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.args))

    def replace_args(self, *args: Expr) -> Expr:
        return Expr(self.op, tuple(args), self.value)

    def __str__(self) -> str:
        return to_infix(self)

    # arithmetic sugar used to write benchmark expressions legibly
    def __add__(self, other):
        return Expr("add", (self, as_expr(other)))

    def __radd__(self, other):
        return Expr("add", (as_expr(other), self))

    def __sub__(self, other):
        return Expr("add", (self, -as_expr(other)))

    def __rsub__(self, other):
        return Expr("add", (as_expr(other), -self))

    def __mul__(self, other):
        return Expr("mul", (self, as_expr(other)))

    def __rmul__(self, other):
        return Expr("mul", (as_expr(other), self))

    def __truediv__(self, other):
        return Expr("div", (self, as_expr(other)))

    def __rtruediv__(self, other):
        return Expr("div", (as_expr(other), self))

    def __pow__(self, other):
        return Expr("pow", (self, as_expr(other)))

    def __neg__(self):
        if self.is_num:
            return num(-self.value)
        return Expr("mul", (num(-1), self))


def var(index: int = 1) -> Expr:
    return Expr("x", value=int(index))


def num(value: float) -> Expr:
    return Expr("num", value=float(value))


def placeholder(index: int = 0) -> Expr:
    return Expr("c", value=int(index))


def as_expr(obj) -> Expr:
    if isinstance(obj, Expr):
        return obj
    return num(obj)


def apply(op: str, *args) -> Expr:
    return Expr(op, tuple(as_expr(a) for a in args))


def _unary(op):
    def build(arg):
        return Expr(op, (as_expr(arg),))

    build.__name__ = op
    return build


sin, cos, tan = _unary("sin"), _unary("cos"), _unary("tan")
asin, acos, atan = _unary("asin"), _unary("acos"), _unary("atan")
sinh, cosh, tanh = _unary("sinh"), _unary("cosh"), _unary("tanh")
exp, log, sqrt, Abs = _unary("exp"), _unary("log"), _unary("sqrt"), _unary("abs")


def is_integer_value(value) -> bool:
    return value is not None and float(value).is_integer()


def is_int_exponent(node: Expr) -> bool:
    """True for a numeric integer leaf, the structural exponent of ``pow``."""
    return node.is_num and is_integer_value(node.value)


def op_count(tree: Expr) -> int:
    return sum(1 for node in tree.walk() if node.args)


def variables(tree: Expr) -> set[int]:
    return {node.value for node in tree.walk() if node.is_var}


def has_variable(tree: Expr) -> bool:
    memo = tree.memo
    if memo[3] is None:
        memo[3] = tree.op == "x" or any(has_variable(a) for a in tree.args)
    return memo[3]


def has_placeholder(tree: Expr) -> bool:
    memo = tree.memo
    if memo[4] is None:
        memo[4] = tree.op == "c" or any(has_placeholder(a) for a in tree.args)
    return memo[4]


def placeholder_count(tree: Expr) -> int:
    memo = tree.memo
    if memo[5] is None:
        memo[5] = (tree.op == "c") + sum(placeholder_count(a) for a in tree.args)
    return memo[5]


def rename_variable(tree: Expr, source: int, target: int) -> Expr:
    if tree.is_var:
        return var(target) if tree.value == source else tree
    if tree.is_leaf:
        return tree
    return tree.replace_args(*(rename_variable(a, source, target) for a in tree.args))


# ---------------------------------------------------------------------------
# prefix tokens


def _leaf_from_token(token: str) -> Expr | None:
    m = _VAR_RE.match(token)
    if m:
        return var(int(m.group(1)) if m.group(1) else 1)
    m = _CONST_RE.match(token)
    if m:
        return placeholder(int(m.group(1)) if m.group(1) else 0)
    if token == "E":
        return num(math.e)
    try:
        value = float(token)
    except ValueError:
        return None
    if not math.isfinite(value):
        return None
    return num(value)


def _format_number(value: float) -> str:
    if value == math.e:
        return "E"
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def tokenize(text: str | Sequence[str]) -> list[str]:
    if isinstance(text, str):
        return text.split()
    return [str(t) for t in text]


def parse_prefix(tokens: str | Sequence[str]) -> Expr:
    """Build a tree from a preorder token sequence.

    Raises :class:`MalformedSequence` (1-based position) when an operator is
    left without operands or when tokens trail a complete expression.
    """
    toks = tokenize(tokens)
    if not toks:
        raise MalformedSequence("empty token sequence", 0)
    needed = 1
    for i, tok in enumerate(toks, start=1):
        if needed == 0:
            raise MalformedSequence(f"trailing token {tok!r}", i)
        if tok in ARITY:
            needed += ARITY[tok] - 1
        elif _leaf_from_token(tok) is None:
            raise MalformedSequence(f"unknown token {tok!r}", i)
        else:
            needed -= 1
    if needed > 0:
        raise MalformedSequence(f"sequence ends with {needed} missing operand(s)", len(toks))

    pos = 0

    def build() -> Expr:
        nonlocal pos
        tok = toks[pos]
        pos += 1
        if tok in ARITY:
            return Expr(tok, tuple(build() for _ in range(ARITY[tok])))
        return _leaf_from_token(tok)

    return build()


def to_prefix(tree: Expr, indexed: bool = False) -> list[str]:
    """Serialize ``tree`` in preorder.

    The variable is written ``x`` when the tree only uses x1, and ``x1``,
    ``x2``... otherwise. Placeholders are written ``c`` unless ``indexed``.
    """
    multi = variables(tree) - {1}
    out = []
    for node in tree.walk():
        if node.args:
            out.append(node.op)
        elif node.is_var:
            out.append(f"x{node.value}" if multi else "x")
        elif node.is_placeholder:
            out.append(f"c{node.value}" if indexed and node.value else "c")
        else:
            out.append(_format_number(node.value))
    return out


def to_text(tree: Expr, indexed: bool = False) -> str:
    return " ".join(to_prefix(tree, indexed=indexed))


# ---------------------------------------------------------------------------
# evaluation


def _finite_or_nan(r):
    return np.where(np.isfinite(r), r, np.nan)


def _pow(a, b):
    b_arr = np.asarray(b, dtype=float)
    if b_arr.ndim == 0 and float(b_arr).is_integer():
        if b_arr < 0:
            a = np.where(a == 0, np.nan, a)
        return _finite_or_nan(np.power(a, b_arr))
    ok = (a > 0) | ((a == 0) & (b_arr > 0)) | ((a < 0) & (np.mod(b_arr, 1.0) == 0))
    return _finite_or_nan(np.where(ok, np.power(np.where(ok, a, 1.0), b_arr), np.nan))


_UNARY_FUNCS = {
    "abs": np.abs,
    "acos": lambda a: np.arccos(np.where(np.abs(a) <= 1, a, np.nan)),
    "asin": lambda a: np.arcsin(np.where(np.abs(a) <= 1, a, np.nan)),
    "atan": np.arctan,
    "cos": np.cos,
    "cosh": lambda a: _finite_or_nan(np.cosh(a)),
    "exp": lambda a: _finite_or_nan(np.exp(a)),
    "log": lambda a: np.log(np.where(a > 0, a, np.nan)),
    "sin": np.sin,
    "sinh": lambda a: _finite_or_nan(np.sinh(a)),
    "sqrt": lambda a: np.sqrt(np.where(a >= 0, a, np.nan)),
    "tan": np.tan,
    "tanh": np.tanh,
}

_BINARY_FUNCS = {
    "add": lambda a, b: a + b,
    "mul": lambda a, b: _finite_or_nan(a * b),
    "div": lambda a, b: _finite_or_nan(np.where(b != 0, a / np.where(b != 0, b, 1.0), np.nan)),
    "pow": _pow,
}


def _eval(node: Expr, env: Mapping[int, object], constants) -> object:
    op = node.op
    if op == "num":
        return node.value
    if op == "x":
        try:
            return env[node.value]
        except KeyError:
            raise UnboundVariable(node.value) from None
    if op == "c":
        if constants is None or not node.value or node.value > len(constants):
            raise ValueError(f"placeholder c{node.value} has no value; use set_constants first")
        return constants[node.value - 1]
    if len(node.args) == 1:
        return _UNARY_FUNCS[op](_eval(node.args[0], env, constants))
    return _BINARY_FUNCS[op](_eval(node.args[0], env, constants), _eval(node.args[1], env, constants))


def evaluate(tree: Expr, binding: Mapping[int, object] | float | np.ndarray, constants=None):
    """Evaluate ``tree`` on a variable binding.

    ``binding`` maps variable index to a scalar or array (a bare value binds
    x1). Domain violations and overflow give NaN rather than raising.
    ``constants`` optionally supplies values for indexed placeholders; entries
    may be arrays that broadcast against the variable arrays.
    """
    if not isinstance(binding, Mapping):
        binding = {1: binding}
    env = {k: np.asarray(v, dtype=float) for k, v in binding.items()}
    with np.errstate(all="ignore"):
        out = np.asarray(_eval(tree, env, constants), dtype=float)
    if out.ndim == 0:
        return float(out)
    return out


def finite_mask(values, bound: float = 1e12) -> np.ndarray:
    """Elementwise validity: finite and not larger than ``bound`` in magnitude."""
    values = np.asarray(values, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.isfinite(values) & (np.abs(values) <= bound)


# ---------------------------------------------------------------------------
# infix rendering

_PREC = {"add": 1, "mul": 2, "div": 2, "pow": 4}


def to_infix(tree: Expr) -> str:
    multi = variables(tree) - {1}

    def leaf(node: Expr) -> str:
        if node.is_var:
            return f"x{node.value}" if multi else "x"
        if node.is_placeholder:
            return f"c{node.value}" if node.value else "c"
        return _format_number(node.value)

    def render(node: Expr, parent_prec: int = 0) -> str:
        if node.is_leaf:
            s = leaf(node)
            return f"({s})" if s.startswith("-") and parent_prec > 1 else s
        if node.op in UNARY_OPS:
            return f"{node.op}({render(node.args[0])})"
        prec = _PREC[node.op]
        a, b = node.args
        if node.op == "add":
            s = f"{render(a, prec)} + {render(b, prec)}"
        elif node.op == "mul":
            s = f"{render(a, prec)}*{render(b, prec)}"
        elif node.op == "div":
            s = f"{render(a, prec)}/{render(b, prec + 1)}"
        else:
            s = f"{render(a, prec + 1)}**{render(b, prec + 1)}"
        return f"({s})" if prec < parent_prec or (node.op == "pow" and parent_prec == prec + 1) else s

    return render(tree)

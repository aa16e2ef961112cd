"""Constrained random expression generation and pretraining corpora.

Trees are grown in preorder. At each node the generator picks a unary
operator, a binary operator or a leaf with weights 2/1/1 among the kinds that
are still feasible (operator budget, unary budget, unary nesting, forbidden
parent/child pairs). ``pow2``..``pow5`` are unary generator operators stored as
``pow(u, k)`` nodes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MalformedSequence, RetryExhausted
from .expr import INTEGER_TOKENS, Expr, has_variable, is_int_exponent, num, parse_prefix, placeholder, to_text, var
from .rewrite import simplify
from .skeleton import canonical_key, normalize

GEN_UNARY = (
    "abs", "acos", "asin", "atan", "cos", "cosh", "exp", "log",
    "pow2", "pow3", "pow4", "pow5", "sin", "sinh", "sqrt", "tan", "tanh",
)
GEN_BINARY = ("add", "mul", "div")

_POWS = ("pow2", "pow3", "pow4", "pow5")
_GROWTH = ("exp", "sinh", "cosh", "tanh")
_TRIG = ("sin", "cos", "tan")
_ARC = ("asin", "acos", "atan")

# parent operator -> operators that may not appear below it
FORBIDDEN: dict[str, frozenset[str]] = {
    "abs": frozenset({"sqrt", "pow2", "pow4"}),
    "exp": frozenset(_GROWTH + ("tan", "log", "pow3", "pow4", "pow5")),
    "log": frozenset(_GROWTH + ("tan", "log", "pow3", "pow4", "pow5")),
    # tan is listed both with exp/log and with the trig functions
    "tan": frozenset(_GROWTH + ("tan", "log", "pow3", "pow4", "pow5") + _TRIG),
    **{op: frozenset(_GROWTH + ("tan", "log") + _POWS) for op in ("sinh", "cosh", "tanh")},
    **{op: frozenset(_POWS + _GROWTH) for op in _POWS},
    "sin": frozenset(_TRIG),
    "cos": frozenset(_TRIG),
    **{op: frozenset(_ARC) for op in _ARC},
}

ADDITIVE_EXEMPT = frozenset({"exp", "sinh", "cosh", "tanh"})


@dataclass
class GenConfig:
    max_operators: int = 7
    max_unary_nesting: int = 1
    max_unary_ops: int = 5
    node_weights: tuple[float, float, float] = (2.0, 1.0, 1.0)
    forbidden: dict = field(default_factory=lambda: dict(FORBIDDEN))
    unary_ops: tuple[str, ...] = GEN_UNARY
    binary_ops: tuple[str, ...] = GEN_BINARY
    additive_exempt: frozenset = ADDITIVE_EXEMPT
    retries: int = 100
    seed: int = 0

    def __post_init__(self):
        if min(self.node_weights) <= 0:
            raise ValueError("node weights must be positive")
        unknown = set(self.forbidden) - set(GEN_UNARY)
        if unknown:
            raise ValueError(f"forbidden map has non-operator keys: {sorted(unknown)}")

    def digest(self) -> str:
        data = dataclasses.asdict(self)
        data.pop("seed")
        data["forbidden"] = {k: sorted(v) for k, v in sorted(self.forbidden.items())}
        data["additive_exempt"] = sorted(self.additive_exempt)
        blob = json.dumps(data, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def node_name(node: Expr) -> str:
    """Generator-level operator name (``pow(u, 3)`` is ``pow3``)."""
    if node.op == "pow" and is_int_exponent(node.args[1]) and 2 <= node.args[1].value <= 5:
        return f"pow{int(node.args[1].value)}"
    return node.op


def _is_unary(node: Expr) -> bool:
    return len(node.args) == 1 or node_name(node) in _POWS


def _operands(node: Expr) -> tuple[Expr, ...]:
    return node.args[:1] if node_name(node) in _POWS else node.args


def _make_unary(op: str, child: Expr) -> Expr:
    if op in _POWS:
        return Expr("pow", (child, num(int(op[3]))))
    return Expr(op, (child,))


# ---------------------------------------------------------------------------
# validation


def violations(tree: Expr, config: GenConfig | None = None) -> list[str]:
    """Constraint violations of ``tree``: budgets, nesting and forbidden pairs."""
    config = config or GenConfig()
    found = []
    n_ops = 0
    n_unary = 0

    def visit(node: Expr, unary_ancestor: str | None, depth: int):
        nonlocal n_ops, n_unary
        if node.is_leaf:
            return
        n_ops += 1
        name = node_name(node)
        if _is_unary(node):
            n_unary += 1
            if depth > config.max_unary_nesting:
                found.append(f"unary nesting {depth} at {name}")
            if unary_ancestor is not None and name in config.forbidden.get(unary_ancestor, ()):
                found.append(f"forbidden {name} under {unary_ancestor}")
            for child in _operands(node):
                visit(child, name, depth + 1)
        else:
            if unary_ancestor is not None and name in config.forbidden.get(unary_ancestor, ()):
                found.append(f"forbidden {name} under {unary_ancestor}")
            for child in node.args:
                visit(child, unary_ancestor, depth)

    visit(tree, None, 0)
    if n_ops > config.max_operators:
        found.append(f"{n_ops} operators exceed budget {config.max_operators}")
    if n_unary > config.max_unary_ops:
        found.append(f"{n_unary} unary operators exceed budget {config.max_unary_ops}")
    return found


# ---------------------------------------------------------------------------
# tree growth


class _Budget:
    def __init__(self):
        self.ops = 0
        self.unary = 0


def _grow(rng, cfg: GenConfig, budget: _Budget, unary_ancestor, depth, leaf_token):
    """Grow one subtree. ``leaf_token`` is the leaf to use if a leaf is chosen."""
    forbidden = cfg.forbidden.get(unary_ancestor, frozenset())
    kinds, weights = [], []
    w_unary, w_binary, w_leaf = cfg.node_weights
    if budget.ops < cfg.max_operators:
        unary_ok = [op for op in cfg.unary_ops if op not in forbidden]
        if unary_ok and budget.unary < cfg.max_unary_ops and depth <= cfg.max_unary_nesting:
            kinds.append("unary")
            weights.append(w_unary)
        binary_ok = [op for op in cfg.binary_ops if op not in forbidden]
        if binary_ok:
            kinds.append("binary")
            weights.append(w_binary)
    if leaf_token is not None or not kinds:
        kinds.append("leaf")
        weights.append(w_leaf)
    p = np.asarray(weights) / np.sum(weights)
    kind = kinds[rng.choice(len(kinds), p=p)]

    if kind == "leaf":
        return var(1) if leaf_token in (None, "x") else num(1)
    budget.ops += 1
    if kind == "unary":
        budget.unary += 1
        op = unary_ok[rng.integers(len(unary_ok))]
        child = _grow(rng, cfg, budget, op, depth + 1, "x")
        return _make_unary(op, child)
    op = binary_ok[rng.integers(len(binary_ok))]
    left = _grow(rng, cfg, budget, unary_ancestor, depth, "x" if rng.random() < 0.5 else "1")
    if left.is_var:
        right_leaf = "1"
    elif left.is_num:
        right_leaf = "x"
    else:
        right_leaf = "x" if rng.random() < 0.5 else "1"
    right = _grow(rng, cfg, budget, unary_ancestor, depth, right_leaf)
    return Expr(op, (left, right))


def _raw_tree(rng, cfg: GenConfig) -> Expr:
    if cfg.max_operators == 0:
        return var(1)
    return _grow(rng, cfg, _Budget(), None, 0, None)


def generate_tree(config: GenConfig, rng: np.random.Generator) -> Expr:
    """Draw a simplified tree that respects every constraint of ``config``.

    Raises :class:`RetryExhausted` when ``config.retries`` consecutive draws
    are rejected (constant after simplification, or a constraint broken by
    simplification merging nodes).
    """
    for _ in range(config.retries):
        tree = simplify(_raw_tree(rng, config))
        if has_variable(tree) and not violations(tree, config):
            return tree
    raise RetryExhausted(f"no valid tree after {config.retries} attempts")


def insert_placeholders(tree: Expr, exempt=ADDITIVE_EXEMPT) -> Expr:
    """Wrap every non-numeric node ``u`` as ``c*u + c``.

    Arguments of operators in ``exempt`` only receive the multiplicative
    placeholder. Placeholders are left unindexed.
    """

    def wrap(node: Expr, additive: bool) -> Expr:
        if node.is_num:
            return node
        if node.is_leaf:
            inner = node
        elif node.op == "pow" and node.args[1].is_num:
            inner = node.replace_args(wrap(node.args[0], True), node.args[1])
        else:
            child_additive = node.op not in exempt
            inner = node.replace_args(*(wrap(a, child_additive) for a in node.args))
        out = Expr("mul", (placeholder(), inner))
        if additive:
            out = Expr("add", (out, placeholder()))
        return out

    return wrap(tree, True)


def in_vocabulary(tree: Expr) -> bool:
    """True when every numeric leaf is one of the integer tokens."""
    return all(
        not node.is_num or (is_int_exponent(node) and int(node.value) in INTEGER_TOKENS)
        for node in tree.walk()
    )


def random_skeleton(config: GenConfig, rng: np.random.Generator):
    """One pretraining skeleton: generate, insert placeholders, merge redundant ones."""
    for _ in range(config.retries):
        tree = generate_tree(config, rng)
        skel = normalize(insert_placeholders(tree, config.additive_exempt))
        if in_vocabulary(skel.tree) and has_variable(skel.tree):
            return skel
    raise RetryExhausted(f"no in-vocabulary skeleton after {config.retries} attempts")


# ---------------------------------------------------------------------------
# corpus


@dataclass
class Corpus:
    entries: list[str]
    seed: int
    config_hash: str

    @property
    def count(self) -> int:
        return len(self.entries)

    def header(self) -> str:
        return f"# uniskel-corpus seed={self.seed} config={self.config_hash} count={self.count}"

    def dumps(self) -> str:
        return "\n".join([self.header(), *self.entries]) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    def skeletons(self):
        from .skeleton import make_skeleton

        return [make_skeleton(parse_prefix(e)) for e in self.entries]


def entry_rng(seed: int, index: int, attempt: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, index, attempt])


def generate_corpus(size: int, config: GenConfig | None = None, seed: int | None = None) -> Corpus:
    """``size`` distinct skeletons (distinct under canonical comparison).

    Entry ``i`` is drawn from a stream seeded by ``(seed, i, attempt)``; a
    duplicate bumps ``attempt``. The result depends only on the seed and config.
    """
    if size < 1:
        raise ValueError("corpus size must be at least 1")
    config = config or GenConfig()
    seed = config.seed if seed is None else seed
    seen: set[str] = set()
    entries = []
    max_attempts = max(config.retries, 10) * 10
    for index in range(size):
        for attempt in range(max_attempts):
            skel = random_skeleton(config, entry_rng(seed, index, attempt))
            if skel.canonical not in seen:
                seen.add(skel.canonical)
                entries.append(to_text(skel.tree))
                break
        else:
            raise RetryExhausted(f"could not find a new skeleton for entry {index}")
    return Corpus(entries, seed, config.digest())


def load_corpus(path) -> Corpus:
    lines = Path(path).read_text().splitlines()
    seed, config_hash = 0, ""
    if lines and lines[0].startswith("#"):
        fields = dict(part.split("=", 1) for part in lines[0][1:].split() if "=" in part)
        seed = int(fields.get("seed", 0))
        config_hash = fields.get("config", "")
        lines = lines[1:]
    entries = [line.strip() for line in lines if line.strip()]
    for i, entry in enumerate(entries, start=1):
        try:
            parse_prefix(entry)
        except MalformedSequence as exc:
            raise MalformedSequence(f"corpus line {i}: {exc}", exc.position) from None
    return Corpus(entries, seed, config_hash)

"""Multi-Set Transformer: set-collection encoder and skeleton decoder (torch).

The encoder lifts every ``[x, y]`` row to ``d`` dimensions, runs a stack of
induced set attention blocks over each set, pools each set to one vector and
pools the set vectors into ``k_seed`` latent vectors ``Z``. The decoder is a
causal transformer over skeleton tokens that cross-attends to ``Z``.

All blocks are pre-norm. Padding rows and padding sets are masked out of
every attention, so ``Z`` is invariant to row order within a set and to the
order of the sets.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import load_arrays, save_arrays
from .errors import EmptySet, MalformedSequence, NonFiniteLoss, ShapeMismatch, VersionError
from .expr import INTEGER_TOKENS, OPERATORS, has_variable, parse_prefix, to_prefix
from .sets import SetCollection
from .skeleton import Skeleton, make_skeleton

PAD, SOS, EOS = "<pad>", "<sos>", "<eos>"
DEFAULT_VOCAB = (PAD, SOS, EOS, "c", "x", *OPERATORS, *(str(k) for k in INTEGER_TOKENS), "E")

CHECKPOINT_KIND = "mst"
CHECKPOINT_VERSION = 1
_NEG = -1e9


@dataclass
class MSTConfig:
    n_isab: int = 2
    n_decoder: int = 2
    d: int = 64
    heads: int = 4
    inducing: int = 16
    k_seed: int = 4
    ff_mult: int = 2
    max_len: int = 64
    vocab: tuple[str, ...] = DEFAULT_VOCAB
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    clip_norm: float = 1.0
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        self.vocab = tuple(self.vocab)
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.inducing < 1 or self.k_seed < 1:
            raise ValueError("inducing and k_seed must be at least 1")
        if self.vocab[:3] != (PAD, SOS, EOS):
            raise ValueError("vocab must start with the pad, start and end tokens")
        if len(set(self.vocab)) != len(self.vocab):
            raise ValueError("vocab has duplicate tokens")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def torch_dtype(self):
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["vocab"] = list(self.vocab)
        return data


# ---------------------------------------------------------------------------
# blocks


class MultiHeadAttention(nn.Module):
    def __init__(self, d: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)

    def forward(self, query, key, key_mask=None, causal: bool = False):
        """``key_mask`` is True on valid keys, shape ``(batch, n_keys)``."""
        b, nq, d = query.shape
        nk = key.shape[1]
        dh = d // self.heads
        q = self.q(query).view(b, nq, self.heads, dh).transpose(1, 2)
        k = self.k(key).view(b, nk, self.heads, dh).transpose(1, 2)
        v = self.v(key).view(b, nk, self.heads, dh).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], _NEG)
        if causal:
            future = torch.ones(nq, nk, dtype=torch.bool, device=query.device).triu(1)
            scores = scores.masked_fill(future, _NEG)
        out = torch.softmax(scores, dim=-1) @ v
        return self.o(out.transpose(1, 2).reshape(b, nq, d))


class FeedForward(nn.Module):
    def __init__(self, d: int, mult: int):
        super().__init__()
        self.norm = nn.LayerNorm(d)
        self.fc1 = nn.Linear(d, mult * d)
        self.fc2 = nn.Linear(mult * d, d)

    def forward(self, h):
        return h + self.fc2(F.gelu(self.fc1(self.norm(h))))


class MAB(nn.Module):
    """Pre-norm attention block: ``H = X + Att(X, Y)``, then a residual MLP."""

    def __init__(self, d: int, heads: int, ff_mult: int):
        super().__init__()
        self.norm_q = nn.LayerNorm(d)
        self.norm_k = nn.LayerNorm(d)
        self.att = MultiHeadAttention(d, heads)
        self.ff = FeedForward(d, ff_mult)

    def forward(self, x, y, y_mask=None):
        h = x + self.att(self.norm_q(x), self.norm_k(y), y_mask)
        return self.ff(h)


class ISAB(nn.Module):
    def __init__(self, d: int, heads: int, m: int, ff_mult: int):
        super().__init__()
        self.points = nn.Parameter(torch.randn(m, d) / math.sqrt(d))
        self.gather = MAB(d, heads, ff_mult)
        self.scatter = MAB(d, heads, ff_mult)

    def forward(self, x, mask):
        inducing = self.points.expand(x.shape[0], -1, -1)
        h = self.gather(inducing, x, mask)
        return self.scatter(x, h)


class PMA(nn.Module):
    def __init__(self, d: int, heads: int, k: int, ff_mult: int):
        super().__init__()
        self.seeds = nn.Parameter(torch.randn(k, d) / math.sqrt(d))
        self.mab = MAB(d, heads, ff_mult)

    def forward(self, x, mask):
        return self.mab(self.seeds.expand(x.shape[0], -1, -1), x, mask)


class DecoderBlock(nn.Module):
    def __init__(self, d: int, heads: int, ff_mult: int):
        super().__init__()
        self.norm_self = nn.LayerNorm(d)
        self.self_att = MultiHeadAttention(d, heads)
        self.norm_cross = nn.LayerNorm(d)
        self.cross_att = MultiHeadAttention(d, heads)
        self.ff = FeedForward(d, ff_mult)

    def forward(self, h, z):
        a = self.norm_self(h)
        h = h + self.self_att(a, a, causal=True)
        h = h + self.cross_att(self.norm_cross(h), z)
        return self.ff(h)


class MSTModel(nn.Module):
    def __init__(self, config: MSTConfig):
        super().__init__()
        c = config
        self.config = c
        self.lift = nn.Linear(2, c.d)
        self.isabs = nn.ModuleList([ISAB(c.d, c.heads, c.inducing, c.ff_mult) for _ in range(c.n_isab)])
        self.set_pool = PMA(c.d, c.heads, 1, c.ff_mult)
        self.collection_pool = PMA(c.d, c.heads, c.k_seed, c.ff_mult)
        self.z_norm = nn.LayerNorm(c.d)
        self.embed = nn.Embedding(len(c.vocab), c.d)
        self.positions = nn.Parameter(torch.randn(c.max_len + 2, c.d) * 0.02)
        self.blocks = nn.ModuleList([DecoderBlock(c.d, c.heads, c.ff_mult) for _ in range(c.n_decoder)])
        self.out_norm = nn.LayerNorm(c.d)
        self.out = nn.Linear(c.d, len(c.vocab))

    def encode_tensor(self, rows, row_mask, set_mask):
        """``rows`` (B, S, n, 2), ``row_mask`` (B, S, n), ``set_mask`` (B, S) -> Z (B, k, d)."""
        b, s, n, _ = rows.shape
        h = self.lift(rows.reshape(b * s, n, 2))
        mask = row_mask.reshape(b * s, n)
        for block in self.isabs:
            h = block(h, mask)
        pooled = self.set_pool(h, mask).reshape(b, s, -1)
        return self.z_norm(self.collection_pool(pooled, set_mask))

    def logits(self, z, tokens):
        """Next-token logits for every position of ``tokens`` (B, T)."""
        t = tokens.shape[1]
        h = self.embed(tokens) + self.positions[:t]
        for block in self.blocks:
            h = block(h, z)
        return self.out(self.out_norm(h))


def build_model(config: MSTConfig | None = None) -> MSTModel:
    config = config or MSTConfig()
    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        model = MSTModel(config)
    return model.to(config.torch_dtype)


# ---------------------------------------------------------------------------
# inputs and targets


@dataclass
class TrainBatch:
    rows: torch.Tensor
    row_mask: torch.Tensor
    set_mask: torch.Tensor
    tokens: torch.Tensor
    weights: torch.Tensor
    scales: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.rows.shape[0]


def scale_set(x, y) -> tuple[np.ndarray, tuple[float, float]]:
    """Divide each column by its largest magnitude; return rows and the scales."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sx = float(np.max(np.abs(x))) if x.size else 1.0
    sy = float(np.max(np.abs(y))) if y.size else 1.0
    sx = sx if sx > 0 and np.isfinite(sx) else 1.0
    sy = sy if sy > 0 and np.isfinite(sy) else 1.0
    return np.column_stack([x / sx, y / sy]), (sx, sy)


def collection_tensors(collections: Sequence[SetCollection], dtype=torch.float32):
    """Pad a list of collections to (B, S, n, 2) with row and set masks."""
    if not collections:
        raise EmptySet("no collections")
    n_sets = max(c.n_sets for c in collections)
    n_rows = 0
    for c in collections:
        if c.n_sets == 0:
            raise EmptySet("collection has no sets")
        for x, y in c:
            if len(x) == 0:
                raise EmptySet("collection contains an empty set")
            if len(x) != len(y):
                raise ShapeMismatch(f"set has {len(x)} inputs and {len(y)} responses")
            n_rows = max(n_rows, len(x))
    b = len(collections)
    rows = np.zeros((b, n_sets, n_rows, 2))
    row_mask = np.zeros((b, n_sets, n_rows), dtype=bool)
    set_mask = np.zeros((b, n_sets), dtype=bool)
    scales = []
    for i, c in enumerate(collections):
        per = []
        for j, (x, y) in enumerate(c):
            scaled, sc = scale_set(x, y)
            rows[i, j, : len(x)] = scaled
            row_mask[i, j, : len(x)] = True
            set_mask[i, j] = True
            per.append(sc)
        scales.append(per)
    # fully padded sets still need one valid key for the row-level attention
    row_mask[~set_mask, 0] = True
    return torch.as_tensor(rows, dtype=dtype), torch.as_tensor(row_mask), torch.as_tensor(set_mask), scales


def skeleton_tokens(skeleton) -> list[str]:
    tree = skeleton.tree if isinstance(skeleton, Skeleton) else skeleton
    return to_prefix(tree, indexed=False)


def encode_tokens(tokens: Sequence[str], vocab: Sequence[str]) -> list[int]:
    index = {t: i for i, t in enumerate(vocab)}
    missing = [t for t in tokens if t not in index]
    if missing:
        raise MalformedSequence(f"tokens outside the vocabulary: {missing}", tokens.index(missing[0]) + 1)
    return [index[SOS], *(index[t] for t in tokens), index[EOS]]


def make_batch(collections: Sequence[SetCollection], config: MSTConfig, targets=None) -> TrainBatch:
    """Batch with teacher-forcing targets from ``targets`` or each collection's target."""
    rows, row_mask, set_mask, scales = collection_tensors(collections, config.torch_dtype)
    targets = targets if targets is not None else [c.target for c in collections]
    seqs = [encode_tokens(skeleton_tokens(t), config.vocab) for t in targets]
    longest = max(len(s) for s in seqs)
    if longest - 1 > config.max_len + 1:
        raise ShapeMismatch(f"target of {longest - 2} tokens exceeds max_len={config.max_len}")
    tokens = torch.zeros((len(seqs), longest), dtype=torch.long)
    for i, s in enumerate(seqs):
        tokens[i, : len(s)] = torch.tensor(s)
    weights = (tokens[:, 1:] != 0).to(config.torch_dtype)
    return TrainBatch(rows, row_mask, set_mask, tokens, weights, scales)


# ---------------------------------------------------------------------------
# inference


def encode(model: MSTModel, collection: SetCollection) -> torch.Tensor:
    """Latent ``Z`` of one collection, shape (k_seed, d)."""
    rows, row_mask, set_mask, _ = collection_tensors([collection], model.config.torch_dtype)
    with torch.no_grad():
        return model.encode_tensor(rows, row_mask, set_mask)[0]


def decode_step(model: MSTModel, z: torch.Tensor, prefix: Sequence[int]) -> np.ndarray:
    """Distribution of the token following ``prefix`` (which starts with the start token)."""
    sos = model.config.vocab.index(SOS)
    if not prefix or prefix[0] != sos:
        raise ValueError("prefix must begin with the start token")
    tokens = torch.tensor([list(prefix)], dtype=torch.long)
    with torch.no_grad():
        logits = model.logits(z[None], tokens)[0, -1]
        return torch.softmax(logits.double(), dim=-1).numpy()


@dataclass
class DecodeInvalid:
    """Decoder output that is not a usable skeleton."""

    tokens: list[str]
    truncated: bool
    reason: str

    def __str__(self) -> str:
        return f"invalid decode ({self.reason}): {' '.join(self.tokens)}"


def greedy_decode(model: MSTModel, z: torch.Tensor, max_len: int | None = None):
    """Pick the most probable token until the end token; return a Skeleton or DecodeInvalid."""
    vocab = model.config.vocab
    max_len = max_len or model.config.max_len
    sos, eos = vocab.index(SOS), vocab.index(EOS)
    ids = [sos]
    truncated = True
    with torch.no_grad():
        for _ in range(max_len + 1):
            logits = model.logits(z[None], torch.tensor([ids], dtype=torch.long))[0, -1]
            nxt = int(torch.argmax(logits))
            if nxt == eos:
                truncated = False
                break
            ids.append(nxt)
            if len(ids) > max_len:
                break
    tokens = [vocab[i] for i in ids[1:]]
    if truncated:
        return DecodeInvalid(tokens, True, f"no end token within {max_len} tokens")
    if any(t in (PAD, SOS) for t in tokens):
        return DecodeInvalid(tokens, False, "special token inside the expression")
    try:
        tree = parse_prefix(tokens)
    except MalformedSequence as exc:
        return DecodeInvalid(tokens, False, str(exc))
    if not has_variable(tree):
        return DecodeInvalid(tokens, False, "expression has no variable")
    return make_skeleton(tree)


def predict_skeleton(model: MSTModel, collection: SetCollection):
    return greedy_decode(model, encode(model, collection))


# ---------------------------------------------------------------------------
# training


def batch_loss(model: MSTModel, batch: TrainBatch) -> torch.Tensor:
    """Masked cross-entropy summed over positions, averaged over the batch."""
    z = model.encode_tensor(batch.rows, batch.row_mask, batch.set_mask)
    logits = model.logits(z, batch.tokens[:, :-1])
    logp = torch.log_softmax(logits, dim=-1)
    picked = logp.gather(-1, batch.tokens[:, 1:, None])[..., 0]
    return -(batch.weights * picked).sum() / batch.size


class Trainer:
    def __init__(self, model: MSTModel):
        self.model = model
        cfg = model.config
        if cfg.optimizer == "adam":
            self.optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
        else:
            self.optimizer = torch.optim.SGD(model.parameters(), lr=cfg.learning_rate)
        self.steps = 0

    def step(self, batch: TrainBatch) -> float:
        """One update; returns the loss before the update."""
        self.model.train()
        self.optimizer.zero_grad()
        loss = batch_loss(self.model, batch)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise NonFiniteLoss(f"loss is {value} at step {self.steps}")
        loss.backward()
        if self.model.config.clip_norm:
            nn.utils.clip_grad_norm_(self.model.parameters(), self.model.config.clip_norm)
        self.optimizer.step()
        self.steps += 1
        return value


def train_mst(model: MSTModel, collections: Sequence[SetCollection], steps: int, batch_size: int = 16, seed: int = 0, log=None) -> list[float]:
    """Run ``steps`` updates on shuffled mini-batches of ``collections``."""
    rng = np.random.default_rng(seed)
    trainer = Trainer(model)
    losses = []
    order = np.array([], dtype=int)
    for step in range(steps):
        if len(order) < batch_size:
            order = np.concatenate([order, rng.permutation(len(collections))])
        idx, order = order[:batch_size], order[batch_size:]
        batch = make_batch([collections[i] for i in idx], model.config)
        losses.append(trainer.step(batch))
        if log is not None and (step + 1) % 50 == 0:
            log(f"step {step + 1}: loss {np.mean(losses[-50:]):.4f}")
    return losses


def grad_check_mst(model: MSTModel, batch: TrainBatch, h: float = 1e-4) -> float:
    """Largest relative gap between autograd and central differences, over all parameters.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-6)``.
    """
    model.zero_grad()
    batch_loss(model, batch).backward()
    worst = 0.0
    with torch.no_grad():
        for p in model.parameters():
            analytic = p.grad.detach().clone().reshape(-1)
            flat = p.data.view(-1)
            for i in range(flat.numel()):
                old = float(flat[i])
                flat[i] = old + h
                up = float(batch_loss(model, batch))
                flat[i] = old - h
                down = float(batch_loss(model, batch))
                flat[i] = old
                numeric = (up - down) / (2 * h)
                a = float(analytic[i])
                worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-6))
    return worst


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model: MSTModel, path) -> None:
    arrays = {name: t.detach().cpu().numpy() for name, t in model.state_dict().items()}
    meta = {"version": CHECKPOINT_VERSION, "config": model.config.to_dict()}
    save_arrays(path, CHECKPOINT_KIND, meta, arrays)


def load_model(path) -> MSTModel:
    meta, arrays = load_arrays(path, CHECKPOINT_KIND)
    if meta.get("version") != CHECKPOINT_VERSION:
        raise VersionError(f"mst checkpoint version {meta.get('version')}, expected {CHECKPOINT_VERSION}")
    model = build_model(MSTConfig(**meta["config"]))
    state = {name: torch.from_numpy(arr) for name, arr in arrays.items()}
    model.load_state_dict(state)
    model.eval()
    return model

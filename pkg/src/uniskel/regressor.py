"""Feed-forward ReLU regressor with hand-written backpropagation (numpy).

Inputs and targets are z-scored with statistics stored in the model, so
``predict`` is self-contained. Training is mini-batch momentum SGD on the mean
squared error in normalized units, with early stopping on a held-out split.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_arrays, save_arrays
from .errors import NonFiniteData, ShapeMismatch

CHECKPOINT_KIND = "mlp"
CHECKPOINT_VERSION = 1


@dataclass
class MLPConfig:
    hidden: tuple[int, ...] = (64, 64, 64)
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 300
    batch_size: int = 64
    train_fraction: float = 0.9
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")


@dataclass
class MLPModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "MLPModel":
        return MLPModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.x_mean.copy(),
            self.x_std.copy(),
            self.y_mean,
            self.y_std,
        )


@dataclass
class TrainingReport:
    train_mse: float
    val_mse: float
    val_r2: float
    epochs_run: int
    best_epoch: int
    history: list[tuple[float, float]] = field(default_factory=list)


def init_model(n_inputs: int, hidden, rng: np.random.Generator) -> MLPModel:
    """He-initialized weights, zero biases, identity normalization."""
    sizes = [n_inputs, *hidden, 1]
    weights = [rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return MLPModel(weights, biases, np.zeros(n_inputs), np.ones(n_inputs))


def _forward(model: MLPModel, xn: np.ndarray):
    acts = [xn]
    h = xn
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def loss_and_grads(model: MLPModel, xn: np.ndarray, yn: np.ndarray):
    """MSE in normalized units and its gradients w.r.t. (weights, biases)."""
    acts = _forward(model, xn)
    pred = acts[-1][:, 0]
    resid = pred - yn
    loss = float(np.mean(resid**2))
    delta = (2.0 / len(yn)) * resid[:, None]
    gw, gb = [], []
    for i in range(len(model.weights) - 1, -1, -1):
        gw.append(acts[i].T @ delta)
        gb.append(delta.sum(axis=0))
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    return loss, gw[::-1], gb[::-1]


def _normalize_x(model: MLPModel, X: np.ndarray) -> np.ndarray:
    return (X - model.x_mean) / model.x_std


def _check_data(X, y=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if not np.isfinite(X).all():
        raise NonFiniteData("inputs contain non-finite values")
    if y is None:
        return X
    y = np.asarray(y, dtype=float).ravel()
    if len(y) != len(X):
        raise ShapeMismatch(f"{len(X)} input rows but {len(y)} targets")
    if not np.isfinite(y).all():
        raise NonFiniteData("targets contain non-finite values")
    return X, y


def _std(a: np.ndarray) -> np.ndarray:
    s = np.std(a, axis=0)
    return np.where(s > 0, s, 1.0)


def r2_score(y, pred) -> float:
    y = np.asarray(y, dtype=float)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - np.asarray(pred)) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)


def train_mlp(X, y, config: MLPConfig | None = None) -> tuple[MLPModel, TrainingReport]:
    config = config or MLPConfig()
    X, y = _check_data(X, y)
    if len(X) < 10:
        raise ValueError("need at least 10 samples")
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(X))
    n_train = int(round(config.train_fraction * len(X)))
    n_train = min(max(n_train, 1), len(X) - 1)
    tr, va = order[:n_train], order[n_train:]

    model = init_model(X.shape[1], config.hidden, rng)
    model.x_mean = X[tr].mean(axis=0)
    model.x_std = _std(X[tr])
    model.y_mean = float(y[tr].mean())
    model.y_std = float(_std(y[tr]))
    xn = _normalize_x(model, X)
    yn = (y - model.y_mean) / model.y_std

    velocity = [np.zeros_like(p) for p in model.parameters()]
    best = model.copy()
    best_val, best_epoch, stale = np.inf, 0, 0
    history = []
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        perm = tr[rng.permutation(len(tr))]
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start: start + config.batch_size]
            _, gw, gb = loss_and_grads(model, xn[idx], yn[idx])
            grads = [g for pair in zip(gw, gb) for g in pair]
            for p, v, g in zip(model.parameters(), velocity, grads):
                v *= config.momentum
                v -= config.learning_rate * g
                p += v
        train_loss, _, _ = loss_and_grads(model, xn[tr], yn[tr])
        val_loss, _, _ = loss_and_grads(model, xn[va], yn[va])
        if not np.isfinite(train_loss):
            raise NonFiniteData(f"training diverged at epoch {epoch}")
        history.append((train_loss, val_loss))
        if val_loss < best_val:
            best_val, best_epoch, stale = val_loss, epoch, 0
            best = model.copy()
        else:
            stale += 1
            if stale >= config.patience:
                break

    pred_tr = predict(best, X[tr])
    pred_va = predict(best, X[va])
    report = TrainingReport(
        train_mse=float(np.mean((pred_tr - y[tr]) ** 2)),
        val_mse=float(np.mean((pred_va - y[va]) ** 2)),
        val_r2=r2_score(y[va], pred_va),
        epochs_run=epoch,
        best_epoch=best_epoch,
        history=history,
    )
    return best, report


def predict(model: MLPModel, X) -> np.ndarray:
    X = _check_data(X)
    if X.shape[1] != model.n_inputs:
        raise ShapeMismatch(f"model expects {model.n_inputs} inputs, got {X.shape[1]}")
    out = _forward(model, _normalize_x(model, X))[-1][:, 0]
    return out * model.y_std + model.y_mean


def grad_check_mlp(model: MLPModel, X, y, h: float = 1e-5) -> float:
    """Largest relative gap between backprop and central differences.

    Works on the normalized problem the optimizer sees. Relative error is
    ``|a - n| / max(|a|, |n|, 1e-7)``.
    """
    X, y = _check_data(X, y)
    xn = _normalize_x(model, X)
    yn = (y - model.y_mean) / model.y_std
    _, gw, gb = loss_and_grads(model, xn, yn)
    analytic = [g for pair in zip(gw, gb) for g in pair]
    worst = 0.0
    for p, g in zip(model.parameters(), analytic):
        flat = p.reshape(-1)
        g_flat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up, _, _ = loss_and_grads(model, xn, yn)
            flat[i] = old - h
            down, _, _ = loss_and_grads(model, xn, yn)
            flat[i] = old
            numeric = (up - down) / (2 * h)
            err = abs(g_flat[i] - numeric) / max(abs(g_flat[i]), abs(numeric), 1e-7)
            worst = max(worst, err)
    return worst


def save_mlp(model: MLPModel, path) -> None:
    arrays = {"x_mean": model.x_mean, "x_std": model.x_std}
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    meta = {"version": CHECKPOINT_VERSION, "layers": len(model.weights), "y_mean": model.y_mean, "y_std": model.y_std}
    save_arrays(path, CHECKPOINT_KIND, meta, arrays)


def load_mlp(path) -> MLPModel:
    from .errors import VersionError

    meta, arrays = load_arrays(path, CHECKPOINT_KIND)
    if meta.get("version") != CHECKPOINT_VERSION:
        raise VersionError(f"mlp checkpoint version {meta.get('version')}, expected {CHECKPOINT_VERSION}")
    n = meta["layers"]
    return MLPModel(
        [arrays[f"w{i}"] for i in range(n)],
        [arrays[f"b{i}"] for i in range(n)],
        arrays["x_mean"],
        arrays["x_std"],
        float(meta["y_mean"]),
        float(meta["y_std"]),
    )

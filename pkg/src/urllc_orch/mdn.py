"""Mixture density network in plain numpy.

A ReLU MLP maps the flattened per-service features to ``3*K`` outputs per
service laid out as ``[logits_1..K, means_1..K, log_stds_1..K]``. Mixture
weights come from a softmax over the logits, stds from ``exp`` clipped to
``[sigma_min, sigma_max]``.

Training minimizes the mixture negative log-likelihood of the realized
extra-RB counts with Adam. Labels are integers, so by default each label is
jittered uniformly within its unit region (dequantization); this makes the
continuous likelihood a bound on the likelihood of the discretized regions
and stops components collapsing onto single integers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import DivergedLoss, EmptyDataset, ShapeMismatch
from .rb_estimator import GmmParams

FORMAT_HEADER = "# urllc-orch mdn v1"
HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
DEFAULT_HIDDEN = (256, 256, 64)


@dataclass
class MdnModel:
    n_services: int
    k: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    x_mean: np.ndarray
    x_std: np.ndarray
    sigma_min: float = 1e-3
    sigma_max: float = 100.0

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    def copy(self) -> "MdnModel":
        return replace(
            self,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            x_mean=self.x_mean.copy(),
            x_std=self.x_std.copy(),
        )


def init_model(
    n_inputs: int,
    n_services: int,
    k: int = 3,
    hidden=DEFAULT_HIDDEN,
    seed: int = 0,
    sigma_max: float = 100.0,
    sigma_min: float = 1e-3,
) -> MdnModel:
    """He-normal kernels, zero biases, identity input normalizer."""
    rng = np.random.default_rng(seed)
    widths = [n_inputs, *hidden, 3 * k * n_services]
    weights = [rng.normal(0.0, math.sqrt(2.0 / a), size=(a, b)) for a, b in zip(widths[:-1], widths[1:])]
    biases = [np.zeros(b) for b in widths[1:]]
    return MdnModel(n_services, k, weights, biases, np.zeros(n_inputs), np.ones(n_inputs), sigma_min, sigma_max)


def _forward(model: MdnModel, x: np.ndarray):
    h = (x - model.x_mean) / model.x_std
    acts = [h]
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def _heads(model: MdnModel, out: np.ndarray):
    """Split raw outputs (N, 3KM) into (log_w, mu, log_sigma, clipped_mask), each (N, M, K)."""
    k = model.k
    z = out.reshape(out.shape[0], model.n_services, 3 * k)
    logits, mu, s = z[..., :k], z[..., k:2 * k], z[..., 2 * k:]
    log_w = logits - logsumexp(logits, axis=-1, keepdims=True)
    lo, hi = math.log(model.sigma_min), math.log(model.sigma_max)
    clipped = (s < lo) | (s > hi)
    return log_w, mu, np.clip(s, lo, hi), clipped


def predict(model: MdnModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch forward pass: (weights, means, stds), each shaped (N, M, K)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.n_inputs:
        raise ShapeMismatch(f"expected {model.n_inputs} features, got {x.shape[1]}")
    log_w, mu, log_s, _ = _heads(model, _forward(model, x)[-1])
    return np.exp(log_w), mu, np.exp(log_s)


def mdn_forward(model: MdnModel, features) -> list[GmmParams]:
    """Per-service mixture parameters for one feature vector."""
    features = np.asarray(features, dtype=float)
    if features.ndim != 1:
        raise ShapeMismatch("mdn_forward takes a single flat feature vector")
    w, mu, sd = predict(model, features[None, :])
    out = []
    for m in range(model.n_services):
        wm = w[0, m] / w[0, m].sum()
        out.append(GmmParams(wm, mu[0, m], sd[0, m]))
    return out


def nll_and_grads(model: MdnModel, x: np.ndarray, y: np.ndarray, l2: float = 0.0):
    """Mean mixture NLL over the non-NaN labels, plus L2 on kernels, and its gradients.

    ``y`` is (N, M); NaN marks TTIs outside a service's conditioning set.
    Returns (loss, grad_weights, grad_biases).
    """
    acts = _forward(model, x)
    log_w, mu, log_s, clipped = _heads(model, acts[-1])
    valid = ~np.isnan(y)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EmptyDataset("no labelled entries")
    yy = np.where(valid, y, 0.0)[..., None]
    sigma = np.exp(log_s)
    zsc = (yy - mu) / sigma
    log_comp = log_w - log_s - HALF_LOG_2PI - 0.5 * zsc**2
    log_p = logsumexp(log_comp, axis=-1)
    loss = -float(np.sum(np.where(valid, log_p, 0.0))) / n_valid
    loss += 0.5 * l2 * sum(float(np.sum(w * w)) for w in model.weights)

    gamma = np.exp(log_comp - log_p[..., None])
    scale = (valid / n_valid)[..., None]
    g_logits = (np.exp(log_w) - gamma) * scale
    g_mu = -gamma * zsc / sigma * scale
    g_s = np.where(clipped, 0.0, gamma * (1.0 - zsc**2) * scale)
    g_out = np.concatenate([g_logits, g_mu, g_s], axis=-1).reshape(x.shape[0], -1)

    gw, gb = [None] * len(model.weights), [None] * len(model.weights)
    delta = g_out
    for i in range(len(model.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta + l2 * model.weights[i]
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    return loss, gw, gb


def nll(model: MdnModel, x, y, l2: float = 0.0) -> float:
    return nll_and_grads(model, np.asarray(x, float), np.asarray(y, float), l2)[0]


@dataclass
class MdnHyperparams:
    k: int = 3
    epochs: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    l2: float = 1e-5
    val_fraction: float = 0.3
    hidden: tuple[int, ...] = field(default=DEFAULT_HIDDEN)
    dequantize: bool = True
    sigma_max: float = 100.0


@dataclass
class TrainReport:
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int


def _dequantize(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return y + rng.uniform(-0.5, 0.5, size=y.shape)


def mdn_train(x, y, hp: MdnHyperparams | None = None, return_report: bool = False):
    """Fit an MDN to (features, extra-RB labels) with Adam.

    Rows are shuffled with ``hp.seed`` and split train/validation by
    ``hp.val_fraction``; the parameters with the best validation loss seen
    after any epoch are returned (the initial model when ``epochs == 0``).
    """
    hp = hp or MdnHyperparams()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyDataset("dataset is empty")
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != x.shape[0]:
        raise ShapeMismatch("features and labels have different row counts")
    n_services = y.shape[1]
    rng = np.random.default_rng(hp.seed)
    order = rng.permutation(x.shape[0])
    n_val = int(round(hp.val_fraction * x.shape[0])) if x.shape[0] > 1 else 0
    val_idx, tr_idx = order[:n_val], order[n_val:]
    if tr_idx.size == 0:
        raise EmptyDataset("no training rows after the validation split")

    model = init_model(x.shape[1], n_services, hp.k, hp.hidden, seed=hp.seed, sigma_max=hp.sigma_max)
    model.x_mean = x[tr_idx].mean(axis=0)
    std = x[tr_idx].std(axis=0)
    model.x_std = np.where(std > 0, std, 1.0)

    def jitter(labels):
        return _dequantize(labels, rng) if hp.dequantize else labels

    x_val, y_val = (x[val_idx], jitter(y[val_idx])) if n_val else (x[tr_idx], y[tr_idx])
    best, best_loss, best_epoch = model.copy(), math.inf, 0
    params = model.weights + model.biases
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    tr_hist, val_hist = [], []
    for epoch in range(1, hp.epochs + 1):
        perm = rng.permutation(tr_idx)
        y_ep = jitter(y)
        losses = []
        for start in range(0, perm.size, hp.batch_size):
            b = perm[start:start + hp.batch_size]
            if np.all(np.isnan(y_ep[b])):
                continue
            loss, gw, gb = nll_and_grads(model, x[b], y_ep[b], hp.l2)
            if not math.isfinite(loss):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}")
            losses.append(loss)
            step += 1
            for p, g, a, v in zip(params, gw + gb, m1, m2):
                a *= b1
                a += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                p -= hp.lr * (a / (1 - b1**step)) / (np.sqrt(v / (1 - b2**step)) + eps)
        val = nll(model, x_val, y_val)
        if not math.isfinite(val):
            raise DivergedLoss(f"non-finite validation loss at epoch {epoch}")
        tr_hist.append(float(np.mean(losses)) if losses else math.nan)
        val_hist.append(val)
        if val < best_loss:
            best, best_loss, best_epoch = model.copy(), val, epoch
    if return_report:
        return best, TrainReport(tr_hist, val_hist, best_epoch)
    return best


def save_model(model: MdnModel, path: str | Path) -> None:
    def row(a):
        return " ".join(repr(float(v)) for v in np.ravel(a))

    lines = [
        FORMAT_HEADER,
        f"services {model.n_services}",
        f"components {model.k}",
        f"sigma_bounds {model.sigma_min!r} {model.sigma_max!r}",
        "widths " + " ".join(str(w) for w in model.widths),
        "x_mean " + row(model.x_mean),
        "x_std " + row(model.x_std),
    ]
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        lines.append(f"kernel {i} {w.shape[0]} {w.shape[1]}")
        lines.extend(row(r) for r in w)
        lines.append(f"bias {i} {b.shape[0]}")
        lines.append(row(b))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path: str | Path) -> MdnModel:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != FORMAT_HEADER:
        raise ValueError(f"{path}: not an MDN model file (missing '{FORMAT_HEADER}')")
    it = iter(lines[1:])

    def field_(name):
        parts = next(it).split()
        if parts[0] != name:
            raise ValueError(f"{path}: expected '{name}', got '{parts[0]}'")
        return parts[1:]

    n_services = int(field_("services")[0])
    k = int(field_("components")[0])
    smin, smax = (float(v) for v in field_("sigma_bounds"))
    widths = [int(v) for v in field_("widths")]
    x_mean = np.array(field_("x_mean"), dtype=float)
    x_std = np.array(field_("x_std"), dtype=float)
    weights, biases = [], []
    for i in range(len(widths) - 1):
        _, a, b = field_("kernel")
        weights.append(np.array([next(it).split() for _ in range(int(a))], dtype=float).reshape(int(a), int(b)))
        field_("bias")
        biases.append(np.array(next(it).split(), dtype=float))
    return MdnModel(n_services, k, weights, biases, x_mean, x_std, smin, smax)

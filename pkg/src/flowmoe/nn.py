"""Minimal dense neural-network engine used by the experts and the gate.

Models are plain multilayer perceptrons: rectifier hidden layers and a
two-way softmax head, trained with cross-entropy in float64.  The module
also owns the binary model format:

    magic "FMOE" | format version (u32 LE) | layer count n (u32 LE)
    | n layer widths (u32 LE) | per weight layer: W row-major float64 LE,
      then its bias vector float64 LE

Weight matrices are stored as (fan_out, fan_in); the forward pass is
``x @ W.T + b``.  All models use the rectifier, so the activation is not
part of the format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, TrainingError

MAGIC = b"FMOE"
FORMAT_VERSION = 1

# probabilities are clamped away from 0/1 before taking logs
CE_EPS = 1e-12


@dataclass
class MlpModel:
    """Fully-connected network: widths, weights, biases."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def copy(self) -> "MlpModel":
        return MlpModel(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )


@dataclass
class TrainConfig:
    """Optimization settings shared by every training loop."""

    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 8192
    full_batch_limit: int = 50_000
    seed: int = 0
    optimizer: str = "adam"


def mlp_init(layer_dims: list[int], seed: int, activation: str = "relu") -> MlpModel:
    """Create a model with scaled-uniform weights and zero biases.

    Each weight matrix is drawn from U(-a, a) with a = sqrt(6 / (fan_in +
    fan_out)), keyed by ``seed``, so the same seed always yields the same
    parameters.
    """
    if len(layer_dims) < 2:
        raise ValueError("need at least an input and an output width")
    if any(d <= 0 for d in layer_dims):
        raise ValueError("layer widths must be positive")
    if activation != "relu":
        raise ValueError(f"unsupported activation: {activation!r}")
    rng = np.random.Generator(np.random.PCG64(seed))
    weights = []
    biases = []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(list(layer_dims), weights, biases, activation)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted by the row max for stability."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward_cache(model: MlpModel, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Run the network and keep every post-activation for backprop.

    Returns (activations, probabilities); activations[0] is the input and
    activations[k] the output of hidden layer k.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise ValueError(
            f"input shape {x.shape} does not match model input width {model.layer_dims[0]}"
        )
    acts = [x]
    h = x
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        if k < last:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            probs = softmax(z)
    return acts, probs


def mlp_forward(model: MlpModel, x: np.ndarray, batch_size: int = 0) -> np.ndarray:
    """Class probabilities for each row of x.

    With ``batch_size`` > 0 the rows are processed in chunks; each row's
    result does not depend on the chunking.
    """
    x = np.asarray(x, dtype=np.float64)
    if batch_size and x.shape[0] > batch_size:
        parts = [
            forward_cache(model, x[i : i + batch_size])[1]
            for i in range(0, x.shape[0], batch_size)
        ]
        return np.concatenate(parts, axis=0)
    return forward_cache(model, x)[1]


def penultimate(model: MlpModel, x: np.ndarray, batch_size: int = 0) -> np.ndarray:
    """Last hidden-layer activations (the latent vector ahead of the head)."""
    x = np.asarray(x, dtype=np.float64)
    if batch_size and x.shape[0] > batch_size:
        parts = [
            forward_cache(model, x[i : i + batch_size])[0][-1]
            for i in range(0, x.shape[0], batch_size)
        ]
        return np.concatenate(parts, axis=0)
    return forward_cache(model, x)[0][-1]


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-row cross-entropy, with probabilities clamped to [1e-12, 1 - 1e-12]."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    p = probs[np.arange(len(labels)), labels]
    p = np.clip(p, CE_EPS, 1.0 - CE_EPS)
    return -np.log(p)


def mean_cross_entropy(probs: np.ndarray, labels: np.ndarray, sample_weights=None) -> float:
    losses = cross_entropy(probs, labels)
    if sample_weights is None:
        return float(losses.mean())
    sample_weights = np.asarray(sample_weights, dtype=np.float64)
    return float((losses * sample_weights).sum() / sample_weights.sum())


def ce_dlogits(probs: np.ndarray, labels: np.ndarray, sample_weights=None) -> np.ndarray:
    """Gradient of mean cross-entropy w.r.t. the softmax input logits."""
    n, k = probs.shape
    onehot = np.zeros((n, k))
    onehot[np.arange(n), np.asarray(labels, dtype=np.int64)] = 1.0
    if sample_weights is None:
        return (probs - onehot) / n
    sample_weights = np.asarray(sample_weights, dtype=np.float64)
    return (probs - onehot) * (sample_weights / sample_weights.sum())[:, None]


def backward_cache(
    model: MlpModel,
    acts: list[np.ndarray],
    dlogits: np.ndarray,
    need_input_grad: bool = False,
):
    """Backpropagate a logit gradient through cached activations.

    Returns (grads, input_grad); grads is a list of (dW, db) matching
    model.weights, input_grad is None unless requested.
    """
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(model.weights)
    delta = dlogits
    for k in range(len(model.weights) - 1, -1, -1):
        grads[k] = (delta.T @ acts[k], delta.sum(axis=0))
        if k > 0:
            delta = (delta @ model.weights[k]) * (acts[k] > 0.0)
        elif need_input_grad:
            delta = delta @ model.weights[k]
    return grads, (delta if need_input_grad else None)


def mlp_backward(model: MlpModel, x: np.ndarray, labels: np.ndarray, sample_weights=None):
    """Mean cross-entropy gradients for a batch; returns (grads, loss)."""
    acts, probs = forward_cache(model, x)
    dlogits = ce_dlogits(probs, labels, sample_weights)
    grads, _ = backward_cache(model, acts, dlogits)
    return grads, mean_cross_entropy(probs, labels, sample_weights)


def _check_finite(arrays, what: str) -> None:
    for a in arrays:
        if not np.isfinite(a).all():
            raise TrainingError(f"non-finite {what} encountered")


def sgd_step(model: MlpModel, grads, learning_rate: float) -> None:
    """Plain gradient descent update, in place."""
    _check_finite((g for gw, gb in grads for g in (gw, gb)), "gradient")
    for (w, b), (gw, gb) in zip(zip(model.weights, model.biases), grads):
        w -= learning_rate * gw
        b -= learning_rate * gb


@dataclass
class AdamState:
    """First/second moment accumulators for adaptive-moment updates."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(model: MlpModel, grads, state: AdamState) -> None:
    """Adaptive-moment update, in place; state carries the accumulators."""
    flat_params = list(model.weights) + list(model.biases)
    flat_grads = [gw for gw, _ in grads] + [gb for _, gb in grads]
    _check_finite(flat_grads, "gradient")
    if not state.m:
        state.m = [np.zeros_like(p) for p in flat_params]
        state.v = [np.zeros_like(p) for p in flat_params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for p, g, m, v in zip(flat_params, flat_grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    _check_finite(flat_params, "parameter")


class Optimizer:
    """Uniform step() interface over the two update rules."""

    def __init__(self, config: TrainConfig):
        self.kind = config.optimizer
        if self.kind == "adam":
            self.state = AdamState(learning_rate=config.learning_rate)
        elif self.kind == "sgd":
            self.learning_rate = config.learning_rate
        else:
            raise ValueError(f"unknown optimizer: {config.optimizer!r}")

    def step(self, model: MlpModel, grads) -> None:
        if self.kind == "adam":
            adam_step(model, grads, self.state)
        else:
            sgd_step(model, grads, self.learning_rate)


def fit(model: MlpModel, x: np.ndarray, labels: np.ndarray, config: TrainConfig):
    """Train on a fixed design matrix; returns the per-epoch loss history.

    Uses full batches below ``full_batch_limit`` rows, otherwise fixed-size
    batches in row order.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    opt = Optimizer(config)
    history = []
    n = x.shape[0]
    step = n if n < config.full_batch_limit else config.batch_size
    for _ in range(config.epochs):
        total = 0.0
        for i in range(0, n, step):
            grads, loss = mlp_backward(model, x[i : i + step], labels[i : i + step])
            opt.step(model, grads)
            total += loss * min(step, n - i)
        history.append(total / n)
    return history


def gradient_check(
    model: MlpModel,
    x: np.ndarray,
    labels: np.ndarray,
    n_params: int = 500,
    h: float = 1e-5,
    seed: int = 0,
) -> float:
    """Compare backprop against central finite differences.

    Samples ``n_params`` random weight/bias coordinates and returns the
    maximum relative error between the analytic gradient and
    (L(p+h) - L(p-h)) / 2h.
    """
    x = np.asarray(x, dtype=np.float64)
    grads, _ = mlp_backward(model, x, labels)
    flat_params = list(model.weights) + list(model.biases)
    flat_grads = [gw for gw, _ in grads] + [gb for _, gb in grads]
    sizes = np.array([p.size for p in flat_params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.Generator(np.random.PCG64(seed))
    picks = rng.integers(0, offsets[-1], size=n_params)

    def loss_at() -> float:
        probs = mlp_forward(model, x)
        return mean_cross_entropy(probs, labels)

    worst = 0.0
    for flat_idx in picks:
        which = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        inner = int(flat_idx - offsets[which])
        param = flat_params[which].reshape(-1)
        orig = param[inner]
        param[inner] = orig + h
        up = loss_at()
        param[inner] = orig - h
        down = loss_at()
        param[inner] = orig
        fd = (up - down) / (2.0 * h)
        analytic = flat_grads[which].reshape(-1)[inner]
        rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-8)
        worst = max(worst, rel)
    return worst


def model_to_bytes(model: MlpModel) -> bytes:
    dims = model.layer_dims
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(dims))]
    parts.append(struct.pack(f"<{len(dims)}I", *dims))
    for w, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def model_from_bytes(blob: bytes) -> MlpModel:
    if blob[:4] != MAGIC:
        raise FormatError("bad magic; not a model blob")
    if len(blob) < 12:
        raise FormatError("model blob shorter than its header")
    version, n_dims = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {version}")
    off = 12
    if len(blob) < off + 4 * n_dims or n_dims < 2:
        raise FormatError("model blob shorter than its layer table")
    dims = list(struct.unpack_from(f"<{n_dims}I", blob, off))
    off += 4 * n_dims
    payload = sum(8 * (i * o + o) for i, o in zip(dims[:-1], dims[1:]))
    if len(blob) != off + payload:
        raise FormatError("model blob has trailing or missing bytes")
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(blob, dtype="<f8", count=fan_in * fan_out, offset=off)
        off += 8 * fan_in * fan_out
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(w.reshape(fan_out, fan_in).copy())
        biases.append(b.copy())
    return MlpModel(dims, weights, biases)


def save_model(model: MlpModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> MlpModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())

"""Small MLP classifier on flat float64 parameter vectors.

The layout (alternating weight/bias shapes) fully determines the network, so
forward, backward, SGD, and evaluation need only a ParamVector. Everything is
plain numpy and deterministic given a seed, so client updates can be computed
in any order or in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    activation: str = "relu"

    def __post_init__(self) -> None:
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ValueError("layer dimensions must be positive")
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))

    def layout(self) -> "Layout":
        dims = (self.input_dim, *self.hidden_dims, self.num_classes)
        shapes = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            shapes.append((d_in, d_out))
            shapes.append((d_out,))
        return Layout(tuple(shapes))


class Layout:
    """Shapes of the weight/bias arrays behind one flat vector."""

    def __init__(self, shapes: tuple[tuple[int, ...], ...]):
        self.shapes = shapes
        self.sizes = tuple(int(np.prod(s)) for s in shapes)
        self.size = sum(self.sizes)

    def __eq__(self, other) -> bool:
        return isinstance(other, Layout) and self.shapes == other.shapes

    def pack(self, arrays) -> np.ndarray:
        return np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])

    def unpack(self, flat: np.ndarray) -> list[np.ndarray]:
        if flat.shape != (self.size,):
            raise ValueError(f"expected flat vector of length {self.size}, got {flat.shape}")
        out, offset = [], 0
        for shape, size in zip(self.shapes, self.sizes):
            out.append(flat[offset : offset + size].reshape(shape))
            offset += size
        return out


@dataclass
class ParamVector:
    """Flat float64 vector (model weights or an update) plus its layout."""

    values: np.ndarray
    layout: Layout

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.layout.size,):
            raise ValueError("values length does not match layout")

    @property
    def input_dim(self) -> int:
        return self.layout.shapes[0][0]

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __add__(self, other: "ParamVector") -> "ParamVector":
        return ParamVector(self.values + other.values, self.layout)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        return ParamVector(self.values - other.values, self.layout)

    def __mul__(self, scalar: float) -> "ParamVector":
        return ParamVector(self.values * scalar, self.layout)

    __rmul__ = __mul__


def init_params(config: ModelConfig, seed) -> ParamVector:
    """Scaled-uniform fan-in init, bit-identical for identical (config, seed)."""
    rng = np.random.default_rng(seed)
    layout = config.layout()
    arrays = []
    for shape in layout.shapes:
        # Bias reuses its weight matrix's fan-in.
        fan_in = shape[0] if len(shape) == 2 else arrays[-1].shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        arrays.append(rng.uniform(-bound, bound, size=shape))
    return ParamVector(layout.pack(arrays), layout)


def _forward(params: ParamVector, features: np.ndarray):
    """Returns logits, the post-activation inputs per layer, and the arrays."""
    arrays = params.layout.unpack(params.values)
    acts = [features]
    x = features
    n_layers = len(arrays) // 2
    for layer in range(n_layers):
        w, b = arrays[2 * layer], arrays[2 * layer + 1]
        z = x @ w + b
        if layer == n_layers - 1:
            return z, acts, arrays
        x = np.maximum(z, 0.0)
        acts.append(x)
    raise AssertionError("unreachable")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_batch(params: ParamVector, features: np.ndarray, labels: np.ndarray) -> None:
    if features.ndim != 2 or features.shape[1] != params.input_dim:
        raise ValueError(
            f"features must be (n, {params.input_dim}), got {features.shape}"
        )
    if len(labels) != len(features) or len(features) == 0:
        raise ValueError("batch must be non-empty with one label per row")


def loss_and_grad(
    params: ParamVector, features: np.ndarray, labels: np.ndarray
) -> tuple[float, ParamVector]:
    """Mean cross-entropy over the batch and its gradient w.r.t. params."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    _check_batch(params, features, labels)

    logits, acts, arrays = _forward(params, features)
    n = features.shape[0]
    log_probs = _log_softmax(logits)
    loss = float(-log_probs[np.arange(n), labels].mean())

    # dL/dz for softmax cross-entropy, then backprop through the stack.
    grad_z = np.exp(log_probs)
    grad_z[np.arange(n), labels] -= 1.0
    grad_z /= n

    grads: list = [None] * len(arrays)
    n_layers = len(arrays) // 2
    for layer in range(n_layers - 1, -1, -1):
        w = arrays[2 * layer]
        grads[2 * layer] = acts[layer].T @ grad_z
        grads[2 * layer + 1] = grad_z.sum(axis=0)
        if layer > 0:
            grad_z = (grad_z @ w.T) * (acts[layer] > 0.0)

    return loss, ParamVector(params.layout.pack(grads), params.layout)


def local_sgd(
    params: ParamVector,
    features: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    batch_size: int,
    lr: float,
    seed,
) -> ParamVector:
    """Seeded mini-batch SGD from params; returns the update final - initial."""
    if len(features) == 0:
        raise ValueError("client shard must be non-empty")
    rng = np.random.default_rng(seed)
    current = params.copy()
    n = len(features)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            _, grad = loss_and_grad(current, features[batch], labels[batch])
            current = current - lr * grad
    return current - params


def evaluate(
    params: ParamVector, features: np.ndarray, labels: np.ndarray
) -> tuple[float, float]:
    """(mean cross-entropy, accuracy) over a full dataset pass."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    _check_batch(params, features, labels)
    logits, _, _ = _forward(params, features)
    log_probs = _log_softmax(logits)
    loss = float(-log_probs[np.arange(len(labels)), labels].mean())
    accuracy = float((logits.argmax(axis=1) == labels).mean())
    return loss, accuracy

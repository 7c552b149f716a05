"""Dense ReLU network with hand-written backprop and heavy-ball SGD.

Parameters live in plain numpy arrays (float64). A model is an ordered list
of :class:`LayerParams`; hidden layers use ReLU and the last layer emits
linear logits scored with softmax cross-entropy.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import ClientShard, LabeledDataset

BYTES_PER_PARAM = 4


@dataclass
class LayerParams:
    weights: np.ndarray  # (fan_out, fan_in)
    bias: np.ndarray  # (fan_out,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ValueError("weights must be 2-D and bias 1-D")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ValueError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weights.shape[0]}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    def copy(self) -> "LayerParams":
        return LayerParams(self.weights.copy(), self.bias.copy())


@dataclass
class ModelParams:
    layers: list[LayerParams]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a model needs at least one layer")
        for i in range(1, len(self.layers)):
            if self.layers[i].shape[1] != self.layers[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i} fan_in {self.layers[i].shape[1]} does not match "
                    f"layer {i - 1} fan_out {self.layers[i - 1].shape[0]}"
                )

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].shape[1]] + [layer.shape[0] for layer in self.layers]

    @property
    def num_classes(self) -> int:
        return self.layers[-1].shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams([layer.copy() for layer in self.layers])

    def flat(self) -> np.ndarray:
        return np.concatenate([layer.flat() for layer in self.layers])

    def congruent(self, other: "ModelParams") -> bool:
        return [l.shape for l in self.layers] == [l.shape for l in other.layers]

    def equals(self, other: "ModelParams") -> bool:
        """Bit-for-bit equality of every parameter."""
        return self.congruent(other) and all(
            np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )


# Gradients share the model's layout.
Gradients = ModelParams


@dataclass(frozen=True)
class PartialWeights:
    """Final layer flattened as ``weights.ravel()`` (row-major) then ``bias``."""

    values: np.ndarray
    layer_shape: tuple[int, int]

    def __post_init__(self):
        fan_out, fan_in = self.layer_shape
        if self.values.shape != (fan_out * fan_in + fan_out,):
            raise ValueError(
                f"expected {fan_out * fan_in + fan_out} values for layer "
                f"{self.layer_shape}, got {self.values.shape}"
            )

    def to_layer(self) -> LayerParams:
        fan_out, fan_in = self.layer_shape
        split = fan_out * fan_in
        return LayerParams(
            self.values[:split].reshape(fan_out, fan_in).copy(),
            self.values[split:].copy(),
        )


@dataclass(frozen=True)
class TrainSpec:
    epochs: int = 10
    batch_size: int = 10
    learning_rate: float = 0.01
    momentum: float = 0.5
    proximal_mu: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.proximal_mu < 0:
            raise ValueError("proximal_mu must be non-negative")

    def with_seed(self, seed: int) -> "TrainSpec":
        return replace(self, seed=int(seed))


def init_model(sizes: Sequence[int], seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases.

    ``sizes`` lists layer widths from input to output, e.g. ``[16, 32, 10]``.
    """
    if len(sizes) < 2:
        raise ValueError("sizes needs an input and an output width")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(LayerParams(w, np.zeros(fan_out)))
    return ModelParams(layers)


def _check_input(model: ModelParams, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {x.shape}")
    fan_in = model.layers[0].shape[1]
    if x.shape[1] != fan_in:
        raise ValueError(
            f"feature dimension {x.shape[1]} does not match first-layer fan_in {fan_in}"
        )
    return x


def forward(model: ModelParams, features: np.ndarray) -> np.ndarray:
    h = _check_input(model, features)
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        h = h @ layer.weights.T + layer.bias
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def predict(model: ModelParams, features: np.ndarray) -> np.ndarray:
    return np.argmax(forward(model, features), axis=1)


def accuracy(model: ModelParams, data: LabeledDataset) -> float:
    return float(np.mean(predict(model, data.features) == data.labels))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(
    model: ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
    anchor: ModelParams | None = None,
    mu: float = 0.0,
) -> tuple[float, Gradients]:
    """Mean softmax cross-entropy plus ``mu/2 * ||theta - anchor||^2``."""
    x = _check_input(model, features)
    y = np.asarray(labels)
    num_classes = model.num_classes
    if y.shape != (x.shape[0],):
        raise ValueError(f"labels shape {y.shape} does not match batch size {x.shape[0]}")
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    if mu > 0:
        if anchor is None or not model.congruent(anchor):
            raise ValueError("a shape-congruent anchor is required when mu > 0")

    # forward, keeping pre-activations for the backward pass
    activations = [x]
    pre = []
    last = len(model.layers) - 1
    h = x
    for i, layer in enumerate(model.layers):
        z = h @ layer.weights.T + layer.bias
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        activations.append(h)

    batch = x.shape[0]
    logp = _log_softmax(h)
    loss = -float(np.mean(logp[np.arange(batch), y]))

    delta = np.exp(logp)
    delta[np.arange(batch), y] -= 1.0
    delta /= batch

    grads: list[LayerParams] = [None] * len(model.layers)  # type: ignore[list-item]
    for i in range(last, -1, -1):
        layer = model.layers[i]
        gw = delta.T @ activations[i]
        gb = delta.sum(axis=0)
        grads[i] = LayerParams(gw, gb)
        if i > 0:
            delta = (delta @ layer.weights) * (pre[i - 1] > 0)

    if mu > 0:
        sq = 0.0
        for g, p, a in zip(grads, model.layers, anchor.layers):
            dw = p.weights - a.weights
            db = p.bias - a.bias
            sq += float(np.sum(dw * dw) + np.sum(db * db))
            g.weights += mu * dw
            g.bias += mu * db
        loss += 0.5 * mu * sq
    return loss, ModelParams(grads)


def local_train(model: ModelParams, shard: ClientShard | LabeledDataset, spec: TrainSpec) -> ModelParams:
    """Run mini-batch SGD with heavy-ball momentum on a copy of ``model``.

    Each epoch visits the training set in a fresh permutation drawn from a
    generator seeded by ``spec.seed``; the last short batch is kept. When
    ``spec.proximal_mu > 0`` the proximal anchor is the model passed in.
    """
    data = shard.train if isinstance(shard, ClientShard) else shard
    n = len(data)
    if n == 0:
        raise ValueError("cannot train on an empty shard")

    rng = np.random.default_rng(spec.seed)
    params = model.copy()
    anchor = model if spec.proximal_mu > 0 else None
    velocity = [LayerParams(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in params.layers]
    lr, beta = spec.learning_rate, spec.momentum

    for _ in range(spec.epochs):
        order = rng.permutation(n)
        for start in range(0, n, spec.batch_size):
            idx = order[start:start + spec.batch_size]
            _, grads = loss_and_grad(
                params, data.features[idx], data.labels[idx], anchor, spec.proximal_mu
            )
            for p, v, g in zip(params.layers, velocity, grads.layers):
                v.weights *= beta
                v.weights += g.weights
                v.bias *= beta
                v.bias += g.bias
                p.weights -= lr * v.weights
                p.bias -= lr * v.bias
    return params


def extract_partial_weights(model: ModelParams) -> PartialWeights:
    last = model.layers[-1]
    return PartialWeights(last.flat(), last.shape)


def layer_flat(model: ModelParams, layer_index: int) -> np.ndarray:
    if not -len(model.layers) <= layer_index < len(model.layers):
        raise IndexError(f"layer index {layer_index} out of range for {len(model.layers)} layers")
    return model.layers[layer_index].flat()


def param_count(model: ModelParams) -> int:
    return sum(l.weights.size + l.bias.size for l in model.layers)


def final_layer_param_count(model: ModelParams) -> int:
    last = model.layers[-1]
    return last.weights.size + last.bias.size


def weighted_average(models: Sequence[ModelParams], weights: Sequence[float]) -> ModelParams:
    """Convex combination of shape-congruent models.

    Contributions are folded in ascending index order as a running weighted
    mean, so averaging identical models returns them bit-for-bit.
    """
    if len(models) == 0:
        raise ValueError("need at least one model")
    if len(models) != len(weights):
        raise ValueError("models and weights differ in length")
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    if w.sum() <= 0:
        raise ValueError("weights must not all be zero")
    for m in models[1:]:
        if not m.congruent(models[0]):
            raise ValueError("models are not shape-congruent")

    first = int(np.flatnonzero(w > 0)[0])
    out = models[first].copy()
    total = w[first]
    for i in range(first + 1, len(models)):
        if w[i] == 0:
            continue
        total += w[i]
        frac = w[i] / total
        for acc, layer in zip(out.layers, models[i].layers):
            acc.weights += frac * (layer.weights - acc.weights)
            acc.bias += frac * (layer.bias - acc.bias)
    return out

"""Small differentiable classifiers with hand-written backward passes.

Two architectures are supported: multinomial logistic regression
(``"linear"``) and a single tanh hidden layer (``"one-hidden"``). Weights are
stored as ``[out x in]`` matrices so a layer computes ``x @ W.T + b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12


class DimensionError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelParams:
    layers: tuple[tuple[np.ndarray, np.ndarray], ...]
    arch: str = "linear"

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def num_classes(self) -> int:
        return self.layers[-1][0].shape[0]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in self.layers])

    def from_vector(self, vec: np.ndarray) -> "ModelParams":
        layers, pos = [], 0
        for W, b in self.layers:
            Wn = vec[pos:pos + W.size].reshape(W.shape)
            pos += W.size
            bn = vec[pos:pos + b.size].copy()
            pos += b.size
            layers.append((Wn.copy(), bn))
        if pos != vec.size:
            raise DimensionError(f"expected vector of length {pos}, got {vec.size}")
        return ModelParams(tuple(layers), self.arch)

    def map(self, fn) -> "ModelParams":
        return ModelParams(tuple((fn(W), fn(b)) for W, b in self.layers), self.arch)

    def is_finite(self) -> bool:
        return all(np.isfinite(W).all() and np.isfinite(b).all() for W, b in self.layers)


@dataclass(frozen=True)
class PredictionBatch:
    logits: np.ndarray
    probs: np.ndarray


def init_params(in_dim: int, num_classes: int, rng: np.random.Generator,
                arch: str = "linear", hidden: int = 32, init_scale: float = 0.1) -> ModelParams:
    """Uniform init in ``[-init_scale, init_scale]``."""
    if arch == "linear":
        shapes = [(num_classes, in_dim)]
    elif arch == "one-hidden":
        shapes = [(hidden, in_dim), (num_classes, hidden)]
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    layers = []
    for out, inp in shapes:
        W = rng.uniform(-init_scale, init_scale, size=(out, inp))
        b = rng.uniform(-init_scale, init_scale, size=out)
        layers.append((W, b))
    return ModelParams(tuple(layers), arch)


def zeros_like(params: ModelParams) -> ModelParams:
    return params.map(np.zeros_like)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_input(params: ModelParams, features: np.ndarray) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D feature matrix, got ndim={X.ndim}")
    if X.shape[1] != params.in_dim:
        raise DimensionError(f"expected feature width {params.in_dim}, got {X.shape[1]}")
    return X


def _forward_cache(params: ModelParams, X: np.ndarray) -> list[np.ndarray]:
    acts = [X]
    h = X
    for k, (W, b) in enumerate(params.layers):
        h = h @ W.T + b
        if k < len(params.layers) - 1:
            h = np.tanh(h)
        acts.append(h)
    return acts


def forward(params: ModelParams, features: np.ndarray) -> PredictionBatch:
    X = _check_input(params, features)
    logits = _forward_cache(params, X)[-1]
    return PredictionBatch(logits, softmax(logits))


def as_soft_targets(targets: np.ndarray, num_classes: int) -> np.ndarray:
    """Promote integer class ids to one-hot rows; pass soft rows through."""
    t = np.asarray(targets)
    if t.ndim == 1:
        out = np.zeros((t.shape[0], num_classes))
        out[np.arange(t.shape[0]), t.astype(int)] = 1.0
        return out
    return t.astype(float)


def per_example_ce(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    return -(targets * np.log(np.clip(probs, PROB_FLOOR, 1.0))).sum(axis=1)


def weighted_soft_ce_loss(pred: PredictionBatch, targets: np.ndarray,
                          sample_weights: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Weighted mean of per-example soft-target cross-entropy.

    Returns ``(total, per_example)`` where ``total`` normalizes by the sum of
    the weights.
    """
    T = as_soft_targets(targets, pred.probs.shape[1])
    per = per_example_ce(pred.probs, T)
    w = np.ones(len(per)) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    if (w < 0).any():
        raise ValueError("sample weights must be nonnegative")
    s = w.sum()
    if s <= 0:
        raise ValueError("sample weights sum to zero; weighted loss is undefined")
    return float(w @ per / s), per


def backprop(params: ModelParams, features: np.ndarray, dlogits: np.ndarray) -> ModelParams:
    """Pull a gradient w.r.t. the logits back to every parameter."""
    X = _check_input(params, features)
    # a linear model only needs its input
    acts = [X] if len(params.layers) == 1 else _forward_cache(params, X)
    grads = []
    delta = dlogits
    for k in range(len(params.layers) - 1, -1, -1):
        W, _ = params.layers[k]
        a_in = acts[k]
        grads.append((delta.T @ a_in, delta.sum(axis=0)))
        if k > 0:
            delta = (delta @ W) * (1.0 - a_in ** 2)
    return ModelParams(tuple(reversed(grads)), params.arch)


def loss_and_grad(params: ModelParams, features: np.ndarray, targets: np.ndarray,
                  sample_weights: np.ndarray | None = None) -> tuple[float, np.ndarray, ModelParams]:
    X = _check_input(params, features)
    pred = forward(params, X)
    T = as_soft_targets(targets, params.num_classes)
    total, per = weighted_soft_ce_loss(pred, T, sample_weights)
    w = np.ones(len(per)) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    # clamping only bites below 1e-12, where the analytic gradient is kept
    dlogits = pred.probs * T.sum(axis=1, keepdims=True) - T
    dlogits *= (w / w.sum())[:, None]
    return total, per, backprop(params, X, dlogits)


def grad(params: ModelParams, features: np.ndarray, targets: np.ndarray,
         sample_weights: np.ndarray | None = None) -> ModelParams:
    return loss_and_grad(params, features, targets, sample_weights)[2]


def sgd_step(params: ModelParams, gradient: ModelParams, lr: float) -> ModelParams:
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not gradient.is_finite():
        raise NonFiniteError("non-finite gradient; aborting step")
    layers = []
    for (W, b), (gW, gb) in zip(params.layers, gradient.layers, strict=True):
        if W.shape != gW.shape or b.shape != gb.shape:
            raise DimensionError(f"expected gradient shape {W.shape}, got {gW.shape}")
        layers.append((W - lr * gW, b - lr * gb))
    return ModelParams(tuple(layers), params.arch)


def add(a: ModelParams, b: ModelParams, scale: float = 1.0) -> ModelParams:
    return ModelParams(tuple((Wa + scale * Wb, ba + scale * bb)
                             for (Wa, ba), (Wb, bb) in zip(a.layers, b.layers)), a.arch)

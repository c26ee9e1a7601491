"""Small fully-connected network engine in float64 numpy.

Layers are affine maps followed by leaky ReLU or identity.  Dropout is
inverted (kept units are divided by the keep probability) and only touches
hidden activations.  Gradients are exact and analytic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidConfigError, ShapeError, TrainingDivergedError

LEAKY_SLOPE = 0.1


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "leaky_relu"
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise InvalidConfigError(f"layer dims must be positive, got {self.in_dim}->{self.out_dim}")
        if self.activation not in ("leaky_relu", "linear"):
            raise InvalidConfigError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and not 0 < self.slope < 1:
            raise InvalidConfigError(f"leaky slope must lie in (0, 1), got {self.slope}")


def mlp_specs(sizes: Sequence[int], hidden_activation="leaky_relu",
              output_activation="linear", slope=LEAKY_SLOPE) -> list[LayerSpec]:
    """Layer specs for consecutive ``sizes``, e.g. ``[d, 60, 60, 10]``."""
    specs = []
    for i in range(len(sizes) - 1):
        act = output_activation if i == len(sizes) - 2 else hidden_activation
        specs.append(LayerSpec(int(sizes[i]), int(sizes[i + 1]), act, slope))
    return specs


@dataclass
class MlpParams:
    weights: list
    biases: list

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    @classmethod
    def zeros_like(cls, other: "MlpParams") -> "MlpParams":
        return cls([np.zeros_like(w) for w in other.weights], [np.zeros_like(b) for b in other.biases])


def init_params(specs: Sequence[LayerSpec], rng: np.random.Generator) -> MlpParams:
    weights, biases = [], []
    for s in specs:
        limit = np.sqrt(6.0 / (s.in_dim + s.out_dim))
        weights.append(rng.uniform(-limit, limit, size=(s.in_dim, s.out_dim)))
        biases.append(np.zeros(s.out_dim))
    return MlpParams(weights, biases)


def zero_params(specs: Sequence[LayerSpec]) -> MlpParams:
    return MlpParams([np.zeros((s.in_dim, s.out_dim)) for s in specs],
                     [np.zeros(s.out_dim) for s in specs])


def activate(z: np.ndarray, spec: LayerSpec) -> np.ndarray:
    if spec.activation == "linear":
        return z
    return np.where(z > 0, z, spec.slope * z)


def activation_grad(z: np.ndarray, spec: LayerSpec) -> np.ndarray | float:
    if spec.activation == "linear":
        return 1.0
    return np.where(z > 0, 1.0, spec.slope)


def dropout_masks(specs: Sequence[LayerSpec], batch: int, rate: float,
                  rng: np.random.Generator) -> list[np.ndarray] | None:
    """One pre-scaled mask per hidden layer; ``None`` when rate is 0."""
    if not 0 <= rate < 1:
        raise InvalidConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0:
        return None
    keep = 1.0 - rate
    return [(rng.random((batch, s.out_dim)) < keep) / keep for s in specs[:-1]]


@dataclass
class ForwardCache:
    specs: list
    params: MlpParams
    inputs: list = field(default_factory=list)
    preacts: list = field(default_factory=list)
    masks: list | None = None


def forward(params: MlpParams, specs: Sequence[LayerSpec], x: np.ndarray,
            dropout_mask: list[np.ndarray] | None = None) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != specs[0].in_dim:
        raise ShapeError(f"network expects input width {specs[0].in_dim}, got shape {x.shape}")
    cache = ForwardCache(list(specs), params, masks=dropout_mask)
    h = x
    last = len(specs) - 1
    for i, (s, W, b) in enumerate(zip(specs, params.weights, params.biases)):
        cache.inputs.append(h)
        z = h @ W + b
        cache.preacts.append(z)
        h = activate(z, s)
        if dropout_mask is not None and i < last:
            h = h * dropout_mask[i]
    return h, cache


def backward(cache: ForwardCache, upstream: np.ndarray) -> tuple[MlpParams, np.ndarray]:
    """Gradients of ``sum(upstream * output)`` w.r.t. parameters and input."""
    grads_w, grads_b = [], []
    g = np.asarray(upstream, dtype=np.float64)
    last = len(cache.specs) - 1
    for i in range(last, -1, -1):
        s = cache.specs[i]
        if cache.masks is not None and i < last:
            g = g * cache.masks[i]
        g = g * activation_grad(cache.preacts[i], s)
        grads_w.append(cache.inputs[i].T @ g)
        grads_b.append(g.sum(axis=0))
        g = g @ cache.params.weights[i].T
    return MlpParams(grads_w[::-1], grads_b[::-1]), g


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout_rate: float = 0.05
    epochs: int = 100
    batch_size: int = 1024
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if not 0 <= self.dropout_rate < 1:
            raise InvalidConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfigError("epochs and batch_size must be positive")


@dataclass
class OptimizerState:
    step: int = 0
    m: list | None = None
    v: list | None = None


def optimizer_step(params: list[np.ndarray], grads: list[np.ndarray], state: OptimizerState,
                   cfg: TrainConfig) -> tuple[list[np.ndarray], OptimizerState]:
    """One descent step on ``params`` (a flat list of arrays).

    Returns new arrays; the inputs are not modified.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameter arrays but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"parameter shape {p.shape} does not match gradient {g.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient")
    if cfg.optimizer == "sgd":
        return [p - cfg.learning_rate * g for p, g in zip(params, grads)], OptimizerState(state.step + 1)

    m = state.m if state.m is not None else [np.zeros_like(p) for p in params]
    v = state.v if state.v is not None else [np.zeros_like(p) for p in params]
    t = state.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    new_m = [b1 * mi + (1 - b1) * g for mi, g in zip(m, grads)]
    new_v = [b2 * vi + (1 - b2) * g * g for vi, g in zip(v, grads)]
    c1, c2 = 1 - b1**t, 1 - b2**t
    new_p = [p - cfg.learning_rate * (mi / c1) / (np.sqrt(vi / c2) + cfg.adam_eps)
             for p, mi, vi in zip(params, new_m, new_v)]
    return new_p, OptimizerState(t, new_m, new_v)

"""Dense networks, losses, initialisers, and optimisers on the autodiff core."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ACTIVATIONS, Tensor
from .fields import ShapeError

RATIO_GUARD = 1e-8
_NORM_EPS = 1e-30  # keeps sqrt differentiable at a perfect fit


class DegenerateTargetError(ValueError):
    """A relative loss was given a target the guard cannot regularise."""


@dataclass
class OptimConfig:
    """Optimiser and schedule settings shared by all trainable models."""

    algorithm: str = "adam"  # "adam" | "sgd"
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    step_size: int = 0  # epochs per learning-rate decay; 0 disables
    gamma: float = 1.0
    epochs: int = 100
    batch_size: int = 32
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ("adam", "sgd"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    def lr_at(self, epoch: int) -> float:
        if self.step_size <= 0:
            return self.learning_rate
        return self.learning_rate * self.gamma ** (epoch // self.step_size)


class DenseNet:
    """Fully-connected network: affine layers with per-layer activations."""

    def __init__(self, layers: list[tuple[int, int, str]]):
        for k in range(len(layers) - 1):
            if layers[k][1] != layers[k + 1][0]:
                raise ValueError(f"layer widths do not chain at position {k}: {layers[k][1]} -> {layers[k + 1][0]}")
        for _, _, act in layers:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.layers = list(layers)
        self.weights = [Tensor(np.zeros((fi, fo)), requires_grad=True) for fi, fo, _ in layers]
        self.biases = [Tensor(np.zeros(fo), requires_grad=True) for _, fo, _ in layers]

    @classmethod
    def from_widths(cls, widths: list[int], hidden: str, output: str = "identity") -> "DenseNet":
        acts = [hidden] * (len(widths) - 2) + [output]
        return cls([(widths[k], widths[k + 1], acts[k]) for k in range(len(widths) - 1)])

    @property
    def in_width(self) -> int:
        return self.layers[0][0]

    @property
    def out_width(self) -> int:
        return self.layers[-1][1]

    @property
    def param_count(self) -> int:
        return sum(fi * fo + fo for fi, fo, _ in self.layers)

    def parameters(self) -> list[Tensor]:
        return self.weights + self.biases

    def initialize(self, scheme: str, seed) -> None:
        """Xavier-uniform or Kaiming-normal weights, zero biases."""
        rng = np.random.default_rng(seed)
        for w, (fi, fo, _) in zip(self.weights, self.layers):
            if scheme == "xavier":
                bound = np.sqrt(6.0 / (fi + fo))
                w.data = rng.uniform(-bound, bound, size=(fi, fo))
            elif scheme == "kaiming_normal":
                w.data = rng.standard_normal((fi, fo)) * np.sqrt(2.0 / fi)
            else:
                raise ValueError(f"unknown init scheme {scheme!r}")
        for b in self.biases:
            b.data = np.zeros_like(b.data)

    def __call__(self, batch, training: bool = False, dropout: float = 0.0, rng=None) -> Tensor:
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        if x.data.ndim != 2 or x.data.shape[1] != self.in_width:
            raise ShapeError(f"expected batch of shape (n, {self.in_width}), got {x.data.shape}")
        last = len(self.layers) - 1
        for k, (w, b, (_, _, act)) in enumerate(zip(self.weights, self.biases, self.layers)):
            x = x @ w + b
            x = ACTIVATIONS[act](x)
            if training and dropout > 0.0 and k < last:
                x = ad.dropout(x, dropout, rng)
        return x


# ---- losses ----


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error over every (sample, component) entry."""
    diff = pred - Tensor(target)
    return (diff * diff).mean()


def rel_ratio_loss(pred: Tensor, target: np.ndarray, reduction: str = "sum") -> Tensor:
    """Per-sample L2 norm of the componentwise ratios (pred - d) / d.

    Denominators are guarded by sign(d) * max(|d|, 1e-8); exactly-zero
    components make the guard vanish and raise ``DegenerateTargetError``.
    """
    if np.any(target == 0.0):
        raise DegenerateTargetError("relative ratio loss target has exactly-zero components")
    denom = np.sign(target) * np.maximum(np.abs(target), RATIO_GUARD)
    r = (pred - Tensor(target)) * Tensor(1.0 / denom)
    per_sample = ad.sqrt((r * r).sum(axis=1) + _NORM_EPS)
    return per_sample.sum() if reduction == "sum" else per_sample.mean()


def rel_l2_loss(pred: Tensor, target: np.ndarray, reduction: str = "sum") -> Tensor:
    """Per-sample relative L2 error ||pred - u|| / ||u||, guarded target norm."""
    norms = np.maximum(np.linalg.norm(target, axis=1), RATIO_GUARD)
    diff = pred - Tensor(target)
    per_sample = ad.sqrt((diff * diff).sum(axis=1) + _NORM_EPS) * Tensor(1.0 / norms)
    return per_sample.sum() if reduction == "sum" else per_sample.mean()


LOSSES = {"mse": mse_loss, "rel_ratio": rel_ratio_loss, "rel_l2": rel_l2_loss}


def grad(net: DenseNet, batch: np.ndarray, targets: np.ndarray, loss: str = "mse"):
    """Exact parameter and input gradients of the scalar loss on one batch."""
    x = Tensor(np.asarray(batch, dtype=np.float64), requires_grad=True)
    out = net(x)
    LOSSES[loss](out, np.asarray(targets, dtype=np.float64)).backward()
    param_grads = [(w.grad, b.grad) for w, b in zip(net.weights, net.biases)]
    return param_grads, x.grad


# ---- optimisers ----


class SGD:
    def __init__(self, params: list[Tensor], config: OptimConfig):
        self.params = params
        self.config = config

    def step(self, lr: float) -> None:
        wd = self.config.weight_decay
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad if wd == 0.0 else p.grad + wd * p.data
            p.data -= lr * g


class Adam:
    """Adam with bias correction; weight decay enters the gradient (L2 coupling)."""

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, params: list[Tensor], config: OptimConfig):
        self.params = params
        self.config = config
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        wd = self.config.weight_decay
        b1, b2 = self.BETA1, self.BETA2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad if wd == 0.0 else p.grad + wd * p.data
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.EPS)


def make_optimizer(params: list[Tensor], config: OptimConfig):
    return Adam(params, config) if config.algorithm == "adam" else SGD(params, config)


def zero_grads(params: list[Tensor]) -> None:
    for p in params:
        p.grad = None


def optimizer_step(optimizer, params: list[Tensor], lr: float) -> None:
    """Apply one update from the accumulated gradients, then clear them."""
    optimizer.step(lr)
    zero_grads(params)


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index batches; deterministic given the generator state."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_dense(
    net: DenseNet,
    inputs: np.ndarray,
    targets: np.ndarray,
    loss: str,
    config: OptimConfig,
    reduction: str = "sum",
) -> list[float]:
    """Minibatch training of a dense net; returns the per-epoch mean loss."""
    n = inputs.shape[0]
    if config.batch_size > n:
        raise ValueError(f"batch_size {config.batch_size} exceeds dataset size {n}")
    loss_fn = LOSSES[loss]
    params = net.parameters()
    optimizer = make_optimizer(params, config)
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        total = 0.0
        for idx in minibatches(n, config.batch_size, rng):
            out = net(inputs[idx], training=True, dropout=config.dropout, rng=rng)
            if loss == "mse":
                batch_loss = mse_loss(out, targets[idx])
            else:
                batch_loss = loss_fn(out, targets[idx], reduction=reduction)
            batch_loss.backward()
            optimizer_step(optimizer, params, lr)
            total += float(batch_loss.data)
        history.append(total / max(1, (n + config.batch_size - 1) // config.batch_size))
    return history

"""Branch/trunk operator network with whole-grid batched training.

The branch net turns the input field sampled at m fixed sensor locations
into p coefficients; the trunk net turns a query point (x, y) into p basis
values; predictions are their inner product plus a global scalar bias.
Training scores every (sample, node) pair at once through the product
B T^T, which keeps the cost at two matrix products per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .datagen import SampleSet
from .fields import GridField, ShapeError
from .nets import DenseNet, OptimConfig, make_optimizer, minibatches, mse_loss, optimizer_step

SENSOR_BASE_S = 65


def grid_points(s: int) -> np.ndarray:
    """(s*s, 2) array of node coordinates, row-major with y slow."""
    axis = np.linspace(0.0, 1.0, s)
    x, y = np.meshgrid(axis, axis)
    return np.stack([x.ravel(), y.ravel()], axis=-1)


def adaptive_pool(values: np.ndarray, target: int) -> np.ndarray:
    """Average-pool a (..., s, s) stack to (..., target, target).

    Window edges follow the adaptive rule floor(i*s/t) .. ceil((i+1)*s/t) so
    any s >= target is supported; s == target is a no-op.
    """
    s = values.shape[-1]
    if s == target:
        return values
    if s < target:
        raise ShapeError(f"cannot pool {s} up to {target}")
    edges_lo = (np.arange(target) * s) // target
    edges_hi = -(-(np.arange(1, target + 1) * s) // target)  # ceil division
    pooled = np.empty(values.shape[:-2] + (target, target))
    for i in range(target):
        rows = values[..., edges_lo[i] : edges_hi[i], :]
        for j in range(target):
            pooled[..., i, j] = rows[..., :, edges_lo[j] : edges_hi[j]].mean(axis=(-2, -1))
    return pooled


@dataclass
class DeepONetModel:
    branch: DenseNet
    trunk: DenseNet
    bias: Tensor  # scalar
    sensors: np.ndarray  # (m, 2) fixed locations
    sensor_s: int  # sensor grid resolution; inputs at finer grids are pooled

    def __post_init__(self):
        if self.branch.out_width != self.trunk.out_width:
            raise ValueError("branch and trunk output widths must match")

    @property
    def p(self) -> int:
        return self.branch.out_width

    @property
    def m(self) -> int:
        return self.branch.in_width

    @property
    def param_count(self) -> int:
        return self.branch.param_count + self.trunk.param_count + 1

    def parameters(self) -> list[Tensor]:
        return self.branch.parameters() + self.trunk.parameters() + [self.bias]

    def sensor_values(self, fields: np.ndarray) -> np.ndarray:
        """Flatten an (n, s, s) stack to sensor rows, pooling if s > sensor_s."""
        pooled = adaptive_pool(fields, self.sensor_s)
        return pooled.reshape(pooled.shape[0], -1)


def don_apply(model: DeepONetModel, lambda_sensors: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Mesh-free evaluation: u(x) = sum_k b_k(lambda) t_k(x) + bias."""
    lam = np.asarray(lambda_sensors, dtype=np.float64)
    if lam.shape != (model.m,):
        raise ShapeError(f"expected sensor vector of length {model.m}, got shape {lam.shape}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    b = model.branch(lam[None, :]).data
    t = model.trunk(pts).data
    return (b @ t.T + model.bias.data)[0]


def don_predict_batch(model: DeepONetModel, fields: np.ndarray, s: int) -> np.ndarray:
    """Evaluate a field batch on the full s x s grid."""
    b = model.branch(model.sensor_values(fields)).data
    t = model.trunk(grid_points(s)).data
    return (b @ t.T + model.bias.data).reshape(fields.shape[0], s, s)


def build_deeponet(
    m: int,
    p: int,
    branch_widths: list[int] | None,
    trunk_widths: list[int],
    trunk_activation: str,
    branch_activation: str = "tanh",
    seed=0,
) -> DeepONetModel:
    """Fresh model; ``branch_widths`` None means a single linear branch layer."""
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(300,))
    b_seed, t_seed = seq.spawn(2)
    if branch_widths:
        branch = DenseNet.from_widths([m, *branch_widths, p], hidden=branch_activation)
    else:
        branch = DenseNet([(m, p, "identity")])
    branch.initialize("xavier", b_seed)
    trunk = DenseNet.from_widths([2, *trunk_widths, p], hidden=trunk_activation, output=trunk_activation)
    trunk.initialize("xavier", t_seed)
    s = int(round(m**0.5))
    if s * s != m:
        raise ShapeError(f"sensor count {m} is not a square grid")
    sensors = grid_points(s)
    return DeepONetModel(branch=branch, trunk=trunk, bias=Tensor(np.zeros(1), requires_grad=True), sensors=sensors, sensor_s=s)


def train_deeponet(
    train,
    p: int,
    optim: OptimConfig,
    trunk_widths: list[int] = (128,) * 6,
    trunk_activation: str = "tanh",
    branch_widths: list[int] | None = None,
) -> DeepONetModel:
    """Minimise the mean squared error over all (sample, node) pairs.

    Sensors are the full training grid (pooled to 65^2 for finer grids); the
    default branch is a single linear layer on the flattened sensor values.
    """
    if isinstance(train, SampleSet):
        inputs, outputs = train.lambdas, train.solutions
    else:
        inputs, outputs = train
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("training set is empty")
    s = outputs.shape[1]
    sensor_s = min(s, SENSOR_BASE_S)
    model = build_deeponet(
        sensor_s * sensor_s, p, branch_widths, list(trunk_widths), trunk_activation, seed=optim.seed
    )
    sensor_rows = model.sensor_values(inputs)
    targets = outputs.reshape(n, -1)
    nodes = grid_points(s)

    params = model.parameters()
    optimizer = make_optimizer(params, optim)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=optim.seed, spawn_key=(301,)))
    for epoch in range(optim.epochs):
        lr = optim.lr_at(epoch)
        for idx in minibatches(n, optim.batch_size, rng):
            b = model.branch(sensor_rows[idx], training=True, dropout=optim.dropout, rng=rng)
            t = model.trunk(nodes, training=True, dropout=optim.dropout, rng=rng)
            pred = b @ t.T + model.bias
            loss = mse_loss(pred, targets[idx])
            loss.backward()
            optimizer_step(optimizer, params, lr)
    return model

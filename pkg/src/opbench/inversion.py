"""Inverse-problem strategies: backward operator training and Tikhonov
minimisation through a frozen forward model, plus the evaluation metrics.

The Tikhonov objective is the squared data misfit plus alpha1 * ||lam||^2
plus alpha2 * R(lam), minimised by safeguarded gradient descent: any step
that increases the objective is retried with a halved learning rate.  For
the reduced-basis models the optimisation variable is the latent coefficient
vector and the misfit is taken in the output latent space; for the grid
models the variable is the nodal field itself.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import datagen, fdm, pcann
from .autodiff import Tensor
from .datagen import NoiseLevel, Problem, SampleSet
from .deeponet import DeepONetModel, grid_points, train_deeponet
from .fields import GridField, MetricRecord, rel_l2, seg_accuracy
from .fno import FnoModel, fno_forward, train_fno
from .nets import OptimConfig
from .pcann import PcannModel, train_operator

log = logging.getLogger(__name__)

DARCY_LEVELS = (datagen.LEVEL_LOW, datagen.LEVEL_HIGH)
DARCY_CLAMP = datagen.LEVEL_LOW / 2.0
_TV_EPS = 1e-8


class DivergenceError(RuntimeError):
    """Tikhonov iteration produced a non-finite objective."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass
class TikhonovConfig:
    alpha1: float = 0.0
    alpha2: float = 0.0
    penalty: str = "difference"  # "difference" | "tv"
    steps: int = 10000
    lr: float = 0.1
    lr_decay: tuple[int, float] = (2000, 0.5)
    init: str = "zeros"  # "zeros" | "encoded" | "custom"
    init_value: float | np.ndarray | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.penalty not in ("difference", "tv"):
            raise ValueError(f"unknown penalty {self.penalty!r}")


class IdentityOperator:
    """Trivial field-space forward model, used to exercise the inversion loop."""

    def __init__(self, s: int):
        self.s = s


def _difference_matrices(s: int) -> tuple[Tensor, Tensor, Tensor]:
    """First-difference-quotient operator and a last-column selector."""
    d = np.zeros((s - 1, s))
    idx = np.arange(s - 1)
    d[idx, idx] = -(s - 1.0)
    d[idx, idx + 1] = s - 1.0
    keep = np.zeros((s, s - 1))
    keep[idx, idx] = 1.0
    return Tensor(d), Tensor(d.T), Tensor(keep)


def penalty_value(lam: Tensor, kind: str) -> Tensor:
    """Smoothness penalty of an (s, s) field tensor."""
    s = lam.data.shape[0]
    d, dt, keep = _difference_matrices(s)
    dy = d @ lam  # (s-1, s) difference quotients along y
    dx = lam @ dt  # (s, s-1) along x
    if kind == "difference":
        return (dy * dy).sum() + (dx * dx).sum()
    # isotropic total variation on the (s-1, s-1) cell corners
    dyc = dy @ keep
    dxc = keep.T @ dx
    return ad.sqrt(dyc * dyc + dxc * dxc + _TV_EPS**2).sum()


def total_variation(values: np.ndarray) -> float:
    """Smoothed isotropic total variation of a plain array (for diagnostics)."""
    s = values.shape[0]
    h = 1.0 / (s - 1)
    dy = (values[1:, :] - values[:-1, :]) / h
    dx = (values[:, 1:] - values[:, :-1]) / h
    return float(np.sqrt(dy[:, :-1] ** 2 + dx[:-1, :] ** 2 + _TV_EPS**2).sum())


def _constant_field(s: int, value: float) -> GridField:
    return GridField(np.full((s, s), float(value)))


def _initial_latent(model: PcannModel, u_delta: GridField, cfg: TikhonovConfig) -> np.ndarray:
    d = model.input_basis.d
    if cfg.init == "zeros":
        return np.zeros(d)
    if cfg.init == "encoded":
        return pcann.encode(model.input_basis, u_delta) / model.in_scale
    value = cfg.init_value
    if np.isscalar(value):
        return pcann.encode(model.input_basis, _constant_field(model.input_basis.s, value)) / model.in_scale
    value = np.asarray(value, dtype=np.float64)
    if value.ndim == 2:
        return pcann.encode(model.input_basis, GridField(value)) / model.in_scale
    if value.shape != (d,):
        raise ValueError(f"custom latent init must have shape ({d},)")
    return value.copy()


def _initial_field(s: int, u_delta: GridField, cfg: TikhonovConfig) -> np.ndarray:
    if cfg.init == "zeros":
        return np.zeros((s, s))
    if cfg.init == "encoded":
        return u_delta.values.copy()
    value = cfg.init_value
    if np.isscalar(value):
        return np.full((s, s), float(value))
    value = np.asarray(value, dtype=np.float64)
    if value.shape != (s, s):
        raise ValueError(f"custom field init must have shape ({s}, {s})")
    return value.copy()


def _make_objective(forward, u_delta: GridField, cfg: TikhonovConfig):
    """Return (x0, objective) with objective(x, grad) -> (value, grad, lam_hat)."""
    if isinstance(forward, PcannModel):
        target = pcann.encode(forward.output_basis, u_delta)
        comp = Tensor(forward.input_basis.components)
        mean = Tensor(forward.input_basis.mean)
        in_scale = Tensor(forward.in_scale[None, :])
        out_scale = Tensor(forward.out_scale[None, :])
        s = forward.input_basis.s

        def objective(x: np.ndarray, need_grad: bool):
            c = Tensor(x[None, :], requires_grad=need_grad)
            out = forward.net(c) * out_scale
            diff = out - Tensor(target[None, :])
            value = (diff * diff).sum()
            lam = ((c * in_scale) @ comp + mean).reshape(s, s)
            if cfg.alpha1 != 0.0:
                value = value + cfg.alpha1 * (lam * lam).sum()
            if cfg.alpha2 != 0.0:
                value = value + cfg.alpha2 * penalty_value(lam, cfg.penalty)
            grad = None
            if need_grad:
                value.backward()
                grad = c.grad[0]
            return float(value.data), grad, lam.data

        return _initial_latent(forward, u_delta, cfg), objective

    if isinstance(forward, (FnoModel, DeepONetModel, IdentityOperator)):
        s = u_delta.s
        target = u_delta.values

        if isinstance(forward, DeepONetModel):
            if forward.sensor_s != s:
                raise ValueError("field-space inversion requires the sensor grid resolution")
            nodes = grid_points(s)

        def objective(x: np.ndarray, need_grad: bool):
            lam = Tensor(x, requires_grad=need_grad)
            if isinstance(forward, IdentityOperator):
                pred = lam
            elif isinstance(forward, FnoModel):
                pred = fno_forward(forward, lam.reshape(1, s, s)).reshape(s, s)
            else:
                b = forward.branch(lam.reshape(1, s * s))
                t = forward.trunk(nodes)
                pred = (b @ t.T + forward.bias).reshape(s, s)
            diff = pred - Tensor(target)
            value = (diff * diff).sum()
            if cfg.alpha1 != 0.0:
                value = value + cfg.alpha1 * (lam * lam).sum()
            if cfg.alpha2 != 0.0:
                value = value + cfg.alpha2 * penalty_value(lam, cfg.penalty)
            grad = None
            if need_grad:
                value.backward()
                grad = lam.grad
            return float(value.data), grad, lam.data

        return _initial_field(s, u_delta, cfg), objective

    raise TypeError(f"unsupported forward model {type(forward).__name__}")


def tikhonov_invert(forward, u_delta: GridField, cfg: TikhonovConfig) -> GridField:
    """Minimise the regularised data misfit with frozen model weights."""
    x, objective = _make_objective(forward, u_delta, cfg)
    every, factor = cfg.lr_decay
    lr = cfg.lr
    value, grad, lam = objective(x, True)
    if not np.isfinite(value):
        raise DivergenceError("objective not finite at the initial point", step=0)
    for step in range(cfg.steps):
        if every > 0 and step > 0 and step % every == 0:
            lr *= factor
        candidate = x - lr * grad
        new_value, _, _ = objective(candidate, False)
        halvings = 0
        while (not np.isfinite(new_value) or new_value > value) and halvings < 40:
            lr *= 0.5
            halvings += 1
            candidate = x - lr * grad
            new_value, _, _ = objective(candidate, False)
        if halvings:
            log.debug("step %d: objective increase, learning rate halved %d time(s) to %.3e", step, halvings, lr)
        if not np.isfinite(new_value):
            raise DivergenceError(f"objective not finite after step {step}", step=step)
        if new_value > value:
            break  # no descent direction left at the smallest rate
        x = candidate
        value, grad, lam = objective(x, True)
    s = int(round(lam.shape[0]))
    return GridField(lam.reshape(s, s))


def with_noise(data: SampleSet, delta: NoiseLevel | float) -> SampleSet:
    """The same dataset with the measurement-noise level replaced."""
    d = delta.delta if isinstance(delta, NoiseLevel) else float(delta)
    if d == data.delta:
        return data
    if d == 0.0:
        noisy = data.solutions_clean
    else:
        noisy = np.empty_like(data.solutions_clean)
        for i in range(data.n):
            noisy[i] = datagen.add_noise(
                GridField(data.solutions_clean[i]), d, datagen.sample_seed(data.seed, 1, i)
            ).values
    return SampleSet(
        problem=data.problem, tag=data.tag, s=data.s, delta=d, seed=data.seed,
        lambdas=data.lambdas, solutions_clean=data.solutions_clean, solutions=noisy,
    )


def train_backward(method: str, data: SampleSet, noise: NoiseLevel | float, cfg: OptimConfig, **kwargs):
    """Train the chosen architecture on (u_noisy -> lambda) pairs."""
    noisy = with_noise(data, noise)
    pairs = (noisy.solutions, noisy.lambdas)
    method = method.lower()
    if method in ("pcann", "pcalin"):
        return train_operator(method, pairs, kwargs.get("d_x", 150), kwargs.get("d_y", 150), cfg)
    if method == "fno":
        return train_fno(
            pairs, kwargs.get("modes", 12), kwargs.get("width", 32), cfg,
            n_layers=kwargs.get("n_layers", 4),
        )
    if method == "deeponet":
        return train_deeponet(
            pairs, kwargs.get("p", 64), cfg,
            trunk_widths=kwargs.get("trunk_widths", (128,) * 6),
            trunk_activation=kwargs.get("trunk_activation", "tanh"),
        )
    raise ValueError(f"unknown method {method!r}")


def inverse_metrics(
    lambda_hat: GridField,
    lambda_true: GridField,
    u_true: GridField,
    u_delta: GridField,
    problem: Problem,
) -> MetricRecord:
    """lambda error, segmentation accuracy (two-level problems), and the
    forward errors of the re-solved reconstruction."""
    lam_err = rel_l2(lambda_hat, lambda_true)
    flags: list[str] = []
    seg = None
    if problem is Problem.DARCY:
        seg = seg_accuracy(lambda_hat, lambda_true, DARCY_LEVELS)
        values = lambda_hat.values
        if np.any(values < DARCY_CLAMP):
            flags.append("clamped")
            values = np.maximum(values, DARCY_CLAMP)
        u_hat = fdm.solve_darcy(GridField(values))
    else:
        u_hat = fdm.solve_poisson(lambda_hat)
    return MetricRecord(
        rel_l2_error=lam_err,
        seg_accuracy_percent=seg,
        u_err=rel_l2(u_hat, u_true),
        u_tilde_err=rel_l2(u_hat, u_delta),
        flags=tuple(flags),
    )

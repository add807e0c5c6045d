"""Random-field sampling, push-forward maps, measurement noise, datasets.

Parameter fields are drawn from the Gaussian measure N(0, (-Lap + 9 I)^-2)
with zero-Neumann boundary conditions via a Karhunen-Loeve expansion in the
cosine eigenbasis on (0,1)^2, then optionally pushed forward pointwise
(exponential, or the two-level map 12 / 3).  Solutions come from the
finite-difference solvers; measurement noise is i.i.d. Gaussian per node,
scaled by the root-mean-square of the clean solution.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import fdm
from .fields import DATASET_RESOLUTIONS, GridField, ResolutionError

LEVEL_LOW = 3.0
LEVEL_HIGH = 12.0

_GRF_STREAM = 0
_NOISE_STREAM = 1


class MeasureTag(enum.Enum):
    GAUSSIAN = "gaussian"
    LOG_NORMAL = "log_normal"
    PIECEWISE_CONSTANT = "piecewise_constant"


class Problem(enum.Enum):
    POISSON = "poisson"
    DARCY = "darcy"


_PROBLEM_TAG = {Problem.POISSON: MeasureTag.GAUSSIAN, Problem.DARCY: MeasureTag.PIECEWISE_CONSTANT}


@dataclass(frozen=True)
class NoiseLevel:
    """Relative noise fraction, e.g. 0.05 for 5% noise."""

    delta: float

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")


def sample_seed(master_seed: int, stream: int, index: int) -> np.random.SeedSequence:
    """Deterministic per-sample seed; independent of generation order."""
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(stream, index))


def grf_mode_std(k1: int, k2: int) -> float:
    """Standard deviation of the KL coefficient of mode (k1, k2)."""
    return 1.0 / (math.pi**2 * (k1**2 + k2**2) + 9.0)


def sample_grf(s: int, seed) -> GridField:
    """One draw from N(0, (-Lap + 9 I)^-2) on the s x s grid.

    Uses all grid-resolvable cosine modes (truncation K = s-1); deterministic
    given (s, seed).
    """
    if s < 3:
        raise ResolutionError(f"resolution must be >= 3, got {s}")
    rng = np.random.default_rng(seed)
    k = np.arange(s, dtype=np.float64)  # modes 0 .. s-1
    x = np.linspace(0.0, 1.0, s)
    phi = math.sqrt(2.0) * np.cos(math.pi * np.outer(k, x))
    phi[0, :] = 1.0
    weights = 1.0 / (math.pi**2 * (k[:, None] ** 2 + k[None, :] ** 2) + 9.0)  # [k_y, k_x]
    xi = rng.standard_normal((s, s))
    values = phi.T @ (xi * weights) @ phi
    return GridField(values)


def push_forward(field: GridField, tag: MeasureTag) -> GridField:
    """Apply the measure's pointwise transform to a Gaussian draw."""
    if tag is MeasureTag.GAUSSIAN:
        return field
    if tag is MeasureTag.LOG_NORMAL:
        return GridField(np.exp(field.values))
    return GridField(np.where(field.values >= 0.0, LEVEL_HIGH, LEVEL_LOW))


def add_noise(u: GridField, delta: NoiseLevel | float, seed) -> GridField:
    """u + delta * rms(u) * xi with xi i.i.d. standard normal per node.

    rms(u) = ||u||_2 / s, so the expected relative L2 perturbation equals
    delta independent of the resolution.  delta = 0 returns u unchanged.
    """
    d = delta.delta if isinstance(delta, NoiseLevel) else float(delta)
    if d == 0.0:
        return u
    rng = np.random.default_rng(seed)
    rms = np.linalg.norm(u.values.ravel()) / u.s
    return GridField(u.values + d * rms * rng.standard_normal((u.s, u.s)))


@dataclass(frozen=True)
class SampleSet:
    """Ordered (lambda_i, u_i) pairs plus generation metadata.

    ``solutions`` carries the measurement-noise view used for training;
    ``solutions_clean`` the noise-free FDM solutions.  The two are the same
    array when delta = 0.
    """

    problem: Problem
    tag: MeasureTag
    s: int
    delta: float
    seed: int
    lambdas: np.ndarray  # (n, s, s)
    solutions_clean: np.ndarray  # (n, s, s)
    solutions: np.ndarray  # (n, s, s)

    @property
    def n(self) -> int:
        return self.lambdas.shape[0]

    def lam(self, i: int) -> GridField:
        return GridField(self.lambdas[i])

    def u_clean(self, i: int) -> GridField:
        return GridField(self.solutions_clean[i])

    def u(self, i: int) -> GridField:
        return GridField(self.solutions[i])


def _solve(problem: Problem, lam: GridField, index: int) -> GridField:
    try:
        if problem is Problem.POISSON:
            return fdm.solve_poisson(lam)
        return fdm.solve_darcy(lam)
    except fdm.ConvergenceError as err:
        raise fdm.ConvergenceError(f"sample {index}: {err}", err.residual, sample_index=index) from err


def build_dataset(
    problem: Problem,
    n: int,
    s: int,
    tag: MeasureTag | None = None,
    delta: NoiseLevel | float = 0.0,
    seed: int = 0,
) -> SampleSet:
    """Generate n (lambda, u) pairs with deterministic per-sample seeding."""
    if s not in DATASET_RESOLUTIONS:
        raise ResolutionError(f"dataset resolution must be one of {DATASET_RESOLUTIONS}, got {s}")
    if tag is None:
        tag = _PROBLEM_TAG[problem]
    elif tag is not _PROBLEM_TAG[problem]:
        raise ValueError(f"{problem.value} datasets use the {_PROBLEM_TAG[problem].value} measure, got {tag.value}")
    d = delta.delta if isinstance(delta, NoiseLevel) else float(delta)

    lambdas = np.empty((n, s, s))
    clean = np.empty((n, s, s))
    for i in range(n):
        lam = push_forward(sample_grf(s, sample_seed(seed, _GRF_STREAM, i)), tag)
        lambdas[i] = lam.values
        clean[i] = _solve(problem, lam, i).values
    if d > 0.0:
        noisy = np.empty((n, s, s))
        for i in range(n):
            noisy[i] = add_noise(GridField(clean[i]), d, sample_seed(seed, _NOISE_STREAM, i)).values
    else:
        noisy = clean
    return SampleSet(
        problem=problem, tag=tag, s=s, delta=d, seed=seed,
        lambdas=lambdas, solutions_clean=clean, solutions=noisy,
    )

"""Grid functions on the unit square and the error metrics built on them.

Fields are sampled on a uniform s x s grid over [0,1]^2 with nodes
x_j = j/(s-1), y_i = i/(s-1).  Values are stored row-major with y as the
slow axis, i.e. ``values[i, j]`` is the sample at (x_j, y_i).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DATASET_RESOLUTIONS = (65, 129, 257, 513)


class ResolutionError(ValueError):
    """Grid resolution is invalid or incompatible with the operation."""


class ShapeError(ValueError):
    """Two fields (or a field and an operand) have mismatched shapes."""


class GroundTruthError(ValueError):
    """A reference field violates the assumptions of a metric."""


@dataclass(frozen=True)
class GridField:
    """Immutable scalar field sampled on an s x s grid over the unit square."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ShapeError(f"expected a square value array, got shape {arr.shape}")
        if arr.shape[0] < 3:
            raise ResolutionError(f"resolution must be >= 3, got {arr.shape[0]}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("field values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def s(self) -> int:
        return self.values.shape[0]

    def nodes(self) -> np.ndarray:
        """1-d node coordinates j/(s-1), shared by both axes."""
        return np.linspace(0.0, 1.0, self.s)


@dataclass(frozen=True)
class MetricRecord:
    """Error metrics for one reconstruction: relative L2 plus optional extras."""

    rel_l2_error: float
    seg_accuracy_percent: float | None = None
    u_err: float | None = None
    u_tilde_err: float | None = None
    flags: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not np.isfinite(self.rel_l2_error) or self.rel_l2_error < 0:
            raise ValueError(f"rel_l2_error must be finite and >= 0, got {self.rel_l2_error}")
        if self.seg_accuracy_percent is not None and not (0.0 <= self.seg_accuracy_percent <= 100.0):
            raise ValueError("seg_accuracy_percent must lie in [0, 100]")


def restrict(field: GridField, target_s: int) -> GridField:
    """Subsample a field onto a coarser nested grid.

    Requires (s-1) divisible by (target_s-1); picks every stride-th node in
    each axis so corner values are preserved exactly.
    """
    s = field.s
    if target_s < 3:
        raise ResolutionError(f"target resolution must be >= 3, got {target_s}")
    if (s - 1) % (target_s - 1) != 0:
        raise ResolutionError(f"cannot restrict {s} -> {target_s}: (s-1) not divisible by (target_s-1)")
    stride = (s - 1) // (target_s - 1)
    return GridField(field.values[::stride, ::stride])


def rel_l2(a: GridField | np.ndarray, b: GridField | np.ndarray) -> float:
    """Relative L2 error ||a - b|| / ||b|| over all grid nodes (unweighted)."""
    av = a.values if isinstance(a, GridField) else np.asarray(a, dtype=np.float64)
    bv = b.values if isinstance(b, GridField) else np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape:
        raise ShapeError(f"shape mismatch: {av.shape} vs {bv.shape}")
    denom = np.linalg.norm(bv.ravel())
    if denom == 0.0:
        raise ZeroDivisionError("reference field has zero norm")
    return float(np.linalg.norm((av - bv).ravel()) / denom)


def seg_accuracy(lambda_hat: GridField, lambda_true: GridField, levels: tuple[float, float]) -> float:
    """Two-level segmentation accuracy in percent.

    Each node of ``lambda_hat`` is snapped to the nearer of the two levels
    (ties go to the high level); returns 100 * fraction of nodes where the
    snapped value matches ``lambda_true``.
    """
    if lambda_hat.s != lambda_true.s:
        raise ShapeError(f"resolution mismatch: {lambda_hat.s} vs {lambda_true.s}")
    low, high = sorted(levels)
    truth = lambda_true.values
    if not np.all((truth == low) | (truth == high)):
        raise GroundTruthError(f"ground truth contains values outside {{{low}, {high}}}")
    midpoint = 0.5 * (low + high)
    snapped = np.where(lambda_hat.values >= midpoint, high, low)
    return float(100.0 * np.mean(snapped == truth))

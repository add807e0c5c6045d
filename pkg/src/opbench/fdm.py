"""Finite-difference reference solvers on the unit square.

Both problems use homogeneous Dirichlet data and the standard 5-point
stencil; boundary nodes are eliminated from the unknowns (system dimension
(s-2)^2) and reinserted as zeros.  The source solver takes the field as the
right-hand side of -Lap(u) = f; the diffusion solver discretises
-div(lam grad u) = 1 conservatively with harmonic-mean face coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import GridField

RESIDUAL_TOL = 1e-10
DIRECT_SOLVE_MAX_S = 129


class ConvergenceError(RuntimeError):
    """Linear solve stagnated before reaching the residual tolerance."""

    def __init__(self, message: str, residual: float, sample_index: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.sample_index = sample_index


@dataclass(frozen=True)
class SparseSystem:
    """Assembled SPD linear system A u = b over the interior nodes."""

    matrix: sp.csr_matrix
    rhs: np.ndarray

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def entries(self):
        """(row, col, value) triplets of the nonzero entries."""
        coo = self.matrix.tocoo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))


def _poisson_matrix(s: int) -> sp.csr_matrix:
    n = s - 2
    h = 1.0 / (s - 1)
    t = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n))
    eye = sp.identity(n)
    return ((sp.kron(eye, t) + sp.kron(t, eye)) / h**2).tocsr()


@lru_cache(maxsize=8)
def _poisson_solver(s: int):
    """Factorisation (or matrix for iterative fallback) reused across solves."""
    a = _poisson_matrix(s)
    if s <= DIRECT_SOLVE_MAX_S:
        return a, spla.splu(a.tocsc())
    return a, None


def _solve_spd(a: sp.csr_matrix, b: np.ndarray, lu, s: int) -> np.ndarray:
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    if lu is not None:
        x = lu.solve(b)
    else:
        precond = spla.LinearOperator(a.shape, matvec=lambda v: v / a.diagonal())
        x, _ = spla.cg(a, b, rtol=RESIDUAL_TOL / 10, atol=0.0, maxiter=20 * s, M=precond)
    residual = np.linalg.norm(a @ x - b) / bnorm
    if residual > RESIDUAL_TOL:
        raise ConvergenceError(f"linear solve stalled at relative residual {residual:.3e}", residual)
    return x


def _embed(interior: np.ndarray, s: int) -> GridField:
    full = np.zeros((s, s))
    full[1:-1, 1:-1] = interior.reshape(s - 2, s - 2)
    return GridField(full)


def solve_poisson(lam: GridField) -> GridField:
    """Solve -Lap(u) = lam with u = 0 on the boundary, on lam's grid."""
    s = lam.s
    a, lu = _poisson_solver(s)
    b = lam.values[1:-1, 1:-1].ravel()
    return _embed(_solve_spd(a, b, lu, s), s)


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def darcy_system(lam: GridField, forcing: float = 1.0) -> SparseSystem:
    """Assemble the conservative 5-point system for -div(lam grad u) = forcing."""
    if np.any(lam.values <= 0.0):
        raise ValueError("diffusion coefficient must be strictly positive everywhere")
    s = lam.s
    n = s - 2
    h = 1.0 / (s - 1)
    v = lam.values
    c = v[1:-1, 1:-1]
    east = _harmonic(c, v[1:-1, 2:])
    west = _harmonic(c, v[1:-1, :-2])
    north = _harmonic(c, v[2:, 1:-1])
    south = _harmonic(c, v[:-2, 1:-1])

    diag = (east + west + north + south).ravel() / h**2
    off_e = (-east / h**2).copy()
    off_e[:, -1] = 0.0  # east neighbour is a boundary node
    off_n = (-north / h**2).copy()
    off_n[-1, :] = 0.0

    nn = n * n
    a = sp.diags(
        [diag, off_e.ravel()[:-1], off_e.ravel()[:-1], off_n.ravel()[:-n], off_n.ravel()[:-n]],
        [0, 1, -1, n, -n],
        shape=(nn, nn),
        format="csr",
    )
    b = np.full(nn, float(forcing))
    return SparseSystem(matrix=a, rhs=b)


def solve_darcy(lam: GridField) -> GridField:
    """Solve -div(lam grad u) = 1 with u = 0 on the boundary, on lam's grid."""
    s = lam.s
    system = darcy_system(lam)
    if s <= DIRECT_SOLVE_MAX_S:
        lu = spla.splu(system.matrix.tocsc())
    else:
        lu = None
    return _embed(_solve_spd(system.matrix, system.rhs, lu, s), s)


def apply_poisson_operator(u: GridField) -> GridField:
    """Discrete -Lap(u) at interior nodes; boundary nodes of the output are 0."""
    s = u.s
    h = 1.0 / (s - 1)
    v = u.values
    out = np.zeros((s, s))
    out[1:-1, 1:-1] = (4.0 * v[1:-1, 1:-1] - v[1:-1, 2:] - v[1:-1, :-2] - v[2:, 1:-1] - v[:-2, 1:-1]) / h**2
    return GridField(out)


def darcy_face_fluxes(lam: GridField, u: GridField):
    """Single-valued normal fluxes on vertical and horizontal interior faces.

    Returns (fx, fy): fx[i, j] is the flux through the face between nodes
    (i, j) and (i, j+1); fy through the face between (i, j) and (i+1, j).
    The two one-sided fluxes reconstructed from the interface value agree
    by construction of the harmonic mean; this helper exposes them so the
    match can be asserted on computed solutions.
    """
    h = 1.0 / (lam.s - 1)
    lv, uv = lam.values, u.values
    lam_e = _harmonic(lv[:, :-1], lv[:, 1:])
    lam_n = _harmonic(lv[:-1, :], lv[1:, :])
    fx = -lam_e * (uv[:, 1:] - uv[:, :-1]) / h
    fy = -lam_n * (uv[1:, :] - uv[:-1, :]) / h
    return fx, fy

"""Discrete conservation of mass, momentum and energy by Euclidean
projection onto the null space of the moment matrix C."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from specboltz.grid import VelocityGrid


def constraint_matrix(grid: VelocityGrid) -> np.ndarray:
    """Rows (w, v_x w, v_y w, v_z w, |v|^2 w) in lexicographic node order."""
    w = grid.quad_weights.ravel()
    v = grid.velocities
    return np.vstack([w, v[:, 0] * w, v[:, 1] * w, v[:, 2] * w,
                      np.einsum("ij,ij->i", v, v) * w])


@dataclass(frozen=True)
class ConservationProjector:
    C: np.ndarray
    gram: np.ndarray
    _factor: tuple

    @property
    def M(self) -> int:
        return self.C.shape[1]

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.gram))

    def project(self, q):
        return project(self, q)


def build_projector(grid: VelocityGrid, C: np.ndarray | None = None) -> ConservationProjector:
    """Assemble C (or accept custom constraint rows) and Cholesky-factor C C^T."""
    C = constraint_matrix(grid) if C is None else np.asarray(C, dtype=float)
    gram = C @ C.T
    try:
        factor = cho_factor(gram, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("constraint Gram matrix is not positive definite") from exc
    return ConservationProjector(C, gram, factor)


def project(proj: ConservationProjector, q) -> np.ndarray:
    """Closest vector to ``q`` (2-norm) with ``C q = 0``: q - C^T (C C^T)^{-1} C q.

    Accepts any array with M entries and returns the same shape.
    """
    q = np.asarray(q, dtype=float)
    flat = q.reshape(-1)
    if flat.size != proj.M:
        raise ValueError(f"expected {proj.M} values, got {flat.size}")
    if not np.all(np.isfinite(flat)):
        raise ValueError("cannot project non-finite values")
    gamma = cho_solve(proj._factor, proj.C @ flat)
    return (flat - proj.C.T @ gamma).reshape(q.shape)

"""Uniform velocity and Fourier meshes on the truncated cube [-L, L)^3.

Ordering convention (used by the weight cache and state dumps): nodes are
stored in C (row-major) order over the multi-index ``(i, j, k)``, so the
linear index is ``(i * N + j) * N + k`` with ``i`` the x axis.  Velocity
node ``i`` sits at ``-L + i * dv``; frequency node ``i`` carries the integer
wavenumber ``i - N/2`` and sits at ``(i - N/2) * dzeta``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

DIM = 3


@dataclass(frozen=True)
class VelocityGrid:
    N: int
    L: float

    @property
    def d(self) -> int:
        return DIM

    @property
    def M(self) -> int:
        return self.N**DIM

    @property
    def dv(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def dzeta(self) -> float:
        return np.pi / self.L

    @cached_property
    def v(self) -> np.ndarray:
        """1-D velocity nodes, identical on every axis."""
        return -self.L + self.dv * np.arange(self.N)

    @cached_property
    def k(self) -> np.ndarray:
        """1-D integer wavenumbers ``-N/2 .. N/2-1``."""
        return np.arange(self.N) - self.N // 2

    @cached_property
    def zeta(self) -> np.ndarray:
        return self.k * self.dzeta

    @cached_property
    def weights_1d(self) -> np.ndarray:
        w = np.full(self.N, self.dv)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    @cached_property
    def quad_weights(self) -> np.ndarray:
        """Tensor-product trapezoid weights, shape ``(N, N, N)``."""
        w = self.weights_1d
        return w[:, None, None] * w[None, :, None] * w[None, None, :]

    @cached_property
    def velocities(self) -> np.ndarray:
        """All nodes as an ``(M, 3)`` array in lexicographic order."""
        vx, vy, vz = np.meshgrid(self.v, self.v, self.v, indexing="ij")
        return np.stack([vx.ravel(), vy.ravel(), vz.ravel()], axis=1)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Integer wavenumber triples, ``(M, 3)``, lexicographic order."""
        kx, ky, kz = np.meshgrid(self.k, self.k, self.k, indexing="ij")
        return np.stack([kx.ravel(), ky.ravel(), kz.ravel()], axis=1)

    @property
    def frequencies(self) -> np.ndarray:
        return self.wavenumbers * self.dzeta

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.N,) * DIM

    # index maps

    def multi_index(self, index: int) -> tuple[int, int, int]:
        if not 0 <= index < self.M:
            raise IndexError(f"linear index {index} outside [0, {self.M})")
        return tuple(int(i) for i in np.unravel_index(index, self.shape))

    def linear_index(self, multi: tuple[int, int, int]) -> int:
        if any(not 0 <= m < self.N for m in multi):
            raise IndexError(f"multi-index {multi} outside [0, {self.N})^3")
        return int(np.ravel_multi_index(tuple(multi), self.shape))

    def wavenumber_of_index(self, index: int) -> tuple[int, int, int]:
        return tuple(m - self.N // 2 for m in self.multi_index(index))

    def frequency_of_index(self, index: int) -> np.ndarray:
        return np.array(self.wavenumber_of_index(index), dtype=float) * self.dzeta

    def index_of_wavenumber(self, k: tuple[int, int, int]) -> int:
        return self.linear_index(tuple(int(ki) + self.N // 2 for ki in k))

    def index_of_frequency(self, zeta) -> int:
        k = np.rint(np.asarray(zeta, dtype=float) / self.dzeta).astype(int)
        return self.index_of_wavenumber(tuple(k))


def build_grid(N: int, L: float) -> VelocityGrid:
    if int(N) != N or N < 4 or N % 2:
        raise ValueError(f"N must be an even integer >= 4, got {N}")
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    return VelocityGrid(int(N), float(L))


def trapezoid_weights(grid: VelocityGrid) -> np.ndarray:
    return grid.quad_weights

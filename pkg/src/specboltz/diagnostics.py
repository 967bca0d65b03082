"""Moments, entropy, equilibria, initial conditions and slice output.

All integrals are the grid's trapezoid sums, the same quadrature that the
conservation constraints use, so the moments reported here are exactly the
quantities the projection keeps fixed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from specboltz.grid import VelocityGrid


@dataclass(frozen=True)
class MomentSet:
    mass: float
    momentum: np.ndarray
    energy: float
    temperature: float
    min_f: float
    entropy: float
    skipped_fraction: float = 0.0
    degenerate: bool = False

    @property
    def velocity(self) -> np.ndarray:
        if self.mass == 0:
            return np.full(3, np.nan)
        return self.momentum / self.mass

    def as_row(self, t: float) -> list[float]:
        """Values in ``moments.csv`` column order."""
        V = self.velocity
        return [t, self.mass, V[0], V[1], V[2], self.energy, self.temperature,
                self.entropy, self.min_f]


MOMENT_COLUMNS = ("t", "rho", "Vx", "Vy", "Vz", "energy", "T", "H", "min_f")


def entropy(f_values, grid: VelocityGrid) -> tuple[float, float]:
    """``sum w f log f`` over nodes with f > 0.

    Returns ``(H, skipped)`` where ``skipped`` is the share of ``sum w |f|``
    carried by the excluded nodes (f <= 0).
    """
    f = np.asarray(f_values, dtype=float).reshape(-1)
    w = grid.quad_weights.ravel()
    pos = f > 0
    H = float(np.sum(w[pos] * f[pos] * np.log(f[pos])))
    total = np.sum(w * np.abs(f))
    skipped = float(np.sum(w[~pos] * np.abs(f[~pos])) / total) if total > 0 else 0.0
    return H, skipped


def moments(f_values, grid: VelocityGrid) -> MomentSet:
    f = np.asarray(f_values, dtype=float).reshape(-1)
    if f.size != grid.M:
        raise ValueError(f"expected {grid.M} values, got {f.size}")
    w = grid.quad_weights.ravel()
    v = grid.velocities
    wf = w * f
    rho = float(wf.sum())
    mom = v.T @ wf
    v2 = np.einsum("ij,ij->i", v, v)
    energy = float(v2 @ wf)
    H, skipped = entropy(f, grid)
    if rho == 0:
        T, degenerate = np.nan, True
    else:
        V = mom / rho
        c2 = np.einsum("ij,ij->i", v - V, v - V)
        T = float(c2 @ wf) / (3.0 * rho)
        degenerate = False
    return MomentSet(mass=rho, momentum=mom, energy=energy, temperature=T,
                     min_f=float(f.min()), entropy=H, skipped_fraction=skipped,
                     degenerate=degenerate)


def maxwellian(rho: float, V, T: float, grid: VelocityGrid) -> np.ndarray:
    """rho (2 pi T)^(-3/2) exp(-|v - V|^2 / (2T)) on the nodes, shape (N, N, N)."""
    if not rho > 0:
        raise ValueError(f"density must be positive, got {rho}")
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    V = np.broadcast_to(np.asarray(V, dtype=float), (3,))
    c = grid.velocities - V
    vals = rho * (2.0 * np.pi * T) ** -1.5 * np.exp(-np.einsum("ij,ij->i", c, c) / (2.0 * T))
    return vals.reshape(grid.shape)


def moment_matched_maxwellian(f_values, grid: VelocityGrid) -> np.ndarray:
    m = moments(f_values, grid)
    if m.degenerate or not m.temperature > 0 or not m.mass > 0:
        raise ValueError("state has no admissible moments")
    return maxwellian(m.mass, m.velocity, m.temperature, grid)


def equilibrium_distance(f_values, grid: VelocityGrid) -> float:
    """Weighted l2 distance ``(sum w (f - M_f)^2)^(1/2)`` to the Maxwellian
    sharing f's density, bulk velocity and temperature."""
    f = np.asarray(f_values, dtype=float).reshape(grid.shape)
    d = f - moment_matched_maxwellian(f, grid)
    return float(np.sqrt(np.sum(grid.quad_weights * d * d)))


# ---------------------------------------------------------------------------
# initial conditions


def shell_ic(grid: VelocityGrid) -> np.ndarray:
    """Axially symmetric shell 0.01 exp(-10 ((|v| - 1.5)/1.5)^2)."""
    r = np.linalg.norm(grid.velocities, axis=1)
    return (0.01 * np.exp(-10.0 * ((r - 1.5) / 1.5) ** 2)).reshape(grid.shape)


def two_maxwellian_ic(grid: VelocityGrid, shift: float = 1.0, T: float = 0.5) -> np.ndarray:
    """Sum of two unit-half-mass Maxwellians displaced by +-shift along x."""
    a = maxwellian(0.5, (shift, 0.0, 0.0), T, grid)
    b = maxwellian(0.5, (-shift, 0.0, 0.0), T, grid)
    return a + b


def bimaxwellian_ic(grid: VelocityGrid, Tx: float = 1.5, Tperp: float = 0.9) -> np.ndarray:
    """Unit-mass Gaussian with temperature Tx along x and Tperp across."""
    v = grid.velocities
    q = v[:, 0] ** 2 / Tx + (v[:, 1] ** 2 + v[:, 2] ** 2) / Tperp
    vals = (2.0 * np.pi) ** -1.5 / np.sqrt(Tx * Tperp * Tperp) * np.exp(-0.5 * q)
    return vals.reshape(grid.shape)


INITIAL_CONDITIONS = {
    "shell": shell_ic,
    "maxwellian": lambda grid: maxwellian(1.0, 0.0, 1.0, grid),
    "two_maxwellian": two_maxwellian_ic,
    "bimaxwellian": bimaxwellian_ic,
}


def initial_condition(name: str, grid: VelocityGrid) -> np.ndarray:
    try:
        return INITIAL_CONDITIONS[name](grid)
    except KeyError:
        raise ValueError(f"unknown initial condition {name!r}; "
                         f"choose from {sorted(INITIAL_CONDITIONS)}") from None


# ---------------------------------------------------------------------------
# slices and CSV


def slice_profile(f_values, grid: VelocityGrid, axis: int = 0, fixed=None) -> list[tuple[float, float]]:
    """Rows ``(v, f)`` along ``axis`` through the transverse node ``fixed``.

    ``fixed`` holds the two indices of the other axes in increasing axis
    order; it defaults to the center node ``N // 2`` (v = 0).
    """
    f = np.asarray(f_values, dtype=float).reshape(grid.shape)
    if axis not in (0, 1, 2):
        raise IndexError(f"axis must be 0, 1 or 2, got {axis}")
    fixed = (grid.N // 2, grid.N // 2) if fixed is None else tuple(int(i) for i in fixed)
    if len(fixed) != 2 or any(not 0 <= i < grid.N for i in fixed):
        raise IndexError(f"transverse indices {fixed} out of range for N={grid.N}")
    index = list(fixed)
    index.insert(axis, slice(None))
    line = f[tuple(index)]
    return [(float(v), float(x)) for v, x in zip(grid.v, line)]


def format_value(x) -> str:
    """Shortest repr that round-trips a float64."""
    return repr(float(x))


def write_csv(path_or_buffer, header, rows) -> None:
    def emit(fh):
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([format_value(x) for x in row])

    if isinstance(path_or_buffer, io.TextIOBase):
        emit(path_or_buffer)
    else:
        with open(path_or_buffer, "w", newline="") as fh:
            emit(fh)

"""Collision kernels B(|u|, cos th) = |u|^lambda b(cos th) and the elastic
collision rule.

Angular sections are always handled through the product ``b(cos th) sin th``
(the quantity every theta integral actually needs), which keeps the
Rutherford family finite and avoids 0/0 at the poles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Union

import numpy as np
from scipy.interpolate import PchipInterpolator

from specboltz._quad import adaptive_quad, geometric_breaks

COULOMB = -3.0


@dataclass(frozen=True)
class IsotropicConstant:
    value: float

    tag = 0

    @property
    def param(self) -> float:
        return float(self.value)

    def density(self, theta):
        return self.value * np.sin(theta)


@dataclass(frozen=True)
class GrazingRutherford:
    """b_eps(cos th) sin th = 8 eps / (pi th^4) for th >= eps, else 0."""

    eps: float

    tag = 1

    def __post_init__(self):
        if not 0 < self.eps < np.pi:
            raise ValueError(f"grazing eps must lie in (0, pi), got {self.eps}")

    @property
    def param(self) -> float:
        return float(self.eps)

    def density(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.zeros_like(theta)
        on = theta >= self.eps
        out[on] = 8.0 * self.eps / (np.pi * theta[on] ** 4)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class Tabulated:
    """Tabulated ``b sin th`` on a theta grid, monotone-cubic interpolated.

    Outside the tabulated theta range the section is taken to be zero.
    """

    theta: tuple
    values: tuple

    tag = 2

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if th.ndim != 1 or th.shape != vals.shape or th.size < 2:
            raise ValueError("tabulated section needs matching 1-D theta/value arrays")
        if np.any(np.diff(th) <= 0):
            raise ValueError("tabulated theta must be strictly increasing")
        if th[0] < 0 or th[-1] > np.pi:
            raise ValueError("tabulated theta must lie in [0, pi]")
        if np.any(vals < 0):
            raise ValueError("tabulated b*sin(theta) must be non-negative")
        object.__setattr__(self, "theta", tuple(th.tolist()))
        object.__setattr__(self, "values", tuple(vals.tolist()))

    @property
    def param(self) -> float:
        return 0.0

    @cached_property
    def _interp(self):
        return PchipInterpolator(self.theta, self.values, extrapolate=False)

    def density(self, theta):
        out = np.nan_to_num(self._interp(theta), nan=0.0)
        return out if np.ndim(out) else float(out)


Angular = Union[IsotropicConstant, GrazingRutherford, Tabulated]


def load_tabulated(path) -> Tabulated:
    """Read a two-column (theta, b*sin theta) text file; '#' starts a comment."""
    data = np.loadtxt(Path(path), comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns, got {data.shape[1]}")
    return Tabulated(tuple(data[:, 0]), tuple(data[:, 1]))


@dataclass(frozen=True)
class KernelSpec:
    lam: float
    angular: Angular = field(default_factory=lambda: IsotropicConstant(1.0 / (4.0 * np.pi)))
    beta: float = 1.0

    def __post_init__(self):
        if not -3.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [-3, 1], got {self.lam}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")

    @property
    def is_coulomb(self) -> bool:
        return self.lam == COULOMB

    @property
    def is_grazing(self) -> bool:
        return isinstance(self.angular, GrazingRutherford)

    def theta_support(self) -> tuple[float, float]:
        """Interval outside which ``b sin th`` vanishes identically."""
        a = self.angular
        if isinstance(a, GrazingRutherford):
            return a.eps, np.pi
        if isinstance(a, Tabulated):
            return a.theta[0], a.theta[-1]
        return 0.0, np.pi

    def theta_breaks(self) -> list[float]:
        a = self.angular
        lo, hi = self.theta_support()
        if isinstance(a, GrazingRutherford):
            return geometric_breaks(lo, hi)
        if isinstance(a, Tabulated):
            return list(a.theta[1:-1])[:200]
        return []


def angular_density(spec: KernelSpec, theta):
    """Value of ``b(cos th) sin th``."""
    th = np.asarray(theta, dtype=float)
    if np.any((th < 0) | (th > np.pi)) or np.any(np.isnan(th)):
        raise ValueError("theta must lie in [0, pi]")
    return spec.angular.density(theta)


def grazing_moment(spec: KernelSpec, p: int = 1, rtol: float = 1e-8) -> float:
    """``2 pi int_0^pi b(cos th) (1 - cos th)^p sin th d th``."""
    if int(p) != p or p < 1:
        raise ValueError(f"p must be an integer >= 1, got {p}")
    lo, hi = spec.theta_support()

    def integrand(th):
        # 1 - cos th written without cancellation
        return spec.angular.density(th) * (2.0 * np.sin(0.5 * th) ** 2) ** p

    val, _ = adaptive_quad(integrand, lo, hi, rtol=rtol, points=spec.theta_breaks(),
                           what=f"grazing moment p={p}")
    return 2.0 * np.pi * val


def post_collision_velocities(v, v_star, sigma):
    """Elastic rule v' = v + (|u| sigma - u)/2, v*' = v* - (|u| sigma - u)/2.

    Broadcasts over leading axes; the last axis holds the 3 components.
    """
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(np.abs(np.linalg.norm(sigma, axis=-1) - 1.0) > 1e-12):
        raise ValueError("sigma must be a unit vector")
    u = v - v_star
    half = 0.5 * (np.linalg.norm(u, axis=-1, keepdims=True) * sigma - u)
    return v + half, v_star - half

"""Thin wrappers around QUADPACK with failure reporting, plus fixed
Gauss rules used by the vectorized weight builder."""

from __future__ import annotations

import warnings
from functools import lru_cache

import numpy as np
from scipy import integrate, special


class QuadratureError(RuntimeError):
    def __init__(self, message: str, estimate: float = np.nan, error: float = np.nan):
        super().__init__(f"{message} (estimate={estimate!r}, error={error!r})")
        self.estimate = estimate
        self.error = error


def adaptive_quad(func, a: float, b: float, rtol: float = 1e-8, atol: float = 0.0,
                  points=None, limit: int = 500, what: str = "integral"):
    """Adaptive Gauss-Kronrod quadrature; returns ``(value, abserr)``.

    Raises :class:`QuadratureError` when QUADPACK reports a problem and the
    error estimate misses ``max(atol, rtol*|value|)`` by more than 10x.
    """
    if points is not None:
        points = [p for p in points if a < p < b]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        out = integrate.quad(func, a, b, epsabs=atol, epsrel=rtol,
                             points=points or None, limit=limit, full_output=1)
    val, err = out[0], out[1]
    # QUADPACK appends a message only when ier > 0
    flagged = len(out) > 3
    if not np.isfinite(val):
        raise QuadratureError(f"non-finite {what}", val, err)
    if flagged and err > 10 * max(atol, rtol * abs(val)):
        raise QuadratureError(f"{what} did not converge", val, err)
    return val, err


def geometric_breaks(a: float, b: float, ratio: float = 4.0) -> list[float]:
    """Breakpoints a*ratio^k inside (a, b); used to resolve endpoint layers."""
    pts = []
    x = a * ratio
    while x < b:
        pts.append(x)
        x *= ratio
    return pts


@lru_cache(maxsize=64)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


@lru_cache(maxsize=64)
def gauss_jacobi(n: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights on [-1, 1] for the weight ``(1 + x)^alpha``."""
    x, w = special.roots_jacobi(n, 0.0, alpha)
    return x, w


def composite_gauss(edges, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule over consecutive panels ``edges``."""
    x0, w0 = gauss_legendre(n)
    edges = np.asarray(edges, dtype=float)
    a, b = edges[:-1, None], edges[1:, None]
    x = 0.5 * (b - a) * x0[None, :] + 0.5 * (a + b)
    w = 0.5 * (b - a) * w0[None, :]
    return x.ravel(), w.ravel()

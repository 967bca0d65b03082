"""Collision operator in Fourier space: transform, weighted convolution,
inverse transform.

Transform convention (fixed; the weight tables assume it):

    fhat(zeta_k) = (2 pi)^(-3/2) sum_j w_j f(v_j) exp(-i zeta_k . v_j)

with trapezoid weights ``w_j``.  This is a direct quadrature of the
continuous transform evaluated with the FFT plus explicit phase factors for
the offsets ``v_0 = -L`` and ``k_0 = -N/2``; nothing is periodized.  The
inverse undoes this discrete map exactly, so ``sum_j w_j Q_j`` equals
``(2 pi)^(3/2) Qhat(0)``.

The convolution only uses frequencies in the symmetric box
``|k_i| <= N/2 - 1``; the unpaired Nyquist planes ``k_i = -N/2`` are treated
as outside the integration domain, which keeps ``Qhat`` conjugate-symmetric
and the returned collision term real.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.interpolate import RegularGridInterpolator

from specboltz.grid import VelocityGrid
from specboltz.kernels import GrazingRutherford, KernelSpec
from specboltz.weights import WeightTable
from specboltz._quad import gauss_legendre

NORM = (2.0 * np.pi) ** -1.5

# Prefer OpenMP over TBB: an outdated system TBB makes numba warn on every
# first parallel launch, and the result is identical either way.
numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]


class RealnessError(ArithmeticError):
    pass


def _phase_1d(grid: VelocityGrid) -> np.ndarray:
    # exp(-i zeta_k v_0) with v_0 = -L; equals (-1)^k
    return np.exp(1j * grid.zeta * grid.L)


def _phase(grid: VelocityGrid) -> np.ndarray:
    p = _phase_1d(grid)
    return p[:, None, None] * p[None, :, None] * p[None, None, :]


def forward_transform(f_values, grid: VelocityGrid) -> np.ndarray:
    """Trapezoid-weighted discrete Fourier transform, shape ``(N, N, N)``,
    frequencies in increasing order along each axis."""
    f = np.asarray(f_values, dtype=float).reshape(grid.shape)
    spec = np.fft.fftshift(np.fft.fftn(grid.quad_weights * f))
    return NORM * _phase(grid) * spec


def inverse_transform(qhat, grid: VelocityGrid, tol: float = 1e-8,
                      return_residue: bool = False):
    """Exact inverse of :func:`forward_transform`, real part returned.

    Raises :class:`RealnessError` if the imaginary part exceeds
    ``tol * max|real part|``, which indicates inconsistent weights or
    conventions.
    """
    qhat = np.asarray(qhat, dtype=complex).reshape(grid.shape)
    vals = np.fft.ifftn(np.fft.ifftshift(np.conj(_phase(grid)) * qhat))
    vals = vals / (NORM * grid.quad_weights)
    real = vals.real
    scale = np.abs(real).max()
    residue = np.abs(vals.imag).max()
    rel = residue / scale if scale > 0 else residue
    if tol is not None and rel > tol and residue > 0:
        raise RealnessError(f"imaginary residue {residue:.3e} is {rel:.3e} of max|Q|")
    return (real, rel) if return_residue else real


def frequency_weights(grid: VelocityGrid) -> np.ndarray:
    """Trapezoid weights on the symmetric frequency box, zero on the
    Nyquist planes; shape ``(N, N, N)``."""
    w = np.full(grid.N, grid.dzeta)
    w[0] = 0.0
    w[1] *= 0.5
    w[-1] *= 0.5
    return w[:, None, None] * w[None, :, None] * w[None, None, :]


@numba.njit(parallel=True, cache=True)
def _weighted_convolution(W, fw, fh, N):
    M = N * N * N
    out = np.zeros(M, dtype=np.complex128)
    for kk in numba.prange(M):
        ax = kk // (N * N)
        ay = (kk // N) % N
        az = kk % N
        if ax == 0 or ay == 0 or az == 0:
            continue
        h = N // 2
        acc = 0j
        for bx in range(1, N):
            dx = ax - bx + h
            if dx < 1 or dx > N - 1:
                continue
            for by in range(1, N):
                dy = ay - by + h
                if dy < 1 or dy > N - 1:
                    continue
                base = (bx * N + by) * N
                for bz in range(1, N):
                    dz = az - bz + h
                    if dz < 1 or dz > N - 1:
                        continue
                    m = base + bz
                    acc += W[kk, m] * fw[m] * fh[dx, dy, dz]
        out[kk] = acc
    return out


def collide(fhat, table: WeightTable, grid: VelocityGrid) -> np.ndarray:
    """Qhat(zeta_k) = sum_m G_hat(zeta_k, xi_m) fhat(xi_m) fhat(zeta_k - xi_m) w_m.

    Shifted frequencies outside the symmetric box contribute zero (no
    wraparound).  Cost O(N^6).
    """
    if table.N != grid.N or not np.isclose(table.L, grid.L, rtol=1e-12, atol=0.0):
        raise ValueError(f"weight table (N={table.N}, L={table.L}) does not match "
                         f"grid (N={grid.N}, L={grid.L})")
    fh = np.ascontiguousarray(np.asarray(fhat, dtype=complex).reshape(grid.shape))
    fw = (fh * frequency_weights(grid)).ravel()
    out = _weighted_convolution(table.values, fw, fh, grid.N)
    return out.reshape(grid.shape)


def collision_operator(f_values, table: WeightTable, grid: VelocityGrid,
                       tol: float = 1e-8) -> np.ndarray:
    """Unprojected collision term Q~ on the velocity nodes."""
    qhat = collide(forward_transform(f_values, grid), table, grid)
    return inverse_transform(qhat, grid, tol=tol)


@dataclass
class SpectralState:
    """Distribution values with a lazily refreshed transform."""

    grid: VelocityGrid
    f_values: np.ndarray
    _fhat: np.ndarray | None = field(default=None, repr=False)

    @property
    def dirty(self) -> bool:
        return self._fhat is None

    @property
    def fhat(self) -> np.ndarray:
        if self._fhat is None:
            self._fhat = forward_transform(self.f_values, self.grid)
        return self._fhat

    def update(self, f_values) -> None:
        self.f_values = np.asarray(f_values, dtype=float).reshape(self.grid.shape)
        self._fhat = None


# ---------------------------------------------------------------------------
# test-only reference


def direct_collision_oracle(f_values, kernel: KernelSpec, grid: VelocityGrid,
                            n_theta: int = 16, n_psi: int = 16,
                            method: str = "linear") -> np.ndarray:
    """Direct quadrature of the collision integral at every node.

    The v* integral uses the grid's trapezoid rule; sigma is parametrized
    about u = v - v* with Gauss-Legendre in theta (against ``b sin th``) and
    the trapezoid rule in azimuth.  Off-grid values come from trilinear
    interpolation with zero extension (``method`` selects another
    :class:`scipy.interpolate.RegularGridInterpolator` scheme).  Cost O(N^6 n_theta n_psi): meant for
    N <= 8 verification only.
    """
    if isinstance(kernel.angular, GrazingRutherford) and kernel.angular.eps < 1e-2:
        raise ValueError("direct oracle needs an integrable section (grazing eps >= 1e-2)")
    f = np.asarray(f_values, dtype=float).reshape(grid.shape)
    interp = RegularGridInterpolator((grid.v, grid.v, grid.v), f, method=method,
                                     bounds_error=False, fill_value=0.0)
    lo, hi = kernel.theta_support()
    x, w = gauss_legendre(n_theta)
    th = 0.5 * (hi - lo) * (x + 1.0) + lo
    wth = 0.5 * (hi - lo) * w * kernel.angular.density(th)
    psi = 2.0 * np.pi * np.arange(n_psi) / n_psi
    wpsi = 2.0 * np.pi / n_psi
    TH, PS = np.meshgrid(th, psi, indexing="ij")
    wsig = (wth[:, None] * wpsi * np.ones_like(PS)).ravel()
    st, ct = np.sin(TH).ravel(), np.cos(TH).ravel()
    cp, sp = np.cos(PS).ravel(), np.sin(PS).ravel()
    total_b = wsig.sum()

    V = grid.velocities
    fv = f.ravel()
    wstar = grid.quad_weights.ravel()
    out = np.zeros(grid.M)
    for i in range(grid.M):
        u = V[i] - V
        un = np.linalg.norm(u, axis=1)
        keep = un > 0
        u, un, vs, ws, fs = u[keep], un[keep], V[keep], wstar[keep], fv[keep]
        uhat = u / un[:, None]
        # orthonormal frame (uhat, e1, e2)
        trial = np.where(np.abs(uhat[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
        e1 = np.cross(uhat, trial)
        e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
        e2 = np.cross(uhat, e1)
        sigma = (ct[None, :, None] * uhat[:, None, :]
                 + (st * cp)[None, :, None] * e1[:, None, :]
                 + (st * sp)[None, :, None] * e2[:, None, :])
        half = 0.5 * (un[:, None, None] * sigma - u[:, None, :])
        vp = V[i][None, None, :] + half
        vsp = vs[:, None, :] - half
        gain = interp(vp.reshape(-1, 3)) * interp(vsp.reshape(-1, 3))
        gain = gain.reshape(len(un), -1) @ wsig
        loss = fs * fv[i] * total_b
        out[i] = np.sum(ws * un**kernel.lam * (gain - loss))
    return out.reshape(grid.shape)

"""Convolution weights G_hat(zeta, xi) for the Boltzmann and Landau operators.

With zeta as the polar axis of u = r eta and ``xi_par = xi.zeta/|zeta|``,
``xi_perp = |xi - xi_par zeta/|zeta||`` every weight reduces to

    G_hat = (2 pi)^(-3/2) 2 pi int_0^L r^(lam+2) int_0^pi sin(phi)
            J0(r xi_perp sin phi) [cos(r xi_par cos phi) Ac + sin(r xi_par cos phi) Bs]
            dphi dr

where the angular factors (Ac, Bs) depend on (r |zeta|, phi) only:

* Boltzmann: ``Ac = 2 pi A``, ``Bs = 2 pi B`` with
  ``A = int b sin th [cos(c1 (1 - cos th)) J0(c2 sin th) - 1] d th``,
  ``B = int b sin th sin(c1 (1 - cos th)) J0(c2 sin th) d th``,
  ``c1 = beta r |zeta| cos(phi) / 2``, ``c2 = beta r |zeta| sin(phi) / 2``.
* Landau: ``Ac = -r^2 |zeta|^2 sin^2 phi``, ``Bs = 4 r |zeta| cos phi``.

Because the factors do not depend on xi, the table builder evaluates them
once per distinct |zeta| and reuses them for every xi class.
"""

from __future__ import annotations

import hashlib
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from specboltz._quad import (
    QuadratureError,
    adaptive_quad,
    composite_gauss,
    gauss_jacobi,
    geometric_breaks,
)
from specboltz.grid import VelocityGrid
from specboltz.kernels import (
    GrazingRutherford,
    IsotropicConstant,
    KernelSpec,
    Tabulated,
)

log = logging.getLogger(__name__)

BOLTZMANN = "boltzmann"
LANDAU = "landau"
OPERATORS = (BOLTZMANN, LANDAU)

TWO_PI = 2.0 * np.pi
# (2 pi)^(-3/2) from the transform, 2 pi from the azimuth about zeta
PREFACTOR = TWO_PI ** -1.5 * TWO_PI


def jm1(x):
    """``J0(x) - 1`` without cancellation for small ``x``."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = special.j0(x) - 1.0
    small = np.abs(x) < 0.5
    if np.any(small):
        q = -0.25 * x[small] ** 2
        term = q.copy()
        acc = q.copy()
        for k in range(2, 12):
            term = term * q / (k * k)
            acc += term
        out[small] = acc
    return float(out[0]) if scalar else out


def _bracket(theta, c1, c2, c3):
    """``cos(c1 (1 - cos th) - c3) J0(c2 sin th) - cos c3`` in stable form."""
    x = 2.0 * c1 * np.sin(0.5 * theta) ** 2
    b = c2 * np.sin(theta)
    return (-2.0 * np.sin(0.5 * x) * np.sin(0.5 * x - c3) * special.j0(b)
            + np.cos(c3) * jm1(b))


def taylor_first_piece(c1: float, c2: float, c3: float, eps: float) -> float:
    """Closed form of the small-angle piece over [eps, sqrt(eps)], keeping
    only the leading Taylor term of the bracket."""
    coef = -0.25 * c2 * c2 * np.cos(c3) + 0.5 * c1 * np.sin(c3)
    return 8.0 * eps / np.pi * (1.0 / eps - 1.0 / np.sqrt(eps)) * coef


def inner_theta_integral(c1: float, c2: float, c3: float, eps: float,
                         rtol: float = 1e-8, first_piece: str = "quadrature") -> float:
    """Theta integral of the Rutherford section against the weight bracket,
    split at sqrt(eps).

    ``first_piece="quadrature"`` integrates the exact (cancellation-free)
    bracket on [eps, sqrt(eps)]; ``"taylor"`` uses the leading-order closed
    form, which carries an O(eps^(3/2)) truncation error.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if c1 == 0.0 and c2 == 0.0:
        return 0.0
    root = np.sqrt(eps)
    scale = 8.0 * eps / np.pi

    def f(th):
        return scale / th**4 * _bracket(th, c1, c2, c3)

    errors = {}
    try:
        if first_piece == "taylor":
            first, errors["first"] = taylor_first_piece(c1, c2, c3, eps), 0.0
        elif first_piece == "quadrature":
            first, errors["first"] = adaptive_quad(
                f, eps, root, rtol=rtol, atol=1e-15,
                points=geometric_breaks(eps, root, 2.0), what="first theta piece")
        else:
            raise ValueError(f"unknown first_piece {first_piece!r}")
        second, errors["second"] = adaptive_quad(
            f, root, np.pi, rtol=rtol, atol=1e-15,
            points=geometric_breaks(root, np.pi, 2.0) + [1.5, 2.0, 2.5, 3.0],
            what="second theta piece")
    except QuadratureError as exc:
        raise QuadratureError(f"inner theta integral failed; piece errors so far {errors}",
                              exc.estimate, exc.error) from exc
    return first + second


def theta_integral(kernel: KernelSpec, c1: float, c2: float, c3: float,
                   rtol: float = 1e-8) -> float:
    """``int b sin th [cos(c1 (1 - cos th) - c3) J0(c2 sin th) - cos c3] d th``."""
    ang = kernel.angular
    if isinstance(ang, GrazingRutherford) and ang.eps < 1.0:
        return inner_theta_integral(c1, c2, c3, ang.eps, rtol=rtol)
    lo, hi = kernel.theta_support()

    def f(th):
        return ang.density(th) * _bracket(th, c1, c2, c3)

    val, _ = adaptive_quad(f, lo, hi, rtol=rtol, atol=1e-15,
                           points=kernel.theta_breaks(), what="theta integral")
    return val


def _perp_norm(u, zeta):
    """Return (|u|, zeta.u, |zeta_perp|) with zeta_perp orthogonal to u."""
    un = float(np.linalg.norm(u))
    dot = float(np.dot(zeta, u))
    perp2 = float(np.dot(zeta, zeta)) - (dot / un) ** 2 if un > 0 else float(np.dot(zeta, zeta))
    return un, dot, np.sqrt(max(perp2, 0.0))


def G_boltzmann(u, zeta, kernel: KernelSpec, rtol: float = 1e-8) -> complex:
    """Boltzmann weight function G(u, zeta) by adaptive theta quadrature."""
    u = np.asarray(u, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    un, dot, perp = _perp_norm(u, zeta)
    if un == 0.0 or not np.any(zeta):
        return 0j
    beta = kernel.beta
    c1 = 0.5 * beta * dot
    c2 = 0.5 * beta * un * perp
    re = theta_integral(kernel, c1, c2, 0.0, rtol)
    im = theta_integral(kernel, c1, c2, 0.5 * np.pi, rtol)
    return TWO_PI * un**kernel.lam * complex(re, im)


def G_landau(u, zeta, lam: float) -> complex:
    """Landau weight function ``4 |u|^lam (i u.zeta - |u|^2 |zeta_perp|^2 / 4)``."""
    u = np.asarray(u, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    un, dot, perp = _perp_norm(u, zeta)
    if un == 0.0:
        return 0j
    return 4.0 * un**lam * complex(-0.25 * un * un * perp * perp, dot)


# ---------------------------------------------------------------------------
# fixed composite rules for the vectorized builder


def theta_rule(kernel: KernelSpec, smax: float, order: int = 16):
    """Composite Gauss nodes on the kernel's theta support with weights
    pre-multiplied by ``b sin th``.

    Panels are graded geometrically towards a Rutherford cutoff and capped
    so each carries a bracket phase of at most ~4 rad for ``|c| <= smax``.
    """
    lo, hi = kernel.theta_support()
    hmax = min(0.25, 4.0 / max(smax, 1e-12))
    ang = kernel.angular
    if isinstance(ang, GrazingRutherford):
        # geometric panels from eps up to 0.25, then uniform
        head = [lo]
        while head[-1] * 2.0 < min(0.25, hi):
            head.append(head[-1] * 2.0)
        start = head[-1]
    elif isinstance(ang, Tabulated):
        head = list(ang.theta)
        edges = [head[0]]
        for a, b in zip(head[:-1], head[1:]):
            n = int(np.ceil((b - a) / hmax))
            edges.extend(np.linspace(a, b, n + 1)[1:].tolist())
        x, w = composite_gauss(edges, order)
        return x, w * ang.density(x)
    else:
        head = [lo]
        start = lo
    n = max(1, int(np.ceil((hi - start) / hmax)))
    edges = head + np.linspace(start, hi, n + 1)[1:].tolist()
    x, w = composite_gauss(edges, order)
    return x, w * ang.density(x)


def radial_rule(L: float, lam: float, n_panels: int, order: int = 16):
    """Nodes r and weights W with ``sum W F(r) ~ int_0^L r^(lam+2) F(r) dr``
    for integrands F that vanish like r^2 at the origin.

    The first panel uses Gauss-Jacobi for the weight r^(lam+4) so fractional
    powers of r near the origin are integrated exactly.
    """
    edges = np.linspace(0.0, L, n_panels + 1)
    alpha = lam + 4.0
    xj, wj = gauss_jacobi(order, alpha)
    h = edges[1]
    r0 = 0.5 * h * (1.0 + xj)
    w0 = wj * (0.5 * h) ** (alpha + 1.0) / r0**2
    if n_panels > 1:
        r1, w1 = composite_gauss(edges[1:], order)
        w1 = w1 * r1 ** (lam + 2.0)
        return np.concatenate([r0, r1]), np.concatenate([w0, w1])
    return r0, w0


def phi_rule(n_panels: int, order: int = 16):
    """Nodes on [0, pi/2] and weights ``2 sin(phi) w`` (folded about pi/2)."""
    x, w = composite_gauss(np.linspace(0.0, 0.5 * np.pi, n_panels + 1), order)
    return x, 2.0 * np.sin(x) * w


@dataclass(frozen=True)
class QuadratureSpec:
    """Panel counts for the fixed-rule builder; ``order`` nodes per panel."""

    r_panels: int
    phi_panels: int
    order: int = 16

    def refined(self, factor: float = 1.5) -> "QuadratureSpec":
        return QuadratureSpec(int(np.ceil(self.r_panels * factor)),
                              int(np.ceil(self.phi_panels * factor)), self.order)


def default_quadrature(grid: VelocityGrid, kernel: KernelSpec | None = None,
                       resolution: float = 1.0) -> QuadratureSpec:
    """Panel counts sized so each 16-point panel sees at most ~24 rad of
    integrand phase (measured to resolve weights to ~1e-13 at N <= 16)."""
    beta = kernel.beta if kernel is not None else 1.0
    kmax = np.sqrt(3.0) * (grid.N // 2) * grid.dzeta
    phase = grid.L * kmax * (1.0 + beta)
    n = max(2, int(np.ceil(resolution * phase / 24.0)))
    return QuadratureSpec(n, n)


class _Factors:
    """Angular factors (Ac, Bs) on the (r, phi) tensor grid for one |zeta|."""

    def __init__(self, kernel: KernelSpec | None, lam: float, L: float,
                 quad: QuadratureSpec):
        self.kernel = kernel
        r, wr = radial_rule(L, lam, quad.r_panels, quad.order)
        phi, wphi = phi_rule(quad.phi_panels, quad.order)
        self.r = r[:, None]
        self.phi = phi[None, :]
        self.w = (wr[:, None] * wphi[None, :]).ravel()
        self.rc = (self.r * np.cos(self.phi)).ravel()
        self.rs = (self.r * np.sin(self.phi)).ravel()
        self.L = L
        self._theta = None

    def angular(self, zeta_norm: float):
        if self.kernel is None:
            ac = -(self.rs * zeta_norm) ** 2
            bs = 4.0 * self.rc * zeta_norm
            return ac, bs
        beta = self.kernel.beta
        c1 = 0.5 * beta * zeta_norm * self.rc
        c2 = 0.5 * beta * zeta_norm * self.rs
        smax = 0.5 * beta * zeta_norm * self.L
        th, wth = theta_rule(self.kernel, smax)
        A = np.empty_like(c1)
        B = np.empty_like(c1)
        # chunk over nodes to bound the (node, theta) temporaries
        step = max(1, 2_000_000 // th.size)
        half = np.sin(0.5 * th) ** 2
        sth = np.sin(th)
        for a in range(0, c1.size, step):
            x = 2.0 * c1[a:a + step, None] * half[None, :]
            b = c2[a:a + step, None] * sth[None, :]
            j = special.j0(b)
            brA = -2.0 * np.sin(0.5 * x) ** 2 * j + jm1(b)
            A[a:a + step] = brA @ wth
            B[a:a + step] = (np.sin(x) * j) @ wth
        return TWO_PI * A, TWO_PI * B


def _contract(factors: _Factors, ac, bs, xi_par, xi_perp, chunk_bytes=64_000_000):
    """Weights for paired arrays (xi_par[i], xi_perp[i]) at one |zeta|."""
    xi_par = np.asarray(xi_par, dtype=float)
    xi_perp = np.asarray(xi_perp, dtype=float)
    out = np.empty(xi_par.size)
    wac = factors.w * ac
    wbs = factors.w * bs
    step = max(1, chunk_bytes // (8 * factors.w.size))
    for a in range(0, xi_par.size, step):
        ph = xi_par[a:a + step, None] * factors.rc[None, :]
        j = special.j0(xi_perp[a:a + step, None] * factors.rs[None, :])
        out[a:a + step] = np.einsum("ij,ij->i", j, np.cos(ph) * wac + np.sin(ph) * wbs)
    return PREFACTOR * out


def _contract_separable(factors: _Factors, ac, bs, par_vals, perp_vals, p_idx, q_idx,
                        chunk_bytes=64_000_000):
    """Same as :func:`_contract` but evaluates trig/Bessel tables once per
    distinct xi_par / xi_perp value and only gathers the requested pairs."""
    n = factors.w.size
    ph = np.asarray(par_vals)[:, None] * factors.rc[None, :]
    CS = np.cos(ph) * (factors.w * ac) + np.sin(ph) * (factors.w * bs)
    del ph
    out = np.empty(len(p_idx))
    order = np.argsort(p_idx, kind="stable")
    p_sorted = p_idx[order]
    # process perp values in blocks, gathering the pairs that use them
    block = max(1, chunk_bytes // (8 * n))
    bounds = np.searchsorted(p_sorted, np.arange(0, len(perp_vals) + block, block))
    for bi in range(len(bounds) - 1):
        lo, hi = bounds[bi], bounds[bi + 1]
        if lo == hi:
            continue
        p0 = bi * block
        J = special.j0(np.asarray(perp_vals[p0:p0 + block])[:, None] * factors.rs[None, :])
        sel = order[lo:hi]
        for a in range(0, sel.size, block):
            s = sel[a:a + block]
            out[s] = np.einsum("ij,ij->i", J[p_idx[s] - p0], CS[q_idx[s]])
    return PREFACTOR * out


# ---------------------------------------------------------------------------
# single entries (adaptive outer quadrature)


def _ghat_adaptive(zeta, xi, L, lam, factor_fn, rtol, imag=False):
    zeta = np.asarray(zeta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    zn = float(np.linalg.norm(zeta))
    if zn == 0.0:
        return (0.0, 0.0) if imag else 0.0
    par = float(np.dot(xi, zeta)) / zn
    perp = float(np.linalg.norm(xi - par * zeta / zn))
    breaks_r = np.linspace(0.0, L, 9)[1:-1].tolist()
    breaks_phi = np.linspace(0.0, np.pi, 9)[1:-1].tolist()

    # integrand is Re/Im of (Ac + i Bs) exp(-i c3) times the xi_perp Bessel factor
    def part(kind):
        def phi_integrand(phi, r):
            ac, bs = factor_fn(r, phi, zn)
            c3 = r * par * np.cos(phi)
            j = special.j0(r * perp * np.sin(phi)) * np.sin(phi)
            if kind == "re":
                return j * (np.cos(c3) * ac + np.sin(c3) * bs)
            return j * (np.cos(c3) * bs - np.sin(c3) * ac)

        def r_integrand(r):
            if r == 0.0:
                return 0.0
            val, _ = adaptive_quad(lambda p: phi_integrand(p, r), 0.0, np.pi,
                                   rtol=rtol, atol=1e-13, points=breaks_phi,
                                   what="phi integral")
            return r ** (lam + 2.0) * val

        val, _ = adaptive_quad(r_integrand, 0.0, L, rtol=rtol, atol=1e-12,
                               points=breaks_r, what="radial integral")
        return PREFACTOR * val

    re = part("re")
    if not imag:
        return re
    return re, part("im")


def _boltzmann_factor_fn(kernel, rtol_theta):
    def fn(r, phi, zn):
        c1 = 0.5 * kernel.beta * r * zn * np.cos(phi)
        c2 = 0.5 * kernel.beta * r * zn * np.sin(phi)
        a = theta_integral(kernel, c1, c2, 0.0, rtol_theta)
        b = theta_integral(kernel, c1, c2, 0.5 * np.pi, rtol_theta)
        return TWO_PI * a, TWO_PI * b
    return fn


def _boltzmann_factor_fn_gauss(kernel):
    def fn(r, phi, zn):
        c1 = 0.5 * kernel.beta * r * zn * np.cos(phi)
        c2 = 0.5 * kernel.beta * r * zn * np.sin(phi)
        th, w = theta_rule(kernel, 0.5 * kernel.beta * r * zn)
        x = 2.0 * c1 * np.sin(0.5 * th) ** 2
        b = c2 * np.sin(th)
        j = special.j0(b)
        a = (-2.0 * np.sin(0.5 * x) ** 2 * j + jm1(b)) @ w
        bb = (np.sin(x) * j) @ w
        return TWO_PI * a, TWO_PI * bb
    return fn


def _landau_factor_fn(r, phi, zn):
    return -(r * zn * np.sin(phi)) ** 2, 4.0 * r * zn * np.cos(phi)


def ghat_boltzmann_entry(zeta, xi, kernel: KernelSpec, L: float, rtol: float = 1e-6,
                         theta_method: str = "gauss") -> float:
    """Single Boltzmann weight by adaptive quadrature in r and phi.

    ``theta_method="adaptive"`` runs QUADPACK for every inner theta integral
    (slow); ``"gauss"`` uses the fixed composite rule of :func:`theta_rule`.
    """
    if theta_method == "adaptive":
        fn = _boltzmann_factor_fn(kernel, 1e-8)
    elif theta_method == "gauss":
        fn = _boltzmann_factor_fn_gauss(kernel)
    else:
        raise ValueError(f"unknown theta_method {theta_method!r}")
    return _ghat_adaptive(zeta, xi, L, kernel.lam, fn, rtol)


def ghat_landau_entry(zeta, xi, lam: float, L: float, rtol: float = 1e-6) -> float:
    """Single Landau weight; asserts the imaginary residue is negligible."""
    re, im = _ghat_adaptive(zeta, xi, L, lam, _landau_factor_fn, rtol, imag=True)
    if abs(im) > 1e-8 * max(1.0, abs(re)):
        raise QuadratureError("Landau weight has non-negligible imaginary part", im)
    return re


def ghat_fixed_entry(zeta, xi, kernel: KernelSpec | None, L: float, lam: float | None = None,
                     quad: QuadratureSpec | None = None) -> float:
    """Single weight with the table builder's fixed rules (``kernel=None``
    selects the Landau operator with exponent ``lam``)."""
    zeta = np.asarray(zeta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    zn = float(np.linalg.norm(zeta))
    if zn == 0.0:
        return 0.0
    lam = kernel.lam if kernel is not None else lam
    if quad is None:
        kmax = max(zn, float(np.linalg.norm(xi)))
        n = max(2, int(np.ceil(L * kmax * 2.0 / 24.0)))
        quad = QuadratureSpec(n, n)
    fac = _Factors(kernel, lam, L, quad)
    ac, bs = fac.angular(zn)
    par = float(np.dot(xi, zeta)) / zn
    perp = float(np.linalg.norm(xi - par * zeta / zn))
    return float(_contract(fac, ac, bs, [par], [perp])[0])


# ---------------------------------------------------------------------------
# weight tables


@dataclass
class WeightTable:
    N: int
    L: float
    operator: str
    lam: float
    beta: float
    family: int
    family_param: float
    quad_tol: float
    values: np.ndarray = field(repr=False)
    missed: int = 0

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise ValueError(f"operator must be one of {OPERATORS}")
        M = self.N**3
        if self.values.shape != (M, M):
            raise ValueError(f"values must have shape {(M, M)}, got {self.values.shape}")

    @property
    def operator_tag(self) -> int:
        return OPERATORS.index(self.operator)

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.values).tobytes()).hexdigest()[:16]

    def metadata(self) -> dict:
        return dict(N=self.N, L=self.L, operator=self.operator, lam=self.lam,
                    beta=self.beta, family=self.family, family_param=self.family_param)

    def check_matches(self, grid: VelocityGrid | None = None, **expected) -> None:
        """Raise :class:`MetadataMismatch` if any given parameter differs."""
        if grid is not None:
            expected.setdefault("N", grid.N)
            expected.setdefault("L", grid.L)
        meta = self.metadata()
        bad = []
        for key, want in expected.items():
            have = meta[key]
            if isinstance(want, float) or isinstance(have, float):
                same = np.isclose(float(have), float(want), rtol=1e-12, atol=0.0)
            else:
                same = have == want
            if not same:
                bad.append(f"{key}: table has {have!r}, run requests {want!r}")
        if bad:
            raise MetadataMismatch("weight table does not match run: " + "; ".join(bad))


def kernel_metadata(kernel: KernelSpec | None, operator: str, lam: float) -> dict:
    if operator == LANDAU:
        return dict(operator=LANDAU, lam=float(lam), beta=1.0, family=0, family_param=0.0)
    return dict(operator=BOLTZMANN, lam=float(kernel.lam), beta=float(kernel.beta),
                family=kernel.angular.tag, family_param=kernel.angular.param)


def _class_keys(K: np.ndarray, rows: np.ndarray):
    """Integer (xi.zeta, |xi|^2) keys for each (row, xi) pair."""
    dots = K[rows] @ K.T
    m2 = np.einsum("ij,ij->i", K, K)
    return dots, np.broadcast_to(m2, dots.shape)


def build_weight_table(grid: VelocityGrid, kernel: KernelSpec | None = None,
                       operator: str = BOLTZMANN, lam: float | None = None,
                       symmetry: bool = True, quad: QuadratureSpec | None = None,
                       estimate_error: bool = True, tol: float = 1e-6,
                       progress=None) -> WeightTable:
    """Fill all ``N^3 x N^3`` weights.

    For the Landau operator pass ``operator="landau"`` and the exponent
    either through ``lam`` or a kernel.  With ``symmetry=True`` each weight is
    computed once per integer class ``(|k|^2, k.m, |m|^2)`` of wavenumbers
    (zeta = k dzeta, xi = m dzeta) and scattered, so entries in one class
    are bitwise identical.
    """
    if operator not in OPERATORS:
        raise ValueError(f"operator must be one of {OPERATORS}")
    if operator == BOLTZMANN and kernel is None:
        raise ValueError("Boltzmann weights need a kernel")
    if operator == LANDAU:
        lam = kernel.lam if lam is None else lam
        fkernel = None
    else:
        lam = kernel.lam
        fkernel = kernel
    quad = quad or default_quadrature(grid, kernel)
    t0 = time.perf_counter()
    values = _fill(grid, fkernel, lam, quad, symmetry, progress)
    if not np.all(np.isfinite(values)):
        raise QuadratureError("non-finite weights produced")
    quad_tol, missed = 0.0, 0
    if estimate_error:
        quad_tol, missed = _estimate_error(grid, fkernel, lam, quad, values, tol)
    log.info("weight table N=%d built in %.1fs (quad_tol=%.2e)", grid.N,
             time.perf_counter() - t0, quad_tol)
    meta = kernel_metadata(kernel, operator, lam)
    table = WeightTable(N=grid.N, L=grid.L, quad_tol=quad_tol, values=values,
                        missed=missed, **meta)
    if missed:
        log.warning("%d weight entries missed the %.0e tolerance", missed, tol)
    return table


def _fill(grid, kernel, lam, quad, symmetry, progress, rows=None):
    K = grid.wavenumbers
    M = grid.M
    dz = grid.dzeta
    k2 = np.einsum("ij,ij->i", K, K)
    values = np.zeros((M, M)) if rows is None else np.zeros((len(rows), M))
    row_ids = np.arange(M) if rows is None else np.asarray(rows)
    factors = _Factors(kernel, lam, grid.L, quad)
    groups = np.unique(k2[row_ids])
    for gi, kk in enumerate(groups):
        if kk == 0:
            continue
        sel = np.nonzero(k2[row_ids] == kk)[0]
        zn = np.sqrt(kk) * dz
        if symmetry:
            ac, bs = factors.angular(zn)
            dots, m2 = _class_keys(K, row_ids[sel])
            # |xi_perp|^2 |k|^2 / dz^2 = |m|^2 |k|^2 - (k.m)^2, an integer
            perp_num = m2 * kk - dots**2
            par_keys, par_inv = np.unique(dots, return_inverse=True)
            perp_keys, perp_inv = np.unique(perp_num, return_inverse=True)
            pair = perp_inv.ravel() * len(par_keys) + par_inv.ravel()
            uniq, inv = np.unique(pair, return_inverse=True)
            p_idx, q_idx = np.divmod(uniq, len(par_keys))
            par_vals = par_keys / np.sqrt(kk) * dz
            perp_vals = np.sqrt(perp_keys / kk) * dz
            vals = _contract_separable(factors, ac, bs, par_vals, perp_vals, p_idx, q_idx)
            values[sel] = vals[inv].reshape(len(sel), M)
        else:
            freqs = K * dz
            for i in sel:
                zeta = freqs[row_ids[i]]
                zn_i = float(np.linalg.norm(zeta))
                ac, bs = factors.angular(zn_i)
                par = freqs @ (zeta / zn_i)
                perp = np.linalg.norm(freqs - par[:, None] * (zeta / zn_i)[None, :], axis=1)
                values[i] = _contract(factors, ac, bs, par, perp)
        if progress is not None:
            progress(gi + 1, len(groups))
    return values


def _estimate_error(grid, kernel, lam, quad, values, tol, n_rows=6):
    """Re-evaluate a few rows (smallest, largest and intermediate |zeta|)
    with 1.5x the panels; returns (max abs change, entries over tolerance)."""
    K = grid.wavenumbers
    k2 = np.einsum("ij,ij->i", K, K)
    levels = np.unique(k2[k2 > 0])
    picks = levels[np.linspace(0, len(levels) - 1, min(n_rows, len(levels))).astype(int)]
    rows = np.array([np.nonzero(k2 == p)[0][0] for p in picks])
    fine = _fill(grid, kernel, lam, quad.refined(), True, None, rows=rows)
    diff = np.abs(fine - values[rows])
    scale = max(np.abs(values).max(), 1e-300)
    missed = int(np.count_nonzero(diff > tol * scale))
    return float(diff.max()), missed


# ---------------------------------------------------------------------------
# cache file


class CacheError(ValueError):
    pass


class MetadataMismatch(CacheError):
    pass


MAGIC = b"BWT1"
VERSION = 1
_HEADER = struct.Struct("<4sIIIdddIdd")


def save_table(table: WeightTable, path) -> None:
    """Write the little-endian cache file (header, values, u64 count footer)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _HEADER.pack(MAGIC, VERSION, table.operator_tag, table.N, table.L,
                          table.lam, table.beta, table.family, table.family_param,
                          table.quad_tol)
    data = np.ascontiguousarray(table.values, dtype="<f8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())
        fh.write(struct.pack("<Q", data.size))
    tmp.replace(path)


def load_table(path, grid: VelocityGrid | None = None, **expected) -> WeightTable:
    """Read a cache file; ``grid`` and keyword parameters (operator, lam,
    beta, family, family_param) are checked against the stored header."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise CacheError(f"{path}: truncated header")
        magic, version, op, N, L, lam, beta, family, param, qtol = _HEADER.unpack(head)
        if magic != MAGIC:
            raise CacheError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise CacheError(f"{path}: unsupported version {version}")
        if op >= len(OPERATORS):
            raise CacheError(f"{path}: unknown operator tag {op}")
        count = N ** 6
        raw = fh.read(8 * count)
        footer = fh.read(8)
        extra = fh.read(1)
    if len(raw) != 8 * count or len(footer) != 8:
        raise CacheError(f"{path}: truncated data ({len(raw)} of {8 * count} bytes)")
    if struct.unpack("<Q", footer)[0] != count or extra:
        raise CacheError(f"{path}: entry-count footer mismatch")
    values = np.frombuffer(raw, dtype="<f8").astype(float).reshape(N**3, N**3)
    table = WeightTable(N=N, L=L, operator=OPERATORS[op], lam=lam, beta=beta,
                        family=family, family_param=param, quad_tol=qtol, values=values)
    if grid is not None or expected:
        table.check_matches(grid, **expected)
    return table

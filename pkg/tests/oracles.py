"""Independent reference computations used only by the tests.

None of these share code paths with the package: they integrate the
defining formulas directly (sphere, ball, extended precision) or use
closed forms that hold for special kernels.
"""

import mpmath as mp
import numpy as np


def theta_unsplit(c1, c2, c3, eps, dps=30):
    """Extended-precision quadrature of the unsplit Rutherford theta integral
    int_eps^pi 8 eps/(pi th^4) [cos(c1 (1 - cos th) - c3) J0(c2 sin th) - cos c3] dth."""
    with mp.workdps(dps):
        c1, c2, c3, eps = (mp.mpf(x) for x in (c1, c2, c3, eps))

        def f(t):
            return 8 * eps / (mp.pi * t**4) * (
                mp.cos(c1 * (1 - mp.cos(t)) - c3) * mp.besselj(0, c2 * mp.sin(t)) - mp.cos(c3))

        pts = [eps]
        while pts[-1] * 2 < mp.pi:
            pts.append(pts[-1] * 2)
        pts.append(mp.pi)
        return float(mp.quad(f, pts))


def _frame(u):
    uhat = u / np.linalg.norm(u)
    trial = np.array([1.0, 0.0, 0.0]) if abs(uhat[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(uhat, trial)
    e1 /= np.linalg.norm(e1)
    return uhat, e1, np.cross(uhat, e1)


def sphere_G(u, zeta, b_sin, lam, beta=1.0, n_theta=200, n_phi=200, theta_lo=0.0):
    """G(u, zeta) = |u|^lam int_S2 b (exp(-i beta/2 zeta.(|u| sigma - u)) - 1) dsigma
    by Gauss-Legendre in the polar angle about u and the trapezoid rule in
    azimuth.  ``b_sin`` is b(cos th) sin th."""
    u = np.asarray(u, float)
    zeta = np.asarray(zeta, float)
    un = np.linalg.norm(u)
    uhat, e1, e2 = _frame(u)
    x, w = np.polynomial.legendre.leggauss(n_theta)
    th = 0.5 * (np.pi - theta_lo) * (x + 1) + theta_lo
    wth = 0.5 * (np.pi - theta_lo) * w * b_sin(th)
    ph = 2 * np.pi * np.arange(n_phi) / n_phi
    T, P = np.meshgrid(th, ph, indexing="ij")
    sig = (np.cos(T)[..., None] * uhat + (np.sin(T) * np.cos(P))[..., None] * e1
           + (np.sin(T) * np.sin(P))[..., None] * e2)
    phase = -0.5j * beta * ((un * sig - u) @ zeta)
    val = np.sum(wth[:, None] * (2 * np.pi / n_phi) * (np.exp(phase) - 1.0))
    return un**lam * val


def ball_transform(G_of_u, xi, L, n=80):
    """(2 pi)^(-3/2) int_{|u| < L} G(u) exp(-i xi.u) du with Gauss rules in
    r (r^2 weight) and cos(alpha), trapezoid in azimuth.  ``G_of_u`` maps
    an array (..., 3) of u vectors to values."""
    x, w = np.polynomial.legendre.leggauss(n)
    r = 0.5 * L * (x + 1)
    wr = 0.5 * L * w * r**2
    ca, wa = np.polynomial.legendre.leggauss(n)
    psi = 2 * np.pi * np.arange(n) / n
    R, CA, PS = np.meshgrid(r, ca, psi, indexing="ij")
    SA = np.sqrt(1 - CA**2)
    U = np.stack([R * SA * np.cos(PS), R * SA * np.sin(PS), R * CA], -1)
    W = wr[:, None, None] * wa[None, :, None] * (2 * np.pi / n)
    return (2 * np.pi) ** -1.5 * np.sum(W * G_of_u(U) * np.exp(-1j * (U @ np.asarray(xi, float))))


def G_isotropic(U, zeta, b0=1 / (4 * np.pi), lam=0.0):
    """Closed form for a constant section: the sphere average of
    exp(-i |u| zeta.sigma / 2) is sinc(|u||zeta|/2)."""
    un = np.linalg.norm(U, axis=-1)
    zn = np.linalg.norm(zeta)
    return b0 * un**lam * 4 * np.pi * (np.exp(0.5j * (U @ zeta)) * np.sinc(un * zn / (2 * np.pi)) - 1)


def G_landau_field(U, zeta, lam=-3.0):
    un = np.linalg.norm(U, axis=-1)
    d = U @ zeta
    perp2 = np.maximum(zeta @ zeta - d**2 / un**2, 0.0)
    return 4 * un**lam * (1j * d - 0.25 * un**2 * perp2)


def maxwell_molecule_qhat(k, components, n=48):
    """Exact transformed collision operator for Maxwell molecules with
    b = 1/(4 pi) and f a sum of Maxwellians (rho, V, T):

        Qhat(k) = (2 pi)^(-3/2) int_S2 b [phi(k+) phi(k-) - phi(0) phi(k)] dsigma,
        k+- = (k +- |k| sigma)/2,

    with phi the unnormalized characteristic function of f."""
    def phi(q):
        return sum(rho * np.exp(-1j * (q @ np.asarray(V, float)) - T * np.sum(q * q, -1) / 2)
                   for rho, V, T in components)

    x, w = np.polynomial.legendre.leggauss(n)
    psi = 2 * np.pi * np.arange(n) / n
    ct, ps = np.meshgrid(x, psi, indexing="ij")
    st = np.sqrt(1 - ct**2)
    W = (w[:, None] * np.full(n, 2 * np.pi / n)[None, :]).ravel() / (4 * np.pi)
    S = np.stack([st * np.cos(ps), st * np.sin(ps), ct], -1).reshape(-1, 3)
    k = np.atleast_2d(np.asarray(k, float))
    kn = np.linalg.norm(k, axis=1)[:, None, None]
    kp = (k[:, None, :] + kn * S[None]) / 2
    km = (k[:, None, :] - kn * S[None]) / 2
    vals = (phi(kp) * phi(km) - phi(np.zeros(3)) * phi(k)[:, None]) @ W
    return (2 * np.pi) ** -1.5 * vals


def kkt_projection(C, q):
    """Solve min 1/2 |Q - q|^2 s.t. C Q = 0 through the dense KKT system."""
    m, M = C.shape
    K = np.zeros((M + m, M + m))
    K[:M, :M] = np.eye(M)
    K[:M, M:] = C.T
    K[M:, :M] = C
    rhs = np.concatenate([q, np.zeros(m)])
    return np.linalg.solve(K, rhs)[:M]


def shell_mass(dps=30):
    """0.01 * 4 pi int_0^inf r^2 exp(-10 ((r - 1.5)/1.5)^2) dr."""
    with mp.workdps(dps):
        f = lambda r: r**2 * mp.exp(-10 * ((r - mp.mpf(1.5)) / mp.mpf(1.5)) ** 2)
        return float(mp.mpf("0.01") * 4 * mp.pi * mp.quad(f, [0, 1.5, mp.inf]))


def lambda_eps_expansion(eps, dps=30):
    """Small-eps expansion of the Rutherford Lambda_eps,
    8 - 8 eps/pi + 16 eps C + 2 eps^2/3 + O(eps^4), with
    C = int_0^pi ((1 - cos t)/t^4 - 1/(2 t^2)) dt (the eps^2 term comes from
    the integrand's value -1/24 at t = 0)."""
    with mp.workdps(dps):
        # termwise integral of the cosine series (the integrand cancels at t -> 0)
        C = mp.nsum(lambda k: (-1) ** (k + 1) * mp.pi ** (2 * k - 3)
                    / ((2 * k - 3) * mp.factorial(2 * k)), [2, mp.inf])
        e = mp.mpf(eps)
        return float(8 - 8 * e / mp.pi + 16 * e * C + 2 * e**2 / 3)


def lambda_eps_exact(eps, p=1, dps=30):
    """2 pi int_eps^pi 8 eps/(pi t^4) (1 - cos t)^p dt at extended precision."""
    with mp.workdps(dps):
        e = mp.mpf(eps)
        f = lambda t: 8 * e / (mp.pi * t**4) * (1 - mp.cos(t)) ** p
        pts = [e]
        while pts[-1] * 2 < mp.pi:
            pts.append(pts[-1] * 2)
        pts.append(mp.pi)
        return float(2 * mp.pi * mp.quad(f, pts))

"""Closed forms used as independent references.

Nothing here touches the package: every value is computed from elementary
functions or scipy, so agreement is a real cross-check.
"""

import math

import numpy as np
from scipy import stats
from scipy.integrate import quad


def sqrt_pm(z, a):
    """``sqrt(z - a) sqrt(z + a)``: the branch of ``sqrt(z^2 - a^2)`` that behaves like ``z`` at infinity."""
    z = np.asarray(z, dtype=complex)
    return np.sqrt(z - a) * np.sqrt(z + a)


# standard semicircle, variance v: G(z) = (z - sqrt(z^2 - 4v)) / (2v)
def semicircle_cauchy(z, variance=1.0):
    r = 2.0 * math.sqrt(variance)
    return (np.asarray(z, dtype=complex) - sqrt_pm(z, r)) / (2.0 * variance)


def semicircle_phi(w, variance=1.0):
    return variance / np.asarray(w, dtype=complex)


def semicircle_density(x, variance=1.0):
    r2 = 4.0 * variance
    x = np.asarray(x, dtype=float)
    return np.sqrt(np.maximum(r2 - x * x, 0.0)) / (2 * math.pi * variance)


def semicircle_cdf(x, variance=1.0):
    u = np.clip(np.asarray(x, dtype=float) / (2 * math.sqrt(variance)), -1, 1)
    return 0.5 + (u * np.sqrt(1 - u * u) + np.arcsin(u)) / math.pi


# (delta_{-a} + delta_a)/2: F(z) = z - a^2/z, F^{-1}(w) = (w + sqrt(w^2 + 4a^2))/2.
# sqrt(w^2 + 4a^2) is taken as sqrt(w - 2ai) sqrt(w + 2ai); the principal root
# of w^2 + 4a^2 would put its cut across the upper imaginary axis.
def bernoulli_f(z, a=1.0):
    z = np.asarray(z, dtype=complex)
    return z - a * a / z


def bernoulli_finv(w, a=1.0):
    w = np.asarray(w, dtype=complex)
    return (w + np.sqrt(w - 2j * a) * np.sqrt(w + 2j * a)) / 2


def bernoulli_phi(w, a=1.0):
    return bernoulli_finv(w, a) - np.asarray(w, dtype=complex)


# arcsine on (-2, 2) = Bernoulli [+] Bernoulli
def arcsine_cauchy(z):
    return 1.0 / sqrt_pm(z, 2.0)


def arcsine_density(x):
    x = np.asarray(x, dtype=float)
    return 1.0 / (math.pi * np.sqrt(4.0 - x * x))


def arcsine_cdf(x):
    return 0.5 + np.arcsin(np.clip(np.asarray(x, dtype=float) / 2, -1, 1)) / math.pi


# free Poisson with rate 1
def marchenko_pastur_density(x):
    x = np.asarray(x, dtype=float)
    inside = (x > 0) & (x < 4)
    out = np.zeros_like(x)
    out[inside] = np.sqrt(x[inside] * (4 - x[inside])) / (2 * math.pi * x[inside])
    return out


def marchenko_pastur_cdf(x):
    def one(xi):
        if xi <= 0:
            return 0.0
        return quad(lambda t: math.sqrt(t * (4 - t)) / (2 * math.pi * t), 0.0, min(xi, 4.0))[0]

    return np.vectorize(one)(np.asarray(x, dtype=float))


def gaussian_cdf(x, variance=1.0):
    return stats.norm.cdf(x, scale=math.sqrt(variance))


def poisson_pmf(k, rate=1.0):
    return math.exp(-rate) * rate ** k / math.factorial(k)


def lorentz_point_mass_cauchy(z, c=0.0):
    return 1.0 / (np.asarray(z, dtype=complex) - c)


def wigner_plus_signs_spectrum(dim, seed):
    """Eigenvalues of ``D + W``: ``D`` a diagonal of balanced +-1 signs, ``W`` a GOE matrix of variance one."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((dim, dim))
    w = (a + a.T) / math.sqrt(2 * dim)
    d = np.where(np.arange(dim) < dim // 2, -1.0, 1.0)
    return np.linalg.eigvalsh(w + np.diag(d))


def empirical_cdf(samples):
    s = np.sort(np.asarray(samples, dtype=float))

    def cdf(x):
        return np.searchsorted(s, np.asarray(x, dtype=float), side="right") / s.size

    return cdf


def atomic_cdf(xs, ws):
    xs, ws = np.asarray(xs, float), np.asarray(ws, float)

    def cdf(x):
        x = np.asarray(x, dtype=float)
        return (ws[None, :] * (xs[None, :] <= x[..., None])).sum(-1)

    return cdf


def levy_bruteforce(fa, fb, lo, hi, eps_grid, n_x=4001):
    """Smallest ``eps`` in ``eps_grid`` satisfying the two-sided band on a dense grid (both orders)."""
    x = np.linspace(lo, hi, n_x)
    for eps in eps_grid:
        ok = True
        for f, g in ((fa, fb), (fb, fa)):
            gx = g(x)
            if np.any(gx > f(x + eps) + eps + 1e-12) or np.any(gx < f(x - eps) - eps - 1e-12):
                ok = False
                break
        if ok:
            return eps
    return np.inf


def cauchy_by_quadrature(atoms_x, atoms_w, lo=None, hi=None, values=None, z=1j, order=40):
    """``int dm / (z - t)`` with atoms summed directly and each density cell done by Gauss-Legendre."""
    z = np.asarray(z, dtype=complex)
    out = (np.asarray(atoms_w)[None, :] / (z.ravel()[:, None] - np.asarray(atoms_x)[None, :])).sum(1)
    if values is not None:
        v = np.asarray(values, dtype=float)
        nodes = np.linspace(lo, hi, v.size)
        gx, gw = np.polynomial.legendre.leggauss(order)
        a, b = nodes[:-1], nodes[1:]
        t = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * gx[None, :]
        dens = v[:-1, None] + (v[1:] - v[:-1])[:, None] * (t - a[:, None]) / (b - a)[:, None]
        wts = (0.5 * (b - a)[:, None] * gw[None, :] * dens).ravel()
        out = out + (wts[None, :] / (z.ravel()[:, None] - t.ravel()[None, :])).sum(1)
    return out.reshape(z.shape)


def measure_cauchy(m, z):
    d = m.density
    if d is None:
        return cauchy_by_quadrature(m.atoms_x, m.atoms_w, z=z)
    return cauchy_by_quadrature(m.atoms_x, m.atoms_w, d.lo, d.hi, d.values, z=z)


def char_by_quadrature(m, t, order=20):
    """``int exp(itx) dm(x)``: atoms summed directly, density cells by Gauss-Legendre."""
    t = np.asarray(t, dtype=float)
    out = (m.atoms_w[None, :] * np.exp(1j * t[:, None] * m.atoms_x[None, :])).sum(1)
    d = m.density
    if d is not None:
        v = d.values
        nodes = np.linspace(d.lo, d.hi, v.size)
        gx, gw = np.polynomial.legendre.leggauss(order)
        a, b = nodes[:-1], nodes[1:]
        x = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * gx[None, :]
        dens = v[:-1, None] + (v[1:] - v[:-1])[:, None] * (x - a[:, None]) / (b - a)[:, None]
        wts = (0.5 * (b - a)[:, None] * gw[None, :] * dens).ravel()
        out = out + np.exp(1j * t[:, None] * x.ravel()[None, :]) @ wts
    return out


def irwin_hall_cdf(x, n):
    """Distribution function of the sum of ``n`` independent uniforms on (0, 1)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for k in range(n + 1):
        out += (-1) ** k * math.comb(n, k) * np.maximum(x - k, 0.0) ** n
    return np.clip(out / math.factorial(n), 0.0, 1.0)


def integral_by_quadrature(m, f, order=20):
    """``int f dm`` for a vectorized ``f``: atoms summed directly, density cells by Gauss-Legendre."""
    out = np.sum(m.atoms_w * f(m.atoms_x)) if m.atoms_x.size else 0.0
    d = m.density
    if d is not None:
        v = d.values
        nodes = np.linspace(d.lo, d.hi, v.size)
        gx, gw = np.polynomial.legendre.leggauss(order)
        a, b = nodes[:-1], nodes[1:]
        x = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * gx[None, :]
        dens = v[:-1, None] + (v[1:] - v[:-1])[:, None] * (x - a[:, None]) / (b - a)[:, None]
        out = out + np.sum(0.5 * (b - a)[:, None] * gw[None, :] * dens * f(x))
    return out


def free_phi(gamma, sigma, z):
    return gamma + integral_by_quadrature(sigma, lambda t: (1 + t * z) / (z - t))


def classical_exponent(gamma, sigma, t):
    """``i gamma t + int (e^{itx} - 1 - itx/(1+x^2)) (1+x^2)/x^2 dsigma``, written as
    ``(1+x^2)/x^2 (e^{itx} - 1 - itx) + itx``; the bracket is ``-2 sin^2(u/2) + i(sin u - u)``."""

    def kernel(x):
        x = np.asarray(x, dtype=float)
        u = t * x
        small = np.abs(u) < 1e-2
        safe = np.where(small, 1.0, x)
        big = (1 + x * x) / (safe * safe) * (-2 * np.sin(u / 2) ** 2 + 1j * (np.sin(u) - u)) + 1j * u
        # u -> 0: (1+x^2) t^2 (-1/2 - iu/6 + u^2/24) + itx
        ser = (1 + x * x) * t * t * (-0.5 - 1j * u / 6 + u * u / 24) + 1j * u
        return np.where(small, ser, big)

    return 1j * gamma * t + integral_by_quadrature(sigma, kernel)

"""Named reference laws as :class:`Measure` values.

Densities are sampled from their closed forms; at an integrable edge
singularity the end sample is chosen so that the first (or last) cell
carries its exact mass.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate as _quad
from scipy import stats

from .measure import DEFAULT_POINTS, Measure, density_from_cell_masses


def point_mass(c: float = 0.0) -> Measure:
    return Measure([c], [1.0])


def symmetric_bernoulli(a: float = 1.0) -> Measure:
    """``(delta_{-a} + delta_a) / 2``."""
    return Measure([-a, a], [0.5, 0.5])


def bernoulli(p: float, lo: float = 0.0, hi: float = 1.0) -> Measure:
    """``(1 - p) delta_lo + p delta_hi``."""
    return Measure([lo, hi], [1.0 - p, p])


def _from_cdf(cdf, lo, hi, n_points):
    """Piecewise-linear density whose mass on every dual cell matches ``cdf``.

    Matching dual-cell masses keeps the interpolant accurate to O(h^2) even
    next to square-root or inverse-square-root edges.
    """
    x = np.linspace(lo, hi, n_points)
    edges = np.concatenate([[lo], 0.5 * (x[:-1] + x[1:]), [hi]])
    return Measure(density=density_from_cell_masses(lo, hi, np.diff(cdf(edges))))


def _quad_cdf(pdf, lo, hi):
    """Distribution function of ``pdf`` on ``[lo, hi]`` by cellwise quadrature."""

    def cdf(edges):
        edges = np.clip(np.asarray(edges, dtype=float), lo, hi)
        cells = [_quad.quad(pdf, a, b, limit=200)[0] if b > a else 0.0
                 for a, b in zip(edges[:-1], edges[1:])]
        return np.concatenate([[0.0], np.cumsum(cells)])

    return cdf


def semicircle(variance: float = 1.0, center: float = 0.0, n_points: int = DEFAULT_POINTS) -> Measure:
    """Wigner semicircle with the given variance (radius ``2 sqrt(variance)``)."""
    r = 2.0 * math.sqrt(variance)

    def cdf(t):
        u = np.clip((np.asarray(t) - center) / r, -1.0, 1.0)
        return 0.5 + (u * np.sqrt(1 - u * u) + np.arcsin(u)) / math.pi

    return _from_cdf(cdf, center - r, center + r, n_points)


def arcsine(radius: float = 2.0, n_points: int = DEFAULT_POINTS) -> Measure:
    """Density ``1 / (pi sqrt(radius^2 - t^2))`` on ``(-radius, radius)``."""

    def cdf(t):
        return 0.5 + np.arcsin(np.clip(np.asarray(t) / radius, -1.0, 1.0)) / math.pi

    return _from_cdf(cdf, -radius, radius, n_points)


def marchenko_pastur(rate: float = 1.0, n_points: int = DEFAULT_POINTS) -> Measure:
    """Free Poisson law with the given rate and jump size one."""
    a, b = (1 - math.sqrt(rate)) ** 2, (1 + math.sqrt(rate)) ** 2

    def pdf(t):
        return math.sqrt(max((b - t) * (t - a), 0.0)) / (2 * math.pi * t)

    cont = _from_cdf(_quad_cdf(pdf, a, b), a, b, n_points)
    if rate >= 1.0:
        return cont
    d = cont.density
    # continuous part carries mass rate, plus an atom 1 - rate at zero
    return Measure([0.0], [1.0 - rate], (d.lo, d.hi, d.values * rate))


def gaussian(mean: float = 0.0, variance: float = 1.0, n_points: int = DEFAULT_POINTS,
             width: float = 10.0) -> Measure:
    sd = math.sqrt(variance)
    return _from_cdf(lambda t: stats.norm.cdf(t, mean, sd), mean - width * sd, mean + width * sd, n_points)


def poisson(rate: float = 1.0, jump: float = 1.0, tail: float = 1e-16) -> Measure:
    kmax = int(stats.poisson.isf(tail, rate)) + 1
    k = np.arange(kmax + 1)
    return Measure(jump * k, stats.poisson.pmf(k, rate))


def uniform(lo: float = -1.0, hi: float = 1.0, n_points: int = DEFAULT_POINTS) -> Measure:
    return Measure(density=(lo, hi, np.ones(n_points)))


LAWS = {
    "point_mass": point_mass,
    "symmetric_bernoulli": symmetric_bernoulli,
    "bernoulli": bernoulli,
    "semicircle": semicircle,
    "arcsine": arcsine,
    "marchenko_pastur": marchenko_pastur,
    "gaussian": gaussian,
    "poisson": poisson,
    "uniform": uniform,
}


def named(name: str, **params) -> Measure:
    try:
        return LAWS[name](**params)
    except KeyError:
        raise ValueError(f"unknown law {name!r}; known: {sorted(LAWS)}") from None

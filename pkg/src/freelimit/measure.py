"""Finite Borel measures on the real line.

A :class:`Measure` is a finite list of atoms plus an optional density that is
piecewise linear on a uniform grid.  The same type houses probability
measures (normalized at construction) and the finite positive measures that
appear as Levy-Hincin generators (built with :meth:`Measure.finite`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded

MASS_TOL = 1e-9
DEFAULT_POINTS = 2048

# query points within this relative distance of an atom are treated as hitting it
_SNAP = 1e-12


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    n_points: int = DEFAULT_POINTS

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or not self.lo < self.hi:
            raise ValueError(f"grid needs lo < hi, got [{self.lo}, {self.hi}]")
        if int(self.n_points) < 2:
            raise ValueError("grid needs at least two points")

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, int(self.n_points))

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (int(self.n_points) - 1)


class Density:
    """Nonnegative samples on ``linspace(lo, hi, len(values))``, linearly interpolated."""

    __slots__ = ("lo", "hi", "values", "nodes", "step")

    def __init__(self, lo, hi, values):
        values = np.array(values, dtype=float).ravel()
        lo, hi = float(lo), float(hi)
        if values.size < 2:
            raise ValueError("density needs at least two samples")
        if not lo < hi:
            raise ValueError(f"density needs lo < hi, got [{lo}, {hi}]")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("density samples must be finite and nonnegative")
        values.setflags(write=False)
        self.lo, self.hi, self.values = lo, hi, values
        self.nodes = np.linspace(lo, hi, values.size)
        self.step = (hi - lo) / (values.size - 1)

    @property
    def mass(self) -> float:
        v = self.values
        return float(self.step * (v.sum() - 0.5 * (v[0] + v[-1])))

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights times samples: the mass attached to each node."""
        w = self.values * self.step
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def cumulative(self) -> np.ndarray:
        v = self.values
        return np.concatenate([[0.0], np.cumsum(0.5 * self.step * (v[:-1] + v[1:]))])


class Measure:
    """Atoms plus an optional piecewise-linear density.

    ``Measure(...)`` rescales to total mass one; use :meth:`finite` for
    generator measures whose mass is arbitrary (possibly zero).
    """

    __slots__ = ("atoms_x", "atoms_w", "density", "total_mass", "_key")

    def __init__(self, atoms_x=(), atoms_w=(), density=None, *, normalize=True):
        x = np.asarray(atoms_x, dtype=float).ravel()
        w = np.asarray(atoms_w, dtype=float).ravel()
        if x.shape != w.shape:
            raise ValueError("atom locations and masses differ in length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
            raise ValueError("atoms must be finite")
        if np.any(w < 0):
            raise ValueError("atom masses must be nonnegative")
        if x.size:
            ux, inv = np.unique(x, return_inverse=True)
            uw = np.bincount(inv.ravel(), weights=w, minlength=ux.size)
            keep = uw > 0
            x, w = ux[keep], uw[keep]
        if density is not None and not isinstance(density, Density):
            density = Density(*density)
        if density is not None and not np.any(density.values > 0):
            density = None
        total = float(w.sum()) + (density.mass if density is not None else 0.0)
        if normalize:
            if not total > 0:
                raise ValueError("cannot normalize a measure of zero mass")
            # already normalized up to rounding: leave the values alone so that
            # normalizing is idempotent and serialization round trips exactly
            if abs(total - 1.0) > 8 * np.finfo(float).eps:
                w = w / total
                if density is not None:
                    density = Density(density.lo, density.hi, density.values / total)
                total = float(w.sum()) + (density.mass if density is not None else 0.0)
        x.setflags(write=False)
        w.setflags(write=False)
        self.atoms_x, self.atoms_w, self.density = x, w, density
        self.total_mass = total
        self._key = None

    @classmethod
    def finite(cls, atoms_x=(), atoms_w=(), density=None) -> "Measure":
        return cls(atoms_x, atoms_w, density, normalize=False)

    @classmethod
    def point(cls, c: float, mass: float = 1.0) -> "Measure":
        return cls([c], [mass], normalize=False)

    @property
    def is_atomic(self) -> bool:
        return self.density is None

    @property
    def is_point_mass(self) -> bool:
        return self.density is None and self.atoms_x.size == 1

    @property
    def is_probability(self) -> bool:
        return abs(self.total_mass - 1.0) <= MASS_TOL

    def support(self) -> tuple[float, float]:
        """Smallest closed interval holding atoms and the density window."""
        pts = list(self.atoms_x[[0, -1]]) if self.atoms_x.size else []
        if self.density is not None:
            pts += [self.density.lo, self.density.hi]
        if not pts:
            return (0.0, 0.0)
        return (float(min(pts)), float(max(pts)))

    def key(self) -> bytes:
        """Hashable fingerprint; equal keys mean identical representations."""
        if self._key is None:
            parts = [self.atoms_x.tobytes(), b"|", self.atoms_w.tobytes()]
            if self.density is not None:
                d = self.density
                parts += [b"|", np.array([d.lo, d.hi]).tobytes(), d.values.tobytes()]
            self._key = b"".join(parts)
        return self._key

    def __eq__(self, other):
        return isinstance(other, Measure) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        dens = "" if self.density is None else (
            f", density=[{self.density.lo:g}, {self.density.hi:g}] x {self.density.values.size}")
        return f"Measure({self.atoms_x.size} atoms{dens}, mass={self.total_mass:.12g})"

    def to_dict(self) -> dict:
        out = {}
        if self.atoms_x.size:
            out["atoms"] = [{"x": float(x), "w": float(w)} for x, w in zip(self.atoms_x, self.atoms_w)]
        if self.density is not None:
            d = self.density
            out["density"] = {"lo": d.lo, "hi": d.hi, "values": d.values.tolist()}
        return out

    @classmethod
    def from_dict(cls, data: dict, *, normalize=True) -> "Measure":
        if not isinstance(data, dict):
            raise ValueError("measure JSON must be an object")
        atoms = data.get("atoms", [])
        xs = [float(a["x"]) for a in atoms]
        ws = [float(a["w"]) for a in atoms]
        dens = data.get("density")
        density = None if dens is None else Density(dens["lo"], dens["hi"], dens["values"])
        return cls(xs, ws, density, normalize=normalize)


def load_measure(path, *, normalize=True) -> Measure:
    return Measure.from_dict(json.loads(Path(path).read_text()), normalize=normalize)


def save_measure(m: Measure, path) -> None:
    Path(path).write_text(json.dumps(m.to_dict()))


def _rebuild(m: Measure, atoms_x, density) -> Measure:
    # bypasses renormalization so that masses are carried over bit for bit
    out = Measure.finite(atoms_x, m.atoms_w, density)
    out.total_mass = m.total_mass
    return out


def shift(m: Measure, a: float) -> Measure:
    """Translate by ``a``: the image of ``m`` under ``t -> t + a``."""
    d = m.density
    dens = None if d is None else Density(d.lo + a, d.hi + a, d.values)
    return _rebuild(m, m.atoms_x + a, dens)


def dilate(m: Measure, s: float) -> Measure:
    """Image of ``m`` under ``t -> s t``."""
    if s == 0:
        return Measure.point(0.0, m.total_mass)
    d = m.density
    dens = None
    if d is not None:
        if s > 0:
            dens = Density(d.lo * s, d.hi * s, d.values / s)
        else:
            dens = Density(d.hi * s, d.lo * s, d.values[::-1] / -s)
    out = Measure.finite(m.atoms_x * s, m.atoms_w, dens)
    return out


def reweight(m: Measure, weight) -> Measure:
    """The finite measure ``weight(t) dm(t)``; the density is reweighted at its nodes."""
    w = m.atoms_w * np.asarray(weight(m.atoms_x), dtype=float) if m.atoms_x.size else m.atoms_w
    dens = None
    if m.density is not None:
        d = m.density
        dens = Density(d.lo, d.hi, d.values * np.asarray(weight(d.nodes), dtype=float))
    return Measure.finite(m.atoms_x, w, dens)


def superpose(measures, coefficients=None) -> Measure:
    """Finite linear combination with nonnegative coefficients.

    Densities on one common grid add exactly; otherwise they are interpolated
    onto a merged grid with the finest of the input spacings, each rescaled
    to keep its mass.
    """
    measures = list(measures)
    if coefficients is None:
        coefficients = [1.0] * len(measures)
    xs = np.concatenate([m.atoms_x for m in measures] + [np.empty(0)])
    ws = np.concatenate([c * m.atoms_w for m, c in zip(measures, coefficients)] + [np.empty(0)])
    dens = [(m.density, c) for m, c in zip(measures, coefficients) if m.density is not None]
    density = None
    if dens:
        first = dens[0][0]
        if all(d.lo == first.lo and d.hi == first.hi and d.values.size == first.values.size
               for d, _ in dens):
            density = Density(first.lo, first.hi, sum(c * d.values for d, c in dens))
        else:
            lo = min(d.lo for d, _ in dens)
            hi = max(d.hi for d, _ in dens)
            h = min(d.step for d, _ in dens)
            n = int(np.ceil((hi - lo) / h)) + 1
            nodes = np.linspace(lo, hi, n)
            vals = np.zeros(n)
            for d, c in dens:
                part = Density(lo, hi, np.interp(nodes, d.nodes, d.values, left=0.0, right=0.0))
                # each component keeps its own mass through the resampling
                if part.mass > 0:
                    vals += c * part.values * (d.mass / part.mass)
            density = Density(lo, hi, vals)
    return Measure.finite(xs, ws, density)


def coarsened(m: Measure, n_points: int) -> Measure:
    """Same measure with the density resampled onto ``n_points`` nodes (mass preserved)."""
    d = m.density
    if d is None or d.values.size <= n_points:
        return m
    nodes = np.linspace(d.lo, d.hi, n_points)
    vals = np.interp(nodes, d.nodes, d.values)
    coarse = Density(d.lo, d.hi, vals)
    if coarse.mass > 0:
        coarse = Density(d.lo, d.hi, vals * (d.mass / coarse.mass))
    return Measure.finite(m.atoms_x, m.atoms_w, coarse)


def density_from_cell_masses(lo: float, hi: float, masses) -> Density:
    """Piecewise-linear density whose mass on every dual cell is prescribed.

    Dual cells are ``[x_j - h/2, x_j + h/2]`` clipped to ``[lo, hi]``, one
    per node.  Matching them is a tridiagonal solve; negative values (from
    ringing next to features narrower than a cell) are clipped to zero.
    """
    masses = np.asarray(masses, dtype=float)
    n = masses.size
    h = (hi - lo) / (n - 1)
    bands = np.zeros((3, n))
    bands[0, 1:] = h / 8
    bands[1, :] = 6 * h / 8
    bands[2, :-1] = h / 8
    bands[1, 0] = bands[1, -1] = 3 * h / 8
    return Density(lo, hi, np.maximum(solve_banded((1, 1), bands, masses), 0.0))


def _density_cdf(d: Density, x: np.ndarray) -> np.ndarray:
    cum = d.cumulative()
    n = d.values.size
    j = np.clip(np.floor((x - d.lo) / d.step).astype(np.int64), 0, n - 2)
    dx = np.clip(x - d.nodes[j], 0.0, d.step)
    v0, v1 = d.values[j], d.values[j + 1]
    out = cum[j] + v0 * dx + (v1 - v0) * dx * dx / (2 * d.step)
    out = np.where(x < d.lo, 0.0, out)
    return np.where(x >= d.hi, cum[-1], out)


def cdf(m: Measure, x):
    """Right-continuous distribution function ``m((-inf, x])``."""
    xa = np.asarray(x, dtype=float)
    out = np.zeros(xa.shape)
    if m.atoms_x.size:
        cw = np.concatenate([[0.0], np.cumsum(m.atoms_w)])
        idx = np.searchsorted(m.atoms_x, xa + _SNAP * (1 + np.abs(xa)), side="right")
        out += cw[idx]
    if m.density is not None:
        out += _density_cdf(m.density, xa)
    out = np.minimum(out, m.total_mass)
    return float(out) if out.ndim == 0 else out


def cdf_left(m: Measure, x):
    """Left limit ``m((-inf, x))``."""
    xa = np.asarray(x, dtype=float)
    out = np.zeros(xa.shape)
    if m.atoms_x.size:
        cw = np.concatenate([[0.0], np.cumsum(m.atoms_w)])
        idx = np.searchsorted(m.atoms_x, xa - _SNAP * (1 + np.abs(xa)), side="left")
        out += cw[idx]
    if m.density is not None:
        out += _density_cdf(m.density, xa)
    out = np.minimum(out, m.total_mass)
    return float(out) if out.ndim == 0 else out


def integrate(m: Measure, f):
    """``sum_atoms w f(x)`` plus the trapezoid rule for ``f * density``.

    ``f`` is called on arrays and may return real or complex values.
    """
    total = 0.0
    if m.atoms_x.size:
        fa = np.asarray(f(m.atoms_x))
        if not np.all(np.isfinite(fa)):
            raise ValueError("integrand is not finite on the atoms")
        total = total + np.sum(m.atoms_w * fa)
    if m.density is not None:
        d = m.density
        fd = np.asarray(f(d.nodes))
        w = d.weights
        live = w > 0
        if not np.all(np.isfinite(fd[live])):
            raise ValueError("integrand is not finite on the density support")
        total = total + np.sum(w[live] * fd[live])
    if np.iscomplexobj(total):
        return complex(total)
    return float(total)


def mean(m: Measure) -> float:
    return integrate(m, lambda t: t) / m.total_mass


def variance(m: Measure) -> float:
    mu = mean(m)
    return integrate(m, lambda t: (t - mu) ** 2) / m.total_mass


def tail_mass(m: Measure, eps: float) -> float:
    """Mass of ``{t : |t| >= eps}``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    out = float(m.atoms_w[np.abs(m.atoms_x) >= eps].sum())
    if m.density is not None:
        d = m.density
        inner = _density_cdf(d, np.array(eps)) - _density_cdf(d, np.array(-eps))
        out += d.mass - float(inner)
    return max(out, 0.0)


def _probe_points(a: Measure, b: Measure, eps: float) -> np.ndarray:
    pts = [b.atoms_x, a.atoms_x - eps, a.atoms_x + eps, a.atoms_x, b.atoms_x - eps, b.atoms_x + eps]
    for m in (a, b):
        if m.density is not None:
            nodes = m.density.nodes
            mids = 0.5 * (nodes[:-1] + nodes[1:])
            pts += [nodes, nodes - eps, nodes + eps, mids, mids - eps, mids + eps]
    return np.unique(np.concatenate(pts + [np.empty(0)]))


def _levy_band_holds(a: Measure, b: Measure, eps: float, slack: float) -> bool:
    x = _probe_points(a, b, eps)
    if x.size == 0:
        return abs(a.total_mass - b.total_mass) <= eps + slack
    fb, fbl = cdf(b, x), cdf_left(b, x)
    upper, upper_l = cdf(a, x + eps) + eps, cdf_left(a, x + eps) + eps
    lower, lower_l = cdf(a, x - eps) - eps, cdf_left(a, x - eps) - eps
    if np.any(fb > upper + slack) or np.any(fbl > upper_l + slack):
        return False
    if np.any(fb < lower - slack) or np.any(fbl < lower_l - slack):
        return False
    # tails beyond every probe point
    if b.total_mass > a.total_mass + eps + slack or b.total_mass < a.total_mass - eps - slack:
        return False
    return True


def levy_distance(a: Measure, b: Measure, tol: float = 1e-6, slack: float = 1e-12) -> float:
    """Levy distance between the distribution functions of ``a`` and ``b``.

    Exact for purely atomic measures (the infimum lies in a finite candidate
    set); otherwise bisection to ``tol`` over a merged grid of atoms and nodes.
    The result is symmetrized so that rounding never breaks symmetry.
    """
    return max(_levy_one_sided(a, b, tol, slack), _levy_one_sided(b, a, tol, slack))


def _levy_one_sided(a: Measure, b: Measure, tol: float, slack: float) -> float:
    if _levy_band_holds(a, b, 0.0, slack):
        return 0.0
    cap = 1.0 if a.is_probability and b.is_probability else max(a.total_mass, b.total_mass, 1e-300)
    if a.is_atomic and b.is_atomic:
        gaps = np.abs(a.atoms_x[:, None] - b.atoms_x[None, :]).ravel()
        la = np.concatenate([[0.0], np.cumsum(a.atoms_w)])
        lb = np.concatenate([[0.0], np.cumsum(b.atoms_w)])
        levels = np.abs(la[:, None] - lb[None, :]).ravel()
        cand = np.unique(np.concatenate([[0.0, cap], gaps, levels]))
        cand = cand[cand <= cap]
        # feasibility is monotone in eps and constant between candidates
        lo, hi = 0, cand.size - 1
        while lo < hi:
            mid = (lo + hi) // 2
            probe = 0.5 * (cand[mid] + cand[mid + 1])
            if _levy_band_holds(a, b, probe, slack):
                hi = mid
            else:
                lo = mid + 1
        return float(cand[lo])
    lo, hi = 0.0, cap
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _levy_band_holds(a, b, mid, slack):
            hi = mid
        else:
            lo = mid
    return hi


def kolmogorov_distance(a: Measure, b: Measure) -> float:
    """``sup_x |F_a(x) - F_b(x)|`` over atoms, nodes and cell midpoints."""
    x = _probe_points(a, b, 0.0)
    if x.size == 0:
        return abs(a.total_mass - b.total_mass)
    d1 = np.abs(cdf(a, x) - cdf(b, x)).max()
    d2 = np.abs(cdf_left(a, x) - cdf_left(b, x)).max()
    return float(max(d1, d2, abs(a.total_mass - b.total_mass)))


def distance(a: Measure, b: Measure, metric: str = "levy") -> float:
    if metric == "levy":
        return levy_distance(a, b)
    if metric == "kolmogorov":
        return kolmogorov_distance(a, b)
    raise ValueError(f"unknown metric {metric!r}")

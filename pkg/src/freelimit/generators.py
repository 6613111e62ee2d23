"""Generator pairs ``(gamma, sigma)`` and the infinitely divisible laws they define.

Free side: ``phi(z) = gamma + int (1 + tz)/(z - t) dsigma(t)``.  Classical
side: ``log nu_hat(t) = i gamma t + int (e^{itx} - 1 - itx/(1+x^2)) (1+x^2)/x^2 dsigma(x)``
with the integrand read as ``-t^2/2`` at ``x = 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classical import invert_char, merge_atoms
from .errors import DomainError
from .freeconv import _System, auto_grid, ladder_solve
from .measure import DEFAULT_POINTS, GridSpec, Measure, coarsened, integrate, superpose
from .transform import cauchy_kernels, stieltjes_invert

POISSON_TAIL = 1e-17


@dataclass(frozen=True)
class GeneratorPair:
    gamma: float
    sigma: Measure

    def __post_init__(self):
        if not math.isfinite(self.gamma):
            raise ValueError("gamma must be finite")
        if not self.sigma.total_mass >= 0:
            raise ValueError("sigma must be a finite positive measure")

    @classmethod
    def of(cls, gamma: float, atoms_x=(), atoms_w=(), density=None) -> "GeneratorPair":
        return cls(float(gamma), Measure.finite(atoms_x, atoms_w, density))

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "sigma": self.sigma.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorPair":
        return cls(float(data["gamma"]), Measure.from_dict(data.get("sigma", {}), normalize=False))

    def __add__(self, other: "GeneratorPair") -> "GeneratorPair":
        return GeneratorPair(self.gamma + other.gamma, superpose([self.sigma, other.sigma]))


def load_pair(path) -> GeneratorPair:
    return GeneratorPair.from_dict(json.loads(Path(path).read_text()))


def save_pair(g: GeneratorPair, path) -> None:
    Path(path).write_text(json.dumps(g.to_dict(), indent=1))


def _phi_and_slope(sigma: Measure, gamma: float, w):
    # int (1 + tw)/(w - t) dsigma = G + w K, and d/dw = (1 + w^2) G' + K + w G
    g, dg, k = cauchy_kernels(sigma, w)
    return gamma + g + w * k, (1.0 + w * w) * dg + k + w * g


def phi_free(g: GeneratorPair, z):
    """``gamma + int (1 + tz)/(z - t) dsigma(t)``."""
    za = np.asarray(z, dtype=complex)
    if not np.all(za.imag > 0):
        raise DomainError("phi_free needs Im z > 0")
    val = _phi_and_slope(g.sigma, g.gamma, za)[0] if g.sigma.total_mass > 0 else np.full(za.shape, g.gamma, complex)
    return complex(val) if za.ndim == 0 else val


def _classical_kernel(t, x):
    """``(e^{itx} - 1 - itx/(1+x^2)) (1+x^2)/x^2`` on a broadcast grid, ``-t^2/2`` at ``x = 0``."""
    t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
    u = t * x
    out = np.empty(u.shape, complex)
    small = np.abs(u) < 1e-3
    # e^{iu} - 1 - iu = -u^2/2 - i u^3/6 + u^4/24, divided by x^2
    us, ts = u[small], t[small]
    out[small] = (1.0 + x[small] ** 2) * ts * ts * (-0.5 - 1j * us / 6 + us * us / 24)
    ub, xb = u[~small], x[~small]
    out[~small] = (np.expm1(1j * ub) - 1j * ub) * (1.0 + xb * xb) / (xb * xb)
    # the itx - itx/(1+x^2) correction times (1+x^2)/x^2 is itx
    return out + 1j * t * x


def char_exponent_classical(g: GeneratorPair, t):
    """``i gamma t + int (e^{itx} - 1 - itx/(1+x^2)) (1+x^2)/x^2 dsigma(x)``."""
    ta = np.asarray(t, dtype=float)
    flat = ta.ravel()
    s = g.sigma
    out = 1j * g.gamma * flat
    if s.atoms_x.size:
        out = out + _classical_kernel(flat[:, None], s.atoms_x[None, :]) @ s.atoms_w
    if s.density is not None:
        d = s.density
        out = out + _classical_kernel(flat[:, None], d.nodes[None, :]) @ (d.weights)
    out = out.reshape(ta.shape)
    return complex(out) if ta.ndim == 0 else out


class LevyHincinSystem(_System):
    """``w + phi(w) = z`` for ``w = F(z)``; the measure has ``G = 1/w``."""

    def __init__(self, g: GeneratorPair):
        self.gamma = g.gamma
        self.sigma = g.sigma
        d = g.sigma.density
        if d is not None and d.values.size > 512:
            self.coarse = coarsened(g.sigma, 256)
            self.fine_height = 4.0 * self.coarse.density.step
        else:
            self.coarse = g.sigma
            self.fine_height = np.inf

    def _phi(self, w, y):
        fine = y < self.fine_height
        if fine.all() or self.coarse is self.sigma:
            return _phi_and_slope(self.sigma, self.gamma, w)
        val = np.empty(w.shape, complex)
        slope = np.empty(w.shape, complex)
        if fine.any():
            val[fine], slope[fine] = _phi_and_slope(self.sigma, self.gamma, w[fine])
        val[~fine], slope[~fine] = _phi_and_slope(self.coarse, self.gamma, w[~fine])
        return val, slope

    def init(self, z):
        return z[:, None].copy()

    def residual(self, z, u, y):
        val, slope = self._phi(u[:, 0], y)
        return (u[:, 0] + val - z)[:, None], (1.0 + slope)[:, None, None]

    def fixed_point(self, z, u, y):
        return (z - self._phi(u[:, 0], y)[0])[:, None]


def _spread(sigma: Measure):
    lo, hi = sigma.support()
    return max(abs(lo), abs(hi))


class LevyHincinCauchy:
    """Cauchy transform of the free law with generator ``g``, evaluated on demand."""

    def __init__(self, g: GeneratorPair):
        self.system = LevyHincinSystem(g)
        var = float(integrate(g.sigma, lambda t: 1.0 + t * t).real)
        self.y_top = max(10.0, 8.0 * math.sqrt(var) + 4.0 * _spread(g.sigma))

    def __call__(self, z):
        za = np.asarray(z, dtype=complex)
        u = ladder_solve(self.system, za.ravel(), self.y_top)
        return (1.0 / u[:, 0]).reshape(za.shape)


def _moments(g: GeneratorPair):
    """Mean and variance of either law: ``gamma + int t dsigma`` and ``int (1+t^2) dsigma``."""
    m1 = float(integrate(g.sigma, lambda t: t).real) if g.sigma.total_mass > 0 else 0.0
    var = float(integrate(g.sigma, lambda t: 1.0 + t * t).real) if g.sigma.total_mass > 0 else 0.0
    return g.gamma + m1, var


def materialize_free(g: GeneratorPair, grid: GridSpec | None = None, eps: float = 1e-3) -> Measure:
    """The free infinitely divisible law whose ``F^{-1}(z)`` is ``z + phi(z)``."""
    if g.sigma.total_mass == 0:
        return Measure([g.gamma], [1.0])
    cauchy = LevyHincinCauchy(g)
    if grid is None:
        mu, var = _moments(g)
        half = 6.0 * math.sqrt(var) + 2.0 * _spread(g.sigma) + 1.0
        grid = auto_grid(cauchy, mu - half, mu + half)
    return stieltjes_invert(cauchy, grid, eps)


def _compound_poisson(jx, jw, drift):
    """Atoms of ``delta_drift * exp(J - |J|)`` for the finite jump measure ``J``, or ``None``."""
    lam = float(jw.sum())
    base = (jx, jw / lam)
    term = (np.array([0.0]), np.array([1.0]))
    k, pk = 0, math.exp(-lam)
    xs, ws = [np.array([drift])], [np.array([pk])]
    tail = 1.0 - pk
    while tail > POISSON_TAIL and k < 10_000:
        k += 1
        pk *= lam / k
        tx, tw = term
        tx, tw = merge_atoms((tx[:, None] + base[0][None, :]).ravel(), (tw[:, None] * base[1][None, :]).ravel())
        if tx.size > 1 << 14:
            return None
        term = (tx, tw)
        xs.append(tx + drift)
        ws.append(tw * pk)
        tail -= pk
    return merge_atoms(np.concatenate(xs), np.concatenate(ws))


def materialize_classical(g: GeneratorPair, grid: GridSpec | None = None,
                          n_points: int = DEFAULT_POINTS) -> Measure:
    """The classical infinitely divisible law with generator ``g``.

    An atomic ``sigma`` without mass at zero is a compound Poisson law and
    comes out exactly as atoms; otherwise ``exp`` of the exponent is
    inverted by FFT.
    """
    s = g.sigma
    nonzero = s.atoms_x != 0
    jx = s.atoms_x[nonzero]
    jw = s.atoms_w[nonzero] * (1.0 + jx * jx) / (jx * jx)
    drift = g.gamma - float(np.sum(s.atoms_w[nonzero] / jx))
    gauss = float(s.atoms_w[~nonzero].sum())

    if s.density is None and gauss == 0.0:
        if jx.size == 0:
            return Measure([g.gamma], [1.0])
        atoms = _compound_poisson(jx, jw, drift)
        if atoms is not None:
            return Measure(*atoms)

    atoms = (np.zeros(0), np.zeros(0))
    d = s.density
    finite_jumps = gauss == 0.0 and (d is None or _density_avoids_zero(d))
    if finite_jumps and d is not None:
        # finite Levy measure: the atomic part is exp(-|density jumps|) times the atomic law
        lam_c = float(np.sum(d.weights * (1.0 + d.nodes ** 2) / np.where(d.nodes == 0, 1.0, d.nodes ** 2)))
        drift_c = -float(np.sum(d.weights / np.where(d.nodes == 0, np.inf, d.nodes)))
        found = _compound_poisson(jx, jw, drift + drift_c) if jx.size else (np.array([drift + drift_c]), np.ones(1))
        if found is not None:
            atoms = (found[0], found[1] * math.exp(-lam_c))

    def phi(t):
        return np.exp(char_exponent_classical(g, t))

    if grid is None:
        mu, var = _moments(g)
        half = 12.0 * math.sqrt(var) + 2.0 * _spread(s) + 1e-3
        grid = GridSpec(mu - half, mu + half, n_points)
    return invert_char(phi, atoms, grid, what="classical law")


def _density_avoids_zero(d) -> bool:
    """True when the density vanishes on a neighbourhood of zero (finite jump intensity)."""
    v = d.values
    live = (v[:-1] > 0) | (v[1:] > 0)
    left, right = d.nodes[:-1][live], d.nodes[1:][live]
    return not np.any((left <= 0) & (right >= 0))

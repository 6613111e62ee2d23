"""Classical convolution through characteristic functions.

Purely atomic inputs are convolved exactly as long as the merged atom count
stays small; everything else goes through the characteristic function,
which for the piecewise-linear density part is computed in closed form, and
is inverted with one FFT onto the dual cells of the output grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MassDefect
from .measure import DEFAULT_POINTS, Density, GridSpec, Measure, density_from_cell_masses, mean, shift, variance

ATOM_CAP = 1 << 14
GRID_MASS_MIN = 0.98


@dataclass(frozen=True)
class CharFunction:
    """Samples of ``t -> int exp(itx) dm(x)`` on a real grid."""

    t_grid: np.ndarray
    values: np.ndarray

    def violations(self) -> dict[str, float]:
        """Size of each invariant violation (all should be ~0)."""
        t, v = self.t_grid, self.values
        out = {"modulus": float(max(0.0, np.max(np.abs(v)) - 1.0))}
        zero = np.flatnonzero(t == 0)
        out["origin"] = float(abs(v[zero[0]] - 1.0)) if zero.size else 0.0
        # pairs (t, -t) present in the grid
        idx = np.searchsorted(t, -t)
        ok = (idx < t.size) & (t[np.minimum(idx, t.size - 1)] == -t)
        out["hermitian"] = float(np.max(np.abs(v[idx[ok]] - np.conj(v[ok])), initial=0.0))
        return out


def _half_hat(t, h):
    """``int_0^h (1 - s/h) exp(its) ds``."""
    th = t * h
    out = np.empty(t.shape, complex)
    small = np.abs(th) < 1e-2
    ts = 1j * th[small]
    # h sum (i t h)^k / (k + 2)!
    out[small] = h * (0.5 + ts / 6 + ts**2 / 24 + ts**3 / 120 + ts**4 / 720)
    tb, thb = t[~small], th[~small]
    out[~small] = 1j / tb - (np.exp(1j * thb) - 1.0) / (tb * thb)
    return out


def _density_ft(d, t):
    """Exact Fourier transform of a piecewise-linear density."""
    h = d.step
    hat = h * np.sinc(t * h / (2 * np.pi)) ** 2
    x, v = d.nodes, d.values
    out = np.zeros(t.shape, complex)
    inner = np.flatnonzero(v[1:-1] > 0) + 1
    for lo in range(0, t.size, 512):
        tt = t[lo:lo + 512, None]
        out[lo:lo + 512] = hat[lo:lo + 512] * (np.exp(1j * tt * x[inner]) @ v[inner])
    out += v[0] * np.exp(1j * t * d.lo) * _half_hat(t, h)
    out += v[-1] * np.exp(1j * t * d.hi) * _half_hat(-t, h)
    return out


def _atoms_ft(x, w, t):
    out = np.zeros(t.shape, complex)
    for lo in range(0, t.size, 512):
        out[lo:lo + 512] = np.exp(1j * t[lo:lo + 512, None] * x) @ w
    return out


def char_function(m: Measure, t_grid) -> CharFunction:
    """``t -> int exp(itx) dm(x)`` on ``t_grid`` (density part in closed form)."""
    t = np.asarray(t_grid, dtype=float)
    return CharFunction(t, _char_values(m, t))


def _char_values(m, t):
    vals = _atoms_ft(m.atoms_x, m.atoms_w, t) if m.atoms_x.size else np.zeros(t.shape, complex)
    if m.density is not None:
        vals = vals + _density_ft(m.density, t)
    return vals


def merge_atoms(x, w, rel_tol: float = 1e-12):
    """Sort atoms and merge locations closer than ``rel_tol`` times their scale."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    if x.size < 2:
        return x, w
    tol = rel_tol * max(1.0, float(np.max(np.abs(x))))
    head = np.concatenate([[True], np.diff(x) > tol])
    group = np.cumsum(head) - 1
    mass = np.bincount(group, weights=w)
    loc = np.bincount(group, weights=w * x) / np.where(mass > 0, mass, 1.0)
    loc = np.where(mass > 0, loc, x[head])
    keep = mass > 0
    return loc[keep], mass[keep]


def _atom_conv(a, b):
    """Exact convolution of two atom lists, or ``None`` past the cap."""
    (xa, wa), (xb, wb) = a, b
    if xa.size * xb.size > 4 * ATOM_CAP:
        return None
    x, w = merge_atoms((xa[:, None] + xb[None, :]).ravel(), (wa[:, None] * wb[None, :]).ravel())
    return None if x.size > ATOM_CAP else (x, w)


def _atom_power(base, k):
    """``base`` convolved with itself ``k`` times by repeated squaring."""
    result = (np.zeros(1), np.ones(1))
    while k:
        if k & 1:
            result = _atom_conv(result, base)
            if result is None:
                return None
        k >>= 1
        if k:
            base = _atom_conv(base, base)
            if base is None:
                return None
    return result


def _group(ms):
    groups: dict[bytes, list] = {}
    for m in ms:
        key = m.key()
        if key in groups:
            groups[key][1] += 1
        else:
            groups[key] = [m, 1]
    return list(groups.values())


def exact_atom_convolution(factors):
    """Exact atoms of the convolution of ``(measure, multiplicity)`` pairs, or ``None``."""
    acc = (np.zeros(1), np.ones(1))
    for m, k in factors:
        part = _atom_power((m.atoms_x, m.atoms_w), k)
        if part is None:
            return None
        acc = _atom_conv(acc, part)
        if acc is None:
            return None
    return acc


def invert_char(phi, atoms, grid: GridSpec, what: str = "convolution") -> Measure:
    """Measure with characteristic function ``phi`` whose atoms are known.

    ``phi`` is a vectorized callable of ``t``; ``atoms = (x, w)`` is the
    exact atomic part.  The remainder is inverted by FFT on a periodic
    window twice the grid length and read off as dual-cell masses.
    """
    ax, aw = atoms
    n = grid.n_points
    big = 2 * (1 << int(np.ceil(np.log2(n))))
    h = grid.step
    t = 2 * np.pi * np.fft.fftfreq(big, h)
    cont = phi(t)
    if ax.size:
        cont = cont - _atoms_ft(ax, aw, t)
    # dual-cell masses: convolve with the box of width h, sample at the nodes
    box = np.sinc(t * h / (2 * np.pi))
    cells = np.fft.fft(cont * box * np.exp(-1j * t * grid.lo)).real[:n] / big
    cells[0] *= 0.5
    cells[-1] *= 0.5
    density = density_from_cell_masses(grid.lo, grid.hi, cells)
    found = Measure.finite(ax, aw, density if density.values.any() else None)
    if found.total_mass < GRID_MASS_MIN:
        raise MassDefect(f"grid too small for the {what}: recovered mass {found.total_mass:.4f}")
    d = found.density
    if ax.size and d is not None and aw.sum() < 1.0:
        # keep the exact atoms; the quadrature error goes to the continuous part
        d = Density(d.lo, d.hi, d.values * (1.0 - aw.sum()) / d.mass)
    return Measure(found.atoms_x, found.atoms_w, d)


def _auto_grid(factors, c, n_points):
    lo = c + sum(k * m.support()[0] for m, k in factors)
    hi = c + sum(k * m.support()[1] for m, k in factors)
    mu = c + sum(k * mean(m) for m, k in factors)
    sd = np.sqrt(sum(k * variance(m) for m, k in factors))
    lo, hi = max(lo, mu - 12 * sd), min(hi, mu + 12 * sd)
    pad = 0.05 * (hi - lo) + 1e-3
    return GridSpec(lo - pad, hi + pad, n_points)


def classical_convolve_many(ms, c: float = 0.0, grid: GridSpec | None = None,
                            n_points: int = DEFAULT_POINTS) -> Measure:
    """``ms[0] * ms[1] * ... * delta_c`` as a measure.

    Purely atomic inputs are convolved exactly (atoms within ``1e-12``
    relative distance merged) unless the atom count passes ``ATOM_CAP``.
    """
    ms = list(ms)
    if not ms:
        raise ValueError("classical_convolve_many needs at least one measure")
    factors = _group(ms)
    if all(m.is_atomic for m, _ in factors):
        exact = exact_atom_convolution(factors)
        if exact is not None:
            return Measure(exact[0] + c, exact[1])
    if len(ms) == 1:
        return shift(ms[0], c)

    atomic = [(Measure.finite(m.atoms_x, m.atoms_w), k) for m, k in factors if m.atoms_x.size]
    atoms = (np.zeros(0), np.zeros(0))
    if all(m.atoms_x.size for m, _ in factors):
        # the atomic part of the product is the product of the atomic parts
        found = exact_atom_convolution(atomic)
        if found is not None:
            atoms = (found[0] + c, found[1])

    def phi(t):
        out = np.exp(1j * t * c)
        for m, k in factors:
            out = out * _char_values(m, t) ** k
        return out

    if grid is None:
        grid = _auto_grid(factors, c, n_points)
    return invert_char(phi, atoms, grid)

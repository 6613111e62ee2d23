"""Cauchy, F- and Voiculescu transforms, cone certification and Stieltjes inversion.

The density part of a :class:`~freelimit.measure.Measure` is integrated
exactly against ``1/(z - t)`` (it is piecewise linear), so transforms stay
accurate all the way down to the real axis.  Alongside ``G(z)`` the kernels
return ``G'(z)`` and the first-moment transform ``K(z) = int t/(z - t) dm``,
which gives ``z^2 (G(z) - 1/z) = z K(z)`` and ``F(z) - z`` without the
cancellation that plagues ``1/G(z) - z`` far from the support.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass

import numba
import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ConeSelectionError, DegenerateResidual, DomainError, InversionError, MassDefect
from .measure import Density, GridSpec, Measure, density_from_cell_masses

NEWTON_TOL = 1e-10


@numba.njit(cache=True, nogil=True, fastmath={"nnan", "ninf", "nsz", "contract"})
def _pl_kernel(z, xm, pm, sl, h, out_g, out_dg, out_k):
    # exact integrals of (pm + sl*tau) * {1, t} / (z - t) over each segment
    # [xm - h/2, xm + h/2]; w = z - xm, r = h / (2 w),
    # a = atanh(r) - r, b = r / (1 - r^2) - atanh(r)
    half = 0.5 * h
    for i in range(z.size):
        zr = z[i].real
        zi = z[i].imag
        g = 0j
        dg = 0j
        k = 0j
        for j in range(xm.size):
            wr = zr - xm[j]
            w = complex(wr, zi)
            c = half / (wr * wr + zi * zi)
            r = complex(c * wr, -c * zi)
            r2 = r * r
            q = r2.real * r2.real + r2.imag * r2.imag
            if q < 0.0016:
                # truncation error |r|^(2 nterms) stays below 1e-16 relative
                if q < 1e-12:
                    nterms = 3
                elif q < 1e-8:
                    nterms = 4
                elif q < 1e-5:
                    nterms = 7
                else:
                    nterms = 12
                term = r * r2
                a = 0j
                b = 0j
                for n in range(1, nterms + 1):
                    inv = 1.0 / (2 * n + 1)
                    a += term * inv
                    b += term * (2 * n * inv)
                    term *= r2
            else:
                at = cmath.atanh(r)
                a = at - r
                b = r / (1 - r2) - at
            i0 = 2 * (r + a)
            i1 = 2 * w * a
            j0 = (4 / h) * r * (r + a + b)
            j1 = 2 * b
            p = pm[j]
            s = sl[j]
            x = xm[j]
            g += p * i0 + s * i1
            dg -= p * j0 + s * j1
            k += x * p * i0 + (p + s * x) * i1 + s * w * i1
        out_g[i] = g
        out_dg[i] = dg
        out_k[i] = k


def _segments(d: Density):
    v = d.values
    live = (v[:-1] > 0) | (v[1:] > 0)
    xm = 0.5 * (d.nodes[:-1] + d.nodes[1:])
    pm = 0.5 * (v[:-1] + v[1:])
    sl = (v[1:] - v[:-1]) / d.step
    return np.ascontiguousarray(xm[live]), np.ascontiguousarray(pm[live]), np.ascontiguousarray(sl[live])


def cauchy_kernels(m: Measure, z):
    """Return ``(G, G', K)`` at the points ``z`` (all in the upper half-plane)."""
    za = np.asarray(z, dtype=complex)
    flat = np.ascontiguousarray(za.ravel())
    g = np.zeros(flat.shape, complex)
    dg = np.zeros(flat.shape, complex)
    k = np.zeros(flat.shape, complex)
    if m.atoms_x.size:
        for lo in range(0, flat.size, 4096):
            zz = flat[lo:lo + 4096, None]
            inv = 1.0 / (zz - m.atoms_x[None, :])
            g[lo:lo + 4096] = inv @ m.atoms_w
            dg[lo:lo + 4096] = -(inv * inv) @ m.atoms_w
            k[lo:lo + 4096] = inv @ (m.atoms_w * m.atoms_x)
    if m.density is not None:
        xm, pm, sl = _segments(m.density)
        if xm.size:
            g2 = np.empty_like(g)
            dg2 = np.empty_like(g)
            k2 = np.empty_like(g)
            _pl_kernel(flat, xm, pm, sl, m.density.step, g2, dg2, k2)
            g += g2
            dg += dg2
            k += k2
    shape = za.shape
    return g.reshape(shape), dg.reshape(shape), k.reshape(shape)


def _check_upper(z):
    za = np.asarray(z, dtype=complex)
    if not np.all(za.imag > 0):
        raise DomainError("transform needs Im z > 0")
    return za


def _out(values, like):
    return complex(values) if np.ndim(like) == 0 else values


def cauchy(m: Measure, z):
    """``G(z) = int dm(t) / (z - t)``."""
    za = _check_upper(z)
    return _out(cauchy_kernels(m, za)[0], z)


def f_transform(m: Measure, z):
    """``F(z) = 1 / G(z)``."""
    return _out(1.0 / cauchy_kernels(m, _check_upper(z))[0], z)


def f_excess(m: Measure, z):
    """``z^2 (G(z) - m(R)/z) = int t z / (z - t) dm(t)``, evaluated without cancellation."""
    za = _check_upper(z)
    return _out(za * cauchy_kernels(m, za)[2], z)


def _h_and_slope(m: Measure, z):
    # F(z) - z and F'(z); for mass M, 1 - zG = (1 - M) - K
    g, dg, k = cauchy_kernels(m, z)
    return ((1.0 - m.total_mass) - k) / g, -dg / (g * g)


@dataclass(frozen=True)
class Cone:
    """The truncated cone ``{x + iy : |x| < alpha y, y > beta}``."""

    alpha: float
    beta: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("cone needs alpha > 0")
        if not self.beta >= 1:
            raise ValueError("cone needs beta >= 1")

    def contains(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        return (np.abs(w.real) < self.alpha * w.imag) & (w.imag > self.beta)

    def probes(self, n_rays: int = 9, n_heights: int = 7) -> np.ndarray:
        """Probe points, one row per ray ordered by increasing height.

        An odd ray count puts one ray on the imaginary axis.
        """
        slopes = np.linspace(-0.9, 0.9, n_rays) * self.alpha
        heights = self.beta * np.geomspace(1.02, 40.0, n_heights)
        return slopes[:, None] * heights[None, :] + 1j * heights[None, :]


def _newton(m: Measure, w: np.ndarray, u: np.ndarray, tol: float, maxiter: int = 80):
    """Solve ``u + (F(w + u) - (w + u)) = 0``, i.e. ``F(w + u) = w``, for ``u = phi(w)``.

    Returns ``(u, converged)``.  Steps are halved until the iterate stays in
    the upper half-plane and the residual decreases.
    """
    u = u.astype(complex).copy()
    h, slope = _h_and_slope(m, w + u)
    res = u + h
    scale = tol * (1.0 + np.abs(w))
    done = np.abs(res) <= scale
    stuck = np.zeros(w.shape, bool)
    for _ in range(maxiter):
        act = np.flatnonzero(~done & ~stuck)
        if act.size == 0:
            break
        step = res[act] / slope[act]
        lam = np.ones(act.size)
        pending = np.arange(act.size)
        for _ in range(40):
            idx = act[pending]
            cand = u[idx] - lam[pending] * step[pending]
            inside = (w[idx] + cand).imag > 0
            h2 = np.full(idx.size, np.nan + 0j)
            s2 = np.full(idx.size, np.nan + 0j)
            if inside.any():
                h2[inside], s2[inside] = _h_and_slope(m, w[idx][inside] + cand[inside])
            r2 = cand + h2
            good = inside & (np.abs(r2) < np.abs(res[idx]))
            gi = idx[good]
            u[gi], res[gi], slope[gi] = cand[good], r2[good], s2[good]
            pending = pending[~good]
            if pending.size == 0:
                break
            lam[pending] *= 0.5
        stuck[act[pending]] = True
        done = np.abs(res) <= scale
    # keep stepping while the residual still drops, so phi is accurate well below
    # the stopping tolerance (and a double root at a branch point is approached)
    act = np.flatnonzero(done)
    for _ in range(60):
        if act.size == 0:
            break
        cand = u[act] - res[act] / slope[act]
        inside = (w[act] + cand).imag > 0
        act, cand = act[inside], cand[inside]
        if act.size == 0:
            break
        h2, s2 = _h_and_slope(m, w[act] + cand)
        r2 = cand + h2
        good = np.abs(r2) < np.abs(res[act])
        act, cand, r2, s2 = act[good], cand[good], r2[good], s2[good]
        u[act], res[act], slope[act] = cand, r2, s2
    return u, done


def _continuation(m: Measure, w: complex, anchor: float, tol: float) -> complex:
    top = 1j * anchor
    u, ok = _newton(m, np.array([top]), np.zeros(1, complex), tol)
    if not ok[0]:
        raise InversionError(f"outside invertibility region: anchor {top} did not converge")
    s, ds = 0.0, 0.125
    while s < 1.0:
        s_new = min(1.0, s + ds)
        wt = np.array([top + s_new * (w - top)])
        u_new, ok = _newton(m, wt, u, tol)
        if ok[0]:
            s, u = s_new, u_new
            ds = min(0.25, ds * 1.5)
        else:
            ds *= 0.5
            if ds < 1e-9:
                raise InversionError(f"outside invertibility region: continuation stalled toward w={w}")
    return complex(u[0])


def _phi(m: Measure, w, cone: Cone | None = None, tol: float = NEWTON_TOL):
    wa = _check_upper(w)
    flat = wa.ravel()
    u, ok = _newton(m, flat, np.zeros(flat.shape, complex), tol)
    beta = 1.0 if cone is None else cone.beta
    for i in np.flatnonzero(~ok):
        u[i] = _continuation(m, complex(flat[i]), max(4 * beta, 2 * abs(flat[i])), tol)
    return u.reshape(wa.shape)


def invert_f(m: Measure, w, cone: Cone | None = None):
    """Left inverse of ``F`` on a cone: ``z`` with ``F(z) = w``.

    Newton is seeded at ``w`` (``F(z)/z -> 1`` at infinity); if that fails,
    the root is continued along the segment from a high point on the
    imaginary axis down to ``w``.
    """
    u = _phi(m, w, cone)
    return _out(np.asarray(w, dtype=complex) + u, w)


def voiculescu(m: Measure, w, cone: Cone | None = None):
    """``phi(w) = F^{-1}(w) - w``."""
    return _out(_phi(m, w, cone), w)


def select_cone(ms, alpha: float, cap: float = 1024.0, n_rays: int = 9, n_heights: int = 7) -> Cone:
    """Smallest ``beta`` in ``1, 2, 4, ..., cap`` whose probe set certifies every measure.

    A probe set passes when direct Newton converges at every probe, the
    root continued down each ray from its top probe agrees with the direct
    root, ``F'`` does not vanish there, and ``Im F^{-1}`` increases with
    height along each ray.  This is a heuristic certificate, not a proof.
    """
    ms = list(ms)
    if not ms:
        raise ValueError("select_cone needs at least one measure")
    beta = 1.0
    while beta <= cap:
        cone = Cone(alpha, beta)
        if all(_probes_pass(m, cone, n_rays, n_heights) for m in ms):
            return cone
        beta *= 2.0
    raise ConeSelectionError(f"cone selection failed for alpha={alpha} up to beta={cap}")


def _probes_pass(m: Measure, cone: Cone, n_rays: int, n_heights: int) -> bool:
    w = cone.probes(n_rays, n_heights)
    flat = w.ravel()
    u, ok = _newton(m, flat, np.zeros(flat.shape, complex), NEWTON_TOL)
    if not ok.all():
        return False
    z = (flat + u).reshape(w.shape)
    if np.any(z.imag <= 0):
        return False
    _, slope = _h_and_slope(m, z.ravel())
    if np.any(np.abs(slope) < 1e-8):
        return False
    if np.any(np.diff(z.imag, axis=1) <= 0):
        return False
    for ray in range(w.shape[0]):
        uc = u.reshape(w.shape)[ray, -1:].copy()
        for j in range(w.shape[1] - 2, -1, -1):
            # walk down the ray from the previous probe in a few substeps
            for frac in (0.25, 0.5, 0.75, 1.0):
                wt = w[ray, j + 1] + frac * (w[ray, j] - w[ray, j + 1])
                uc, okc = _newton(m, np.array([wt]), uc, NEWTON_TOL)
                if not okc[0]:
                    return False
            if abs(uc[0] - u.reshape(w.shape)[ray, j]) > 1e-7 * (1 + abs(w[ray, j])):
                return False
    zs = z.ravel()
    gaps = np.abs(zs[:, None] - zs[None, :]) + np.eye(zs.size)
    return bool(np.all(gaps > 1e-12))


def prop23_residual(m: Measure, w, cone: Cone | None = None):
    """``v`` in ``phi(w) = w^2 [G(w) - 1/w] (1 + v)``."""
    den = np.asarray(f_excess(m, w))
    if np.any(np.abs(den) < 1e-14):
        raise DegenerateResidual("degenerate residual: w^2 [G(w) - 1/w] vanishes")
    phi = np.asarray(voiculescu(m, w, cone))
    return _out(phi / den - 1.0, w)


def stieltjes_invert(g, grid: GridSpec, eps: float = 1e-3, atom_threshold: float = 0.1,
                     mass_tol: float = 0.02, refine: int = 2) -> Measure:
    """Recover a probability measure from its Cauchy transform.

    ``g`` is a :class:`Measure` or any vectorized callable ``z -> G(z)``.
    The smoothed density ``-Im g(x + i eps) / pi`` is extrapolated to
    ``eps -> 0`` from ``eps`` and ``eps/2``; atoms are located where
    ``eps |g|`` peaks above ``atom_threshold`` and their Lorentzians are
    removed first.  The extrapolated density is sampled ``refine`` times
    finer than the grid and integrated over dual cells, and the output
    density matches those cell masses.  ``eps`` is raised to two grid steps
    when the grid is coarser than that, since a smoothed peak narrower than
    a cell cannot be represented.
    """
    if isinstance(g, Measure):
        measure = g
        g = lambda z: cauchy_kernels(measure, z)[0]  # noqa: E731
    if not eps > 0:
        raise ValueError("eps must be positive")
    eps = max(eps, 2.0 * grid.step)
    xs = np.linspace(grid.lo, grid.hi, (grid.n_points - 1) * refine + 1)
    # one call for both lines so continuation-based evaluators share their work
    both = np.asarray(g(np.concatenate([xs + 1j * eps, xs + 0.5j * eps])), dtype=complex)
    g1, g2 = both[:xs.size], both[xs.size:]

    atoms_x, atoms_w = _find_atoms(g, xs, g1, eps, atom_threshold, grid.step / refine)
    for a, p in zip(atoms_x, atoms_w):
        g1 = g1 - p / (xs + 1j * eps - a)
        g2 = g2 - p / (xs + 0.5j * eps - a)
    dens = (g1.imag - 2.0 * g2.imag) / np.pi
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(xs))])
    x = grid.nodes
    edges = np.concatenate([[grid.lo], 0.5 * (x[:-1] + x[1:]), [grid.hi]])
    density = density_from_cell_masses(grid.lo, grid.hi, np.diff(np.interp(edges, xs, cum)))
    recovered = Measure.finite(atoms_x, atoms_w, density)
    if abs(recovered.total_mass - 1.0) > mass_tol:
        raise MassDefect(f"inversion mass defect: recovered mass {recovered.total_mass:.6f}")
    return Measure(recovered.atoms_x, recovered.atoms_w, recovered.density)


def _find_atoms(g, x, g1, eps, threshold, step):
    score = eps * np.abs(g1)
    peaks = []
    for j in np.flatnonzero(score > threshold):
        left = score[j - 1] if j > 0 else -np.inf
        right = score[j + 1] if j + 1 < score.size else -np.inf
        if score[j] >= left and score[j] >= right:
            peaks.append(j)
    found_x, found_w = [], []
    half = 0.5 * eps
    for j in peaks:
        lo, hi = x[max(j - 1, 0)], x[min(j + 1, x.size - 1)]

        def neg(t):
            return -abs(complex(np.asarray(g(np.array([t + 1j * half])))[0]))

        loc = minimize_scalar(neg, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12 * max(1.0, abs(lo), abs(hi))}).x
        loc, mass = _fit_pole(g, loc, eps, step)
        if any(abs(loc - a) < step for a in found_x):
            continue
        if mass > 0:
            found_x.append(loc)
            found_w.append(mass)
    return np.array(found_x), np.array(found_w)


def _fit_pole(g, loc, eps, step):
    """Atom position and mass from ``g(z) ~ p/(z - a) + b`` fitted at three heights above ``loc``.

    The peak of ``|g|`` sits ``O(b eps^2 / p)`` off the atom; the fit is
    linear in ``(p - b a, b, a)`` and leaves an ``O(eps^3)`` error.
    """
    z = loc + 1j * eps * np.array([1.0, 0.5, 0.25])
    gz = np.asarray(g(z), dtype=complex)
    # g z = (p - b a) + b z + a g
    coef = np.stack([np.ones(3), z, gz], axis=1)
    try:
        c, b, a = np.linalg.solve(coef, gz * z)
    except np.linalg.LinAlgError:
        a = np.nan
    if np.isfinite(a) and abs(a.real - loc) < step:
        return float(a.real), float((c + b * a).real)
    # fall back to extrapolating eps * Im g from two heights
    pa = -eps * gz[0].imag
    pb = -0.5 * eps * gz[1].imag
    return float(loc), float(2 * pb - pa)

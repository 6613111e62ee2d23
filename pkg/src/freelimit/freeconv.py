"""Free additive convolution through the subordination system.

For factors ``mu_1..mu_p`` with multiplicities ``m_1..m_p`` the subordination
functions ``omega_j`` satisfy ``F_{mu_j}(omega_j) = F(z)`` together with
``sum_j m_j omega_j - (N - 1) F(z) = z`` (``N = sum m_j``).  Writing
``H = F - id`` this is the fixed point

    omega_j = z + S - H_j(omega_j),    S = sum_i m_i H_i(omega_i),

and the convolution has ``F(z) = z + S``.  The system is solved with Newton
on a ladder of heights ``Im z``: high up ``omega_j ~ z`` and each lower level
is seeded by a first-order predictor from the level above.  A damped
fixed-point iteration is the fallback when Newton stalls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SubordinationStall
from .measure import DEFAULT_POINTS, GridSpec, Measure, coarsened, shift
from .transform import _h_and_slope, stieltjes_invert, voiculescu

LADDER_RATIO = 2.0
SOLVE_TOL = 1e-12
FIXED_POINT_ITERS = 500
COARSE_POINTS = 256


@dataclass(frozen=True)
class SubordinationState:
    """Solution of the two-factor system at one point ``z``."""

    z: complex
    omega1: complex
    omega2: complex
    residual: float

    def converged(self, tol: float = 1e-9) -> bool:
        return self.residual <= tol


class _System:
    """Interface of a pointwise analytic system solved by :func:`ladder_solve`.

    Unknowns are ``(n, p)`` complex arrays.  ``y`` tells the system how far
    above the axis each point currently sits, so it may use cheaper data
    high up; ``y = 0`` always means full accuracy.
    """

    p = 1
    fine_height = 0.0

    def init(self, z):
        raise NotImplementedError

    def residual(self, z, u, y):
        """Return ``(E, J)`` with ``J[:, j, i] = dE_j / du_i``."""
        raise NotImplementedError

    def dz(self, z, u):
        """``dE/dz`` as an ``(n, p)`` array."""
        return -np.ones(u.shape, complex)

    def fixed_point(self, z, u, y):
        raise NotImplementedError

    def valid(self, z, u):
        return np.all(u.imag > 0, axis=1)


class _Factor:
    def __init__(self, measure: Measure, mult: int):
        self.measure = measure
        self.mult = mult
        d = measure.density
        if d is not None and d.values.size > 2 * COARSE_POINTS:
            self.coarse = coarsened(measure, COARSE_POINTS)
            # below this height the coarse density is no longer a good proxy
            self.fine_below = 4.0 * self.coarse.density.step
        else:
            self.coarse = measure
            self.fine_below = np.inf

    def h(self, w, y):
        """``H(w) = F(w) - w`` and ``H'(w)``."""
        fine = y < self.fine_below
        if fine.all() or self.coarse is self.measure:
            hv, slope = _h_and_slope(self.measure, w)
        else:
            hv = np.empty(w.shape, complex)
            slope = np.empty(w.shape, complex)
            if fine.any():
                hv[fine], slope[fine] = _h_and_slope(self.measure, w[fine])
            hv[~fine], slope[~fine] = _h_and_slope(self.coarse, w[~fine])
        return hv, slope - 1.0


class SubordinationSystem(_System):
    def __init__(self, factors):
        self.factors = [_Factor(m, k) for m, k in factors]
        self.p = len(self.factors)
        self.mult = np.array([f.mult for f in self.factors], float)
        self.fine_height = min(f.fine_below for f in self.factors)

    def init(self, z):
        return np.repeat(z[:, None], self.p, axis=1)

    def _hs(self, u, y):
        hv = np.empty(u.shape, complex)
        dh = np.empty(u.shape, complex)
        for j, f in enumerate(self.factors):
            hv[:, j], dh[:, j] = f.h(u[:, j], y)
        return hv, dh

    def residual(self, z, u, y):
        hv, dh = self._hs(u, y)
        s = hv @ self.mult
        e = u - (z + s)[:, None] + hv
        jac = -(dh * self.mult)[:, None, :] * np.ones((1, self.p, 1))
        idx = np.arange(self.p)
        jac[:, idx, idx] += 1.0 + dh
        return e, jac

    def fixed_point(self, z, u, y):
        hv, _ = self._hs(u, y)
        s = hv @ self.mult
        return (z + s)[:, None] - hv

    def output(self, z, u):
        hv, _ = self._hs(u, np.zeros(z.shape))
        return 1.0 / (z + hv @ self.mult)


def _newton(system, z, u, y, tol, maxiter=60):
    """Damped Newton at every point; returns ``(u, converged, jacobian)``."""
    n, p = u.shape
    u = u.copy()
    e, jac = system.residual(z, u, y)
    norm = np.max(np.abs(e), axis=1)
    scale = tol * (1.0 + np.max(np.abs(u), axis=1))
    done = norm <= scale
    stuck = np.zeros(n, bool)
    for _ in range(maxiter):
        act = np.flatnonzero(~done & ~stuck)
        if act.size == 0:
            break
        step = np.linalg.solve(jac[act], -e[act][:, :, None])[:, :, 0]
        lam = np.ones(act.size)
        pending = np.arange(act.size)
        for _ in range(30):
            idx = act[pending]
            cand = u[idx] + lam[pending, None] * step[pending]
            ok = system.valid(z[idx], cand)
            good = np.zeros(idx.size, bool)
            if ok.any():
                sel = np.flatnonzero(ok)
                e2, j2 = system.residual(z[idx[sel]], cand[sel], y[idx[sel]])
                n2 = np.max(np.abs(e2), axis=1)
                better = n2 < norm[idx[sel]]
                g = sel[better]
                gi = idx[g]
                u[gi], e[gi], jac[gi], norm[gi] = cand[g], e2[better], j2[better], n2[better]
                good[g] = True
            pending = pending[~good]
            if pending.size == 0:
                break
            lam[pending] *= 0.5
        # no descent at all: either converged to roundoff or genuinely stuck
        stuck[act[pending]] = True
        scale = tol * (1.0 + np.max(np.abs(u), axis=1))
        done = norm <= scale
    floor = 1e3 * scale
    done |= stuck & (norm <= floor)
    return u, done, jac


def _fixed_point(system, z, u, y, tol):
    u = u.copy()
    act = np.arange(z.size)
    for _ in range(FIXED_POINT_ITERS):
        if act.size == 0:
            break
        new = 0.5 * u[act] + 0.5 * system.fixed_point(z[act], u[act], y[act])
        delta = np.max(np.abs(new - u[act]), axis=1)
        u[act] = new
        act = act[delta > tol * (1.0 + np.max(np.abs(new), axis=1))]
    return u, act


def _solve_level(system, z, u, y, tol):
    u, ok, jac = _newton(system, z, u, y, tol)
    if not ok.all():
        bad = np.flatnonzero(~ok)
        v, _ = _fixed_point(system, z[bad], u[bad], y[bad], tol)
        v, ok2, j2 = _newton(system, z[bad], v, y[bad], tol)
        u[bad], jac[bad] = v, j2
        if not ok2.all():
            worst = complex(z[bad[np.flatnonzero(~ok2)[0]]])
            raise SubordinationStall(f"subordination stall at z={worst}", z=worst)
    return u, jac


def ladder_solve(system, z, y_top: float, tol: float = SOLVE_TOL):
    """Solve ``system`` at the points ``z`` by continuation downward in ``Im z``.

    Points sharing a real part share one descent: it starts at height
    ``max(y_top, highest target)``, passes through ``y_top / ratio^k`` and
    stops at each requested height on the way down.
    """
    z = np.asarray(z, dtype=complex).ravel()
    xs, col = np.unique(z.real, return_inverse=True)
    col = col.ravel()
    # targets of each column in descending order
    order = np.lexsort((-z.imag, col))
    start = np.searchsorted(col[order], np.arange(xs.size))
    count = np.bincount(col, minlength=xs.size)
    nxt = np.zeros(xs.size, np.int64)

    def target():
        return z.imag[order[start + nxt]]

    out = np.empty((z.size, system.p), complex)
    cur = np.maximum(y_top, target())
    zc = xs + 1j * cur
    u, jac = _solve_level(system, zc, system.init(zc), cur, tol)
    level = y_top
    alive = np.ones(xs.size, bool)
    while True:
        # record every column sitting at its next target
        while True:
            hit = np.flatnonzero(alive & (cur <= target()))
            if hit.size == 0:
                break
            out[order[start[hit] + nxt[hit]]] = u[hit]
            nxt[hit] += 1
            alive[hit] = nxt[hit] < count[hit]
            nxt[~alive] = count[~alive] - 1
        if not alive.any():
            break
        level /= LADDER_RATIO
        new = np.maximum(level, target())
        mv = np.flatnonzero(alive & (new < cur))
        if mv.size == 0:
            continue
        dz = 1j * (new[mv] - cur[mv])
        # first-order predictor: J du = -(dE/dz) dz
        du = np.linalg.solve(jac[mv], -(system.dz(zc[mv], u[mv]) * dz[:, None])[:, :, None])[:, :, 0]
        zn = xs[mv] + 1j * new[mv]
        guess = u[mv] + du
        keep = ~system.valid(zn, guess)
        guess[keep] = u[mv][keep]
        y = new[mv] if level > 0 else np.zeros(mv.size)
        u[mv], jac[mv] = _solve_level(system, zn, guess, y, tol)
        cur[mv] = new[mv]
        zc[mv] = zn
    # points answered from cheap data get one full-accuracy pass
    rough = np.flatnonzero(z.imag >= system.fine_height)
    if rough.size:
        out[rough], _ = _solve_level(system, z[rough], out[rough], np.zeros(rough.size), tol)
    return out


def _span(m: Measure) -> float:
    lo, hi = m.support()
    return hi - lo


class SubordinatedCauchy:
    """Cauchy transform of ``mu_1^{m_1} [+] ... [+] mu_p^{m_p} [+] delta_c``, evaluated on demand."""

    def __init__(self, factors, c: float = 0.0):
        self.system = SubordinationSystem(factors)
        self.c = c
        width = sum(k * _span(m) for m, k in factors)
        self.y_top = max(10.0, 2.0 * width)

    def omegas(self, z):
        za = np.asarray(z, dtype=complex).ravel() - self.c
        return ladder_solve(self.system, za, self.y_top)

    def __call__(self, z):
        za = np.asarray(z, dtype=complex)
        flat = za.ravel() - self.c
        u = ladder_solve(self.system, flat, self.y_top)
        return self.system.output(flat, u).reshape(za.shape)


def subordinate(mu: Measure, nu: Measure, z) -> list[SubordinationState]:
    """Subordination functions of ``mu [+] nu`` at the points ``z``."""
    za = np.atleast_1d(np.asarray(z, dtype=complex))
    system = SubordinationSystem([(mu, 1), (nu, 1)])
    y_top = max(10.0, 2.0 * (_span(mu) + _span(nu)))
    u = ladder_solve(system, za, y_top)
    e, _ = system.residual(za, u, np.zeros(za.size))
    res = np.max(np.abs(e), axis=1)
    return [SubordinationState(complex(zz), complex(w[0]), complex(w[1]), float(r))
            for zz, w, r in zip(za, u, res)]


def _group(ms):
    """Split point masses off as a shift; group identical factors with multiplicities."""
    offset = 0.0
    groups: dict[bytes, list] = {}
    for m in ms:
        if m.is_point_mass:
            offset += float(m.atoms_x[0])
            continue
        key = m.key()
        if key in groups:
            groups[key][1] += 1
        else:
            groups[key] = [m, 1]
    return [(m, k) for m, k in groups.values()], offset


def _support_sum(factors, offset):
    lo = offset + sum(k * m.support()[0] for m, k in factors)
    hi = offset + sum(k * m.support()[1] for m, k in factors)
    return lo, hi


def auto_grid(g, lo: float, hi: float, n_points: int = DEFAULT_POINTS,
              coarse_points: int = 1024, level: float = 1e-4) -> GridSpec:
    """Grid fitted to where the measure behind ``g`` actually lives.

    A coarse smoothed density over ``[lo, hi]`` locates the hull of the
    region where it exceeds ``level`` times its maximum; the hull is padded
    and clipped back to ``[lo, hi]``, and the search repeats inside it while
    the window keeps shrinking by more than half.
    """
    for _ in range(4):
        x = np.linspace(lo, hi, coarse_points)
        eps = 4.0 * (x[1] - x[0])
        both = np.asarray(g(np.concatenate([x + 1j * eps, x + 0.5j * eps])))
        # extrapolating in eps removes the 1/x^2 Lorentzian tails
        dens = -(2.0 * both[x.size:].imag - both[:x.size].imag) / np.pi
        live = np.flatnonzero(dens > level * dens.max())
        a, b = x[live[0]], x[live[-1]]
        pad = max(2.0 * eps, 0.02 * (b - a))
        new_lo, new_hi = max(lo, a - pad), min(hi, b + pad)
        # a wide first window smooths on a coarse scale; refit until the hull settles
        shrunk = (new_hi - new_lo) < 0.5 * (hi - lo)
        lo, hi = new_lo, new_hi
        if not shrunk:
            break
    return GridSpec(lo, hi, n_points)


def free_convolve_many(ms, c: float = 0.0, grid: GridSpec | None = None, eps: float = 1e-3) -> Measure:
    """``ms[0] [+] ms[1] [+] ... [+] delta_c`` as a measure.

    Identical factors are solved jointly with multiplicities, so the cost
    depends on the number of distinct factors rather than on ``len(ms)``.
    Without ``grid`` the output window is the support sum padded by one,
    trimmed to the region where the result carries mass.
    """
    ms = list(ms)
    if not ms:
        raise ValueError("free_convolve_many needs at least one measure")
    factors, offset = _group(ms)
    offset += c
    if not factors:
        return Measure([offset], [1.0])
    if len(factors) == 1 and factors[0][1] == 1:
        return shift(factors[0][0], offset)
    g = SubordinatedCauchy(factors, offset)
    if grid is None:
        lo, hi = _support_sum(factors, offset)
        grid = auto_grid(g, lo - 1.0, hi + 1.0)
    return stieltjes_invert(g, grid, eps)


def free_convolve(mu: Measure, nu: Measure, grid: GridSpec | None = None, eps: float = 1e-3) -> Measure:
    """``mu [+] nu``."""
    return free_convolve_many([mu, nu], 0.0, grid, eps)


def phi_additivity_check(mu: Measure, nu: Measure, probes, result: Measure | None = None,
                         grid: GridSpec | None = None) -> float:
    """``max |phi_{mu [+] nu}(w) - phi_mu(w) - phi_nu(w)|`` over the probe points.

    ``phi_{mu [+] nu}`` is taken from the recovered output measure, so the
    check covers the whole solve-then-invert pipeline.
    """
    w = np.asarray(probes, dtype=complex).ravel()
    if result is None:
        result = free_convolve(mu, nu, grid)
    lhs = np.asarray(voiculescu(result, w))
    rhs = np.asarray(voiculescu(mu, w)) + np.asarray(voiculescu(nu, w))
    return float(np.max(np.abs(lhs - rhs)))

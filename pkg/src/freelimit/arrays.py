"""Triangular arrays and their centering data.

Row ``n`` holds ``k_n`` probability measures and a shift ``c_n``.  For each
entry ``a = int_{|t|<1} t dmu`` (the boundary ``|t| = 1`` belongs to the
tail), ``mu_bar = shift(mu, -a)`` and

    f(z) = z^2 [G_{mu_bar}(z) - 1/z] = int tz/(z - t) dmu_bar(t),
    sigma_n = sum_k t^2/(1+t^2) dmu_bar_k,
    gamma_n = c_n + sum_k [a_k + int t/(1+t^2) dmu_bar_k].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import laws
from .errors import DomainError
from .measure import Measure, dilate, integrate, mean, reweight, shift, superpose, tail_mass
from .transform import cauchy_kernels

_GL_X, _GL_W = np.polynomial.legendre.leggauss(3)


@dataclass
class Row:
    measures: list
    c: float = 0.0
    n: int = 0

    def __post_init__(self):
        if not self.measures:
            raise ValueError("a row needs at least one measure")
        for m in self.measures:
            if not m.is_probability:
                raise ValueError("array entries must be probability measures")

    @property
    def k(self) -> int:
        return len(self.measures)

    def distinct(self):
        """``(measure, multiplicity)`` for each distinct entry, first-seen order."""
        seen: dict[bytes, list] = {}
        for m in self.measures:
            key = m.key()
            if key in seen:
                seen[key][1] += 1
            else:
                seen[key] = [m, 1]
        return [(m, k) for m, k in seen.values()]


@dataclass
class TriangularArray:
    rows: list

    def row(self, n: int) -> Row:
        for r in self.rows:
            if r.n == n:
                return r
        raise KeyError(f"no row n={n}")

    @property
    def ns(self) -> list[int]:
        return [r.n for r in self.rows]

    def to_dict(self) -> dict:
        return {"rows": [{"n": r.n, "c": r.c, "measures": [m.to_dict() for m in r.measures]}
                         for r in self.rows]}

    @classmethod
    def from_dict(cls, data: dict) -> "TriangularArray":
        rows = []
        for i, r in enumerate(data["rows"]):
            cache: dict[str, Measure] = {}
            ms = []
            for md in r["measures"]:
                key = json.dumps(md, sort_keys=True)
                if key not in cache:
                    cache[key] = Measure.from_dict(md)
                ms.append(cache[key])
            rows.append(Row(ms, float(r.get("c", 0.0)), int(r.get("n", i + 1))))
        return cls(rows)


def load_array(path) -> TriangularArray:
    return TriangularArray.from_dict(json.loads(Path(path).read_text()))


def save_array(arr: TriangularArray, path) -> None:
    Path(path).write_text(json.dumps(arr.to_dict()))


@dataclass
class RowCentering:
    a: list
    centered: list


@dataclass
class Condition3Data:
    sigma_n: Measure
    gamma_n: float
    L: float = field(default=0.0)
    # sigma_n as ``(reweighted centred entry, multiplicity)`` before any regridding
    parts: list = field(default_factory=list, repr=False)

    def sigma_integral(self, f):
        """``int f dsigma_n``, exact by linearity over the parts when they are known."""
        if not self.parts:
            return integrate(self.sigma_n, f)
        return sum(k * integrate(p, f) for p, k in self.parts)


def _segment_integral(m: Measure, f, inside: bool, r: float = 1.0):
    """``int f dm`` over ``|t| < r`` (``inside``) or ``|t| >= r``.

    Atoms are split by the strict inequality; the density is integrated by
    3-point Gauss-Legendre on every cell clipped to the region.
    """
    total = 0.0
    if m.atoms_x.size:
        sel = (np.abs(m.atoms_x) < r) if inside else (np.abs(m.atoms_x) >= r)
        if sel.any():
            total = total + np.sum(m.atoms_w[sel] * np.asarray(f(m.atoms_x[sel])))
    d = m.density
    if d is not None:
        left, right = d.nodes[:-1], d.nodes[1:]
        v0, v1 = d.values[:-1], d.values[1:]
        pieces = [(-r, r)] if inside else [(-np.inf, -r), (r, np.inf)]
        for lo, hi in pieces:
            a = np.clip(left, lo, hi)
            b = np.clip(right, lo, hi)
            live = (b > a) & ((v0 > 0) | (v1 > 0))
            if not live.any():
                continue
            a, b = a[live], b[live]
            slope = ((v1 - v0) / d.step)[live]
            base = v0[live]
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            t = mid[:, None] + half[:, None] * _GL_X[None, :]
            dens = base[:, None] + slope[:, None] * (t - left[live][:, None])
            total = total + np.sum(half[:, None] * _GL_W[None, :] * dens * np.asarray(f(t)))
    return complex(total) if np.iscomplexobj(total) else float(total)


def truncated_mean(m: Measure) -> float:
    """``a = int_{|t| < 1} t dm(t)``."""
    return float(_segment_integral(m, lambda t: t, inside=True))


def centering(row: Row) -> RowCentering:
    done: dict[bytes, tuple] = {}
    a, centered = [], []
    for m in row.measures:
        key = m.key()
        if key not in done:
            ak = truncated_mean(m)
            done[key] = (ak, shift(m, -ak) if ak != 0 else m)
        ak, mb = done[key]
        a.append(ak)
        centered.append(mb)
    return RowCentering(a, centered)


def f_nk(centered: Measure, z):
    """``z^2 [G(z) - 1/z] = int tz/(z - t) dm(t)``, exact for the piecewise-linear density."""
    za = np.asarray(z, dtype=complex)
    if not np.all(za.imag > 0):
        raise DomainError("f_nk needs Im z > 0")
    out = za * cauchy_kernels(centered, za)[2]
    return complex(out) if za.ndim == 0 else out


def _f_quadrature(centered: Measure, w: complex) -> complex:
    # same quadrature as sigma_n, so the bridge identity holds to rounding
    return complex(integrate(centered, lambda t: t * w / (w - t)))


def b_nk(mu: Measure, a: float, y: float) -> float:
    """Tail part ``int_{|t|>=1} [a + (t-a) y^2 / (y^2 + (t-a)^2)] dmu(t)`` over the original ``mu``."""
    if y < 1:
        raise ValueError("b_nk needs y >= 1")
    return float(_segment_integral(mu, lambda t: a + (t - a) * y * y / (y * y + (t - a) ** 2), inside=False))


def is_infinitesimal(arr: TriangularArray, eps: float) -> np.ndarray:
    """Per-row ``max_k mu_nk({|t| >= eps})``."""
    return np.array([max(tail_mass(m, eps) for m, _ in r.distinct()) for r in arr.rows])


def decreasing_to_zero(values, tol: float = 1e-12) -> bool:
    """Nonincreasing with a last value near zero relative to the first."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return True
    return bool(np.all(np.diff(v) <= tol) and v[-1] <= max(tol, 0.5 * v[0]))


def condition3(arr: TriangularArray, n: int) -> Condition3Data:
    """``(sigma_n, gamma_n)`` of row ``n`` and the running sup ``L`` of the ``sigma`` masses."""
    L = 0.0
    for r in arr.rows:
        data = _condition3_row(r)
        L = max(L, data.sigma_n.total_mass)
        if r.n == n:
            return Condition3Data(data.sigma_n, data.gamma_n, L, data.parts)
    raise KeyError(f"no row n={n}")


def _condition3_row(row: Row) -> Condition3Data:
    cent = centering(row)
    parts: dict[bytes, list] = {}
    gamma = row.c
    for ak, mb in zip(cent.a, cent.centered):
        key = mb.key()
        if key not in parts:
            parts[key] = [mb, 0, ak + integrate(mb, lambda t: t / (1 + t * t))]
        parts[key][1] += 1
    sig, coef = [], []
    for mb, k, g in parts.values():
        gamma += k * g
        sig.append(reweight(mb, lambda t: t * t / (1 + t * t)))
        coef.append(float(k))
    sigma = superpose(sig, coef)
    return Condition3Data(sigma, float(gamma), sigma.total_mass, list(zip(sig, coef)))


def bridge_gap(row: Row, z) -> float:
    """``max |c + sum [a + f(z)] - (gamma_n + int (1+tz)/(z-t) dsigma_n)|`` over ``z``."""
    cent = centering(row)
    data = _condition3_row(row)
    terms: dict[bytes, list] = {}
    for ak, mb in zip(cent.a, cent.centered):
        terms.setdefault(mb.key(), [ak, mb, 0])[2] += 1
    worst = 0.0
    for w in np.atleast_1d(np.asarray(z, dtype=complex)):
        lhs = row.c + sum(k * (ak + _f_quadrature(mb, w)) for ak, mb, k in terms.values())
        rhs = data.gamma_n + data.sigma_integral(lambda t: (1 + t * w) / (w - t))
        worst = max(worst, abs(lhs - rhs))
    return worst


def lemma31_check(row: Row, y: float) -> tuple[float, float | None]:
    """Worst violations of the two inequalities bounding ``Re f(iy)`` by ``Im f(iy)``.

    The first is ``|Re[f - b]| <= 2 |Im f|``; the second,
    ``|Re f| <= (3 + 6y) |Im f|``, is only evaluated when every
    ``|a| <= 1/2`` (otherwise ``None``).
    """
    if y < 1:
        raise ValueError("lemma31_check needs y >= 1")
    cent = centering(row)
    second = max(abs(a) for a in cent.a) <= 0.5
    v1 = v2 = 0.0
    done = set()
    for m, ak, mb in zip(row.measures, cent.a, cent.centered):
        if m.key() in done:
            continue
        done.add(m.key())
        f = f_nk(mb, 1j * y)
        b = b_nk(m, ak, y)
        v1 = max(v1, abs((f - b).real) - 2 * abs(f.imag))
        if second:
            v2 = max(v2, abs(f.real) - (3 + 6 * y) * abs(f.imag))
    return v1, (v2 if second else None)


def _rows(N, rows):
    ns = list(range(1, N + 1)) if rows is None else [int(n) for n in rows]
    if not ns or min(ns) < 1:
        raise ValueError("row indices must be positive")
    return ns


def build_array(kind: str, params: dict | None = None, N: int | None = None, rows=None) -> TriangularArray:
    """Instantiate one of the standard arrays on rows ``1..N`` (or the given ``rows``).

    kinds: ``iid_scaled_bernoulli`` (``n`` copies of ``+-1/sqrt(n)`` coin flips),
    ``poisson_bernoulli`` (``n`` copies of ``(1 - lam/n) delta_0 + (lam/n) delta_1``),
    ``iid_scaled_from_measure`` (``n`` copies of the mean-centred measure
    dilated by ``1/sqrt(n)``; ``center``/``scale`` switch either step off) and
    ``custom_rows`` (rows given explicitly, or read from ``path``).
    All kinds accept a constant shift ``c``.
    """
    params = dict(params or {})
    c = float(params.get("c", 0.0))
    if kind == "custom_rows":
        if "path" in params:
            arr = load_array(params["path"])
        else:
            arr = TriangularArray.from_dict({"rows": params["rows"]})
        if rows is not None:
            arr = TriangularArray([arr.row(n) for n in rows])
        return arr
    if N is None and rows is None:
        raise ValueError("build_array needs N or rows")
    ns = _rows(N, rows)
    out = []
    if kind == "iid_scaled_bernoulli":
        for n in ns:
            out.append(Row([laws.symmetric_bernoulli(1 / np.sqrt(n))] * n, c, n))
    elif kind == "poisson_bernoulli":
        lam = float(params.get("lam", 1.0))
        for n in ns:
            if lam > n:
                raise ValueError(f"poisson_bernoulli needs n >= lam (n={n}, lam={lam})")
            out.append(Row([laws.bernoulli(lam / n)] * n, c, n))
    elif kind == "iid_scaled_from_measure":
        m = params["measure"]
        if isinstance(m, dict):
            m = Measure.from_dict(m) if ("atoms" in m or "density" in m) else laws.named(m["law"], **m.get("params", {}))
        if params.get("center", True):
            m = shift(m, -mean(m))
        for n in ns:
            mn = dilate(m, 1 / np.sqrt(n)) if params.get("scale", True) else m
            mn = Measure(mn.atoms_x, mn.atoms_w, mn.density)
            out.append(Row([mn] * n, c, n))
    else:
        raise ValueError(f"unknown array kind {kind!r}")
    return TriangularArray(out)

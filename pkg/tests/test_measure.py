import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freelimit import laws
from freelimit.measure import (
    Density,
    GridSpec,
    Measure,
    cdf,
    cdf_left,
    density_from_cell_masses,
    dilate,
    integrate,
    kolmogorov_distance,
    levy_distance,
    load_measure,
    mean,
    reweight,
    save_measure,
    shift,
    superpose,
    tail_mass,
    variance,
)
from tests import oracles
from tests.strategies import atomic_measures, measures, smooth_measures

BERN = Measure([-1.0, 1.0], [0.5, 0.5])


# construction


def test_normalizes_and_merges_duplicates():
    m = Measure([1.0, 0.0, 1.0], [1.0, 1.0, 2.0])
    assert list(m.atoms_x) == [0.0, 1.0]
    np.testing.assert_allclose(m.atoms_w, [0.25, 0.75])
    assert m.is_probability


def test_finite_measure_keeps_mass():
    s = Measure.finite([0.0], [0.5])
    assert s.total_mass == 0.5
    assert Measure.finite().total_mass == 0.0


@pytest.mark.parametrize("bad", [
    dict(atoms_x=[0.0], atoms_w=[-1.0]),
    dict(atoms_x=[np.nan], atoms_w=[1.0]),
    dict(atoms_x=[0.0, 1.0], atoms_w=[1.0]),
])
def test_rejects_invalid_atoms(bad):
    with pytest.raises(ValueError):
        Measure(**bad)


def test_rejects_invalid_density_and_grid():
    with pytest.raises(ValueError):
        Density(1.0, 0.0, [1.0, 1.0])
    with pytest.raises(ValueError):
        Density(0.0, 1.0, [1.0, -1.0])
    with pytest.raises(ValueError):
        GridSpec(0.0, 1.0, 1)
    with pytest.raises(ValueError):
        Measure([], [])  # zero mass cannot be normalized


def test_density_mass_is_trapezoid():
    d = Density(0.0, 2.0, [0.0, 1.0, 0.0])
    assert d.mass == pytest.approx(1.0)
    m = Measure(density=Density(0.0, 2.0, [0.0, 2.0, 0.0]))
    assert m.total_mass == pytest.approx(1.0, abs=1e-15)


@given(measures)
def test_json_round_trip(m):
    back = Measure.from_dict(json.loads(json.dumps(m.to_dict())))
    assert levy_distance(m, back) == 0.0
    np.testing.assert_array_equal(back.atoms_x, m.atoms_x)


def test_file_round_trip(tmp_path):
    m = laws.semicircle(n_points=65)
    save_measure(m, tmp_path / "m.json")
    back = load_measure(tmp_path / "m.json")
    np.testing.assert_allclose(back.density.values, m.density.values, rtol=1e-15)


# cdf


def test_cdf_examples():
    d0 = laws.point_mass(0.0)
    assert cdf(d0, -1.0) == 0.0
    assert cdf(d0, 0.0) == 1.0
    assert cdf_left(d0, 0.0) == 0.0
    assert cdf(BERN, 0.0) == 0.5
    assert cdf(laws.semicircle(), 0.0) == pytest.approx(0.5, abs=1e-12)


def test_cdf_matches_closed_form_semicircle():
    x = np.linspace(-2.5, 2.5, 101)
    np.testing.assert_allclose(cdf(laws.semicircle(), x), oracles.semicircle_cdf(x), atol=1e-6)


@given(measures, st.lists(st.floats(-6, 6), min_size=2, max_size=200))
def test_cdf_monotone_and_bounded(m, xs):
    x = np.sort(np.asarray(xs))
    f = cdf(m, x)
    assert np.all(np.diff(f) >= -1e-15)
    assert np.all((f >= 0) & (f <= m.total_mass))
    assert cdf(m, 1e9) == pytest.approx(m.total_mass)
    assert np.all(cdf_left(m, x) <= f + 1e-15)


@given(atomic_measures())
def test_cdf_matches_direct_atom_sum(m):
    x = np.linspace(-4, 4, 97)
    # query points within the snapping distance of an atom count as hitting it
    x = x[np.min(np.abs(x[:, None] - m.atoms_x[None, :]), axis=1) > 1e-9]
    np.testing.assert_allclose(cdf(m, x), oracles.atomic_cdf(m.atoms_x, m.atoms_w)(x), atol=1e-14)


# integrate and moments


def test_integrate_examples():
    assert integrate(laws.point_mass(0.7), lambda t: t) == pytest.approx(0.7)
    assert integrate(BERN, lambda t: t * t) == 1.0
    assert integrate(laws.semicircle(), lambda t: t * t) == pytest.approx(1.0, abs=1e-6)


def test_integrate_rejects_nonfinite():
    with pytest.raises(ValueError), np.errstate(divide="ignore"):
        integrate(laws.point_mass(0.0), lambda t: np.log(np.abs(t)))


@given(measures, st.floats(-2, 2), st.floats(-2, 2))
def test_integrate_is_linear(m, a, b):
    f = lambda t: np.cos(t)  # noqa: E731
    g = lambda t: t ** 3  # noqa: E731
    lhs = integrate(m, lambda t: a * f(t) + b * g(t))
    rhs = a * integrate(m, f) + b * integrate(m, g)
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(a) + abs(b)) * 30


@given(smooth_measures())
def test_trapezoid_is_exact_for_affine(m):
    d = m.density
    # the exact integral of t against a piecewise-linear density, cell by cell
    x, v, h = d.nodes, d.values, d.step
    exact = np.sum(h * (v[:-1] * (2 * x[:-1] + x[1:]) + v[1:] * (x[:-1] + 2 * x[1:])) / 6)
    assert integrate(m, lambda t: 1.0 + 0 * t) == pytest.approx(m.total_mass, rel=1e-12)
    # trapezoid and exact agree to O(h^2) times the mass
    assert integrate(m, lambda t: t) == pytest.approx(exact, abs=h * h * 10)


def test_uniform_moments():
    u = laws.uniform(-1.0, 1.0)
    assert mean(u) == pytest.approx(0.0, abs=1e-14)
    assert variance(u) == pytest.approx(1 / 3, abs=1e-6)


# tail mass


def test_tail_mass_examples():
    assert tail_mass(laws.point_mass(0.0), 0.5) == 0.0
    assert tail_mass(BERN, 0.5) == 1.0
    assert tail_mass(laws.symmetric_bernoulli(0.5), 0.6) == 0.0
    assert tail_mass(BERN, 1.0) == 1.0  # the boundary belongs to the tail


def test_tail_mass_of_uniform():
    assert tail_mass(laws.uniform(-1, 1), 0.5) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError):
        tail_mass(BERN, 0.0)


# distances


def test_distance_examples():
    d0 = laws.point_mass(0.0)
    assert levy_distance(BERN, BERN) == 0.0
    assert levy_distance(d0, laws.point_mass(0.3)) == pytest.approx(0.3, abs=1e-12)
    assert levy_distance(d0, laws.point_mass(5.0)) == pytest.approx(1.0)
    assert kolmogorov_distance(d0, laws.point_mass(1.0)) == 1.0


@settings(max_examples=15)
@given(atomic_measures(max_atoms=3, lo=-1, hi=1), atomic_measures(max_atoms=3, lo=-1, hi=1))
def test_atomic_levy_matches_brute_force(a, b):
    eps_grid = np.arange(0.0, 1.0 + 1e-9, 0.002)
    brute = oracles.levy_bruteforce(oracles.atomic_cdf(a.atoms_x, a.atoms_w),
                                    oracles.atomic_cdf(b.atoms_x, b.atoms_w), -3, 3, eps_grid)
    assert abs(levy_distance(a, b) - brute) <= 0.005


@settings(max_examples=20)
@given(measures, measures, measures)
def test_levy_symmetric_and_triangle(a, b, c):
    ab, bc, ac = levy_distance(a, b), levy_distance(b, c), levy_distance(a, c)
    assert ab == levy_distance(b, a)
    # bisection tolerance is 1e-6 on the nonatomic path
    assert ac <= ab + bc + 3e-6
    assert 0.0 <= ab <= 1.0


def test_levy_against_closed_form_shift():
    g = laws.gaussian()
    # Levy distance of a small shift is at most the shift
    assert levy_distance(g, shift(g, 0.01)) <= 0.01 + 1e-6


# transformations


def test_shift_examples():
    assert shift(laws.point_mass(0.0), 2.0) == laws.point_mass(2.0)
    s = shift(BERN, 0.25)
    np.testing.assert_allclose(s.atoms_x, [-0.75, 1.25])
    np.testing.assert_allclose(s.atoms_w, [0.5, 0.5])


@given(measures, st.floats(-5, 5))
def test_shift_round_trip_and_mass(m, a):
    s = shift(m, a)
    assert s.total_mass == m.total_mass
    back = shift(s, -a)
    assert levy_distance(back, m) <= 1e-9
    assert mean(s) == pytest.approx(mean(m) + a, abs=1e-9)


@given(measures, st.floats(0.1, 5))
def test_dilate_scales_moments(m, s):
    d = dilate(m, s)
    assert d.total_mass == pytest.approx(m.total_mass, rel=1e-12)
    assert mean(d) == pytest.approx(s * mean(m), abs=1e-9)
    assert variance(d) == pytest.approx(s * s * variance(m), rel=1e-9, abs=1e-12)
    assert levy_distance(dilate(m, -1.0), dilate(dilate(m, -1.0), 1.0)) == 0.0


def test_reweight_and_superpose():
    r = reweight(BERN, lambda t: t * t / (1 + t * t))
    assert r.total_mass == pytest.approx(0.5)
    s = superpose([BERN, laws.point_mass(0.0)], [2.0, 1.0])
    assert s.total_mass == pytest.approx(3.0)
    assert cdf(s, 0.0) == pytest.approx(2.0)


@given(smooth_measures(), smooth_measures())
def test_superpose_on_different_grids_adds_mass(a, b):
    s = superpose([a, b], [0.3, 0.7])
    assert s.total_mass == pytest.approx(1.0, abs=2e-3)


@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=60))
def test_density_from_cell_masses_reproduces_masses(vals):
    vals = np.asarray(vals)
    n = vals.size
    d = Density(0.0, 1.0, vals)
    h = d.step
    # dual-cell masses of the piecewise-linear interpolant
    inner = h * (vals[:-2] + 6 * vals[1:-1] + vals[2:]) / 8
    ends = [h * (3 * vals[0] + vals[1]) / 8, h * (vals[-2] + 3 * vals[-1]) / 8]
    masses = np.concatenate([[ends[0]], inner, [ends[1]]])
    back = density_from_cell_masses(0.0, 1.0, masses)
    np.testing.assert_allclose(back.values, vals, atol=1e-10)
    assert n == back.values.size


def test_semicircle_law_is_closed_form():
    x = np.linspace(-1.99, 1.99, 77)
    m = laws.semicircle()
    np.testing.assert_allclose(np.interp(x, m.density.nodes, m.density.values),
                               oracles.semicircle_density(x), atol=2e-3)
    assert math.isclose(m.total_mass, 1.0)

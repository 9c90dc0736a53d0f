import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from gradgibbs.lattice import (AffineMap, Box, Configuration, LatticeError, PLField, boundary_strip, build_domain,
                               check_sandwich, discretize, interpolate, mass_matrix, norms, read_snapshot,
                               write_snapshot)


def test_enumeration_1d():
    dom = build_domain([0, 1], 0.25)
    assert dom.sites.ravel().tolist() == [0, 1, 2, 3]
    assert dom.n_sites == 4


def test_enumeration_2d():
    dom = build_domain([[0, 1], [0, 1]], 0.5)
    assert [tuple(s) for s in dom.sites] == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_empty_lattice():
    with pytest.raises(LatticeError, match="empty lattice"):
        build_domain([0, 1], 2.0)


def test_strip_1d():
    dom = build_domain([0, 1], 0.1)
    assert dom.sites[boundary_strip(dom, 1).sites].ravel().tolist() == [0, 9]
    assert len(boundary_strip(dom, 100)) == 10


def test_strip_perimeter_2d():
    dom = build_domain([[0, 1], [0, 1]], 0.25)
    s = boundary_strip(dom, 1)
    # brute force: a site is in S_1 when a lattice neighbour lies outside
    inside = {tuple(x) for x in dom.sites}
    expect = sorted(tuple(x) for x in dom.sites
                    if any((x[0] + a, x[1] + b) not in inside for a, b in ((1, 0), (-1, 0), (0, 1), (0, -1))))
    assert len(s) == 12
    assert sorted(tuple(x) for x in dom.sites[s.sites]) == expect


def test_discretize_affine_exact():
    dom = build_domain([[0, 1], [0, 1]], 0.125, m=2)
    L = AffineMap([[1.5, -0.2], [0.3, 2.0]])
    X = discretize(L, dom)
    assert np.allclose(X.values, L(dom.sites.astype(float)), atol=1e-13)
    # callable path agrees with the closed form
    Y = discretize(lambda x: x @ L.A.T, dom)
    assert np.allclose(Y.values, X.values, atol=1e-12)


def test_discretize_zero():
    dom = build_domain([0, 1], 0.25)
    assert np.all(discretize(lambda x: np.zeros((len(x), 1)), dom).values == 0)


def test_discretize_cell_mean():
    dom = build_domain([0, 1], 0.25)
    X = discretize(lambda x: x**2, dom)
    exact = (0.625**3 - 0.375**3) / 3 / 0.25 / 0.25
    quad, _ = integrate.quad(lambda t: t * t, 0.375, 0.625)
    assert X.values[2, 0] == pytest.approx(exact, abs=1e-13)
    assert X.values[2, 0] == pytest.approx(quad / 0.25 / 0.25, abs=1e-12)


def test_interpolation_1d():
    dom = build_domain([0, 1], 0.5)
    pl = interpolate(Configuration(dom, [0.0, 4.0]))
    assert pl(np.array([[0.25]]))[0, 0] == pytest.approx(1.0)


def test_interpolation_2d_cell():
    dom = build_domain([[0, 1], [0, 1]], 0.5)
    pl = interpolate(Configuration(dom, [0.0, 1.0, 2.0, 3.0]))
    g, vol = pl.simplex_gradients()
    assert g.shape == (2, 1, 2)
    assert np.allclose(g[:, 0, :], [2.0, 1.0])
    assert np.allclose(pl.grad(np.array([[0.1, 0.4], [0.4, 0.1]]))[:, 0], [[2.0, 1.0], [2.0, 1.0]])


def test_interpolation_reproduces_affine():
    dom = build_domain([[0, 1], [0, 1]], 0.25, m=2)
    L = AffineMap([[1.0, 2.0], [-1.0, 0.5]])
    pl = interpolate(Configuration.from_affine(dom, L))
    x = np.random.default_rng(0).uniform(0, 0.75, (50, 2))
    assert np.allclose(pl(x), x @ L.A.T / 1.0)


def test_interpolation_outside_raises():
    dom = build_domain([0, 1], 0.25)
    with pytest.raises(LatticeError):
        interpolate(Configuration.zeros(dom))(np.array([[0.9]]))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6))
def test_pl_nodal_values(vals):
    dom = build_domain([[0, 1], [0, 1]], 1 / 3)
    X = Configuration(dom, np.resize(np.asarray(vals), dom.n_sites))
    pl = interpolate(X)
    assert np.allclose(pl(dom.positions()), dom.eps * X.values, atol=1e-12)


def test_norms_zero_for_discretized_affine():
    dom = build_domain([[0, 1], [0, 1]], 0.25, m=2)
    L = AffineMap([[1.0, -2.0], [0.5, 0.25]])
    n = norms(discretize(L, dom), L)
    assert max(n.values()) < 1e-24


def test_norms_discrete_zero_for_discretized_pl():
    dom = build_domain([[0, 1], [0, 1]], 0.25)
    rng = np.random.default_rng(1)
    v = interpolate(Configuration(dom, rng.normal(size=dom.n_sites)))
    n = norms(discretize(v, dom), v)
    assert n["disc_lr"] == 0.0 and n["disc_grad_lp"] == 0.0
    # cell means of a kinked field differ from its nodal values
    assert n["cont_Lr"] > 0.0


def test_norms_single_site_perturbation():
    dom = build_domain([0, 1], 0.125)
    L = AffineMap([[0.7]])
    vals = Configuration.from_affine(dom, L).values.copy()
    vals[3] += 0.5
    n = norms(Configuration(dom, vals), L, r=2.0)
    eps = dom.eps
    # hat of height eps*delta over two cells
    assert n["disc_lr"] == pytest.approx(eps**3 * 0.25)
    assert n["cont_Lr"] == pytest.approx(2 * eps * (eps * 0.5) ** 2 / 3)
    s = check_sandwich(n)
    assert s["ok"] and min(s["disc_lr"]) > 0


def test_sandwich_smooth_field():
    dom = build_domain([[0, 1], [0, 1]], 0.125)
    X = discretize(lambda x: np.sin(3 * x[:, :1]) + x[:, 1:] ** 2, dom)
    assert check_sandwich(norms(X, None))["ok"]


def test_mass_matrix_integrates_products():
    dom = build_domain([[0, 1], [0, 1]], 0.25)
    M = mass_matrix(dom)
    one = np.ones(dom.n_sites)
    # lattice units: the covered square has 3 x 3 unit cells
    assert one @ (M @ one) == pytest.approx(9.0)


def test_snapshot_round_trip():
    dom = build_domain([[0, 1], [0, 0.5]], 0.25, m=2)
    X = Configuration(dom, np.random.default_rng(2).normal(size=(dom.n_sites, 2)))
    buf = io.StringIO()
    text = write_snapshot(X, buf)
    Y = read_snapshot(buf.getvalue())
    assert text == buf.getvalue()
    assert np.array_equal(X.values, Y.values)
    assert Y.domain.box == dom.box


def test_box_validation():
    with pytest.raises(LatticeError):
        Box((0.0,), (0.0,))
    assert Box.unit(2).volume == 1.0
    assert math.isclose(Box((0.0, 0.0), (2.0, 0.5)).volume, 1.0)

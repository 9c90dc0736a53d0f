import numpy as np
import pytest

from gradgibbs.hamiltonian import (appendix_bound, bond_graph, boundary_ring, conditioned_energy, contains,
                                   delta_energy, energy, energy_cut, interpolation_map, lattice_lr,
                                   null_lagrangian_energy, plaquettes, shoelace_area, soft_clamp, split_strip,
                                   strip_slicing, theta_profile, total_energy)
from gradgibbs.lattice import AffineMap, Configuration, build_domain
from gradgibbs.potential import PotentialSpec, eval_U


def test_constant_energy_zero(gauss2):
    dom = build_domain([[0, 1], [0, 1]], 0.25, m=2)
    assert energy(gauss2, Configuration(dom, np.ones((dom.n_sites, 2)))) == 0.0


def test_affine_chain_energy(gauss1):
    dom = build_domain([0, 1], 0.1)
    X = Configuration.from_affine(dom, AffineMap([[2.0]]))
    assert energy(gauss1, X) == pytest.approx(36.0)


def test_energy_matches_patch_sum(rng):
    spec = PotentialSpec("p_power_gradient", 1, 2, p=3, patch="forward")
    dom = build_domain([0, 1], 1 / 3, m=2)
    X = Configuration(dom, rng.normal(size=(3, 2)))
    brute = sum(eval_U(spec, X.values[[j, j + 1]]) for j in range(2))
    assert energy(spec, X) == pytest.approx(brute, rel=1e-13)


def test_energy_matches_patch_sum_cross_2d(rng):
    spec = PotentialSpec("gaussian_gradient", 2, 1)
    dom = build_domain([[0, 1], [0, 1]], 0.25)
    X = Configuration(dom, rng.normal(size=dom.n_sites))
    brute = 0.0
    for a in dom.sites:
        idx = dom.indices_of(a + spec.offsets)
        if np.all(idx >= 0):
            brute += eval_U(spec, X.values[idx])
    assert energy(spec, X) == pytest.approx(brute, rel=1e-13)


def test_conditioned_energy_examples(gauss1):
    dom = build_domain([-0.5, 1.5], 0.5)  # sites -1..2
    Y = Configuration.zeros(dom)
    assert conditioned_energy(gauss1, [], [], Y) == 0.0
    t = 0.7
    assert conditioned_energy(gauss1, [t], [[1]], Y) == pytest.approx(2 * t * t)


def test_conditioned_energy_gluing(rng):
    spec = PotentialSpec("gaussian_gradient", 2, 1, patch="forward")
    dom = build_domain([[0, 1], [0, 1]], 0.2)
    Y = Configuration(dom, rng.normal(size=dom.n_sites))
    lam = np.array([[2, 2], [2, 3]])
    idx = dom.indices_of(lam)
    g = bond_graph(spec, dom)
    e = ((Y.values[g.dst] - Y.values[g.src]) ** 2).sum(-1)
    # patches meeting lam: every bond whose anchor patch contains a lam site
    anchors = {tuple(s - o) for s in lam for o in spec.offsets}
    sel = np.array([tuple(dom.sites[s]) in anchors for s in g.src])
    expect = e[sel].sum()

    assert conditioned_energy(spec, Y.values[idx], lam, Y) == pytest.approx(expect)


def test_delta_energy(rng):
    spec = PotentialSpec("gaussian_gradient", 2, 2, patch="forward").with_M(2.5)
    dom = build_domain([[0, 1], [0, 1]], 0.25, m=2)
    X = Configuration(dom, rng.normal(size=(dom.n_sites, 2)))
    for site in (0, 5, 15):
        new = rng.normal(size=2)
        Y = X.copy()
        Y.values[site] = new
        assert delta_energy(spec, X, site, new) == pytest.approx(total_energy(spec, Y) - total_energy(spec, X))


def test_null_lagrangian_examples():
    dom = build_domain([[0, 1], [0, 1]], 0.25, m=2)
    n_plaq = plaquettes(dom).shape[0]
    assert n_plaq == 9
    assert null_lagrangian_energy(Configuration.from_affine(dom, AffineMap(np.eye(2))), 3.0) == pytest.approx(0.0)
    assert null_lagrangian_energy(Configuration.zeros(dom), 3.0) == pytest.approx(27.0)


def test_null_lagrangian_is_boundary_functional(rng):
    dom = build_domain([[0, 1], [0, 1]], 1 / 6, m=2)
    ring = boundary_ring(dom)
    for _ in range(20):
        X = Configuration(dom, rng.normal(size=(dom.n_sites, 2)) * 3)
        total_V = plaquettes(dom).shape[0] - null_lagrangian_energy(X, 1.0)
        assert total_V == pytest.approx(shoelace_area(X.values[ring]), abs=1e-9)
        inner = np.setdiff1d(np.arange(dom.n_sites), ring)
        Y = X.copy()
        Y.values[inner] = rng.normal(size=(inner.size, 2)) * 10
        assert null_lagrangian_energy(Y, 2.0) == pytest.approx(null_lagrangian_energy(X, 2.0), abs=1e-9)


def test_shoelace_orientation():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    assert shoelace_area(sq) == 1.0
    assert shoelace_area(sq[::-1]) == -1.0


def test_contains_examples(gauss1):
    dom = build_domain([0, 1], 0.125)
    Y = Configuration.from_affine(dom, AffineMap([[0.5]]))
    ok, margin = contains(soft_clamp(dom, Y, 1.0), Y)
    assert ok and margin == 1.0
    cs = lattice_lr(dom, Y, 0.3)
    ok, margin = contains(cs, Y)
    assert ok and margin == pytest.approx(0.3 * 8 ** 1.5)
    ok, _ = contains(energy_cut(gauss1, dom, 0.5), Configuration.zeros(dom))
    assert not ok


def test_theta_profile():
    dom = build_domain([0, 1], 1 / 20)
    th = theta_profile(1, 4.0, 1.0, dom)
    assert th[10] == 1.0
    assert th[0] == 0.0 and th[1] == 0.0
    assert th[3] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        theta_profile(1, 2.0, 1.0, dom)


def test_interpolation_map(rng):
    dom = build_domain([0, 1], 1 / 20)
    X = Configuration(dom, rng.normal(size=20))
    Y = Configuration(dom, rng.normal(size=20))
    assert np.array_equal(interpolation_map(X, X, theta_profile(1, 4.0, 1.0, dom)).values, X.values)
    assert np.array_equal(interpolation_map(X, Y, np.ones(20)).values, X.values)
    th = theta_profile(1, 4.0, 1.0, dom)
    T = interpolation_map(X, Y, th)
    for i, w in ((2, 0.25), (3, 0.5), (4, 0.75)):
        assert T.values[i, 0] == pytest.approx(w * X.values[i, 0] + (1 - w) * Y.values[i, 0])


def test_strip_slicing(gauss1):
    dom = build_domain([0, 1], 1 / 40)
    aff = Configuration.from_affine(dom, AffineMap([[1.0]]))
    assert strip_slicing(dom, 3, 4.0, gauss1, aff)["k"] == 1
    const = Configuration(dom, np.full(40, 2.0))
    assert strip_slicing(dom, 3, 4.0, gauss1, const)["k"] == 1
    vals = np.zeros(40)
    # a jump inside slice 1 on the left and slice 1 on the right: slice 2 is cheaper
    vals[3:37] = 5.0
    res = strip_slicing(dom, 3, 4.0, gauss1, Configuration(dom, vals))
    assert res["k"] == 2 and res["slice_energy"][1] <= res["H"] / 2


def test_split_strip_empty_side():
    dom = build_domain([0, 1], 0.125)
    m1 = np.ones(8, bool)
    assert not split_strip(dom, m1, ~m1, 1.0).any()
    m1 = dom.sites[:, 0] < 4
    s = split_strip(dom, m1, ~m1, 1.0)
    assert dom.sites[s].ravel().tolist() == [3, 4]


def test_appendix_bound_holds(gauss1, rng):
    dom = build_domain([0, 1], 1 / 60)
    L = AffineMap([[0.5]])
    Yc = Configuration.from_affine(dom, L)
    X = Configuration(dom, Yc.values[:, 0] + rng.normal(scale=0.3, size=60))
    res = appendix_bound(gauss1, X, Yc, Yc, k=1, N=3, R=5.0, K=10.0, kappa=0.5)
    assert res["slack"] >= 0

import math

import numpy as np
import pytest

from gradgibbs.free_energy import Budget, gaussian_W_limit
from gradgibbs.hamiltonian import lr_neighborhood
from gradgibbs.lattice import AffineMap, Box, build_domain
from gradgibbs.ldp_yg import (F_kappa_eps, LdpError, MacroField, WTable, blowup_select, dlr_check,
                              exact_window_slope, harmonic_extension, rate_functional, sample_clamped,
                              slope_check, window_stats)
from gradgibbs.potential import PotentialSpec
from gradgibbs.sampler import quadrature_logZ

L07 = AffineMap([[0.7]])
ONES = lambda x: np.ones(len(x))  # noqa: E731


def test_macrofield_affine_and_hat():
    v = MacroField.affine(L07, h=0.25)
    assert v.boundary_defect() == 0.0
    assert np.allclose(v.grad(np.array([[0.3]])), 0.7)
    hat = MacroField.hat(L07, 0.3, [1], h=0.5)
    g, vol = hat.simplex_gradients()
    assert np.allclose(np.sort(g.ravel()), [0.1, 1.3])
    assert vol.sum() == pytest.approx(1.0)
    with pytest.raises(LdpError):
        MacroField(np.zeros(4), 0.3, 1)


def test_harmonic_extension_of_hat_is_affine():
    hat = MacroField.hat(AffineMap([[0.2, -0.4]]), 0.5, [1, 1], h=0.5)
    harm = harmonic_extension(hat)
    flat = MacroField.affine(AffineMap([[0.2, -0.4]]), h=0.5)
    assert np.allclose(harm.nodal, flat.nodal, atol=1e-12)


def test_wtable_interpolation_and_range():
    axes = [np.linspace(-1, 1, 5)]
    t = WTable(axes, 3.0 * axes[0] + 1.0)
    assert t(np.array([[0.3]])) == pytest.approx(1.9)
    with pytest.raises(LdpError):
        t(np.array([[1.5]]))
    with pytest.raises(LdpError):
        WTable(axes, np.zeros(5), m=1, d=2)


@pytest.mark.parametrize("kind", ["gaussian_gradient", "p_power_gradient"])
def test_F_kappa_eps_vs_quadrature(kind):
    spec = PotentialSpec(kind, 1, 1, p=2.0 if kind == "gaussian_gradient" else 4.0, patch="forward")
    dom = build_domain(Box.unit(1), 1 / 3, 1)
    F, se = F_kappa_eps(spec, L07, 1.0, 1 / 3, Budget(sweeps=4000, burn_in=500, path_points=8), seed=1)
    q = -quadrature_logZ(spec, dom, lr_neighborhood(dom, L07, 1.0)) / 3
    assert abs(F - q) <= max(3 * se, 2e-3)


def test_F_kappa_decreasing(gauss1):
    vals = [F_kappa_eps(gauss1, L07, k, 1 / 8)[0] for k in (0.1, 0.5, 2.0)]
    assert vals[0] > vals[1] > vals[2]
    with pytest.raises(LdpError):
        F_kappa_eps(gauss1, L07, 0.0, 1 / 8)


def test_rate_zero_at_affine(gauss1, gauss2):
    assert rate_functional(gauss1, MacroField.affine(L07))["I"] == 0.0
    A = AffineMap(np.array([[1.0, 0.2], [-0.3, 0.5]]))
    assert rate_functional(gauss2, MacroField.affine(A, h=0.5))["I"] == 0.0


@pytest.mark.parametrize("a", [0.1, 0.3, -0.45])
def test_rate_hat_closed_form(gauss1, a):
    # slopes 0.7 +- 2a on halves: I = 4 a^2 exactly
    r = rate_functional(gauss1, MacroField.hat(L07, a, [1], h=0.5))
    assert r["exact_min"]
    assert r["I"] == pytest.approx(4 * a * a, abs=1e-12)
    assert r["min"] == pytest.approx(gaussian_W_limit(1, 1, L07), abs=1e-12)


def test_rate_invariant_under_constant(gauss1):
    v = MacroField.hat(L07, 0.3, [1], h=0.5)
    W = WTable.closed_form(lambda A: float((A**2).sum()), 1, 1)
    W_shift = WTable.closed_form(lambda A: float((A**2).sum()) + 5.0, 1, 1)
    assert rate_functional(gauss1, v, W=W)["I"] == pytest.approx(rate_functional(gauss1, v, W=W_shift)["I"])


def test_rate_rejects_wrong_trace(gauss1):
    v = MacroField.affine(L07)
    with pytest.raises(LdpError):
        rate_functional(gauss1, v, u=AffineMap([[0.1]]))


def test_blowup_affine_zero():
    r = blowup_select(MacroField.affine(L07), 0.25, 1e-12, 0.5, ONES)
    assert r.sum_gradient == 0.0
    assert r.sum_density == pytest.approx(1.0)


@pytest.mark.parametrize("rho", [0.25, 0.125])
def test_blowup_kink(rho):
    kink = MacroField.hat(AffineMap([[0.0]]), 0.5, [1], h=0.5)
    r = blowup_select(kink, rho, 0.1, 0.5, ONES)
    assert r.sum_gradient < 0.1 and r.sum_density > 0.5
    assert abs(r.z[0]) <= rho / 2


def test_blowup_preconditions():
    with pytest.raises(LdpError):
        blowup_select(MacroField.affine(L07), 0.25, 0.1, 2.0, ONES)


def test_window_slope_pinned(gauss1):
    b = sample_clamped(gauss1, L07, 1 / 16, Budget(sweeps=4000, burn_in=500), seed=1, boundary="pinned")
    st = window_stats(gauss1, L07, 1 / 16, [((0.5,), 3)], batch=b)
    assert slope_check(st[0], L07)["pass"]
    assert st[0].to_record()["side"] == 3
    assert dlr_check(gauss1, b, (0.5,), 3, seed=2)["ok"]


def test_exact_window_slope(gauss1, gauss2):
    assert exact_window_slope(gauss1, L07, 1 / 16, (0.5,), 3)["residual"] < 1e-12
    A = AffineMap(np.array([[1.0, 0.2], [-0.3, 0.5]]))
    assert exact_window_slope(gauss2, A, 1 / 16, (0.5, 0.5), 2)["residual"] < 1e-12


def test_window_near_boundary(gauss1):
    b = sample_clamped(gauss1, L07, 1 / 8, Budget(sweeps=200, burn_in=50), seed=1)
    with pytest.raises(LdpError):
        window_stats(gauss1, L07, 1 / 8, [((0.0,), 3)], batch=b)
    with pytest.raises(LdpError):
        window_stats(gauss1, L07, 1 / 8, [((0.5,), 7)], batch=b)
    assert math.isfinite(b.acceptance)


def test_wedge_2d_two_gradients():
    A = AffineMap(np.array([[0.3, 0.1], [0.0, -0.2]]))
    g, vol = MacroField.wedge(A, [0.5, 0.25]).simplex_gradients()
    distinct = np.unique(np.round(g.reshape(len(g), -1), 12), axis=0)
    assert len(distinct) == 2
    assert vol.sum() == pytest.approx(1.0)

import math

import numpy as np
import pytest

from gradgibbs.hamiltonian import lr_neighborhood, soft_clamp
from gradgibbs.lattice import AffineMap, build_domain, discretize
from gradgibbs.potential import PotentialSpec, bound_constants
from gradgibbs.sampler import exact_gaussian_torus, quadrature_logZ
from gradgibbs.free_energy import (Budget, check_subadditivity, check_tightness, clamp_logZ, estimate_W,
                                   extrapolate, gaussian_W_limit, kappa_monotonicity, logZ_thermo,
                                   lr_gaussian_logZ, quasiconvexity_probe)

CATALAN = 0.915965594177219

L07 = AffineMap([[0.7]])


class Bump:
    """Tent perturbation on [0, 1] with slope +-s, as piecewise-constant gradients."""

    def __init__(self, s, m=1):
        self.s, self.m = s, m

    def simplex_gradients(self):
        g = np.zeros((2, self.m, 1))
        g[0, 0, 0], g[1, 0, 0] = self.s, -self.s
        return g, np.array([0.5, 0.5])


def test_gaussian_limit_values():
    assert gaussian_W_limit(1, 1) == pytest.approx(-0.5 * math.log(math.pi))
    w2 = 2 * CATALAN / math.pi - 0.5 * math.log(math.pi)
    assert gaussian_W_limit(2, 1) == pytest.approx(w2)
    assert gaussian_W_limit(2, 2, AffineMap(np.eye(2))) == pytest.approx(2 * w2 + 2)


def test_torus_approaches_limit():
    # the torus free energy converges to the infinite-volume value
    t = exact_gaussian_torus(64, 2, 1, AffineMap([[0.0, 0.0]]))
    assert t["value"] == pytest.approx(gaussian_W_limit(2, 1), abs=2e-3)


def test_clamp_vs_quadrature(gauss1):
    dom = build_domain([0, 1], 1 / 4)
    q = quadrature_logZ(gauss1, dom, soft_clamp(dom, L07, gauss1.R0))
    est = clamp_logZ(gauss1, dom, L07, Budget(sweeps=4000, burn_in=500, path_points=8), seed=1)
    assert abs(est.logZ - q) <= 3 * est.se


def test_identity_shortcut(gauss1):
    dom = build_domain([0, 1], 1 / 4)
    cs = soft_clamp(dom, L07, gauss1.R0)
    est = logZ_thermo(gauss1, dom, cs, 8, 4000, seed=3)
    assert est.method.endswith("+identity")


def test_thermo_quartic_vs_quadrature():
    spec = PotentialSpec("p_power_gradient", 1, 1, p=4.0, patch="forward")
    dom = build_domain([0, 1], 1 / 4)
    cs = soft_clamp(dom, L07, spec.R0)
    q = quadrature_logZ(spec, dom, cs)
    est = logZ_thermo(spec, dom, cs, 8, 4000, seed=3)
    assert abs(est.logZ - q) <= 3 * est.se


def test_zero_reference_vs_quadrature(gauss1):
    dom = build_domain([0, 1], 1 / 4)
    cs = soft_clamp(dom, L07, gauss1.R0)
    Y = discretize(L07, dom).values
    pins = ([1, 2], Y[[1, 2]])
    q = quadrature_logZ(gauss1, dom, cs, pins=pins)
    est = logZ_thermo(gauss1, dom, cs, 8, 4000, seed=3, reference="zero", pins=pins)
    assert abs(est.logZ - q) <= 3 * est.se


@pytest.mark.parametrize("kappa", [0.3, 1.0])
def test_lr_exact_vs_quadrature(gauss1, kappa):
    dom = build_domain([0, 1], 1 / 3)
    lr = lr_gaussian_logZ(gauss1, dom, L07, kappa)
    q = quadrature_logZ(gauss1, dom, lr_neighborhood(dom, L07, kappa))
    assert lr.logZ == pytest.approx(q, abs=2e-3)


def test_soft_clamp_estimate_1d(gauss1):
    est = estimate_W(gauss1, L07, "soft_clamp", [1 / 4, 1 / 8, 1 / 16],
                     budget=Budget(sweeps=2000, burn_in=300, path_points=6), seed=2)
    assert abs(est.value - gaussian_W_limit(1, 1, L07)) <= 3 * est.se
    assert len(est.per_eps) == 3


def test_estimate_rejects_bad_grid(gauss1):
    with pytest.raises(ValueError):
        estimate_W(gauss1, L07, "soft_clamp", [1 / 8, 1 / 4])
    with pytest.raises(ValueError):
        estimate_W(gauss1, L07, "soft_clamp", [1 / 4, 1 / 8])


def test_extrapolate_exact_affine():
    e = np.array([0.25, 0.125, 0.0625, 0.03125])
    ex = extrapolate(e, 1.5 - 2.0 * e, np.full(4, 1e-3))
    assert ex["value"] == pytest.approx(1.5, abs=1e-12)
    assert ex["slope"] == pytest.approx(-2.0, abs=1e-10)
    assert ex["residual"] < 1e-10


def test_extrapolate_log_column():
    e = np.array([0.25, 0.125, 0.0625, 0.03125])
    y = -0.3 + 0.4 * e + 0.2 * e * np.log(1 / e)
    ex = extrapolate(e, y, np.full(4, 1e-3), log_term=True)
    assert ex["model"] == "affine+log"
    assert ex["value"] == pytest.approx(-0.3, abs=1e-10)


def test_extrapolate_residual_without_spare_point():
    # three points and three columns: residual comes from dropping the log column
    e = np.array([0.25, 0.125, 0.0625])
    y = -0.3 + 0.4 * e + 0.2 * e * np.log(1 / e)
    ex = extrapolate(e, y, np.full(3, 1e-3), log_term=True)
    assert ex["value"] == pytest.approx(-0.3, abs=1e-10)
    assert ex["residual"] > 1e-3


def test_subadditivity_empty_side(gauss1):
    r = check_subadditivity(gauss1, L07, build_domain([0, 1], 1 / 6), (0, 0), method="quadrature")
    assert r["S_size"] == 0
    assert r["slack"] == pytest.approx(0.0, abs=1e-12)


def test_subadditivity_chain_quadrature(gauss1):
    r = check_subadditivity(gauss1, L07, build_domain([0, 1], 1 / 6), (0, 3), method="quadrature")
    assert r["B"] == pytest.approx(bound_constants(gauss1.growth, L07, 1)["B"])
    assert r["S_size"] > 0
    assert r["ok"] and r["slack"] > 0


def test_subadditivity_square_hard_pin():
    spec = PotentialSpec("gaussian_gradient", 2, 1, patch="forward")
    r = check_subadditivity(spec, AffineMap([[0.3, -0.2]]), build_domain([[0, 1], [0, 1]], 1 / 4), (0, 2),
                            method="hard_pin")
    assert r["method"] == "hard_pin"
    assert r["ok"] and r["slack"] > 0


def test_tightness_quadrature(gauss1):
    dom = build_domain([0, 1], 1 / 3)
    rows = check_tightness(gauss1, dom, soft_clamp(dom, L07, 1.0), [0.0, 1.0, 4.0, 16.0])
    assert all(r["ok"] for r in rows)
    logs = [r["log_Z_MK"] for r in rows]
    assert all(a >= b for a, b in zip(logs, logs[1:]))
    D = bound_constants(gauss1.growth, 0.0, 1)["D"]
    assert rows[0]["log_bound"] == pytest.approx(3 * math.log(D))


def test_quasiconvexity_zero_perturbation(gauss1):
    out = quasiconvexity_probe(gauss1, L07, [Bump(0.0)])
    assert out[0]["gap"] == pytest.approx(0.0, abs=1e-14)


def test_quasiconvexity_gaussian_closed_form(gauss1):
    # W(A) = W0 + A^2, so the gap is the mean of s^2 over the tent
    out = quasiconvexity_probe(gauss1, L07, [Bump(0.5), Bump(1.2)])
    assert out[0]["gap"] == pytest.approx(0.25, abs=1e-12)
    assert out[1]["gap"] == pytest.approx(1.44, abs=1e-12)


def test_quasiconvexity_custom_W(gauss1):
    out = quasiconvexity_probe(gauss1, L07, [Bump(0.5)], W_fn=lambda A: float(np.abs(A).sum()))
    assert out[0]["gap"] == pytest.approx(0.5 * (1.2 + 0.2) - 0.7, abs=1e-12)


def test_kappa_monotone(gauss1):
    dom = build_domain([0, 1], 1 / 3)
    r = kappa_monotonicity(gauss1, dom, L07, [2.0, 0.2, 1.0, 0.5])
    assert r["kappa"] == [0.2, 0.5, 1.0, 2.0]
    assert r["monotone"]
    assert np.all(np.diff(r["neg_logZ"]) < 0)


def test_budget_coerce():
    assert Budget.coerce(None) == Budget()
    assert Budget.coerce({"sweeps": 10}).sweeps == 10

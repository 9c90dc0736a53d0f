import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradgibbs.lattice import AffineMap
from gradgibbs.potential import (GrowthConstants, PotentialError, PotentialSpec, ball_volume, bound_constants,
                                 constant_c, constant_c_quadrature, eval_U, null_lagrangian_V, patch_offsets,
                                 probe_growth)

SQUARE = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], float)


def test_constant_patch_zero():
    spec = PotentialSpec("gaussian_gradient", 2, 2)
    assert eval_U(spec, np.tile([3.0, -1.0], (5, 1))) == 0.0


def test_eval_U_chain():
    spec = PotentialSpec("gaussian_gradient", 1, 1, patch="forward")
    assert eval_U(spec, [[0.0], [2.0]]) == 4.0
    assert eval_U(spec, {(0,): 0.0, (1,): 2.0}) == 4.0


def test_eval_U_affine():
    spec = PotentialSpec("gaussian_gradient", 2, 2)
    L = AffineMap([[1.0, 2.0], [-0.5, 3.0]])
    vals = L(spec.offsets.astype(float))
    assert eval_U(spec, vals) == pytest.approx((L.A**2).sum())


def test_eval_U_p_power():
    spec = PotentialSpec("p_power_gradient", 1, 2, p=4, patch="forward")
    assert eval_U(spec, [[0.0, 0.0], [1.0, 1.0]]) == pytest.approx(4.0)


def test_missing_patch_value():
    spec = PotentialSpec("gaussian_gradient", 1, 1)
    with pytest.raises(PotentialError):
        eval_U(spec, {(0,): 0.0, (1,): 1.0})


def test_null_lagrangian_values():
    assert null_lagrangian_V(SQUARE) == pytest.approx(1.0)
    assert null_lagrangian_V(np.zeros((4, 2))) == 0.0
    assert null_lagrangian_V(2 * SQUARE) == pytest.approx(4.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_null_lagrangian_affine_is_determinant(a, b):
    A = np.asarray(a).reshape(2, 2)
    img = SQUARE @ A.T + np.asarray(b)
    assert null_lagrangian_V(img) == pytest.approx(np.linalg.det(A), abs=1e-9)


@pytest.mark.parametrize("p,m,expect", [(2, 1, math.sqrt(math.pi)), (2, 2, math.pi), (1, 1, 2.0)])
def test_constant_c(p, m, expect):
    assert constant_c(p, m) == pytest.approx(expect, abs=1e-8)
    assert constant_c_quadrature(p, m) == pytest.approx(expect, abs=1e-8)


def test_bound_constants_examples():
    g = GrowthConstants(c=1.0, p=2.0, C=2.0, r=2.0, m=1, R0=1.0)
    bc = bound_constants(g, 1.0, d=1)
    assert bc["B"] == pytest.approx(12.0)
    assert bc["b"] == pytest.approx(-0.5 * math.log(math.pi), abs=1e-12)
    assert bc["D"] == pytest.approx(2 * math.sqrt(2) * math.sqrt(math.pi), abs=1e-12)
    assert bc["D"] == pytest.approx(5.0133, abs=1e-4)


def test_forward_2d_threshold():
    spec = PotentialSpec("gaussian_gradient", 2, 2, patch="forward")
    assert spec.C == 8.0 and spec.R0 == pytest.approx(math.sqrt(2))
    bc = bound_constants(spec.growth, 1.0, 2)
    assert bc["B"] == pytest.approx(344.0)


def test_default_constants():
    spec = PotentialSpec("p_power_gradient", 1, 1, p=3)
    assert spec.C == pytest.approx(16.0) and spec.r == 3.0
    assert spec.R0 == 2.0


def test_growth_probe_gaussian_equality():
    spec = PotentialSpec("gaussian_gradient", 2, 1)
    res = probe_growth(spec, 2000, seed=1)
    assert abs(res["A1_margin"]) < 1e-12


def test_growth_probe_p4():
    spec = PotentialSpec("p_power_gradient", 1, 1, p=4)
    assert abs(probe_growth(spec, 2000, seed=2)["A1_margin"]) < 1e-12


def test_growth_probe_upper_bound():
    spec = PotentialSpec("gaussian_gradient", 2, 2, C=10.0, r=2.0)
    assert probe_growth(spec, 100_000, seed=3)["A2_margin"] >= 0.0


def test_growth_probe_falsifies_bad_constant():
    spec = PotentialSpec("p_power_gradient", 1, 1, p=4, C=1.01, r=4.0)
    assert probe_growth(spec, 20_000, seed=4)["A2_margin"] < 0.0


def test_validation():
    with pytest.raises(PotentialError):
        PotentialSpec("quartic", 1, 1)
    with pytest.raises(PotentialError):
        PotentialSpec("composite_with_null_lagrangian", 1, 1)
    with pytest.raises(PotentialError):
        GrowthConstants(1.0, 2.0, 0.5, 2.0).validate()
    with pytest.raises(PotentialError):
        GrowthConstants(1.0, 3.0, 2.0, 2.0).validate(ldp=True)
    with pytest.raises(PotentialError):
        patch_offsets(1, "star")


def test_config_round_trip():
    spec = PotentialSpec("gaussian_gradient", 2, 2, patch="forward").with_M(3.0)
    again = PotentialSpec.from_config(spec.to_config())
    assert again == spec
    assert again.base().kind == "gaussian_gradient"


def test_ball_volume():
    assert ball_volume(2) == pytest.approx(math.pi)
    assert ball_volume(1, 2.0) == pytest.approx(4.0)

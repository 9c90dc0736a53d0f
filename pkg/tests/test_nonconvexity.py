import pytest

from gradgibbs.free_energy import Budget
from gradgibbs.nonconvexity import boundary_term_scan, run_nonconvexity, threshold_M
from gradgibbs.potential import PotentialError, PotentialSpec

SMALL = Budget(sweeps=3000, burn_in=300, path_points=4)


@pytest.fixture
def base():
    return PotentialSpec("gaussian_gradient", 2, 2, patch="forward")


def test_threshold(base):
    # B(1) = 344 with C = 8, R0 = sqrt 2; b = -1.1447 for the unit Gaussian
    assert threshold_M(base) == pytest.approx(345.1447, abs=1e-4)


def test_rejects_bad_input(base):
    with pytest.raises(PotentialError):
        run_nonconvexity(base, -1.0, [0.25])
    with pytest.raises(PotentialError):
        run_nonconvexity(PotentialSpec("gaussian_gradient", 1, 1), 1.0, [0.25])


def test_baseline_symmetric(base):
    r = run_nonconvexity(base, 0.0, [0.25], SMALL, seed=1)
    assert r.verdict == "baseline"
    assert abs(r.checks["symmetry"]) <= 3 * r.checks["symmetry_se"]
    assert "M = 0.0000" in r.table()


def test_moderate_M_is_nonconvex(base):
    r = run_nonconvexity(base, 20.0, [0.25], SMALL, seed=1)
    assert r.verdict == "nonconvex"
    assert r.gap > 0
    assert abs(r.checks["symmetry"]) <= 3 * r.checks["symmetry_se"]
    # the plaquette term pushes W(0) up and W(+-id) down relative to the base model
    assert r.W_0 > r.base["0"]["value"]
    assert r.W_id < r.base["id"]["value"]
    rec = r.to_record()
    assert rec["M"] == 20.0 and rec["threshold"] == pytest.approx(345.1447, abs=1e-4)


def test_boundary_term_decays():
    s = boundary_term_scan(5.0, [0.25, 0.125, 0.0625], sweeps=200, seed=0)
    y = s["normalized_max"]
    assert y[0] > y[1] > y[2]
    assert s["loglog_slope"] > 0.3

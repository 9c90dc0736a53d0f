"""Acceptance gate: one test (or a pass/xfail pair) per criterion.

Each part reports through the ``criterion`` fixture. The terminal summary
prints one PASS/FAIL line per criterion. Parts that cannot hold at desk
scale are strict xfails, so they run and are reported as failing.
"""

import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from gradgibbs.cli import main
from gradgibbs.free_energy import (Budget, check_subadditivity, check_tightness, clamp_logZ, estimate_W,
                                   gaussian_W_limit, kappa_monotonicity, lr_gaussian_logZ)
from gradgibbs.hamiltonian import (boundary_ring, null_lagrangian_energy, plaquettes, shoelace_area,
                                   soft_clamp)
from gradgibbs.lattice import AffineMap, Box, Configuration, build_domain, check_sandwich, discretize, norms
from gradgibbs.ldp_yg import (MacroField, blowup_select, dlr_check, exact_window_slope, harmonic_extension,
                              ldp_check, rate_functional, sample_clamped, slope_check, window_stats)
from gradgibbs.nonconvexity import run_nonconvexity, threshold_M
from gradgibbs.potential import GrowthConstants, PotentialSpec, bound_constants, constant_c
from gradgibbs.sampler import (exact_gaussian, integrated_autocorr_time, metropolis_run, pins_from_strip,
                               quadrature_logZ)

pytestmark = pytest.mark.acceptance


def gspec(d, m):
    return PotentialSpec("gaussian_gradient", d, m, patch="forward")


def series_z(y, target):
    tau = integrated_autocorr_time(y)
    se = y.std(ddof=1) * math.sqrt(tau / y.size)
    return (y.mean() - target) / se


# --------------------------------------------------------------------------
# 1. constants


def test_c1_constants(criterion):
    errs = [abs(constant_c(2, 1) - math.sqrt(math.pi)), abs(constant_c(2, 2) - math.pi), abs(constant_c(1, 1) - 2.0)]
    bc = bound_constants(GrowthConstants(1.0, 2.0, 2.0, 2.0, 1, 1.0), 0.0, 1)
    ok = (max(errs) < 1e-8 and abs(bc["D"] - 2 * math.sqrt(2 * math.pi)) < 1e-8
          and abs(bc["b"] + 0.5 * math.log(math.pi)) < 1e-8)
    criterion(1, "constants", ok, f"max c error {max(errs):.1e}, D={bc['D']:.4f}, b={bc['b']:.4f}")
    assert ok


# --------------------------------------------------------------------------
# 2. oracle cross-validation


def _small_systems():
    for d in (1, 2):
        for m in (1, 2):
            for k in (1, 2, 3):
                if d == 1:
                    dom = build_domain(Box.unit(1), 1 / (k + 2), m)
                    pins = [0, k + 1]
                else:
                    dom = build_domain(Box.unit(2), 1 / 3, m)
                    free = [4, 5, 7][:k]
                    pins = [i for i in range(9) if i not in free]
                yield d, m, k, dom, pins


def test_c2_exact_vs_quadrature(criterion):
    rng = np.random.default_rng(2)
    worst = 0.0
    for d, m, k, dom, pins in _small_systems():
        vals = rng.normal(size=(len(pins), m))
        e = exact_gaussian(gspec(d, m), dom, (pins, vals)).logZ
        q = quadrature_logZ(gspec(d, m), dom, pins=(pins, vals))
        worst = max(worst, abs(e - q))
    ok = worst < 1e-8
    criterion(2, "log-det vs quadrature (<= 3 free sites)", ok, f"max |diff| {worst:.1e} over 12 systems")
    assert ok


@pytest.mark.parametrize("m", [1, 2])
def test_c2_metropolis_moments(criterion, m):
    dom = build_domain(Box.unit(2), 1 / 8, m)
    rng = np.random.default_rng(22)
    Y = discretize(AffineMap(np.full((m, 2), 0.5)), dom).values + 0.3 * rng.normal(size=(dom.n_sites, m))
    pins = pins_from_strip(dom, Y, 1.0)
    spec = gspec(2, m)
    orc = exact_gaussian(spec, dom, pins)
    b = metropolis_run(spec, dom, init=orc.mean.values, sweeps=200_000, seed=5, burn_in=1000, pins=pins, thin=5)
    X, mu, C, free = b.snapshots, orc.mean.values, orc.cov, orc.free
    c = dom.indices_of(np.array([[4, 4]]))[0]
    nb = dom.indices_of(np.array([[4, 5]]))[0]
    kc, kn = int(np.nonzero(free == c)[0][0]), int(np.nonzero(free == nb)[0][0])
    zs = [series_z(X[:, s, j], mu[s, j]) for s in free for j in range(m)]
    zs.append(series_z((X[:, c, 0] - mu[c, 0]) ** 2, C[kc, kc]))
    zs.append(series_z((X[:, c, 0] - mu[c, 0]) * (X[:, nb, 0] - mu[nb, 0]), C[kc, kn]))
    zs.append(series_z(X[:, free, 0].mean(axis=1), mu[free, 0].mean()))
    worst = float(np.max(np.abs(zs)))
    ok = worst <= 3.0
    criterion(2, f"Metropolis moments 8x8 m={m}", ok, f"max |z| {worst:.2f} over {len(zs)} moments")
    assert ok


# --------------------------------------------------------------------------
# 3. free-energy formulations

KAPPAS = (0.5, 0.25, 0.125)
EPS3 = {1: (1 / 4, 1 / 8, 1 / 16, 1 / 32), 2: (1 / 4, 1 / 8, 1 / 16)}
B3 = Budget(sweeps=4000, burn_in=500, path_points=8)


def _maps(d):
    if d == 1:
        return {"0": AffineMap([[0.0]]), "id": AffineMap([[1.0]]), "2id": AffineMap([[2.0]])}
    return {"0": AffineMap.zero(2, 2), "id": AffineMap.identity(2), "2id": AffineMap.identity(2, 2.0)}


@pytest.fixture(scope="module")
def c3_table():
    """Every formulation for d = 1 (m = 1) and d = 2 (m = 2) at L in {0, id, 2 id}."""
    out = {}
    for d in (1, 2):
        spec = gspec(d, d)
        for name, L in _maps(d).items():
            eps = EPS3[d]
            rows = {"soft_clamp": estimate_W(spec, L, "soft_clamp", eps, budget=B3, seed=31),
                    "periodic": estimate_W(spec, L, "periodic", eps, budget=B3, seed=32)}
            for k in KAPPAS:
                rows[f"lr_neighborhood@{k}"] = estimate_W(spec, L, "lr_neighborhood", eps, kappa=k, budget=B3)
                rows[f"combined@{k}"] = estimate_W(spec, L, "combined", eps, kappa=k, budget=B3, seed=33)
            out[(d, name)] = (spec, L, rows)
    return out


def _agree(rows, exact):
    bad = []
    keys = sorted(rows)
    for k in keys:
        e = rows[k]
        if abs(e.value - exact) > 3 * e.se:
            bad.append(f"{k} vs exact")
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            ea, eb = rows[a], rows[b]
            if abs(ea.value - eb.value) > 3 * math.hypot(ea.se, eb.se):
                bad.append(f"{a} vs {b}")
    return bad


def test_c3_formulations_agree(criterion, c3_table):
    bad, n = [], 0
    for (d, name), (spec, L, rows) in c3_table.items():
        use = {k: v for k, v in rows.items() if not k.startswith("lr_") or name == "0"}
        n += len(use)
        bad += [f"d={d} L={name}: {b}" for b in _agree(use, gaussian_W_limit(d, d, L))]
    ok = not bad
    criterion(3, "soft/combined/periodic (and lr at L=0) agree", ok,
              f"{n} estimates, pairwise and against the exact value" + ("" if ok else f"; {bad[:3]}"))
    assert ok


def test_c3_limits_and_clamped_per_eps_in_bracket(criterion, c3_table):
    bad = []
    for (d, name), (spec, L, rows) in c3_table.items():
        bc = bound_constants(spec.growth, L, d)
        for k, e in rows.items():
            if not bc["b"] - 3 * e.se <= e.value <= bc["B"] + 3 * e.se:
                bad.append(f"d={d} L={name} {k} limit")
            if k.startswith(("soft_clamp", "combined")):
                for eps, v, s in zip(e.eps_list, e.per_eps, e.per_eps_se):
                    if not bc["b"] - 3 * s <= v <= bc["B"] + 3 * s:
                        bad.append(f"d={d} L={name} {k} eps={eps}")
    ok = not bad
    criterion(3, "limits and clamped per-eps values in [b, B(L)]", ok,
              "all within 3 se of the bracket" if ok else str(bad[:3]))
    assert ok


def test_c3_kappa_monotone(criterion):
    bad = []
    dom = build_domain(Box.unit(1), 1 / 3, 1)
    for kind, p in (("gaussian_gradient", 2.0), ("p_power_gradient", 4.0)):
        spec = PotentialSpec(kind, 1, 1, p=p, patch="forward")
        if not kappa_monotonicity(spec, dom, AffineMap([[0.7]]), [*KAPPAS, 1.0])["monotone"]:
            bad.append(f"quadrature {kind}")
    # exact per-eps column for larger systems
    for d in (1, 2):
        spec = gspec(d, d)
        for name, L in _maps(d).items():
            dom = build_domain(Box.unit(d), 1 / 8, d)
            col = [-lr_gaussian_logZ(spec, dom, L, k).logZ for k in sorted(KAPPAS)]
            if np.any(np.diff(col) > 0):
                bad.append(f"d={d} L={name} exact column")
    ok = not bad
    criterion(3, "W_kappa monotone in kappa (quadrature and exact columns)", ok,
              "2 quadrature sweeps, 6 exact columns" if ok else str(bad))
    assert ok


@pytest.mark.xfail(strict=True, reason="l^r-neighbourhood at fixed kappa relaxes the tilt for L != 0")
def test_c3_lr_at_tilted_L(criterion, c3_table):
    bad = []
    for (d, name), (spec, L, rows) in c3_table.items():
        if name == "0":
            continue
        exact = gaussian_W_limit(d, d, L)
        for k in KAPPAS:
            e = rows[f"lr_neighborhood@{k}"]
            if abs(e.value - exact) > 3 * e.se:
                bad.append(f"d={d} L={name} kappa={k}: {e.value:.3f} vs {exact:.3f}")
    criterion(3, "lr_neighborhood agrees at L != 0", not bad, f"{len(bad)} of 12 off" + (f"; {bad[0]}" if bad else ""))
    assert not bad


@pytest.mark.xfail(strict=True, reason="free-boundary values at finite eps sit below the limit bound b")
def test_c3_free_boundary_per_eps_in_bracket(criterion, c3_table):
    bad = []
    for (d, name), (spec, L, rows) in c3_table.items():
        bc = bound_constants(spec.growth, L, d)
        for k, e in rows.items():
            if not k.startswith(("lr_", "periodic")):
                continue
            for eps, v, s in zip(e.eps_list, e.per_eps, e.per_eps_se):
                if not bc["b"] - 3 * s <= v <= bc["B"] + 3 * s:
                    bad.append(f"d={d} L={name} {k} eps={eps}: {v:.3f} < b={bc['b']:.3f}")
    criterion(3, "free-boundary per-eps values in [b, B(L)]", not bad,
              f"{len(bad)} values outside" + (f"; e.g. {bad[0]}" if bad else ""))
    assert not bad


# --------------------------------------------------------------------------
# 4. subadditivity


def test_c4_subadditivity(criterion):
    viol, n = [], 0
    for kind, p in (("gaussian_gradient", 2.0), ("p_power_gradient", 4.0)):
        spec = PotentialSpec(kind, 1, 1, p=p, patch="forward")
        for sites in range(2, 7):
            dom = build_domain(Box.unit(1), 1 / sites, 1)
            for a in (0.0, 0.7, 1.5):
                for cut in range(sites + 1):
                    r = check_subadditivity(spec, AffineMap([[a]]), dom, (0, cut), method="quadrature")
                    n += 1
                    if not r["ok"] or r["slack"] < 0:
                        viol.append(("1d", kind, sites, a, cut))
    for m in (1, 2):
        spec = gspec(2, m)
        for side in (4, 6, 8):
            dom = build_domain(Box.unit(2), 1 / side, m)
            for A in (np.zeros((m, 2)), np.eye(m, 2), np.array([[0.3, -1.2]] * m)):
                for axis in (0, 1):
                    for cut in range(side + 1):
                        r = check_subadditivity(spec, AffineMap(A), dom, (axis, cut), method="hard_pin")
                        n += 1
                        if r["slack"] < 0:
                            viol.append(("2d", m, side, axis, cut))
    ok = not viol
    criterion(4, "subadditivity slack >= 0", ok, f"{n} bisections, {len(viol)} violations")
    assert ok


# --------------------------------------------------------------------------
# 5. exponential tightness


def test_c5_tightness_quadrature(criterion):
    spec = gspec(1, 1)
    D = bound_constants(spec.growth, 0.0, 1)["D"]
    K0 = 2 * math.log(D)  # the bound drops below one per site from here
    Ks = list(K0 + np.linspace(0.0, 18.0, 10))
    bad, n = [], 0
    for sites in (2, 3):
        dom = build_domain(Box.unit(1), 1 / sites, 1)
        for a in (0.0, 0.7, 1.5):
            for row in check_tightness(spec, dom, soft_clamp(dom, AffineMap([[a]]), 1.0), Ks):
                n += 1
                if not row["ok"]:
                    bad.append((sites, a, row["K"]))
    ok = not bad
    criterion(5, "quadrature Z(M_K) below the bound", ok, f"{n} (system, K) pairs, K0 = {K0:.3f}")
    assert ok


def test_c5_tightness_mc(criterion):
    spec = gspec(2, 1)
    dom = build_domain(Box.unit(2), 1 / 8, 1)
    L = AffineMap([[0.5, 0.2]])
    z = clamp_logZ(spec, dom, L, B3, seed=1)
    rows = check_tightness(spec, dom, soft_clamp(dom, L, spec.R0), [0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0],
                           method="mc", budget=Budget(sweeps=20000, burn_in=1000), seed=3, logZ_set=z)
    ok = all(r["ok"] for r in rows)
    hits = [r["hits"] for r in rows]
    criterion(5, "Monte Carlo on 8x8", ok, f"hits per K {hits}")
    assert ok


# --------------------------------------------------------------------------
# 6. norm sandwich

CELLS = [(d, m, r) for d in (1, 2) for m in (1, 2) for r in (1, 2, 4)]


@pytest.fixture(scope="module")
def c6_slacks():
    rng = np.random.default_rng(6)
    out = {}
    for d, m, r in CELLS:
        dom = build_domain(Box.unit(d), 1 / 8, m)
        rows = []
        for _ in range(1000):
            X = Configuration(dom, rng.normal(size=(dom.n_sites, m)))
            s = check_sandwich(norms(X, None, r=r, p=r))
            rows.append((*s["disc_lr"], *s["disc_grad_lp"]))
        out[(d, m, r)] = np.array(rows)
    return out


def test_c6_gradient_sandwich_and_value_lower(criterion, c6_slacks):
    counts = {c: int(((a[:, [0, 2, 3]]) < 0).any(axis=1).sum()) for c, a in c6_slacks.items()}
    ok = sum(counts.values()) == 0
    criterion(6, "gradient sandwich (both sides) and value lower side", ok,
              f"12 cells x 1000 configs, {sum(counts.values())} violations")
    assert ok


@pytest.mark.xfail(strict=True, reason="rough configurations: eps^{d+r} sum |X|^r exceeds 2 ||Pi X||^r")
def test_c6_value_upper(criterion, c6_slacks):
    counts = {c: int((a[:, 1] < 0).sum()) for c, a in c6_slacks.items()}
    bad = {f"d{c[0]}m{c[1]}r{c[2]}": v for c, v in counts.items() if v}
    criterion(6, "value upper side", not bad, f"violations per cell {bad}")
    assert not bad


# --------------------------------------------------------------------------
# 7. null Lagrangian


def test_c7_null_lagrangian(criterion):
    rng = np.random.default_rng(7)
    worst_area, worst_inv = 0.0, 0.0
    shapes = [(Box.unit(2), 1 / 6), (Box((0, 0), (1, 0.5)), 1 / 8), (Box.unit(2), 1 / 10)]
    for k in range(1000):
        box, eps = shapes[k % 3]
        dom = build_domain(box, eps, 2)
        ring = boundary_ring(dom)
        inner = np.setdiff1d(np.arange(dom.n_sites), ring)
        X = Configuration(dom, rng.normal(size=(dom.n_sites, 2)) * rng.uniform(0.1, 5.0))
        total_V = plaquettes(dom).shape[0] - null_lagrangian_energy(X, 1.0)
        worst_area = max(worst_area, abs(total_V - shoelace_area(X.values[ring])))
        Y = X.copy()
        Y.values[inner] = rng.normal(size=(inner.size, 2)) * 10
        worst_inv = max(worst_inv, abs(null_lagrangian_energy(Y, 2.5) - null_lagrangian_energy(X, 2.5)))
    ok = worst_area < 1e-9 and worst_inv < 1e-9
    criterion(7, "sum V = shoelace; interior invariance", ok, f"max errors {worst_area:.1e}, {worst_inv:.1e}")
    assert ok


# --------------------------------------------------------------------------
# 8. non-convexity


def test_c8_nonconvexity(criterion):
    base = gspec(2, 2)
    M = threshold_M(base) + 10.0
    r = run_nonconvexity(base, M, [1 / 8], Budget(sweeps=20000, burn_in=2000, path_points=12), seed=8,
                         with_base=False)
    sym = abs(r.checks["symmetry"]) <= 3 * r.checks["symmetry_se"]
    ok = r.gap - 3 * r.gap_se > 0 and sym
    criterion(8, "midpoint gap at M = B - b + 10", ok,
              f"gap {r.gap:.2f} +/- {r.gap_se:.2f}; W(id) - W(-id) = {r.checks['symmetry']:.4f}"
              f" +/- {r.checks['symmetry_se']:.4f}")
    assert ok


# --------------------------------------------------------------------------
# 9. LDP squeeze

WEDGE_L = AffineMap([[0.5]])


def test_c9_rate_zero_at_harmonic(criterion):
    vals = []
    for spec, L in ((gspec(1, 1), WEDGE_L), (gspec(2, 2), AffineMap(np.array([[1.0, 0.2], [-0.3, 0.5]])))):
        hat = MacroField.hat(L, [0.3] * spec.m, [1] * spec.d, h=0.5)
        vals.append(rate_functional(spec, harmonic_extension(hat))["I"])
    ok = all(v == 0.0 for v in vals)
    criterion(9, "I(harmonic extension) = 0", ok, f"I = {vals}")
    assert ok


@pytest.mark.xfail(strict=True, reason="at kappa = 0.125 the neighbourhood still relaxes the wedge")
def test_c9_squeeze(criterion):
    r = ldp_check(gspec(1, 1), MacroField.wedge(WEDGE_L, 0.3), list(KAPPAS), [1 / 4, 1 / 8, 1 / 16])
    criterion(9, "F_{kappa,eps} squeeze onto the macro energy", r["squeeze"],
              f"target {r['target']:.4f}, limits by kappa {[round(x, 4) for x in r['limits']]}, "
              f"deviation {r['deviation']:.3f} vs tolerance {r['tolerance']:.3f}")
    assert r["squeeze"]


# --------------------------------------------------------------------------
# 10. Young-Gibbs diagnostics

YG_L = AffineMap([[0.6, -0.3]])
YG_WINDOWS = [((0.5, 0.5), 3), ((0.375, 0.625), 2), ((0.625, 0.375), 3)]
YG_BUDGET = Budget(sweeps=40000, burn_in=2000, thin=4)


def _slopes(boundary):
    spec = gspec(2, 1)
    b = sample_clamped(spec, YG_L, 1 / 16, YG_BUDGET, seed=10, boundary=boundary)
    return spec, b, [slope_check(st, YG_L) for st in window_stats(spec, YG_L, 1 / 16, YG_WINDOWS, batch=b)]


def test_c10_pinned_slope_exact_and_dlr(criterion):
    spec, b, checks = _slopes("pinned")
    ok_slope = all(c["pass"] for c in checks)
    criterion(10, "slope residual, pinned strip, 16x16", ok_slope,
              ", ".join(f"{c['residual']:.4f} <= 3 x {c['se']:.4f}" for c in checks))
    exact = max(exact_window_slope(spec, YG_L, 1 / 16, x, s)["residual"] for x, s in YG_WINDOWS)
    ok_exact = exact < 1e-12
    criterion(10, "linear-solve slope residual", ok_exact, f"max {exact:.1e}")
    dlr = dlr_check(spec, b, (0.5, 0.5), 3, seed=3)
    criterion(10, "DLR resampling moments", dlr["ok"], f"{dlr['n_snapshots']} snapshots, {len(dlr['rows'])} moments")
    assert ok_slope and ok_exact and dlr["ok"] and dlr["n_snapshots"] >= 10_000


@pytest.mark.xfail(strict=True, reason="soft clamp lets the strip relax: slope bias of order eps")
def test_c10_soft_clamp_slope(criterion):
    _, _, checks = _slopes("soft")
    ok = all(c["pass"] for c in checks)
    criterion(10, "slope residual, soft clamp, 16x16", ok,
              ", ".join(f"{c['residual']:.4f} vs 3 x {c['se']:.4f}" for c in checks))
    assert ok


# --------------------------------------------------------------------------
# 11. blow-up certificates


def _midpoint_sums(v, z, rho, p, d, f, k=48):
    """Independent re-evaluation of both certificate sums with a midpoint rule."""
    offs = (np.arange(k) + 0.5) / k - 0.5
    ys = np.stack(np.meshgrid(*([offs] * d), indexing="ij"), axis=-1).reshape(-1, d)
    ks = [np.arange(math.ceil(-z[j] / rho - 1e-12), math.floor((1 - z[j]) / rho - 1e-12) + 1) for j in range(d)]
    pts = np.stack(np.meshgrid(*[rho * kk + z[j] for j, kk in enumerate(ks)], indexing="ij"), axis=-1).reshape(-1, d)
    pts = pts[np.all((pts >= 0) & (pts < 1), axis=1)]
    g0 = np.asarray(v.grad(pts), float)
    q = np.clip(pts[:, None, :] + rho * ys[None], 0.0, np.nextafter(1.0, 0.0))
    gq = np.asarray(v.grad(q.reshape(-1, d)), float).reshape(pts.shape[0], ys.shape[0], *g0.shape[1:])
    mag = np.sqrt(((gq - g0[:, None]) ** 2).sum(axis=(-2, -1))) ** p
    return rho**d * mag.mean(axis=1).sum(), rho**d * np.asarray(f(pts), float).sum()


def test_c11_blowup(criterion):
    ones = lambda x: np.ones(len(x))  # noqa: E731
    fields = {"1-D kink": MacroField.hat(AffineMap([[0.2]]), 0.5, [1], h=0.5),
              "2-D kink": MacroField.wedge(AffineMap(np.array([[0.3, 0.1], [0.0, -0.2]])), [0.5, 0.25])}
    details, ok = [], True
    for name, v in fields.items():
        for rho in (1 / 4, 1 / 8):
            r = blowup_select(v, rho, 0.1, 0.5, ones)
            s1, s2 = _midpoint_sums(v, r.z, rho, 2.0, v.d, ones)
            good = r.sum_gradient < 0.1 and r.sum_density > 0.5 and s1 < 0.1 and s2 > 0.5
            ok &= good
            details.append(f"{name} rho={rho}: {r.sum_gradient:.4f} < 0.1, {r.sum_density:.3f} > 0.5")
    criterion(11, "blow-up offsets", ok, "; ".join(details))
    assert ok


# --------------------------------------------------------------------------
# 12. reproducibility

REPRO_CONFIGS = [
    {"experiment": "free-energy", "potential": {"kind": "gaussian_gradient", "d": 1, "m": 1, "patch": "forward"},
     "domain": {"eps_list": [0.25, 0.125, 0.0625]},
     "constraint": {"formulations": ["soft_clamp", "periodic"], "L": [[[0.0]], [[1.0]]]},
     "budget": {"sweeps": 1000, "path_points": 4}, "seed": 3},
    {"experiment": "young-gibbs", "potential": {"kind": "gaussian_gradient", "d": 2, "m": 1, "patch": "forward"},
     "domain": {"eps": 0.0625},
     "constraint": {"L": [[[0.6, -0.3]]], "windows": [{"center": [0.5, 0.5], "side": 3}],
                    "boundaries": ["pinned"]},
     "budget": {"sweeps": 2000, "burn_in": 200}, "seed": 4},
]


def test_c12_reproducible(criterion, tmp_path):
    runner = CliRunner()
    same = []
    for k, cfg in enumerate(REPRO_CONFIGS):
        path = tmp_path / f"c{k}.json"
        path.write_text(json.dumps(cfg))
        outs = []
        for tag, workers in (("a", "1"), ("b", "2")):
            out = tmp_path / f"{k}{tag}"
            res = runner.invoke(main, ["run", str(path), "--workers", workers, "--out", str(out)])
            assert res.exception is None or isinstance(res.exception, SystemExit), res.output
            outs.append((out / "records.jsonl").read_bytes())
        same.append(outs[0] == outs[1] and len(outs[0]) > 0)
    ok = all(same)
    criterion(12, "byte-identical records on re-run", ok, f"{len(same)} configs, workers 1 vs 2")
    assert ok

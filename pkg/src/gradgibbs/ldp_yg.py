"""Rate-function machinery and Young-Gibbs window diagnostics.

Macroscopic fields are continuous piecewise-linear maps on a coarse Kuhn mesh
of the unit box. ``F_kappa_eps`` is the normalized constrained free energy,
``rate_functional`` evaluates ``∫ W(grad v)`` minus its minimum over fields with
the same trace, ``blowup_select`` searches lattice offsets for the blow-up
certificates, and the window helpers measure local gradient statistics of the
soft-clamped Gibbs measure.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg
from scipy.interpolate import RegularGridInterpolator

from .free_energy import (Budget, _subseed, estimate_W, extrapolate, gaussian_W_limit, logZ_thermo,
                          lr_gaussian_logZ)
from .hamiltonian import lr_neighborhood, soft_clamp
from .lattice import AffineMap, Box, LatticeDomain, PLField, build_domain, discretize
from .potential import PotentialSpec
from .sampler import (SampleBatch, dlr_resample, exact_gaussian, integrated_autocorr_time, lr_center, metropolis_run,
                      pins_from_strip)

__all__ = [
    "LdpError",
    "MacroField",
    "WTable",
    "F_kappa_eps",
    "rate_functional",
    "ldp_check",
    "BlowupResult",
    "blowup_select",
    "exact_window_slope",
    "WindowStats",
    "window_stats",
    "slope_check",
    "dlr_check",
]


class LdpError(ValueError):
    pass


class MacroField:
    """Continuous piecewise-linear ``v`` on the Kuhn mesh of spacing ``h`` over ``[0, 1]^d``.

    ``trace`` is the boundary datum ``u`` (an :class:`AffineMap`) when ``v``
    is a competitor in the rate functional.
    """

    def __init__(self, nodal: np.ndarray, h: float, d: int, trace: AffineMap | None = None):
        k = int(round(1.0 / h))
        if abs(k * h - 1.0) > 1e-9:
            raise LdpError("1/h must be an integer")
        self.h = 1.0 / k
        self.k = k
        self.d = d
        self.mesh = LatticeDomain(Box((0.0,) * d, (1.0 + 0.5 * self.h,) * d), self.h, 1)
        nodal = np.asarray(nodal, dtype=float).reshape(self.mesh.n_sites, -1)
        self.m = nodal.shape[1]
        self.mesh = self.mesh.with_m(self.m)
        self.pl = PLField(self.mesh, nodal)
        self.trace = trace

    @property
    def nodal(self) -> np.ndarray:
        return self.pl.nodal

    @property
    def nodes(self) -> np.ndarray:
        return self.mesh.positions()

    def __call__(self, x) -> np.ndarray:
        return self.pl(x, extrapolate=True)

    def grad(self, x) -> np.ndarray:
        return self.pl.grad(x, extrapolate=True)

    def simplex_gradients(self) -> tuple[np.ndarray, np.ndarray]:
        return self.pl.simplex_gradients()

    def boundary_nodes(self) -> np.ndarray:
        s = self.mesh.sites
        return np.nonzero(np.any((s == 0) | (s == self.k), axis=1))[0]

    def boundary_defect(self) -> float:
        """Max of ``|v - u|`` over boundary nodes (0 for admissible competitors)."""
        if self.trace is None:
            return 0.0
        b = self.boundary_nodes()
        return float(np.abs(self.nodal[b] - self.trace(self.nodes[b])).max())

    def on(self, dom: LatticeDomain) -> PLField:
        """Nodal interpolation ``v(eps i)`` on the lattice (exact when the meshes align)."""
        return PLField(dom, self(dom.positions()))

    def shifted(self, c) -> "MacroField":
        return MacroField(self.nodal + np.asarray(c, float), self.h, self.d, self.trace)

    def with_nodal(self, nodal) -> "MacroField":
        return MacroField(nodal, self.h, self.d, self.trace)

    # constructors
    @classmethod
    def affine(cls, L: AffineMap, h: float = 0.5) -> "MacroField":
        mesh = LatticeDomain(Box((0.0,) * L.d, (1.0 + 0.5 * h,) * L.d), h, L.m)
        return cls(L(mesh.positions()), h, L.d, trace=L)

    @classmethod
    def hat(cls, L: AffineMap, amplitude, node, h: float = 0.5) -> "MacroField":
        """``L + amplitude * phi_node`` with ``phi_node`` the nodal basis function (``node`` in mesh units)."""
        base = cls.affine(L, h)
        idx = base.mesh.indices_of(np.atleast_2d(np.asarray(node, dtype=np.int64)))[0]
        if idx < 0:
            raise LdpError("node outside the mesh")
        vals = base.nodal.copy()
        vals[idx] += np.asarray(amplitude, float).reshape(L.m)
        return cls(vals, h, L.d, trace=L)

    @classmethod
    def wedge(cls, L: AffineMap, amplitude) -> "MacroField":
        """Two-simplex field: ``L`` plus a kink across the mesh diagonal (d = 2) or the midpoint (d = 1)."""
        amp = np.asarray(amplitude, float).reshape(L.m)
        if L.d == 1:
            return cls.hat(L, amp, [1], h=0.5)
        # amp * (x1 - x2)_+ is linear on each side of the diagonal, which is a mesh line
        base = cls.affine(L, 0.5)
        x = base.nodes
        vals = base.nodal + np.maximum(x[:, 0] - x[:, 1], 0.0)[:, None] * amp
        return cls(vals, 0.5, 2, trace=None)

    @classmethod
    def from_function(cls, fn: Callable, h: float, d: int, trace: AffineMap | None = None) -> "MacroField":
        mesh = LatticeDomain(Box((0.0,) * d, (1.0 + 0.5 * h,) * d), h, 1)
        return cls(np.asarray(fn(mesh.positions()), float), h, d, trace)


class WTable:
    """Free-energy values on a tensor grid of gradient matrices with multilinear interpolation.

    ``axes`` lists the grid of each matrix entry (row-major ``(m, d)``);
    a closed-form callable can be used instead.
    """

    def __init__(self, axes: Sequence[Sequence[float]] | None = None, values: np.ndarray | None = None,
                 m: int = 1, d: int = 1, fn: Callable | None = None, se: np.ndarray | None = None):
        self.m, self.d = m, d
        self.fn = fn
        self.axes = None if axes is None else [np.asarray(a, float) for a in axes]
        self.values = None if values is None else np.asarray(values, float)
        self.se = None if se is None else np.asarray(se, float)
        if fn is None:
            if self.axes is None or self.values is None or len(self.axes) != m * d:
                raise LdpError("table needs one axis per matrix entry and matching values")
            self._interp = RegularGridInterpolator(self.axes, self.values, method="linear", bounds_error=True)
            self._interp_se = None if self.se is None else RegularGridInterpolator(self.axes, self.se,
                                                                                  bounds_error=True)

    @classmethod
    def closed_form(cls, fn: Callable, m: int, d: int) -> "WTable":
        return cls(m=m, d=d, fn=fn)

    @classmethod
    def gaussian(cls, d: int, m: int) -> "WTable":
        return cls.closed_form(lambda A: gaussian_W_limit(d, m, AffineMap(np.asarray(A).reshape(m, d))), m, d)

    @classmethod
    def build(cls, spec: PotentialSpec, axes: Sequence[Sequence[float]], eps_list: Sequence[float],
              formulation: str = "soft_clamp", budget=None, seed: int = 0) -> "WTable":
        axes = [np.asarray(a, float) for a in axes]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        vals = np.empty(grid.shape[:-1])
        ses = np.empty(grid.shape[:-1])
        for idx in np.ndindex(*vals.shape):
            A = grid[idx].reshape(spec.m, spec.d)
            est = estimate_W(spec, AffineMap(A), formulation, eps_list, budget=budget, seed=_subseed(seed, idx))
            vals[idx], ses[idx] = est.value, est.se
        return cls(axes, vals, spec.m, spec.d, se=ses)

    def __call__(self, A) -> float:
        return self.evaluate(A)[0]

    def evaluate(self, A) -> tuple[float, float]:
        A = np.asarray(A, float).reshape(self.m, self.d)
        if self.fn is not None:
            return float(self.fn(A)), 0.0
        pt = A.ravel()[None]
        try:
            v = float(self._interp(pt)[0])
        except ValueError as exc:
            raise LdpError(f"gradient {A.ravel().tolist()} outside the tabulated range") from exc
        s = 0.0 if self._interp_se is None else float(self._interp_se(pt)[0])
        return v, s


def _domain(d: int, m: int, eps: float) -> LatticeDomain:
    return build_domain(Box.unit(d), eps, m)


def F_kappa_eps(spec: PotentialSpec, v, kappa: float, eps: float, budget=None, seed: int = 0) -> tuple[float, float]:
    """``-eps^d |Omega|^{-1} log Z(N(v, kappa))`` with its standard error."""
    if kappa <= 0:
        raise LdpError("kappa must be positive")
    budget = Budget.coerce(budget)
    dom = _domain(spec.d, spec.m, eps)
    if spec.kind == "gaussian_gradient":
        z = lr_gaussian_logZ(spec, dom, v, kappa)
    else:
        z = logZ_thermo(spec, dom, lr_neighborhood(dom, v, kappa), budget.path_points, budget.sweeps, seed,
                        burn_in=budget.burn_in)
    f = eps**spec.d / dom.box.volume
    return -f * z.logZ, f * z.se


def _energy(field_: MacroField, W) -> tuple[float, float]:
    grads, vols = field_.simplex_gradients()
    tot, var = 0.0, 0.0
    for g, vol in zip(grads, vols):
        w, s = W.evaluate(g) if isinstance(W, WTable) else (float(W(g)), 0.0)
        tot += vol * w
        var += (vol * s) ** 2
    return float(tot), math.sqrt(var)


def _gradient_operator(field_: MacroField) -> tuple[np.ndarray, np.ndarray]:
    """Matrix mapping scalar nodal values to stacked per-simplex gradients, and the volumes."""
    N = field_.mesh.n_sites
    dom1 = field_.mesh.with_m(1)
    cols = []
    for j in range(N):
        e = np.zeros((N, 1))
        e[j] = 1.0
        g, vol = PLField(dom1, e).simplex_gradients()
        cols.append(g[:, 0, :].ravel())
    return np.stack(cols, axis=1), vol


def harmonic_extension(field_: MacroField) -> MacroField:
    """Minimizer of ``∫ |grad w|^2`` on the mesh with ``w = u`` on boundary nodes."""
    if field_.trace is None:
        raise LdpError("harmonic extension needs a trace")
    G, vol = _gradient_operator(field_)
    Wt = np.repeat(vol, field_.d)
    K = G.T @ (Wt[:, None] * G)
    b = field_.boundary_nodes()
    inner = np.setdiff1d(np.arange(field_.mesh.n_sites), b)
    vals = np.empty_like(field_.nodal)
    vals[b] = field_.trace(field_.nodes[b])
    if inner.size:
        rhs = -K[np.ix_(inner, b)] @ vals[b]
        vals[inner] = linalg.solve(K[np.ix_(inner, inner)], rhs, assume_a="pos")
    return field_.with_nodal(vals)


def rate_functional(spec: PotentialSpec, v: MacroField, u: AffineMap | None = None, W=None,
                    amplitudes: Sequence[float] = (-0.5, -0.25, 0.25, 0.5)) -> dict:
    """``I(v) = ∫ W(grad v) - min``; the minimum is exact for the quadratic spec.

    Otherwise the minimum runs over the harmonic extension plus single-hat
    perturbations of the listed amplitudes, and ``exact_min`` is ``False``.
    """
    u = v.trace if u is None else u
    if u is None:
        raise LdpError("rate functional needs the boundary trace")
    vv = v if v.trace is u else MacroField(v.nodal, v.h, v.d, trace=u)
    if vv.boundary_defect() > 1e-9:
        raise LdpError("v does not match the trace on the boundary")
    W = WTable.gaussian(spec.d, spec.m) if W is None else W
    E, se = _energy(vv, W)
    harm = harmonic_extension(vv)
    E_min, se_min = _energy(harm, W)
    exact = spec.kind == "gaussian_gradient"
    if not exact:
        inner = np.setdiff1d(np.arange(harm.mesh.n_sites), harm.boundary_nodes())
        for j in inner:
            for c in range(harm.m):
                for a in amplitudes:
                    vals = harm.nodal.copy()
                    vals[j, c] += a
                    e, s = _energy(harm.with_nodal(vals), W)
                    if e < E_min:
                        E_min, se_min = e, s
    I = E - E_min
    if exact and np.allclose(vv.nodal, harm.nodal, atol=1e-12, rtol=0.0):
        I = 0.0
    return {"I": I, "energy": E, "min": E_min, "se": math.hypot(se, se_min), "exact_min": exact}


def ldp_check(spec: PotentialSpec, v, kappa_list: Sequence[float], eps_list: Sequence[float], W=None,
              budget=None, seed: int = 0) -> dict:
    """``F_{kappa,eps}(v)`` on a grid against ``|Omega|^{-1} ∑ vol W(grad v)``.

    For every ``kappa`` the per-scale values are extrapolated in ``eps``; the
    squeeze is judged at the smallest ``kappa``.
    """
    W = WTable.gaussian(spec.d, spec.m) if W is None else W
    target, target_se = _energy(v, W)
    kappas = sorted((float(k) for k in kappa_list), reverse=True)
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    table, rows = {}, []
    for i, k in enumerate(kappas):
        vals, ses = [], []
        for j, e in enumerate(eps_list):
            val, s = F_kappa_eps(spec, v, k, e, budget, _subseed(seed, i, j))
            vals.append(val)
            ses.append(s)
            rows.append({"kappa": k, "eps": e, "F": val, "se": s})
        ex = extrapolate(eps_list, vals, ses, log_term=spec.d == 1)
        table[k] = {"per_eps": vals, "se": ses, "limit": ex["value"], "limit_se": ex["se_mc"],
                    "residual": ex["residual"]}
    fin = table[kappas[-1]]
    tol = 3.0 * math.hypot(fin["limit_se"], target_se) + fin["residual"]
    dev = fin["limit"] - target
    # per-eps trend toward the target at fixed kappa
    trend = {k: bool(np.all(np.diff(np.abs(np.asarray(t["per_eps"]) - target)) <= 0)) for k, t in table.items()}
    return {"target": target, "target_se": target_se, "table": table, "rows": rows, "kappa_min": kappas[-1],
            "deviation": dev, "tolerance": tol, "squeeze": bool(abs(dev) <= tol),
            "limits": [table[k]["limit"] for k in kappas], "kappas": kappas, "eps_trend_monotone": trend}


@dataclass
class BlowupResult:
    z: np.ndarray
    rho: float
    sum_gradient: float
    sum_density: float
    delta: float
    ell: float
    n_points: int
    tried: int

    def to_record(self) -> dict:
        out = asdict(self)
        out["z"] = self.z.tolist()
        return out


def _gl_cube(d: int, order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    x, w = 0.5 * x, 0.5 * w
    grids = np.meshgrid(*([x] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wts = np.prod(np.meshgrid(*([w] * d), indexing="ij"), axis=0).ravel()
    return pts, wts


def blowup_select(v, rho: float, delta: float, ell: float, f: Callable, p: float = 2.0, grid: int = 16,
                  order: int = 8, box: Box | None = None) -> BlowupResult:
    """Search ``z`` in ``Q(rho)`` so that on ``L = rho Z^d + z`` (points inside the box)

    ``sum_x rho^d ∫_{Q(1)} |grad v(x + rho y) - grad v(x)|^p dy < delta`` and
    ``rho^d sum_x f(x) > ell``. Gradients at points outside the box are taken
    at the nearest box point.
    """
    d = v.d if hasattr(v, "d") else (box.d if box else 1)
    box = Box.unit(d) if box is None else box
    lo = np.asarray(box.lower, float)
    hi = np.asarray(box.upper, float)
    ypts, ywts = _gl_cube(d, order)
    # precondition: ∫ f > ell, by a fine tensor rule
    fine = 64
    cells = np.stack(np.meshgrid(*[lo[k] + (np.arange(fine) + 0.5) * (hi[k] - lo[k]) / fine for k in range(d)],
                                 indexing="ij"), axis=-1).reshape(-1, d)
    integral = float(np.asarray(f(cells), float).sum() * np.prod(hi - lo) / fine**d)
    if not integral > ell:
        raise LdpError(f"∫f = {integral:.6g} does not exceed ell = {ell}")
    offs = (np.arange(grid) + 0.5) / grid - 0.5
    zs = np.stack(np.meshgrid(*([offs * rho] * d), indexing="ij"), axis=-1).reshape(-1, d)
    best = None
    for t, z in enumerate(zs):
        ks = [np.arange(math.ceil((lo[k] - z[k]) / rho - 1e-12), math.floor((hi[k] - z[k]) / rho - 1e-12) + 1)
              for k in range(d)]
        pts = np.stack(np.meshgrid(*[rho * kk + z[k] for k, kk in enumerate(ks)], indexing="ij"),
                       axis=-1).reshape(-1, d)
        pts = pts[np.all((pts >= lo) & (pts < hi), axis=1)]
        if pts.shape[0] == 0:
            continue
        g0 = np.asarray(v.grad(pts), float)
        q = np.clip(pts[:, None, :] + rho * ypts[None], lo, np.nextafter(hi, lo))
        gq = np.asarray(v.grad(q.reshape(-1, d)), float).reshape(pts.shape[0], ypts.shape[0], *g0.shape[1:])
        diff = gq - g0[:, None]
        mag = np.sqrt((diff**2).sum(axis=(-2, -1))) ** p
        s1 = float(rho**d * (mag @ ywts).sum())
        s2 = float(rho**d * np.asarray(f(pts), float).sum())
        if s1 < delta and s2 > ell:
            return BlowupResult(z, float(rho), s1, s2, float(delta), float(ell), int(pts.shape[0]), t + 1)
        margin = min(delta - s1, s2 - ell)
        if best is None or margin > best[0]:
            best = (margin, z, s1, s2)
    raise LdpError(f"no offset qualifies; best margins: gradient sum {best[2]:.6g} vs {delta}, "
                   f"density sum {best[3]:.6g} vs {ell}")


@dataclass
class WindowStats:
    center: list
    side: int
    sites: list
    n_samples: int
    mean_grad: np.ndarray
    se_grad: np.ndarray
    cov_grad: np.ndarray
    center_mean: np.ndarray
    center_se: np.ndarray
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    series: np.ndarray = field(repr=False, default=None)

    def to_record(self) -> dict:
        out = {}
        for k, val in asdict(self).items():
            if k == "series":
                continue
            out[k] = val.tolist() if isinstance(val, np.ndarray) else val
        return out


def _window_sites(dom: LatticeDomain, x, side: int, R0: float, eta: float) -> np.ndarray:
    if side > 5 or side < 1:
        raise LdpError("window side must be between 1 and 5")
    c = np.floor(np.asarray(x, float) / dom.eps + 1e-9).astype(np.int64)
    lo = c - (side - 1) // 2
    grids = np.meshgrid(*[np.arange(lo[k], lo[k] + side) for k in range(dom.d)], indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    idx = dom.indices_of(pts)
    reach = int(math.ceil(R0)) + 1
    probe = np.concatenate([pts - reach, pts + reach])
    if np.any(idx < 0) or np.any(dom.indices_of(probe) < 0):
        raise LdpError("window too close to the boundary")
    if np.any(np.minimum(pts * dom.eps - np.asarray(dom.box.lower), np.asarray(dom.box.upper) - pts * dom.eps) <= eta):
        raise LdpError("window too close to the boundary")
    return idx


def _grad_series(dom: LatticeDomain, snaps: np.ndarray, sites: np.ndarray) -> np.ndarray:
    """Forward differences ``(T, |window|, m, d)``."""
    out = np.empty((snaps.shape[0], sites.size, dom.m, dom.d))
    for k in range(dom.d):
        nb = dom.neighbor(k)[sites]
        out[..., k] = snaps[:, nb] - snaps[:, sites]
    return out


def _mean_se(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    flat = y.reshape(y.shape[0], -1)
    mu = flat.mean(axis=0)
    se = np.empty_like(mu)
    for j in range(flat.shape[1]):
        col = flat[:, j]
        if col.std() == 0:
            se[j] = 0.0
            continue
        se[j] = col.std(ddof=1) * math.sqrt(integrated_autocorr_time(col) / col.size)
    return mu.reshape(y.shape[1:]), se.reshape(y.shape[1:])


def sample_clamped(spec: PotentialSpec, u, eps: float, budget=None, seed: int = 0,
                   boundary: str = "soft") -> SampleBatch:
    """Snapshots with boundary datum ``u`` (affine or macro field) on the ``R0``-strip.

    ``boundary="soft"`` keeps strip sites within unit distance of the datum;
    ``"pinned"`` fixes them to it.
    """
    budget = Budget.coerce(budget)
    dom = _domain(spec.d, spec.m, eps)
    Y = discretize(u, dom).values if isinstance(u, AffineMap) else lr_center(u, dom)
    if boundary == "soft":
        cons, pins = soft_clamp(dom, Y, spec.R0), None
    elif boundary == "pinned":
        cons, pins = None, pins_from_strip(dom, Y, spec.R0)
    else:
        raise LdpError(f"unknown boundary mode {boundary!r}")
    return metropolis_run(spec, dom, cons, init=Y, sweeps=budget.sweeps, seed=seed,
                          burn_in=budget.burn_in, thin=budget.thin, pins=pins)


def window_stats(spec: PotentialSpec, u, eps: float, windows: Sequence[tuple], budget=None, seed: int = 0,
                 eta: float = 0.0, bins: int = 30, batch: SampleBatch | None = None,
                 boundary: str = "soft") -> list[WindowStats]:
    """Gradient statistics on windows ``(x, side)`` of one clamped chain."""
    b = sample_clamped(spec, u, eps, budget, seed, boundary) if batch is None else batch
    dom = b.domain
    out = []
    for x, side in windows:
        sites = _window_sites(dom, x, int(side), spec.R0, eta)
        gs = _grad_series(dom, b.snapshots, sites)
        wmean = gs.mean(axis=1)  # (T, m, d)
        mu, se = _mean_se(wmean)
        cov = np.cov(wmean.reshape(wmean.shape[0], -1), rowvar=False).reshape(dom.m * dom.d, dom.m * dom.d)
        ci = sites.size // 2
        c_series = gs[:, ci]
        cmu, cse = _mean_se(c_series)
        lo, hi = float(c_series.min()), float(c_series.max())
        edges = np.linspace(lo, hi if hi > lo else lo + 1.0, bins + 1)
        counts = np.stack([[np.histogram(c_series[:, c, k], edges)[0] for k in range(dom.d)] for c in range(dom.m)])
        out.append(WindowStats(list(np.asarray(x, float).ravel()), int(side), sites.tolist(), int(b.snapshots.shape[0]),
                               mu, se, np.atleast_2d(cov), cmu, cse, edges, counts, wmean))
    return out


def slope_check(stats: WindowStats, v) -> dict:
    """``|E grad X - grad v(x)|`` with its error; passes when within three standard errors."""
    x = np.atleast_2d(np.asarray(stats.center, float))
    target = np.asarray(v.grad(x), float)[0] if not isinstance(v, AffineMap) else v.A
    diff = stats.mean_grad - target
    res = float(np.linalg.norm(diff))
    se = float(np.sqrt((stats.se_grad**2).sum()))
    return {"residual": res, "se": se, "pass": bool(res <= 3 * se), "difference": diff.tolist()}


def exact_window_slope(spec: PotentialSpec, u, eps: float, x, side: int) -> dict:
    """Mean window gradient of the hard-pinned Gaussian model by one linear solve, against ``grad u``."""
    dom = _domain(spec.d, spec.m, eps)
    Y = discretize(u, dom).values if isinstance(u, AffineMap) else lr_center(u, dom)
    orc = exact_gaussian(spec, dom, pins_from_strip(dom, Y, spec.R0))
    sites = _window_sites(dom, x, int(side), spec.R0, 0.0)
    mean = _grad_series(dom, orc.mean.values[None], sites)[0].mean(axis=0)
    xx = np.atleast_2d(np.asarray(x, float))
    target = u.A if isinstance(u, AffineMap) else np.asarray(u.grad(xx), float)[0]
    diff = mean - target
    return {"mean_grad": mean.tolist(), "residual": float(np.linalg.norm(diff)), "difference": diff.tolist()}


def dlr_check(spec: PotentialSpec, batch: SampleBatch, x, side: int, sweeps: int = 20, seed: int = 0,
              observables: Sequence[Callable] | None = None) -> dict:
    """Window moments before and after conditional resampling, compared by a paired difference."""
    dom = batch.domain
    sites = _window_sites(dom, x, side, spec.R0, 0.0)
    post = dlr_resample(spec, batch, sites, sweeps=sweeps, seed=seed)
    obs = observables or [lambda g: g.mean(axis=1).reshape(g.shape[0], -1),
                          lambda g: (g**2).sum(axis=(-2, -1)).mean(axis=1)[:, None]]
    g0 = _grad_series(dom, batch.snapshots, sites)
    g1 = _grad_series(dom, post.snapshots, sites)
    rows = []
    ok = True
    for fn in obs:
        a = np.asarray(fn(g0), float).reshape(g0.shape[0], -1)
        b = np.asarray(fn(g1), float).reshape(g1.shape[0], -1)
        for j in range(a.shape[1]):
            dlt = b[:, j] - a[:, j]
            tau = integrated_autocorr_time(dlt) if dlt.std() > 0 else 1.0
            se = float(dlt.std(ddof=1) * math.sqrt(tau / dlt.size)) if dlt.size > 1 else 0.0
            mdiff = float(dlt.mean())
            good = abs(mdiff) <= 3 * se or (se == 0 and mdiff == 0)
            ok &= good
            rows.append({"pre": float(a[:, j].mean()), "post": float(b[:, j].mean()), "diff": mdiff, "se": se,
                         "ok": bool(good)})
    return {"rows": rows, "ok": bool(ok), "n_snapshots": int(batch.snapshots.shape[0])}

"""Partition-function estimators, free-energy extrapolation and the certified inequality checks.

Every Gaussian formulation has a reference oracle:

* hard pins: exact log-determinant,
* soft clamp: interior integrated out exactly (Schur complement), the strip
  integral done by thermodynamic integration from independent tilted balls,
* L^2 neighbourhood: exact Laplace inversion of ``E exp(-s T)``,
* combined: soft clamp times the sampled probability of the L^2 event,
* periodic: class representatives integrated exactly, the pair offsets by
  thermodynamic integration from the uniform law on their constraint set.

Other potentials are reached from the Gaussian reference with the same
constraint set along ``H_lam = (1 - lam) H_ref + lam H``.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, linalg, optimize, special

from .hamiltonian import (ConstraintSet, bond_graph, boundary_ring, laplacian, lr_neighborhood, periodic_domain,
                          periodic_set, plaquettes, soft_clamp, split_strip, total_energy)
from .lattice import (AffineMap, Box, Configuration, LatticeDomain, boundary_strip, build_domain,
                      discretize, mass_matrix)
from .potential import PotentialSpec, ball_volume, bound_constants
from .sampler import (DenseTarget, lr_center, LatticeTarget, QuadratureGrid, SamplerError, exact_gaussian,
                      integrated_autocorr_time, metropolis_run, quadrature_logZ, run_dense)

__all__ = [
    "Budget",
    "LogZEstimate",
    "FreeEnergyEstimate",
    "FORMULATIONS",
    "gaussian_W_limit",
    "ClampReduction",
    "clamp_reduction",
    "clamp_logZ",
    "lr_gaussian_logZ",
    "combined_gaussian_logZ",
    "periodic_gaussian_logZ",
    "logZ_thermo",
    "formulation_logZ",
    "estimate_W",
    "extrapolate",
    "check_subadditivity",
    "check_tightness",
    "quasiconvexity_probe",
    "kappa_monotonicity",
]

FORMULATIONS = ("soft_clamp", "lr_neighborhood", "combined", "periodic")
CATALAN = 0.915965594177219015054603514932384110774


@dataclass(frozen=True)
class Budget:
    """Per-point Monte Carlo effort."""

    sweeps: int = 4000
    burn_in: int = 500
    path_points: int = 8
    thin: int = 1
    min_ess: float = 50.0

    @classmethod
    def coerce(cls, b) -> "Budget":
        if b is None:
            return cls()
        if isinstance(b, Budget):
            return b
        if isinstance(b, (int, np.integer)):
            return cls(sweeps=int(b))
        return cls(**dict(b))


def _subseed(seed: int, *keys) -> int:
    h = hashlib.sha256(repr((int(seed),) + tuple(keys)).encode()).digest()
    return int.from_bytes(h[:4], "little")


@dataclass
class LogZEstimate:
    logZ: float
    se: float = 0.0
    se_mc: float = 0.0
    se_fit: float = 0.0
    method: str = "exact"
    meta: dict = field(default_factory=dict)

    def __add__(self, other: "LogZEstimate") -> "LogZEstimate":
        return LogZEstimate(self.logZ + other.logZ, math.hypot(self.se, other.se), math.hypot(self.se_mc, other.se_mc),
                            math.hypot(self.se_fit, other.se_fit), f"{self.method}+{other.method}",
                            {**self.meta, **other.meta})


@dataclass
class FreeEnergyEstimate:
    """Extrapolated free energy with its per-scale inputs."""

    value: float
    se: float
    eps_list: list
    per_eps: list
    per_eps_se: list
    formulation: str
    model: str = "affine"
    residual: float = 0.0
    slope: float = 0.0
    kappa: float | None = None
    L: list | None = None
    seeds: list = field(default_factory=list)

    def to_record(self) -> dict:
        return asdict(self)


def gaussian_W_limit(d: int, m: int, L: AffineMap | None = None) -> float:
    """Infinite-volume free energy of the unit Gaussian bond model, ``W(0) + sum_k |L e_k|^2``."""
    if d == 1:
        w0 = -0.5 * math.log(math.pi)
    elif d == 2:
        w0 = 2.0 * CATALAN / math.pi - 0.5 * math.log(math.pi)
    else:
        raise ValueError("d must be 1 or 2")
    tilt = 0.0 if L is None else float((L.A**2).sum())
    return m * w0 + tilt


def _require_gaussian_base(spec: PotentialSpec) -> None:
    if spec.exponent != 2.0:
        raise SamplerError("Gaussian oracle needs a quadratic bond energy")


# --------------------------------------------------------------------------
# Thermodynamic integration on dense quadratic targets


def _gl01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _series_mean_se(y: np.ndarray) -> tuple[float, float, float]:
    tau = integrated_autocorr_time(y)
    ess = y.size / tau
    return float(y.mean()), float(y.std(ddof=1) * math.sqrt(tau / y.size)), float(ess)


def _dense_ti(S: np.ndarray, h_fixed: np.ndarray, h_path: np.ndarray, n: int, m: int, balls, xi0: np.ndarray,
              budget: Budget, seed: int, alpha: float = 1.0, richardson: bool = True) -> tuple[float, float, float, dict]:
    """``-∫_0^1 <1/2 xi^T S xi - h_path . xi>_lam dlam`` for ``E_lam = -h_fixed . xi + lam (...)``.

    Returns the integral, its Monte Carlo error, the Richardson residual and diagnostics.
    """

    def integrand(lam, k):
        tgt = DenseTarget(lam * S, h_fixed + lam * h_path, n, m, balls)
        b = run_dense(tgt, xi0, budget.sweeps, seed=_subseed(seed, "dense", k, float(lam)),
                      burn_in=budget.burn_in, thin=budget.thin)
        flat = b.snapshots.reshape(len(b), -1)
        val = 0.5 * np.einsum("si,ij,sj->s", flat, S, flat) - flat @ h_path
        mu, se, ess = _series_mean_se(val)
        if ess < budget.min_ess:
            raise SamplerError(f"effective sample size {ess:.1f} below {budget.min_ess} at lambda={lam:.4g}")
        return mu, se, ess, b.acceptance

    def rule(npts, tag):
        t, w = _gl01(npts)
        lam = t**alpha
        jac = alpha * t ** (alpha - 1.0)
        vals, ses, diag = [], [], []
        for k, lm in enumerate(lam):
            mu, se, ess, acc = integrand(lm, (tag, k))
            vals.append(mu)
            ses.append(se)
            diag.append({"lam": float(lm), "mean": mu, "se": se, "ess": ess, "acceptance": acc})
        vals, ses = np.array(vals), np.array(ses)
        return float((w * jac * vals).sum()), float(np.sqrt(((w * jac * ses) ** 2).sum())), diag

    I, se, diag = rule(budget.path_points, "n")
    fit = 0.0
    if richardson and budget.path_points >= 4:
        I2, _, _ = rule(budget.path_points // 2, "half")
        fit = abs(I - I2)
    return -I, se, fit, {"path": diag}


# --------------------------------------------------------------------------
# Soft clamp: Schur complement + strip integral


def _log_tilted_ball(a: np.ndarray, m: int, w: float) -> np.ndarray:
    """``log ∫_{|xi| < w} exp(a . xi) dxi`` as a function of ``|a|``."""
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    small = a * w < 1e-8
    if m == 1:
        out[small] = math.log(2.0 * w)
        z = a[~small] * w
        out[~small] = z + np.log1p(-np.exp(-2.0 * z)) - np.log(a[~small])
    elif m == 2:
        out[small] = math.log(math.pi * w * w)
        z = a[~small] * w
        out[~small] = np.log(2.0 * math.pi * w / a[~small]) + np.log(special.ive(1, z)) + z
    else:
        raise ValueError("m must be 1 or 2")
    return out


def _area_form(n_s: int, ring_pos: np.ndarray) -> np.ndarray:
    """Symmetric ``K`` with ``shoelace(x_ring) = 1/2 x^T K x`` on flattened ``(site, component)``."""
    K = np.zeros((2 * n_s, 2 * n_s))
    k = ring_pos
    nxt = np.roll(ring_pos, -1)
    for a, b in zip(k, nxt):
        # 1/2 (x_a y_b - y_a x_b)
        K[2 * a, 2 * b + 1] += 0.5
        K[2 * b + 1, 2 * a] += 0.5
        K[2 * a + 1, 2 * b] -= 0.5
        K[2 * b, 2 * a + 1] -= 0.5
    return K


@dataclass
class ClampReduction:
    """Exact reduction of a soft-clamped quadratic model to its strip variables.

    ``E(xi) = 1/2 (xi + Y_S)^T S (xi + Y_S) + const`` with ``|xi_s| < width``;
    ``S`` includes ``-M K`` for the plaquette term.
    """

    domain: LatticeDomain
    strip: np.ndarray
    interior: np.ndarray
    Y: np.ndarray
    S: np.ndarray
    h: np.ndarray
    const: float
    log_interior: float
    width: float
    Q_ii_chol: np.ndarray | None
    Q_is: np.ndarray | None

    @property
    def n_strip(self) -> int:
        return int(self.strip.size)

    def balls(self) -> list:
        m = self.domain.m
        return [(k, -1, np.zeros(m), self.width) for k in range(self.n_strip)]

    def fill(self, xi: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        """Full configurations from strip offsets: interior mean (and an exact draw if ``rng`` is given)."""
        xi = np.asarray(xi, dtype=float)
        batch = xi.reshape(-1, self.n_strip, self.domain.m)
        xs = batch + self.Y[self.strip][None]
        out = np.empty((batch.shape[0], self.domain.n_sites, self.domain.m))
        out[:, self.strip] = xs
        if self.interior.size:
            rhs = -np.einsum("is,bsc->ibc", self.Q_is, xs).reshape(self.interior.size, -1)
            mean = linalg.cho_solve((self.Q_ii_chol, True), rhs).reshape(self.interior.size, batch.shape[0], -1)
            xi_int = mean.transpose(1, 0, 2)
            if rng is not None:
                z = rng.standard_normal((self.interior.size, batch.shape[0] * self.domain.m))
                noise = linalg.solve_triangular(self.Q_ii_chol, z, lower=True, trans="T")
                xi_int = xi_int + noise.reshape(self.interior.size, batch.shape[0], -1).transpose(1, 0, 2)
            out[:, self.interior] = xi_int
        return out.reshape(xi.shape[:-2] + (self.domain.n_sites, self.domain.m)) if xi.ndim > 2 else out[0]


def clamp_reduction(spec: PotentialSpec, dom: LatticeDomain, Y, width: float = 1.0) -> ClampReduction:
    _require_gaussian_base(spec)
    cs = soft_clamp(dom, Y, spec.R0, width)
    Yv = cs.params["Y"]
    strip = np.sort(cs.params["strip"])
    inside = np.ones(dom.n_sites, bool)
    inside[strip] = False
    interior = np.nonzero(inside)[0]
    g = bond_graph(spec, dom)
    Q = 2.0 * laplacian(g).toarray()
    m = dom.m
    Qss = Q[np.ix_(strip, strip)]
    if interior.size:
        Qii = Q[np.ix_(interior, interior)]
        Qis = Q[np.ix_(interior, strip)]
        try:
            chol = linalg.cholesky(Qii, lower=True)
        except linalg.LinAlgError as exc:
            raise SamplerError("interior block is singular") from exc
        S = Qss - Qis.T @ linalg.cho_solve((chol, True), Qis)
        log_int = m * (0.5 * interior.size * math.log(2 * math.pi) - float(np.log(np.diag(chol)).sum()))
    else:
        chol, Qis, S, log_int = None, None, Qss, 0.0
    S_full = np.kron(S, np.eye(m))
    const = 0.0
    if spec.kind == "composite_with_null_lagrangian" and spec.M != 0.0:
        ring = boundary_ring(dom)
        pos = {s: k for k, s in enumerate(strip)}
        if any(r not in pos for r in ring):
            raise SamplerError("boundary ring must lie in the clamped strip")
        K = _area_form(strip.size, np.array([pos[r] for r in ring]))
        S_full = S_full - spec.M * K
        n_plaq = plaquettes(dom).shape[0]
        const += spec.M * n_plaq
    ys = Yv[strip].ravel()
    h = -S_full @ ys
    const += 0.5 * float(ys @ S_full @ ys)
    return ClampReduction(dom, strip, interior, Yv, S_full, h, const, log_int, float(width), chol, Qis)


def clamp_logZ(spec: PotentialSpec, dom: LatticeDomain, Y, budget=None, seed: int = 0,
               red: ClampReduction | None = None) -> LogZEstimate:
    """Soft-clamp log-partition for quadratic bonds (optionally with the plaquette term)."""
    budget = Budget.coerce(budget)
    red = red or clamp_reduction(spec, dom, Y)
    n, m = red.n_strip, dom.m
    hs = red.h.reshape(n, m)
    log_ref = float(_log_tilted_ball(np.linalg.norm(hs, axis=1), m, red.width).sum())
    # E = -h.xi + lam * 1/2 xi^T S xi, started at the tilt direction
    norms = np.linalg.norm(hs, axis=1, keepdims=True)
    xi0 = np.where(norms > 0, 0.5 * red.width * hs / np.maximum(norms, 1e-300), 0.0)
    ti, se, fit, diag = _dense_ti(red.S, red.h, np.zeros_like(red.h), n, m, red.balls(), xi0, budget, seed)
    logZ = red.log_interior - red.const + log_ref + ti
    return LogZEstimate(logZ, math.hypot(se, fit), se, fit, "clamp-schur-ti", {"strip": n, **diag})


# --------------------------------------------------------------------------
# L^2 neighbourhood: exact inversion


def lr_gaussian_logZ(spec: PotentialSpec, dom: LatticeDomain, v, kappa: float, r: float = 2.0) -> LogZEstimate:
    """``log ∫ exp(-H) 1{||Pi X - v||_2 < kappa |Omega|^{1/2 + 1/d}}`` for quadratic bonds, free boundary.

    With ``T = ||Pi X - v||^2`` quadratic, ``E exp(-s T)`` is Gaussian in closed
    form and the constrained integral follows from the Bromwich integral of
    ``G(s) e^{s R^2} / s`` along a vertical line through the saddle point.
    """
    if r != 2.0:
        raise SamplerError("exact neighbourhood oracle is for r = 2")
    _require_gaussian_base(spec)
    if spec.kind != "gaussian_gradient":
        raise SamplerError("exact neighbourhood oracle is for the plain Gaussian")
    cs = lr_neighborhood(dom, v, kappa, r)
    R2 = cs.params["threshold"] ** 2
    Q = 2.0 * laplacian(bond_graph(spec, dom)).toarray()
    A = dom.eps ** (dom.d + 2) * mass_matrix(dom).toarray()
    x0 = lr_center(v, dom)
    n, m = dom.n_sites, dom.m
    mu, U = linalg.eigh(Q, A)
    mu = np.where(np.abs(mu) < 1e-10 * max(1.0, mu.max()), 0.0, mu)
    b = U.T @ (Q @ x0)  # (n, m)
    b2 = (b**2).sum(axis=1)
    c0 = 0.5 * float(np.einsum("ic,ij,jc->", x0, Q, x0))
    logdetA = float(np.linalg.slogdet(A)[1])
    base = m * (0.5 * n * math.log(2 * math.pi) - 0.5 * logdetA) - c0

    def phi(s):
        den = mu + 2.0 * s
        return base - 0.5 * m * np.log(den).sum() + 0.5 * (b2 / den).sum() + s * R2 - np.log(s)

    def dphi(s):
        den = mu + 2.0 * s
        return -m * (1.0 / den).sum() - (b2 / den**2).sum() + R2 - 1.0 / s

    lo, hi = 1e-12, 1.0
    while dphi(hi) < 0:
        hi *= 2.0
    while dphi(lo) > 0:
        lo *= 0.5
    sigma = optimize.brentq(dphi, lo, hi, xtol=1e-14 * hi, rtol=1e-14, maxiter=500)
    p0 = float(np.real(phi(sigma)))
    d2 = float((2 * m / (mu + 2 * sigma) ** 2).sum() + (4 * b2 / (mu + 2 * sigma) ** 3).sum() + 1 / sigma**2)
    scale = 1.0 / math.sqrt(d2)

    def ratio(y):
        # G(s)/s relative to the saddle, with the e^{i y R^2} phase removed
        return np.exp(phi(complex(sigma, y)) - p0 - 1j * y * R2)

    def integrand(y):
        return float(np.real(np.exp(phi(complex(sigma, y)) - p0)))

    # near the saddle the integrand is not oscillatory; the tail is a Fourier integral
    head = 8.0 * scale
    pieces = np.linspace(0.0, head, 9)
    total, err = 0.0, 0.0
    with warnings.catch_warnings():
        # quad's error estimates are folded into the reported residual
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for a, b_ in zip(pieces[:-1], pieces[1:]):
            val, e = integrate.quad(integrand, a, b_, epsabs=1e-15, epsrel=1e-12, limit=200)
            total += val
            err += e
        if abs(np.exp(np.real(phi(complex(sigma, head))) - p0)) > 1e-17:
            c, ec = integrate.quad(lambda y: float(np.real(ratio(y))), head, np.inf, weight="cos", wvar=R2,
                                   limlst=200)
            s_, es = integrate.quad(lambda y: float(np.imag(ratio(y))), head, np.inf, weight="sin", wvar=R2,
                                    limlst=200)
            total += c - s_
            err += ec + es
    if total <= 0:
        raise SamplerError("inverse Laplace integral is not positive")
    logZ = p0 + math.log(total / math.pi)
    return LogZEstimate(logZ, 0.0, 0.0, err / total, "bromwich", {"sigma": sigma, "R2": R2})


def _lr_T(dom: LatticeDomain, x: np.ndarray, x0: np.ndarray, Msp) -> np.ndarray:
    d = x - x0
    flat = d.reshape(-1, dom.n_sites, dom.m)
    y = np.stack([Msp @ f for f in flat])
    return dom.eps ** (dom.d + 2) * (flat * y).sum(axis=(1, 2))


def combined_gaussian_logZ(spec: PotentialSpec, dom: LatticeDomain, L, kappa: float, budget=None,
                           seed: int = 0) -> LogZEstimate:
    """Soft clamp at ``L`` intersected with the L^2 neighbourhood of ``L``."""
    budget = Budget.coerce(budget)
    red = clamp_reduction(spec, dom, L)
    base = clamp_logZ(spec, dom, L, budget, seed, red=red)
    n, m = red.n_strip, dom.m
    tgt = DenseTarget(red.S, red.h, n, m, red.balls())
    b = run_dense(tgt, np.zeros((n, m)), budget.sweeps, seed=_subseed(seed, "combined"), burn_in=budget.burn_in,
                  thin=budget.thin)
    rng = np.random.default_rng(_subseed(seed, "interior"))
    full = red.fill(b.snapshots, rng)
    x0 = lr_center(L, dom)
    R2 = lr_neighborhood(dom, L, kappa).params["threshold"] ** 2
    T = _lr_T(dom, full, x0, mass_matrix(dom))
    ind = (T < R2).astype(float)
    p = float(ind.mean())
    if p == 0.0:
        raise SamplerError("no sample inside the combined set")
    se_p = 0.0 if ind.min() == ind.max() else ind.std(ddof=1) * math.sqrt(integrated_autocorr_time(ind) / ind.size)
    add = LogZEstimate(math.log(p), se_p / p, se_p / p, 0.0, "fraction", {"fraction": p})
    return base + add


# --------------------------------------------------------------------------
# Periodic: class reduction


def _lens(s: np.ndarray, m: int, R: float = 2.0) -> np.ndarray:
    s = np.minimum(np.abs(s), 2 * R)
    if m == 1:
        return 2 * R - s
    return 2 * R * R * np.arccos(s / (2 * R)) - 0.5 * s * np.sqrt(np.maximum(4 * R * R - s * s, 0.0))


def _class_volume(n_edges: int, n_members: int, cycle4: bool, m: int, R: float) -> float:
    if not cycle4:
        return ball_volume(m, R) ** n_edges
    if m == 1:
        val, _ = integrate.quad(lambda z: _lens(np.array(z), 1, R) ** 2, -2 * R, 2 * R, epsabs=1e-13)
    else:
        val, _ = integrate.quad(lambda s: 2 * math.pi * s * float(_lens(np.array(s), 2, R)) ** 2, 0.0, 2 * R,
                                epsabs=1e-13, epsrel=1e-13)
    return float(val)


def periodic_gaussian_logZ(spec: PotentialSpec, eps: float, L: AffineMap, budget=None, seed: int = 0,
                           bound: float = 2.0) -> LogZEstimate:
    """Approximately periodic box with one pinned site; quadratic bonds."""
    _require_gaussian_base(spec)
    if spec.kind != "gaussian_gradient":
        raise SamplerError("periodic oracle is for the plain Gaussian")
    budget = Budget.coerce(budget)
    d, m = spec.d, spec.m
    dom = periodic_domain(eps, d, spec.R0, m)
    cs = periodic_set(dom, L, bound)
    a, b, off = cs.params["a"], cs.params["b"], cs.params["offset"]
    N = dom.n_sites
    adj = [[] for _ in range(N)]
    for t, (i, j) in enumerate(zip(a, b)):
        adj[i].append((j, t, +1))
        adj[j].append((i, t, -1))
    root_of = -np.ones(N, dtype=np.int64)
    shift = np.zeros((N, m))
    parent_pair = -np.ones(N, dtype=np.int64)
    classes = []
    for s in range(N):
        if root_of[s] >= 0:
            continue
        root_of[s] = s
        members = [s]
        queue = [s]
        while queue:
            u = queue.pop(0)
            for w, t, sgn in adj[u]:
                if root_of[w] < 0:
                    root_of[w] = s
                    shift[w] = shift[u] + sgn * off[t]
                    parent_pair[w] = t
                    members.append(w)
                    queue.append(w)
        classes.append(members)
    roots = [c[0] for c in classes]
    n_half = int(round(1.0 / eps)) // 2
    centre = int(root_of[dom.indices_of(np.full((1, d), n_half))[0]])
    r_ids = [r for r in roots if r != centre]
    delta_ids = [s for s in range(N) if root_of[s] != s]
    col = {s: k for k, s in enumerate(r_ids)}
    dcol = {s: k for k, s in enumerate(delta_ids)}
    nr, nd = len(r_ids), len(delta_ids)
    T = np.zeros((N, nr + nd))
    for s in range(N):
        rt = root_of[s]
        if rt != centre:
            T[s, col[rt]] = 1.0
        if s in dcol:
            T[s, nr + dcol[s]] = 1.0
    # constraints |delta_w - delta_u - ctr| < bound for every pair
    balls = []
    for t, (i, j) in enumerate(zip(a, b)):
        ia = dcol.get(i, -1)
        ib = dcol.get(j, -1)
        ctr = off[t] - (shift[j] - shift[i])
        if ib >= 0:
            balls.append((ib, ia, ctr, bound))
        else:
            balls.append((ia, -1, -ctr, bound))
    log_vol = 0.0
    for c in classes:
        if len(c) == 1:
            continue
        pairs = {t for s in c for _, t, _ in adj[s]}
        cyc = len(pairs) == len(c) == 4
        if len(pairs) != len(c) - 1 and not cyc:
            raise SamplerError("unsupported pair class")
        log_vol += math.log(_class_volume(len(pairs), len(c), cyc, m, bound))
    Q = 2.0 * laplacian(bond_graph(spec, dom)).toarray()
    P = T.T @ Q @ T
    Prr, Prd, Pdd = P[:nr, :nr], P[:nr, nr:], P[nr:, nr:]
    chol = linalg.cholesky(Prr, lower=True)
    Sd = Pdd - Prd.T @ linalg.cho_solve((chol, True), Prd)
    Xoff = shift
    l = T.T @ Q @ Xoff  # (nr + nd, m)
    lr_, ld = l[:nr], l[nr:]
    sol = linalg.cho_solve((chol, True), lr_)
    lin = ld - Prd.T @ sol
    const = 0.5 * float(np.einsum("ic,ij,jc->", Xoff, Q, Xoff)) - 0.5 * float((lr_ * sol).sum())
    log_r = m * (0.5 * nr * math.log(2 * math.pi) - float(np.log(np.diag(chol)).sum()))
    S_full = np.kron(Sd, np.eye(m))
    h = -lin.ravel()
    xi0 = np.zeros((nd, m))
    ti, se, fit, diag = _dense_ti(S_full, np.zeros_like(h), h, nd, m, balls, xi0, budget, seed)
    logZ = log_r - const + log_vol + ti
    return LogZEstimate(logZ, math.hypot(se, fit), se, fit, "periodic-classes-ti",
                        {"n_sites": N, "n_delta": nd, **diag})


# --------------------------------------------------------------------------
# General potentials: thermodynamic integration on the lattice


def _gaussian_spec(spec: PotentialSpec) -> PotentialSpec:
    return PotentialSpec("gaussian_gradient", spec.d, spec.m, offsets=spec.offsets, patch=spec.patch)


def _reference_logZ(spec: PotentialSpec, dom: LatticeDomain, constraints, pins, reference: str,
                    budget: Budget, seed: int) -> LogZEstimate:
    kinds = sorted(c.kind for c in constraints)
    if reference == "zero":
        if pins is not None and len(kinds) == 0:
            raise SamplerError("zero reference needs a bounded constraint set")
        if kinds == ["soft_clamp"]:
            cs = constraints[0]
            free = np.ones(dom.n_sites, bool)
            if pins is not None:
                free[np.asarray(pins[0])] = False
            in_ball = np.zeros(dom.n_sites, bool)
            in_ball[cs.params["strip"]] = True
            if np.any(free & ~in_ball):
                raise SamplerError("zero reference needs every free site inside a ball")
            return LogZEstimate(float(free.sum()) * math.log(ball_volume(dom.m, cs.params["width"])), method="volume")
        if kinds == ["lattice_lr"] and constraints[0].params["r"] == 2.0:
            P = constraints[0].params
            free = np.ones(dom.n_sites, bool)
            if pins is not None:
                free[np.asarray(pins[0])] = False
            if np.any(free & ~P["mask"]):
                raise SamplerError("zero reference needs the ball to cover every free site")
            dim = int(free.sum()) * dom.m
            return LogZEstimate(math.log(ball_volume(dim, P["threshold"])), method="volume")
        raise SamplerError("zero reference volume unknown for this constraint set")
    g = _gaussian_spec(spec)
    if kinds == [] and pins is not None:
        return LogZEstimate(exact_gaussian(g, dom, pins).logZ, method="log-det")
    if kinds == ["soft_clamp"] and pins is None:
        return clamp_logZ(g, dom, constraints[0].params["Y"], budget, seed)
    if kinds == ["lr_neighborhood"] and pins is None:
        cs = constraints[0]
        return lr_gaussian_logZ(g, dom, cs.params["v"], cs.params["kappa"], cs.params["r"])
    if kinds == ["lr_neighborhood", "soft_clamp"] and pins is None:
        lr = next(c for c in constraints if c.kind == "lr_neighborhood")
        return combined_gaussian_logZ(g, dom, lr.params["v"], lr.params["kappa"], budget, seed)
    free_dim = dom.m * (dom.n_sites - (0 if pins is None else len(pins[0])))
    if free_dim <= 6:
        return LogZEstimate(quadrature_logZ(g, dom, list(constraints), pins=pins), method="quadrature")
    raise SamplerError(f"no Gaussian reference for constraints {kinds}")


def logZ_thermo(spec: PotentialSpec, dom: LatticeDomain, constraint=None, path_points: int = 8,
                sweeps_per_point: int = 4000, seed: int = 0, *, pins=None, reference: str = "gaussian",
                ref_logZ: LogZEstimate | float | None = None, burn_in: int = 500, alpha: float | None = None,
                init=None, richardson: bool = True) -> LogZEstimate:
    """``log Z = log Z_ref - ∫_0^1 <H - H_ref>_lam dlam`` by Gauss-Legendre in ``t`` with ``lam = t^alpha``.

    The Richardson residual compares the ``path_points`` rule with the rule of
    half the order.
    """
    cons = [] if constraint is None else (list(constraint) if isinstance(constraint, (list, tuple)) else [constraint])
    budget = Budget(sweeps=sweeps_per_point, burn_in=burn_in, path_points=path_points)
    if ref_logZ is None:
        ref = _reference_logZ(spec, dom, cons, pins, reference, budget, _subseed(seed, "ref"))
    elif isinstance(ref_logZ, LogZEstimate):
        ref = ref_logZ
    else:
        ref = LogZEstimate(float(ref_logZ), method="given")
    plain_gauss = spec.kind == "gaussian_gradient" or (spec.kind == "composite_with_null_lagrangian"
                                                      and spec.M == 0.0 and spec.exponent == 2.0)
    if reference == "gaussian" and plain_gauss:
        return LogZEstimate(ref.logZ, ref.se, ref.se_mc, ref.se_fit, ref.method + "+identity", ref.meta)
    if alpha is None:
        alpha = 3.0 if reference == "zero" else 1.0
    if init is None:
        x0 = np.zeros((dom.n_sites, dom.m))
        for c in cons:
            if c.kind == "soft_clamp":
                x0 = c.params["Y"].copy()
            elif c.kind in ("lr_neighborhood",):
                x0 = lr_center(c.params["v"], dom)
            elif c.kind == "lattice_lr":
                x0 = c.params["Z"].copy()
        if pins is not None:
            x0[np.asarray(pins[0])] = np.asarray(pins[1]).reshape(-1, dom.m)
    else:
        x0 = np.array(init.values if isinstance(init, Configuration) else init, dtype=float)
    graph = bond_graph(spec, dom)

    def rule(npts, tag):
        t, w = _gl01(npts)
        lam = t**alpha
        jac = alpha * t ** (alpha - 1.0)
        vals, ses, diag = [], [], []
        x = x0.copy()
        for k, lm in enumerate(lam):
            tgt = LatticeTarget(spec, dom, cons, pins=pins, lam=lm, graph=graph, reference=reference)
            b = metropolis_run(spec, dom, init=x, sweeps=budget.sweeps, seed=_subseed(seed, tag, k),
                               burn_in=budget.burn_in, target=tgt)
            H, Href = tgt.parts(b.snapshots)
            mu, se, ess = _series_mean_se(H - Href)
            if ess < budget.min_ess:
                raise SamplerError(f"effective sample size {ess:.1f} below {budget.min_ess} at lambda={lm:.4g}")
            vals.append(mu)
            ses.append(se)
            diag.append({"lam": float(lm), "mean": mu, "se": se, "ess": ess, "acceptance": b.acceptance})
            x = b.snapshots[-1].copy()
        vals, ses = np.array(vals), np.array(ses)
        return float((w * jac * vals).sum()), float(np.sqrt(((w * jac * ses) ** 2).sum())), diag

    I, se, diag = rule(path_points, "n")
    fit = 0.0
    if richardson and path_points >= 4:
        I2, _, _ = rule(path_points // 2, "half")
        fit = abs(I - I2)
    se_mc = math.hypot(se, ref.se)
    return LogZEstimate(ref.logZ - I, math.hypot(se_mc, fit), se_mc, fit, f"thermo({ref.method})",
                        {"path": diag, "ref_logZ": ref.logZ})


# --------------------------------------------------------------------------
# Free energy per formulation and extrapolation


def _unit_domain(d: int, m: int, eps: float, shape=None) -> LatticeDomain:
    box = Box((0.0,) * d, (1.0,) * d) if shape is None else shape
    return build_domain(box, eps, m)


def formulation_logZ(spec: PotentialSpec, L: AffineMap, formulation: str, eps: float, kappa: float | None = None,
                     budget=None, seed: int = 0, shape=None) -> tuple[LogZEstimate, float]:
    """``(log Z, |Omega|)`` for one formulation at one scale."""
    budget = Budget.coerce(budget)
    if formulation not in FORMULATIONS:
        raise ValueError(f"unknown formulation {formulation!r}")
    d, m = spec.d, spec.m
    quad = spec.exponent == 2.0
    if formulation == "periodic":
        if shape is not None and not np.allclose(np.asarray(shape.upper) - np.asarray(shape.lower), 1.0):
            raise ValueError("periodic runs use the unit cube")
        if spec.kind == "gaussian_gradient":
            return periodic_gaussian_logZ(spec, eps, L, budget, seed), 1.0
        dom = periodic_domain(eps, d, spec.R0, m)
        cs = periodic_set(dom, L)
        X = discretize(L, dom).values
        n_half = int(round(1.0 / eps)) // 2
        pin = dom.indices_of(np.full((1, d), n_half))
        ref = periodic_gaussian_logZ(_gaussian_spec(spec), eps, L, budget, _subseed(seed, "ref"))
        est = logZ_thermo(spec, dom, cs, budget.path_points, budget.sweeps, seed, pins=(pin, X[pin]),
                          ref_logZ=ref, burn_in=budget.burn_in, init=X)
        return est, 1.0
    dom = _unit_domain(d, m, eps, shape)
    vol = dom.box.volume
    if formulation == "soft_clamp":
        if quad:
            return clamp_logZ(spec, dom, L, budget, seed), vol
        cons = [soft_clamp(dom, L, spec.R0)]
    elif formulation == "lr_neighborhood":
        if kappa is None:
            raise ValueError("lr_neighborhood needs kappa")
        if spec.kind == "gaussian_gradient":
            return lr_gaussian_logZ(spec, dom, L, kappa), vol
        cons = [lr_neighborhood(dom, L, kappa)]
    else:
        if kappa is None:
            raise ValueError("combined needs kappa")
        if spec.kind == "gaussian_gradient":
            return combined_gaussian_logZ(spec, dom, L, kappa, budget, seed), vol
        cons = [soft_clamp(dom, L, spec.R0), lr_neighborhood(dom, L, kappa)]
    est = logZ_thermo(spec, dom, cons, budget.path_points, budget.sweeps, seed, burn_in=budget.burn_in)
    return est, vol


def extrapolate(eps_list: Sequence[float], values: Sequence[float], ses: Sequence[float],
                log_term: bool = False) -> dict:
    """Least-squares fit ``W + a eps (+ b eps log(1/eps))``.

    The residual is the intercept shift when ``eps^2`` is added, or, with no
    spare point, when the last column is dropped.

    The ``eps log(1/eps)`` column is for chains, whose boundary log-determinant
    grows like ``log(1/eps)``.
    """
    e = np.asarray(eps_list, float)
    y = np.asarray(values, float)
    s = np.asarray(ses, float)
    if e.size < 2:
        return {"value": float(y[-1]), "se_mc": float(s[-1]), "residual": 0.0, "slope": 0.0, "model": "none"}
    cols = [np.ones_like(e), e]
    if log_term and e.size >= 3:
        cols.append(e * np.log(1.0 / e))
    V = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(V, y, rcond=None)
    weights = np.linalg.pinv(V)[0]  # intercept as a linear combination of the data
    se_mc = float(np.sqrt(((weights * s) ** 2).sum()))
    if e.size > V.shape[1]:
        V2 = np.column_stack([V, e**2])
    else:
        # no spare point: compare against the model without its last column
        V2 = V[:, :-1]
    c2, *_ = np.linalg.lstsq(V2, y, rcond=None)
    residual = abs(float(c2[0] - coef[0]))
    model = "affine+log" if V.shape[1] == 3 else "affine"
    return {"value": float(coef[0]), "se_mc": se_mc, "residual": residual, "slope": float(coef[1]), "model": model}


def estimate_W(spec: PotentialSpec, L: AffineMap, formulation: str, eps_list: Sequence[float],
               kappa: float | None = None, budget=None, seed: int = 0, shape=None,
               min_points: int = 3, log_term: bool | None = None) -> FreeEnergyEstimate:
    """Per-scale ``-eps^d |Omega|^{-1} log Z`` and the affine extrapolation to ``eps = 0``."""
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < min_points:
        raise ValueError(f"need at least {min_points} scales")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be decreasing")
    if shape is not None and not isinstance(shape, Box):
        shape = build_domain(shape, 0.5).box
    per, ses, seeds = [], [], []
    for k, eps in enumerate(eps_list):
        sd = _subseed(seed, formulation, k)
        est, vol = formulation_logZ(spec, L, formulation, eps, kappa, budget, sd, shape)
        f = eps**spec.d / vol
        v = -f * est.logZ
        if not math.isfinite(v):
            raise SamplerError(f"non-finite free energy at eps={eps}")
        per.append(v)
        ses.append(f * est.se)
        seeds.append(sd)
    ex = extrapolate(eps_list, per, ses, log_term=spec.d == 1 if log_term is None else log_term)
    se = math.hypot(ex["se_mc"], ex["residual"])
    return FreeEnergyEstimate(ex["value"], max(se, 1e-15), eps_list, per, ses, formulation, ex["model"],
                              ex["residual"], ex["slope"], kappa, L.A.tolist(), seeds)


# --------------------------------------------------------------------------
# Inequality checks


def _sub_box(dom: LatticeDomain, axis: int, cut: int):
    """Boxes of the sites with ``i_axis < cut`` and ``>= cut`` (either may be empty)."""
    eps = dom.eps
    lo = np.asarray(dom.box.lower, float)
    hi = np.asarray(dom.box.upper, float)
    mid = cut * eps
    b1 = (lo.copy(), hi.copy())
    b2 = (lo.copy(), hi.copy())
    b1[1][axis] = mid
    b2[0][axis] = mid
    m1 = dom.sites[:, axis] < cut
    return (b1, m1), (b2, ~m1)


def _region_logZ(spec, dom_full, box, mask, L, method, budget, seed) -> LogZEstimate:
    if not mask.any():
        return LogZEstimate(0.0, method="empty")
    sub = build_domain(Box(tuple(box[0]), tuple(box[1])), dom_full.eps, dom_full.m)
    if sub.n_sites != int(mask.sum()):
        raise SamplerError("sub-box enumeration mismatch")
    Yv = discretize(L, sub).values
    if method == "hard_pin":
        idx = boundary_strip(sub, max(spec.R0, 1.0)).sites
        return LogZEstimate(exact_gaussian(spec, sub, (idx, Yv[idx])).logZ, method="log-det")
    cs = soft_clamp(sub, L, spec.R0)
    if method == "quadrature":
        return LogZEstimate(quadrature_logZ(spec, sub, cs), method="quadrature")
    if method == "soft_clamp":
        if spec.exponent == 2.0:
            return clamp_logZ(spec, sub, L, budget, seed)
        return logZ_thermo(spec, sub, cs, budget.path_points, budget.sweeps, seed, burn_in=budget.burn_in)
    raise ValueError(f"unknown method {method!r}")


def check_subadditivity(spec: PotentialSpec, L: AffineMap, dom: LatticeDomain, split: tuple[int, int],
                        method: str = "auto", budget=None, seed: int = 0) -> dict:
    """``log Z_Lam - log Z_Lam1 - log Z_Lam2 + B(L) |S(Lam1, Lam2)|`` for an axis bisection ``(axis, cut)``."""
    budget = Budget.coerce(budget)
    axis, cut = split
    (b1, m1), (b2, m2) = _sub_box(dom, axis, cut)
    if method == "auto":
        method = "quadrature" if dom.n_sites * dom.m <= 6 else ("soft_clamp" if spec.exponent == 2.0 else "soft_clamp")
    full = _region_logZ(spec, dom, (np.asarray(dom.box.lower), np.asarray(dom.box.upper)),
                        np.ones(dom.n_sites, bool), L, method, budget, _subseed(seed, "full"))
    z1 = _region_logZ(spec, dom, b1, m1, L, method, budget, _subseed(seed, 1))
    z2 = _region_logZ(spec, dom, b2, m2, L, method, budget, _subseed(seed, 2))
    S = split_strip(dom, m1, m2, spec.R0)
    B = bound_constants(spec.growth, L, dom.d)["B"]
    nS = int(np.count_nonzero(S))
    slack = full.logZ - z1.logZ - z2.logZ + B * nS
    se = math.sqrt(full.se**2 + z1.se**2 + z2.se**2)
    return {"slack": slack, "se": se, "B": B, "S_size": nS, "logZ": full.logZ, "logZ1": z1.logZ,
            "logZ2": z2.logZ, "method": method, "ok": slack >= -3 * se}


def tightness_bound_log(n_sites: int, K: float, D: float) -> float:
    return -0.5 * K * n_sites + n_sites * math.log(D)


def check_tightness(spec: PotentialSpec, dom: LatticeDomain, constraint, K_list: Sequence[float],
                    method: str = "quadrature", budget=None, seed: int = 0, logZ_set: LogZEstimate | None = None,
                    grid: QuadratureGrid | None = None) -> list[dict]:
    """Compare ``Z(M_K ∩ set)`` with ``exp(-K |Omega_eps| / 2) D^{|Omega_eps|}`` for every ``K``.

    ``method='quadrature'`` integrates the indicator on one shared grid;
    ``method='mc'`` samples the set and multiplies the hit fraction by an
    estimate of ``Z(set)`` (zero hits give a one-sided bound).
    """
    budget = Budget.coerce(budget)
    D = bound_constants(spec.growth, 0.0, dom.d)["D"]
    n = dom.n_sites
    cons = [constraint] if isinstance(constraint, ConstraintSet) else list(constraint)
    out = []
    if method == "quadrature":
        grid = grid or QuadratureGrid(spec, dom, cons)
        inds = [(lambda x, H, t=K * n: H > t) for K in K_list]
        logs = grid.log_integral(inds)
        logZ_all = grid.log_integral([lambda x, H: np.ones(H.shape, bool)])[0]
        for K, lv in zip(K_list, logs):
            lb = tightness_bound_log(n, K, D)
            out.append({"K": float(K), "log_Z_MK": float(lv), "log_bound": lb, "ok": bool(lv <= lb),
                        "margin": lb - float(lv), "log_mu_MK": float(lv - logZ_all),
                        "log_mu_bound": _mu_bound_log(spec, dom, cons, K, D), "hits": None})
        return out
    if method != "mc":
        raise ValueError(f"unknown method {method!r}")
    if logZ_set is None:
        raise ValueError("the Monte Carlo check needs an estimate of log Z(set)")
    init = None
    for c in cons:
        if c.kind == "soft_clamp":
            init = c.params["Y"]
    b = metropolis_run(spec, dom, cons, init=init, sweeps=budget.sweeps, seed=seed, burn_in=budget.burn_in)
    tgt = LatticeTarget(spec, dom, cons)
    H, _ = tgt.parts(b.snapshots)
    for K in K_list:
        ind = (H > K * n).astype(float)
        hits = int(ind.sum())
        lb = tightness_bound_log(n, K, D)
        if hits == 0:
            # one-sided: fraction below 3 / ESS with 95% confidence
            p_up = 3.0 / max(b.ess, 1.0)
            lv_up = math.log(p_up) + logZ_set.logZ
            out.append({"K": float(K), "hits": 0, "log_Z_MK_upper": lv_up, "log_bound": lb,
                        "ok": True, "one_sided": True, "log_mu_bound": _mu_bound_log(spec, dom, cons, K, D)})
            continue
        p = ind.mean()
        se_p = ind.std(ddof=1) * math.sqrt(integrated_autocorr_time(ind) / ind.size)
        lv = math.log(p) + logZ_set.logZ
        se_log = math.hypot(se_p / p, logZ_set.se)
        out.append({"K": float(K), "hits": hits, "log_Z_MK": lv, "se": se_log, "log_bound": lb,
                    "ok": bool(lv - 3 * se_log <= lb), "one_sided": False,
                    "log_mu_MK": math.log(p), "log_mu_bound": _mu_bound_log(spec, dom, cons, K, D)})
    return out


def _mu_bound_log(spec, dom, cons, K, D) -> float | None:
    """Corollary bound on ``log mu(M_K)`` under the soft clamp (``None`` without a clamp)."""
    clamp = next((c for c in cons if c.kind == "soft_clamp"), None)
    if clamp is None:
        return None
    n = dom.n_sites
    Hu = total_energy(spec, Configuration(dom, clamp.params["Y"]))
    om = ball_volume(dom.m, 1.0)
    return -0.5 * K * n + n * math.log(D / om) + spec.C * (Hu + (1 + spec.R0**dom.d) * n)


def quasiconvexity_probe(spec: PotentialSpec, L: AffineMap, perturbations: Sequence, budget=None, seed: int = 0,
                         eps_list: Sequence[float] = (0.25, 0.125, 0.0625), W_fn: Callable | None = None,
                         closed_form: bool | None = None) -> list[dict]:
    """Signed gap ``|Omega|^{-1} ∫ W(grad v) - W(L)`` for ``v = L + phi``.

    ``perturbations`` expose ``simplex_gradients() -> (grads (S, m, d), volumes)``.
    For the plain Gaussian the free energy is ``W(0) + |A|_F^2`` and both
    sides are closed form; otherwise each distinct gradient is estimated by
    the soft-clamp formulation (or ``W_fn`` if given).
    """
    budget = Budget.coerce(budget)
    if closed_form is None:
        closed_form = spec.kind == "gaussian_gradient"
    cache: dict = {}

    def W(A: np.ndarray):
        key = tuple(np.round(np.asarray(A, float).ravel(), 12))
        if key not in cache:
            if W_fn is not None:
                cache[key] = (float(W_fn(A)), 0.0)
            elif closed_form:
                cache[key] = (gaussian_W_limit(spec.d, spec.m, AffineMap(A)), 0.0)
            else:
                est = estimate_W(spec, AffineMap(A), "soft_clamp", eps_list, budget=budget,
                                 seed=_subseed(seed, key))
                cache[key] = (est.value, est.se)
        return cache[key]

    w_L, se_L = W(L.A)
    out = []
    for phi in perturbations:
        grads, vols = phi.simplex_gradients()
        grads = np.asarray(grads, float).reshape(-1, spec.m, spec.d)
        total_vol = float(np.sum(vols))
        rhs, var = 0.0, 0.0
        for g, vol in zip(grads, vols):
            w, s = W(L.A + g)
            rhs += vol * w
            var += (vol * s) ** 2
        rhs /= total_vol
        gap = rhs - w_L
        se = math.sqrt(var / total_vol**2 + se_L**2)
        out.append({"gap": gap, "se": se, "W_L": w_L, "mean_W": rhs, "ok": gap >= -3 * se,
                    "distinct_gradients": len(cache)})
    return out


def kappa_monotonicity(spec: PotentialSpec, dom: LatticeDomain, v, kappas: Sequence[float], r: float = 2.0,
                       pins=None, nodes: int | None = None) -> dict:
    """``-log Z(N(v, kappa))`` on one quadrature grid for every ``kappa`` (nested indicator sets)."""
    kappas = sorted(float(k) for k in kappas)
    big = lr_neighborhood(dom, v, max(kappas), r)
    grid = QuadratureGrid(spec, dom, [big], pins=pins, nodes=nodes)
    x0 = lr_center(v, dom)
    Msp = mass_matrix(dom)
    thr = [lr_neighborhood(dom, v, k, r).params["threshold"] ** 2 for k in kappas]

    def make(t):
        return lambda x, H: _lr_T(dom, x, x0, Msp) < t

    logs = grid.log_integral([make(t) for t in thr])
    neg = [-float(v_) for v_ in logs]
    diffs = np.diff(neg)
    return {"kappa": kappas, "neg_logZ": neg, "monotone": bool(np.all(diffs <= 0.0))}

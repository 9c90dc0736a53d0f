"""Constrained Metropolis sampling and the two exact oracles (Gaussian, tensor quadrature)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from . import _kernels
from .hamiltonian import BondGraph, ConstraintSet, _plaquette_V, bond_energies, bond_graph, contains
from .lattice import (AffineMap, Configuration, LatticeDomain, LatticeError, PLField, boundary_strip, discretize,
                      mass_matrix, write_snapshot)
from .potential import PotentialSpec

__all__ = [
    "SamplerError",
    "ChainState",
    "SampleBatch",
    "LatticeTarget",
    "DenseTarget",
    "metropolis_run",
    "run_dense",
    "GaussianOracle",
    "exact_gaussian",
    "exact_gaussian_torus",
    "QuadratureGrid",
    "quadrature_logZ",
    "dlr_resample",
    "integrated_autocorr_time",
    "effective_sample_size",
    "pins_from_strip",
]

_NO_BALL = 1e150
TARGET_ACCEPT = 0.4


class SamplerError(RuntimeError):
    """Diagnostic failure of a sampler or oracle."""


# --------------------------------------------------------------------------
# Autocorrelation diagnostics


def integrated_autocorr_time(x: np.ndarray) -> float:
    """Integrated autocorrelation time with Geyer's initial positive sequence.

    ``tau = -1 + 2 * sum_k Gamma_k`` where ``Gamma_k = rho_{2k} + rho_{2k+1}``
    is summed while positive and made monotone.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n < 4:
        return 1.0
    y = x - x.mean()
    var = float(y @ y) / n
    if var <= 0:
        return 1.0
    f = np.fft.rfft(y, n=2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n] / n
    rho = acov / acov[0]
    pairs = rho[: 2 * (n // 2)].reshape(-1, 2).sum(axis=1)
    total = 0.0
    prev = np.inf
    for g in pairs:
        if g <= 0:
            break
        g = min(g, prev)
        total += g
        prev = g
    return max(1.0, -1.0 + 2.0 * total)


def effective_sample_size(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float).ravel()
    return float(x.size / integrated_autocorr_time(x))


# --------------------------------------------------------------------------
# Chains


@dataclass
class ChainState:
    """Mutable chain state; ``energy`` is the cached target energy."""

    x: np.ndarray
    step: np.ndarray
    seed: int
    energy: float = 0.0
    sweeps_done: int = 0
    accepted: int = 0
    proposed: int = 0
    draws: int = 0

    @property
    def acceptance(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0


@dataclass
class SampleBatch:
    """Thinned snapshots of one chain with autocorrelation diagnostics."""

    snapshots: np.ndarray
    sweeps: np.ndarray
    energy: np.ndarray
    acceptance: float
    seed: int
    domain: LatticeDomain | None = None
    state: ChainState | None = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.snapshots.shape[0])

    @property
    def iat(self) -> float:
        return integrated_autocorr_time(self.energy)

    @property
    def ess(self) -> float:
        return min(float(len(self)), len(self) / self.iat)

    def ess_of(self, series: np.ndarray) -> float:
        series = np.asarray(series, dtype=float)
        if series.ndim == 1:
            return min(float(series.size), effective_sample_size(series))
        return float(min(effective_sample_size(series[:, k]) for k in range(series.shape[1])))

    def mean_se(self, series: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Sample mean and its IAT-corrected standard error, columnwise."""
        series = np.asarray(series, dtype=float)
        flat = series.reshape(series.shape[0], -1)
        mu = flat.mean(axis=0)
        se = np.empty_like(mu)
        for k in range(flat.shape[1]):
            tau = integrated_autocorr_time(flat[:, k])
            se[k] = flat[:, k].std(ddof=1) * math.sqrt(tau / flat.shape[0]) if flat.shape[0] > 1 else np.inf
        return mu.reshape(series.shape[1:]), se.reshape(series.shape[1:])

    def configuration(self, k: int) -> Configuration:
        return Configuration(self.domain, self.snapshots[k])

    def write(self, stream) -> None:
        """Snapshots in the lattice text format, each preceded by a ``# sweep`` line."""
        for s, snap in zip(self.sweeps, self.snapshots):
            stream.write(f"# sweep {int(s)}\n")
            write_snapshot(Configuration(self.domain, snap), stream)

    def manifest(self) -> str:
        items = {"seed": self.seed, "sweeps": int(self.sweeps[-1]) if len(self) else 0,
                 "snapshots": len(self), "acceptance": f"{self.acceptance:.6f}",
                 "iat": f"{self.iat:.4f}", "ess": f"{self.ess:.2f}", "backend": _kernels.backend()}
        return "".join(f"{k} = {v}\n" for k, v in items.items())


def _csr(n: int, owners: np.ndarray, ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(owners, kind="stable")
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(ptr, owners + 1, 1)
    return np.cumsum(ptr), ids[order].astype(np.int64)


def pins_from_strip(dom: LatticeDomain, Y, R: float) -> tuple[np.ndarray, np.ndarray]:
    """Hard pins ``X = Y`` on the strip ``S_R``."""
    if isinstance(Y, AffineMap):
        Yv = discretize(Y, dom).values
    elif isinstance(Y, Configuration):
        Yv = Y.values
    else:
        Yv = np.asarray(Y, dtype=float).reshape(dom.n_sites, dom.m)
    s = boundary_strip(dom, R).sites
    return s, Yv[s]


def lr_center(v, dom: LatticeDomain) -> np.ndarray:
    """Lattice values ``v(eps i) / eps`` of an L^2-neighbourhood centre."""
    if hasattr(v, "on"):
        v = v.on(dom)
    if isinstance(v, AffineMap):
        return discretize(v, dom).values
    if isinstance(v, PLField) and v.domain.n_sites == dom.n_sites:
        return v.nodal / dom.eps
    raise SamplerError("L^2 neighbourhood centre must be affine or a PL field on the same lattice")


class LatticeTarget:
    """Density ``exp(-H_lam) * 1_constraints`` on the free sites of a domain.

    ``H_lam = (1 - lam) H_ref + lam H`` where ``H_ref`` is the unit Gaussian
    bond energy on the same bonds; ``lam = 1`` is the plain target.
    """

    def __init__(self, spec: PotentialSpec, dom: LatticeDomain, constraints: Sequence[ConstraintSet] = (),
                 pins: tuple[np.ndarray, np.ndarray] | None = None, lam: float = 1.0,
                 graph: BondGraph | None = None, reference: str = "gaussian"):
        if reference not in ("gaussian", "zero"):
            raise SamplerError(f"unknown reference {reference!r}")
        self.spec = spec
        self.dom = dom
        self.lam = float(lam)
        self.reference = reference
        self.graph = graph if graph is not None else bond_graph(spec, dom)
        self.adj_ptr, self.adj_nbr = self.graph.adjacency()
        q = spec.exponent
        self.c2, self.cp, self.p = 0.0, 0.0, q
        if q == 2.0:
            self.c2 += self.lam
        else:
            self.cp = self.lam
        if reference == "gaussian":
            self.c2 += 1.0 - self.lam
        self.w_plaq = self.lam * spec.M if spec.kind == "composite_with_null_lagrangian" else 0.0
        if self.graph.plaq.shape[0] and self.w_plaq != 0.0:
            self.pl_ptr, self.pl_id = self.graph.plaquette_incidence()
            self.P = self.graph.plaq
        else:
            self.pl_ptr = np.zeros(0, np.int64)
            self.pl_id = np.zeros(0, np.int64)
            self.P = np.zeros((0, 4), np.int64)
        n, m = dom.n_sites, dom.m
        pinned = np.zeros(n, dtype=bool)
        self.pin_values = None
        if pins is not None:
            idx, vals = pins
            idx = np.asarray(idx, dtype=np.int64)
            pinned[idx] = True
            self.pin_idx = idx
            self.pin_values = np.asarray(vals, dtype=float).reshape(idx.size, m)
        else:
            self.pin_idx = np.zeros(0, np.int64)
        self.free = np.nonzero(~pinned)[0].astype(np.int64)
        self.constraints = list(constraints)
        self._setup_constraints()

    # -- constraint arrays ---------------------------------------------
    def _setup_constraints(self):
        n, m = self.dom.n_sites, self.dom.m
        self.ball_c = np.zeros((0, m))
        self.ball_r = np.zeros(0)
        self.pr = dict(ptr=np.zeros(n + 1, np.int64), id=np.zeros(0, np.int64), a=np.zeros(0, np.int64),
                       b=np.zeros(0, np.int64), off=np.zeros((0, m)), bound=0.0)
        self.el = None
        self.lr = None
        for cs in self.constraints:
            P = cs.params
            if cs.kind == "soft_clamp":
                if self.ball_r.size == 0:
                    self.ball_c = np.zeros((n, m))
                    self.ball_r = np.full(n, _NO_BALL)
                s = P["strip"]
                self.ball_c[s] = P["Y"][s]
                self.ball_r[s] = np.minimum(self.ball_r[s], P["width"])
            elif cs.kind == "periodic":
                a, b = P["a"], P["b"]
                owners = np.concatenate([a, b])
                ids = np.concatenate([np.arange(a.size), np.arange(a.size)])
                ptr, pid = _csr(n, owners, ids)
                self.pr = dict(ptr=ptr, id=pid, a=a, b=b, off=np.ascontiguousarray(P["offset"]), bound=P["bound"])
            elif cs.kind == "lr_neighborhood":
                if P["r"] != 2.0:
                    raise SamplerError("the sampled L^r neighbourhood is implemented for r = 2")
                v = P["v"]
                dom = self.dom
                x0 = lr_center(v, dom)
                M = mass_matrix(dom).tocsr()
                M.sort_indices()
                self.el = dict(ptr=M.indptr.astype(np.int64), idx=M.indices.astype(np.int64), val=M.data.copy(),
                               x0=x0, M=M, scale=dom.eps ** (dom.d + 2), thr=P["threshold"] ** 2)
            elif cs.kind == "lattice_lr":
                self.lr = dict(w=P["mask"].astype(float), z=np.ascontiguousarray(P["Z"]), r=P["r"],
                               thr=P["threshold"] ** P["r"])
            else:
                raise SamplerError(f"constraint {cs.kind!r} cannot be imposed in the sampler")

    def check(self, x: np.ndarray) -> None:
        X = Configuration(self.dom, x)
        for cs in self.constraints:
            ok, margin = contains(cs, X)
            if not ok:
                raise SamplerError(f"initial configuration violates {cs.kind} (margin {margin:.3g})")

    # -- energies --------------------------------------------------------
    def parts(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(H, H_ref)`` for one or many configurations."""
        x = np.asarray(x, dtype=float)
        sq = bond_energies(x, self.graph, 2.0)
        q = self.spec.exponent
        H = sq.sum(-1) if q == 2.0 else (sq ** (q / 2.0)).sum(-1)
        href = sq.sum(-1) if self.reference == "gaussian" else np.zeros(np.shape(H))
        if self.spec.kind == "composite_with_null_lagrangian" and self.spec.M != 0.0:
            V = _plaquette_V(x, self.graph.plaq)
            H = H + self.spec.M * (self.graph.plaq.shape[0] - V.sum(-1))
        return H, href

    def energy(self, x: np.ndarray) -> np.ndarray:
        H, href = self.parts(x)
        return (1.0 - self.lam) * href + self.lam * H

    def kernel_args(self, x: np.ndarray):
        n, m = self.dom.n_sites, self.dom.m
        if self.el is not None:
            y = np.ascontiguousarray(self.el["M"] @ (x - self.el["x0"]))
            T = self.el["scale"] * float(((x - self.el["x0"]) * y).sum())
            el = (self.el["ptr"], self.el["idx"], self.el["val"], y, self.el["scale"], self.el["thr"],
                  np.array([T]))
        else:
            el = (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), np.zeros((n, m)), 0.0, 0.0,
                  np.zeros(1))
        if self.lr is not None:
            w = self.lr["w"]
            S = float((w * np.linalg.norm(x - self.lr["z"], axis=1) ** self.lr["r"]).sum())
            lr = (w, self.lr["z"], self.lr["r"], self.lr["thr"], np.array([S]))
        else:
            lr = (np.zeros(0), np.zeros((n, m)), 2.0, 0.0, np.zeros(1))
        pr = self.pr
        return ((self.adj_ptr, self.adj_nbr, self.c2, self.cp, self.p,
                 self.pl_ptr, self.pl_id, self.P, self.w_plaq,
                 self.ball_c, self.ball_r,
                 pr["ptr"], pr["id"], pr["a"], pr["b"], pr["off"], float(pr["bound"])) + el + lr)


def _draws(rng: np.random.Generator, sweeps: int, n_var: int, m: int):
    choice = rng.integers(0, n_var, size=(sweeps, n_var))
    noise = rng.standard_normal((sweeps, n_var, m))
    logu = np.log(rng.random((sweeps, n_var)))
    return choice, noise, logu


def _adapt(step, acc, tries, idx):
    rate = np.where(tries[idx] > 0, acc[idx] / np.maximum(tries[idx], 1), TARGET_ACCEPT)
    step[idx] *= np.clip(np.exp(2.0 * (rate - TARGET_ACCEPT)), 0.5, 2.0)
    np.maximum(step, 1e-8, out=step)
    return rate


def metropolis_run(spec: PotentialSpec, dom: LatticeDomain, constraint=None, init=None, sweeps: int = 1000,
                   seed: int = 0, burn_in: int = 200, thin: int = 1, pins=None, lam: float = 1.0,
                   step0: float = 0.5, adapt_window: int = 50, chunk: int = 256,
                   target: LatticeTarget | None = None, state: ChainState | None = None,
                   audit: bool = True, reference: str = "gaussian") -> SampleBatch:
    """Random-scan single-site Metropolis for ``exp(-H) 1_constraint`` on the free sites.

    Step sizes adapt per site during ``burn_in`` only and are frozen afterwards.
    ``state`` resumes a previous chain (no further adaptation).
    """
    if target is None:
        cons = [] if constraint is None else (list(constraint) if isinstance(constraint, (list, tuple)) else [constraint])
        target = LatticeTarget(spec, dom, cons, pins=pins, lam=lam, reference=reference)
    n, m = dom.n_sites, dom.m
    if state is None:
        if init is None:
            x = np.zeros((n, m))
        else:
            x = np.array(init.values if isinstance(init, Configuration) else init, dtype=float).reshape(n, m)
        if target.pin_values is not None:
            x[target.pin_idx] = target.pin_values
        target.check(x)
        rng = np.random.default_rng(seed)
        state = ChainState(x=x, step=np.full(n, float(step0)), seed=seed)
        state.rng = rng
        state.energy = float(target.energy(x))
    else:
        x = state.x
        rng = state.rng
        burn_in = 0
    free = target.free
    acc = np.zeros(n, dtype=np.int64)
    tries = np.zeros(n, dtype=np.int64)
    etot = np.array([state.energy])
    dummy = np.zeros((1, n, m))
    kern = _kernels.lattice_sweeps
    # burn-in with adaptation
    done = 0
    while done < burn_in:
        w = min(adapt_window, burn_in - done)
        args = target.kernel_args(x)
        acc[:] = 0
        tries[:] = 0
        ch, nz, lu = _draws(rng, w, free.size, m)
        kern(x, free, ch, nz, lu, state.step, 0, dummy, *args, acc, tries, etot)
        rate = _adapt(state.step, acc, tries, free)
        if np.all(rate[tries[free] > 0] == 0.0) and np.all(state.step[free] <= 1e-8):
            raise SamplerError("zero acceptance over a full adaptation window at the step floor")
        done += w
        state.sweeps_done += w
    n_rec = sweeps // thin if thin > 0 else 0
    rec = np.zeros((max(n_rec, 1), n, m))
    k = 0
    done = 0
    acc[:] = 0
    tries[:] = 0
    while done < sweeps:
        w = min(chunk, sweeps - done)
        if thin > 0:
            w = max(thin, (w // thin) * thin)
            w = min(w, sweeps - done)
        args = target.kernel_args(x)
        ch, nz, lu = _draws(rng, w, free.size, m)
        sub = rec[k:] if k < rec.shape[0] else dummy
        got = kern(x, free, ch, nz, lu, state.step, thin, sub, *args, acc, tries, etot)
        k += got
        done += w
        state.sweeps_done += w
        if audit:
            fresh = float(target.energy(x))
            if abs(fresh - etot[0]) > 1e-9 * max(1.0, abs(fresh)):
                raise SamplerError(f"cached energy drifted: {etot[0]} vs {fresh}")
            etot[0] = fresh
    state.energy = float(etot[0])
    state.accepted += int(acc[free].sum())
    state.proposed += int(tries[free].sum())
    snaps = rec[:k]
    sweep_idx = (np.arange(1, k + 1) * thin).astype(np.int64)
    H = target.energy(snaps) if k else np.zeros(0)
    acc_rate = float(acc[free].sum() / max(tries[free].sum(), 1))
    return SampleBatch(snaps, sweep_idx, np.asarray(H, dtype=float), acc_rate, seed, dom, state,
                       {"backend": _kernels.backend(), "lam": target.lam})


# --------------------------------------------------------------------------
# Dense quadratic targets on difference-ball constraints


class DenseTarget:
    """``E(xi) = 1/2 xi^T S xi - h^T xi`` on ``n`` vector variables in ``R^m``.

    ``balls`` is a list of ``(a, b, centre, radius)`` meaning
    ``|xi_a - xi_b - centre| < radius`` (``b = -1`` for an absolute ball).
    """

    def __init__(self, S: np.ndarray, h: np.ndarray, n: int, m: int, balls: Sequence[tuple]):
        self.S = np.ascontiguousarray(np.asarray(S, dtype=float))
        self.h = np.asarray(h, dtype=float).ravel()
        self.n, self.m = n, m
        self.balls = list(balls)
        a = np.array([t[0] for t in balls], dtype=np.int64)
        b = np.array([t[1] for t in balls], dtype=np.int64)
        self.cn_a, self.cn_b = a, b
        self.cn_ctr = np.array([np.asarray(t[2], float).reshape(m) for t in balls]).reshape(-1, m)
        self.cn_rad = np.array([t[3] for t in balls], dtype=float)
        owners = np.concatenate([a, b[b >= 0]])
        ids = np.concatenate([np.arange(a.size), np.nonzero(b >= 0)[0]])
        self.cn_ptr, self.cn_id = _csr(n, owners, ids)

    def energy(self, xi: np.ndarray) -> np.ndarray:
        flat = np.asarray(xi, dtype=float).reshape(*np.shape(xi)[:-2], self.n * self.m)
        return 0.5 * np.einsum("...i,ij,...j->...", flat, self.S, flat) - flat @ self.h

    def inside(self, xi: np.ndarray) -> bool:
        for a, b, c, r in self.balls:
            v = xi[a] - (xi[b] if b >= 0 else 0.0) - np.asarray(c)
            if np.linalg.norm(v) >= r:
                return False
        return True

    def scaled(self, lam: float) -> "DenseTarget":
        out = DenseTarget.__new__(DenseTarget)
        out.__dict__.update(self.__dict__)
        out.S = np.ascontiguousarray(lam * self.S)
        out.h = lam * self.h
        return out


def _tilted_radii(target: DenseTarget) -> np.ndarray | None:
    """Per-variable radius when every constraint is one centred absolute ball per variable."""
    if target.cn_a.size != target.n or np.any(target.cn_b >= 0) or np.any(target.cn_ctr != 0.0):
        return None
    if np.unique(target.cn_a).size != target.n:
        return None
    rad = np.empty(target.n)
    rad[target.cn_a] = target.cn_rad
    return rad


def run_dense(target: DenseTarget, xi0: np.ndarray, sweeps: int, seed: int = 0, burn_in: int = 200,
              thin: int = 1, step0: float = 0.3, adapt_window: int = 50, chunk: int = 512,
              rng: np.random.Generator | None = None, step: np.ndarray | None = None,
              kernel: str = "auto") -> SampleBatch:
    """Sample a :class:`DenseTarget`.

    ``kernel='tilted'`` (chosen automatically when every variable has its own
    centred ball) proposes from the exact single-site law of the linear part;
    ``'rw'`` is the adaptive random walk.
    """
    xi = np.array(xi0, dtype=float).reshape(target.n, target.m)
    if not target.inside(xi):
        raise SamplerError("initial point violates the constraints")
    rng = np.random.default_rng(seed) if rng is None else rng
    n, m = target.n, target.m
    rad = _tilted_radii(target) if kernel in ("auto", "tilted") else None
    if kernel == "tilted" and rad is None:
        raise SamplerError("tilted kernel needs one centred ball per variable")
    step = np.full(n, float(step0)) if step is None else step.copy()
    g = target.S @ xi.ravel() - target.h
    acc = np.zeros(n, np.int64)
    tries = np.zeros(n, np.int64)
    etot = np.array([float(target.energy(xi))])
    dummy = np.zeros((1, n, m))
    idx = np.arange(n)
    if rad is not None:
        def sweep(w, thin_, rec_):
            ch = rng.integers(0, n, size=(w, n))
            u1 = rng.random((w, n))
            u2 = rng.random((w, n))
            lu = np.log(rng.random((w, n)))
            return _kernels.tilted_sweeps(xi, ch, u1, u2, lu, rad, thin_, rec_, target.S, g, acc, tries, etot)
        if burn_in:
            sweep(burn_in, 0, dummy)
    else:
        args = (target.S, g, target.cn_ptr, target.cn_id, target.cn_a, target.cn_b, target.cn_ctr, target.cn_rad)

        def sweep(w, thin_, rec_):
            ch, nz, lu = _draws(rng, w, n, m)
            return _kernels.dense_sweeps(xi, ch, nz, lu, step, thin_, rec_, *args, acc, tries, etot)
        done = 0
        while done < burn_in:
            w = min(adapt_window, burn_in - done)
            acc[:] = 0
            tries[:] = 0
            sweep(w, 0, dummy)
            rate = _adapt(step, acc, tries, idx)
            if np.all(rate == 0.0) and np.all(step <= 1e-8):
                raise SamplerError("zero acceptance over a full adaptation window at the step floor")
            done += w
    n_rec = sweeps // thin
    rec = np.zeros((max(n_rec, 1), n, m))
    acc[:] = 0
    tries[:] = 0
    k = 0
    done = 0
    while done < sweeps:
        w = min(max(thin, (chunk // thin) * thin), sweeps - done)
        sub = rec[k:] if k < rec.shape[0] else dummy
        k += sweep(w, thin, sub)
        done += w
        g[:] = target.S @ xi.ravel() - target.h
    snaps = rec[:k]
    E = target.energy(snaps) if k else np.zeros(0)
    state = ChainState(x=xi, step=step, seed=seed, energy=float(target.energy(xi)), sweeps_done=burn_in + sweeps,
                       accepted=int(acc.sum()), proposed=int(tries.sum()))
    state.rng = rng
    return SampleBatch(snaps, (np.arange(1, k + 1) * thin).astype(np.int64), np.asarray(E),
                       float(acc.sum() / max(tries.sum(), 1)), seed, None, state,
                       {"backend": _kernels.backend(), "kernel": "tilted" if rad is not None else "rw"})


# --------------------------------------------------------------------------
# Exact Gaussian oracle


@dataclass
class GaussianOracle:
    """``H(x) = 1/2 x^T Q x - ell . x + const`` per component on the free sites."""

    domain: LatticeDomain
    free: np.ndarray
    pinned: np.ndarray
    pin_values: np.ndarray
    Q: np.ndarray
    ell: np.ndarray
    const: float
    logZ: float
    chol: np.ndarray = field(repr=False)

    @property
    def mean_free(self) -> np.ndarray:
        return linalg.cho_solve((self.chol, True), self.ell)

    @property
    def mean(self) -> Configuration:
        vals = np.zeros((self.domain.n_sites, self.domain.m))
        vals[self.pinned] = self.pin_values
        vals[self.free] = self.mean_free
        return Configuration(self.domain, vals)

    @property
    def cov(self) -> np.ndarray:
        """Covariance of every component of the free sites (components are independent)."""
        return linalg.cho_solve((self.chol, True), np.eye(self.free.size))

    def sample(self, n: int, seed: int | np.random.Generator = 0) -> np.ndarray:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        m = self.domain.m
        z = rng.standard_normal((n, self.free.size, m))
        # x = mu + L^{-T} z has covariance Q^{-1}
        y = linalg.solve_triangular(self.chol, z.transpose(1, 0, 2).reshape(self.free.size, -1), lower=True,
                                    trans="T")
        out = np.zeros((n, self.domain.n_sites, m))
        out[:, self.pinned] = self.pin_values
        out[:, self.free] = self.mean_free[None] + y.reshape(self.free.size, n, m).transpose(1, 0, 2)
        return out


def _quadratic_from_bonds(n: int, src, dst, off, free, pinned, pin_values, m):
    """Assemble ``sum_b |x_dst - x_src + off_b|^2`` as ``1/2 x_f^T Q x_f - ell . x_f + const``."""
    pos = -np.ones(n, dtype=np.int64)
    pos[free] = np.arange(free.size)
    y = np.zeros((n, m))
    y[pinned] = pin_values
    nf = free.size
    Q = np.zeros((nf, nf))
    ell = np.zeros((nf, m))
    const = 0.0
    for a, b, o in zip(src, dst, off):
        pa, pb = pos[a], pos[b]
        # |x_b - x_a + o|^2 with pinned parts folded into the shift
        shift = o.copy()
        if pa < 0:
            shift = shift - y[a]
        if pb < 0:
            shift = shift + y[b]
        if pa >= 0:
            Q[pa, pa] += 2.0
        if pb >= 0:
            Q[pb, pb] += 2.0
        if pa >= 0 and pb >= 0:
            Q[pa, pb] -= 2.0
            Q[pb, pa] -= 2.0
        if pb >= 0:
            ell[pb] -= 2.0 * shift
        if pa >= 0:
            ell[pa] += 2.0 * shift
        const += float(shift @ shift)
    return Q, ell, const


def _gaussian_logZ(Q, ell, const, m):
    try:
        chol = linalg.cholesky(Q, lower=True)
    except linalg.LinAlgError as exc:
        raise SamplerError("quadratic form is not positive definite (unpinned zero mode?)") from exc
    nf = Q.shape[0]
    logdet = 2.0 * float(np.log(np.diag(chol)).sum())
    mu = linalg.cho_solve((chol, True), ell)
    logZ = m * (0.5 * nf * math.log(2 * math.pi) - 0.5 * logdet) + 0.5 * float((ell * mu).sum()) - const
    return logZ, chol


def exact_gaussian(spec: PotentialSpec, dom: LatticeDomain, clamp) -> GaussianOracle:
    """Exact log-partition, mean and sampler for a Gaussian gradient model with hard pins.

    ``clamp`` is ``(site_indices, values)`` or ``(Y, R)`` meaning pins ``X = Y`` on
    the strip ``S_R``.
    """
    if spec.kind != "gaussian_gradient":
        raise SamplerError("exact oracle needs the quadratic gaussian_gradient potential")
    a, b = clamp
    if isinstance(a, (AffineMap, Configuration)) or (np.ndim(a) == 2 and np.shape(a)[0] == dom.n_sites and np.ndim(b) == 0):
        idx, vals = pins_from_strip(dom, a, float(b))
    else:
        idx = np.asarray(a, dtype=np.int64)
        vals = np.asarray(b, dtype=float).reshape(idx.size, dom.m)
    pinned = np.zeros(dom.n_sites, bool)
    pinned[idx] = True
    order = np.argsort(idx)
    idx, vals = idx[order], vals[order]
    free = np.nonzero(~pinned)[0]
    g = bond_graph(spec, dom)
    off = np.zeros((g.n_bonds, dom.m))
    Q, ell, const = _quadratic_from_bonds(dom.n_sites, g.src, g.dst, off, free, idx, vals, dom.m)
    if free.size == 0:
        return GaussianOracle(dom, free, idx, vals, Q, ell, const, -const, np.zeros((0, 0)))
    logZ, chol = _gaussian_logZ(Q, ell, const, dom.m)
    return GaussianOracle(dom, free, idx, vals, Q, ell, const, logZ, chol)


def exact_gaussian_torus(n: int, d: int, m: int, L: AffineMap) -> dict:
    """Tilted torus ``(Z/n)^d`` with bonds ``|x_{i+e_k} - x_i + L e_k|^2`` and site 0 pinned.

    Returns ``logZ`` and the per-site value ``-logZ / n^d``.
    """
    shape = (n,) * d
    N = n**d
    idx = np.arange(N).reshape(shape)
    src, dst, off = [], [], []
    for k in range(d):
        src.append(idx.ravel())
        dst.append(np.roll(idx, -1, axis=k).ravel())
        off.append(np.tile(L.A[:, k], (N, 1)))
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    off = np.concatenate(off)
    free = np.arange(1, N)
    Q, ell, const = _quadratic_from_bonds(N, src, dst, off, free, np.array([0]), np.zeros((1, m)), m)
    logZ, _ = _gaussian_logZ(Q, ell, const, m)
    return {"logZ": logZ, "value": -logZ / N, "n_sites": N}


# --------------------------------------------------------------------------
# Tensor quadrature oracle


def _gl(n, a, b):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def _site_nodes(m: int, centre: np.ndarray, radius: float, ball: bool, n: int):
    """Nodes ``(k, m)`` and weights on a ball (polar for m = 2) or a box."""
    if m == 1:
        x, w = _gl(n, centre[0] - radius, centre[0] + radius)
        return x[:, None], w
    if ball:
        r, wr = _gl(n, 0.0, radius)
        nt = 2 * n
        th = 2 * np.pi * np.arange(nt) / nt
        R, T = np.meshgrid(r, th, indexing="ij")
        pts = np.stack([centre[0] + R * np.cos(T), centre[1] + R * np.sin(T)], axis=-1).reshape(-1, 2)
        wts = (wr[:, None] * r[:, None] * np.full(nt, 2 * np.pi / nt)[None]).ravel()
        return pts, wts
    x, w = _gl(n, centre[0] - radius, centre[0] + radius)
    y, v = _gl(n, centre[1] - radius, centre[1] + radius)
    X, Y = np.meshgrid(x, y, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=1), np.outer(w, v).ravel()


class QuadratureGrid:
    """Product grid over the free sites of a small system.

    Each free site gets its own node set: a ball for soft-clamped sites, a box
    of half-width chosen from the lower-growth envelope otherwise. The same
    grid can be reused for a family of indicator functions so that nested
    sets produce exactly monotone integrals.
    """

    def __init__(self, spec: PotentialSpec, dom: LatticeDomain, constraints: Sequence[ConstraintSet] = (),
                 pins=None, nodes: int | None = None, box_radius: float | None = None, max_free_dim: int = 6,
                 tail: float = 1e-10):
        self.spec, self.dom = spec, dom
        m = dom.m
        self.m = m
        self.graph = bond_graph(spec, dom)
        pinned = np.zeros(dom.n_sites, bool)
        y = np.zeros((dom.n_sites, m))
        if pins is not None:
            pinned[np.asarray(pins[0], np.int64)] = True
            y[np.asarray(pins[0], np.int64)] = np.asarray(pins[1], float).reshape(-1, m)
        self.pinned, self.y = pinned, y
        self.free = np.nonzero(~pinned)[0]
        if self.free.size * m > max_free_dim:
            raise SamplerError(f"free dimension {self.free.size * m} exceeds {max_free_dim}")
        self.constraints = list(constraints)
        ball_c = {}
        ball_r = {}
        for cs in self.constraints:
            if cs.kind == "soft_clamp":
                for s in cs.params["strip"]:
                    if not pinned[s]:
                        ball_c[s] = cs.params["Y"][s]
                        ball_r[s] = min(ball_r.get(s, np.inf), cs.params["width"])
        self.ball_c, self.ball_r = ball_c, ball_r
        c, p = spec.c, spec.exponent
        unit = (math.log(1.0 / tail) / c) ** (1.0 / p)
        hops = self._hops()
        global_cap = self._global_cap()
        self.site_nodes = []
        for s in self.free:
            if s in ball_c:
                n = nodes or (24 if m == 2 else 48)
                pts, w = _site_nodes(m, np.asarray(ball_c[s]), ball_r[s], True, n)
            else:
                centre, rad = self._box(s, hops, unit, global_cap)
                if box_radius is not None:
                    rad = box_radius
                n = nodes or (48 if m == 2 else 96)
                pts, w = _site_nodes(m, centre, rad, False, n)
            self.site_nodes.append((pts, w))

    def _hops(self) -> dict:
        anchors = set(np.nonzero(self.pinned)[0]) | set(self.ball_c)
        adj = {i: set() for i in range(self.dom.n_sites)}
        for a, b in zip(self.graph.src, self.graph.dst):
            adj[a].add(b)
            adj[b].add(a)
        dist = {a: 0 for a in anchors}
        frontier = list(anchors)
        while frontier:
            nxt = []
            for a in frontier:
                for b in adj[a]:
                    if b not in dist:
                        dist[b] = dist[a] + 1
                        nxt.append(b)
            frontier = nxt
        return dist

    def _global_cap(self):
        for cs in self.constraints:
            if cs.kind == "lattice_lr":
                return ("box", cs.params["Z"], cs.params["threshold"])
            if cs.kind == "lr_neighborhood" and cs.params["r"] == 2.0:
                dom = self.dom
                M = mass_matrix(dom).toarray()
                lam_min = float(np.linalg.eigvalsh(M)[0])
                v = cs.params["v"]
                x0 = lr_center(v, dom)
                rad = cs.params["threshold"] / math.sqrt(dom.eps ** (dom.d + 2) * lam_min)
                return ("box", x0, rad)
        return None

    def _box(self, s, hops, unit, cap):
        if cap is not None:
            return np.asarray(cap[1][s], float), float(cap[2])
        if s not in hops:
            raise SamplerError("free site not anchored by pins, balls or a global constraint")
        h = max(hops[s], 1)
        # centre on the box hull of the nearest anchors
        anchors = [a for a in range(self.dom.n_sites) if (self.pinned[a] or a in self.ball_c)]
        pos = self.dom.sites
        dd = np.abs(pos[anchors] - pos[s]).sum(axis=1)
        near = [anchors[k] for k in np.nonzero(dd == dd.min())[0]]
        vals = np.asarray([self.y[a] if self.pinned[a] else np.asarray(self.ball_c[a]) for a in near])
        lo, hi = vals.min(axis=0), vals.max(axis=0)
        q = self.spec.exponent
        if h == 1:
            # every bond to an anchor tightens the tail
            anc = set(anchors)
            deg = sum(1 for a, b in zip(self.graph.src, self.graph.dst)
                      if (a == s and b in anc) or (b == s and a in anc))
            deg = max(deg, 1)
            width = unit / deg ** (1.0 / q)
        else:
            width = unit * h ** max(0.5, 1.0 / q)
        return 0.5 * (lo + hi), width + 0.5 * float((hi - lo).max())

    # -- evaluation ------------------------------------------------------
    def _energy_full(self, pts: np.ndarray) -> np.ndarray:
        """Energy of configurations whose free values are ``pts`` (G, n_free, m)."""
        G = pts.shape[0]
        x = np.broadcast_to(self.y, (G,) + self.y.shape).copy()
        x[:, self.free] = pts
        q = self.spec.exponent
        H = bond_energies(x, self.graph, q).sum(-1)
        if self.spec.kind == "composite_with_null_lagrangian" and self.spec.M != 0.0:
            H = H + self.spec.M * (self.graph.plaq.shape[0] - _plaquette_V(x, self.graph.plaq).sum(-1))
        return H, x

    def log_integral(self, indicators: Sequence = (), chunk: int = 200_000) -> np.ndarray | float:
        """``log ∫ exp(-H) 1_set`` for the grid's constraints and each extra indicator.

        Indicators are callables ``f(x_full, H) -> bool array``. Without
        indicators the result is a float, otherwise an array (one per indicator).
        """
        has_global = any(cs.kind in ("lattice_lr", "lr_neighborhood") for cs in self.constraints)
        if not indicators and not has_global and self.spec.M == 0.0:
            return self._tree_contract()
        sizes = [w.size for _, w in self.site_nodes]
        total = int(np.prod(sizes))
        if total > 5e7:
            raise SamplerError(f"direct grid of {total} points is too large")
        inds = list(indicators) if indicators else [None]
        acc = [[] for _ in inds]
        for start in range(0, total, chunk):
            flat = np.arange(start, min(total, start + chunk))
            multi = np.unravel_index(flat, sizes)
            pts = np.stack([self.site_nodes[k][0][multi[k]] for k in range(len(sizes))], axis=1)
            lw = np.sum([np.log(self.site_nodes[k][1][multi[k]]) for k in range(len(sizes))], axis=0)
            H, x = self._energy_full(pts)
            base = np.ones(flat.size, bool)
            for cs in self.constraints:
                if cs.kind == "lattice_lr":
                    P = cs.params
                    nr = (np.linalg.norm(x[:, P["mask"]] - P["Z"][P["mask"]], axis=-1) ** P["r"]).sum(-1)
                    base &= nr < P["threshold"] ** P["r"]
                elif cs.kind == "lr_neighborhood":
                    base &= self._lr_inside(cs, x)
            for j, f in enumerate(inds):
                sel = base if f is None else base & np.asarray(f(x, H), bool)
                vals = lw[sel] - H[sel]
                acc[j].append(vals)
        out = []
        for parts in acc:
            v = np.concatenate(parts)
            out.append(-np.inf if v.size == 0 else float(np.logaddexp.reduce(v)))
        return out[0] if not indicators else np.array(out)

    def _lr_inside(self, cs, x):
        dom = self.dom
        P = cs.params
        if P["r"] != 2.0:
            raise SamplerError("grid L^r indicator implemented for r = 2")
        v = P["v"]
        x0 = lr_center(v, dom)
        M = mass_matrix(dom).toarray()
        dif = x - x0
        T = dom.eps ** (dom.d + 2) * np.einsum("gic,ij,gjc->g", dif, M, dif)
        return T < P["threshold"] ** 2

    def _tree_contract(self) -> float:
        """Sum-product over the free-site bond graph (must be a forest)."""
        free = list(self.free)
        pos = {s: k for k, s in enumerate(free)}
        q = self.spec.exponent
        logu = [np.log(w) for _, w in self.site_nodes]
        pair = {}
        const = 0.0
        for a, b in zip(self.graph.src, self.graph.dst):
            fa, fb = a in pos, b in pos
            if fa and fb:
                ka, kb = pos[a], pos[b]
                pa, pb = self.site_nodes[ka][0], self.site_nodes[kb][0]
                E = (((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1)) ** (q / 2)
                key = (min(ka, kb), max(ka, kb))
                E = E if ka < kb else E.T
                pair[key] = pair.get(key, 0.0) + E
            elif fa or fb:
                k = pos[a] if fa else pos[b]
                other = b if fa else a
                pts = self.site_nodes[k][0]
                logu[k] = logu[k] - (((pts - self.y[other]) ** 2).sum(-1)) ** (q / 2)
            else:
                const += float(((self.y[a] - self.y[b]) ** 2).sum()) ** (q / 2)
        # eliminate leaves until no edges remain
        nbrs = {k: set() for k in range(len(free))}
        for (i, j) in pair:
            nbrs[i].add(j)
            nbrs[j].add(i)
        alive = set(range(len(free)))
        total = -const
        while alive:
            leaf = next((k for k in sorted(alive) if len(nbrs[k]) <= 1), None)
            if leaf is None:
                raise SamplerError("free-site graph has a cycle; use indicators for a direct grid")
            if not nbrs[leaf]:
                total += float(np.logaddexp.reduce(logu[leaf]))
                alive.remove(leaf)
                continue
            j = next(iter(nbrs[leaf]))
            key = (min(leaf, j), max(leaf, j))
            E = pair.pop(key)
            E = E if leaf < j else E.T  # rows: leaf nodes, cols: j nodes
            msg = np.logaddexp.reduce(logu[leaf][:, None] - E, axis=0)
            logu[j] = logu[j] + msg
            nbrs[j].discard(leaf)
            nbrs[leaf].clear()
            alive.remove(leaf)
        return total


def quadrature_logZ(spec: PotentialSpec, dom: LatticeDomain, constraint=None, pins=None,
                    max_free_dim: int = 6, nodes: int | None = None, indicator=None) -> float:
    """``log Z`` by tensor quadrature; ``indicator(x, H)`` optionally restricts the integrand."""
    cons = [] if constraint is None else (list(constraint) if isinstance(constraint, (list, tuple)) else [constraint])
    extra = [c for c in cons if c.kind == "energy_cut"]
    cons = [c for c in cons if c.kind != "energy_cut"]
    grid = QuadratureGrid(spec, dom, cons, pins=pins, nodes=nodes, max_free_dim=max_free_dim)
    inds = []
    for c in extra:
        thr = c.params["threshold"]
        inds.append(lambda x, H, t=thr: H > t)
    if indicator is not None:
        inds.append(indicator)
    if not inds:
        val = grid.log_integral()
    else:
        def both(x, H):
            ok = np.ones(H.shape, bool)
            for f in inds:
                ok &= f(x, H)
            return ok
        val = float(grid.log_integral([both])[0])
    if not np.isfinite(val):
        raise SamplerError("constraint set has measure zero on the grid")
    return float(val)


# --------------------------------------------------------------------------
# DLR resampling


def dlr_resample(spec: PotentialSpec, batch: SampleBatch, window, sweeps: int = 20, seed: int = 0,
                 step: float | None = None, collar: np.ndarray | None = None) -> SampleBatch:
    """Resample ``window`` sites of every snapshot from the conditional specification.

    ``collar`` is a boolean mask of sites the window must avoid (default: the
    ``R0`` boundary strip).
    """
    dom = batch.domain
    win = np.asarray(window)
    if win.dtype == bool:
        win = np.nonzero(win)[0]
    elif win.ndim == 2:
        win = dom.indices_of(win)
    win = np.asarray(win, np.int64)
    if win.size == 0:
        return batch
    if collar is None:
        collar = boundary_strip(dom, max(spec.R0, 1.0)).mask()
    g = bond_graph(spec, dom)
    if np.any(collar[win]):
        raise LatticeError("window touches the boundary collar")
    for off in spec.offsets:
        for s in win:
            if not dom.contains_site(dom.sites[s] + off) or not dom.contains_site(dom.sites[s] - off):
                raise LatticeError("window collar leaves the domain")
    pinned = np.setdiff1d(np.arange(dom.n_sites), win)
    rng = np.random.default_rng(seed)
    out = np.empty_like(batch.snapshots)
    h = 0.7 if step is None else step
    target = None
    for k, snap in enumerate(batch.snapshots):
        target = LatticeTarget(spec, dom, (), pins=(pinned, snap[pinned]), graph=g) if target is None else target
        target.pin_values = snap[pinned]
        x = snap.copy()
        st = ChainState(x=x, step=np.full(dom.n_sites, h), seed=seed, energy=float(target.energy(x)))
        st.rng = rng
        b = metropolis_run(spec, dom, target=target, state=st, sweeps=sweeps, thin=sweeps, audit=False)
        out[k] = b.snapshots[-1]
    H = LatticeTarget(spec, dom).energy(out)
    return SampleBatch(out, batch.sweeps.copy(), H, float("nan"), seed, dom, None, {"window": win.tolist()})

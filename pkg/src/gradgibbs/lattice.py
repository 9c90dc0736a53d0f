"""Discrete domains, boundary strips, discretization and piecewise-linear interpolation.

A macroscopic box ``Omega`` is superimposed with the lattice ``Z^d`` at scale
``eps``; the microscopic domain is ``Omega_eps = Z^d ∩ Omega/eps``. Fields on
``Omega`` are brought to the lattice by cell averaging and configurations are
brought back by the Kuhn-triangulated linear interpolation.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

__all__ = [
    "Box",
    "LatticeDomain",
    "Configuration",
    "AffineMap",
    "Strip",
    "PLField",
    "LatticeError",
    "build_domain",
    "boundary_strip",
    "discretize",
    "interpolate",
    "norms",
    "check_sandwich",
    "mass_matrix",
    "write_snapshot",
    "read_snapshot",
]

_TOL = 1e-9


class LatticeError(ValueError):
    """Raised for invalid domains or evaluations outside the covered region."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned half-open box ``[lower, upper)`` in ``R^d``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise LatticeError("box bounds differ in dimension")
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise LatticeError("box must have positive volume")

    @classmethod
    def unit(cls, d: int, side: float = 1.0) -> "Box":
        return cls((0.0,) * d, (float(side),) * d)

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod([u - l for l, u in zip(self.lower, self.upper)]))

    @property
    def surface(self) -> float:
        """``|∂Omega|``: perimeter (d=2) or number of endpoints (d=1)."""
        sides = [u - l for l, u in zip(self.lower, self.upper)]
        if self.d == 1:
            return 2.0
        total = 0.0
        for k in range(self.d):
            total += 2.0 * float(np.prod([s for j, s in enumerate(sides) if j != k]))
        return total

    def dist_to_complement(self, x: np.ndarray) -> np.ndarray:
        """Euclidean distance from points ``x`` (..., d) inside the box to its complement."""
        x = np.asarray(x, dtype=float)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return np.minimum(x - lo, hi - x).min(axis=-1)

    def to_list(self) -> list[list[float]]:
        return [list(self.lower), list(self.upper)]


class LatticeDomain:
    """The lattice ``Omega_eps`` with lexicographic site enumeration.

    Parameters
    ----------
    box : Box
        Macroscopic shape.
    eps : float
        Lattice scale.
    m : int
        Target dimension of configurations.

    Notes
    -----
    The domain is immutable; ``sites`` is an ``(N, d)`` integer array in
    lexicographic order and ``site_index`` maps an integer tuple to its row.
    """

    def __init__(self, box: Box, eps: float, m: int = 1):
        if not (0.0 < eps < 1.0):
            raise LatticeError(f"empty lattice: scale eps={eps} outside (0, 1)")
        if box.d not in (1, 2):
            raise LatticeError("only d in {1, 2} is supported")
        if m not in (1, 2):
            raise LatticeError("only m in {1, 2} is supported")
        self.box = box
        self.eps = float(eps)
        self.d = box.d
        self.m = int(m)
        lo = [math.ceil(l / eps - _TOL) for l in box.lower]
        hi = [math.ceil(u / eps - _TOL) - 1 for u in box.upper]
        if any(h < l for l, h in zip(lo, hi)):
            raise LatticeError(f"empty lattice: no site of scale {eps} inside {box.to_list()}")
        self.origin = np.array(lo, dtype=np.int64)
        self.shape = tuple(h - l + 1 for l, h in zip(lo, hi))
        grids = np.meshgrid(*[np.arange(l, h + 1) for l, h in zip(lo, hi)], indexing="ij")
        self.sites = np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)
        self.sites.setflags(write=False)
        self._lattice_dist = self._compute_lattice_dist()

    # -- enumeration -------------------------------------------------
    @property
    def n_sites(self) -> int:
        return int(self.sites.shape[0])

    def __len__(self) -> int:
        return self.n_sites

    def __repr__(self) -> str:
        return f"LatticeDomain(d={self.d}, m={self.m}, eps={self.eps}, shape={self.shape})"

    def contains_site(self, i) -> bool:
        rel = np.asarray(i, dtype=np.int64) - self.origin
        return bool(np.all(rel >= 0) and np.all(rel < np.asarray(self.shape)))

    def site_index(self, i) -> int:
        """Row of site ``i`` in ``sites``; raises ``KeyError`` if absent."""
        rel = np.asarray(i, dtype=np.int64) - self.origin
        if np.any(rel < 0) or np.any(rel >= np.asarray(self.shape)):
            raise KeyError(tuple(int(v) for v in np.atleast_1d(i)))
        return int(np.ravel_multi_index(tuple(rel), self.shape))

    def indices_of(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized ``site_index``; returns -1 for points outside the domain."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.int64))
        rel = pts - self.origin
        ok = np.all((rel >= 0) & (rel < np.asarray(self.shape)), axis=1)
        out = np.full(pts.shape[0], -1, dtype=np.int64)
        if ok.any():
            out[ok] = np.ravel_multi_index(tuple(rel[ok].T), self.shape)
        return out

    def neighbor(self, k: int) -> np.ndarray:
        """Index of ``i + e_k`` for every site, -1 where it leaves the domain."""
        step = np.zeros(self.d, dtype=np.int64)
        step[k] = 1
        return self.indices_of(self.sites + step)

    def positions(self) -> np.ndarray:
        """Macroscopic positions ``eps * i``."""
        return self.eps * self.sites.astype(float)

    # -- distances and strips -----------------------------------------
    def _compute_lattice_dist(self) -> np.ndarray:
        rel = self.sites - self.origin
        shp = np.asarray(self.shape)
        per_axis = np.minimum(rel + 1, shp - rel)
        return per_axis.min(axis=1).astype(float)

    def lattice_dist(self) -> np.ndarray:
        """``dist(i, Z^d \\ Lambda)`` for every site (nearest outside site lies on an axis)."""
        return self._lattice_dist.copy()

    def scaled_boundary_dist(self) -> np.ndarray:
        """``eps^{-1} dist(eps i, Omega^c)`` used by the cut-off profiles."""
        return self.box.dist_to_complement(self.positions()) / self.eps

    def boundary_constant(self, rhos: Iterable[float]) -> float:
        """Measured box constant ``max |S_{rho/eps}| eps^d / (|∂Omega| rho)`` over ``rhos``."""
        worst = 0.0
        for rho in rhos:
            count = len(boundary_strip(self, rho / self.eps))
            worst = max(worst, count * self.eps**self.d / (self.box.surface * rho))
        return worst

    def covered_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Macroscopic bounds of the region covered by the triangulation."""
        lo = self.eps * self.origin.astype(float)
        hi = self.eps * (self.origin + np.asarray(self.shape) - 1).astype(float)
        return lo, hi

    def with_m(self, m: int) -> "LatticeDomain":
        return LatticeDomain(self.box, self.eps, m)


def build_domain(shape, eps: float, m: int = 1) -> LatticeDomain:
    """Build ``Omega_eps`` for a box descriptor.

    ``shape`` may be a :class:`Box`, a pair ``(lower, upper)`` of sequences, a
    list of per-axis intervals ``[[a1, b1], [a2, b2]]`` or a single interval
    ``[a, b]`` for d = 1.
    """
    return LatticeDomain(_as_box(shape), eps, m)


def _as_box(shape) -> Box:
    if isinstance(shape, Box):
        return shape
    if isinstance(shape, dict):
        return Box(tuple(map(float, shape["lower"])), tuple(map(float, shape["upper"])))
    arr = np.asarray(shape, dtype=float)
    if arr.ndim == 1 and arr.size == 2:
        return Box((float(arr[0]),), (float(arr[1]),))
    if arr.ndim == 2 and arr.shape[1] == 2:
        return Box(tuple(arr[:, 0]), tuple(arr[:, 1]))
    raise LatticeError(f"unrecognized box descriptor {shape!r}")


@dataclass(frozen=True)
class Strip:
    """Sites of ``Lambda`` whose lattice distance to the complement lies in ``(inner, outer]``."""

    domain: LatticeDomain = field(repr=False)
    inner: float
    outer: float
    sites: np.ndarray

    def __len__(self) -> int:
        return int(self.sites.size)

    def mask(self) -> np.ndarray:
        out = np.zeros(self.domain.n_sites, dtype=bool)
        out[self.sites] = True
        return out


def boundary_strip(dom: LatticeDomain, R: float, inner: float = 0.0) -> Strip:
    """``S_R(Lambda) = {i : dist(i, Z^d \\ Lambda) <= R}``; saturates at the whole domain."""
    if R < 1 and inner == 0.0:
        raise LatticeError("strip radius must be at least 1")
    dist = dom._lattice_dist
    sel = np.nonzero((dist <= R + _TOL) & (dist > inner + _TOL))[0]
    return Strip(dom, float(inner), float(R), sel)


# --------------------------------------------------------------------------
# Affine maps


class AffineMap:
    """``L(x) = A x + b`` with ``A`` an ``m x d`` matrix."""

    def __init__(self, A, b=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        self.A = A
        self.b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float).reshape(A.shape[0])
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise LatticeError("affine map has non-finite entries")

    @classmethod
    def identity(cls, d: int, scale: float = 1.0) -> "AffineMap":
        return cls(scale * np.eye(d))

    @classmethod
    def zero(cls, m: int, d: int) -> "AffineMap":
        return cls(np.zeros((m, d)))

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ self.A.T + self.b

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.A, x.shape[:-1] + self.A.shape).copy()

    def norm(self) -> float:
        """Operator-norm surrogate: largest column Euclidean norm."""
        return float(np.linalg.norm(self.A, axis=0).max())

    def __neg__(self) -> "AffineMap":
        return AffineMap(-self.A, -self.b)

    def __repr__(self) -> str:
        return f"AffineMap(A={self.A.tolist()}, b={self.b.tolist()})"


# --------------------------------------------------------------------------
# Configurations


class Configuration:
    """Values ``X(i) in R^m`` on the sites of a domain.

    ``pin`` optionally designates a site held at the origin, the canonical
    representative of the gradient quotient.
    """

    def __init__(self, domain: LatticeDomain, values, pin: int | None = None):
        vals = np.asarray(values, dtype=float)
        if vals.ndim == 1:
            vals = vals.reshape(-1, 1) if domain.m == 1 else vals.reshape(-1, domain.m)
        if vals.shape != (domain.n_sites, domain.m):
            raise LatticeError(f"values shape {vals.shape} != ({domain.n_sites}, {domain.m})")
        if not np.all(np.isfinite(vals)):
            raise LatticeError("configuration has non-finite entries")
        self.domain = domain
        self.values = vals
        self.pin = pin
        if pin is not None and np.any(vals[pin] != 0.0):
            self.values = vals - vals[pin]

    @classmethod
    def zeros(cls, domain: LatticeDomain) -> "Configuration":
        return cls(domain, np.zeros((domain.n_sites, domain.m)))

    @classmethod
    def from_affine(cls, domain: LatticeDomain, L: AffineMap) -> "Configuration":
        """The lattice restriction ``i -> L(i)``."""
        return cls(domain, L(domain.sites.astype(float)))

    def copy(self) -> "Configuration":
        return Configuration(self.domain, self.values.copy(), self.pin)

    def gradient(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Sites where ``grad_k X`` is defined and the values ``X(i+e_k) - X(i)``."""
        nb = self.domain.neighbor(k)
        ok = np.nonzero(nb >= 0)[0]
        return ok, self.values[nb[ok]] - self.values[ok]

    def grad_at(self, i, k: int) -> np.ndarray:
        idx = self.domain.site_index(i)
        nb = self.domain.neighbor(k)[idx]
        if nb < 0:
            raise LatticeError(f"gradient {k} undefined at site {tuple(np.atleast_1d(i))}")
        return self.values[nb] - self.values[idx]

    def __sub__(self, other: "Configuration") -> "Configuration":
        return Configuration(self.domain, self.values - other.values)


# --------------------------------------------------------------------------
# Discretization by cell averages

_GAUSS4 = np.polynomial.legendre.leggauss(4)


def discretize(u, dom: LatticeDomain, order: int = 4) -> Configuration:
    """``X_{u,eps}(i) = eps^{-1} * mean of u over eps i + Q(eps)``.

    ``u`` is an :class:`AffineMap` (handled in closed form), a :class:`PLField`
    or any vectorized callable mapping ``(..., d)`` points to ``(..., m)``.
    Cell means use a tensor Gauss-Legendre rule with ``order`` points per axis,
    exact for polynomials of degree ``2*order - 1``.
    """
    eps = dom.eps
    if isinstance(u, AffineMap):
        vals = dom.sites.astype(float) @ u.A.T + u.b / eps
        return Configuration(dom, vals)
    if order == 4:
        nodes, weights = _GAUSS4
    else:
        nodes, weights = np.polynomial.legendre.leggauss(order)
    nodes = 0.5 * eps * nodes
    weights = 0.5 * weights
    grids = np.meshgrid(*([nodes] * dom.d), indexing="ij")
    offs = np.stack([g.ravel() for g in grids], axis=1)
    wts = np.prod(np.meshgrid(*([weights] * dom.d), indexing="ij"), axis=0).ravel()
    pts = dom.positions()[:, None, :] + offs[None, :, :]
    if isinstance(u, PLField):
        vals = u(pts.reshape(-1, dom.d), extrapolate=True)
    else:
        vals = np.asarray(u(pts.reshape(-1, dom.d)), dtype=float)
    vals = vals.reshape(dom.n_sites, offs.shape[0], -1)
    if not np.all(np.isfinite(vals)):
        raise LatticeError("field has non-finite values on the lattice cells")
    means = np.einsum("nqm,q->nm", vals, wts)
    return Configuration(dom.with_m(means.shape[1]) if means.shape[1] != dom.m else dom, means / eps)


# --------------------------------------------------------------------------
# Piecewise-linear interpolation on the Kuhn triangulation


class PLField:
    """Continuous piecewise-linear field with nodal values ``eps * X(i)``.

    In d = 2 every unit cell ``[a, a+1] x [b, b+1]`` (lattice units) is split
    along its ``(+1, +1)`` diagonal into a lower triangle ``{s >= t}`` and an
    upper triangle ``{s < t}`` in local coordinates ``(s, t)``.
    """

    def __init__(self, domain: LatticeDomain, nodal: np.ndarray):
        self.domain = domain
        self.nodal = np.asarray(nodal, dtype=float).reshape(domain.n_sites, -1)
        self.m = self.nodal.shape[1]
        self._grid = self.nodal.reshape(*domain.shape, self.m)
        if any(s < 2 for s in domain.shape):
            raise LatticeError("interpolation needs at least two sites per axis")

    @property
    def d(self) -> int:
        return self.domain.d

    def _locate(self, x: np.ndarray, extrapolate: bool):
        dom = self.domain
        u = x / dom.eps - dom.origin
        shp = np.asarray(dom.shape)
        if not extrapolate:
            bad = np.any((u < -_TOL) | (u > shp - 1 + _TOL), axis=-1)
            if np.any(bad):
                raise LatticeError("evaluation outside the covered simplices")
        cell = np.clip(np.floor(u).astype(np.int64), 0, shp - 2)
        loc = u - cell
        return cell, loc

    def __call__(self, x, extrapolate: bool = False) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cell, loc = self._locate(x, extrapolate)
        g = self._grid
        if self.d == 1:
            a = g[cell[:, 0]]
            b = g[cell[:, 0] + 1]
            s = loc[:, :1]
            return a + s * (b - a)
        i, j = cell[:, 0], cell[:, 1]
        v00, v10, v01, v11 = g[i, j], g[i + 1, j], g[i, j + 1], g[i + 1, j + 1]
        s, t = loc[:, :1], loc[:, 1:2]
        lower = v00 + s * (v10 - v00) + t * (v11 - v10)
        upper = v00 + t * (v01 - v00) + s * (v11 - v01)
        return np.where(s >= t, lower, upper)

    def grad(self, x, extrapolate: bool = False) -> np.ndarray:
        """Gradient ``(..., m, d)`` of the affine piece containing each point."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cell, loc = self._locate(x, extrapolate)
        g = self._grid / self.domain.eps
        if self.d == 1:
            return (g[cell[:, 0] + 1] - g[cell[:, 0]])[:, :, None]
        i, j = cell[:, 0], cell[:, 1]
        v00, v10, v01, v11 = g[i, j], g[i + 1, j], g[i, j + 1], g[i + 1, j + 1]
        lower = np.stack([v10 - v00, v11 - v10], axis=-1)
        upper = np.stack([v11 - v01, v01 - v00], axis=-1)
        s, t = loc[:, 0], loc[:, 1]
        return np.where((s >= t)[:, None, None], lower, upper)

    def simplices(self) -> tuple[np.ndarray, np.ndarray]:
        """Vertex site indices ``(S, d+1)`` and unscaled volumes of every simplex."""
        return kuhn_simplices(self.domain)

    def simplex_gradients(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-simplex gradients ``(S, m, d)`` and macroscopic volumes ``(S,)``."""
        simp, vol = self.simplices()
        X = self.nodal / self.domain.eps
        if self.d == 1:
            grads = (X[simp[:, 1]] - X[simp[:, 0]])[:, :, None]
        else:
            a, b, c = X[simp[:, 0]], X[simp[:, 1]], X[simp[:, 2]]
            lower = simp[:, 3] == 0
            g1 = np.where(lower[:, None], b - a, c - b)
            g2 = np.where(lower[:, None], c - b, b - a)
            grads = np.stack([g1, g2], axis=-1)
        return grads, vol * self.domain.eps**self.d


def kuhn_simplices(dom: LatticeDomain) -> tuple[np.ndarray, np.ndarray]:
    """Simplices of the covered region.

    d = 1 returns ``(S, 2)`` vertex indices. d = 2 returns ``(S, 4)`` where the
    first three columns are vertices ordered along the path used for the
    gradient (lower: ``00, 10, 11``; upper: ``00, 01, 11``) and the last column
    flags the upper triangle. Volumes are in lattice units.
    """
    shp = dom.shape
    idx = np.arange(dom.n_sites).reshape(shp)
    if dom.d == 1:
        simp = np.stack([idx[:-1], idx[1:]], axis=1)
        return simp, np.ones(simp.shape[0])
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[1:, :-1].ravel()
    v01 = idx[:-1, 1:].ravel()
    v11 = idx[1:, 1:].ravel()
    lower = np.stack([v00, v10, v11, np.zeros_like(v00)], axis=1)
    upper = np.stack([v00, v01, v11, np.ones_like(v00)], axis=1)
    simp = np.concatenate([lower, upper])
    return simp, np.full(simp.shape[0], 0.5)


def interpolate(X: Configuration) -> PLField:
    """``Pi_eps X``: the Kuhn-triangulated linear interpolation with ``v(eps i) = eps X(i)``."""
    return PLField(X.domain, X.domain.eps * X.values)


def mass_matrix(dom: LatticeDomain):
    """Scalar P1 mass matrix on the covered region in lattice units (sparse CSR).

    ``||Pi_eps xi||_{L^2}^2 = eps^{d+2} * sum_c xi_c^T M xi_c`` summed over components.
    """
    from scipy import sparse

    simp, vol = kuhn_simplices(dom)
    k = dom.d + 1
    verts = simp[:, :k]
    local = (np.ones((k, k)) + np.eye(k)) / ((k) * (k + 1))
    rows = np.repeat(verts, k, axis=1).ravel()
    cols = np.tile(verts, (1, k)).ravel()
    data = (vol[:, None, None] * local[None]).ravel()
    return sparse.csr_matrix((data, (rows, cols)), shape=(dom.n_sites, dom.n_sites))


# --------------------------------------------------------------------------
# Norms

def _simplex_rule(d: int, order: int):
    """Collapsed Gauss rule on the reference simplex (points in barycentric form)."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    if d == 1:
        bary = np.stack([1 - x, x], axis=1)
        return bary, w
    s, t = np.meshgrid(x, x, indexing="ij")
    ws = np.outer(w, w)
    # Duffy map (s, t) -> (s, s t) on {0 <= y <= x <= 1}, Jacobian s
    px, py = s.ravel(), (s * t).ravel()
    wt = (ws * s).ravel() * 2.0
    bary = np.stack([1 - px, px - py, py], axis=1)
    return bary, wt


def _subdivide(d: int, levels: int) -> list[np.ndarray]:
    """Barycentric vertex sets of a uniform subdivision of the reference simplex."""
    if d == 1:
        n = 2**levels
        return [np.array([[1 - a / n, a / n], [1 - (a + 1) / n, (a + 1) / n]]) for a in range(n)]
    tris = [np.eye(3)]
    for _ in range(levels):
        nxt = []
        for T in tris:
            a, b, c = T
            ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
            nxt += [np.array([a, ab, ca]), np.array([ab, b, bc]), np.array([ca, bc, c]), np.array([ab, bc, ca])]
        tris = nxt
    return tris


def _integrate_abs_power(values_at: Callable, dom: LatticeDomain, r: float, exact_poly: bool,
                         order: int = 8, levels: int = 2) -> float:
    """``∫ |w|^r`` over the covered region for a field given on barycentric points."""
    simp, vol = kuhn_simplices(dom)
    k = dom.d + 1
    if exact_poly:
        subs = [np.eye(k)]
        bary, w = _simplex_rule(dom.d, max(order, int(r) // 2 + 2))
    else:
        subs = _subdivide(dom.d, levels)
        bary, w = _simplex_rule(dom.d, order)
    total = 0.0
    for S in subs:
        pts = bary @ S
        vals = values_at(simp[:, :k], pts)  # (S, Q, m)
        mag = np.linalg.norm(vals, axis=-1) ** r
        total += float((mag @ w * vol).sum()) / len(subs)
    return total * dom.eps**dom.d


def _field_at_bary(field_vals: np.ndarray):
    def f(verts, pts):
        return np.einsum("qk,skm->sqm", pts, field_vals[verts])
    return f


def _callable_at_bary(dom: LatticeDomain, fn: Callable):
    pos = dom.positions()

    def f(verts, pts):
        x = np.einsum("qk,skd->sqd", pts, pos[verts])
        out = fn(x.reshape(-1, dom.d))
        return np.asarray(out, dtype=float).reshape(x.shape[0], x.shape[1], -1)
    return f


def _macro_grad(v, x: np.ndarray) -> np.ndarray:
    if isinstance(v, (AffineMap, PLField)):
        return v.grad(x)
    if hasattr(v, "grad"):
        return np.asarray(v.grad(x), dtype=float)
    h = 1e-6
    cols = []
    for k in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[k] = h
        cols.append((np.asarray(v(x + e)) - np.asarray(v(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def _interval_abs_power(a: np.ndarray, b: np.ndarray, r: float) -> np.ndarray:
    """``∫_0^1 |a + t (b - a)|^r dt`` in closed form for scalar endpoint values."""
    aa, bb = np.abs(a), np.abs(b)
    same = a * b >= 0
    out = np.empty_like(aa)
    # same sign: (|b|^{r+1} - |a|^{r+1}) / ((r+1)(|b| - |a|)), limit |a|^r
    diff = bb - aa
    close = same & (np.abs(diff) <= 1e-12 * np.maximum(aa, bb))
    reg = same & ~close
    out[reg] = (bb[reg] ** (r + 1) - aa[reg] ** (r + 1)) / ((r + 1) * diff[reg])
    out[close] = aa[close] ** r
    opp = ~same
    out[opp] = (aa[opp] ** (r + 1) + bb[opp] ** (r + 1)) / ((r + 1) * (aa[opp] + bb[opp]))
    return out


def _pl_abs_power(dom: LatticeDomain, field_vals: np.ndarray, r: float) -> float:
    """``∫ |w|^r`` for a piecewise-linear ``w`` given by nodal values on the Kuhn mesh.

    Exact for even integer ``r`` and for scalar fields in d = 1; otherwise a
    subdivided collapsed Gauss rule (relative accuracy about 1e-6).
    """
    even = float(r).is_integer() and int(r) % 2 == 0
    if dom.d == 1 and dom.m == 1:
        simp, vol = kuhn_simplices(dom)
        a = field_vals[simp[:, 0], 0]
        b = field_vals[simp[:, 1], 0]
        return float((_interval_abs_power(a, b, r) * vol).sum()) * dom.eps
    return _integrate_abs_power(_field_at_bary(field_vals), dom, r, exact_poly=even, levels=0 if even else 3)


def norms(X: Configuration, v=None, r: float = 2.0, p: float = 2.0) -> dict:
    """Discrete and continuum distances between a configuration and a macroscopic field.

    Returns ``disc_lr = eps^{d+r} sum |X - X_{v,eps}|^r``,
    ``disc_grad_lp = eps^d sum_i sum_k |grad_k X(i) - grad_k X_{v,eps}(i)|^p``,
    ``cont_Lr = ||Pi_eps X - v||_r^r`` and ``cont_grad_Lp = ||grad(Pi_eps X - v)||_p^p``
    (integrals over the covered region, ``|grad w|^p = sum_k |∂_k w|^p``).
    ``v=None`` means the zero field.
    """
    if r < 1 or p < 1:
        raise LatticeError("exponents must be >= 1")
    dom = X.domain
    eps = dom.eps
    if not np.all(np.isfinite(X.values)):
        raise LatticeError("non-finite configuration")
    if v is not None and hasattr(v, "on"):
        v = v.on(dom)
    Xv = np.zeros_like(X.values) if v is None else discretize(v, dom).values
    diff = X.values - Xv
    disc_lr = eps ** (dom.d + r) * float((np.linalg.norm(diff, axis=1) ** r).sum())
    disc_grad = 0.0
    D = Configuration(dom, diff)
    for k in range(dom.d):
        _, g = D.gradient(k)
        disc_grad += float((np.linalg.norm(g, axis=1) ** p).sum())
    disc_grad *= eps**dom.d

    nodal = eps * X.values
    piecewise = v is None or isinstance(v, (AffineMap, PLField))
    if v is None:
        field_vals = nodal
    elif isinstance(v, AffineMap):
        field_vals = nodal - v(dom.positions())
    elif isinstance(v, PLField) and v.domain.n_sites == dom.n_sites and v.domain.eps == dom.eps:
        field_vals = nodal - v.nodal
    else:
        piecewise = False
        field_vals = None
    if piecewise:
        cont_lr = _pl_abs_power(dom, field_vals, r)
        pl = PLField(dom, field_vals)
        grads, vols = pl.simplex_gradients()
        cont_grad = float((np.linalg.norm(grads, axis=1) ** p).sum(axis=-1) @ vols)
    else:
        pi = interpolate(X)
        vf = v

        def w(x):
            return pi(x) - np.asarray(vf(x), dtype=float)

        cont_lr = _integrate_abs_power(_callable_at_bary(dom, w), dom, r, exact_poly=False, levels=3)

        def gw(x):
            return pi.grad(x) - _macro_grad(vf, x)

        simp, vol = kuhn_simplices(dom)
        k = dom.d + 1
        bary, wts = _simplex_rule(dom.d, 6)
        subs = _subdivide(dom.d, 2)
        pos = dom.positions()[simp[:, :k]]
        cen = pos.mean(axis=1)[:, None, :]
        total = 0.0
        for S in subs:
            x = np.einsum("qk,skd->sqd", bary @ S, pos)
            # nudge points into their own simplex so the affine piece is unambiguous
            x = x + 1e-9 * (cen - x)
            g = gw(x.reshape(-1, dom.d)).reshape(x.shape[0], x.shape[1], dom.m, dom.d)
            mag = (np.linalg.norm(g, axis=2) ** p).sum(axis=-1)
            total += float((mag @ wts * vol).sum()) / len(subs)
        cont_grad = total * eps**dom.d
    return {"disc_lr": disc_lr, "disc_grad_lp": disc_grad, "cont_Lr": cont_lr, "cont_grad_Lp": cont_grad}


def check_sandwich(n: dict, factor: float = 2.0) -> dict:
    """Slacks of the two factor-``factor`` sandwiches; negative slack is a violation."""
    out = {}
    for disc, cont in (("disc_lr", "cont_Lr"), ("disc_grad_lp", "cont_grad_Lp")):
        lower = n[disc] - n[cont] / factor
        upper = factor * n[cont] - n[disc]
        out[disc] = (lower, upper)
    out["ok"] = all(min(v) >= -1e-12 * max(1.0, n["disc_lr"], n["disc_grad_lp"])
                    for k, v in out.items() if k != "ok")
    return out


# --------------------------------------------------------------------------
# Snapshot text format

def write_snapshot(X: Configuration, stream=None) -> str:
    """Serialize a configuration; returns the text and writes it to ``stream`` if given."""
    dom = X.domain
    buf = io.StringIO()
    buf.write("# gradgibbs snapshot v1\n")
    buf.write(f"d {dom.d}\n")
    buf.write(f"m {dom.m}\n")
    buf.write(f"eps {dom.eps:.17g}\n")
    buf.write("shape " + " ".join(f"{a:.17g} {b:.17g}" for a, b in zip(dom.box.lower, dom.box.upper)) + "\n")
    buf.write(f"sites {dom.n_sites}\n")
    for i, x in zip(dom.sites, X.values):
        buf.write(" ".join(str(int(c)) for c in i) + " | " + " ".join(f"{v:.16e}" for v in x) + "\n")
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def read_snapshot(text: str) -> Configuration:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    head = {}
    k = 0
    while "|" not in lines[k]:
        key, *rest = lines[k].split()
        head[key] = rest
        k += 1
    d, m, eps = int(head["d"][0]), int(head["m"][0]), float(head["eps"][0])
    bounds = list(map(float, head["shape"]))
    box = Box(tuple(bounds[0::2]), tuple(bounds[1::2]))
    dom = LatticeDomain(box, eps, m)
    vals = np.empty((dom.n_sites, m))
    for ln in lines[k:]:
        left, right = ln.split("|")
        idx = dom.site_index([int(c) for c in left.split()])
        vals[idx] = [float(c) for c in right.split()]
    if d != dom.d:
        raise LatticeError("snapshot header inconsistent")
    return Configuration(dom, vals)

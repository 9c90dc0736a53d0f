"""Energies, constraint sets and the cut-off interpolation between two configurations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .lattice import (AffineMap, Configuration, LatticeDomain, LatticeError,
                      boundary_strip, discretize, norms)
from .potential import PotentialSpec, null_lagrangian_V

__all__ = [
    "BondGraph",
    "bond_graph",
    "energy",
    "total_energy",
    "bond_energies",
    "delta_energy",
    "conditioned_energy",
    "null_lagrangian_energy",
    "plaquettes",
    "boundary_ring",
    "shoelace_area",
    "ConstraintSet",
    "soft_clamp",
    "lr_neighborhood",
    "lattice_lr",
    "periodic_set",
    "periodic_domain",
    "energy_cut",
    "contains",
    "theta_profile",
    "interpolation_map",
    "strip_slicing",
    "split_strip",
    "appendix_bound",
    "laplacian",
]


def _mask(dom: LatticeDomain, Lam) -> np.ndarray:
    if Lam is None:
        return np.ones(dom.n_sites, dtype=bool)
    Lam = np.asarray(Lam)
    if Lam.dtype == bool:
        return Lam.copy()
    out = np.zeros(dom.n_sites, dtype=bool)
    if Lam.ndim == 2:
        idx = dom.indices_of(Lam)
        out[idx[idx >= 0]] = True
    else:
        out[Lam.astype(np.int64)] = True
    return out


@dataclass(frozen=True)
class BondGraph:
    """Bonds ``(i, i + e_k)`` of every patch ``tau_j(A)`` contained in a site set.

    The gradient potentials only see the forward differences of each patch, so
    the energy of a configuration is a sum over these bonds.
    """

    n_sites: int
    src: np.ndarray
    dst: np.ndarray
    axis: np.ndarray
    plaq: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.int64))

    @property
    def n_bonds(self) -> int:
        return int(self.src.size)

    def adjacency(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR neighbour lists (one entry per bond end)."""
        a = np.concatenate([self.src, self.dst])
        b = np.concatenate([self.dst, self.src])
        order = np.argsort(a, kind="stable")
        indptr = np.zeros(self.n_sites + 1, dtype=np.int64)
        np.add.at(indptr, a + 1, 1)
        return np.cumsum(indptr), b[order].astype(np.int64)

    def plaquette_incidence(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR lists of plaquettes touching each site."""
        P = self.plaq.shape[0]
        owner = self.plaq.ravel()
        pid = np.repeat(np.arange(P), 4)
        order = np.argsort(owner, kind="stable")
        indptr = np.zeros(self.n_sites + 1, dtype=np.int64)
        np.add.at(indptr, owner + 1, 1)
        return np.cumsum(indptr), pid[order].astype(np.int64)

    def restrict(self, keep: np.ndarray) -> "BondGraph":
        keep = np.asarray(keep, dtype=bool)
        return BondGraph(self.n_sites, self.src[keep], self.dst[keep], self.axis[keep], self.plaq)


def _anchors(spec: PotentialSpec, dom: LatticeDomain, inside: np.ndarray) -> np.ndarray:
    ok = inside.copy()
    for off in spec.offsets:
        idx = dom.indices_of(dom.sites + off)
        good = idx >= 0
        ok &= good
        ok[good] &= inside[idx[good]]
    return np.nonzero(ok)[0]


def plaquettes(dom: LatticeDomain, Lam=None) -> np.ndarray:
    """Unit squares ``(i0, i1, i2, i3) = (j, j+e1, j+e2, j+e1+e2)`` inside ``Lam``."""
    if dom.d != 2:
        raise LatticeError("plaquettes need d = 2")
    inside = _mask(dom, Lam)
    corners = [(0, 0), (1, 0), (0, 1), (1, 1)]
    cols = []
    ok = inside.copy()
    for c in corners:
        idx = dom.indices_of(dom.sites + np.array(c))
        good = idx >= 0
        ok &= good
        ok[good] &= inside[idx[good]]
        cols.append(idx)
    sel = np.nonzero(ok)[0]
    return np.stack([c[sel] for c in cols], axis=1).astype(np.int64)


def bond_graph(spec: PotentialSpec, dom: LatticeDomain, Lam=None) -> BondGraph:
    inside = _mask(dom, Lam)
    anchors = _anchors(spec, dom, inside)
    src, dst, ax = [], [], []
    for k in range(dom.d):
        nb = dom.neighbor(k)[anchors]
        src.append(anchors)
        dst.append(nb)
        ax.append(np.full(anchors.size, k))
    plaq = plaquettes(dom, inside) if spec.kind == "composite_with_null_lagrangian" else np.zeros((0, 4), np.int64)
    return BondGraph(dom.n_sites, np.concatenate(src).astype(np.int64), np.concatenate(dst).astype(np.int64),
                     np.concatenate(ax).astype(np.int64), plaq)


def laplacian(graph: BondGraph) -> sparse.csr_matrix:
    """Scalar graph Laplacian: ``sum_bonds |x_a - x_b|^2 = x^T Lap x``."""
    n = graph.n_sites
    ones = np.ones(graph.n_bonds)
    Adj = sparse.coo_matrix((ones, (graph.src, graph.dst)), shape=(n, n))
    Adj = Adj + Adj.T
    deg = np.asarray(Adj.sum(axis=1)).ravel()
    return (sparse.diags(deg) - Adj).tocsr()


def bond_energies(values: np.ndarray, graph: BondGraph, q: float) -> np.ndarray:
    """``|x_dst - x_src|^q`` per bond; ``values`` may carry leading batch axes."""
    diff = values[..., graph.dst, :] - values[..., graph.src, :]
    sq = (diff * diff).sum(-1)
    return sq if q == 2.0 else sq ** (q / 2.0)


def _values(X) -> np.ndarray:
    return X.values if isinstance(X, Configuration) else np.asarray(X, dtype=float)


def energy(spec: PotentialSpec, X: Configuration, Lam=None) -> float:
    """``H_Lam(X) = sum of U over patches tau_j(A) contained in Lam`` (the gradient part)."""
    g = bond_graph(spec, X.domain, Lam)
    return float(bond_energies(X.values, g, spec.exponent).sum())


def total_energy(spec: PotentialSpec, X: Configuration, Lam=None) -> float:
    """Gradient part plus the plaquette term for composite specs."""
    e = energy(spec, X, Lam)
    if spec.kind == "composite_with_null_lagrangian" and spec.M != 0.0:
        e += null_lagrangian_energy(X, spec.M, Lam)
    return e


def delta_energy(spec: PotentialSpec, X: Configuration, site: int, new_value, graph: BondGraph | None = None) -> float:
    """Exact energy change of moving one site (patch-local)."""
    g = graph if graph is not None else bond_graph(spec, X.domain)
    x = X.values
    new = np.atleast_1d(np.asarray(new_value, dtype=float))
    q = spec.exponent
    sel = (g.src == site) | (g.dst == site)
    other = np.where(g.src[sel] == site, g.dst[sel], g.src[sel])
    old = (((x[other] - x[site]) ** 2).sum(-1) ** (q / 2)).sum()
    nw = (((x[other] - new) ** 2).sum(-1) ** (q / 2)).sum()
    dE = float(nw - old)
    if g.plaq.shape[0] and spec.M != 0.0:
        touch = np.nonzero((g.plaq == site).any(axis=1))[0]
        y = x.copy()
        y[site] = new
        before = sum(null_lagrangian_V(x[g.plaq[t]]) for t in touch)
        after = sum(null_lagrangian_V(y[g.plaq[t]]) for t in touch)
        dE -= spec.M * (after - before)
    return dE


def conditioned_energy(spec: PotentialSpec, X, Lam_sites, Y: Configuration) -> float:
    """``H_Lam(X | Y)``: all patches meeting ``Lam``, evaluated on the glued ``X v Y``.

    ``Lam_sites`` are integer lattice points, ``X`` their values (aligned) and
    ``Y`` a configuration on an ambient domain containing the collar.
    """
    Lam_sites = np.atleast_2d(np.asarray(Lam_sites, dtype=np.int64)).reshape(-1, Y.domain.d)
    if Lam_sites.shape[0] == 0:
        return 0.0
    vals = np.asarray(X, dtype=float).reshape(Lam_sites.shape[0], -1)
    amb = Y.domain
    glued = Y.values.copy()
    pos = amb.indices_of(Lam_sites)
    if np.any(pos < 0):
        raise LatticeError("window sites lie outside the ambient configuration")
    glued[pos] = vals
    lam = {tuple(s) for s in Lam_sites}
    anchors = set()
    for s in Lam_sites:
        for off in spec.offsets:
            anchors.add(tuple(s - off))
    anchors = [a for a in anchors if any(tuple(np.asarray(a) + o) in lam for o in spec.offsets)]
    q = spec.exponent
    total = 0.0
    for a in sorted(anchors):
        patch = np.asarray(a) + spec.offsets
        idx = amb.indices_of(patch)
        if np.any(idx < 0):
            raise LatticeError(f"collar value missing for patch anchored at {a}")
        x0 = glued[idx[0]]
        for k in range(amb.d):
            e = np.zeros(amb.d, dtype=np.int64)
            e[k] = 1
            nb = amb.site_index(np.asarray(a) + e)
            total += float(((glued[nb] - x0) ** 2).sum()) ** (q / 2)
    return total


def null_lagrangian_energy(X: Configuration, M: float, Lam=None) -> float:
    """``M * sum over plaquettes in Lam of (1 - V)``."""
    dom = X.domain
    if dom.d != 2 or dom.m != 2:
        raise LatticeError("the plaquette term needs d = m = 2")
    P = plaquettes(dom, Lam)
    return float(M * (P.shape[0] - _plaquette_V(X.values, P).sum()))


def _plaquette_V(x: np.ndarray, P: np.ndarray) -> np.ndarray:
    a = x[..., P[:, 1], :] - x[..., P[:, 0], :]
    b = x[..., P[:, 2], :] - x[..., P[:, 0], :]
    c = x[..., P[:, 2], :] - x[..., P[:, 3], :]
    e = x[..., P[:, 1], :] - x[..., P[:, 3], :]
    det1 = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    det2 = c[..., 0] * e[..., 1] - c[..., 1] * e[..., 0]
    return 0.5 * (det1 + det2)


def boundary_ring(dom: LatticeDomain) -> np.ndarray:
    """Outermost sites of a 2-D box in counter-clockwise order."""
    if dom.d != 2:
        raise LatticeError("boundary ring needs d = 2")
    idx = np.arange(dom.n_sites).reshape(dom.shape)
    n0, n1 = dom.shape
    bottom = idx[:, 0]
    right = idx[n0 - 1, 1:]
    top = idx[: n0 - 1, n1 - 1][::-1]
    left = idx[0, 1 : n1 - 1][::-1]
    return np.concatenate([bottom, right, top, left])


def shoelace_area(points: np.ndarray) -> float:
    """Signed area of a closed polygon (counter-clockwise positive)."""
    p = np.asarray(points, dtype=float)
    q = np.roll(p, -1, axis=0)
    return 0.5 * float((p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0]).sum())


# --------------------------------------------------------------------------
# Constraint sets


@dataclass
class ConstraintSet:
    """A boundary or neighbourhood condition; ``params`` depend on ``kind``.

    Kinds: ``soft_clamp``, ``lr_neighborhood``, ``lattice_lr``, ``periodic``,
    ``energy_cut`` (the high-energy set ``M_K``).
    """

    kind: str
    domain: LatticeDomain
    params: dict

    @property
    def threshold(self) -> float:
        return self.params.get("threshold", math.inf)


def soft_clamp(dom: LatticeDomain, Y, R0: float, width: float = 1.0) -> ConstraintSet:
    """``|X(i) - Y(i)| < width`` on the strip ``S_{R0}``; ``Y`` a configuration, array or affine map."""
    if isinstance(Y, AffineMap):
        Yv = discretize(Y, dom).values
    elif isinstance(Y, Configuration):
        Yv = Y.values
    else:
        Yv = np.asarray(Y, dtype=float).reshape(dom.n_sites, dom.m)
    strip = boundary_strip(dom, max(R0, 1.0))
    return ConstraintSet("soft_clamp", dom, {"Y": Yv, "R0": float(R0), "strip": strip.sites, "width": float(width)})


def lr_neighborhood(dom: LatticeDomain, v, kappa: float, r: float = 2.0) -> ConstraintSet:
    """``||Pi_eps X - v||_{L^r} < kappa |Omega|^{1/r + 1/d}``."""
    thr = kappa * dom.box.volume ** (1.0 / r + 1.0 / dom.d)
    return ConstraintSet("lr_neighborhood", dom, {"v": v, "kappa": float(kappa), "r": float(r), "threshold": thr})


def lattice_lr(dom: LatticeDomain, Z, kappa: float, r: float = 2.0, sites=None) -> ConstraintSet:
    """``||X - Z||_{l^r(Lam)} < kappa |Lam|^{1/r + 1/d}`` on ``sites`` (default: all)."""
    mask = _mask(dom, sites)
    Zv = Z.values if isinstance(Z, Configuration) else np.asarray(Z, dtype=float).reshape(dom.n_sites, dom.m)
    n = int(mask.sum())
    thr = kappa * n ** (1.0 / r + 1.0 / dom.d)
    return ConstraintSet("lattice_lr", dom, {"Z": Zv, "kappa": float(kappa), "r": float(r), "mask": mask,
                                             "threshold": thr})


def periodic_domain(eps: float, d: int, R0: float, m: int = 1) -> LatticeDomain:
    """Sites ``i`` with ``i_j in [-floor(R0), 1/eps + floor(R0)]``."""
    n = int(round(1.0 / eps))
    if abs(n * eps - 1.0) > 1e-9:
        raise LatticeError("periodic runs need 1/eps integer")
    r0 = int(math.floor(R0 + 1e-9))
    from .lattice import Box

    box = Box((-r0 * eps,) * d, ((n + r0 + 1) * eps,) * d)
    return LatticeDomain(box, eps, m)


def periodic_set(dom: LatticeDomain, L: AffineMap, bound: float = 2.0) -> ConstraintSet:
    """``|X(i + e_j/eps) - X(i) - L e_j / eps| <= bound`` for all pairs inside the box."""
    n = int(round(1.0 / dom.eps))
    a_list, b_list, off = [], [], []
    for j in range(dom.d):
        shift = np.zeros(dom.d, dtype=np.int64)
        shift[j] = n
        partner = dom.indices_of(dom.sites + shift)
        ok = np.nonzero(partner >= 0)[0]
        a_list.append(ok)
        b_list.append(partner[ok])
        off.append(np.tile(L.A[:, j] * n, (ok.size, 1)))
    return ConstraintSet("periodic", dom, {"a": np.concatenate(a_list).astype(np.int64),
                                           "b": np.concatenate(b_list).astype(np.int64),
                                           "offset": np.concatenate(off), "bound": float(bound), "L": L})


def energy_cut(spec: PotentialSpec, dom: LatticeDomain, K: float) -> ConstraintSet:
    """The set ``M_K = {H_{Omega_eps}(X) > K |Omega_eps|}``."""
    return ConstraintSet("energy_cut", dom, {"spec": spec, "K": float(K), "threshold": float(K) * dom.n_sites})


def contains(cs: ConstraintSet, X: Configuration) -> tuple[bool, float]:
    """Membership with a signed margin (positive inside)."""
    x = X.values
    P = cs.params
    if cs.kind == "soft_clamp":
        s = P["strip"]
        if s.size == 0:
            return True, P["width"]
        dist = np.linalg.norm(x[s] - P["Y"][s], axis=1).max()
        margin = P["width"] - float(dist)
        return margin > 0, margin
    if cs.kind == "lr_neighborhood":
        r = P["r"]
        val = norms(X, P["v"], r=r, p=2.0)["cont_Lr"] ** (1.0 / r)
        margin = P["threshold"] - val
        return margin > 0, margin
    if cs.kind == "lattice_lr":
        r = P["r"]
        diff = np.linalg.norm(x[P["mask"]] - P["Z"][P["mask"]], axis=1)
        val = float((diff**r).sum() ** (1.0 / r))
        margin = P["threshold"] - val
        return margin > 0, margin
    if cs.kind == "periodic":
        dev = np.linalg.norm(x[P["b"]] - x[P["a"]] - P["offset"], axis=1)
        margin = P["bound"] - (float(dev.max()) if dev.size else 0.0)
        return margin >= 0, margin
    if cs.kind == "energy_cut":
        H = total_energy(P["spec"], X)
        margin = H - P["threshold"]
        return margin > 0, margin
    raise ValueError(f"unknown constraint kind {cs.kind!r}")


# --------------------------------------------------------------------------
# Cut-off interpolation machinery


def theta_profile(k: int, R: float, R0: float, dom: LatticeDomain, N: int | None = None) -> np.ndarray:
    """``min(1, R^{-1} (eps^{-1} dist(eps i, Omega^c) - R0 - (k-1) R)_+)`` on every site."""
    if R <= 2 * R0:
        raise ValueError("the ramp width R must exceed 2 R0")
    if k < 1 or (N is not None and k > N - 1):
        raise ValueError("slice index out of range")
    t = (dom.scaled_boundary_dist() - R0 - (k - 1) * R) / R
    return np.clip(t, 0.0, 1.0)


def interpolation_map(X: Configuration, Y: Configuration, theta: np.ndarray) -> Configuration:
    """``T(i) = theta(i) X(i) + (1 - theta(i)) Y(i)``."""
    th = np.asarray(theta, dtype=float)[:, None]
    return Configuration(X.domain, th * X.values + (1.0 - th) * Y.values)


def _slice_masks(dom: LatticeDomain, N: int, R: float, R0: float) -> list[np.ndarray]:
    dist = dom.scaled_boundary_dist()
    out = []
    for k in range(1, N):
        out.append((dist <= R0 + k * R + 1e-9) & (dist > R0 + (k - 1) * R + 1e-9))
    return out


def strip_slicing(dom: LatticeDomain, N: int, R: float, spec: PotentialSpec, X: Configuration) -> dict:
    """Smallest slice ``k`` whose patch energy is at most ``H / (N - 1)``."""
    if N < 2:
        raise ValueError("need N >= 2")
    eta = N * dom.eps * R
    half = 0.5 * min(u - l for l, u in zip(dom.box.lower, dom.box.upper))
    if eta > half:
        raise ValueError(f"eta = {eta} does not fit inside the domain")
    g = bond_graph(spec, dom)
    e = bond_energies(X.values, g, spec.exponent)
    per_anchor = np.zeros(dom.n_sites)
    np.add.at(per_anchor, g.src, e)
    H = float(e.sum())
    slices = _slice_masks(dom, N, R, spec.R0)
    energies = np.array([per_anchor[m].sum() for m in slices])
    ok = energies <= H / (N - 1) + 1e-12 * max(1.0, H)
    if not ok.any():
        raise AssertionError("pigeonhole violated: no slice below the average")
    return {"k": int(np.argmax(ok)) + 1, "slice_energy": energies.tolist(), "H": H, "qualifying": (np.nonzero(ok)[0] + 1).tolist()}


def split_strip(dom: LatticeDomain, mask1: np.ndarray, mask2: np.ndarray, R0: float) -> np.ndarray:
    """``S(L1, L2) = L ∩ (L1)_{R0} ∩ (L2)_{R0}`` by Euclidean dilation."""
    pts = dom.sites.astype(float)

    def dilate(mask):
        if not mask.any():
            return np.zeros(dom.n_sites, dtype=bool)
        src = pts[mask]
        d2 = ((pts[:, None, :] - src[None, :, :]) ** 2).sum(-1).min(axis=1)
        return d2 <= R0 * R0 + 1e-9

    return dilate(np.asarray(mask1, bool)) & dilate(np.asarray(mask2, bool))


def appendix_bound(spec: PotentialSpec, X: Configuration, Y: Configuration, Z: Configuration, k: int, N: int,
                   R: float, K: float, kappa: float) -> dict:
    """Both sides of the cut-off energy estimate for ``T_k(X, Y)``.

    ``Y`` is already extended by ``Z`` off ``S_{NR}``. The right side uses
    ``c_tilde = C^2 (1 + C + R0^d) + C``; the report carries the slack.
    """
    dom = X.domain
    d = dom.d
    c, p, C, r, R0 = spec.c, spec.p, spec.C, spec.r, spec.R0
    eps = dom.eps
    eta = N * eps * R
    vol = dom.box.volume
    th = theta_profile(k, R, R0, dom)
    T = interpolation_map(X, Y, th)
    g = bond_graph(spec, dom)
    q = spec.exponent
    H_T = float(bond_energies(T.values, g, q).sum())
    H_X = float(bond_energies(X.values, g, q).sum())
    dist = dom.scaled_boundary_dist()
    in_k = dist <= R0 + k * R + 1e-9
    gp = np.zeros(dom.n_sites)
    for ax in range(d):
        sites, diff = X.gradient(ax)
        gp[sites] += np.linalg.norm(diff, axis=1) ** p
    lhs = H_T + c * float(gp[in_k].sum())
    in_NR = dist <= N * R + 1e-9
    eZ = bond_energies(Z.values, g, q)
    UZ = float(eZ[in_NR[g.src]].sum())
    c_tilde = C**2 * (1.0 + C + R0**d) + C
    S_NR = int(in_NR.sum())
    rhs = (H_X + C * (K / N) * vol / eps**d + C**2 * UZ + c_tilde * S_NR
           + C * R0 ** (d + r) * (N / eta) ** r * (2 * kappa) ** r * vol ** (1 + r / d) / eps**d)
    return {"lhs": lhs, "rhs": rhs, "slack": rhs - lhs, "c_tilde": c_tilde, "eta": eta}

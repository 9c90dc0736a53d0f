"""Finite-range interaction potentials, their growth constants and the plaquette signed area."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy import integrate

from .lattice import AffineMap

__all__ = [
    "PotentialSpec",
    "GrowthConstants",
    "PotentialError",
    "KINDS",
    "eval_U",
    "null_lagrangian_V",
    "constant_c",
    "constant_c_quadrature",
    "ball_volume",
    "bound_constants",
    "probe_growth",
    "patch_offsets",
]

KINDS = ("gaussian_gradient", "p_power_gradient", "composite_with_null_lagrangian")


class PotentialError(ValueError):
    pass


def patch_offsets(d: int, name: str = "cross") -> np.ndarray:
    """Offsets of a named patch: ``cross`` is ``{0, ±e_k}``, ``forward`` is ``{0, e_k}``."""
    eye = np.eye(d, dtype=np.int64)
    if name == "cross":
        return np.concatenate([np.zeros((1, d), dtype=np.int64), eye, -eye])
    if name == "forward":
        return np.concatenate([np.zeros((1, d), dtype=np.int64), eye])
    raise PotentialError(f"unknown patch {name!r}")


def _diameter(offsets: np.ndarray) -> float:
    diff = offsets[:, None, :] - offsets[None, :, :]
    return float(np.sqrt((diff**2).sum(-1)).max())


@dataclass(frozen=True)
class GrowthConstants:
    """Lower growth ``U >= c |grad X(0)|^p`` and upper growth with constants ``C, r``."""

    c: float
    p: float
    C: float
    r: float
    m: int = 1
    R0: float = 1.0

    def validate(self, ldp: bool = False, d: int | None = None) -> None:
        if not (self.p > 0 and self.c > 0):
            raise PotentialError("need p > 0 and c > 0")
        if not (self.r > 1 and self.C > 1):
            raise PotentialError("need r > 1 and C > 1")
        if ldp:
            if not (self.r >= self.p > 1):
                raise PotentialError("large-deviation setting needs r >= p > 1")
            if d is not None and not (1.0 / self.r > 1.0 / self.p - 1.0 / d):
                raise PotentialError("large-deviation setting needs 1/r > 1/p - 1/d")


@dataclass(frozen=True)
class PotentialSpec:
    """A finite-range interaction on a patch.

    ``kind`` selects the energy ``U`` of a patch: ``gaussian_gradient`` is
    ``sum_k |X(e_k) - X(0)|^2``, ``p_power_gradient`` uses exponent ``p``, and
    ``composite_with_null_lagrangian`` carries a gradient base together with the
    weight ``M`` of the separate plaquette term (never folded into ``U``).
    """

    kind: str
    d: int
    m: int
    c: float = 1.0
    p: float = 2.0
    C: float | None = None
    r: float | None = None
    M: float = 0.0
    base_p: float | None = None
    patch: str = "cross"
    offsets: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PotentialError(f"unknown potential kind {self.kind!r}")
        if self.offsets is None:
            object.__setattr__(self, "offsets", patch_offsets(self.d, self.patch))
        offs = np.asarray(self.offsets, dtype=np.int64)
        object.__setattr__(self, "offsets", offs)
        have = {tuple(o) for o in offs}
        need = {tuple(o) for o in patch_offsets(self.d, "forward")}
        if not need <= have:
            raise PotentialError("patch must contain 0 and every e_k")
        if self.kind == "gaussian_gradient" and self.p != 2.0:
            object.__setattr__(self, "p", 2.0)
        q = self.exponent
        # |a + b|^q <= 2^{q-1}(|a|^q + |b|^q) applied twice gives C = 4^{q-1} d, r = q
        if self.r is None:
            object.__setattr__(self, "r", q if q > 1 else 2.0)
        if self.C is None:
            object.__setattr__(self, "C", max(4.0 ** (q - 1.0) * self.d, 2.0))
        if self.kind == "composite_with_null_lagrangian" and (self.d != 2 or self.m != 2):
            raise PotentialError("the plaquette term needs d = m = 2")

    @property
    def R0(self) -> float:
        return _diameter(self.offsets)

    @property
    def exponent(self) -> float:
        """Exponent of the bond energy ``|grad_k X|^exponent``."""
        if self.kind == "composite_with_null_lagrangian":
            return 2.0 if self.base_p is None else float(self.base_p)
        return float(self.p)

    @property
    def growth(self) -> GrowthConstants:
        return GrowthConstants(self.c, self.p, self.C, self.r, self.m, self.R0)

    def base(self) -> "PotentialSpec":
        """The gradient part of a composite spec (identity otherwise)."""
        if self.kind != "composite_with_null_lagrangian":
            return self
        kind = "gaussian_gradient" if self.exponent == 2.0 else "p_power_gradient"
        return replace(self, kind=kind, p=self.exponent, M=0.0, base_p=None)

    def with_M(self, M: float) -> "PotentialSpec":
        return replace(self, kind="composite_with_null_lagrangian", M=float(M), base_p=self.exponent)

    @classmethod
    def from_config(cls, cfg: Mapping) -> "PotentialSpec":
        cfg = dict(cfg)
        kind = cfg.pop("kind", None)
        if kind not in KINDS:
            raise PotentialError(f"unknown potential kind {kind!r}")
        allowed = {"d", "m", "c", "p", "C", "r", "M", "base_p", "patch"}
        extra = set(cfg) - allowed
        if extra:
            raise PotentialError(f"unknown potential parameters {sorted(extra)}")
        return cls(kind=kind, **cfg)

    def to_config(self) -> dict:
        out = {"kind": self.kind, "d": self.d, "m": self.m, "c": self.c, "p": self.p,
               "C": self.C, "r": self.r, "patch": self.patch}
        if self.kind == "composite_with_null_lagrangian":
            out["M"] = self.M
            out["base_p"] = self.exponent
        return out


def _patch_array(spec: PotentialSpec, patch_values) -> dict:
    if isinstance(patch_values, Mapping):
        vals = {tuple(int(c) for c in np.atleast_1d(k)): np.atleast_1d(np.asarray(v, float))
                for k, v in patch_values.items()}
    else:
        arr = np.asarray(patch_values, dtype=float)
        if arr.shape[0] != spec.offsets.shape[0]:
            raise PotentialError("patch values must align with the patch offsets")
        vals = {tuple(o): np.atleast_1d(a) for o, a in zip(spec.offsets, arr)}
    for o in spec.offsets:
        if tuple(o) not in vals:
            raise PotentialError(f"missing patch site {tuple(int(c) for c in o)}")
    return vals


def eval_U(spec: PotentialSpec, patch_values) -> float:
    """Energy of one patch; ``patch_values`` maps offsets to ``R^m`` values."""
    vals = _patch_array(spec, patch_values)
    x0 = vals[(0,) * spec.d]
    q = spec.exponent
    total = 0.0
    for k in range(spec.d):
        e = [0] * spec.d
        e[k] = 1
        g = vals[tuple(e)] - x0
        total += float(np.dot(g, g)) ** (q / 2.0)
    return total


def null_lagrangian_V(square_values) -> float:
    """Signed area of the plaquette image ``(X(i0), X(i1), X(i2), X(i3))``.

    Corners are ``i0=(0,0), i1=(1,0), i2=(0,1), i3=(1,1)``; the second half uses
    the argument order ``(i2 - i3, i1 - i3)`` so that the identity square has
    area 1.
    """
    x = np.asarray(square_values, dtype=float).reshape(4, 2)
    a = x[1] - x[0]
    b = x[2] - x[0]
    c = x[2] - x[3]
    e = x[1] - x[3]
    return 0.5 * (a[0] * b[1] - a[1] * b[0]) + 0.5 * (c[0] * e[1] - c[1] * e[0])


def constant_c(p: float, m: int) -> float:
    """``∫_{R^m} exp(-|xi|^p) dxi = (2 pi^{m/2} / Gamma(m/2)) Gamma(m/p) / p``."""
    if p <= 0 or m < 1:
        raise PotentialError("need p > 0 and m >= 1")
    return 2.0 * math.pi ** (m / 2.0) / math.gamma(m / 2.0) * math.gamma(m / p) / p


def constant_c_quadrature(p: float, m: int) -> float:
    """Radial quadrature of the same integral (independent check)."""
    sphere = 2.0 * math.pi ** (m / 2.0) / math.gamma(m / 2.0)
    val, _ = integrate.quad(lambda t: t ** (m - 1) * math.exp(-(t**p)), 0.0, np.inf,
                            epsabs=1e-13, epsrel=1e-12, limit=200)
    return sphere * val


def ball_volume(m: int, radius: float = 1.0) -> float:
    return math.pi ** (m / 2.0) / math.gamma(m / 2.0 + 1.0) * radius**m


def bound_constants(g: GrowthConstants, L: AffineMap | float, d: int) -> dict:
    """The bracket constants ``B(L)``, ``b`` and the tightness constant ``D``."""
    g.validate()
    normL = L.norm() if isinstance(L, AffineMap) else float(L)
    B = g.C * (1.0 + g.C + (1.0 + g.C * d * normL**g.r) * g.R0**d)
    cpm = constant_c(g.p, g.m)
    b = (g.m / g.p) * math.log(g.c) - math.log(cpm)
    D = 2.0 * (2.0 / g.c) ** (g.m / g.p) * cpm
    return {"B": B, "b": b, "D": D, "c_pm": cpm}


def _grad_energy(X: np.ndarray, d: int, q: float) -> np.ndarray:
    # X has shape (n, 1 + d, m) with rows ordered (0, e_1, ..., e_d)
    g = X[:, 1 : 1 + d, :] - X[:, :1, :]
    return ((g**2).sum(-1) ** (q / 2.0)).sum(-1)


def probe_growth(spec: PotentialSpec, n_samples: int = 10_000, sample_law: str = "student_t3",
                 seed: int = 0) -> dict:
    """Worst observed slack of the lower and upper growth inequalities.

    Patches are drawn i.i.d. from ``sample_law`` (Student-t with 3 degrees of
    freedom by default). Negative slack falsifies the declared constants.
    """
    rng = np.random.default_rng(seed)
    n_a = spec.offsets.shape[0]
    shape = (n_samples, n_a, spec.m)

    def draw():
        if sample_law == "student_t3":
            return rng.standard_t(3, size=shape)
        if sample_law == "normal":
            return rng.standard_normal(shape)
        raise PotentialError(f"unknown sample law {sample_law!r}")

    X, Y, Z = draw(), draw(), draw()
    s = rng.uniform(size=(n_samples, 1, 1))
    order = _forward_rows(spec)
    q = spec.exponent
    UX = _grad_energy(X[:, order], spec.d, q)
    UY = _grad_energy(Y[:, order], spec.d, q)
    W = s * X + (1.0 - s) * Y + Z
    UW = _grad_energy(W[:, order], spec.d, q)
    gX = _grad_energy(X[:, order], spec.d, spec.p)
    a1 = UX - spec.c * gX
    zr = (np.sqrt((Z**2).sum(-1)) ** spec.r).sum(-1)
    a2 = spec.C * (1.0 + UX + UY + zr) - UW
    return {"A1_margin": float(a1.min()), "A2_margin": float(a2.min()), "n_samples": n_samples}


def _forward_rows(spec: PotentialSpec) -> np.ndarray:
    rows = []
    lookup = {tuple(o): k for k, o in enumerate(spec.offsets)}
    for o in patch_offsets(spec.d, "forward"):
        rows.append(lookup[tuple(o)])
    return np.asarray(rows)

"""Single-site Metropolis kernels.

All randomness is drawn by the caller (numpy ``Generator``) and passed in, so
the compiled and the interpreted paths produce bit-identical chains. Setting
``GRADGIBBS_NO_NUMBA=1`` selects the interpreted path.
"""

from __future__ import annotations

import math
import os

import numpy as np

USE_NUMBA = os.environ.get("GRADGIBBS_NO_NUMBA", "").strip().lower() in ("", "0", "false", "no")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if USE_NUMBA:
    def _jit(fn):
        return njit(cache=True, nogil=True)(fn)
else:
    def _jit(fn):
        return fn


def backend() -> str:
    return "numba" if USE_NUMBA else "python"


def _bond_e(sq, c2, cp, p):
    e = c2 * sq
    if cp != 0.0:
        e += cp * sq ** (0.5 * p)
    return e


_bond_e = _jit(_bond_e)


def _plaq_V(x, P, t, s, new0, new1):
    # signed area of plaquette t with site s moved to (new0, new1)
    i0, i1, i2, i3 = P[t, 0], P[t, 1], P[t, 2], P[t, 3]
    a0 = x[i0, 0]; a1 = x[i0, 1]
    b0 = x[i1, 0]; b1 = x[i1, 1]
    c0 = x[i2, 0]; c1 = x[i2, 1]
    e0 = x[i3, 0]; e1 = x[i3, 1]
    if i0 == s:
        a0 = new0; a1 = new1
    elif i1 == s:
        b0 = new0; b1 = new1
    elif i2 == s:
        c0 = new0; c1 = new1
    elif i3 == s:
        e0 = new0; e1 = new1
    u0 = b0 - a0; u1 = b1 - a1
    v0 = c0 - a0; v1 = c1 - a1
    w0 = c0 - e0; w1 = c1 - e1
    z0 = b0 - e0; z1 = b1 - e1
    return 0.5 * (u0 * v1 - u1 * v0) + 0.5 * (w0 * z1 - w1 * z0)


_plaq_V = _jit(_plaq_V)


def lattice_sweeps(x, free, choice, noise, logu, step, thin, rec,
                   adj_ptr, adj_nbr, c2, cp, p,
                   pl_ptr, pl_id, P, w_plaq,
                   ball_c, ball_r,
                   pr_ptr, pr_id, pr_a, pr_b, pr_off, pr_bound,
                   el_ptr, el_idx, el_val, el_y, el_scale, el_thr, el_state,
                   lr_w, lr_z, lr_r, lr_thr, lr_state,
                   acc, tries, etot):
    """Run ``choice.shape[0]`` sweeps of random-scan single-site Metropolis in place.

    ``x`` (n, m) is updated; snapshots are written to ``rec`` every ``thin``
    sweeps and accepted energy changes accumulate in ``etot[0]``. Constraint
    blocks with empty arrays are inactive.
    """
    n_sweeps = choice.shape[0]
    n_steps = choice.shape[1]
    m = x.shape[1]
    new = np.empty(m)
    k_rec = 0
    use_plaq = P.shape[0] > 0 and w_plaq != 0.0
    use_ball = ball_r.shape[0] > 0
    use_pair = pr_a.shape[0] > 0
    use_el = el_ptr.shape[0] > 0
    use_lr = lr_w.shape[0] > 0
    for sw in range(n_sweeps):
        for st in range(n_steps):
            s = free[choice[sw, st]]
            h = step[s]
            for c in range(m):
                new[c] = x[s, c] + h * noise[sw, st, c]
            tries[s] += 1
            # hard constraints first
            if use_ball:
                r2 = 0.0
                for c in range(m):
                    dd = new[c] - ball_c[s, c]
                    r2 += dd * dd
                if r2 >= ball_r[s] * ball_r[s]:
                    continue
            if use_pair:
                bad = False
                for q in range(pr_ptr[s], pr_ptr[s + 1]):
                    t = pr_id[q]
                    a = pr_a[t]
                    b = pr_b[t]
                    r2 = 0.0
                    for c in range(m):
                        xa = new[c] if a == s else x[a, c]
                        xb = new[c] if b == s else x[b, c]
                        dd = xb - xa - pr_off[t, c]
                        r2 += dd * dd
                    if r2 > pr_bound * pr_bound:
                        bad = True
                        break
                if bad:
                    continue
            el_new = 0.0
            if use_el:
                diag = 0.0
                for q in range(el_ptr[s], el_ptr[s + 1]):
                    if el_idx[q] == s:
                        diag = el_val[q]
                dT = 0.0
                for c in range(m):
                    dl = new[c] - x[s, c]
                    dT += 2.0 * dl * el_y[s, c] + diag * dl * dl
                el_new = el_state[0] + el_scale * dT
                if el_new >= el_thr:
                    continue
            lr_new = 0.0
            if use_lr and lr_w[s] != 0.0:
                o2 = 0.0
                n2 = 0.0
                for c in range(m):
                    do = x[s, c] - lr_z[s, c]
                    dn = new[c] - lr_z[s, c]
                    o2 += do * do
                    n2 += dn * dn
                lr_new = lr_state[0] + n2 ** (0.5 * lr_r) - o2 ** (0.5 * lr_r)
                if lr_new >= lr_thr:
                    continue
            # energy difference
            dE = 0.0
            for q in range(adj_ptr[s], adj_ptr[s + 1]):
                j = adj_nbr[q]
                so = 0.0
                sn = 0.0
                for c in range(m):
                    do = x[s, c] - x[j, c]
                    dn = new[c] - x[j, c]
                    so += do * do
                    sn += dn * dn
                dE += _bond_e(sn, c2, cp, p) - _bond_e(so, c2, cp, p)
            if use_plaq:
                for q in range(pl_ptr[s], pl_ptr[s + 1]):
                    t = pl_id[q]
                    v_old = _plaq_V(x, P, t, -1, 0.0, 0.0)
                    v_new = _plaq_V(x, P, t, s, new[0], new[1])
                    dE -= w_plaq * (v_new - v_old)
            if logu[sw, st] < -dE:
                if use_el:
                    for q in range(el_ptr[s], el_ptr[s + 1]):
                        j = el_idx[q]
                        for c in range(m):
                            el_y[j, c] += el_val[q] * (new[c] - x[s, c])
                    el_state[0] = el_new
                if use_lr and lr_w[s] != 0.0:
                    lr_state[0] = lr_new
                for c in range(m):
                    x[s, c] = new[c]
                etot[0] += dE
                acc[s] += 1
        if thin > 0 and (sw + 1) % thin == 0 and k_rec < rec.shape[0]:
            for i in range(x.shape[0]):
                for c in range(m):
                    rec[k_rec, i, c] = x[i, c]
            k_rec += 1
    return k_rec


lattice_sweeps = _jit(lattice_sweeps)


def dense_sweeps(xi, choice, noise, logu, step, thin, rec, S, g,
                 cn_ptr, cn_id, cn_a, cn_b, cn_ctr, cn_rad, acc, tries, etot):
    """Single-site Metropolis for ``E = 1/2 xi^T S xi - h^T xi`` on difference-ball constraints.

    ``xi`` is (n, m) and flattened row-major for ``S``; ``g = S xi - h`` is
    kept current. Constraint ``t`` reads ``|xi_a - xi_b - ctr| < rad`` with
    ``b = -1`` meaning an absolute ball.
    """
    n_sweeps = choice.shape[0]
    n_steps = choice.shape[1]
    n = xi.shape[0]
    m = xi.shape[1]
    dl = np.empty(m)
    k_rec = 0
    for sw in range(n_sweeps):
        for st in range(n_steps):
            a = choice[sw, st]
            h = step[a]
            for c in range(m):
                dl[c] = h * noise[sw, st, c]
            tries[a] += 1
            bad = False
            for q in range(cn_ptr[a], cn_ptr[a + 1]):
                t = cn_id[q]
                ia = cn_a[t]
                ib = cn_b[t]
                r2 = 0.0
                for c in range(m):
                    va = xi[ia, c] + (dl[c] if ia == a else 0.0)
                    vb = 0.0
                    if ib >= 0:
                        vb = xi[ib, c] + (dl[c] if ib == a else 0.0)
                    dd = va - vb - cn_ctr[t, c]
                    r2 += dd * dd
                if r2 >= cn_rad[t] * cn_rad[t]:
                    bad = True
                    break
            if bad:
                continue
            dE = 0.0
            base = a * m
            for c in range(m):
                dE += dl[c] * g[base + c]
                for c2 in range(m):
                    dE += 0.5 * dl[c] * S[base + c, base + c2] * dl[c2]
            if logu[sw, st] < -dE:
                for c in range(m):
                    xi[a, c] += dl[c]
                    col = base + c
                    for j in range(n * m):
                        g[j] += S[j, col] * dl[c]
                etot[0] += dE
                acc[a] += 1
        if thin > 0 and (sw + 1) % thin == 0 and k_rec < rec.shape[0]:
            for i in range(n):
                for c in range(m):
                    rec[k_rec, i, c] = xi[i, c]
            k_rec += 1
    return k_rec


dense_sweeps = _jit(dense_sweeps)


def tilted_sweeps(xi, choice, u1, u2, logu, rad, thin, rec, S, g, acc, tries, etot):
    """Single-site independence Metropolis for ``E = 1/2 xi^T S xi - h^T xi`` on balls ``|xi_a| < rad[a]``.

    The proposal for site ``a`` is the exact law ``exp(f . xi_a)`` on its ball,
    ``f`` the current local field; the diagonal block of ``S`` enters the
    acceptance. For ``m = 2`` the coordinate along ``f`` is drawn from the
    tilted marginal of a segment and the other one uniformly on the chord.
    """
    n_sweeps = choice.shape[0]
    n_steps = choice.shape[1]
    n = xi.shape[0]
    m = xi.shape[1]
    f = np.empty(m)
    new = np.empty(m)
    dl = np.empty(m)
    k_rec = 0
    for sw in range(n_sweeps):
        for st in range(n_steps):
            a = choice[sw, st]
            w = rad[a]
            base = a * m
            tries[a] += 1
            for c in range(m):
                s = -g[base + c]
                for c2 in range(m):
                    s += S[base + c, base + c2] * xi[a, c2]
                f[c] = s
            amp = 0.0
            for c in range(m):
                amp += f[c] * f[c]
            amp = math.sqrt(amp)
            if amp * w < 1e-12:
                t = w * (2.0 * u1[sw, st] - 1.0)
            else:
                t = w + math.log1p((1.0 - u1[sw, st]) * math.expm1(-2.0 * amp * w)) / amp
            if t > w:
                t = w
            if t < -w:
                t = -w
            log_q = 0.0
            if m == 1:
                new[0] = t if (amp * w < 1e-12 or f[0] >= 0.0) else -t
            else:
                if amp * w < 1e-12:
                    n0 = 1.0
                    n1 = 0.0
                else:
                    n0 = f[0] / amp
                    n1 = f[1] / amp
                half = math.sqrt(max(w * w - t * t, 0.0))
                if half <= 0.0:
                    continue
                y = half * (2.0 * u2[sw, st] - 1.0)
                new[0] = t * n0 - y * n1
                new[1] = t * n1 + y * n0
                t_old = xi[a, 0] * n0 + xi[a, 1] * n1
                half_old = math.sqrt(max(w * w - t_old * t_old, 0.0))
                log_q = math.log(half / half_old)
            # diagonal quadratic correction
            q_new = 0.0
            q_old = 0.0
            for c in range(m):
                for c2 in range(m):
                    q_new += new[c] * S[base + c, base + c2] * new[c2]
                    q_old += xi[a, c] * S[base + c, base + c2] * xi[a, c2]
            if logu[sw, st] < -0.5 * (q_new - q_old) + log_q:
                dE = 0.0
                for c in range(m):
                    dl[c] = new[c] - xi[a, c]
                    dE += dl[c] * g[base + c]
                for c in range(m):
                    for c2 in range(m):
                        dE += 0.5 * dl[c] * S[base + c, base + c2] * dl[c2]
                for c in range(m):
                    xi[a, c] = new[c]
                    col = base + c
                    for j in range(n * m):
                        g[j] += S[j, col] * dl[c]
                etot[0] += dE
                acc[a] += 1
        if thin > 0 and (sw + 1) % thin == 0 and k_rec < rec.shape[0]:
            for i in range(n):
                for c in range(m):
                    rec[k_rec, i, c] = xi[i, c]
            k_rec += 1
    return k_rec


tilted_sweeps = _jit(tilted_sweeps)


def interpreted(fn):
    """The undecorated Python function behind a kernel."""
    return getattr(fn, "py_func", fn)

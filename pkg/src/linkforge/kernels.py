"""Compiled batch stepping for RobotPhysics.

The kernel below runs the same arithmetic as ``dynamics.constrained_acceleration``
plus the actuator drive, one environment at a time. Constraint rows are split
into independent blocks (rows that share no coordinate never couple through a
diagonal mass matrix), so each block is solved as its own small system.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .dynamics import LinearConstraint, PlanarLoopConstraint, PolynomialConstraint


class KernelLayout:
    """Flat arrays describing drive map and constraint rows for the kernel."""

    def __init__(self, phys):
        n = phys.n
        S = phys.S
        nz = np.nonzero(S)
        self.s_act = nz[0].astype(np.int64)
        self.s_col = nz[1].astype(np.int64)
        self.s_val = S[nz].astype(np.float64)
        self.a0 = phys.a0.astype(np.float64)
        self.q0 = phys.q0.astype(np.float64)

        # per-row entries: kind 0 linear, 1 cos term, 2 sin term, 3 poly
        rows = []  # list of lists of (kind, col, coef, off)
        consts, polys, params = [], [], []
        for c in phys.cset.constraints:
            p = c.impedance
            lo, hi = p.transition
            if isinstance(c, LinearConstraint):
                for i in range(c.rows):
                    rows.append([(0, j, c.C[i, j], 0.0) for j in np.nonzero(c.C[i])[0]])
                    consts.append(-c.offset[i])
                    polys.append(None)
                    params.append((p.k_v, p.b_v, p.d_min, p.d_max, lo, hi))
            elif isinstance(c, PlanarLoopConstraint):
                for axis in (1, 2):
                    rows.append([(axis, t.index, t.sign * t.length, t.offset) for t in c.terms])
                    consts.append(c.constant[axis - 1])
                    polys.append(None)
                    params.append((p.k_v, p.b_v, p.d_min, p.d_max, lo, hi))
            elif isinstance(c, PolynomialConstraint):
                rows.append([(3, c.i_in, 0.0, 0.0), (0, c.i_out, 1.0, 0.0)])
                consts.append(0.0)
                polys.append(c)
                params.append((p.k_v, p.b_v, p.d_min, p.d_max, lo, hi))
            else:
                raise TypeError(type(c))
        m = len(rows)
        self.m = m

        # blocks of rows coupled through shared coordinates
        parent = list(range(m))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        owner = {}
        for i, ents in enumerate(rows):
            for e in ents:
                if e[1] in owner:
                    parent[find(i)] = find(owner[e[1]])
                else:
                    owner[e[1]] = i
        groups = {}
        for i in range(m):
            groups.setdefault(find(i), []).append(i)
        order = [i for g in sorted(groups.values()) for i in g]
        self.row_order = np.array(order, dtype=np.int64)
        starts = [0]
        for g in sorted(groups.values()):
            starts.append(starts[-1] + len(g))
        self.block_start = np.array(starts, dtype=np.int64)

        e_row, e_kind, e_col, e_coef, e_off = [], [], [], [], []
        row_ptr = [0]
        for i in order:
            for kind, col, coef, off in rows[i]:
                e_kind.append(kind)
                e_col.append(col)
                e_coef.append(coef)
                e_off.append(off)
            row_ptr.append(len(e_kind))
        self.row_ptr = np.array(row_ptr, dtype=np.int64)
        self.e_kind = np.array(e_kind, dtype=np.int64)
        self.e_col = np.array(e_col, dtype=np.int64)
        self.e_coef = np.array(e_coef, dtype=np.float64)
        self.e_off = np.array(e_off, dtype=np.float64)
        self.const = np.array([consts[i] for i in order], dtype=np.float64)
        prm = np.array([params[i] for i in order], dtype=np.float64).reshape(m, 6)
        self.params = np.ascontiguousarray(prm)

        deg = max([len(pc.a) for pc in polys if pc is not None], default=1)
        self.poly_a = np.zeros((m, deg))
        self.poly_deg = np.zeros(m, dtype=np.int64)
        self.poly_x0 = np.zeros(m)
        self.poly_y0 = np.zeros(m)
        for k, i in enumerate(order):
            pc = polys[i]
            if pc is not None:
                self.poly_a[k, :len(pc.a)] = pc.a
                self.poly_deg[k] = len(pc.a)
                self.poly_x0[k] = pc.x0
                self.poly_y0[k] = pc.y0
        # unique trig angles shared by the cos and sin rows of a loop
        key_to_term = {}
        e_term = []
        for kind, col, off in zip(self.e_kind, self.e_col, self.e_off):
            if kind in (1, 2):
                e_term.append(key_to_term.setdefault((int(col), float(off)), len(key_to_term)))
            else:
                e_term.append(-1)
        self.e_term = np.array(e_term, dtype=np.int64)
        terms = sorted(key_to_term.items(), key=lambda kv: kv[1])
        self.t_col = np.array([k[0] for k, _ in terms], dtype=np.int64)
        self.t_off = np.array([k[1] for k, _ in terms], dtype=np.float64)

        # entry pairs contributing to A = J M^-1 J^T (lower triangle)
        pi, pj, pe, pg = [], [], [], []
        for blk in range(len(starts) - 1):
            for i in range(starts[blk], starts[blk + 1]):
                for j in range(starts[blk], i + 1):
                    for e in range(row_ptr[i], row_ptr[i + 1]):
                        for g in range(row_ptr[j], row_ptr[j + 1]):
                            if e_col[e] == e_col[g]:
                                pi.append(i)
                                pj.append(j)
                                pe.append(e)
                                pg.append(g)
        self.p_i = np.array(pi, dtype=np.int64)
        self.p_j = np.array(pj, dtype=np.int64)
        self.p_e = np.array(pe, dtype=np.int64)
        self.p_g = np.array(pg, dtype=np.int64)
        self.n = n
        self.row_names = [phys.cset.row_names[i] for i in order]

    def args(self):
        return (self.s_act, self.s_col, self.s_val, self.a0, self.q0, self.row_ptr, self.e_kind,
                self.e_col, self.e_coef, self.e_term, self.t_col, self.t_off, self.const,
                self.params, self.block_start, self.p_i, self.p_j, self.p_e, self.p_g,
                self.poly_a, self.poly_deg, self.poly_x0, self.poly_y0)


# Cody-Waite split of pi/2 and Taylor coefficients; |r| <= pi/4 keeps the
# truncation error below 1e-19, so results agree with libm to ~1 ulp.
_TWO_OVER_PI = 0.63661977236758134308
_PIO2_1 = 1.57079632673412561417e+00
_PIO2_2 = 6.07710050630396597660e-11
_PIO2_3 = 2.02226624871116645580e-21


@njit(inline="always")
def _sincos(x):
    k = np.floor(x * _TWO_OVER_PI + 0.5)
    r = ((x - k * _PIO2_1) - k * _PIO2_2) - k * _PIO2_3
    z = r * r
    s = r + r * z * (-1.0 / 6 + z * (1.0 / 120 + z * (-1.0 / 5040 + z * (
        1.0 / 362880 + z * (-1.0 / 39916800 + z * (1.0 / 6227020800 + z * (
            -1.0 / 1307674368000 + z * (1.0 / 355687428096000))))))))
    c = 1.0 - 0.5 * z + z * z * (1.0 / 24 + z * (-1.0 / 720 + z * (1.0 / 40320 + z * (
        -1.0 / 3628800 + z * (1.0 / 479001600 + z * (-1.0 / 87178291200 + z * (
            1.0 / 20922789888000 + z * (-1.0 / 6402373705728000))))))))
    quad = np.int64(k) & 3
    sin_v = c if quad & 1 else s
    cos_v = s if quad & 1 else c
    if quad == 1 or quad == 2:
        cos_v = -cos_v
    if quad >= 2:
        sin_v = -sin_v
    return sin_v, cos_v


@njit(cache=True)
def sincos(x):
    """Elementwise (sin x, cos x) with the kernel's own range reduction."""
    flat = x.ravel()
    s = np.empty_like(flat)
    c = np.empty_like(flat)
    for i in range(flat.shape[0]):
        s[i], c[i] = _sincos(flat[i])
    return s.reshape(x.shape), c.reshape(x.shape)


@njit(cache=True)
def _step_kernel(q, qd, target, kp, kd, tau_lim, minv, dt, n_sub, tau_out,
                 s_act, s_col, s_val, a0, q0, row_ptr, e_kind, e_col, e_coef, e_term,
                 t_col, t_off, const, params, block_start, p_i, p_j, p_e, p_g,
                 poly_a, poly_deg, poly_x0, poly_y0):
    """Arrays are coordinate-major: q, qd, minv are (n, B); target, kp, tau are (na, B)."""
    n, B = q.shape
    na = target.shape[0]
    m = const.shape[0]
    ne = e_kind.shape[0]
    nt = t_col.shape[0]
    ns = s_act.shape[0]
    npair = p_i.shape[0]
    nb = block_start.shape[0] - 1
    af = np.empty((n, B))
    qa = np.empty((na, B))
    va = np.empty((na, B))
    tc = np.empty((nt, B))
    ts = np.empty((nt, B))
    jv = np.empty((ne, B))
    jb = np.empty((ne, B))
    r = np.empty((m, B))
    rhs = np.empty((m, B))
    lam = np.empty((m, B))
    A = np.empty((m, m, B))
    vrow = np.empty(B)
    ac0 = np.empty(B)
    for _ in range(n_sub):
        # actuator drive
        for a in range(na):
            qa[a, :] = a0[a]
            va[a, :] = 0.0
        for e in range(ns):
            c = s_col[e]
            a = s_act[e]
            w = s_val[e]
            off = q0[c]
            for b in range(B):
                qa[a, b] += w * (q[c, b] - off)
                va[a, b] += w * qd[c, b]
        for a in range(na):
            for b in range(B):
                t = kp[a, b] * (target[a, b] - qa[a, b]) - kd * va[a, b]
                tau_out[a, b] = min(max(t, -tau_lim), tau_lim)
        af[:, :] = 0.0
        for e in range(ns):
            c = s_col[e]
            a = s_act[e]
            w = s_val[e]
            for b in range(B):
                af[c, b] += w * tau_out[a, b]
        for c in range(n):
            for b in range(B):
                af[c, b] *= minv[c, b]

        if m > 0:
            for k in range(nt):
                c = t_col[k]
                off = t_off[k]
                for b in range(B):
                    ts[k, b], tc[k, b] = _sincos(q[c, b] + off)
            for i in range(m):
                r[i, :] = const[i]
                for e in range(row_ptr[i], row_ptr[i + 1]):
                    c = e_col[e]
                    kind = e_kind[e]
                    w = e_coef[e]
                    if kind == 0:
                        for b in range(B):
                            r[i, b] += w * q[c, b]
                            jv[e, b] = w
                            jb[e, b] = 0.0
                    elif kind == 1:
                        k = e_term[e]
                        for b in range(B):
                            r[i, b] += w * tc[k, b]
                            jv[e, b] = -w * ts[k, b]
                            jb[e, b] = -w * tc[k, b] * qd[c, b] * qd[c, b]
                    elif kind == 2:
                        k = e_term[e]
                        for b in range(B):
                            r[i, b] += w * ts[k, b]
                            jv[e, b] = w * tc[k, b]
                            jb[e, b] = -w * ts[k, b] * qd[c, b] * qd[c, b]
                    else:
                        deg = poly_deg[i]
                        x0 = poly_x0[i]
                        y0 = poly_y0[i]
                        for b in range(B):
                            dx = q[c, b] - x0
                            p0 = 0.0
                            p1 = 0.0
                            p2 = 0.0
                            for k in range(deg - 1, -1, -1):
                                p2 = p2 * dx + 2.0 * p1
                                p1 = p1 * dx + p0
                                p0 = p0 * dx + poly_a[i, k]
                            r[i, b] -= y0 + p0
                            jv[e, b] = -p1
                            jb[e, b] = -p2 * qd[c, b] * qd[c, b]
                # row velocity, unconstrained row acceleration and impedance
                k_v = params[i, 0]
                b_v = params[i, 1]
                dmin = params[i, 2]
                drange = params[i, 3] - dmin
                lo = params[i, 4]
                span = params[i, 5] - lo
                for b in range(B):
                    vrow[b] = 0.0
                    ac0[b] = 0.0
                for e in range(row_ptr[i], row_ptr[i + 1]):
                    c = e_col[e]
                    for b in range(B):
                        vrow[b] += jv[e, b] * qd[c, b]
                        ac0[b] += jv[e, b] * af[c, b] + jb[e, b]
                for b in range(B):
                    s = min(max((abs(r[i, b]) - lo) / span, 0.0), 1.0)
                    D = dmin + drange * min(s * s * s * (10.0 + s * (-15.0 + 6.0 * s)), 1.0)
                    rhs[i, b] = -D * (ac0[b] + b_v * vrow[b] + k_v * r[i, b])

            A[:, :, :] = 0.0
            for p in range(npair):
                e = p_e[p]
                g = p_g[p]
                c = e_col[e]
                i = p_i[p]
                j = p_j[p]
                for b in range(B):
                    A[i, j, b] += jv[e, b] * jv[g, b] * minv[c, b]

            for blk in range(nb):
                i0 = block_start[blk]
                i1 = block_start[blk + 1]
                # Cholesky factor (lower, in place) then two triangular solves
                for i in range(i0, i1):
                    for j in range(i0, i):
                        for k in range(i0, j):
                            for b in range(B):
                                A[i, j, b] -= A[i, k, b] * A[j, k, b]
                        for b in range(B):
                            A[i, j, b] /= A[j, j, b]
                    for k in range(i0, i):
                        for b in range(B):
                            A[i, i, b] -= A[i, k, b] * A[i, k, b]
                    for b in range(B):
                        A[i, i, b] = np.sqrt(A[i, i, b])
                for i in range(i0, i1):
                    for b in range(B):
                        lam[i, b] = rhs[i, b]
                    for k in range(i0, i):
                        for b in range(B):
                            lam[i, b] -= A[i, k, b] * lam[k, b]
                    for b in range(B):
                        lam[i, b] /= A[i, i, b]
                for i in range(i1 - 1, i0 - 1, -1):
                    for k in range(i + 1, i1):
                        for b in range(B):
                            lam[i, b] -= A[k, i, b] * lam[k, b]
                    for b in range(B):
                        lam[i, b] /= A[i, i, b]
            for i in range(m):
                for e in range(row_ptr[i], row_ptr[i + 1]):
                    c = e_col[e]
                    for b in range(B):
                        af[c, b] += minv[c, b] * jv[e, b] * lam[i, b]

        for c in range(n):
            for b in range(B):
                qd[c, b] += dt * af[c, b]
                q[c, b] += dt * qd[c, b]

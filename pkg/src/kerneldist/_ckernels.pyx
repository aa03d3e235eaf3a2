# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: Gaussian row sums, motion batches and the split tree.

Every function here has a NumPy twin in ``_pykernels`` with identical
semantics; ``_backend`` picks one at import time.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange, threadid
from libc.math cimport exp, sqrt, fabs, cos, sin, fmod
from libc.stdlib cimport malloc, realloc, free

cnp.import_array()

cdef int _nthreads = 1


def set_num_threads(int n):
    global _nthreads
    _nthreads = n if n > 0 else 1


def get_num_threads():
    return _nthreads


cdef inline double _row_sum(const double* x, const double* Y, const double* w,
                            Py_ssize_t j0, Py_ssize_t ny, Py_ssize_t d,
                            double inv_s2) noexcept nogil:
    # Neumaier-compensated sum of w_j exp(-|x - y_j|^2 inv_s2), j in [j0, ny)
    cdef Py_ssize_t j, k
    cdef double s = 0.0, c = 0.0, t, v, diff, r2
    for j in range(j0, ny):
        r2 = 0.0
        for k in range(d):
            diff = x[k] - Y[j * d + k]
            r2 = r2 + diff * diff
        v = w[j] * exp(-r2 * inv_s2)
        t = s + v
        if fabs(s) >= fabs(v):
            c = c + ((s - t) + v)
        else:
            c = c + ((v - t) + s)
        s = t
    return s + c


def row_sums(const double[:, ::1] X, const double[:, ::1] Y, const double[::1] wy,
             double inv_s2):
    """out[i] = sum_j wy[j] exp(-|X[i] - Y[j]|^2 * inv_s2)."""
    cdef Py_ssize_t nx = X.shape[0], ny = Y.shape[0], d = X.shape[1], i
    out = np.zeros(nx, dtype=np.float64)
    if nx == 0 or ny == 0:
        return out
    cdef double[::1] o = out
    cdef const double* xp = &X[0, 0]
    cdef const double* yp = &Y[0, 0]
    cdef const double* wp = &wy[0]
    for i in prange(nx, nogil=True, num_threads=_nthreads, schedule="static"):
        o[i] = _row_sum(xp + i * d, yp, wp, 0, ny, d, inv_s2)
    return out


def upper_row_sums(const double[:, ::1] X, const double[::1] w, double inv_s2):
    """out[i] = sum_{j > i} w[j] exp(-|X[i] - X[j]|^2 * inv_s2)."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], i
    out = np.zeros(n, dtype=np.float64)
    if n < 2:
        return out
    cdef double[::1] o = out
    cdef const double* xp = &X[0, 0]
    cdef const double* wp = &w[0]
    for i in prange(n, nogil=True, num_threads=_nthreads, schedule="dynamic", chunksize=64):
        o[i] = _row_sum(xp + i * d, xp, wp, i + 1, n, d, inv_s2)
    return out


def motion_batch(const double[:, ::1] P, const double[::1] wp,
                 const double[:, ::1] Q, const double[::1] wq,
                 const double[:, :, ::1] R, const double[:, ::1] T, double inv_s2):
    """out[c] = sum_{p,q} wp wq exp(-|p - (R[c] q + T[c])|^2 * inv_s2)."""
    cdef Py_ssize_t m = R.shape[0], n_p = P.shape[0], n_q = Q.shape[0], d = P.shape[1]
    cdef Py_ssize_t c, i, j, k, tid
    out = np.zeros(m, dtype=np.float64)
    if m == 0 or n_p == 0 or n_q == 0:
        return out
    cdef double[::1] o = out
    cdef int nt = _nthreads
    cdef double* buf = <double*> malloc(nt * n_q * d * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double* y
    cdef double acc, comp, t, v
    try:
        for c in prange(m, nogil=True, num_threads=nt, schedule="static"):
            tid = threadid()
            y = buf + tid * n_q * d
            for j in range(n_q):
                for i in range(d):
                    acc = T[c, i]
                    for k in range(d):
                        acc = acc + R[c, i, k] * Q[j, k]
                    y[j * d + i] = acc
            acc = 0.0
            comp = 0.0
            for i in range(n_p):
                v = wp[i] * _row_sum(&P[i, 0], y, &wq[0], 0, n_q, d, inv_s2)
                t = acc + v
                if fabs(acc) >= fabs(v):
                    comp = comp + ((acc - t) + v)
                else:
                    comp = comp + ((v - t) + acc)
                acc = t
            o[c] = acc + comp
    finally:
        free(buf)
    return out


def build_tree(const double[:, ::1] X):
    """Midpoint split tree over distinct points, nodes numbered in preorder.

    Returns:
        (perm, start, end, left, right, lo, hi); node u owns
        perm[start[u]:end[u]]; leaves have left = right = -1.
    """
    cdef Py_ssize_t m = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t cap = 2 * m - 1 if m > 0 else 0
    perm_a = np.arange(m, dtype=np.intp)
    start_a = np.empty(cap, dtype=np.intp)
    end_a = np.empty(cap, dtype=np.intp)
    left_a = np.full(cap, -1, dtype=np.intp)
    right_a = np.full(cap, -1, dtype=np.intp)
    lo_a = np.empty((cap, d), dtype=np.float64)
    hi_a = np.empty((cap, d), dtype=np.float64)
    if m == 0:
        return perm_a, start_a, end_a, left_a, right_a, lo_a, hi_a
    cdef Py_ssize_t[::1] perm = perm_a, start = start_a, end = end_a
    cdef Py_ssize_t[::1] left = left_a, right = right_a
    cdef double[:, ::1] lo = lo_a, hi = hi_a
    cdef Py_ssize_t[::1] tmp = np.empty(m, dtype=np.intp)
    cdef Py_ssize_t[::1] s_start = np.empty(cap + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] s_end = np.empty(cap + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] s_par = np.empty(cap + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] s_isl = np.empty(cap + 1, dtype=np.intp)
    cdef Py_ssize_t sp = 0, nn = 0, u, s, e, par, i, k, axis, nl, nr, p
    cdef double ext, best, mid, x
    with nogil:
        s_start[0] = 0
        s_end[0] = m
        s_par[0] = -1
        s_isl[0] = 0
        sp = 1
        while sp > 0:
            sp -= 1
            s = s_start[sp]
            e = s_end[sp]
            par = s_par[sp]
            u = nn
            nn += 1
            if par >= 0:
                if s_isl[sp]:
                    left[par] = u
                else:
                    right[par] = u
            start[u] = s
            end[u] = e
            p = perm[s]
            for k in range(d):
                lo[u, k] = X[p, k]
                hi[u, k] = X[p, k]
            for i in range(s + 1, e):
                p = perm[i]
                for k in range(d):
                    x = X[p, k]
                    if x < lo[u, k]:
                        lo[u, k] = x
                    if x > hi[u, k]:
                        hi[u, k] = x
            if e - s == 1:
                continue
            axis = 0
            best = hi[u, 0] - lo[u, 0]
            for k in range(1, d):
                ext = hi[u, k] - lo[u, k]
                if ext > best:
                    best = ext
                    axis = k
            if best <= 0.0:
                continue
            mid = 0.5 * (lo[u, axis] + hi[u, axis])
            nl = 0
            for i in range(s, e):
                if X[perm[i], axis] <= mid:
                    nl += 1
            if nl == e - s:
                mid = hi[u, axis]
                nl = 0
                for i in range(s, e):
                    if X[perm[i], axis] < mid:
                        nl += 1
                # strict comparison from here on
                k = 0
                nr = nl
                for i in range(s, e):
                    p = perm[i]
                    if X[p, axis] < mid:
                        tmp[k] = p
                        k += 1
                    else:
                        tmp[nr] = p
                        nr += 1
            else:
                k = 0
                nr = nl
                for i in range(s, e):
                    p = perm[i]
                    if X[p, axis] <= mid:
                        tmp[k] = p
                        k += 1
                    else:
                        tmp[nr] = p
                        nr += 1
            for i in range(e - s):
                perm[s + i] = tmp[i]
            s_start[sp] = s + nl
            s_end[sp] = e
            s_par[sp] = u
            s_isl[sp] = 0
            sp += 1
            s_start[sp] = s
            s_end[sp] = s + nl
            s_par[sp] = u
            s_isl[sp] = 1
            sp += 1
    return (perm_a, start_a[:nn].copy(), end_a[:nn].copy(), left_a[:nn].copy(),
            right_a[:nn].copy(), lo_a[:nn].copy(), hi_a[:nn].copy())


cdef inline double _box_dist(const double[:, ::1] lo, const double[:, ::1] hi,
                             Py_ssize_t v, Py_ssize_t w, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t k
    cdef double g, s = 0.0
    for k in range(d):
        g = lo[w, k] - hi[v, k]
        if lo[v, k] - hi[w, k] > g:
            g = lo[v, k] - hi[w, k]
        if g > 0.0:
            s += g * g
    return sqrt(s)


def wspd_pairs(const double[:, ::1] lo, const double[:, ::1] hi,
               const Py_ssize_t[::1] left, const Py_ssize_t[::1] right,
               double alpha, double prune):
    """Enumerate alpha-separated node pairs of a split tree.

    Args:
        lo, hi: node bounding boxes.
        left, right: child indices (-1 for leaves).
        alpha: separation ratio; a pair is accepted when the larger box
            diagonal is at most alpha times the box-to-box distance.
        prune: drop pairs whose box distance exceeds this; <= 0 disables.

    Returns:
        (a, b, n_pruned) with node index arrays a, b.
    """
    cdef Py_ssize_t nn = lo.shape[0], d = lo.shape[1], u, v, w, k
    diag_a = np.zeros(nn, dtype=np.float64)
    cdef double[::1] diag = diag_a
    cdef double g, bd, dv, dw
    for u in range(nn):
        g = 0.0
        for k in range(d):
            g += (hi[u, k] - lo[u, k]) * (hi[u, k] - lo[u, k])
        diag[u] = sqrt(g)
    cdef Py_ssize_t cap = 1024, sp = 0, scap = 1024, n_out = 0, n_pruned = 0
    cdef Py_ssize_t* out = <Py_ssize_t*> malloc(2 * cap * sizeof(Py_ssize_t))
    cdef Py_ssize_t* st = <Py_ssize_t*> malloc(2 * scap * sizeof(Py_ssize_t))
    cdef Py_ssize_t* tmp
    if out == NULL or st == NULL:
        free(out)
        free(st)
        raise MemoryError()
    cdef bint oom = False
    with nogil:
        for u in range(nn):
            if left[u] < 0:
                continue
            st[0] = left[u]
            st[1] = right[u]
            sp = 1
            while sp > 0:
                sp -= 1
                v = st[2 * sp]
                w = st[2 * sp + 1]
                bd = _box_dist(lo, hi, v, w, d)
                if prune > 0.0 and bd > prune:
                    n_pruned += 1
                    continue
                dv = diag[v]
                dw = diag[w]
                if (dv if dv > dw else dw) <= alpha * bd:
                    if n_out == cap:
                        tmp = <Py_ssize_t*> realloc(out, 4 * cap * sizeof(Py_ssize_t))
                        if tmp == NULL:
                            oom = True
                            break
                        out = tmp
                        cap *= 2
                    out[2 * n_out] = v
                    out[2 * n_out + 1] = w
                    n_out += 1
                    continue
                if sp + 2 > scap:
                    tmp = <Py_ssize_t*> realloc(st, 4 * scap * sizeof(Py_ssize_t))
                    if tmp == NULL:
                        oom = True
                        break
                    st = tmp
                    scap *= 2
                if dv >= dw:
                    st[2 * sp] = right[v]
                    st[2 * sp + 1] = w
                    st[2 * sp + 2] = left[v]
                    st[2 * sp + 3] = w
                else:
                    st[2 * sp] = v
                    st[2 * sp + 1] = right[w]
                    st[2 * sp + 2] = v
                    st[2 * sp + 3] = left[w]
                sp += 2
            if oom:
                break
    if oom:
        free(out)
        free(st)
        raise MemoryError("wspd pair list")
    res = np.empty((n_out, 2), dtype=np.intp)
    cdef Py_ssize_t[:, ::1] r = res
    for u in range(n_out):
        r[u, 0] = out[2 * u]
        r[u, 1] = out[2 * u + 1]
    free(out)
    free(st)
    return res[:, 0].copy(), res[:, 1].copy(), n_pruned


def wspd_sums(const double[:, ::1] lo, const double[:, ::1] hi,
              const Py_ssize_t[::1] left, const Py_ssize_t[::1] right,
              double alpha, double prune, const double[:, ::1] rep,
              const double[::1] mp, const double[::1] mq, double inv_s2):
    """Kernel sums over the alpha-separated pairs without storing them.

    For each accepted pair (A, B) with K = K(rep A, rep B) this adds
    K A_p B_p, K A_q B_q, K (A_p B_q + A_q B_p) and K (A_p - A_q)(B_p - B_q).
    Pairs are visited in the same order as ``wspd_pairs``.

    Returns:
        (s_pp, s_qq, s_pq, s_dd, n_pairs, n_pruned).
    """
    cdef Py_ssize_t nn = lo.shape[0], d = lo.shape[1], u, v, w, k
    diag_a = np.zeros(nn, dtype=np.float64)
    cdef double[::1] diag = diag_a
    cdef double g, bd, dv, dw, kv, r2
    cdef double s_pp = 0.0, s_qq = 0.0, s_pq = 0.0, s_dd = 0.0
    for u in range(nn):
        g = 0.0
        for k in range(d):
            g += (hi[u, k] - lo[u, k]) * (hi[u, k] - lo[u, k])
        diag[u] = sqrt(g)
    cdef Py_ssize_t sp = 0, scap = 1024, n_out = 0, n_pruned = 0
    cdef Py_ssize_t* st = <Py_ssize_t*> malloc(2 * scap * sizeof(Py_ssize_t))
    cdef Py_ssize_t* tmp
    if st == NULL:
        raise MemoryError()
    cdef bint oom = False
    with nogil:
        for u in range(nn):
            if left[u] < 0:
                continue
            st[0] = left[u]
            st[1] = right[u]
            sp = 1
            while sp > 0:
                sp -= 1
                v = st[2 * sp]
                w = st[2 * sp + 1]
                bd = _box_dist(lo, hi, v, w, d)
                if prune > 0.0 and bd > prune:
                    n_pruned += 1
                    continue
                dv = diag[v]
                dw = diag[w]
                if (dv if dv > dw else dw) <= alpha * bd:
                    r2 = 0.0
                    for k in range(d):
                        r2 += (rep[v, k] - rep[w, k]) * (rep[v, k] - rep[w, k])
                    kv = exp(-r2 * inv_s2)
                    s_pp += kv * mp[v] * mp[w]
                    s_qq += kv * mq[v] * mq[w]
                    s_pq += kv * (mp[v] * mq[w] + mq[v] * mp[w])
                    s_dd += kv * (mp[v] - mq[v]) * (mp[w] - mq[w])
                    n_out += 1
                    continue
                if sp + 2 > scap:
                    tmp = <Py_ssize_t*> realloc(st, 4 * scap * sizeof(Py_ssize_t))
                    if tmp == NULL:
                        oom = True
                        break
                    st = tmp
                    scap *= 2
                if dv >= dw:
                    st[2 * sp] = right[v]
                    st[2 * sp + 1] = w
                    st[2 * sp + 2] = left[v]
                    st[2 * sp + 3] = w
                else:
                    st[2 * sp] = v
                    st[2 * sp + 1] = right[w]
                    st[2 * sp + 2] = v
                    st[2 * sp + 3] = left[w]
                sp += 2
            if oom:
                break
    free(st)
    if oom:
        raise MemoryError("wspd traversal stack")
    return s_pp, s_qq, s_pq, s_dd, n_out, n_pruned


# ---------------------------------------------------------------- alignment bounds

cdef double _TWO_PI = 6.283185307179586


cdef inline double _arc_dist(double da, double rp, double rq, double x, double length) noexcept nogil:
    # distance from a point to an arc of a circle in cylindrical coordinates
    cdef double g, a, b
    if length >= _TWO_PI:
        return sqrt(da * da + (rp - rq) * (rp - rq))
    if x <= length:
        return sqrt(da * da + (rp - rq) * (rp - rq))
    a = x - length
    b = _TWO_PI - x
    g = a if a < b else b
    a = da * da + rp * rp + rq * rq - 2.0 * rp * rq * cos(g)
    return sqrt(a) if a > 0.0 else 0.0


def arc_bounds(const double[:, ::1] ap, const double[:, ::1] rp, const double[:, ::1] psi,
               const double[:, ::1] hq, const double[:, ::1] rq, const double[:, ::1] phiq,
               const double[:, ::1] slack, const double[::1] theta0, const double[::1] length,
               const double[::1] rt, const double[::1] wp, const double[::1] wq, double inv_s2):
    """Upper bounds sum_pq wp wq exp(-max(dist - slack - rt, 0)^2 inv_s2).

    ``dist`` is the distance from p (axial ap, radius rp, angle psi) to the
    arc swept by q (axial hq, radius rq, angle phiq) under spins in
    [theta0, theta0 + length]; length >= 2 pi is the full circle.
    """
    cdef Py_ssize_t B = ap.shape[0], n_p = ap.shape[1], n_q = hq.shape[1], b, i, j
    out = np.zeros(B, dtype=np.float64)
    cdef double[::1] o = out
    cdef double acc, row, x, e
    for b in prange(B, nogil=True, num_threads=_nthreads, schedule="static"):
        acc = 0.0
        for i in range(n_p):
            row = 0.0
            for j in range(n_q):
                x = fmod(psi[b, i] - phiq[b, j] - theta0[b], _TWO_PI)
                if x < 0.0:
                    x = x + _TWO_PI
                e = _arc_dist(ap[b, i] - hq[b, j], rp[b, i], rq[b, j], x, length[b]) \
                    - slack[b, j] - rt[b]
                if e < 0.0:
                    e = 0.0
                row = row + wq[j] * exp(-e * e * inv_s2)
            acc = acc + wp[i] * row
        o[b] = acc
    return out


def translation_bounds(const double[:, ::1] S, const double[::1] sw, const double[:, ::1] lo,
                       const double[:, ::1] hi, double reach, double inv_s2):
    """Upper bounds over translation boxes; -inf when no seed is within reach."""
    cdef Py_ssize_t B = lo.shape[0], m = S.shape[0], d = S.shape[1], b, s, k
    out = np.zeros(B, dtype=np.float64)
    cdef double[::1] o = out
    cdef double acc, rt, gap2, c2, diff, g, e, best
    for b in prange(B, nogil=True, num_threads=_nthreads, schedule="static"):
        rt = 0.0
        for k in range(d):
            rt = rt + (hi[b, k] - lo[b, k]) * (hi[b, k] - lo[b, k])
        rt = 0.5 * sqrt(rt)
        acc = 0.0
        best = 1e300
        for s in range(m):
            gap2 = 0.0
            c2 = 0.0
            for k in range(d):
                diff = S[s, k] - 0.5 * (lo[b, k] + hi[b, k])
                c2 = c2 + diff * diff
                g = lo[b, k] - S[s, k]
                if S[s, k] - hi[b, k] > g:
                    g = S[s, k] - hi[b, k]
                if g > 0.0:
                    gap2 = gap2 + g * g
            if gap2 < best:
                best = gap2
            e = sqrt(c2) - rt
            if e < 0.0:
                e = 0.0
            acc = acc + sw[s] * exp(-e * e * inv_s2)
        if sqrt(best) <= reach:
            o[b] = acc
        else:
            o[b] = -1e300 * 1e300
    return out


def spin_bounds(const double[:, ::1] ap, const double[:, ::1] rp, const double[:, ::1] psi,
                const double[:, ::1] hq, const double[:, ::1] rq, const double[:, ::1] phiq,
                const double[:, ::1] slack, const Py_ssize_t[::1] nspin, const double[::1] hstep,
                const double[::1] wp, const double[::1] wq, double inv_s2):
    """max over spins j h of sum_pq wp wq exp(-max(dist - slack, 0)^2 inv_s2).

    ``dist`` is the distance from p to q's position after spinning q by
    j * hstep about the axis, in the same cylindrical coordinates as
    ``arc_bounds``.
    """
    cdef Py_ssize_t B = ap.shape[0], n_p = ap.shape[1], n_q = hq.shape[1], b, i, j, s, k, t
    cdef int nt = _nthreads
    out = np.full(B, -np.inf, dtype=np.float64)
    # per-thread scratch: constant part and the cos / sin coefficients of d2
    work = np.empty((nt, 3, n_p * n_q), dtype=np.float64)
    cdef double[::1] o = out
    cdef double[:, :, ::1] W = work
    cdef double acc, row, e, da, d2, a, cs, sn, best, c2
    for b in prange(B, nogil=True, num_threads=nt, schedule="dynamic"):
        t = threadid()
        for i in range(n_p):
            for j in range(n_q):
                k = i * n_q + j
                a = psi[b, i] - phiq[b, j]
                da = ap[b, i] - hq[b, j]
                c2 = 2.0 * rp[b, i] * rq[b, j]
                W[t, 0, k] = da * da + rp[b, i] * rp[b, i] + rq[b, j] * rq[b, j]
                W[t, 1, k] = c2 * cos(a)
                W[t, 2, k] = c2 * sin(a)
        best = -1.0
        for s in range(nspin[b]):
            # cos(a - s h) = cos a cos sh + sin a sin sh
            cs = cos(s * hstep[b])
            sn = sin(s * hstep[b])
            acc = 0.0
            for i in range(n_p):
                row = 0.0
                for j in range(n_q):
                    k = i * n_q + j
                    d2 = W[t, 0, k] - W[t, 1, k] * cs - W[t, 2, k] * sn
                    e = (sqrt(d2) if d2 > 0.0 else 0.0) - slack[b, j]
                    if e < 0.0:
                        e = 0.0
                    row = row + wq[j] * exp(-e * e * inv_s2)
                acc = acc + wp[i] * row
            if acc > best:
                best = acc
        o[b] = best
    return out

"""Pure NumPy versions of the compiled kernels in ``_ckernels``.

Same signatures and same results (up to floating reassociation in the
sums; the tree and pair enumeration are bit-identical).
"""
from __future__ import annotations

import math

import numpy as np

_BLOCK = 1 << 21  # target number of kernel entries per block

_nthreads = 1


def set_num_threads(n: int) -> None:
    global _nthreads
    _nthreads = max(1, int(n))


def get_num_threads() -> int:
    return _nthreads


def _sqdist(X, Y):
    d2 = np.zeros((X.shape[0], Y.shape[0]))
    for k in range(X.shape[1]):
        diff = X[:, k, None] - Y[None, :, k]
        d2 += diff * diff
    return d2


def row_sums(X, Y, wy, inv_s2):
    nx, ny = X.shape[0], Y.shape[0]
    out = np.zeros(nx)
    if nx == 0 or ny == 0:
        return out
    step = max(1, _BLOCK // ny)
    for a in range(0, nx, step):
        K = np.exp(-_sqdist(X[a:a + step], Y) * inv_s2)
        out[a:a + step] = K @ wy
    return out


def upper_row_sums(X, w, inv_s2):
    n = X.shape[0]
    out = np.zeros(n)
    if n < 2:
        return out
    step = max(1, _BLOCK // n)
    for a in range(0, n, step):
        b = min(n, a + step)
        K = np.exp(-_sqdist(X[a:b], X[a:]) * inv_s2)
        # keep only columns j > i
        K[:, : b - a] = np.triu(K[:, : b - a], k=1)
        out[a:b] = K @ w[a:]
    return out


def motion_batch(P, wp, Q, wq, R, T, inv_s2):
    m = R.shape[0]
    out = np.zeros(m)
    if m == 0 or P.shape[0] == 0 or Q.shape[0] == 0:
        return out
    per = P.shape[0] * Q.shape[0]
    step = max(1, _BLOCK // per)
    for a in range(0, m, step):
        Y = np.einsum("mij,qj->mqi", R[a:a + step], Q) + T[a:a + step, None, :]
        d2 = np.zeros((Y.shape[0], P.shape[0], Q.shape[0]))
        for k in range(P.shape[1]):
            diff = P[None, :, None, k] - Y[:, None, :, k]
            d2 += diff * diff
        out[a:a + step] = np.einsum("p,mpq,q->m", wp, np.exp(-d2 * inv_s2), wq)
    return out


def build_tree(X):
    m, d = X.shape
    cap = max(2 * m - 1, 0)
    perm = np.arange(m, dtype=np.intp)
    start = np.empty(cap, dtype=np.intp)
    end = np.empty(cap, dtype=np.intp)
    left = np.full(cap, -1, dtype=np.intp)
    right = np.full(cap, -1, dtype=np.intp)
    lo = np.empty((cap, d))
    hi = np.empty((cap, d))
    if m == 0:
        return perm, start, end, left, right, lo, hi
    stack = [(0, m, -1, False)]
    nn = 0
    while stack:
        s, e, par, is_left = stack.pop()
        u = nn
        nn += 1
        if par >= 0:
            if is_left:
                left[par] = u
            else:
                right[par] = u
        start[u], end[u] = s, e
        idx = perm[s:e]
        pts = X[idx]
        lo[u] = pts.min(axis=0)
        hi[u] = pts.max(axis=0)
        if e - s == 1:
            continue
        ext = hi[u] - lo[u]
        axis = int(np.argmax(ext))
        if ext[axis] <= 0.0:
            continue
        mid = 0.5 * (lo[u, axis] + hi[u, axis])
        mask = pts[:, axis] <= mid
        if mask.all():
            mask = pts[:, axis] < hi[u, axis]
        nl = int(mask.sum())
        perm[s:e] = np.concatenate([idx[mask], idx[~mask]])
        stack.append((s + nl, e, u, False))
        stack.append((s, s + nl, u, True))
    return (perm, start[:nn].copy(), end[:nn].copy(), left[:nn].copy(),
            right[:nn].copy(), lo[:nn].copy(), hi[:nn].copy())


def wspd_pairs(lo, hi, left, right, alpha, prune):
    nn = lo.shape[0]
    lo_l = lo.tolist()
    hi_l = hi.tolist()
    diag = []
    for lv, hv in zip(lo_l, hi_l):
        g = 0.0
        for a, b in zip(lv, hv):
            g += (b - a) * (b - a)
        diag.append(math.sqrt(g))
    left_l = left.tolist()
    right_l = right.tolist()
    out_a, out_b = [], []
    n_pruned = 0
    for u in range(nn):
        if left_l[u] < 0:
            continue
        stack = [(left_l[u], right_l[u])]
        while stack:
            v, w = stack.pop()
            lv, hv, lw, hw = lo_l[v], hi_l[v], lo_l[w], hi_l[w]
            s = 0.0
            for k in range(len(lv)):
                g = max(lw[k] - hv[k], lv[k] - hw[k])
                if g > 0.0:
                    s += g * g
            bd = math.sqrt(s)
            if prune > 0.0 and bd > prune:
                n_pruned += 1
                continue
            dv, dw = diag[v], diag[w]
            if max(dv, dw) <= alpha * bd:
                out_a.append(v)
                out_b.append(w)
                continue
            if dv >= dw:
                stack.append((right_l[v], w))
                stack.append((left_l[v], w))
            else:
                stack.append((v, right_l[w]))
                stack.append((v, left_l[w]))
    return (np.asarray(out_a, dtype=np.intp), np.asarray(out_b, dtype=np.intp), n_pruned)


def wspd_sums(lo, hi, left, right, alpha, prune, rep, mp, mq, inv_s2):
    a, b, n_pruned = wspd_pairs(lo, hi, left, right, alpha, prune)
    out = [0.0, 0.0, 0.0, 0.0]
    # accumulate in traversal order, like the compiled kernel
    K = np.exp(-np.sum((rep[a] - rep[b]) ** 2, axis=1) * inv_s2)
    terms = (K * mp[a] * mp[b], K * mq[a] * mq[b], K * (mp[a] * mq[b] + mq[a] * mp[b]),
             K * (mp[a] - mq[a]) * (mp[b] - mq[b]))
    for t, arr in enumerate(terms):
        acc = 0.0
        for x in arr.tolist():
            acc += x
        out[t] = acc
    return out[0], out[1], out[2], out[3], int(a.shape[0]), n_pruned


def arc_bounds(ap, rp, psi, hq, rq, phiq, slack, theta0, length, rt, wp, wq, inv_s2):
    two_pi = 2.0 * math.pi
    da = ap[:, :, None] - hq[:, None, :]
    r1, r2 = rp[:, :, None], rq[:, None, :]
    x = np.fmod(psi[:, :, None] - phiq[:, None, :] - theta0[:, None, None], two_pi)
    x = np.where(x < 0.0, x + two_pi, x)
    L = length[:, None, None]
    inside = (L >= two_pi) | (x <= L)
    g = np.minimum(x - L, two_pi - x)
    near = da * da + (r1 - r2) ** 2
    far = da * da + r1 * r1 + r2 * r2 - 2.0 * r1 * r2 * np.cos(g)
    dist = np.sqrt(np.maximum(np.where(inside, near, far), 0.0))
    e = np.maximum(dist - slack[:, None, :] - rt[:, None, None], 0.0)
    return np.einsum("p,bpq,q->b", wp, np.exp(-e * e * inv_s2), wq)


def translation_bounds(S, sw, lo, hi, reach, inv_s2):
    rt = 0.5 * np.sqrt(np.sum((hi - lo) ** 2, axis=1))
    c = 0.5 * (lo + hi)
    out = np.empty(lo.shape[0])
    step = max(1, _BLOCK // max(1, S.shape[0]))
    for a in range(0, lo.shape[0], step):
        b = slice(a, a + step)
        gap = np.maximum(np.maximum(lo[b, None, :] - S, S - hi[b, None, :]), 0.0)
        feas = np.sqrt(np.min(np.sum(gap * gap, axis=-1), axis=1)) <= reach
        dist = np.sqrt(np.sum((S[None] - c[b, None, :]) ** 2, axis=-1))
        e = np.maximum(dist - rt[b, None], 0.0)
        ub = np.exp(-e * e * inv_s2) @ sw
        ub[~feas] = -np.inf
        out[b] = ub
    return out


def spin_bounds(ap, rp, psi, hq, rq, phiq, slack, nspin, hstep, wp, wq, inv_s2):
    B = ap.shape[0]
    out = np.full(B, -np.inf)
    da2 = (ap[:, :, None] - hq[:, None, :]) ** 2
    rr = rp[:, :, None] ** 2 + rq[:, None, :] ** 2
    cross = 2.0 * rp[:, :, None] * rq[:, None, :]
    a = psi[:, :, None] - phiq[:, None, :]
    ca, sa = np.cos(a), np.sin(a)
    for b in range(B):
        th = np.arange(nspin[b]) * hstep[b]
        cos_ = ca[b][None] * np.cos(th)[:, None, None] + sa[b][None] * np.sin(th)[:, None, None]
        d2 = da2[b][None] + rr[b][None] - cross[b][None] * cos_
        e = np.maximum(np.sqrt(np.maximum(d2, 0.0)) - slack[b][None, None, :], 0.0)
        out[b] = np.max(np.einsum("p,spq,q->s", wp, np.exp(-e * e * inv_s2), wq))
    return out

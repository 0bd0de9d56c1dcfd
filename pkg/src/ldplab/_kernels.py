"""Compiled inner loops of the partition engine.

The grid is passed as flat arrays: ``E`` are the positive cell edges in
increasing order (``E[-1] = delta``), ``cp``/``cj`` the ``(p, j)`` label of
cell ``k = [E[k], E[k+1])``.  Negative cells are mirrors ``(-E[k+1], -E[k]]``.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

FREE, GRID, STOP_P, STOP_M, DEEP, WHOLE = 0, 1, 2, 3, 4, 5
KIND_NAMES = ("free", "grid", "stop+", "stop-", "deep", "whole")

ALIVE, UNRESOLVED = 0, 1


@njit(cache=True)
def _outer_cell_p(u, v, E, cp):
    """Smallest bound period among cells meeting [u, v]; 0 if none."""
    K = E.size - 1
    delta = E[K]
    best = 0
    if v >= E[0] and u < delta:
        k = np.searchsorted(E, v, side="right") - 1
        if k > K - 1:
            k = K - 1
        best = cp[k]
    if u <= -E[0] and v > -delta:
        k = np.searchsorted(E, -u, side="right") - 1
        if k > K - 1:
            k = K - 1
        if best == 0 or cp[k] < best:
            best = cp[k]
    return best


@njit(cache=True)
def split_image(Jl, Jr, E, cp, cj, lam_l, lam_r,
                sl, sr, sk, sc, sf, out_l, out_r, out_kind, out_p, out_j):
    """Cut a free image ``[Jl, Jr]`` into the pieces of the refinement rule.

    ``sl..sf`` are scratch arrays of length ``>= 2*K + 8``.  Returns the
    number of pieces written to ``out_*`` and the number of flagged glues.
    """
    K = E.size - 1
    delta = E[K]
    h = lam_r - lam_l
    stop_p = Jl <= lam_l - h and Jr >= lam_r + h
    stop_m = Jl <= -lam_r - h and Jr >= -lam_l + h
    meets = Jl < delta and Jr > -delta
    nfull = 0
    for k in range(K):
        if Jl <= E[k] and Jr >= E[k + 1]:
            nfull += 1
        if Jl <= -E[k + 1] and Jr >= -E[k]:
            nfull += 1
    deep_lo = max(Jl, -E[0])
    deep_hi = min(Jr, E[0])
    has_deep = deep_lo < deep_hi
    if has_deep:
        nfull += 2
    flags = 0
    n = 0
    if not (meets and nfull >= 2):
        # no subdivision; only the stop cuts apply
        cur = Jl
        for side in range(2):
            if side == 0 and stop_m:
                lo, hi, kd = -lam_r, -lam_l, STOP_M
            elif side == 1 and stop_p:
                lo, hi, kd = lam_l, lam_r, STOP_P
            else:
                continue
            if lo > cur:
                out_l[n] = cur
                out_r[n] = lo
                out_kind[n] = FREE
                n += 1
            out_l[n] = lo
            out_r[n] = hi
            out_kind[n] = kd
            n += 1
            cur = hi
        if Jr > cur or n == 0:
            out_l[n] = cur
            out_r[n] = Jr
            out_kind[n] = FREE
            n += 1
        for i in range(n):
            out_p[i] = 0
            out_j[i] = 0
            if out_kind[i] == FREE and out_l[i] < delta and out_r[i] > -delta:
                p = _outer_cell_p(out_l[i], out_r[i], E, cp)
                if p > 0:
                    out_kind[i] = WHOLE
                    out_p[i] = p
                else:
                    out_kind[i] = DEEP
        return n, flags

    ns = 0
    if Jl <= -delta:
        if stop_m:
            if Jl < -lam_r:
                sl[ns], sr[ns], sk[ns], sc[ns], sf[ns] = Jl, -lam_r, FREE, 0, 0
                ns += 1
            sl[ns], sr[ns], sk[ns], sc[ns], sf[ns] = -lam_r, -lam_l, STOP_M, 0, 0
            ns += 1
            if -lam_l < -delta:
                sl[ns], sr[ns], sk[ns], sc[ns], sf[ns] = -lam_l, -delta, FREE, 0, 0
                ns += 1
        elif Jl < -delta:
            sl[ns], sr[ns], sk[ns], sc[ns], sf[ns] = Jl, -delta, FREE, 0, 0
            ns += 1
    for k in range(K - 1, -1, -1):
        lo = max(Jl, -E[k + 1])
        hi = min(Jr, -E[k])
        if lo < hi:
            full = 1 if (Jl <= -E[k + 1] and Jr >= -E[k]) else 0
            sl[ns], sr[ns], sk[ns], sc[ns], sf[ns] = lo, hi, GRID, -(k + 1), full
            ns += 1
    if has_deep:
        sl[ns], sr[ns], sk[ns], sc[ns], sf[ns] = deep_lo, deep_hi, DEEP, 0, 1
        ns += 1
    for k in range(K):
        lo = max(Jl, E[k])
        hi = min(Jr, E[k + 1])
        if lo < hi:
            full = 1 if (Jl <= E[k] and Jr >= E[k + 1]) else 0
            sl[ns], sr[ns], sk[ns], sc[ns], sf[ns] = lo, hi, GRID, k + 1, full
            ns += 1
    if Jr >= delta:
        if stop_p:
            if lam_l > delta:
                sl[ns], sr[ns], sk[ns], sc[ns], sf[ns] = delta, lam_l, FREE, 0, 0
                ns += 1
            sl[ns], sr[ns], sk[ns], sc[ns], sf[ns] = lam_l, lam_r, STOP_P, 0, 0
            ns += 1
            if Jr > lam_r:
                sl[ns], sr[ns], sk[ns], sc[ns], sf[ns] = lam_r, Jr, FREE, 0, 0
                ns += 1
        elif Jr > delta:
            sl[ns], sr[ns], sk[ns], sc[ns], sf[ns] = delta, Jr, FREE, 0, 0
            ns += 1

    # sf doubles as the alive marker after this point: 1 full, 0 partial, -1 dead
    i0 = -1
    i1 = -1
    for i in range(ns):
        if sk[i] == GRID or sk[i] == DEEP:
            if i0 < 0:
                i0 = i
            i1 = i
    if i0 >= 0 and i0 < i1 and sk[i0] == GRID and sf[i0] == 0:
        sl[i0 + 1] = sl[i0]
        sf[i0] = -1
    if i1 > i0 >= 0 and sk[i1] == GRID and sf[i1] == 0:
        t = i1 - 1
        if sf[t] >= 0:
            sr[t] = sr[i1]
            sf[i1] = -1
        else:
            flags += 1

    # small outside fragments glue to a neighbouring non-stop element
    for i in range(ns):
        if sk[i] != FREE or sf[i] < 0 or sr[i] - sl[i] >= h:
            continue
        left = i - 1
        while left >= 0 and sf[left] < 0:
            left -= 1
        right = i + 1
        while right < ns and sf[right] < 0:
            right += 1
        cand_l = left >= 0 and sk[left] != STOP_P and sk[left] != STOP_M
        cand_r = right < ns and sk[right] != STOP_P and sk[right] != STOP_M
        pos = sl[i] > 0.0
        best = -1
        for c, ok in ((left, cand_l), (right, cand_r)):
            if ok:
                if pos and sl[c] <= lam_l and sr[c] >= lam_r:
                    best = c
                if (not pos) and sl[c] <= -lam_r and sr[c] >= -lam_l:
                    best = c
        if best < 0:
            flags += 1
            if cand_l and cand_r:
                best = left if sr[left] - sl[left] >= sr[right] - sl[right] else right
            elif cand_l:
                best = left
            elif cand_r:
                best = right
        if best >= 0:
            if best < i:
                sr[best] = sr[i]
            else:
                sl[best] = sl[i]
            sf[i] = -1

    for i in range(ns):
        if sf[i] < 0:
            continue
        out_l[n] = sl[i]
        out_r[n] = sr[i]
        out_kind[n] = sk[i]
        out_p[n] = 0
        out_j[n] = 0
        if sk[i] == GRID:
            c = sc[i]
            k = c - 1 if c > 0 else -c - 1
            out_p[n] = cp[k]
            out_j[n] = cj[k] if c > 0 else -cj[k]
        n += 1
    return n, flags


@njit(cache=True)
def _piece_of(y, n, out_l, out_r):
    for i in range(n - 1):
        if y < out_r[i]:
            return i
    return n - 1


@njit(cache=True)
def track_point(x0, T, a, eps, N, c_ext, E, cp, cj, lam_l, lam_r,
                key, signs, stop_t, stop_s, stop_y, ret_t, ret_p, ret_j, split_t):
    """Follow the partition element containing ``x0`` for ``T`` steps.

    The element starts as the ``Lambda`` half containing ``x0`` and is bound
    for ``N`` steps.  Bound stretches are iterated as deviations from the
    critical orbit.  At every free time ``t >= N`` the image is cut by
    ``split_image`` and the piece containing the point is kept.

    Fills ``key[t] = log d(0, f^t omega_t) + eps*t`` (``+inf`` before ``N``),
    ``signs[t]``, the stopping times with signs and landing points, the free returns and the
    times at which the element was cut.  Returns
    ``(t_end, status, n_stop, n_ret, n_split, flags, image_sum)``.
    """
    K = E.size - 1
    delta = E[K]
    h = lam_r - lam_l
    m = 2 * K + 8
    sl = np.empty(m)
    sr = np.empty(m)
    sk = np.empty(m, np.int64)
    sc = np.empty(m, np.int64)
    sf = np.empty(m, np.int64)
    out_l = np.empty(m)
    out_r = np.empty(m)
    out_kind = np.empty(m, np.int64)
    out_p = np.empty(m, np.int64)
    out_j = np.empty(m, np.int64)

    if x0 > 0:
        wl, wr = lam_l, lam_r
    else:
        wl, wr = -lam_r, -lam_l
    wy = x0
    y = x0
    Jl, Jr = wl, wr
    in_bind = True
    k0 = 0
    pb = N
    ns = 0
    nr = 0
    nsp = 0
    flags = 0
    status = ALIVE
    image_sum = Jr - Jl
    for t in range(N):
        key[t] = np.inf
    signs[0] = 1 if x0 > 0 else -1
    t_end = T
    for t in range(1, T + 1):
        if in_bind:
            i = t - 1 - k0
            ci = c_ext[i]
            wl = -a * wl * (2.0 * ci + wl)
            wr = -a * wr * (2.0 * ci + wr)
            wy = -a * wy * (2.0 * ci + wy)
            cn = c_ext[i + 1]
            zl = cn + wl
            zr = cn + wr
            y = cn + wy
            if zl <= zr:
                Jl, Jr = zl, zr
            else:
                Jl, Jr = zr, zl
            if t == k0 + pb:
                in_bind = False
        else:
            y = 1.0 - a * y * y
            fl = 1.0 - a * Jl * Jl
            fr = 1.0 - a * Jr * Jr
            if fl <= fr:
                Jl, Jr = fl, fr
            else:
                Jl, Jr = fr, fl
        if y > 1.0:
            y = 1.0
        elif y < -1.0:
            y = -1.0
        signs[t] = 1 if y > 0 else -1

        if (not in_bind) and t >= N:
            cut = (Jl < delta and Jr > -delta) or (Jr - Jl >= 3.0 * h)
            if cut:
                n, fg = split_image(Jl, Jr, E, cp, cj, lam_l, lam_r,
                                    sl, sr, sk, sc, sf,
                                    out_l, out_r, out_kind, out_p, out_j)
                flags += fg
                i = _piece_of(y, n, out_l, out_r)
                if n > 1:
                    split_t[nsp] = t
                    nsp += 1
                Jl, Jr = out_l[i], out_r[i]
                kd = out_kind[i]
                if kd == DEEP:
                    status = UNRESOLVED
                    t_end = t
                    key[t] = np.nan
                    break
                if kd == STOP_P or kd == STOP_M:
                    stop_t[ns] = t
                    stop_s[ns] = 1 if kd == STOP_P else -1
                    stop_y[ns] = y
                    ns += 1
                    in_bind = True
                    k0 = t
                    pb = N
                elif kd == GRID or kd == WHOLE:
                    ret_t[nr] = t
                    ret_p[nr] = out_p[i]
                    ret_j[nr] = out_j[i]
                    nr += 1
                    in_bind = True
                    k0 = t
                    pb = out_p[i]
                if in_bind:
                    wl, wr, wy = Jl, Jr, y
        image_sum += Jr - Jl
        if t >= N:
            if Jl <= 0.0 <= Jr:
                key[t] = -np.inf
            else:
                d = Jl if Jl > 0 else -Jr
                key[t] = math.log(d) + eps * t
    return t_end, status, ns, nr, nsp, flags, image_sum


@njit(cache=True)
def pull_back(v, n, signs, seg_k0, seg_p, c_ext, a):
    """Invert ``n`` steps of an element history starting from image point ``v``.

    ``signs[t]`` is the side of 0 occupied at time ``t``; bound stretches
    ``(seg_k0[i], seg_p[i])`` are inverted in deviation coordinates so that
    points near the critical value keep their relative precision.  Returns
    the preimage and ``log|Df^n|`` at it.
    """
    t = n
    logdf = 0.0
    s_idx = seg_k0.size - 1
    while t > 0:
        while s_idx >= 0 and seg_k0[s_idx] >= t:
            s_idx -= 1
        if s_idx >= 0 and t <= seg_k0[s_idx] + seg_p[s_idx]:
            k0 = seg_k0[s_idx]
            i = t - k0
            w = v - c_ext[i]
            while i > 1:
                c = c_ext[i - 1]
                W = w / a
                Q = c * c - W
                if Q < 0.0:
                    Q = 0.0
                r = math.sqrt(Q)
                sg = 1.0 if c > 0 else -1.0
                s = signs[k0 + i - 1]
                if s == sg:
                    w = -W / (c + sg * r)
                else:
                    w = -c - sg * r
                i -= 1
                logdf += math.log(2.0 * a * abs(c + w))
            q = -w / a
            if q < 0.0:
                q = 0.0
            v = signs[k0] * math.sqrt(q)
            logdf += math.log(2.0 * a * abs(v))
            t = k0
        else:
            q = (1.0 - v) / a
            if q < 0.0:
                q = 0.0
            v = signs[t - 1] * math.sqrt(q)
            logdf += math.log(2.0 * a * abs(v))
            t -= 1
    return v, logdf

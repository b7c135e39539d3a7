"""Hot loops with a numba path and a pure-numpy fallback.

Set ``FDD2D_DISABLE_NUMBA=1`` before import to force the numpy path. Both
paths accumulate in the same order as :mod:`fdd2d.rates`. The numba path
matches it bit for bit; numpy's vectorized ``log2`` may round one ulp apart.
"""

from __future__ import annotations

import itertools
import os

import numpy as np

_DISABLED = os.environ.get("FDD2D_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"
# the einsum path hands the contraction to BLAS and beats the numba loops
# at every batch size we train with (see benchmarks/bench_kernels.py)
CONV_BACKEND = "numpy"


# ---------------------------------------------------------------- numpy path


def _power_grid(levels: np.ndarray, n_users: int) -> np.ndarray:
    idx = np.array(list(itertools.product(range(len(levels)), repeat=n_users)), dtype=np.int64)
    return idx.reshape(-1, n_users)


def exhaustive_search_numpy(H, levels, noise, eta, cue_power, thr):
    """Return (best channel vector, best level vector, best sum SE, n_evaluated).

    The sum is -1.0 when no combination satisfies the CUE constraint.
    """
    K, R, _ = H.shape
    n_users = R - 1
    N = n_users // 2
    bs = R - 1
    grid = _power_grid(levels, n_users)
    P = levels[grid]  # [L^(2N), 2N]
    best_sum = -1.0
    best_ch = np.zeros(N, dtype=np.int64)
    best_pl = np.zeros(n_users, dtype=np.int64)
    count = 0
    for ch in itertools.product(range(K), repeat=N):
        count += P.shape[0]
        feasible = np.ones(P.shape[0], dtype=bool)
        for k in range(K):
            interference = np.zeros(P.shape[0])
            for u in range(n_users):
                if ch[u // 2] == k:
                    interference = interference + H[k, bs, u] * P[:, u]
            se_c = np.log2(1.0 + (H[k, bs, bs] * cue_power) / (noise + interference))
            feasible &= se_c > thr
        if not feasible.any():
            continue
        total = np.zeros(P.shape[0])
        for u in range(n_users):
            i = u // 2
            k = ch[i]
            partner = u ^ 1
            interference = np.zeros(P.shape[0])
            for v in range(n_users):
                if v // 2 != i and ch[v // 2] == k:
                    interference = interference + H[k, u, v] * P[:, v]
            denom = ((noise + interference) + H[k, u, bs] * cue_power) + eta * P[:, u]
            total = total + np.log2(1.0 + (H[k, u, partner] * P[:, partner]) / denom)
        total = np.where(feasible, total, -np.inf)
        j = int(np.argmax(total))
        if total[j] > best_sum:
            best_sum = float(total[j])
            best_ch[:] = ch
            best_pl[:] = grid[j]
    return best_ch, best_pl, best_sum, count


def evaluate_batch_numpy(H, channel, level, levels, noise, eta, cue_power):
    """SE of every DUE and CUE for S samples; H [S,K,R,R], channel [S,N], level [S,2N]."""
    S, K, R, _ = H.shape
    n_users = R - 1
    bs = R - 1
    rows = np.arange(S)
    P = levels[level]  # [S, 2N]
    user_ch = np.repeat(channel, 2, axis=1)  # [S, 2N]
    se_due = np.empty((S, n_users))
    for u in range(n_users):
        k = user_ch[:, u]
        partner = u ^ 1
        interference = np.zeros(S)
        for v in range(n_users):
            if v // 2 == u // 2:
                continue
            term = H[rows, k, u, v] * P[:, v]
            interference = interference + np.where(user_ch[:, v] == k, term, 0.0)
        denom = ((noise + interference) + H[rows, k, u, bs] * cue_power) + eta * P[:, u]
        se_due[:, u] = np.log2(1.0 + (H[rows, k, u, partner] * P[:, partner]) / denom)
    se_cue = np.empty((S, K))
    for k in range(K):
        interference = np.zeros(S)
        for u in range(n_users):
            term = H[:, k, bs, u] * P[:, u]
            interference = interference + np.where(user_ch[:, u] == k, term, 0.0)
        se_cue[:, k] = np.log2(1.0 + (H[:, k, bs, bs] * cue_power) / (noise + interference))
    return se_due, se_cue


def conv2d_forward_numpy(x, w, stride, pad):
    """Cross-correlation of x [B,C,H,W] with w [F,C,kh,kw]."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    kh, kw = w.shape[2:]
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [B, C, Ho, Wo, kh, kw]
    return np.einsum("bchwij,fcij->bfhw", win, w, optimize=True)


def conv2d_backward_numpy(x, w, grad_out, stride, pad):
    """Return (grad_x, grad_w) for :func:`conv2d_forward_numpy`."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    kh, kw = w.shape[2:]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    grad_w = np.einsum("bchwij,bfhw->fcij", win, grad_out, optimize=True)
    grad_xp = np.zeros_like(xp)
    Ho, Wo = grad_out.shape[2:]
    for i in range(kh):
        for j in range(kw):
            contrib = np.einsum("bfhw,fc->bchw", grad_out, w[:, :, i, j], optimize=True)
            grad_xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += contrib
    if pad:
        grad_xp = grad_xp[:, :, pad:-pad, pad:-pad]
    return grad_xp, grad_w


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def _exhaustive_nb(H, levels, noise, eta, cue_power, thr):
        K = H.shape[0]
        R = H.shape[1]
        n_users = R - 1
        N = n_users // 2
        L = levels.shape[0]
        bs = R - 1
        ch = np.zeros(N, dtype=np.int64)
        pl = np.zeros(n_users, dtype=np.int64)
        p = np.zeros(n_users)
        best_ch = np.zeros(N, dtype=np.int64)
        best_pl = np.zeros(n_users, dtype=np.int64)
        best_sum = -1.0
        count = 0
        n_ch = K ** N
        n_pw = L ** n_users
        for _c in range(n_ch):
            for u in range(n_users):
                pl[u] = 0
                p[u] = levels[0]
            for _p in range(n_pw):
                count += 1
                feasible = True
                for k in range(K):
                    interference = 0.0
                    for u in range(n_users):
                        if ch[u // 2] == k:
                            interference += H[k, bs, u] * p[u]
                    se_c = np.log2(1.0 + (H[k, bs, bs] * cue_power) / (noise + interference))
                    if not se_c > thr:
                        feasible = False
                        break
                if feasible:
                    total = 0.0
                    for u in range(n_users):
                        i = u // 2
                        k = ch[i]
                        partner = u ^ 1
                        interference = 0.0
                        for v in range(n_users):
                            if v // 2 != i and ch[v // 2] == k:
                                interference += H[k, u, v] * p[v]
                        denom = ((noise + interference) + H[k, u, bs] * cue_power) + eta * p[u]
                        total += np.log2(1.0 + (H[k, u, partner] * p[partner]) / denom)
                    if total > best_sum:
                        best_sum = total
                        best_ch[:] = ch
                        best_pl[:] = pl
                # odometer over power levels, last user fastest
                u = n_users - 1
                while u >= 0:
                    pl[u] += 1
                    if pl[u] < L:
                        p[u] = levels[pl[u]]
                        break
                    pl[u] = 0
                    p[u] = levels[0]
                    u -= 1
            i = N - 1
            while i >= 0:
                ch[i] += 1
                if ch[i] < K:
                    break
                ch[i] = 0
                i -= 1
        return best_ch, best_pl, best_sum, count

    @njit(cache=True)
    def _evaluate_batch_nb(H, channel, level, levels, noise, eta, cue_power):
        S, K, R, _ = H.shape
        n_users = R - 1
        bs = R - 1
        se_due = np.empty((S, n_users))
        se_cue = np.empty((S, K))
        for s in range(S):
            for u in range(n_users):
                i = u // 2
                k = channel[s, i]
                partner = u ^ 1
                interference = 0.0
                for v in range(n_users):
                    if v // 2 != i and channel[s, v // 2] == k:
                        interference += H[s, k, u, v] * levels[level[s, v]]
                denom = ((noise + interference) + H[s, k, u, bs] * cue_power) + eta * levels[level[s, u]]
                se_due[s, u] = np.log2(1.0 + (H[s, k, u, partner] * levels[level[s, partner]]) / denom)
            for k in range(K):
                interference = 0.0
                for u in range(n_users):
                    if channel[s, u // 2] == k:
                        interference += H[s, k, bs, u] * levels[level[s, u]]
                se_cue[s, k] = np.log2(1.0 + (H[s, k, bs, bs] * cue_power) / (noise + interference))
        return se_due, se_cue

    @njit(cache=True)
    def _conv2d_forward_nb(x, w, stride):
        B, C, Hh, Ww = x.shape
        F, _, kh, kw = w.shape
        Ho = (Hh - kh) // stride + 1
        Wo = (Ww - kw) // stride + 1
        out = np.zeros((B, F, Ho, Wo))
        for b in range(B):
            for f in range(F):
                for oh in range(Ho):
                    for ow in range(Wo):
                        acc = 0.0
                        for c in range(C):
                            for i in range(kh):
                                for j in range(kw):
                                    acc += x[b, c, oh * stride + i, ow * stride + j] * w[f, c, i, j]
                        out[b, f, oh, ow] = acc
        return out

    @njit(cache=True)
    def _conv2d_backward_nb(x, w, grad_out, stride):
        B, C, Hh, Ww = x.shape
        F, _, kh, kw = w.shape
        Ho = grad_out.shape[2]
        Wo = grad_out.shape[3]
        grad_x = np.zeros_like(x)
        grad_w = np.zeros_like(w)
        for b in range(B):
            for f in range(F):
                for oh in range(Ho):
                    for ow in range(Wo):
                        g = grad_out[b, f, oh, ow]
                        for c in range(C):
                            for i in range(kh):
                                for j in range(kw):
                                    grad_w[f, c, i, j] += g * x[b, c, oh * stride + i, ow * stride + j]
                                    grad_x[b, c, oh * stride + i, ow * stride + j] += g * w[f, c, i, j]
        return grad_x, grad_w


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def exhaustive_search(H, levels, noise, eta, cue_power, thr, backend: str | None = None):
    backend = backend or BACKEND
    H, levels = _f64(H), _f64(levels)
    if backend == "numba":
        ch, pl, best, count = _exhaustive_nb(H, levels, float(noise), float(eta), float(cue_power), float(thr))
        return ch, pl, float(best), int(count)
    return exhaustive_search_numpy(H, levels, noise, eta, cue_power, thr)


def evaluate_batch(H, channel, level, levels, noise, eta, cue_power, backend: str | None = None):
    backend = backend or BACKEND
    args = (_f64(H), _i64(channel), _i64(level), _f64(levels))
    if backend == "numba":
        return _evaluate_batch_nb(*args, float(noise), float(eta), float(cue_power))
    return evaluate_batch_numpy(*args, noise, eta, cue_power)


def conv2d_forward(x, w, stride=1, pad=0, backend: str | None = None):
    backend = backend or CONV_BACKEND
    if backend == "numba":
        if pad:
            x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        return _conv2d_forward_nb(_f64(x), _f64(w), int(stride))
    return conv2d_forward_numpy(x, w, stride, pad)


def conv2d_backward(x, w, grad_out, stride=1, pad=0, backend: str | None = None):
    backend = backend or CONV_BACKEND
    if backend == "numba":
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        gx, gw = _conv2d_backward_nb(_f64(xp), _f64(w), _f64(grad_out), int(stride))
        if pad:
            gx = gx[:, :, pad:-pad, pad:-pad]
        return gx, gw
    return conv2d_backward_numpy(x, w, grad_out, stride, pad)

"""Sequential state-recurrence kernels for the training path.

The numpy versions are the reference; when numba is importable the jitted
twins (same loop order, 64-bit accumulators in the reductions) take over.
Either way the per-step fold in rwkv.py stays the bitwise contract; these
only need to agree with it to rounding.
"""

from __future__ import annotations

import numpy as np

from .rwkv import KEY_EPS

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - environment without numba
    numba = None
    HAVE_NUMBA = False


def _scan_forward_np(s, w, k, v, a, khat, r, y, b_read, s_post):
    t_len = k.shape[0]
    want_post = s_post.shape[0] > 0
    for t in range(t_len):
        b = np.einsum("hij,hj->hi", s, khat[t])
        s[...] = s * w[t][:, None, :] - b[:, :, None] * (a[t] * khat[t])[:, None, :] \
            + v[t][:, :, None] * k[t][:, None, :]
        y[t] = np.einsum("hij,hj->hi", s, r[t])
        b_read[t] = b
        if want_post:
            s_post[t] = s


def _scan_backward_np(s0, s_post, w, k, v, a, khat, kn, b_read, r, dy, dr, dk, dv, dw, da):
    t_len = dy.shape[0]
    ds = np.zeros_like(s0)
    eps = k.dtype.type(KEY_EPS)
    for t in range(t_len - 1, -1, -1):
        s_prev = s_post[t - 1] if t > 0 else s0
        dr[t] = np.einsum("hij,hi->hj", s_post[t], dy[t])
        ds = ds + dy[t][:, :, None] * r[t][:, None, :]
        c = a[t] * khat[t]
        db = -np.einsum("hij,hj->hi", ds, c)
        dc = -np.einsum("hij,hi->hj", ds, b_read[t])
        da[t] = dc * khat[t]
        dkhat = dc * a[t] + np.einsum("hij,hi->hj", s_prev, db)
        dw[t] = np.einsum("hij,hij->hj", ds, s_prev)
        dv[t] = np.einsum("hij,hj->hi", ds, k[t])
        dk[t] = np.einsum("hij,hi->hj", ds, v[t])
        denom = kn[t] + eps
        dot = np.sum(dkhat * k[t], axis=1)
        scale = np.where(kn[t] > 0, dot / (np.maximum(kn[t], eps) * denom**2), 0.0)
        dk[t] += dkhat / denom[:, None] - k[t] * scale[:, None].astype(k.dtype)
        ds = ds * w[t][:, None, :] + db[:, :, None] * khat[t][:, None, :]


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _scan_forward_nb(s, w, k, v, a, khat, r, y, b_read, s_post):  # pragma: no cover - jitted
        t_len, n_heads, n = k.shape
        want_post = s_post.shape[0] > 0
        for t in range(t_len):
            for h in range(n_heads):
                for i in range(n):
                    acc = 0.0
                    for j in range(n):
                        acc += s[h, i, j] * khat[t, h, j]
                    b_read[t, h, i] = acc
                for i in range(n):
                    bi = b_read[t, h, i]
                    vi = v[t, h, i]
                    for j in range(n):
                        s[h, i, j] = s[h, i, j] * w[t, h, j] \
                            - bi * a[t, h, j] * khat[t, h, j] + vi * k[t, h, j]
                for i in range(n):
                    acc = 0.0
                    for j in range(n):
                        acc += s[h, i, j] * r[t, h, j]
                    y[t, h, i] = acc
                if want_post:
                    for i in range(n):
                        for j in range(n):
                            s_post[t, h, i, j] = s[h, i, j]

    @numba.njit(cache=True)
    def _scan_backward_nb(s0, s_post, w, k, v, a, khat, kn, b_read, r,
                          dy, dr, dk, dv, dw, da):  # pragma: no cover - jitted
        t_len, n_heads, n = dy.shape
        ds = np.zeros_like(s0)
        db = np.zeros_like(s0[:, 0])      # (H, N) scratch
        dc = np.zeros_like(db)
        dkhat = np.zeros_like(db)
        eps = KEY_EPS
        for t in range(t_len - 1, -1, -1):
            for h in range(n_heads):
                for j in range(n):
                    acc = 0.0
                    for i in range(n):
                        acc += s_post[t, h, i, j] * dy[t, h, i]
                    dr[t, h, j] = acc
                for i in range(n):
                    dyi = dy[t, h, i]
                    for j in range(n):
                        ds[h, i, j] += dyi * r[t, h, j]
                for i in range(n):
                    acc = 0.0
                    for j in range(n):
                        acc += ds[h, i, j] * a[t, h, j] * khat[t, h, j]
                    db[h, i] = -acc
                for j in range(n):
                    acc = 0.0
                    for i in range(n):
                        acc += ds[h, i, j] * b_read[t, h, i]
                    dc[h, j] = -acc
                for j in range(n):
                    da[t, h, j] = dc[h, j] * khat[t, h, j]
                    acc = 0.0
                    if t > 0:
                        for i in range(n):
                            acc += s_post[t - 1, h, i, j] * db[h, i]
                    else:
                        for i in range(n):
                            acc += s0[h, i, j] * db[h, i]
                    dkhat[h, j] = dc[h, j] * a[t, h, j] + acc
                for j in range(n):
                    acc_w = 0.0
                    acc_k = 0.0
                    for i in range(n):
                        if t > 0:
                            acc_w += ds[h, i, j] * s_post[t - 1, h, i, j]
                        else:
                            acc_w += ds[h, i, j] * s0[h, i, j]
                        acc_k += ds[h, i, j] * v[t, h, i]
                    dw[t, h, j] = acc_w
                    dk[t, h, j] = acc_k
                for i in range(n):
                    acc = 0.0
                    for j in range(n):
                        acc += ds[h, i, j] * k[t, h, j]
                    dv[t, h, i] = acc
                denom = kn[t, h] + eps
                dot = 0.0
                for j in range(n):
                    dot += dkhat[h, j] * k[t, h, j]
                if kn[t, h] > 0:
                    scale = dot / (max(kn[t, h], eps) * denom * denom)
                else:
                    scale = 0.0
                for j in range(n):
                    dk[t, h, j] += dkhat[h, j] / denom - k[t, h, j] * scale
                for i in range(n):
                    bi = db[h, i]
                    for j in range(n):
                        ds[h, i, j] = ds[h, i, j] * w[t, h, j] + bi * khat[t, h, j]

    wkv_scan_forward = _scan_forward_nb
    wkv_scan_backward = _scan_backward_nb
else:
    wkv_scan_forward = _scan_forward_np
    wkv_scan_backward = _scan_backward_np

"""JIT-compiled stride-1 convolution kernels for small channel counts.

BLAS-backed contraction (see ops.conv3d) wins when the channel product is
large; these direct kernels win when it is small, where per-call overhead and
strided copies dominate. Results match the numpy path to float rounding.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def conv_fwd_s1(xp, w, out):
    n_batch, cin, _, _, _ = xp.shape
    cout, _, kd, kh, kw = w.shape
    do, ho, wo = out.shape[2], out.shape[3], out.shape[4]
    acc = np.empty((cout, wo), dtype=xp.dtype)
    for n in range(n_batch):
        for d in range(do):
            for h in range(ho):
                acc[:, :] = 0.0
                for c in range(cin):
                    for i in range(kd):
                        for j in range(kh):
                            base = xp[n, c, d + i, h + j]
                            for o in range(cout):
                                row = acc[o]
                                for k in range(kw):
                                    wv = w[o, c, i, j, k]
                                    for q in range(wo):
                                        row[q] += wv * base[k + q]
                for o in range(cout):
                    out[n, o, d, h, :] = acc[o]


@njit(cache=True, fastmath=True)
def conv_bwd_s1(xp, w, gm, dxp, dw, need_x, need_w):
    n_batch, cin, _, _, _ = xp.shape
    cout, _, kd, kh, kw = w.shape
    do, ho, wo = gm.shape[2], gm.shape[3], gm.shape[4]
    for n in range(n_batch):
        for d in range(do):
            for h in range(ho):
                for o in range(cout):
                    grow = gm[n, o, d, h]
                    for c in range(cin):
                        for i in range(kd):
                            for j in range(kh):
                                xrow = xp[n, c, d + i, h + j]
                                dxrow = dxp[n, c, d + i, h + j]
                                for k in range(kw):
                                    wv = w[o, c, i, j, k]
                                    if need_x and need_w:
                                        acc = 0.0
                                        for q in range(wo):
                                            g = grow[q]
                                            dxrow[k + q] += wv * g
                                            acc += xrow[k + q] * g
                                        dw[o, c, i, j, k] += acc
                                    elif need_x:
                                        for q in range(wo):
                                            dxrow[k + q] += wv * grow[q]
                                    else:
                                        acc = 0.0
                                        for q in range(wo):
                                            acc += xrow[k + q] * grow[q]
                                        dw[o, c, i, j, k] += acc

"""Brute-force reference implementations shared by the test modules.

Deliberately slow and structure-free: nested loops over every output cell,
so they cannot share bugs with the im2col/BLAS production kernels.
"""

import numpy as np


def brute_conv2d(x, w, stride, pad):
    # x: [C,H,W], w: [Co,C,kh,kw]
    c, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((co, ho, wo))
    for o in range(co):
        for y in range(ho):
            for xx in range(wo):
                acc = 0.0
                for ci in range(c):
                    for iy in range(kh):
                        for ix in range(kw):
                            acc += xp[ci, y * stride + iy, xx * stride + ix] * w[o, ci, iy, ix]
                out[o, y, xx] = acc
    return out


def brute_maxpool2d(x, k, stride):
    c, h, wd = x.shape
    ho = (h - k) // stride + 1
    wo = (wd - k) // stride + 1
    out = np.zeros((c, ho, wo))
    for ci in range(c):
        for y in range(ho):
            for xx in range(wo):
                out[ci, y, xx] = x[ci, y * stride:y * stride + k, xx * stride:xx * stride + k].max()
    return out


def random_conv_case(rng, max_ch=4, max_k=5, max_hw=12):
    cin = int(rng.integers(1, max_ch + 1))
    co = int(rng.integers(1, max_ch + 1))
    k = int(rng.integers(1, max_k + 1))
    stride = int(rng.integers(1, 4))
    pad = int(rng.integers(0, 3))
    h = int(rng.integers(max(1, k - 2 * pad), max_hw + 1))
    wd = int(rng.integers(max(1, k - 2 * pad), max_hw + 1))
    x = rng.normal(size=(cin, h, wd))
    w = rng.normal(size=(co, cin, k, k))
    return x, w, stride, pad

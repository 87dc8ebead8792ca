"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable (or disabled via
``VONEBENCH_PURE_PYTHON=1``).  Convolutions go through im2col plus a BLAS
matmul, chunked over the batch to bound the column-buffer size; all
reductions run in float64.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

_COL_BUDGET = 8_000_000  # float64 elements per im2col chunk (~64 MB)


def _out_extent(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _chunk(n, per_image):
    return max(1, min(n, _COL_BUDGET // max(1, per_image)))


def _im2col(xp, kh, kw, stride, ho, wo):
    # xp: padded [N, C, Hp, Wp] float64 -> copy [N, ho*wo, C*kh*kw]
    n, c, hp, wp = xp.shape
    sn, sc, sh, sw = xp.strides
    win = as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return win.transpose(0, 4, 5, 1, 2, 3).reshape(n, ho * wo, c * kh * kw)


def _padded(x, pad):
    if pad:
        return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    return x


def conv2d_forward(x, w, stride, pad):
    n, cin, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho = _out_extent(h, kh, stride, pad)
    wo = _out_extent(wd, kw, stride, pad)
    xp = _padded(x, pad)
    w2 = w.reshape(co, -1).T
    out = np.empty((n, co, ho, wo))
    step = _chunk(n, ho * wo * cin * kh * kw)
    for i in range(0, n, step):
        col = _im2col(xp[i:i + step], kh, kw, stride, ho, wo)
        prod = col @ w2  # [chunk, ho*wo, co]
        out[i:i + step] = prod.transpose(0, 2, 1).reshape(-1, co, ho, wo)
    return out


def conv2d_grad_weights(x, gout, stride, pad, kh, kw):
    n, cin, h, wd = x.shape
    co, ho, wo = gout.shape[1], gout.shape[2], gout.shape[3]
    xp = _padded(x, pad)
    gw = np.zeros((co, cin * kh * kw))
    step = _chunk(n, ho * wo * cin * kh * kw)
    for i in range(0, n, step):
        col = _im2col(xp[i:i + step], kh, kw, stride, ho, wo)
        m = col.shape[0]
        g = gout[i:i + step].reshape(m, co, ho * wo)
        gw += g.transpose(1, 0, 2).reshape(co, -1) @ col.reshape(m * ho * wo, -1)
    return gw.reshape(co, cin, kh, kw)


def conv2d_grad_input(gout, w, stride, pad, h, wd):
    n, co, ho, wo = gout.shape
    _, cin, kh, kw = w.shape
    w2 = w.reshape(co, -1)
    gxp = np.zeros((n, cin, h + 2 * pad, wd + 2 * pad))
    step = _chunk(n, ho * wo * cin * kh * kw)
    for i in range(0, n, step):
        m = min(step, n - i)
        g = gout[i:i + step].reshape(m, co, ho * wo)
        gcol = np.matmul(g.transpose(0, 2, 1), w2)  # [m, ho*wo, cin*kh*kw]
        gcol = gcol.reshape(m, ho, wo, cin, kh, kw).transpose(4, 5, 0, 3, 1, 2)
        dst = gxp[i:i + step]
        for ky in range(kh):
            for kx in range(kw):
                dst[:, :, ky:ky + ho * stride:stride, kx:kx + wo * stride:stride] += gcol[ky, kx]
    if pad:
        return gxp[:, :, pad:pad + h, pad:pad + wd]
    return gxp


def maxpool2d_forward(x, k, stride):
    n, c, h, wd = x.shape
    ho = _out_extent(h, k, stride, 0)
    wo = _out_extent(wd, k, stride, 0)
    sn, sc, sh, sw = x.strides
    win = as_strided(
        x,
        shape=(n, c, ho, wo, k, k),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    ).reshape(n, c, ho, wo, k * k)
    local = win.argmax(axis=-1)
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    oy = np.arange(ho)[:, None] * stride
    ox = np.arange(wo)[None, :] * stride
    arg = (oy + local // k) * wd + (ox + local % k)
    return out, arg.astype(np.int64)


def maxpool2d_backward(gout, arg, h, wd):
    n, c = gout.shape[:2]
    gx = np.zeros((n * c, h * wd))
    np.add.at(gx, (np.arange(n * c)[:, None], arg.reshape(n * c, -1)),
              gout.reshape(n * c, -1))
    return gx.reshape(n, c, h, wd)

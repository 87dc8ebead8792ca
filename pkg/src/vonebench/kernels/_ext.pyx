# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: im2col convolution via BLAS dgemm plus direct pooling.

Same contract as the numpy backend: float64 C-contiguous arrays.  Images are
packed into one column buffer per fixed-size chunk so each dgemm is large
enough to run at full speed; reduction order per output element follows the
k dimension sequentially, so results do not depend on the batch split.
"""

import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

# doubles in the shared column buffer (32 MB); bounds peak memory and
# keeps per-chunk dgemm operands cache-friendly
DEF COL_BUDGET = 4194304


cdef void _im2col_img(const double[:, :, ::1] img, double[:, ::1] col, int coff,
                      int kh, int kw, int stride, int pad,
                      int ho, int wo) noexcept nogil:
    # fills col[:, coff:coff+ho*wo]; layout [cin*kh*kw, positions]
    cdef int cin = img.shape[0], h = img.shape[1], w = img.shape[2]
    cdef int ckk = col.shape[0], p = ho * wo
    cdef int c, iy, ix, oy, ox, y, r, pbase, xoff, lo, hi, ox_lo, ox_hi, q
    if pad:
        for r in range(ckk):
            for q in range(p):
                col[r, coff + q] = 0.0
    for c in range(cin):
        for iy in range(kh):
            for oy in range(ho):
                y = oy * stride + iy - pad
                if y < 0 or y >= h:
                    continue
                pbase = coff + oy * wo
                for ix in range(kw):
                    r = (c * kh + iy) * kw + ix
                    xoff = ix - pad
                    lo = pad - ix
                    ox_lo = 0 if lo <= 0 else (lo + stride - 1) // stride
                    hi = w - ix + pad
                    ox_hi = (hi + stride - 1) // stride
                    if ox_hi > wo:
                        ox_hi = wo
                    for ox in range(ox_lo, ox_hi):
                        col[r, pbase + ox] = img[c, y, ox * stride + xoff]


cdef void _col2im_img(const double[:, ::1] gcol, int coff, double[:, :, ::1] gimg,
                      int kh, int kw, int stride, int pad,
                      int ho, int wo) noexcept nogil:
    cdef int cin = gimg.shape[0], h = gimg.shape[1], w = gimg.shape[2]
    cdef int c, iy, ix, oy, ox, y, r, pbase, xoff, lo, hi, ox_lo, ox_hi
    for c in range(cin):
        for iy in range(kh):
            for oy in range(ho):
                y = oy * stride + iy - pad
                if y < 0 or y >= h:
                    continue
                pbase = coff + oy * wo
                for ix in range(kw):
                    r = (c * kh + iy) * kw + ix
                    xoff = ix - pad
                    lo = pad - ix
                    ox_lo = 0 if lo <= 0 else (lo + stride - 1) // stride
                    hi = w - ix + pad
                    ox_hi = (hi + stride - 1) // stride
                    if ox_hi > wo:
                        ox_hi = wo
                    for ox in range(ox_lo, ox_hi):
                        gimg[c, y, ox * stride + xoff] += gcol[r, pbase + ox]


cdef int _out_extent(int size, int k, int stride, int pad) noexcept nogil:
    return (size + 2 * pad - k) // stride + 1


cdef int _chunk_images(int n, int p, int ckk) noexcept nogil:
    cdef long long per_image = (<long long> p) * ckk
    cdef long long c = COL_BUDGET // per_image
    if c < 1:
        c = 1
    if c > n:
        c = n
    return <int> c


def conv2d_forward(x, w, int stride, int pad):
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[:, :, :, ::1] xv = x
    cdef int n = xv.shape[0], cin = xv.shape[1], h = xv.shape[2], wd = xv.shape[3]
    cdef const double[:, :, :, ::1] wv = w
    cdef int co = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3]
    cdef int ho = _out_extent(h, kh, stride, pad)
    cdef int wo = _out_extent(wd, kw, stride, pad)
    cdef int p = ho * wo, ckk = cin * kh * kw
    cdef int chunk = _chunk_images(n, p, ckk)
    cdef int ld = chunk * p
    out = np.empty((n, co, ho, wo))
    cdef double[:, :, :, ::1] ov = out
    cdef double[:, ::1] col = np.empty((ckk, ld))
    cdef double[:, ::1] scr = np.empty((co, ld))
    cdef const double[:, ::1] w2 = np.ascontiguousarray(w.reshape(co, ckk))
    cdef double one = 1.0, zero = 0.0
    cdef char tn = b'N'
    cdef int base, m, mp, i, o
    with nogil:
        base = 0
        while base < n:
            m = chunk if base + chunk <= n else n - base
            mp = m * p
            for i in range(m):
                _im2col_img(xv[base + i], col, i * p, kh, kw, stride, pad, ho, wo)
            # scr (F-view [m*p, co]) = col (F-view [m*p, ckk]) @ w2 (F-view [ckk, co])
            dgemm(&tn, &tn, &mp, &co, &ckk, &one,
                  &col[0, 0], &ld, <double *> &w2[0, 0], &ckk,
                  &zero, &scr[0, 0], &ld)
            for i in range(m):
                for o in range(co):
                    memcpy(&ov[base + i, o, 0, 0], &scr[o, i * p],
                           p * sizeof(double))
            base += m
    return out


def conv2d_grad_weights(x, gout, int stride, int pad, int kh, int kw):
    x = np.ascontiguousarray(x, dtype=np.float64)
    gout = np.ascontiguousarray(gout, dtype=np.float64)
    cdef const double[:, :, :, ::1] xv = x
    cdef const double[:, :, :, ::1] gv = gout
    cdef int n = xv.shape[0], cin = xv.shape[1]
    cdef int co = gv.shape[1], ho = gv.shape[2], wo = gv.shape[3]
    cdef int p = ho * wo, ckk = cin * kh * kw
    cdef int chunk = _chunk_images(n, p, ckk)
    cdef int ld = chunk * p
    gw2 = np.zeros((co, ckk))
    cdef double[:, ::1] gwv = gw2
    cdef double[:, ::1] col = np.empty((ckk, ld))
    cdef double[:, ::1] gb = np.empty((co, ld))
    cdef double one = 1.0
    cdef char tn = b'N', tt = b'T'
    cdef int base, m, mp, i, o
    with nogil:
        base = 0
        while base < n:
            m = chunk if base + chunk <= n else n - base
            mp = m * p
            for i in range(m):
                _im2col_img(xv[base + i], col, i * p, kh, kw, stride, pad, ho, wo)
                for o in range(co):
                    memcpy(&gb[o, i * p], &gv[base + i, o, 0, 0],
                           p * sizeof(double))
            # gw2 (F-view [ckk, co]) += col^T @ gb; chunks accumulate in order
            dgemm(&tt, &tn, &ckk, &co, &mp, &one,
                  &col[0, 0], &ld, &gb[0, 0], &ld,
                  &one, &gwv[0, 0], &ckk)
            base += m
    return gw2.reshape(co, cin, kh, kw)


def conv2d_grad_input(gout, w, int stride, int pad, int h, int wd):
    gout = np.ascontiguousarray(gout, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[:, :, :, ::1] gv = gout
    cdef const double[:, :, :, ::1] wv = w
    cdef int n = gv.shape[0], co = gv.shape[1], ho = gv.shape[2], wo = gv.shape[3]
    cdef int cin = wv.shape[1], kh = wv.shape[2], kw = wv.shape[3]
    cdef int p = ho * wo, ckk = cin * kh * kw
    cdef int chunk = _chunk_images(n, p, ckk)
    cdef int ld = chunk * p
    gx = np.zeros((n, cin, h, wd))
    cdef double[:, :, :, ::1] gxv = gx
    cdef double[:, ::1] gcol = np.empty((ckk, ld))
    cdef double[:, ::1] gb = np.empty((co, ld))
    cdef const double[:, ::1] w2 = np.ascontiguousarray(w.reshape(co, ckk))
    cdef double one = 1.0, zero = 0.0
    cdef char tn = b'N', tt = b'T'
    cdef int base, m, mp, i, o
    with nogil:
        base = 0
        while base < n:
            m = chunk if base + chunk <= n else n - base
            mp = m * p
            for i in range(m):
                for o in range(co):
                    memcpy(&gb[o, i * p], &gv[base + i, o, 0, 0],
                           p * sizeof(double))
            # gcol (F-view [m*p, ckk]) = gb (F-view [m*p, co]) @ w2^T
            dgemm(&tn, &tt, &mp, &ckk, &co, &one,
                  &gb[0, 0], &ld, <double *> &w2[0, 0], &ckk,
                  &zero, &gcol[0, 0], &ld)
            for i in range(m):
                _col2im_img(gcol, i * p, gxv[base + i], kh, kw, stride, pad,
                            ho, wo)
            base += m
    return gx


def maxpool2d_forward(x, int k, int stride):
    x = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, :, :, ::1] xv = x
    cdef int n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], wd = xv.shape[3]
    cdef int ho = _out_extent(h, k, stride, 0)
    cdef int wo = _out_extent(wd, k, stride, 0)
    out = np.empty((n, c, ho, wo))
    arg = np.empty((n, c, ho, wo), dtype=np.int64)
    cdef double[:, :, :, ::1] ov = out
    cdef long long[:, :, :, ::1] av = arg
    cdef int i, j, oy, ox, iy, ix, y0, x0
    cdef double best, v
    cdef long long bidx
    with nogil:
        for i in range(n):
            for j in range(c):
                for oy in range(ho):
                    y0 = oy * stride
                    for ox in range(wo):
                        x0 = ox * stride
                        best = xv[i, j, y0, x0]
                        bidx = y0 * wd + x0
                        for iy in range(k):
                            for ix in range(k):
                                v = xv[i, j, y0 + iy, x0 + ix]
                                if v > best:
                                    best = v
                                    bidx = (y0 + iy) * wd + (x0 + ix)
                        ov[i, j, oy, ox] = best
                        av[i, j, oy, ox] = bidx
    return out, arg


def maxpool2d_backward(gout, arg, int h, int wd):
    gout = np.ascontiguousarray(gout, dtype=np.float64)
    arg = np.ascontiguousarray(arg, dtype=np.int64)
    cdef const double[:, :, :, ::1] gv = gout
    cdef const long long[:, :, :, ::1] av = arg
    cdef int n = gv.shape[0], c = gv.shape[1], ho = gv.shape[2], wo = gv.shape[3]
    gx = np.zeros((n, c, h, wd))
    cdef double[:, :, :, ::1] gxv = gx
    cdef double * plane
    cdef int i, j, oy, ox
    with nogil:
        for i in range(n):
            for j in range(c):
                plane = &gxv[i, j, 0, 0]
                for oy in range(ho):
                    for ox in range(wo):
                        plane[av[i, j, oy, ox]] += gv[i, j, oy, ox]
    return gx

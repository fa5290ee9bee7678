# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for convolution lowering and RoI max pooling.

Semantics are identical to :mod:`contextcnn._pykernels`, including the
accumulation order of scatter-adds, so both backends agree bit for bit.
"""
import numpy as np

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _first_valid(Py_ssize_t offset, Py_ssize_t stride) nogil:
    # smallest o >= 0 with o * stride + offset >= 0
    if offset >= 0:
        return 0
    return (-offset + stride - 1) // stride


cdef inline Py_ssize_t _end_valid(Py_ssize_t offset, Py_ssize_t stride, Py_ssize_t size,
                                  Py_ssize_t count) nogil:
    # one past the largest o < count with o * stride + offset < size
    cdef Py_ssize_t e
    if size - offset <= 0:
        return 0
    e = (size - offset + stride - 1) // stride
    return e if e < count else count


def im2col(real[:, :, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, c * k * k, ho * wo), dtype=dtype)
    cdef real[:, :, ::1] cols = out
    cdef Py_ssize_t b, ch, ki, kj, oi, oj, row, ii, oj0, oj1, oi0, oi1, off
    cdef real* src
    cdef real* dst
    if out.size == 0:
        return out
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(k):
                    oi0 = _first_valid(ki - pad, stride)
                    oi1 = _end_valid(ki - pad, stride, h, ho)
                    for kj in range(k):
                        row = (ch * k + ki) * k + kj
                        oj0 = _first_valid(kj - pad, stride)
                        oj1 = _end_valid(kj - pad, stride, w, wo)
                        off = kj - pad
                        # padding taps of this row are zero; everything else is overwritten
                        dst = &cols[b, row, 0]
                        for oj in range(oi0 * wo):
                            dst[oj] = 0
                        for oj in range(oi1 * wo, ho * wo):
                            dst[oj] = 0
                        for oi in range(oi0, oi1):
                            ii = oi * stride + ki - pad
                            src = &x[b, ch, ii, 0]
                            dst = &cols[b, row, oi * wo]
                            for oj in range(oj0):
                                dst[oj] = 0
                            for oj in range(oj1, wo):
                                dst[oj] = 0
                            if stride == 1:
                                # unit stride: a plain shifted copy the compiler can vectorize
                                for oj in range(oj0, oj1):
                                    dst[oj] = src[oj + off]
                            else:
                                for oj in range(oj0, oj1):
                                    dst[oj] = src[oj * stride + off]
    return out


def col2im(real[:, :, ::1] cols, int c, int h, int w, int k, int stride, int pad):
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] x = out
    cdef Py_ssize_t b, ch, ki, kj, oi, oj, row, ii, oj0, oj1, oi0, oi1, off
    cdef real* src
    cdef real* dst
    if out.size == 0 or cols.shape[2] == 0:
        return out
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(k):
                    oi0 = _first_valid(ki - pad, stride)
                    oi1 = _end_valid(ki - pad, stride, h, ho)
                    for kj in range(k):
                        row = (ch * k + ki) * k + kj
                        oj0 = _first_valid(kj - pad, stride)
                        oj1 = _end_valid(kj - pad, stride, w, wo)
                        off = kj - pad
                        for oi in range(oi0, oi1):
                            ii = oi * stride + ki - pad
                            src = &cols[b, row, oi * wo]
                            dst = &x[b, ch, ii, 0]
                            if stride == 1:
                                for oj in range(oj0, oj1):
                                    dst[oj + off] += src[oj]
                            else:
                                for oj in range(oj0, oj1):
                                    dst[oj * stride + off] += src[oj]
    return out


def roi_pool_forward(real[:, :, :, ::1] feat, long long[:, ::1] rois, int ph, int pw):
    cdef Py_ssize_t r_count = rois.shape[0], m = feat.shape[1], fw = feat.shape[3]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((r_count, m, ph, pw), dtype=dtype)
    arg_arr = np.empty((r_count, m, ph, pw), dtype=np.int64)
    cdef real[:, :, :, ::1] out = out_arr
    cdef long long[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t r, b, ch, i, j, y, xx, ys, ye, xs, xe, best_idx
    cdef long long r0, c0, hh, ww
    cdef real best, v
    for r in range(r_count):
        b = rois[r, 0]
        r0 = rois[r, 1]
        c0 = rois[r, 2]
        hh = rois[r, 3] - r0 + 1
        ww = rois[r, 4] - c0 + 1
        for ch in range(m):
            for i in range(ph):
                ys = r0 + (i * hh) // ph
                ye = r0 + ((i + 1) * hh + ph - 1) // ph
                for j in range(pw):
                    xs = c0 + (j * ww) // pw
                    xe = c0 + ((j + 1) * ww + pw - 1) // pw
                    best = feat[b, ch, ys, xs]
                    best_idx = ys * fw + xs
                    for y in range(ys, ye):
                        for xx in range(xs, xe):
                            v = feat[b, ch, y, xx]
                            if v > best:
                                best = v
                                best_idx = y * fw + xx
                    out[r, ch, i, j] = best
                    arg[r, ch, i, j] = best_idx
    return out_arr, arg_arr


def roi_pool_backward(real[:, :, :, ::1] grad_out, long long[:, :, :, ::1] argmax,
                      long long[::1] batch_index, int n, int fh, int fw):
    cdef Py_ssize_t r_count = grad_out.shape[0], m = grad_out.shape[1]
    cdef Py_ssize_t ph = grad_out.shape[2], pw = grad_out.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, m, fh, fw), dtype=dtype)
    cdef real[:, :, :, ::1] g = out
    cdef Py_ssize_t r, b, ch, i, j
    cdef long long idx
    for r in range(r_count):
        b = batch_index[r]
        for ch in range(m):
            for i in range(ph):
                for j in range(pw):
                    idx = argmax[r, ch, i, j]
                    g[b, ch, idx // fw, idx % fw] += grad_out[r, ch, i, j]
    return out

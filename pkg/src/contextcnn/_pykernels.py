"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or when
``CONTEXTCNN_PURE_PYTHON=1`` is set. Results match ``_ckernels`` exactly.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, k, stride, pad):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (n, c, ho, wo, k, k) -> (n, c, k, k, ho, wo)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, ho * wo)
    return np.ascontiguousarray(cols)


def col2im(cols, c, h, w, k, stride, pad):
    n = cols.shape[0]
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    cols = cols.reshape(n, c, k, k, ho, wo)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki : ki + stride * (ho - 1) + 1 : stride,
                kj : kj + stride * (wo - 1) + 1 : stride] += cols[:, :, ki, kj]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


def roi_pool_forward(feat, rois, ph, pw):
    r_count = rois.shape[0]
    m, fw = feat.shape[1], feat.shape[3]
    out = np.empty((r_count, m, ph, pw), dtype=feat.dtype)
    arg = np.empty((r_count, m, ph, pw), dtype=np.int64)
    for r in range(r_count):
        b, r0, c0, r1, c1 = (int(v) for v in rois[r])
        hh = r1 - r0 + 1
        ww = c1 - c0 + 1
        for i in range(ph):
            ys = r0 + (i * hh) // ph
            ye = r0 + -((-(i + 1) * hh) // ph)
            for j in range(pw):
                xs = c0 + (j * ww) // pw
                xe = c0 + -((-(j + 1) * ww) // pw)
                region = feat[b, :, ys:ye, xs:xe].reshape(m, -1)
                local = region.argmax(axis=1)
                out[r, :, i, j] = region[np.arange(m), local]
                bw = xe - xs
                arg[r, :, i, j] = (ys + local // bw) * fw + xs + local % bw
    return out, arg


def roi_pool_backward(grad_out, argmax, batch_index, n, fh, fw):
    r_count, m = grad_out.shape[:2]
    out = np.zeros((n, m, fh * fw), dtype=grad_out.dtype)
    rows = np.broadcast_to(batch_index[:, None, None, None], argmax.shape)
    chans = np.broadcast_to(np.arange(m)[None, :, None, None], argmax.shape)
    np.add.at(out, (rows.ravel(), chans.ravel(), argmax.ravel()), grad_out.ravel())
    return out.reshape(n, m, fh, fw)

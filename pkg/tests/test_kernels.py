import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from contextcnn import kernels
from contextcnn.kernels import available_backends, load_backend

needs_both = pytest.mark.skipif(len(available_backends()) < 2, reason="compiled backend not built")


def test_cython_backend_selected_when_built():
    if "cython" in available_backends():
        assert kernels.BACKEND == "cython"


def test_env_var_forces_fallback():
    code = "from contextcnn import kernels; print(kernels.BACKEND)"
    env = {**os.environ, "CONTEXTCNN_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_both
@given(st.integers(1, 2), st.integers(1, 3), st.integers(2, 8), st.integers(2, 8), st.sampled_from([1, 3]),
       st.integers(1, 3), st.integers(0, 2), st.sampled_from([np.float32, np.float64]), st.integers(0, 2 ** 31))
def test_conv_kernels_agree_bitwise(n, c, h, w, k, stride, pad, dtype, seed):
    if k > h + 2 * pad or k > w + 2 * pad:
        return
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, c, h, w)).astype(dtype)
    cy, py = load_backend("cython"), load_backend("python")
    a, b = cy.im2col(x, k, stride, pad), py.im2col(x, k, stride, pad)
    assert a.dtype == b.dtype == dtype and np.array_equal(a, b)
    cols = rng.standard_normal(a.shape).astype(dtype)
    assert np.array_equal(cy.col2im(cols, c, h, w, k, stride, pad), py.col2im(cols, c, h, w, k, stride, pad))


@needs_both
@given(st.integers(1, 7), st.integers(1, 7), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 31))
def test_roi_kernels_agree_bitwise(fh, fw, ph, pw, seed):
    rng = np.random.default_rng(seed)
    feat = rng.integers(0, 3, size=(2, 3, fh, fw)).astype(np.float32)
    rois = []
    for _ in range(5):
        r0, r1 = sorted(rng.integers(0, fh, 2))
        c0, c1 = sorted(rng.integers(0, fw, 2))
        rois.append((rng.integers(0, 2), r0, c0, r1, c1))
    rois = np.array(rois, dtype=np.int64)
    cy, py = load_backend("cython"), load_backend("python")
    (oa, aa), (ob, ab) = cy.roi_pool_forward(feat, rois, ph, pw), py.roi_pool_forward(feat, rois, ph, pw)
    assert np.array_equal(oa, ob) and np.array_equal(aa, ab)
    g = rng.standard_normal(oa.shape).astype(np.float32)
    bi = np.ascontiguousarray(rois[:, 0])
    assert np.array_equal(cy.roi_pool_backward(g, aa, bi, 2, fh, fw), py.roi_pool_backward(g, ab, bi, 2, fh, fw))

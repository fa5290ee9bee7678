"""Backend selection for the hot kernels.

The compiled Cython module is preferred. Setting the environment variable
``CONTEXTCNN_PURE_PYTHON=1`` before import forces the numpy fallback.
"""

import importlib
import os

_BACKENDS = {"cython": "contextcnn._ckernels", "python": "contextcnn._pykernels"}


def load_backend(name):
    """Import and return the kernel module for ``name`` ("cython" or "python")."""
    return importlib.import_module(_BACKENDS[name])


def available_backends():
    names = []
    for name in _BACKENDS:
        try:
            load_backend(name)
        except ImportError:
            continue
        names.append(name)
    return names


def _select():
    if os.environ.get("CONTEXTCNN_PURE_PYTHON", "") not in ("", "0"):
        return "python", load_backend("python")
    try:
        return "cython", load_backend("cython")
    except ImportError:
        return "python", load_backend("python")


BACKEND, _impl = _select()

im2col = _impl.im2col
col2im = _impl.col2im
roi_pool_forward = _impl.roi_pool_forward
roi_pool_backward = _impl.roi_pool_backward

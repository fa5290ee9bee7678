"""Dense tensors with tape-based reverse-mode automatic differentiation.

Operations only record onto a :class:`Tape` when one is active and at least
one input requires a gradient. Outside a tape every op is a plain numpy
computation, which is what evaluation and finite differencing use.

Typical use::

    with Tape() as tape:
        loss = softmax_cross_entropy(model_logits, target)
    tape.backward(loss)
"""

from contextlib import contextmanager

import numpy as np

from contextcnn import kernels


class DimensionError(ValueError):
    """Operand shapes are incompatible with an operation."""


class ContractError(RuntimeError):
    """A documented precondition of an operation was violated."""


_state = {"dtype": np.float32, "debug": False}
_tapes = []


def get_default_dtype():
    return _state["dtype"]


def set_default_dtype(dtype):
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _state["dtype"] = dtype


@contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    old = _state["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = old


def debug_enabled():
    return _state["debug"]


@contextmanager
def debug_mode(enabled=True):
    """Check every forward result for NaN/Inf while active."""
    old = _state["debug"]
    _state["debug"] = enabled
    try:
        yield
    finally:
        _state["debug"] = old


class Tensor:
    """An n-dimensional float array that can take part in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = _state["dtype"]
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __len__(self):
        return self.shape[0]

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value), dtype=dtype)


class Tape:
    """Ordered record of differentiable operations for one forward pass."""

    def __init__(self):
        self.entries = []

    def __enter__(self):
        _tapes.append(self)
        return self

    def __exit__(self, *exc):
        _tapes.remove(self)
        return False

    def __len__(self):
        return len(self.entries)

    def record(self, out, parents, backward):
        self.entries.append((out, parents, backward))

    def backward(self, loss, accumulate=False):
        """Propagate d(loss)/d(.) to every reachable leaf with requires_grad.

        The tape is cleared afterwards. With ``accumulate=False`` (default)
        each reached leaf's ``grad`` is overwritten, otherwise added to.
        """
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        produced = {id(out) for out, _, _ in self.entries}
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        if id(loss) not in produced and loss.requires_grad:
            leaves[id(loss)] = loss
        for out, parents, fn in reversed(self.entries):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
                if key not in produced:
                    leaves[key] = parent
        for key, leaf in leaves.items():
            g = np.asarray(grads[key], dtype=leaf.dtype).reshape(leaf.shape)
            if accumulate and leaf.grad is not None:
                leaf.grad = leaf.grad + g
            else:
                leaf.grad = np.array(g, copy=True)
        self.entries = []


def active_tape():
    return _tapes[-1] if _tapes else None


def from_op(data, parents, backward):
    """Wrap an op result; record it on the active tape if gradients are needed.

    ``backward`` maps the output gradient to a tuple with one entry (array or
    None) per parent.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = False
    if _state["debug"] and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced in forward pass")
    if _tapes and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _tapes[-1].record(out, parents, backward)
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _pair(a, b):
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    return a, b


def add(a, b):
    a, b = _pair(a, b)
    return from_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _pair(a, b)
    return from_op(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _pair(a, b)
    return from_op(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def matmul(a, b):
    """2-D matrix product with gradients for both operands."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return from_op(a.data @ b.data, (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g))


def dense(x, weight, bias=None):
    """Affine map ``x @ weight.T + bias`` for x of shape (N, D), weight (H, D)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is None:
        return from_op(out, (x, weight), lambda g: (g @ weight.data, g.T @ x.data))
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"dense: bias {bias.shape} does not match weight {weight.shape}")
    out += bias.data
    return from_op(out, (x, weight, bias),
                   lambda g: (g @ weight.data, g.T @ x.data, g.sum(axis=0)))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x):
    s = _sigmoid(x.data)
    return from_op(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x):
    t = np.tanh(x.data)
    return from_op(t, (x,), lambda g: (g * (1.0 - t * t),))


def relu(x):
    mask = x.data > 0
    return from_op(x.data * mask, (x,), lambda g: (g * mask,))


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def apply_activation(x, kind):
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def reshape(x, shape):
    old = x.shape
    return from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def getitem(x, index):
    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return from_op(np.ascontiguousarray(x.data[index]), (x,), backward)


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat of an empty list")
    sizes = [t.shape[axis] for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum(sizes)[:-1]
    return from_op(data, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def tsum(x, axis=None):
    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return from_op(np.asarray(x.data.sum(axis=axis)), (x,), backward)


def mean(x, axis=None):
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return from_op(np.asarray(x.data.mean(axis=axis)), (x,), backward)


def softmax(logits, axis=-1):
    """Plain numpy softmax with max subtraction (not recorded on the tape)."""
    z = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, target):
    """Mean negative log-likelihood of ``target`` under softmax(logits).

    ``logits`` is (K,) with an int target, or (N, K) with N targets.
    """
    single = logits.ndim == 1
    z = logits.data[None, :] if single else logits.data
    k = z.shape[1]
    tgt = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if tgt.shape != (z.shape[0],):
        raise DimensionError(f"softmax_cross_entropy: {tgt.shape[0]} targets for {z.shape[0]} rows")
    if np.any(tgt < 0) or np.any(tgt >= k):
        raise IndexError(f"target {target} out of range for {k} classes")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = np.mean(logsum - shifted[rows, tgt])

    def backward(g):
        p = np.exp(shifted - logsum[:, None])
        p[rows, tgt] -= 1.0
        p *= g / z.shape[0]
        return (p[0] if single else p,)

    return from_op(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def conv2d(x, kernels_, stride=1, pad=0, bias=None):
    """Zero-padded 2-D cross-correlation.

    ``x`` is (C, H, W) or batched (N, C, H, W); ``kernels_`` is (C_out, C_in, k, k).
    """
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or kernels_.ndim != 4:
        raise DimensionError(f"conv2d: bad ranks {x.shape}, {kernels_.shape}")
    n, c, h, w = xd.shape
    c_out, c_in, k, k2 = kernels_.shape
    if c != c_in or k != k2:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with kernels {kernels_.shape}")
    if stride < 1:
        raise DimensionError(f"conv2d: stride must be >= 1, got {stride}")
    if k > h + 2 * pad or k > w + 2 * pad:
        raise DimensionError(f"conv2d: kernel {k}x{k} larger than padded input {x.shape} (pad {pad})")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    cols = kernels.im2col(np.ascontiguousarray(xd), k, stride, pad)  # (n, ckk, L)
    flat = cols.transpose(1, 0, 2).reshape(c * k * k, n * ho * wo)
    wmat = kernels_.data.reshape(c_out, -1)
    out = wmat @ flat
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(c_out, n, ho, wo).transpose(1, 0, 2, 3))
    if single:
        out = out[0]

    def backward(g):
        g4 = g[None] if single else g
        gmat = g4.transpose(1, 0, 2, 3).reshape(c_out, -1)
        gw = (gmat @ flat.T).reshape(kernels_.shape)
        gcols = (wmat.T @ gmat).reshape(c * k * k, n, ho * wo).transpose(1, 0, 2)
        gx = kernels.col2im(np.ascontiguousarray(gcols), c, h, w, k, stride, pad)
        gx = gx[0] if single else gx
        if bias is None:
            return gx, gw
        return gx, gw, gmat.sum(axis=1)

    parents = (x, kernels_) if bias is None else (x, kernels_, bias)
    return from_op(out, parents, backward)

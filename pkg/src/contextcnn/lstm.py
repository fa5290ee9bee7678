"""Two-layer LSTM over confidence-ordered object features.

Gate weights follow the column-vector convention ``W x``: input-to-hidden
matrices are (hidden, input), hidden-to-hidden are (hidden, hidden).
The cell update is the standard one,
``c_t = f_t * c_{t-1} + i_t * tanh(W^x_c x_t + W^h_c h_{t-1} + b_c)``.
"""

from dataclasses import dataclass

import numpy as np

from contextcnn.tensor import (
    ContractError,
    DimensionError,
    Tensor,
    concat,
    debug_enabled,
    dense,
    get_default_dtype,
    mul,
    reshape,
    sigmoid,
    tanh,
)

GATES = ("i", "f", "o", "c")


def he_normal(rng, shape, fan_in, dtype=None):
    dtype = dtype or get_default_dtype()
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


@dataclass
class LstmParams:
    """Input, forget, output and memory-cell gate parameters of one layer."""

    Wx_i: Tensor
    Wh_i: Tensor
    b_i: Tensor
    Wx_f: Tensor
    Wh_f: Tensor
    b_f: Tensor
    Wx_o: Tensor
    Wh_o: Tensor
    b_o: Tensor
    Wx_c: Tensor
    Wh_c: Tensor
    b_c: Tensor

    def __post_init__(self):
        hidden, inp = self.Wx_i.shape
        for g in GATES:
            wx, wh, b = self.gate(g)
            if wx.shape != (hidden, inp):
                raise DimensionError(f"W^x_{g} has shape {wx.shape}, expected {(hidden, inp)}")
            if wh.shape != (hidden, hidden):
                raise DimensionError(f"W^h_{g} has shape {wh.shape}, expected {(hidden, hidden)}")
            if b.shape != (hidden,):
                raise DimensionError(f"b_{g} has shape {b.shape}, expected {(hidden,)}")

    @classmethod
    def init(cls, input_dim, hidden, rng, forget_bias=False, dtype=None):
        """He-normal gate matrices and zero biases (optionally forget bias 1)."""
        dtype = dtype or get_default_dtype()
        fields = {}
        for g in GATES:
            fields[f"Wx_{g}"] = Tensor(he_normal(rng, (hidden, input_dim), input_dim, dtype), requires_grad=True)
            fields[f"Wh_{g}"] = Tensor(he_normal(rng, (hidden, hidden), hidden, dtype), requires_grad=True)
            bias = np.full(hidden, 1.0 if (forget_bias and g == "f") else 0.0, dtype=dtype)
            fields[f"b_{g}"] = Tensor(bias, requires_grad=True)
        return cls(**fields)

    @property
    def input_dim(self):
        return self.Wx_i.shape[1]

    @property
    def hidden(self):
        return self.Wx_i.shape[0]

    def gate(self, g):
        return getattr(self, f"Wx_{g}"), getattr(self, f"Wh_{g}"), getattr(self, f"b_{g}")

    def named_tensors(self, prefix=""):
        return {prefix + name: getattr(self, name) for name in self.__dataclass_fields__}

    def stacked(self):
        """Concatenate the four gates into (4H, D), (4H, H) and (4H,) tensors."""
        wx = concat([self.gate(g)[0] for g in GATES], axis=0)
        wh = concat([self.gate(g)[1] for g in GATES], axis=0)
        b = concat([self.gate(g)[2] for g in GATES], axis=0)
        return wx, wh, b


@dataclass
class LstmState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, batch, hidden, dtype=None):
        dtype = dtype or get_default_dtype()
        return cls(Tensor(np.zeros((batch, hidden), dtype=dtype)),
                   Tensor(np.zeros((batch, hidden), dtype=dtype)))


def _check_gates(i, f, o, c_tilde, h):
    for name, t, lo in (("i", i, 0.0), ("f", f, 0.0), ("o", o, 0.0), ("c~", c_tilde, -1.0), ("h", h, -1.0)):
        if np.any(t.data < lo) or np.any(t.data > 1.0):
            raise FloatingPointError(f"LSTM activation {name} left its range")


def _cell(pre_x, prev, wh, hidden):
    pre = pre_x + dense(prev.h, wh)
    i = sigmoid(pre[:, :hidden])
    f = sigmoid(pre[:, hidden:2 * hidden])
    o = sigmoid(pre[:, 2 * hidden:3 * hidden])
    c_tilde = tanh(pre[:, 3 * hidden:])
    c = mul(f, prev.c) + mul(i, c_tilde)
    h = mul(o, tanh(c))
    if debug_enabled():
        _check_gates(i, f, o, c_tilde, h)
    return LstmState(h, c)


def lstm_step(x_t, prev, params):
    """One LSTM update. ``x_t`` is (D,) or a batch (N, D); state matches."""
    single = x_t.ndim == 1
    x = reshape(x_t, (1, -1)) if single else x_t
    if x.shape[1] != params.input_dim:
        raise DimensionError(f"lstm_step: input width {x.shape[1]} != {params.input_dim}")
    h_prev, c_prev = prev.h, prev.c
    if single:
        h_prev, c_prev = reshape(h_prev, (1, -1)), reshape(c_prev, (1, -1))
    if h_prev.shape != (x.shape[0], params.hidden) or c_prev.shape != h_prev.shape:
        raise DimensionError(f"lstm_step: state {h_prev.shape} does not match hidden size {params.hidden}")
    wx, wh, b = params.stacked()
    state = _cell(dense(x, wx, b), LstmState(h_prev, c_prev), wh, params.hidden)
    if single:
        return LstmState(reshape(state.h, (-1,)), reshape(state.c, (-1,)))
    return state


def _run_layer(inputs, params):
    n, t_len, d = inputs.shape
    if d != params.input_dim:
        raise DimensionError(f"LSTM layer expects width {params.input_dim}, got {d}")
    hidden = params.hidden
    wx, wh, b = params.stacked()
    pre_x = reshape(dense(reshape(inputs, (n * t_len, d)), wx, b), (n, t_len, 4 * hidden))
    state = LstmState.zeros(n, hidden, dtype=inputs.dtype)
    hs = []
    for t in range(t_len):
        state = _cell(pre_x[:, t, :], state, wh, hidden)
        hs.append(reshape(state.h, (n, 1, hidden)))
    return concat(hs, axis=1)


def lstm_sequence(inputs, layer1, layer2):
    """Run both layers from zero state; returns layer-2 hidden states.

    ``inputs`` is (T, D) or batched (N, T, D); the output is (T, H2) or
    (N, T, H2) in the same timestep order.
    """
    single = inputs.ndim == 2
    x = reshape(inputs, (1, *inputs.shape)) if single else inputs
    if x.ndim != 3:
        raise DimensionError(f"lstm_sequence expects (N, T, D) inputs, got {inputs.shape}")
    if x.shape[1] < 1:
        raise ContractError("lstm_sequence needs at least one timestep")
    out = _run_layer(_run_layer(x, layer1), layer2)
    return reshape(out, out.shape[1:]) if single else out


def assemble_sequence_feature(outputs, mode="concat_all"):
    """Turn (N, T, H) sequence outputs into (N, T*H) or (N, H) features."""
    single = outputs.ndim == 2
    x = reshape(outputs, (1, *outputs.shape)) if single else outputs
    n, t_len, hidden = x.shape
    if t_len < 1:
        raise ContractError("cannot assemble a feature from zero timesteps")
    if mode == "concat_all":
        feat = reshape(x, (n, t_len * hidden))
    elif mode == "last_step":
        feat = x[:, t_len - 1, :]
    else:
        raise ValueError(f"unknown assembly mode {mode!r}")
    return reshape(feat, (feat.shape[1],)) if single else feat

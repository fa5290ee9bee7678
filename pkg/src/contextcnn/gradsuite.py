"""The 64-bit gradient-check suite run by ``contextcnn gradcheck`` and the tests."""

import numpy as np

from contextcnn.backbone import BackboneConfig
from contextcnn.boxes import Box
from contextcnn.gradcheck import grad_check
from contextcnn.lstm import LstmParams, LstmState, assemble_sequence_feature, lstm_sequence, lstm_step
from contextcnn.model import Model, ModelConfig
from contextcnn.roi import RoiSpec, map_box_to_feature, roi_pool
from contextcnn.tensor import Tensor, conv2d, dense, mul, precision, softmax_cross_entropy, tsum

EPS = 1e-5
TOLERANCE = 1e-4


def _t(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def check_conv2d(rng):
    x, k, b = _t(rng, 2, 2, 6, 5), _t(rng, 3, 2, 3, 3), _t(rng, 3)
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    proj = Tensor(rng.standard_normal(conv2d(x, k, stride, pad, b).shape), dtype=np.float64)
    return grad_check(lambda: tsum(mul(conv2d(x, k, stride, pad, b), proj)), [x, k, b], EPS)


def check_dense(rng):
    x, w, b = _t(rng, 4, 5), _t(rng, 3, 5), _t(rng, 3)
    proj = Tensor(rng.standard_normal((4, 3)), dtype=np.float64)
    return grad_check(lambda: tsum(mul(dense(x, w, b), proj)), [x, w, b], EPS)


def check_softmax_cross_entropy(rng):
    logits = _t(rng, 5)
    target = int(rng.integers(5))
    return grad_check(lambda: softmax_cross_entropy(logits, target), [logits], EPS)


def check_roi_pool(rng):
    # distinct values 0.01 apart keep every bin maximum unique under +/- EPS
    m, h, w = 2, 7, 6
    vals = rng.permutation(m * h * w).astype(np.float64) * 0.01
    feats = Tensor(vals.reshape(m, h, w), requires_grad=True, dtype=np.float64)
    x0, y0 = int(rng.integers(0, 3)), int(rng.integers(0, 3))
    box = Box(x0, y0, x0 + int(rng.integers(2, 4)), y0 + int(rng.integers(2, 5)))
    spec = RoiSpec(box, pooled_h=int(rng.integers(1, 4)), pooled_w=int(rng.integers(1, 4)))
    proj = Tensor(rng.standard_normal((m, spec.pooled_h, spec.pooled_w)), dtype=np.float64)
    return grad_check(lambda: tsum(mul(roi_pool(feats, spec), proj)), [feats], EPS)


def _lstm_params(rng, d, h):
    params = LstmParams.init(d, h, rng, dtype=np.float64)
    for name in params.__dataclass_fields__:
        if name.startswith("b_"):
            getattr(params, name).data[:] = rng.standard_normal(h) * 0.5
    return params


def check_lstm_step(rng):
    d, h = 4, 3
    params = _lstm_params(rng, d, h)
    x = _t(rng, 2, d)
    h0, c0 = _t(rng, 2, h), _t(rng, 2, h)
    tensors = [x, h0, c0, *params.named_tensors().values()]

    def fn():
        state = lstm_step(x, LstmState(h0, c0), params)
        return tsum(state.h) + tsum(mul(state.c, 0.5))

    return grad_check(fn, tensors, EPS)


def check_lstm_sequence(rng):
    t_len = int(rng.integers(1, 6))
    d, h1, h2 = 5, int(rng.integers(2, 9)), int(rng.integers(2, 9))
    l1, l2 = _lstm_params(rng, d, h1), _lstm_params(rng, h1, h2)
    x = _t(rng, 2, t_len, d)
    tensors = [x, *l1.named_tensors().values(), *l2.named_tensors().values()]
    return grad_check(lambda: tsum(lstm_sequence(x, l1, l2)), tensors, EPS)


def _bin_margins(fmap, cell, pooled):
    """Smallest gap between the largest and runner-up value over all RoI bins."""
    gaps = [np.inf]
    h, w = cell.height, cell.width
    for i in range(pooled):
        r0, r1 = cell.row0 + (i * h) // pooled, cell.row0 - (-(i + 1) * h // pooled)
        for j in range(pooled):
            c0, c1 = cell.col0 + (j * w) // pooled, cell.col0 - (-(j + 1) * w // pooled)
            vals = np.sort(fmap[:, r0:r1, c0:c1].reshape(fmap.shape[0], -1), axis=1)
            if vals.shape[1] > 1:
                gaps.append((vals[:, -1] - vals[:, -2]).min())
    return min(gaps)


def _away_from_kinks(model, image, boxes, margin):
    """True when every relu input and RoI bin maximum is ``margin`` clear of a kink."""
    cfg = model.config
    x = image.data[None]
    for idx, (_, stride) in enumerate(cfg.backbone.blocks):
        pre = conv2d(Tensor(x), model.params[f"backbone.conv{idx}.weight"], stride, 1,
                     model.params[f"backbone.conv{idx}.bias"]).data
        if np.abs(pre).min() < margin:
            return False
        x = np.maximum(pre, 0)
    fmap = x[0]
    for box in model.prepare_boxes(boxes):
        cell = map_box_to_feature(box, cfg.backbone.spatial_scale, *fmap.shape[1:])
        if _bin_margins(fmap, cell, cfg.pooled_size) < margin:
            return False
    feat = assemble_sequence_feature(model.sequence_outputs(image.reshape(1, *image.shape), [boxes]),
                                     "concat_all")
    hidden = dense(feat, model.params["head.fc1.weight"], model.params["head.fc1.bias"]).data
    return bool(np.abs(hidden).min() >= margin)


def check_base_model(rng):
    cfg = ModelConfig(kind="base", backbone=BackboneConfig(blocks=((3, 2), (4, 1)), image_size=8),
                      num_boxes=2, pooled_size=2, hidden1=2, hidden2=2, dense_hidden=5, num_classes=3)
    model = Model.init(cfg, rng, dtype=np.float64)
    image = Tensor(rng.random((1, 8, 8)), dtype=np.float64)
    boxes = [Box(0, 0, 6, 5, 0.9), Box(3, 2, 8, 8, 0.4)]
    # A well-conditioned random point. Fan-in scaled weights, small biases,
    # open i/f/o gates and positive conv biases keep gradient entries above
    # the ~1e-11 finite-difference noise of an O(1) loss; redraw until no
    # relu input or pooled maximum sits within 100 eps of its kink.
    for _ in range(100):
        for name, t in model.params.items():
            if t.ndim > 1:
                t.data[...] = rng.standard_normal(t.shape) / np.sqrt(t.size // t.shape[0])
            else:
                t.data[...] = rng.standard_normal(t.shape) * 0.1
                if name.rsplit(".", 1)[-1] in ("b_i", "b_f", "b_o"):
                    t.data += 1.0
                elif name.startswith("backbone."):
                    t.data += 0.5
        if _away_from_kinks(model, image, boxes, 100 * EPS):
            break
    else:
        raise RuntimeError("no kink-free parameter point found")
    proj = Tensor(rng.standard_normal(cfg.num_classes), dtype=np.float64)
    return grad_check(lambda: tsum(mul(model.forward(image, boxes), proj)), model.parameters(), EPS)


CHECKS = {
    "conv2d": check_conv2d,
    "dense": check_dense,
    "softmax_cross_entropy": check_softmax_cross_entropy,
    "roi_pool": check_roi_pool,
    "lstm_step": check_lstm_step,
    "lstm_sequence": check_lstm_sequence,
    "base_model": check_base_model,
}


def run_suite(seed=0, repeats=1, names=None):
    """``{name: worst relative error}`` over ``repeats`` seeds per check."""
    results = {}
    with precision(np.float64):
        for name in names or CHECKS:
            worst = 0.0
            for r in range(repeats):
                worst = max(worst, CHECKS[name](np.random.default_rng([seed, r])))
            results[name] = worst
    return results

"""Training loop, evaluation, and seeded proposal generation."""

import csv
import zlib
from dataclasses import dataclass, field

import numpy as np

from contextcnn.backbone import BackboneConfig
from contextcnn.data import stack_images
from contextcnn.model import USES_BOXES, Model, ModelConfig
from contextcnn.optim import SgdState, sgd_step
from contextcnn.proposals import adversarial_random_boxes, objectness_proposals, oracle_proposals
from contextcnn.tensor import Tape, Tensor, softmax

PROPOSAL_MODES = ("objectness", "oracle", "random")


def derive_seed(seed, name):
    """Named child seed, stable across runs and platforms."""
    return int(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]).generate_state(1)[0])


def make_proposals(samples, mode, num_boxes, seed, jitter=0.0, nms_iou=0.5):
    """One score-sorted box list per sample, reproducible from ``seed``."""
    if mode not in PROPOSAL_MODES:
        raise ValueError(f"unknown proposal mode {mode!r}; choose from {PROPOSAL_MODES}")
    out = []
    for i, s in enumerate(samples):
        child = derive_seed(seed, f"proposals/{i}")
        if mode == "oracle":
            out.append(oracle_proposals(s, num_boxes, jitter, child))
        elif mode == "objectness":
            out.append(objectness_proposals(s.image, num_boxes, nms_iou))
        else:
            dims = s.image.shape[1:]
            out.append(adversarial_random_boxes(s.gt_boxes, dims, num_boxes, rng_seed=child))
    return out


def predict_proba(model, images, boxes, batch_size=100):
    """Softmax probabilities (N, K) without recording a tape."""
    probs = []
    for start in range(0, len(images), batch_size):
        chunk = Tensor(images[start:start + batch_size])
        b = None if boxes is None else boxes[start:start + batch_size]
        probs.append(softmax(model.logits(chunk, b)))
    return np.concatenate(probs, axis=0)


@dataclass
class EvalResult:
    accuracy: float
    predictions: np.ndarray
    confusion: np.ndarray = field(repr=False)


def evaluate(model, samples, boxes, images=None, batch_size=100):
    images = stack_images(samples) if images is None else images
    labels = np.array([s.class_id for s in samples])
    pred = predict_proba(model, images, boxes, batch_size).argmax(axis=1)
    k = model.config.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    return EvalResult(float((pred == labels).mean()), pred, confusion)


def train(model, samples, boxes, cfg, val=None, log_path=None, eval_every=0):
    """Run ``cfg.iterations`` momentum-SGD steps on mini-batches.

    ``val`` is an optional (samples, boxes) pair evaluated every
    ``eval_every`` iterations and after the last one. The log CSV
    (iteration, lr, loss, val_accuracy) is flushed after each line.
    """
    images = stack_images(samples)
    labels = np.array([s.class_id for s in samples], dtype=np.int64)
    val_images = stack_images(val[0]) if val else None
    rng = np.random.default_rng(derive_seed(cfg.seed, "batches"))
    state = SgdState(lr=cfg.lr, decay=cfg.decay, momentum=cfg.momentum)
    order = np.empty(0, dtype=np.int64)
    history = []
    log_file = open(log_path, "w", newline="\n") if log_path else None
    writer = csv.writer(log_file, lineterminator="\n") if log_file else None
    if writer:
        writer.writerow(["iteration", "lr", "loss", "val_accuracy"])
    try:
        for it in range(cfg.iterations):
            if cfg.phase2_at and it == cfg.phase2_at:
                state.switch_phase(cfg.phase2_lr, cfg.phase2_decay)
            if order.size < cfg.batch_size:
                order = np.concatenate([order, rng.permutation(len(samples))])
            idx, order = order[:cfg.batch_size], order[cfg.batch_size:]
            batch_boxes = None if boxes is None else [boxes[i] for i in idx]
            with Tape() as tape:
                loss = model.batch_loss(Tensor(images[idx]), batch_boxes, labels[idx])
            tape.backward(loss)
            lr = sgd_step(model.params, state)
            val_acc = ""
            last = it == cfg.iterations - 1
            if val and ((eval_every and (it + 1) % eval_every == 0) or last):
                val_acc = evaluate(model, val[0], val[1], val_images).accuracy
            history.append((it, lr, loss.item(), val_acc))
            if writer:
                writer.writerow([it, repr(lr), repr(loss.item()), "" if val_acc == "" else repr(val_acc)])
                log_file.flush()
    finally:
        if log_file:
            log_file.close()
    return history


def model_config_for(spec, variant="base", num_boxes=10, pooled_size=7, hidden1=128, hidden2=64):
    """Model geometry matching a dataset's image size, channels and class count."""
    backbone = BackboneConfig(in_channels=spec.channels, image_size=spec.image_size)
    return ModelConfig(kind=variant, backbone=backbone, num_boxes=num_boxes, pooled_size=pooled_size,
                       hidden1=hidden1, hidden2=hidden2, num_classes=spec.num_classes)


def child_seeds(seed):
    """The named seeds every run derives from its single ``seed``."""
    return {name: derive_seed(seed, name) for name in ("init", "proposals/train", "proposals/val", "batches")}


@dataclass
class FitResult:
    model: Model
    history: list
    val: EvalResult | None
    seeds: dict


def fit(train_samples, val_samples, cfg, model_config, log_path=None, eval_every=0):
    """Initialize, propose, train and evaluate one run, all seeded from ``cfg.seed``.

    ``val_samples`` may be empty, in which case ``FitResult.val`` is None.
    """
    seeds = child_seeds(cfg.seed)
    model = Model.init(model_config, seeds["init"])
    tr_boxes = va_boxes = None
    if model_config.kind in USES_BOXES:
        n = model_config.num_boxes
        tr_boxes = make_proposals(train_samples, cfg.proposal_mode, n, seeds["proposals/train"])
        if val_samples:
            va_boxes = make_proposals(val_samples, cfg.proposal_mode, n, seeds["proposals/val"])
    val = (val_samples, va_boxes) if val_samples else None
    history = train(model, train_samples, tr_boxes, cfg, val=val, log_path=log_path, eval_every=eval_every)
    result = evaluate(model, val_samples, va_boxes) if val_samples else None
    return FitResult(model, history, result, seeds)

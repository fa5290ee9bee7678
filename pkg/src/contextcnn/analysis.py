"""Occlusion significance, timestep degradation, and feature export.

Occlusion blacks out (sets to 0) the pixels of one proposal box. The
proposal list itself is frozen: the same boxes are fed to the model before
and after occlusion, so any change is due to the missing image content.
"""

import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from contextcnn.data import encode_pnm, stack_images
from contextcnn.tensor import ContractError, Tensor, softmax


class ClampWarning(UserWarning):
    pass


def _pixel_bounds(box, height, width):
    x0, y0 = math.floor(box.x0), math.floor(box.y0)
    x1, y1 = math.ceil(box.x1), math.ceil(box.y1)
    clamped = (max(x0, 0), max(y0, 0), min(x1, width), min(y1, height))
    if clamped != (x0, y0, x1, y1):
        warnings.warn(f"box {box.coords()} clamped to image bounds", ClampWarning, stacklevel=3)
    return clamped


def obscure(image, box):
    """Copy of a (C, H, W) or (H, W) image with the box's pixels set to 0."""
    out = np.array(image, copy=True)
    height, width = out.shape[-2:]
    x0, y0, x1, y1 = _pixel_bounds(box, height, width)
    if x1 > x0 and y1 > y0:
        out[..., y0:y1, x0:x1] = 0
    return out


def correct_class_score(model, image, boxes, class_id):
    logits = model.logits(Tensor(image[None]), None if boxes is None else [boxes])
    return float(softmax(logits)[0, class_id])


def significance(model, sample, boxes, t):
    """Drop in the correct-class softmax score when box ``t`` is blacked out."""
    if not 0 <= t < len(boxes):
        raise ContractError(f"timestep {t} outside 0..{len(boxes) - 1}")
    full = correct_class_score(model, sample.image, boxes, sample.class_id)
    hidden = correct_class_score(model, obscure(sample.image, boxes[t]), boxes, sample.class_id)
    return full - hidden


@dataclass
class ObscurationReport:
    sample_ids: list
    significance: np.ndarray  # (N, T)
    heatmap: np.ndarray  # (K, T) mean significance per true class and timestep
    curve: np.ndarray  # (T,) accuracy with box t occluded
    base_accuracy: float

    @property
    def accuracy_drop(self):
        return self.base_accuracy - self.curve

    def drop_trend(self):
        """Spearman correlation between timestep index and accuracy drop (nan if constant)."""
        drop = self.accuracy_drop
        if np.ptp(drop) == 0:
            return float("nan")
        return float(spearmanr(np.arange(1, len(drop) + 1), drop).statistic)


def timestep_degradation(model, samples, boxes, num_steps=None, batch_size=100):
    """Occlude each timestep's box in turn over a whole split."""
    num_steps = num_steps or model.config.num_boxes
    prepared = [model.prepare_boxes(b) for b in boxes]
    images = stack_images(samples)
    labels = np.array([s.class_id for s in samples])
    rows = np.arange(len(samples))
    k = model.config.num_classes

    def probs_for(imgs):
        out = []
        for start in range(0, len(imgs), batch_size):
            logits = model.logits(Tensor(imgs[start:start + batch_size]), prepared[start:start + batch_size])
            out.append(softmax(logits))
        return np.concatenate(out)

    full = probs_for(images)
    base_acc = float((full.argmax(1) == labels).mean())
    sig = np.zeros((len(samples), num_steps))
    curve = np.zeros(num_steps)
    for t in range(num_steps):
        occluded = np.stack([obscure(img, b[t]) for img, b in zip(images, prepared)])
        p = probs_for(occluded)
        sig[:, t] = full[rows, labels] - p[rows, labels]
        curve[t] = (p.argmax(1) == labels).mean()
    heatmap = np.zeros((k, num_steps))
    for c in range(k):
        members = labels == c
        if members.any():
            heatmap[c] = sig[members].mean(axis=0)
    ids = [s.name or str(i) for i, s in enumerate(samples)]
    return ObscurationReport(ids, sig, heatmap, curve, base_acc)


def heatmap_pgm(heatmap):
    """Row-normalized grayscale render (one pixel per cell) as P5 bytes."""
    m = np.asarray(heatmap, dtype=np.float64)
    lo = m.min(axis=1, keepdims=True)
    span = m.max(axis=1, keepdims=True) - lo
    norm = np.divide(m - lo, span, out=np.zeros_like(m), where=span > 0)
    return encode_pnm(np.floor(norm * 255 + 0.5).astype(np.uint8))


def export_features(model, samples, boxes, stage, t=None, batch_size=100):
    """Rows ``[class_id, sample_id, box_index, *features]``.

    ``roi_cnn`` yields one row per (sample, box) of RoI-pooled backbone
    features; ``lstm_t`` yields one row per sample with the layer-2 LSTM
    output at timestep ``t`` (0-based), tagged with box index ``t``.
    """
    if stage not in ("roi_cnn", "lstm_t"):
        raise ContractError(f"unknown feature stage {stage!r}")
    if stage == "lstm_t" and t is None:
        raise ContractError("stage lstm_t needs a timestep t")
    if stage == "lstm_t" and not 0 <= t < model.config.num_boxes:
        raise ContractError(f"timestep {t} outside 0..{model.config.num_boxes - 1}")
    images = stack_images(samples)
    rows = []
    for start in range(0, len(samples), batch_size):
        x = Tensor(images[start:start + batch_size])
        b = boxes[start:start + batch_size]
        if stage == "roi_cnn":
            feats = model.roi_features(x, b).data
        else:
            feats = model.sequence_outputs(x, b).data[:, t:t + 1, :]
        for j in range(feats.shape[0]):
            idx = start + j
            for box_index in range(feats.shape[1]):
                rows.append([samples[idx].class_id, idx, t if stage == "lstm_t" else box_index,
                             *feats[j, box_index].tolist()])
    return rows


def rows_to_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def report_csvs(report):
    """``(report.csv, heatmap.csv, curve.csv)`` text for an ObscurationReport."""
    rep = ["sample_id,t,significance\n"]
    for sid, row in zip(report.sample_ids, report.significance):
        rep.extend(f"{sid},{t},{v!r}\n" for t, v in enumerate(row.tolist()))
    heat = "".join(",".join(repr(v) for v in row) + "\n" for row in report.heatmap.tolist())
    curve = ["t,accuracy\n"] + [f"{t},{a!r}\n" for t, a in enumerate(report.curve.tolist())]
    return "".join(rep), heat, "".join(curve)

"""The four network variants compared in the LSTM ablation.

* ``base``: backbone -> RoI pool per box -> 2 LSTM layers -> all timesteps
  concatenated -> dense -> softmax.
* ``last_step``: as base, but only the final timestep feeds the head.
* ``dense_replace``: the LSTM layers become two per-box dense layers with
  shared weights; outputs are concatenated.
* ``plain_cnn``: backbone -> global average pooling -> dense -> softmax.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from contextcnn.backbone import KERNEL, BackboneConfig, backbone_forward, init_backbone
from contextcnn.boxes import is_sorted_by_score, pad_boxes
from contextcnn.checkpoint import load_checkpoint, save_checkpoint
from contextcnn.lstm import GATES, LstmParams, assemble_sequence_feature, he_normal, lstm_sequence
from contextcnn.roi import roi_pool_batch
from contextcnn.tensor import (
    ContractError,
    DimensionError,
    Tensor,
    as_tensor,
    dense,
    get_default_dtype,
    mean,
    relu,
    reshape,
    softmax_cross_entropy,
)

KINDS = ("base", "last_step", "dense_replace", "plain_cnn")
USES_BOXES = {"base", "last_step", "dense_replace"}


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "base"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    num_boxes: int = 10
    pooled_size: int = 7
    hidden1: int = 128
    hidden2: int = 64
    dense_hidden: int = 128
    num_classes: int = 4
    forget_bias: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown variant {self.kind!r}; choose from {KINDS}")
        if self.num_boxes < 1 or self.pooled_size < 1:
            raise ValueError("num_boxes and pooled_size must be positive")

    @property
    def roi_dim(self):
        return self.backbone.out_channels * self.pooled_size ** 2

    @property
    def feature_dim(self):
        """Width of the vector the classifier head consumes."""
        if self.kind in ("base", "dense_replace"):
            return self.num_boxes * self.hidden2
        if self.kind == "last_step":
            return self.hidden2
        return self.backbone.out_channels

    def to_meta(self):
        meta = {k: v for k, v in asdict(self).items() if k != "backbone"}
        bb = self.backbone
        meta["blocks"] = ";".join(f"{c}x{s}" for c, s in bb.blocks)
        meta["in_channels"] = bb.in_channels
        meta["image_size"] = bb.image_size
        return meta

    @classmethod
    def from_meta(cls, meta):
        blocks = tuple(tuple(int(v) for v in b.split("x")) for b in meta["blocks"].split(";") if b)
        bb = BackboneConfig(blocks=blocks, in_channels=int(meta["in_channels"]),
                            image_size=int(meta["image_size"]))
        return cls(kind=meta["kind"], backbone=bb, num_boxes=int(meta["num_boxes"]),
                   pooled_size=int(meta["pooled_size"]), hidden1=int(meta["hidden1"]),
                   hidden2=int(meta["hidden2"]), dense_hidden=int(meta["dense_hidden"]),
                   num_classes=int(meta["num_classes"]),
                   forget_bias=meta.get("forget_bias", "False") == "True")


def _dense_params(rng, out_dim, in_dim, dtype):
    return (Tensor(he_normal(rng, (out_dim, in_dim), in_dim, dtype), requires_grad=True),
            Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True))


def _lstm_from(params, prefix):
    return LstmParams(**{name[len(prefix):]: t for name, t in params.items() if name.startswith(prefix)})


class Model:
    """A variant's configuration plus its named parameter tensors."""

    def __init__(self, config, params):
        self.config = config
        self.params = params
        self.meta = {}
        if config.kind in ("base", "last_step"):
            self.lstm1 = _lstm_from(params, "lstm1.")
            self.lstm2 = _lstm_from(params, "lstm2.")

    @classmethod
    def init(cls, config, rng, dtype=None):
        dtype = dtype or get_default_dtype()
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(int(rng))
        params = {f"backbone.{k}": v for k, v in init_backbone(config.backbone, rng, dtype).items()}
        if config.kind in ("base", "last_step"):
            l1 = LstmParams.init(config.roi_dim, config.hidden1, rng, config.forget_bias, dtype)
            l2 = LstmParams.init(config.hidden1, config.hidden2, rng, config.forget_bias, dtype)
            params.update(l1.named_tensors("lstm1."))
            params.update(l2.named_tensors("lstm2."))
        elif config.kind == "dense_replace":
            w1, b1 = _dense_params(rng, config.hidden1, config.roi_dim, dtype)
            w2, b2 = _dense_params(rng, config.hidden2, config.hidden1, dtype)
            params.update({"ctx.fc1.weight": w1, "ctx.fc1.bias": b1,
                           "ctx.fc2.weight": w2, "ctx.fc2.bias": b2})
        w, b = _dense_params(rng, config.dense_hidden, config.feature_dim, dtype)
        params.update({"head.fc1.weight": w, "head.fc1.bias": b})
        w, b = _dense_params(rng, config.num_classes, config.dense_hidden, dtype)
        params.update({"head.fc2.weight": w, "head.fc2.bias": b})
        return cls(config, params)

    # -- parameters -------------------------------------------------------

    def parameters(self):
        return list(self.params.values())

    def parameter_counts(self):
        """Exact parameter totals per module prefix (backbone, lstm1, ...)."""
        counts = {}
        for name, t in self.params.items():
            module = name.split(".")[0]
            counts[module] = counts.get(module, 0) + t.size
        counts["total"] = sum(counts.values())
        return counts

    def save(self, path, meta=None):
        save_checkpoint(path, self.params, {**self.config.to_meta(), **(meta or {})})

    @classmethod
    def load(cls, path):
        arrays, meta = load_checkpoint(path)
        config = ModelConfig.from_meta(meta)
        model = cls.init(config, np.random.default_rng(0), dtype=np.float32)
        if set(arrays) != set(model.params):
            missing = set(model.params) ^ set(arrays)
            raise ValueError(f"checkpoint tensors do not match the {config.kind} layout: {sorted(missing)}")
        for name, t in model.params.items():
            if arrays[name].shape != t.shape:
                raise DimensionError(f"{name}: checkpoint shape {arrays[name].shape} != {t.shape}")
            t.data = arrays[name].copy()
        model.meta = meta
        return model

    # -- forward ----------------------------------------------------------

    def prepare_boxes(self, boxes):
        if not is_sorted_by_score(boxes):
            raise ContractError("boxes must be sorted by non-increasing score")
        return pad_boxes(boxes, self.config.num_boxes)

    def feature_maps(self, images):
        return backbone_forward(images, self.config.backbone, self.params_with_prefix("backbone."))

    def params_with_prefix(self, prefix):
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def roi_features(self, images, boxes_per_image, fmaps=None):
        """Flattened pooled features, (N, T, M*P*P)."""
        cfg = self.config
        fmaps = self.feature_maps(images) if fmaps is None else fmaps
        prepared = [self.prepare_boxes(b) for b in boxes_per_image]
        pooled = roi_pool_batch(fmaps, prepared, cfg.pooled_size, cfg.pooled_size,
                                cfg.backbone.spatial_scale)
        return reshape(pooled, (len(prepared), cfg.num_boxes, cfg.roi_dim))

    def sequence_outputs(self, images, boxes_per_image):
        """Layer-2 LSTM hidden states (N, T, H2); base and last_step only."""
        if self.config.kind not in ("base", "last_step"):
            raise ContractError(f"{self.config.kind} has no LSTM outputs")
        return lstm_sequence(self.roi_features(images, boxes_per_image), self.lstm1, self.lstm2)

    def _head(self, feat):
        p = self.params
        hidden = relu(dense(feat, p["head.fc1.weight"], p["head.fc1.bias"]))
        return dense(hidden, p["head.fc2.weight"], p["head.fc2.bias"])

    def logits(self, images, boxes_per_image=None):
        """Batched forward: images (N, C, H, W) -> logits (N, K)."""
        cfg = self.config
        images = as_tensor(images)
        fmaps = self.feature_maps(images)
        if cfg.kind == "plain_cnn":
            return self._head(mean(fmaps, axis=(2, 3)))
        if boxes_per_image is None:
            raise ContractError(f"{cfg.kind} needs proposal boxes")
        x = self.roi_features(images, boxes_per_image, fmaps)
        n = x.shape[0]
        if cfg.kind == "dense_replace":
            p = self.params
            flat = reshape(x, (n * cfg.num_boxes, cfg.roi_dim))
            h = relu(dense(flat, p["ctx.fc1.weight"], p["ctx.fc1.bias"]))
            h = relu(dense(h, p["ctx.fc2.weight"], p["ctx.fc2.bias"]))
            feat = reshape(h, (n, cfg.num_boxes * cfg.hidden2))
        else:
            seq = lstm_sequence(x, self.lstm1, self.lstm2)
            mode = "concat_all" if cfg.kind == "base" else "last_step"
            feat = assemble_sequence_feature(seq, mode)
        return self._head(feat)

    def forward(self, image, boxes=None):
        """Single image (C, H, W) -> logits (K,)."""
        image = as_tensor(image)
        batch = reshape(image, (1, *image.shape))
        out = self.logits(batch, None if boxes is None else [boxes])
        return reshape(out, (self.config.num_classes,))

    def loss(self, image, boxes, target):
        return softmax_cross_entropy(self.forward(image, boxes), target)

    def batch_loss(self, images, boxes_per_image, targets):
        return softmax_cross_entropy(self.logits(images, boxes_per_image), targets)


def forward(variant, image, boxes=None):
    return variant.forward(image, boxes)


def loss(variant, image, boxes, target):
    return variant.loss(image, boxes, target)


def analytic_parameter_count(config):
    """Parameter totals per module computed from the config alone."""
    bb = config.backbone
    counts = {"backbone": 0}
    c_in = bb.in_channels
    for c_out, _ in bb.blocks:
        counts["backbone"] += c_out * c_in * KERNEL * KERNEL + c_out
        c_in = c_out

    def lstm(d, h):
        return len(GATES) * (h * d + h * h + h)

    if config.kind in ("base", "last_step"):
        counts["lstm1"] = lstm(config.roi_dim, config.hidden1)
        counts["lstm2"] = lstm(config.hidden1, config.hidden2)
    elif config.kind == "dense_replace":
        counts["ctx"] = (config.hidden1 * config.roi_dim + config.hidden1
                         + config.hidden2 * config.hidden1 + config.hidden2)
    counts["head"] = (config.dense_hidden * config.feature_dim + config.dense_hidden
                      + config.num_classes * config.dense_hidden + config.num_classes)
    counts["total"] = sum(counts.values())
    return counts


VGG16_CONV = ((3, 64), (64, 64), (64, 128), (128, 128), (128, 256), (256, 256), (256, 256),
              (256, 512), (512, 512), (512, 512), (512, 512), (512, 512), (512, 512))


def full_width_parameter_counts(num_classes=10, num_boxes=10, pooled=7, hidden1=1024,
                                 hidden2=512, dense_hidden=512):
    """Totals at full scale: VGG16 trunk + (LSTM 1024/512 | dense 1024/512 | VGG16 fc head)."""
    trunk = sum(ci * co * 9 + co for ci, co in VGG16_CONV)
    roi_dim = 512 * pooled * pooled
    lstm = sum(4 * (h * d + h * h + h) for d, h in ((roi_dim, hidden1), (hidden1, hidden2)))
    dense_ctx = hidden1 * roi_dim + hidden1 + hidden2 * hidden1 + hidden2
    head = dense_hidden * num_boxes * hidden2 + dense_hidden + num_classes * dense_hidden + num_classes
    vgg_fc = roi_dim * 4096 + 4096 + 4096 * 4096 + 4096 + 4096 * num_classes + num_classes
    return {
        "base": trunk + lstm + head,
        "dense_replace": trunk + dense_ctx + head,
        "vgg16": trunk + vgg_fc,
    }

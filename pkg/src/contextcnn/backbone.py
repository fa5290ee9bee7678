"""Small trainable convolutional feature extractor."""

from dataclasses import dataclass

import numpy as np

from contextcnn.lstm import he_normal
from contextcnn.tensor import DimensionError, Tensor, conv2d, get_default_dtype, relu, reshape

KERNEL = 3
PAD = 1


@dataclass(frozen=True)
class BackboneConfig:
    """Stack of 3x3/pad-1 conv+relu blocks given as (out_channels, stride)."""

    blocks: tuple = ((16, 2), (32, 2), (32, 1))
    in_channels: int = 1
    image_size: int = 64

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(tuple(int(v) for v in b) for b in self.blocks))
        down = self.downsample
        if down & (down - 1):
            raise ValueError(f"downsample factor {down} is not a power of two")
        size = self.image_size
        for _, stride in self.blocks:
            if size % stride:
                raise ValueError(f"image size {self.image_size} not divisible through stride {stride}")
            size //= stride
        if size < 4:
            raise ValueError(f"feature map {size}x{size} is smaller than 4x4")

    @property
    def downsample(self):
        return int(np.prod([s for _, s in self.blocks])) if self.blocks else 1

    @property
    def feature_size(self):
        return self.image_size // self.downsample

    @property
    def out_channels(self):
        return self.blocks[-1][0] if self.blocks else self.in_channels

    @property
    def spatial_scale(self):
        return self.feature_size / self.image_size


def init_backbone(config, rng, dtype=None):
    """He-normal kernels and zero biases, keyed ``conv{i}.weight`` / ``conv{i}.bias``."""
    dtype = dtype or get_default_dtype()
    params = {}
    c_in = config.in_channels
    for idx, (c_out, _) in enumerate(config.blocks):
        fan_in = c_in * KERNEL * KERNEL
        params[f"conv{idx}.weight"] = Tensor(he_normal(rng, (c_out, c_in, KERNEL, KERNEL), fan_in, dtype),
                                             requires_grad=True)
        params[f"conv{idx}.bias"] = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        c_in = c_out
    return params


def backbone_forward(image, config, params):
    """Map (C, H, W) or (N, C, H, W) images to (…, M, fm, fm) feature maps."""
    single = image.ndim == 3
    x = reshape(image, (1, *image.shape)) if single else image
    if x.ndim != 4 or x.shape[1:] != (config.in_channels, config.image_size, config.image_size):
        raise DimensionError(
            f"backbone expects ({config.in_channels}, {config.image_size}, {config.image_size}) "
            f"images, got {image.shape}")
    for idx, (_, stride) in enumerate(config.blocks):
        x = relu(conv2d(x, params[f"conv{idx}.weight"], stride=stride, pad=PAD,
                        bias=params[f"conv{idx}.bias"]))
    return reshape(x, x.shape[1:]) if single else x

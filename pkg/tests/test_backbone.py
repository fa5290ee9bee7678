import numpy as np
import pytest

from contextcnn.backbone import BackboneConfig, backbone_forward, init_backbone
from contextcnn.gradcheck import grad_check
from contextcnn.tensor import DimensionError, Tensor, mul, tsum


def test_default_geometry():
    cfg = BackboneConfig()
    assert cfg.blocks == ((16, 2), (32, 2), (32, 1))
    assert (cfg.downsample, cfg.feature_size, cfg.out_channels) == (4, 16, 32)
    assert cfg.spatial_scale == 0.25
    out = backbone_forward(Tensor(np.random.default_rng(0).random((1, 64, 64))), cfg,
                           init_backbone(cfg, np.random.default_rng(1)))
    assert out.shape == (32, 16, 16)
    assert out.shape[1] / 64 == cfg.spatial_scale


def test_large_input_geometry():
    cfg = BackboneConfig(blocks=((2, 2), (2, 2), (2, 2), (2, 2)), image_size=512)
    assert cfg.downsample == 16 and cfg.spatial_scale == 1 / 16
    out = backbone_forward(Tensor(np.zeros((1, 512, 512))), cfg, init_backbone(cfg, np.random.default_rng(0)))
    assert out.shape == (2, 32, 32)


def test_zero_image_zero_bias_gives_zero_map():
    cfg = BackboneConfig()
    out = backbone_forward(Tensor(np.zeros((1, 64, 64))), cfg, init_backbone(cfg, np.random.default_rng(0)))
    assert not np.any(out.data)


def test_batch_matches_single():
    cfg = BackboneConfig()
    params = init_backbone(cfg, np.random.default_rng(0))
    imgs = np.random.default_rng(1).random((3, 1, 64, 64)).astype(np.float32)
    batched = backbone_forward(Tensor(imgs), cfg, params).data
    for n in range(3):
        np.testing.assert_array_equal(batched[n], backbone_forward(Tensor(imgs[n]), cfg, params).data)


@pytest.mark.parametrize("kwargs", [
    {"blocks": ((4, 3),), "image_size": 9},
    {"blocks": ((4, 2), (4, 2)), "image_size": 12},
    {"blocks": ((4, 2), (4, 2)), "image_size": 8},
])
def test_invalid_configs(kwargs):
    with pytest.raises(ValueError):
        BackboneConfig(**kwargs)


def test_size_mismatch():
    cfg = BackboneConfig()
    with pytest.raises(DimensionError):
        backbone_forward(Tensor(np.zeros((1, 32, 32))), cfg, init_backbone(cfg, np.random.default_rng(0)))


def test_two_block_gradient(f64):
    rng = np.random.default_rng(5)
    cfg = BackboneConfig(blocks=((3, 1), (2, 2)), image_size=8)
    params = init_backbone(cfg, rng, dtype=np.float64)
    for key, t in params.items():
        if key.endswith("bias"):
            t.data[:] = 0.3 + 0.1 * rng.standard_normal(t.shape)
    image = Tensor(rng.random((1, 8, 8)), requires_grad=True)
    proj = Tensor(rng.standard_normal((2, 4, 4)))
    err = grad_check(lambda: tsum(mul(backbone_forward(image, cfg, params), proj)),
                     [image, *params.values()], 1e-5)
    assert err < 1e-4

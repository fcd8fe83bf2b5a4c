import numpy as np
import pytest

from nasfas.cdn import VARIANTS, CdnConfig, build_cdn, forward_depth
from nasfas.losses import overall_depth_loss
from nasfas.nn import Adam, Conv2d, param_count
from nasfas.tensor import ConfigError, Tensor, no_grad

FULL_PARAMS = 2.25e6


@pytest.mark.parametrize("variant", VARIANTS)
def test_full_width_budget(variant):
    n = param_count(build_cdn(variant=variant, input_size=256))
    assert abs(n - FULL_PARAMS) / FULL_PARAMS <= 0.10


def test_variants_count_identically():
    counts = {param_count(build_cdn(variant=v)) for v in VARIANTS}
    assert len(counts) == 1


def test_single_conv_count():
    assert param_count(Conv2d(3, 64, 3, bias=True)) == 1792


def test_halved_widths_quarter_count():
    full = param_count(build_cdn())
    half = param_count(build_cdn(width=0.5))
    assert 3.6 < full / half < 4.4


def test_fused_channels_full_width():
    net = build_cdn(input_size=64)
    assert net.head[0].conv.weight.shape[1] == 384


def test_output_shape_256():
    net = build_cdn(variant="depthnet", input_size=256, width=0.0625)
    with no_grad():
        y = forward_depth(net, np.zeros((3, 256, 256), np.float32))
    assert y.shape == (32, 32)


@pytest.mark.parametrize("variant", VARIANTS)
def test_output_shape_64_and_finite(variant):
    net = build_cdn(variant=variant, width=0.125)
    with no_grad():
        y = net(Tensor(np.zeros((2, 3, 64, 64), np.float32)))
    assert y.shape == (2, 8, 8)
    assert np.isfinite(y.data).all()


def test_cdc_theta_zero_equals_vanilla(rng):
    a = build_cdn(CdnConfig(variant="cdn_cdc", theta=0.0, width=0.125, seed=3))
    b = build_cdn(CdnConfig(variant="depthnet", width=0.125, seed=3))
    b.load_state_dict({k.replace(".conv.conv.", ".conv.").replace("out.conv.", "out."): v
                       for k, v in a.state_dict().items()})
    x = Tensor(rng.uniform(size=(2, 3, 64, 64)))
    with no_grad():
        np.testing.assert_array_equal(a(x).data, b(x).data)


def test_gradient_reaches_stem(rng):
    net = build_cdn(variant="cdn_cdc", width=0.125)
    x = Tensor(rng.uniform(size=(2, 3, 64, 64)).astype(np.float32))
    target = rng.uniform(size=(2, 8, 8)).astype(np.float32)
    overall_depth_loss(net(x), target).backward()
    assert np.linalg.norm(net.stem.conv.weight.grad) > 0


@pytest.mark.parametrize("seed", range(5))
def test_one_step_decreases_loss(seed):
    r = np.random.default_rng(seed)
    net = build_cdn(variant="depthnet", width=0.125, seed=seed)
    x = Tensor(r.uniform(size=(4, 3, 64, 64)).astype(np.float32))
    target = np.zeros((4, 8, 8), np.float32)
    target[:2] = r.uniform(size=(2, 8, 8))
    opt = Adam(net.parameters(), lr=1e-4)
    loss = overall_depth_loss(net(x), target)
    before = loss.item()
    loss.backward()
    opt.step()
    with no_grad():
        after = overall_depth_loss(net(x), target).item()
    assert after < before


def test_bad_config():
    with pytest.raises(ConfigError):
        CdnConfig(input_size=60)
    with pytest.raises(ConfigError):
        CdnConfig(variant="resnet")

import numpy as np
import pytest

from cases import NETWORK_STEP, NETWORK_TOL, network_cases
from zonalseg.gradcheck import grad_check
from zonalseg.losses import dsc_loss
from zonalseg.models import (
    DEFAULT_LEVELS,
    PatchDiscriminator,
    Pix2PixGenerator,
    SegNet,
    UNet,
    build_model,
    build_pix2pix,
    channel_width,
    forward,
)
from zonalseg.tensor import ShapeError, Tensor, graph_ops, no_grad


def _input(n=1, size=32, seed=0):
    return Tensor(np.random.default_rng(seed).normal(size=(n, 1, size, size)).astype(np.float32))


def test_default_levels():
    assert DEFAULT_LEVELS == {"segnet": 5, "unet": 4, "pix2pix": 8, "discriminator": 5}
    assert SegNet(2).scaling_levels == 5 and UNet(2).scaling_levels == 4
    gen, disc = build_pix2pix(2)
    assert gen.scaling_levels == 8 and disc.scaling_levels == 5


def test_full_size_shapes_at_width_1():
    x = Tensor(np.zeros((1, 1, 256, 256), dtype=np.float32))
    with no_grad():
        for model, bottleneck in ((SegNet(1), (8, 8)), (UNet(1), (16, 16)), (Pix2PixGenerator(1), (1, 1))):
            model.eval()
            assert model(x).shape == (1, 1, 256, 256)
            assert model.bottleneck_shape[2:] == bottleneck
        disc = PatchDiscriminator(1)
        disc.eval()
        assert disc.input_channels == 2
        assert disc.judge(x, x).shape[2:] == (8, 8)


def test_segnet_pool_unpool_symmetry():
    model = SegNet(2, 5)
    ops = graph_ops(dsc_loss(model(_input()), np.zeros((1, 1, 32, 32))).loss)
    assert ops.count("max_pool_2x2") == ops.count("max_unpool_2x2") == 5


def test_unet_skip_channels():
    model = UNet(3, 4)
    model(_input())
    # deepest skip first: level l concatenates 2 * base * 2**l channels
    assert model.skip_channels == [2 * channel_width(3, l) for l in (3, 2, 1, 0)]


def test_channel_width_caps_at_eight_times_base():
    assert [channel_width(4, l) for l in range(6)] == [4, 8, 16, 32, 32, 32]


def test_input_shape_errors():
    with pytest.raises(ShapeError):
        UNet(2, 4)(_input(size=24))
    with pytest.raises(ShapeError):
        SegNet(2, 3)(Tensor(np.zeros((1, 2, 16, 16))))
    with pytest.raises(ShapeError):
        Pix2PixGenerator(2, 5)(_input(size=64))


def test_forward_modes_and_determinism():
    model = build_model("unet", 2, 2, seed=3)
    x = _input(n=4, size=16)
    a = forward(model, x, "eval")
    b = forward(model, x, "eval")
    assert a.shape == (4, 1, 16, 16) and a.is_leaf
    np.testing.assert_array_equal(a.data, b.data)
    assert not forward(model, x, "train").is_leaf


def test_zero_input_gives_finite_output():
    for arch, levels in (("segnet", 3), ("unet", 3), ("pix2pix", 4)):
        model = build_model(arch, 2, levels).eval()
        with no_grad():
            assert np.all(np.isfinite(model(Tensor(np.zeros((1, 1, 16, 16), np.float32))).data))


def test_segnet_final_layer_is_linear():
    model = SegNet(2, 2).eval()
    x = _input(size=16)
    with no_grad():
        base = model(x).data - model.classifier.bias.data[0]
        model.classifier.weight.data = model.classifier.weight.data * 3
        scaled = model(x).data - model.classifier.bias.data[0]
    np.testing.assert_allclose(scaled, 3 * base, rtol=1e-5, atol=1e-6)


def _conv_params(c_in, c_out, k, bias):
    return c_in * c_out * k * k + (c_out if bias else 0)


def test_unet_parameter_count_formula():
    b, L = 3, 2
    ch = [channel_width(b, l) for l in range(L + 1)]
    expected = _conv_params(1, ch[0], 3, False) + 2 * ch[0] + _conv_params(ch[0], ch[0], 3, False) + 2 * ch[0]
    for l in range(1, L + 1):
        expected += _conv_params(ch[l - 1], ch[l], 3, False) + _conv_params(ch[l], ch[l], 3, False) + 4 * ch[l]
        expected += _conv_params(ch[l], ch[l - 1], 2, True)
        expected += _conv_params(2 * ch[l - 1], ch[l - 1], 3, False) + _conv_params(ch[l - 1], ch[l - 1], 3, False)
        expected += 4 * ch[l - 1]
    expected += _conv_params(ch[0], 1, 3, True)
    assert UNet(b, L).parameter_count() == expected


def test_doubling_width_roughly_quadruples_parameters():
    for arch in ("segnet", "unet"):
        ratio = build_model(arch, 8, 3).parameter_count() / build_model(arch, 4, 3).parameter_count()
        assert 3.5 < ratio < 4.0


def test_every_parameter_receives_gradient():
    rng = np.random.default_rng(0)
    y = (rng.random((2, 1, 16, 16)) > 0.5).astype(np.float32)
    for arch, levels in (("segnet", 3), ("unet", 3), ("pix2pix", 4)):
        model = build_model(arch, 2, levels, seed=1)
        dsc_loss(model(_input(n=2, size=16)), y).backward()
        dead = [n for n, p in model.parameters().items() if p.grad is None or not np.any(p.grad)]
        assert not dead, f"{arch}: {dead}"


@pytest.mark.parametrize("name", sorted(network_cases()))
def test_network_gradients(name):
    fn, wrt = network_cases()[name]
    report = grad_check(fn, wrt, tol=NETWORK_TOL, step=NETWORK_STEP, max_entries=6)
    assert report.passed, str(report)


def test_module_naming_and_buffers():
    model = UNet(2, 1)
    names = list(model.parameters())
    assert "encoder.0.first.conv.weight" in names
    assert all(n.endswith(("running_mean", "running_var")) for n in model.buffers())
    model.zero_grad()
    assert all(np.all(p.grad == 0) for p in model.parameters().values())

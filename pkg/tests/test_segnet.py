import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gliofuse.optim import dice_loss, one_hot
from gliofuse.segnet import (UnetSpec, build_unet, default_unet_spec, layer_names, segment_volume,
                             unet_forward)
from gliofuse.tensor import grad_check, precision


def _channels(spec):
    return {name: (cout, cin) for name, cout, cin, _ in layer_names(spec)}


def test_channel_ladder_doubles():
    ch = _channels(UnetSpec(depth=3, base_channels=16))
    assert [ch[f"enc{i}.conv2"][0] for i in range(3)] == [16, 32, 64]
    assert ch["mid.conv2"][0] == 128


def test_decoder_sees_concatenated_channels():
    ch = _channels(UnetSpec(depth=3, base_channels=16))
    assert ch["dec2.conv1"][1] == 64 + 64
    assert ch["head"] == (4, 16)


def test_parameter_shapes_follow_spec():
    spec = UnetSpec(spatial_rank=3, depth=2, base_channels=4)
    model = build_unet(spec, 0)
    for name, cout, cin, k in layer_names(spec):
        assert model.params[f"{name}.weight"].shape == (cout, cin, k, k, k)
        assert model.params[f"{name}.bias"].shape == (cout,)


def test_same_seed_same_parameters():
    a = build_unet(UnetSpec(depth=2, base_channels=4), 3)
    b = build_unet(UnetSpec(depth=2, base_channels=4), 3)
    c = build_unet(UnetSpec(depth=2, base_channels=4), 4)
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
    assert not np.array_equal(a.params["enc0.conv1.weight"].data, c.params["enc0.conv1.weight"].data)


def test_fan_in_uniform_bounds():
    model = build_unet(UnetSpec(depth=1, base_channels=8), 0)
    w = model.params["enc0.conv2.weight"].data
    assert np.abs(w).max() <= np.sqrt(6 / (8 * 9))


@pytest.mark.parametrize("spec,shape", [
    (UnetSpec(depth=3, base_channels=2), (1, 4, 128, 128)),
    (UnetSpec(spatial_rank=3, depth=2, base_channels=2), (1, 4, 32, 32, 32)),
])
def test_output_shape_matches_input(spec, shape, rng):
    out = unet_forward(build_unet(spec, 0), rng.random(shape, dtype=np.float32))
    assert out.shape == shape
    np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-6)


@settings(max_examples=12)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 2))
def test_shape_preserved_for_divisible_extents(depth, mult_h, mult_w):
    spec = UnetSpec(depth=depth, base_channels=2)
    shape = (2, 4, 2 ** depth * mult_h, 2 ** depth * mult_w)
    x = np.random.default_rng(depth).random(shape, dtype=np.float32)
    assert unet_forward(build_unet(spec, 0), x).shape == shape


def test_input_errors():
    model = build_unet(UnetSpec(depth=2, base_channels=2), 0)
    with pytest.raises(ValueError, match="divisible"):
        unet_forward(model, np.zeros((1, 4, 6, 8), dtype=np.float32))
    with pytest.raises(ValueError, match="channels"):
        unet_forward(model, np.zeros((1, 3, 8, 8), dtype=np.float32))
    with pytest.raises(ValueError, match="rank"):
        unet_forward(model, np.zeros((1, 4, 8, 8, 8), dtype=np.float32))


@pytest.mark.parametrize("kwargs", [{"spatial_rank": 1}, {"depth": 0}, {"dropout_rate": 1.0}, {"kernel": 2}])
def test_invalid_spec(kwargs):
    with pytest.raises(ValueError):
        UnetSpec(**kwargs)


def test_default_specs():
    assert default_unet_spec("2d").spatial_rank == 2
    assert default_unet_spec("3d").spatial_rank == 3
    with pytest.raises(ValueError):
        default_unet_spec("4d")


def test_eval_forward_is_deterministic(rng):
    model = build_unet(UnetSpec(depth=2, base_channels=4, dropout_rate=0.3, batch_norm=True), 0)
    x = rng.random((2, 4, 8, 8), dtype=np.float32)
    assert np.array_equal(unet_forward(model, x, "eval").data, unet_forward(model, x, "eval").data)


def test_segment_volume_shapes_and_labels(small_case):
    m2 = build_unet(UnetSpec(depth=2, base_channels=2), 0)
    m3 = build_unet(UnetSpec(spatial_rank=3, depth=2, base_channels=2), 0)
    p2 = segment_volume(m2, small_case, "2d")
    p3 = segment_volume(m3, small_case, "3d")
    assert p2.shape == p3.shape == (4,) + small_case.mask.shape
    assert set(np.unique(p2.argmax(axis=0))) <= {0, 1, 2, 3}
    with pytest.raises(ValueError):
        segment_volume(m2, small_case, "3d")


def test_segment_volume_2d_stacks_axial_slices(small_case):
    model = build_unet(UnetSpec(depth=2, base_channels=2), 0)
    vol = segment_volume(model, small_case, "2d", batch_size=5)
    from gliofuse.segnet import case_array
    k = 7
    single = unet_forward(model, case_array(small_case)[None, ..., k]).data[0]
    np.testing.assert_allclose(vol[..., k], single, atol=1e-6)


def test_dice_through_unet_gradient(rng):
    with precision(np.float64):
        model = build_unet(UnetSpec(depth=1, base_channels=2), 0, dtype=np.float64)
        x = rng.random((1, 4, 4, 4))
        truth = one_hot(rng.integers(0, 4, size=(1, 4, 4)), 4)

        def loss_x(xt):
            return dice_loss(unet_forward(model, xt, "train"), truth)

        def loss_w(w):
            model.params["head.weight"] = w
            return dice_loss(unet_forward(model, x, "train"), truth)

        assert grad_check(loss_x, [x], tol=1e-3).passed
        assert grad_check(loss_w, [model.params["head.weight"].data.copy()], tol=1e-3).passed

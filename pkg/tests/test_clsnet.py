import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gliofuse.clsnet import (SUBCLASSES, ResNetSpec, block_layout, bottleneck, build_resnet, classify,
                             derive_subclass_label, parameter_count, resnet_features)
from gliofuse.tensor import Tensor

SMALL = ResNetSpec(stage_blocks=(1, 1, 1, 1), width_scale=1 / 8)


def test_full_width_stage_outputs():
    spec = ResNetSpec()
    assert [spec.stage_out(i) for i in range(4)] == [256, 512, 1024, 2048]
    assert spec.stem_width == 64 and spec.stem_kernel == 7 and spec.stem_stride == 2
    assert [sum(b["stage"] == s for b in block_layout(spec)) for s in range(4)] == [3, 4, 6, 3]


def test_full_size_parameter_shapes():
    model = build_resnet(ResNetSpec(), 0)
    assert model.params["stem.conv.weight"].shape == (64, 4, 7, 7)
    assert model.params["stage5.block2.conv3.weight"].shape == (2048, 512, 1, 1)
    assert model.params["head.weight"].shape == (2048, 4)
    # ResNet-50 trunk with a 4-channel stem and 4-way head
    assert parameter_count(model) == 23_519_364


def test_eighth_width_keeps_topology():
    assert [SMALL.stage_out(i) for i in range(4)] == [32, 64, 128, 256]
    layout = block_layout(SMALL)
    assert [b["stride"] for b in layout] == [1, 2, 2, 2]
    assert all(b["project"] for b in layout)


def test_feature_map_shapes(rng):
    model = build_resnet(SMALL, 0)
    feats = resnet_features(model, rng.random((2, 4, 64, 64), dtype=np.float32))
    assert [f.shape for f in feats] == [(2, 8, 16, 16), (2, 32, 16, 16), (2, 64, 8, 8), (2, 128, 4, 4),
                                        (2, 256, 2, 2)]


def test_parameter_count_is_pure_function_of_spec():
    assert parameter_count(build_resnet(SMALL, 0)) == parameter_count(build_resnet(SMALL, 9))


@pytest.mark.parametrize("kwargs", [{"stage_blocks": (1, 1, 1)}, {"stage_blocks": (1, 0, 1, 1)},
                                    {"num_classes": 5}, {"width_scale": 0}])
def test_invalid_spec(kwargs):
    with pytest.raises(ValueError):
        ResNetSpec(**kwargs)


def _constant_logits(model, logits):
    model.params["head.weight"].data[...] = 0
    model.params["head.bias"].data[...] = logits


def test_classify_uniform_and_argmax(rng):
    model = build_resnet(SMALL, 0)
    x = rng.random((4, 32, 32), dtype=np.float32)
    _constant_logits(model, [0, 0, 0, 0])
    probs, label = classify(model, x)
    np.testing.assert_allclose(probs, 0.25, atol=1e-7)
    assert label == 0  # ties resolve to the lowest index
    _constant_logits(model, [2, 1, 0, -1])
    assert classify(model, x)[1] == 0
    _constant_logits(model, [-1, 0, 3, 1])
    assert classify(model, x)[1] == 2


@given(st.floats(-50, 50))
def test_label_invariant_to_logit_shift(shift):
    model = build_resnet(SMALL, 1)
    x = np.random.default_rng(0).random((3, 4, 32, 32), dtype=np.float32)
    probs, labels = classify(model, x)
    model.params["head.bias"].data[...] += shift
    probs2, labels2 = classify(model, x)
    assert np.array_equal(labels, labels2)
    np.testing.assert_allclose(probs, probs2, atol=1e-5)
    assert np.array_equal(probs.argmax(axis=1), labels)


def test_classify_rejects_bad_channels():
    with pytest.raises(ValueError):
        classify(build_resnet(SMALL, 0), np.zeros((3, 32, 32), dtype=np.float32))


def test_zero_weight_block_is_identity(rng):
    spec = ResNetSpec(stage_blocks=(2, 1, 1, 1), width_scale=1 / 8)
    model = build_resnet(spec, 0)
    blk = next(b for b in block_layout(spec) if not b["project"])
    for k in ("conv1", "conv2", "conv3"):
        model.params[f"{blk['name']}.{k}.weight"].data[...] = 0
    x = Tensor(rng.random((2, blk["cin"], 8, 8)).astype(np.float32))
    np.testing.assert_array_equal(bottleneck(model, blk, x, "eval").data, x.data)


def test_subclass_names():
    assert SUBCLASSES == ("NoTumor", "NCR/NET", "ED", "ET")


def test_derive_subclass_label_examples():
    assert derive_subclass_label(np.zeros((8, 8), int)) == 0
    s = np.zeros(100, int)
    s[:10], s[10:60], s[60:65] = 1, 2, 3
    assert derive_subclass_label(s) == 2
    t = np.zeros(20, int)
    t[:7], t[7:14] = 3, 1
    assert derive_subclass_label(t) == 1
    with pytest.raises(ValueError):
        derive_subclass_label(np.array([0, 4]))


@given(st.lists(st.integers(0, 3), min_size=1, max_size=60))
def test_derive_subclass_label_matches_counting(values):
    counts = {c: values.count(c) for c in (1, 2, 3)}
    best = max(counts.values())
    expected = 0 if best == 0 else min(c for c, n in counts.items() if n == best)
    assert derive_subclass_label(np.array(values)) == expected

"""Build the full-size networks and print their layer shapes and sizes.

Nothing is trained; this only checks the full-size topology is constructible.
"""
import numpy as np

from gliofuse.clsnet import ResNetSpec, build_resnet, parameter_count, resnet_features
from gliofuse.pipeline.config import self_test
from gliofuse.segnet import build_unet, default_unet_spec, layer_names


def main() -> None:
    spec = ResNetSpec()
    model = build_resnet(spec, 0)
    print(f"classifier: {parameter_count(model):,} parameters")
    print(f"  stem {model.params['stem.conv.weight'].shape} stride {spec.stem_stride}")
    feats = resnet_features(model, np.zeros((1, 4, 128, 128), np.float32))
    for name, f in zip(("stem+pool", "conv2_x", "conv3_x", "conv4_x", "conv5_x"), feats):
        print(f"  {name:<10} {f.shape}")
    for mode in ("2d", "3d"):
        u = default_unet_spec(mode)
        n = sum(p.size for p in build_unet(u, 0).params.values())
        print(f"unet {mode}: depth {u.depth}, base {u.base_channels}, {len(layer_names(u))} convs, {n:,} parameters")
    print("config self-test:")
    for key, (value, expected, ok) in self_test().items():
        print(f"  {'ok ' if ok else 'BAD'} {key} = {value} (expected {expected})")


if __name__ == "__main__":
    main()

import numpy as np
import pytest
import torch

from styler.archive import write_archive
from styler.encoder import (
    TAP_NAMES,
    EncoderProfile,
    build_encoder,
    conv_channel_plan,
)
from styler.errors import ArchiveError, InvalidInputError


def make_full_archive(path, seed=0, skip=None):
    """Random He-scaled weights for the full VGG topology."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, cin, cout in conv_channel_plan((64, 128, 256, 512)):
        if name == skip:
            continue
        fan_in = cin * 9
        tensors[f"{name}.weight"] = rng.normal(
            0.0, np.sqrt(2.0 / fan_in), (cout, cin, 3, 3)
        ).astype(np.float32)
        tensors[f"{name}.bias"] = np.zeros(cout, np.float32)
    write_archive(path, tensors)
    return path


class TestBuild:
    def test_full_profile_shapes(self, tmp_path):
        archive = make_full_archive(tmp_path / "vgg.nta")
        enc = build_encoder(EncoderProfile.full(archive))
        assert tuple(enc.convs["conv1_1"].weight.shape) == (64, 3, 3, 3)
        assert tuple(enc.convs["conv4_1"].weight.shape) == (512, 256, 3, 3)

    def test_toy_determinism(self):
        x = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(1))
        a = build_encoder(EncoderProfile.toy(7)).extract(x, {"ReLU_4_1"})["ReLU_4_1"]
        b = build_encoder(EncoderProfile.toy(7)).extract(x, {"ReLU_4_1"})["ReLU_4_1"]
        assert torch.equal(a, b)

    def test_missing_layer_named(self, tmp_path):
        archive = make_full_archive(tmp_path / "vgg.nta", skip="conv3_1")
        with pytest.raises(ArchiveError, match="conv3_1"):
            build_encoder(EncoderProfile.full(archive))

    def test_mis_shaped_layer_named(self, tmp_path):
        path = tmp_path / "vgg.nta"
        rng = np.random.default_rng(0)
        tensors = {}
        for name, cin, cout in conv_channel_plan((64, 128, 256, 512)):
            tensors[f"{name}.weight"] = rng.normal(0, 0.1, (cout, cin, 3, 3)).astype(np.float32)
            tensors[f"{name}.bias"] = np.zeros(cout, np.float32)
        tensors["conv2_1.weight"] = np.zeros((128, 64, 5, 5), np.float32)
        write_archive(path, tensors)
        with pytest.raises(ArchiveError, match="conv2_1"):
            build_encoder(EncoderProfile.full(path))

    def test_frozen(self, toy_encoder):
        assert all(not p.requires_grad for p in toy_encoder.parameters())


class TestExtract:
    def test_full_profile_relu41_shape(self, tmp_path):
        archive = make_full_archive(tmp_path / "vgg.nta")
        enc = build_encoder(EncoderProfile.full(archive))
        x = torch.rand(3, 256, 256, generator=torch.Generator().manual_seed(0))
        feats = enc.extract(x, {"ReLU_4_1", "ReLU_2_1"})
        assert feats["ReLU_4_1"].shape == (512, 32, 32)
        assert feats["ReLU_2_1"].shape == (128, 128, 128)

    @pytest.mark.parametrize("size", [32, 64, 128, 256])
    def test_shape_law_all_taps(self, toy_encoder, size):
        x = torch.rand(3, size, size, generator=torch.Generator().manual_seed(size))
        feats = toy_encoder.extract(x, TAP_NAMES)
        for tap, feat in feats.items():
            block = int(tap.split("_")[1])
            width = toy_encoder.profile.block_widths[block - 1]
            assert feat.shape == (width, size // 2 ** (block - 1), size // 2 ** (block - 1))

    def test_relu_applied(self, toy_encoder):
        x = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(2))
        feats = toy_encoder.extract(x, TAP_NAMES)
        assert all(float(f.min()) >= 0.0 for f in feats.values())

    def test_superset_leaves_common_taps_bitwise(self, toy_encoder):
        x = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(3))
        small = toy_encoder.extract(x, {"ReLU_1_1", "ReLU_2_1"})
        big = toy_encoder.extract(x, set(TAP_NAMES))
        assert torch.equal(small["ReLU_1_1"], big["ReLU_1_1"])
        assert torch.equal(small["ReLU_2_1"], big["ReLU_2_1"])

    def test_pure_function(self, toy_encoder):
        x = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(4))
        a = toy_encoder.extract(x, {"ReLU_3_3"})["ReLU_3_3"]
        b = toy_encoder.extract(x, {"ReLU_3_3"})["ReLU_3_3"]
        assert torch.equal(a, b)

    def test_indivisible_dims_rejected(self, toy_encoder):
        with pytest.raises(InvalidInputError, match="divisible by 8"):
            toy_encoder.extract(torch.rand(3, 30, 32), {"ReLU_4_1"})

    def test_unknown_tap_rejected(self, toy_encoder):
        with pytest.raises(InvalidInputError, match="unknown taps"):
            toy_encoder.extract(torch.rand(3, 32, 32), {"ReLU_5_1"})

"""Fixed VGG-19-topology feature extractor with named ReLU taps.

Two profiles share an identical layer sequence and differ only in channel
widths: "full" uses the standard [64, 128, 256, 512] block widths and loads
pretrained weights from an NTA1 archive, "toy" uses [8, 16, 32, 64] with
seeded He-initialized frozen weights so every contract can be exercised on
CPU in seconds.

Only the layers up to ReLU_4_1 are instantiated. All 3x3 convs use reflect
padding so tap sizes follow the exact power-of-two halving law the rest of
the pipeline depends on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .archive import TensorArchive
from .errors import ArchiveError, InvalidInputError

TAP_NAMES = (
    "ReLU_1_1",
    "ReLU_1_2",
    "ReLU_2_1",
    "ReLU_2_2",
    "ReLU_3_1",
    "ReLU_3_3",
    "ReLU_4_1",
)

# (conv name, block index) in forward order; pools sit between blocks
_CONV_LAYOUT = (
    ("conv1_1", 1),
    ("conv1_2", 1),
    ("conv2_1", 2),
    ("conv2_2", 2),
    ("conv3_1", 3),
    ("conv3_2", 3),
    ("conv3_3", 3),
    ("conv3_4", 3),
    ("conv4_1", 4),
)

FULL_WIDTHS = (64, 128, 256, 512)
TOY_WIDTHS = (8, 16, 32, 64)

# convention under which the public VGG-19 weights were trained
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

TAP_BLOCK = {name: int(name.split("_")[1]) for name in TAP_NAMES}


@dataclass(frozen=True)
class EncoderProfile:
    """Channel widths plus a weight source (archive for full, seed for toy)."""

    name: str
    block_widths: tuple
    archive_path: str | None = None
    seed: int = 0

    @staticmethod
    def full(archive_path):
        return EncoderProfile("full", FULL_WIDTHS, archive_path=str(archive_path))

    @staticmethod
    def toy(seed=0):
        return EncoderProfile("toy", TOY_WIDTHS, seed=seed)


def conv_channel_plan(block_widths):
    """(in, out) channels for each conv layer, in forward order."""
    plan = []
    prev = 3
    for name, block in _CONV_LAYOUT:
        out = block_widths[block - 1]
        plan.append((name, prev, out))
        prev = out
    return plan


class VggEncoder(nn.Module):
    """Immutable feature extractor. extract() runs a single forward pass and
    returns the requested taps; requesting a superset of taps never changes
    the values of the common ones."""

    def __init__(self, profile):
        super().__init__()
        self.profile = profile
        self.convs = nn.ModuleDict()
        for name, cin, cout in conv_channel_plan(profile.block_widths):
            self.convs[name] = nn.Conv2d(cin, cout, 3, stride=1, padding=1, padding_mode="reflect")
        self.pool = nn.MaxPool2d(2, 2)
        if profile.name == "full":
            mean = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
            std = torch.tensor(IMAGENET_STD).view(3, 1, 1)
        else:
            mean = torch.zeros(3, 1, 1)
            std = torch.ones(3, 1, 1)
        self.register_buffer("input_mean", mean)
        self.register_buffer("input_std", std)

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self

    def tap_channels(self, tap):
        return self.profile.block_widths[TAP_BLOCK[tap] - 1]

    def extract(self, image, taps):
        """Map of tap name -> (c, h, w) feature map for one image."""
        taps = set(taps)
        unknown = taps - set(TAP_NAMES)
        if unknown:
            raise InvalidInputError(f"unknown taps: {sorted(unknown)}")
        h, w = image.shape[-2], image.shape[-1]
        if h % 8 != 0 or w % 8 != 0:
            raise InvalidInputError(
                f"encoder input dims must be divisible by 8, got {(h, w)}"
            )
        deepest = max(TAP_NAMES.index(t) for t in taps) if taps else -1
        x = image.unsqueeze(0) if image.dim() == 3 else image
        x = (x - self.input_mean) / self.input_std
        out = {}
        reached = 0
        prev_block = 1
        for name, block in _CONV_LAYOUT:
            if block != prev_block:
                x = self.pool(x)
                prev_block = block
            x = torch.relu(self.convs[name](x))
            tap = "ReLU_" + name[4:]
            if tap in taps:
                out[tap] = x.squeeze(0)
            if tap in TAP_NAMES:
                reached = TAP_NAMES.index(tap)
                if reached >= deepest:
                    break
        return out


def _he_init(encoder, seed):
    gen = torch.Generator().manual_seed(int(seed))
    for name, _, _ in conv_channel_plan(encoder.profile.block_widths):
        conv = encoder.convs[name]
        fan_in = conv.weight.shape[1] * conv.weight.shape[2] * conv.weight.shape[3]
        with torch.no_grad():
            conv.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=gen)
            conv.bias.zero_()


def _load_from_archive(encoder, path):
    archive = TensorArchive(path)
    for name, cin, cout in conv_channel_plan(encoder.profile.block_widths):
        for part, expected in (("weight", (cout, cin, 3, 3)), ("bias", (cout,))):
            key = f"{name}.{part}"
            if key not in archive:
                raise ArchiveError(f"encoder archive {path} is missing {key!r}")
            if archive.shape(key) != expected:
                raise ArchiveError(
                    f"encoder archive {path}: {key!r} has shape {archive.shape(key)}, "
                    f"expected {expected}"
                )
        with torch.no_grad():
            encoder.convs[name].weight.copy_(archive.get_tensor(f"{name}.weight"))
            encoder.convs[name].bias.copy_(archive.get_tensor(f"{name}.bias"))
    if "meta.normalize.mean" in archive and "meta.normalize.std" in archive:
        encoder.input_mean.copy_(archive.get_tensor("meta.normalize.mean").view(3, 1, 1))
        encoder.input_std.copy_(archive.get_tensor("meta.normalize.std").view(3, 1, 1))


def build_encoder(profile):
    """Construct a frozen encoder for the given profile."""
    encoder = VggEncoder(profile)
    if profile.name == "full":
        if not profile.archive_path or not Path(profile.archive_path).exists():
            raise ArchiveError(f"full profile needs a weight archive, got {profile.archive_path!r}")
        _load_from_archive(encoder, profile.archive_path)
    else:
        _he_init(encoder, profile.seed)
    return encoder.freeze()

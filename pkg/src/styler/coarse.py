"""Stage-one network: encoder -> WCT at ReLU_4_1 -> reconstruction decoder.

The decoder mirrors the VGG topology back from ReLU_4_1 with nearest
neighbor upsampling and exposes three taps: before the second upsampling
layer, before the third, and after the last convolution. Those taps are the
multi-scale features handed to the Fine Network.

The whole stage is frozen at stylization time: coarse_forward runs without
gradient tracking and returns detached taps.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .archive import TensorArchive, write_archive
from .encoder import FULL_WIDTHS, TOY_WIDTHS, EncoderProfile
from .errors import ConfigError, InvalidInputError
from .substrate import validate_image
from .wct import ColoringOperator, WctConfig, wct_transform

PROFILE_IDS = {"full": 0.0, "toy": 1.0}


def seed_module_parameters(module, seed, mid_gray_bias=()):
    """Deterministic He-normal init for every conv/linear in the module.
    Biases are zero except the named ones, which start at 0.5 so image
    outputs begin in-range instead of half clamped."""
    gen = torch.Generator().manual_seed(int(seed))
    for name, sub in module.named_modules():
        if isinstance(sub, (nn.Conv2d, nn.Linear)):
            fan_in = sub.weight.shape[1]
            if sub.weight.dim() == 4:
                fan_in *= sub.weight.shape[2] * sub.weight.shape[3]
            with torch.no_grad():
                sub.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=gen)
                sub.bias.fill_(0.5 if name in mid_gray_bias else 0.0)


def config_digest(text):
    """sha256 of a canonical config string, as 32 floats storable in NTA1."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return np.frombuffer(digest, dtype=np.uint8).astype(np.float32)


@dataclass
class CoarseTaps:
    """Reconstructed coarse stylized features at 1/4, 1/2 and full Coarse
    input resolution; relative to the full-resolution content image these
    are 1/8, 1/4 and 1/2."""

    f1: torch.Tensor
    f2: torch.Tensor
    f3: torch.Tensor

    def spatial_sizes(self):
        return tuple(tuple(f.shape[-2:]) for f in (self.f1, self.f2, self.f3))


class CoarseDecoder(nn.Module):
    """Mirror of VGG-19 from ReLU_4_1 down to the image. Channel widths
    scale with the encoder profile's block widths; three nearest-neighbor
    upsamplings; ReLU on every conv except the last."""

    def __init__(self, block_widths=FULL_WIDTHS):
        super().__init__()
        w1, w2, w3, w4 = block_widths
        self.block_widths = tuple(block_widths)
        plan = [
            (w4, w3), (w3, w3), (w3, w3), (w3, w3), (w3, w2),
            (w2, w2), (w2, w1),
            (w1, w1), (w1, 3),
        ]
        self.convs = nn.ModuleList(
            nn.Conv2d(cin, cout, 3, stride=1, padding=1, padding_mode="reflect")
            for cin, cout in plan
        )
        self.up = nn.Upsample(scale_factor=2, mode="nearest")
        # conv index -> upsample afterwards; taps captured at 4 (pre-up2),
        # 6 (pre-up3) and 8 (after last conv, no relu)
        self._upsample_before = {1, 5, 7}

    def forward(self, f_cs):
        """(c, h/8, w/8) stylized feature -> CoarseTaps at (h/4, h/2, h)."""
        x = f_cs.unsqueeze(0) if f_cs.dim() == 3 else f_cs
        taps = []
        for i, conv in enumerate(self.convs):
            if i in self._upsample_before:
                x = self.up(x)
            x = conv(x)
            if i < len(self.convs) - 1:
                x = torch.relu(x)
            if i in (4, 6, 8):
                taps.append(x.squeeze(0))
        return CoarseTaps(*taps)


def coarse_forward(enc, dec, xc_bar, xs_bar, cfg=WctConfig(), style_op=None):
    """WCT-stylize at ReLU_4_1 and decode; taps come back detached since
    the coarse stage is frozen."""
    validate_image(xc_bar, "coarse content input")
    if style_op is None:
        validate_image(xs_bar, "coarse style input")
    with torch.no_grad():
        f_c = enc.extract(xc_bar, {"ReLU_4_1"})["ReLU_4_1"]
        if style_op is None:
            f_s = enc.extract(xs_bar, {"ReLU_4_1"})["ReLU_4_1"]
            f_cs = wct_transform(f_c, f_s, cfg)
        else:
            f_cs = wct_transform(f_c, None, cfg, style_op=style_op)
        taps = dec(f_cs.to(next(dec.parameters()).dtype))
    return CoarseTaps(taps.f1.detach(), taps.f2.detach(), taps.f3.detach())


def style_coloring_operator(enc, xs_bar, cfg=WctConfig()):
    """Cacheable style-side half of the WCT for a fixed style image."""
    validate_image(xs_bar, "coarse style input")
    with torch.no_grad():
        f_s = enc.extract(xs_bar, {"ReLU_4_1"})["ReLU_4_1"]
    return ColoringOperator(f_s, cfg)


def coarse_stylize(enc, dec, xc_bar, xs_bar, cfg=WctConfig(), style_op=None):
    """Coarse-only stylization: the last tap clamped to [0, 1], at the
    Coarse input resolution."""
    taps = coarse_forward(enc, dec, xc_bar, xs_bar, cfg, style_op=style_op)
    return taps.f3.clamp(0.0, 1.0)


def reconstruct_only(enc, dec, x):
    """decode(extract(x)) with no WCT: the stage-1 forward pass, clamped at
    the image boundary."""
    validate_image(x, "reconstruction input")
    with torch.no_grad():
        feat = enc.extract(x, {"ReLU_4_1"})["ReLU_4_1"]
        taps = dec(feat)
    return taps.f3.clamp(0.0, 1.0)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_coarse_checkpoint(path, dec, profile, iterations=0, digest=None):
    tensors = {}
    for k, conv in enumerate(dec.convs, start=1):
        tensors[f"dec_conv{k}.weight"] = conv.weight
        tensors[f"dec_conv{k}.bias"] = conv.bias
    tensors["meta.profile"] = np.array([PROFILE_IDS[profile.name]], dtype=np.float32)
    tensors["meta.block_widths"] = np.array(profile.block_widths, dtype=np.float32)
    tensors["meta.encoder_seed"] = np.array([float(profile.seed)], dtype=np.float32)
    tensors["meta.iterations"] = np.array([float(iterations)], dtype=np.float32)
    tensors["meta.config_digest"] = digest if digest is not None else np.zeros(32, np.float32)
    write_archive(path, tensors)


def load_coarse_checkpoint(path):
    """Rebuild the decoder plus the encoder profile it was trained under."""
    archive = TensorArchive(path)
    for key in ("meta.profile", "meta.block_widths", "meta.encoder_seed"):
        if key not in archive:
            raise ConfigError(f"coarse checkpoint {path} lacks {key!r}")
    profile_id = float(archive.get("meta.profile")[0])
    names = {v: k for k, v in PROFILE_IDS.items()}
    if profile_id not in names:
        raise ConfigError(f"coarse checkpoint {path}: unknown profile id {profile_id}")
    widths = tuple(int(v) for v in archive.get("meta.block_widths"))
    name = names[profile_id]
    expected = FULL_WIDTHS if name == "full" else TOY_WIDTHS
    if widths != expected:
        raise ConfigError(
            f"coarse checkpoint {path}: block widths {widths} do not match profile {name!r}"
        )
    dec = CoarseDecoder(widths)
    for k, conv in enumerate(dec.convs, start=1):
        for part, param in (("weight", conv.weight), ("bias", conv.bias)):
            key = f"dec_conv{k}.{part}"
            if key not in archive:
                raise ConfigError(f"coarse checkpoint {path} is missing {key!r}")
            loaded = archive.get_tensor(key)
            if tuple(loaded.shape) != tuple(param.shape):
                raise ConfigError(
                    f"coarse checkpoint {path}: {key!r} shape {tuple(loaded.shape)} "
                    f"!= expected {tuple(param.shape)}"
                )
            with torch.no_grad():
                param.copy_(loaded)
    for p in dec.parameters():
        p.requires_grad_(False)
    dec.eval()
    meta = {
        "profile_name": name,
        "block_widths": widths,
        "encoder_seed": int(archive.get("meta.encoder_seed")[0]),
        "iterations": int(archive.get("meta.iterations")[0]) if "meta.iterations" in archive else 0,
    }
    return dec, meta


def encoder_profile_from_meta(meta, vgg_archive=None):
    if meta["profile_name"] == "full":
        if not vgg_archive:
            raise ConfigError("full-profile checkpoint needs a VGG weight archive path")
        return EncoderProfile.full(vgg_archive)
    return EncoderProfile.toy(meta["encoder_seed"])

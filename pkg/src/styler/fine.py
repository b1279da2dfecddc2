"""Stage-two network: full-resolution encoder, residual trunk, and a
decoder that fuses the coarse taps through an SSF module before each of its
three upsampling layers.

The first SSF consumes the trunk output as its content feature; later ones
consume the previous decoder conv's output. Built without the coarse path
(the ablation baseline) the SSF modules disappear and the decoder convs
shrink to the content-only channel counts.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .archive import TensorArchive, write_archive
from .coarse import (
    PROFILE_IDS,
    CoarseTaps,
    coarse_forward,
    load_coarse_checkpoint,
    encoder_profile_from_meta,
)
from .encoder import FULL_WIDTHS, TOY_WIDTHS, build_encoder
from .errors import ConfigError, InvalidInputError
from .ssf import SsfModule
from .substrate import downsample2, validate_image
from .wct import WctConfig

FUSION_IDS = {"ssf": 0.0, "concat": 1.0}
DEFAULT_C_MERGE = {"full": 64, "toy": 16}


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1, padding_mode="reflect")
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1, padding_mode="reflect")

    def forward(self, x):
        return x + self.conv2(torch.relu(self.conv1(x)))


class FineNetwork(nn.Module):
    """Encoder (one stride-1 conv, three stride-2 convs), five residual
    blocks, and a three-stage decoder. Output spatial size equals input."""

    def __init__(self, block_widths=FULL_WIDTHS, c_merge=64, use_coarse=True, fusion="ssf"):
        super().__init__()
        if fusion not in FUSION_IDS:
            raise ConfigError(f"unknown fusion mode {fusion!r}")
        w1, w2, w3, w4 = block_widths
        self.block_widths = tuple(block_widths)
        self.c_merge = c_merge
        self.use_coarse = use_coarse
        self.fusion = fusion
        self.enc_convs = nn.ModuleList([
            nn.Conv2d(3, w1, 3, 1, 1, padding_mode="reflect"),
            nn.Conv2d(w1, w2, 3, 2, 1, padding_mode="reflect"),
            nn.Conv2d(w2, w3, 3, 2, 1, padding_mode="reflect"),
            nn.Conv2d(w3, w4, 3, 2, 1, padding_mode="reflect"),
        ])
        self.res_blocks = nn.ModuleList(ResidualBlock(w4) for _ in range(5))
        self.up = nn.Upsample(scale_factor=2, mode="nearest")
        # coarse tap channels mirror the coarse decoder: (w2, w1, 3)
        tap_channels = (w2, w1, 3)
        stage_cs = (w4, w3, w2)
        stage_out = (w3, w2, 3)
        if use_coarse:
            self.ssfs = nn.ModuleList(
                SsfModule(c_cs, c_r, c_merge) for c_cs, c_r in zip(stage_cs, tap_channels)
            )
            dec_in = tuple(c_cs + c_merge for c_cs in stage_cs)
        else:
            self.ssfs = nn.ModuleList()
            dec_in = stage_cs
        self.dec_convs = nn.ModuleList(
            nn.Conv2d(cin, cout, 3, 1, 1, padding_mode="reflect")
            for cin, cout in zip(dec_in, stage_out)
        )

    def encode(self, x):
        for conv in self.enc_convs:
            x = torch.relu(conv(x))
        for block in self.res_blocks:
            x = block(x)
        return x

    def forward(self, x_c, taps=None):
        if self.use_coarse:
            if taps is None:
                raise ConfigError("this network fuses coarse taps; none were given")
            return self._forward_fused(x_c, taps)
        if taps is not None:
            raise ConfigError("network was built without the coarse path; got taps")
        return self._forward_plain(x_c)

    def _forward_fused(self, x_c, taps):
        h, w = x_c.shape[-2], x_c.shape[-1]
        expected = ((h // 8, w // 8), (h // 4, w // 4), (h // 2, w // 2))
        for stage, (tap, size) in enumerate(zip((taps.f1, taps.f2, taps.f3), expected), start=1):
            if tuple(tap.shape[-2:]) != size:
                raise InvalidInputError(
                    f"SSF stage {stage}: tap spatial size {tuple(tap.shape[-2:])} "
                    f"does not match expected {size} for a {h}x{w} content image"
                )
        x = self.encode(x_c.unsqueeze(0) if x_c.dim() == 3 else x_c)
        for stage, (ssf, conv, tap) in enumerate(
            zip(self.ssfs, self.dec_convs, (taps.f1, taps.f2, taps.f3))
        ):
            tap_b = tap.unsqueeze(0) if tap.dim() == 3 else tap
            x = ssf(x, tap_b, attention_ones=(self.fusion == "concat"))
            x = self.up(x)
            x = conv(x)
            if stage < 2:
                x = torch.relu(x)
        return x.squeeze(0).clamp(0.0, 1.0)

    def _forward_plain(self, x_c):
        x = self.encode(x_c.unsqueeze(0) if x_c.dim() == 3 else x_c)
        for stage, conv in enumerate(self.dec_convs):
            x = self.up(x)
            x = conv(x)
            if stage < 2:
                x = torch.relu(x)
        return x.squeeze(0).clamp(0.0, 1.0)


def fine_forward(net, x_c, taps):
    """Full-model stylization forward; taps are constants, the output is
    differentiable w.r.t. every Fine Network parameter."""
    validate_image(x_c, "fine content input")
    h, w = x_c.shape[-2], x_c.shape[-1]
    if h % 8 != 0 or w % 8 != 0:
        raise InvalidInputError(f"fine input dims must be divisible by 8, got {(h, w)}")
    return net(x_c, taps)


def fine_forward_nocoarse(net, x_c):
    """Ablation forward: decoder stages consume the content path directly."""
    validate_image(x_c, "fine content input")
    if net.use_coarse:
        raise ConfigError(
            "fine_forward_nocoarse needs a network built with use_coarse=False"
        )
    return net(x_c)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def _named_parameters_for_archive(net):
    named = {}
    for k, conv in enumerate(net.enc_convs, start=1):
        named[f"enc_conv{k}.weight"] = conv.weight
        named[f"enc_conv{k}.bias"] = conv.bias
    for k, block in enumerate(net.res_blocks, start=1):
        named[f"res{k}.conv1.weight"] = block.conv1.weight
        named[f"res{k}.conv1.bias"] = block.conv1.bias
        named[f"res{k}.conv2.weight"] = block.conv2.weight
        named[f"res{k}.conv2.bias"] = block.conv2.bias
    for k, ssf in enumerate(net.ssfs, start=1):
        named[f"ssf{k}.mlp1.weight"] = ssf.mlp1.weight
        named[f"ssf{k}.mlp1.bias"] = ssf.mlp1.bias
        named[f"ssf{k}.mlp2.weight"] = ssf.mlp2.weight
        named[f"ssf{k}.mlp2.bias"] = ssf.mlp2.bias
        named[f"ssf{k}.refine.weight"] = ssf.refine.weight
        named[f"ssf{k}.refine.bias"] = ssf.refine.bias
    for k, conv in enumerate(net.dec_convs, start=1):
        named[f"dec_conv{k}.weight"] = conv.weight
        named[f"dec_conv{k}.bias"] = conv.bias
    return named


def save_fine_checkpoint(path, net, profile, weights=None, iterations=0, digest=None):
    tensors = dict(_named_parameters_for_archive(net))
    tensors["meta.profile"] = np.array([PROFILE_IDS[profile.name]], dtype=np.float32)
    tensors["meta.block_widths"] = np.array(net.block_widths, dtype=np.float32)
    tensors["meta.encoder_seed"] = np.array([float(profile.seed)], dtype=np.float32)
    tensors["meta.c_merge"] = np.array([float(net.c_merge)], dtype=np.float32)
    tensors["meta.fusion"] = np.array([FUSION_IDS[net.fusion]], dtype=np.float32)
    tensors["meta.use_coarse"] = np.array([1.0 if net.use_coarse else 0.0], dtype=np.float32)
    if weights is not None:
        tensors["meta.loss_weights"] = np.array(
            [weights.alpha, weights.lambda1, weights.lambda2, weights.lambda3, weights.recon_lambda],
            dtype=np.float32,
        )
    tensors["meta.iterations"] = np.array([float(iterations)], dtype=np.float32)
    tensors["meta.config_digest"] = digest if digest is not None else np.zeros(32, np.float32)
    write_archive(path, tensors)


def load_fine_checkpoint(path):
    archive = TensorArchive(path)
    for key in ("meta.profile", "meta.block_widths", "meta.encoder_seed",
                "meta.c_merge", "meta.fusion", "meta.use_coarse"):
        if key not in archive:
            raise ConfigError(f"fine checkpoint {path} lacks {key!r}")
    names = {v: k for k, v in PROFILE_IDS.items()}
    profile_id = float(archive.get("meta.profile")[0])
    if profile_id not in names:
        raise ConfigError(f"fine checkpoint {path}: unknown profile id {profile_id}")
    widths = tuple(int(v) for v in archive.get("meta.block_widths"))
    name = names[profile_id]
    if widths != (FULL_WIDTHS if name == "full" else TOY_WIDTHS):
        raise ConfigError(f"fine checkpoint {path}: widths {widths} mismatch profile {name!r}")
    fusion_names = {v: k for k, v in FUSION_IDS.items()}
    fusion = fusion_names[float(archive.get("meta.fusion")[0])]
    net = FineNetwork(
        widths,
        c_merge=int(archive.get("meta.c_merge")[0]),
        use_coarse=bool(archive.get("meta.use_coarse")[0]),
        fusion=fusion,
    )
    for key, param in _named_parameters_for_archive(net).items():
        if key not in archive:
            raise ConfigError(f"fine checkpoint {path} is missing {key!r}")
        loaded = archive.get_tensor(key)
        if tuple(loaded.shape) != tuple(param.shape):
            raise ConfigError(
                f"fine checkpoint {path}: {key!r} shape {tuple(loaded.shape)} "
                f"!= expected {tuple(param.shape)}"
            )
        with torch.no_grad():
            param.copy_(loaded)
    for p in net.parameters():
        p.requires_grad_(False)
    net.eval()
    meta = {
        "profile_name": name,
        "block_widths": widths,
        "encoder_seed": int(archive.get("meta.encoder_seed")[0]),
        "fusion": fusion,
        "use_coarse": bool(archive.get("meta.use_coarse")[0]),
    }
    return net, meta


class StylePipeline:
    """Loaded end-to-end stylizer: encoder + coarse stage + fine network.
    Checkpoint loading happens once at construction; run() is the pure
    synthesis path."""

    def __init__(self, coarse_ckpt, fine_ckpt, vgg_archive=None, wct_cfg=WctConfig()):
        self.dec, coarse_meta = load_coarse_checkpoint(coarse_ckpt)
        self.net, fine_meta = load_fine_checkpoint(fine_ckpt)
        if coarse_meta["profile_name"] != fine_meta["profile_name"]:
            raise ConfigError(
                f"checkpoint profile mismatch: coarse is {coarse_meta['profile_name']!r}, "
                f"fine is {fine_meta['profile_name']!r}"
            )
        if not fine_meta["use_coarse"]:
            raise ConfigError("fine checkpoint was trained without the coarse path")
        self.enc = build_encoder(encoder_profile_from_meta(coarse_meta, vgg_archive))
        self.wct_cfg = wct_cfg

    def run(self, x_c, x_s):
        validate_image(x_c, "content image")
        validate_image(x_s, "style image")
        h, w = x_c.shape[-2], x_c.shape[-1]
        if h % 16 != 0 or w % 16 != 0:
            raise InvalidInputError(
                f"stylize needs content dims divisible by 16, got {(h, w)}"
            )
        if x_s.shape[-2] % 16 != 0 or x_s.shape[-1] % 16 != 0:
            raise InvalidInputError(
                f"stylize needs style dims divisible by 16, got {tuple(x_s.shape[-2:])}"
            )
        taps = coarse_forward(self.enc, self.dec, downsample2(x_c), downsample2(x_s),
                              self.wct_cfg)
        with torch.no_grad():
            return fine_forward(self.net, x_c, taps)


def stylize(coarse_ckpt, fine_ckpt, x_c, x_s, vgg_archive=None, wct_cfg=WctConfig()):
    """End-to-end stylization from checkpoints: downsample both images by 2,
    run the Coarse Network, then fuse at full resolution."""
    return StylePipeline(coarse_ckpt, fine_ckpt, vgg_archive, wct_cfg).run(x_c, x_s)

"""Single-level whitening and coloring transform.

whiten() maps content features to identity covariance via the ZCA form
E diag(lam^-1/2) E^T; color() maps whitened features onto the style
feature's covariance and mean. Both run in float64 off the autograd graph:
the transform only ever executes under the frozen Coarse Network, so no
gradient flows through it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidInputError
from .substrate import covariance, sym_eig


@dataclass(frozen=True)
class WctConfig:
    """eig_floor bounds the whitening gain on rank-deficient covariances
    (absolute floor; VGG-feature covariance eigenvalues live on a [0, ~10]
    scale)."""

    eig_floor: float = 1e-5

    def __post_init__(self):
        if self.eig_floor <= 0:
            raise InvalidInputError("WctConfig.eig_floor must be positive")


def _flat64(feat):
    x = feat.detach().to(torch.float64).cpu().numpy()
    c = x.shape[0]
    return x.reshape(c, -1), x.shape


def whiten(f_c, cfg=WctConfig()):
    """Center and decorrelate: output covariance is (near) identity for
    full-rank input; an all-constant input maps to all zeros."""
    flat, shape = _flat64(f_c)
    if flat.shape[1] < 2:
        raise InvalidInputError("whiten needs at least 2 spatial positions")
    mean, cov = covariance(flat)
    vals, vecs = sym_eig(cov)
    inv_sqrt = 1.0 / np.sqrt(np.maximum(vals, cfg.eig_floor))
    transform = (vecs * inv_sqrt[None, :]) @ vecs.T
    out = transform @ (flat - mean[:, None])
    return torch.from_numpy(out.reshape(shape)).to(f_c.dtype)


class ColoringOperator:
    """Precomputed coloring map for a fixed style feature; lets a training
    loop pay for the style-side eigendecomposition once."""

    def __init__(self, f_s, cfg=WctConfig()):
        flat, _ = _flat64(f_s)
        mean, cov = covariance(flat)
        vals, vecs = sym_eig(cov)
        sqrt_vals = np.sqrt(np.maximum(vals, 0.0))
        self.matrix = (vecs * sqrt_vals[None, :]) @ vecs.T
        self.mean = mean
        self.channels = flat.shape[0]

    def apply(self, f_white):
        flat, shape = _flat64(f_white)
        if flat.shape[0] != self.channels:
            raise InvalidInputError(
                f"color: channel mismatch, whitened has {flat.shape[0]}, style has {self.channels}"
            )
        out = self.matrix @ flat + self.mean[:, None]
        return torch.from_numpy(out.reshape(shape)).to(f_white.dtype)


def color(f_white, f_s, cfg=WctConfig()):
    """Map an (approximately) white feature onto the style covariance and
    mean."""
    if f_white.shape[0] != f_s.shape[0]:
        raise InvalidInputError(
            f"color: channel mismatch, whitened has {f_white.shape[0]}, style has {f_s.shape[0]}"
        )
    return ColoringOperator(f_s, cfg).apply(f_white)


def wct_transform(f_c, f_s, cfg=WctConfig(), style_op=None):
    """color(whiten(f_c), f_s); spatial size follows f_c. A prebuilt
    ColoringOperator for f_s may be passed to skip the style-side work."""
    if style_op is None:
        if f_c.shape[0] != f_s.shape[0]:
            raise InvalidInputError(
                f"wct_transform: channel mismatch, content {f_c.shape[0]} vs style {f_s.shape[0]}"
            )
        style_op = ColoringOperator(f_s, cfg)
    return style_op.apply(whiten(f_c, cfg))

"""Training objectives: pixel+perceptual reconstruction, perceptual content
loss, relaxed earth mover's distance, Gram, and mean-variance style losses,
plus their weighted total.

Per-layer conventions: the perceptual loss is the mean squared difference
over all entries; the rEMD cost is cosine distance between channel vectors
at spatial positions, averaged through one-sided nearest-neighbor
assignments; Gram matrices are normalized by c*h*w so the default weight
1000 lands on a sensibly scaled term; mean/std statistics are per-channel
over space. Each multi-layer term is the unweighted sum over its assigned
encoder taps.

Cost matrices at shallow taps would be quadratic in image area, so rEMD
positions are subsampled to max_samples per side with a fresh seed each
iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .errors import ConfigError, InvalidInputError

PERCEPTUAL_TAPS = ("ReLU_1_1", "ReLU_2_1", "ReLU_3_1", "ReLU_4_1")
MEANVAR_TAPS = ("ReLU_1_1", "ReLU_2_1", "ReLU_3_1", "ReLU_4_1")
REMD_TAPS = ("ReLU_2_1", "ReLU_3_1", "ReLU_4_1")
GRAM_TAPS = ("ReLU_1_2", "ReLU_2_2", "ReLU_3_3")

_NORM_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    """Weights of the total objective; zero disables a term entirely."""

    alpha: float = 1.0
    lambda1: float = 20.0
    lambda2: float = 1000.0
    lambda3: float = 5.0
    recon_lambda: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "lambda1", "lambda2", "lambda3", "recon_lambda"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0")


@dataclass(frozen=True)
class LayerAssignment:
    perceptual: tuple = PERCEPTUAL_TAPS
    meanvar: tuple = MEANVAR_TAPS
    remd: tuple = REMD_TAPS
    gram: tuple = GRAM_TAPS

    def all_taps(self):
        return set(self.perceptual) | set(self.meanvar) | set(self.remd) | set(self.gram)


@dataclass(frozen=True)
class RemdConfig:
    max_samples: int = 1024
    seed: int = 0

    def __post_init__(self):
        if self.max_samples < 1:
            raise ConfigError("RemdConfig.max_samples must be positive")


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise InvalidInputError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def perceptual_loss(f_c, f_cs):
    """Mean squared difference over all c*h*w entries."""
    _check_same_shape(f_c, f_cs, "perceptual_loss")
    return ((f_c - f_cs) ** 2).mean()


def reconstruction_loss(i_o, i_i, enc, recon_lambda=1.0):
    """Pixel MSE plus recon_lambda times the summed per-layer feature MSE at
    the ReLU_X_1 taps."""
    _check_same_shape(i_o, i_i, "reconstruction_loss")
    loss = ((i_o - i_i) ** 2).mean()
    if recon_lambda > 0:
        with torch.no_grad():
            target = enc.extract(i_i, PERCEPTUAL_TAPS)
        feats = enc.extract(i_o, PERCEPTUAL_TAPS)
        for tap in PERCEPTUAL_TAPS:
            loss = loss + recon_lambda * perceptual_loss(target[tap], feats[tap])
    return loss


def _positions(feat):
    c = feat.shape[0]
    return feat.reshape(c, -1).transpose(0, 1)


def cost_matrix(f_s, f_cs):
    """Pairwise cosine distances between style positions (rows) and
    stylized positions (columns)."""
    if f_s.shape[0] != f_cs.shape[0]:
        raise InvalidInputError(
            f"cost_matrix: channel mismatch {f_s.shape[0]} vs {f_cs.shape[0]}"
        )
    a = _positions(f_s)
    b = _positions(f_cs)
    a = a / (a.norm(dim=1, keepdim=True) + _NORM_EPS)
    b = b / (b.norm(dim=1, keepdim=True) + _NORM_EPS)
    return 1.0 - a @ b.transpose(0, 1)


def remd_sample_indices(n_s, n_cs, cfg):
    """Seeded position subsample for both sides; full range when a side
    already fits the budget."""
    gen = torch.Generator().manual_seed(int(cfg.seed))
    idx_s = torch.randperm(n_s, generator=gen)[: cfg.max_samples] if n_s > cfg.max_samples else None
    idx_cs = (
        torch.randperm(n_cs, generator=gen)[: cfg.max_samples] if n_cs > cfg.max_samples else None
    )
    return idx_s, idx_cs


def _subsample(feat, idx):
    if idx is None:
        return feat
    c = feat.shape[0]
    return feat.reshape(c, -1)[:, idx]


def remd_loss(f_s, f_cs, cfg=RemdConfig()):
    """max of the two one-sided average nearest-neighbor cosine distances."""
    idx_s, idx_cs = remd_sample_indices(
        f_s.shape[-2] * f_s.shape[-1], f_cs.shape[-2] * f_cs.shape[-1], cfg
    )
    c = cost_matrix(_subsample(f_s, idx_s), _subsample(f_cs, idx_cs))
    row_term = c.min(dim=1).values.mean()
    col_term = c.min(dim=0).values.mean()
    return torch.maximum(row_term, col_term)


def gram_matrix(feat):
    c = feat.shape[0]
    flat = feat.reshape(c, -1)
    return flat @ flat.transpose(0, 1) / feat.numel()


def gram_loss(f_s, f_cs):
    """Squared Frobenius distance between c*h*w-normalized Gram matrices;
    spatial sizes of the two arguments may differ."""
    if f_s.shape[0] != f_cs.shape[0]:
        raise InvalidInputError(
            f"gram_loss: channel mismatch {f_s.shape[0]} vs {f_cs.shape[0]}"
        )
    diff = gram_matrix(f_s) - gram_matrix(f_cs)
    return (diff ** 2).sum()


def _channel_stats(feat):
    c = feat.shape[0]
    flat = feat.reshape(c, -1)
    mean = flat.mean(dim=1)
    var = ((flat - mean[:, None]) ** 2).mean(dim=1)
    return mean, torch.sqrt(var + _NORM_EPS)


def meanvar_loss(f_s, f_cs):
    """Squared per-channel mean and std differences, each averaged over
    channels."""
    if f_s.shape[0] != f_cs.shape[0]:
        raise InvalidInputError(
            f"meanvar_loss: channel mismatch {f_s.shape[0]} vs {f_cs.shape[0]}"
        )
    mu_s, sd_s = _channel_stats(f_s)
    mu_cs, sd_cs = _channel_stats(f_cs)
    return ((mu_s - mu_cs) ** 2).mean() + ((sd_s - sd_cs) ** 2).mean()


def _require_taps(features, taps, who):
    for tap in taps:
        if tap not in features:
            raise ConfigError(f"total_loss: {who} features are missing tap {tap!r}")


def total_loss(features_c, features_s, features_cs, weights=LossWeights(),
               assignment=LayerAssignment(), remd_cfg=RemdConfig()):
    """Weighted Eq.-style combination; returns (scalar, unweighted per-term
    breakdown). Disabled terms (weight zero) are skipped and reported as 0."""
    zero = torch.zeros(())
    l_p = zero
    if weights.alpha > 0:
        _require_taps(features_c, assignment.perceptual, "content")
        _require_taps(features_cs, assignment.perceptual, "stylized")
        l_p = sum(
            perceptual_loss(features_c[t], features_cs[t]) for t in assignment.perceptual
        )
    l_r = zero
    if weights.lambda1 > 0:
        _require_taps(features_s, assignment.remd, "style")
        _require_taps(features_cs, assignment.remd, "stylized")
        l_r = sum(
            remd_loss(
                features_s[t],
                features_cs[t],
                RemdConfig(remd_cfg.max_samples, remd_cfg.seed + k),
            )
            for k, t in enumerate(assignment.remd)
        )
    l_g = zero
    if weights.lambda2 > 0:
        _require_taps(features_s, assignment.gram, "style")
        _require_taps(features_cs, assignment.gram, "stylized")
        l_g = sum(gram_loss(features_s[t], features_cs[t]) for t in assignment.gram)
    l_m = zero
    if weights.lambda3 > 0:
        _require_taps(features_s, assignment.meanvar, "style")
        _require_taps(features_cs, assignment.meanvar, "stylized")
        l_m = sum(meanvar_loss(features_s[t], features_cs[t]) for t in assignment.meanvar)
    total = (
        weights.alpha * l_p
        + weights.lambda1 * l_r
        + weights.lambda2 * l_g
        + weights.lambda3 * l_m
    )
    breakdown = {
        "l_p": float(l_p.detach() if torch.is_tensor(l_p) else l_p),
        "l_r": float(l_r.detach() if torch.is_tensor(l_r) else l_r),
        "l_g": float(l_g.detach() if torch.is_tensor(l_g) else l_g),
        "l_m": float(l_m.detach() if torch.is_tensor(l_m) else l_m),
        "total": float(total.detach() if torch.is_tensor(total) else total),
    }
    return total, breakdown

"""Evaluation kit: SSIM on luminance, a clearly-not-LPIPS perceptual
distance, and a wall-clock stylization benchmark.
"""

from __future__ import annotations

import platform
import time
from dataclasses import dataclass

import numpy as np
import torch
from scipy.signal import convolve2d

from .errors import InvalidInputError
from .fine import StylePipeline
from .losses import PERCEPTUAL_TAPS, perceptual_loss
from .substrate import validate_image

_LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class SsimConfig:
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0


def gaussian_window(size=11, sigma=1.5):
    """Separable 2D Gaussian, normalized to sum 1."""
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    window = np.outer(g, g)
    return window / window.sum()


def _luminance(img):
    arr = img.detach().cpu().numpy().astype(np.float64)
    return _LUMA[0] * arr[0] + _LUMA[1] * arr[1] + _LUMA[2] * arr[2]


def ssim(a, b, cfg=SsimConfig()):
    """Mean SSIM index over all valid window positions, on luminance."""
    validate_image(a, "ssim first image")
    validate_image(b, "ssim second image")
    if a.shape != b.shape:
        raise InvalidInputError(f"ssim: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    for img, name in ((a, "first"), (b, "second")):
        if img.min() < -1e-6 or img.max() > 1.0 + 1e-6:
            raise InvalidInputError(f"ssim: {name} image has values outside [0, 1]")
    if a.shape[1] < cfg.window_size or a.shape[2] < cfg.window_size:
        raise InvalidInputError(
            f"ssim: image {tuple(a.shape[1:])} smaller than the {cfg.window_size}x"
            f"{cfg.window_size} window"
        )
    x = _luminance(a)
    y = _luminance(b)
    window = gaussian_window(cfg.window_size, cfg.sigma)
    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2

    mu_x = convolve2d(x, window, mode="valid")
    mu_y = convolve2d(y, window, mode="valid")
    sigma_x = convolve2d(x * x, window, mode="valid") - mu_x * mu_x
    sigma_y = convolve2d(y * y, window, mode="valid") - mu_y * mu_y
    sigma_xy = convolve2d(x * y, window, mode="valid") - mu_x * mu_y

    num = (2.0 * (mu_x * mu_y) + c1) * (2.0 * sigma_xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sigma_x + sigma_y + c2)
    return float(np.mean(num / den))


def perceptual_distance(a, b, enc):
    """Mean over the ReLU_X_1 taps of the MSE between channel-unit-normalized
    features. A stand-in metric: NOT comparable to LPIPS numbers."""
    validate_image(a, "perceptual_distance first image")
    validate_image(b, "perceptual_distance second image")
    if a.shape != b.shape:
        raise InvalidInputError(
            f"perceptual_distance: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}"
        )
    with torch.no_grad():
        feats_a = enc.extract(a, PERCEPTUAL_TAPS)
        feats_b = enc.extract(b, PERCEPTUAL_TAPS)
        total = 0.0
        for tap in PERCEPTUAL_TAPS:
            fa, fb = feats_a[tap], feats_b[tap]
            fa = fa / (fa.norm(dim=0, keepdim=True) + 1e-8)
            fb = fb / (fb.norm(dim=0, keepdim=True) + 1e-8)
            total += float(perceptual_loss(fa, fb))
    return total / len(PERCEPTUAL_TAPS)


@dataclass
class BenchResult:
    mean_seconds: float
    std_seconds: float
    times: list
    size: int
    hardware: str

    def __str__(self):
        return (
            f"stylize {self.size}x{self.size}: {self.mean_seconds:.4f} s "
            f"+/- {self.std_seconds:.4f} s over {len(self.times)} runs ({self.hardware})"
        )


def bench_stylize(coarse_ckpt, fine_ckpt, n=100, size=512, vgg_archive=None, warmup=3, seed=0):
    """Wall-clock mean over n synthesis runs after warmup runs, on seeded
    random images; model loading is excluded. Absolute numbers are
    hardware-bound; only report them."""
    pipeline = StylePipeline(coarse_ckpt, fine_ckpt, vgg_archive=vgg_archive)
    gen = torch.Generator().manual_seed(seed)
    content = torch.rand(3, size, size, generator=gen)
    style = torch.rand(3, size, size, generator=gen)
    for _ in range(warmup):
        pipeline.run(content, style)
    times = []
    for _ in range(n):
        start = time.perf_counter()
        pipeline.run(content, style)
        times.append(time.perf_counter() - start)
    times_arr = np.asarray(times)
    hardware = platform.processor() or platform.machine() or "unknown cpu"
    return BenchResult(
        mean_seconds=float(times_arr.mean()),
        std_seconds=float(times_arr.std()) if len(times) > 1 else 0.0,
        times=times,
        size=size,
        hardware=hardware,
    )

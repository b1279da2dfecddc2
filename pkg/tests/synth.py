"""Synthetic image generators for tests: smooth random fields with blocky
structure for content, a strongly patterned palette image for style. Every
generator is a pure function of its seed."""

import torch

from styler.substrate import save_image


def content_image(size, seed):
    """Smooth low-frequency field plus a few solid rectangles, so there is
    both structure to preserve and detail to discard."""
    gen = torch.Generator().manual_seed(seed)
    base = torch.rand(1, 3, 4, 4, generator=gen)
    img = torch.nn.functional.interpolate(
        base, size=(size, size), mode="bilinear", align_corners=False
    ).squeeze(0)
    for _ in range(3):
        y0, x0 = torch.randint(0, size // 2, (2,), generator=gen)
        h, w = torch.randint(size // 8, size // 2, (2,), generator=gen)
        color = torch.rand(3, 1, 1, generator=gen)
        img[:, y0:y0 + h, x0:x0 + w] = color
    return img.clamp(0.0, 1.0)


def style_image(size, seed=77):
    """Diagonal stripes in a fixed palette plus soft blobs: strong color
    statistics and oriented structure."""
    gen = torch.Generator().manual_seed(seed)
    ys, xs = torch.meshgrid(
        torch.arange(size, dtype=torch.float32),
        torch.arange(size, dtype=torch.float32),
        indexing="ij",
    )
    phase = (xs + ys) / max(size / 12.0, 1.0)
    stripes = 0.5 + 0.5 * torch.sin(phase)
    palette_a = torch.tensor([0.9, 0.6, 0.1]).view(3, 1, 1)
    palette_b = torch.tensor([0.1, 0.2, 0.7]).view(3, 1, 1)
    img = stripes * palette_a + (1.0 - stripes) * palette_b
    for _ in range(4):
        cy, cx = torch.randint(0, size, (2,), generator=gen)
        r = float(torch.randint(size // 10, size // 4, (1,), generator=gen))
        mask = ((ys - float(cy)) ** 2 + (xs - float(cx)) ** 2) < r * r
        color = torch.rand(3, 1, 1, generator=gen)
        img = torch.where(mask.unsqueeze(0), color.expand(3, size, size), img)
    return img.clamp(0.0, 1.0)


def write_dataset(root, count, size, seed=0):
    """Write count content PNGs under root; returns the directory."""
    root.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        save_image(content_image(size, seed + i), root / f"img_{i:04d}.png")
    return root

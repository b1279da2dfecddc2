"""Two-stage trainer and ablation driver.

Stage 1 trains the coarse reconstruction decoder on natural images at half
resolution (no WCT in the loop). Stage 2 freezes the coarse stage and
optimizes the Fine Network against the full loss suite with a single cached
style image. Both stages run single-threaded seeded math so reruns with the
same config produce bitwise-identical checkpoints.

A non-finite loss aborts the run and keeps the last good checkpoint on
disk; divergence should be visible, not clipped away.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import torch

from .coarse import (
    CoarseDecoder,
    coarse_forward,
    config_digest,
    load_coarse_checkpoint,
    save_coarse_checkpoint,
    seed_module_parameters,
    style_coloring_operator,
)
from .encoder import FULL_WIDTHS, TOY_WIDTHS, EncoderProfile, build_encoder
from .errors import ConfigError, NumericAbort
from .fine import (
    DEFAULT_C_MERGE,
    FineNetwork,
    load_fine_checkpoint,
    save_fine_checkpoint,
)
from .losses import (
    LayerAssignment,
    LossWeights,
    RemdConfig,
    reconstruction_loss,
    total_loss,
)
from .substrate import DatasetCursor, downsample2, load_image, resize, save_image

logger = logging.getLogger(__name__)

PROFILE_DEFAULTS = {
    "full": {"image_size": 512, "coarse_iters": 40_000, "fine_iters": 15_000},
    "toy": {"image_size": 128, "coarse_iters": 2_000, "fine_iters": 1_500},
}


@dataclass
class TrainConfig:
    profile: str = "toy"
    content_root: str = ""
    style_image: str = ""
    out_dir: str = "runs"
    image_size: int = 0          # 0 -> profile default
    batch_size: int = 1
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    coarse_iters: int = 0        # 0 -> profile default
    fine_iters: int = 0          # 0 -> profile default
    weights: LossWeights = field(default_factory=LossWeights)
    fusion: str = "ssf"
    use_coarse: bool = True
    seed: int = 0
    checkpoint_every: int = 500
    log_every: int = 50
    encoder_seed: int = 0
    vgg_archive: str = ""
    coarse_ckpt: str = ""
    remd_max_samples: int = 1024

    def __post_init__(self):
        if self.profile not in PROFILE_DEFAULTS:
            raise ConfigError(f"unknown profile {self.profile!r}")
        defaults = PROFILE_DEFAULTS[self.profile]
        if self.image_size == 0:
            self.image_size = defaults["image_size"]
        if self.coarse_iters == 0:
            self.coarse_iters = defaults["coarse_iters"]
        if self.fine_iters == 0:
            self.fine_iters = defaults["fine_iters"]
        if self.image_size % 16 != 0:
            raise ConfigError(f"image_size must be divisible by 16, got {self.image_size}")
        if self.batch_size != 1:
            raise ConfigError("batch_size is fixed at 1")
        if self.fusion not in ("ssf", "concat"):
            raise ConfigError(f"fusion must be 'ssf' or 'concat', got {self.fusion!r}")

    @property
    def block_widths(self):
        return FULL_WIDTHS if self.profile == "full" else TOY_WIDTHS

    @property
    def c_merge(self):
        return DEFAULT_C_MERGE[self.profile]

    def encoder_profile(self):
        if self.profile == "full":
            if not self.vgg_archive:
                raise ConfigError("full profile requires vgg_archive in the config")
            return EncoderProfile.full(self.vgg_archive)
        return EncoderProfile.toy(self.encoder_seed)

    def digest(self):
        payload = {k: v for k, v in self.__dict__.items() if k != "weights"}
        payload["weights"] = [
            self.weights.alpha, self.weights.lambda1, self.weights.lambda2,
            self.weights.lambda3, self.weights.recon_lambda,
        ]
        return config_digest(json.dumps(payload, sort_keys=True))


_CONFIG_KEYS = {
    "profile", "content_root", "style_image", "out_dir", "image_size", "batch_size",
    "lr", "beta1", "beta2", "adam_eps", "coarse_iters", "fine_iters", "fusion",
    "use_coarse", "seed", "checkpoint_every", "log_every", "encoder_seed",
    "vgg_archive", "coarse_ckpt", "remd_max_samples",
}
_WEIGHT_KEYS = {"alpha", "lambda1", "lambda2", "lambda3", "recon_lambda"}


def load_config(path):
    """Parse a TOML config file into a TrainConfig; unknown keys are config
    errors so typos fail loudly."""
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except Exception as exc:
            raise ConfigError(f"unparseable config {path}: {exc}") from exc
    weights_raw = raw.pop("weights", {})
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    unknown_w = set(weights_raw) - _WEIGHT_KEYS
    if unknown_w:
        raise ConfigError(f"unknown weight keys: {sorted(unknown_w)}")
    return TrainConfig(weights=LossWeights(**weights_raw), **raw)


class LossLog:
    """CSV loss log: one row per iteration, written incrementally."""

    def __init__(self, path, columns):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.columns = ["iter"] + list(columns)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(self.columns)

    def row(self, iteration, values):
        self._writer.writerow([iteration] + [f"{values[c]:.8g}" for c in self.columns[1:]])
        self._fh.flush()

    def close(self):
        self._fh.close()


def read_loss_csv(path):
    """Rows as {column: float} dicts, with 'iter' as int."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            row = {"iter": int(raw["iter"])}
            row.update({k: float(v) for k, v in raw.items() if k != "iter"})
            rows.append(row)
    return rows


def parameter_digest(*modules):
    """sha256 over all parameter and buffer bytes, in state-dict order."""
    h = hashlib.sha256()
    for module in modules:
        for key, tensor in module.state_dict().items():
            h.update(key.encode())
            h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def _abort_if_nonfinite(value, stage, iteration, last_good):
    if not torch.isfinite(value):
        kept = f"; last good checkpoint kept at {last_good}" if last_good else ""
        raise NumericAbort(
            f"{stage} training hit a non-finite loss at iteration {iteration}{kept}"
        )


def train_coarse(cfg):
    """Stage 1: optimize the reconstruction decoder; returns the checkpoint
    path."""
    torch.set_num_threads(1)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    enc = build_encoder(cfg.encoder_profile())
    dec = CoarseDecoder(cfg.block_widths)
    seed_module_parameters(dec, cfg.seed, mid_gray_bias=("convs.8",))
    cursor = DatasetCursor(cfg.content_root, cfg.seed)
    if not cursor.files:
        raise ConfigError(f"no images found under {cfg.content_root!r}")
    optimizer = torch.optim.Adam(
        dec.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps
    )
    half = cfg.image_size // 2
    log = LossLog(out_dir / "coarse_loss.csv", ["l_re"])
    rolling = out_dir / "coarse_last.nta"
    last_good = None
    profile = cfg.encoder_profile()
    try:
        for it in range(1, cfg.coarse_iters + 1):
            img = resize(next(cursor), half, half)
            with torch.no_grad():
                feat = enc.extract(img, {"ReLU_4_1"})["ReLU_4_1"]
            out = dec(feat).f3
            loss = reconstruction_loss(out, img, enc, cfg.weights.recon_lambda)
            _abort_if_nonfinite(loss, "coarse", it, last_good)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            log.row(it, {"l_re": float(loss)})
            if it % cfg.log_every == 0 or it == 1:
                logger.info("coarse iter %d: l_re=%.6f", it, float(loss))
            if it % cfg.checkpoint_every == 0:
                save_coarse_checkpoint(rolling, dec, profile, it, cfg.digest())
                last_good = rolling
    finally:
        log.close()
    final = out_dir / "coarse.nta"
    save_coarse_checkpoint(final, dec, profile, cfg.coarse_iters, cfg.digest())
    return final


def train_fine(cfg, coarse_ckpt):
    """Stage 2: optimize the Fine Network against the cached style; the
    coarse stage and encoder are provably untouched. Returns the checkpoint
    path."""
    torch.set_num_threads(1)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dec, meta = load_coarse_checkpoint(coarse_ckpt)
    if meta["profile_name"] != cfg.profile:
        raise ConfigError(
            f"coarse checkpoint profile {meta['profile_name']!r} does not match "
            f"config profile {cfg.profile!r}"
        )
    enc = build_encoder(cfg.encoder_profile())
    frozen_before = parameter_digest(enc, dec)

    style = resize(load_image(cfg.style_image), cfg.image_size, cfg.image_size)
    assignment = LayerAssignment()
    style_taps = set()
    if cfg.weights.lambda1 > 0:
        style_taps |= set(assignment.remd)
    if cfg.weights.lambda2 > 0:
        style_taps |= set(assignment.gram)
    if cfg.weights.lambda3 > 0:
        style_taps |= set(assignment.meanvar)
    with torch.no_grad():
        style_features = enc.extract(style, style_taps) if style_taps else {}
    style_op = style_coloring_operator(enc, downsample2(style)) if cfg.use_coarse else None

    net = FineNetwork(
        cfg.block_widths, c_merge=cfg.c_merge, use_coarse=cfg.use_coarse, fusion=cfg.fusion
    )
    seed_module_parameters(net, cfg.seed + 1, mid_gray_bias=("dec_convs.2",))
    optimizer = torch.optim.Adam(
        net.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps
    )
    cursor = DatasetCursor(cfg.content_root, cfg.seed)
    if not cursor.files:
        raise ConfigError(f"no images found under {cfg.content_root!r}")

    stylized_taps = set(assignment.perceptual) if cfg.weights.alpha > 0 else set()
    stylized_taps |= style_taps
    log = LossLog(out_dir / "fine_loss.csv", ["l_p", "l_r", "l_g", "l_m", "total"])
    rolling = out_dir / "fine_last.nta"
    last_good = None
    profile = cfg.encoder_profile()
    try:
        for it in range(1, cfg.fine_iters + 1):
            img = resize(next(cursor), cfg.image_size, cfg.image_size)
            if cfg.use_coarse:
                taps = coarse_forward(enc, dec, downsample2(img), None, style_op=style_op)
                assert not taps.f1.requires_grad, "coarse taps must stay detached"
                x_cs = net(img, taps)
            else:
                x_cs = net(img)
            with torch.no_grad():
                content_features = (
                    enc.extract(img, assignment.perceptual) if cfg.weights.alpha > 0 else {}
                )
            stylized_features = enc.extract(x_cs, stylized_taps) if stylized_taps else {}
            loss, breakdown = total_loss(
                content_features,
                style_features,
                stylized_features,
                cfg.weights,
                assignment,
                RemdConfig(cfg.remd_max_samples, cfg.seed + 31 * it),
            )
            _abort_if_nonfinite(loss, "fine", it, last_good)
            optimizer.zero_grad()
            if loss.requires_grad:
                loss.backward()
            optimizer.step()
            log.row(it, breakdown)
            if it % cfg.log_every == 0 or it == 1:
                logger.info(
                    "fine iter %d: total=%.5f (l_p=%.4f l_r=%.4f l_g=%.4f l_m=%.4f)",
                    it, breakdown["total"], breakdown["l_p"], breakdown["l_r"],
                    breakdown["l_g"], breakdown["l_m"],
                )
            if it % cfg.checkpoint_every == 0:
                save_fine_checkpoint(rolling, net, profile, cfg.weights, it, cfg.digest())
                last_good = rolling
    finally:
        log.close()
    frozen_after = parameter_digest(enc, dec)
    if frozen_before != frozen_after:
        raise NumericAbort("frozen coarse/encoder parameters changed during fine training")
    final = out_dir / "fine.nta"
    save_fine_checkpoint(final, net, profile, cfg.weights, cfg.fine_iters, cfg.digest())
    return final


ABLATION_VARIANTS = {
    "base": {},
    "no_perceptual": {"alpha": 0.0},
    "no_remd": {"lambda1": 0.0},
    "no_gram": {"lambda2": 0.0},
    "no_meanvar": {"lambda3": 0.0},
    "concat_fusion": {"fusion": "concat"},
    "no_coarse": {"use_coarse": False},
}


def ablate(cfg, coarse_ckpt=None):
    """Train and evaluate the loss/fusion/coarse ablation variants; writes a
    side-by-side image grid plus a loss table and returns the table."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if coarse_ckpt is None:
        coarse_ckpt = cfg.coarse_ckpt
    if not coarse_ckpt or not Path(coarse_ckpt).exists():
        logger.info("ablate: no coarse checkpoint given, training stage 1 first")
        coarse_ckpt = train_coarse(replace(cfg, out_dir=str(out_dir / "coarse_stage")))

    cursor = DatasetCursor(cfg.content_root, cfg.seed)
    if not cursor.files:
        raise ConfigError(f"no images found under {cfg.content_root!r}")
    probe = resize(next(cursor), cfg.image_size, cfg.image_size)
    style = resize(load_image(cfg.style_image), cfg.image_size, cfg.image_size)

    dec, meta = load_coarse_checkpoint(coarse_ckpt)
    enc = build_encoder(cfg.encoder_profile())
    report = {}
    panels = [probe, style]
    for name, tweaks in ABLATION_VARIANTS.items():
        weight_kwargs = {k: v for k, v in tweaks.items() if k in _WEIGHT_KEYS}
        other_kwargs = {k: v for k, v in tweaks.items() if k not in _WEIGHT_KEYS}
        variant_cfg = replace(
            cfg,
            out_dir=str(out_dir / name),
            weights=replace(cfg.weights, **weight_kwargs),
            **other_kwargs,
        )
        ckpt = train_fine(variant_cfg, coarse_ckpt)
        rows = read_loss_csv(Path(variant_cfg.out_dir) / "fine_loss.csv")
        final_row = rows[-1]
        net, _ = load_fine_checkpoint(ckpt)
        with torch.no_grad():
            if variant_cfg.use_coarse:
                taps = coarse_forward(enc, dec, downsample2(probe), downsample2(style))
                out = net(probe, taps)
            else:
                out = net(probe)
        panels.append(out)
        report[name] = {
            "checkpoint": str(ckpt),
            "l_p": final_row["l_p"],
            "l_r": final_row["l_r"],
            "l_g": final_row["l_g"],
            "l_m": final_row["l_m"],
            "total": final_row["total"],
        }
        logger.info("ablation %s: final total %.5f", name, final_row["total"])

    grid = torch.cat(panels, dim=2)
    save_image(grid, out_dir / "ablation_grid.png")
    table = out_dir / "ablation_report.csv"
    with open(table, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "l_p", "l_r", "l_g", "l_m", "total", "checkpoint"])
        for name, row in report.items():
            writer.writerow(
                [name, row["l_p"], row["l_r"], row["l_g"], row["l_m"], row["total"],
                 row["checkpoint"]]
            )
    return report

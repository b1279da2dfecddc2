"""Command line interface.

Exit codes: 0 success, 2 configuration or usage error, 3 I/O error,
4 numeric abort (training diverged).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .coarse import coarse_stylize, encoder_profile_from_meta, load_coarse_checkpoint
from .encoder import build_encoder
from .errors import (
    ArchiveError,
    ConfigError,
    ImageIOError,
    InvalidInputError,
    NumericAbort,
    StylerError,
)
from .evalkit import SsimConfig, bench_stylize, ssim
from .fine import stylize
from .substrate import downsample2, load_image, save_image
from .trainer import ablate, load_config, train_coarse, train_fine

logger = logging.getLogger(__name__)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="styler",
        description="Coarse-to-fine structure-aware artistic style transfer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-coarse", help="train the stage-1 reconstruction decoder")
    p.add_argument("--config", required=True, help="TOML training config")

    p = sub.add_parser("train-fine", help="train the stage-2 fine network")
    p.add_argument("--config", required=True, help="TOML training config")
    p.add_argument("--coarse", required=True, help="coarse checkpoint (.nta)")

    p = sub.add_parser("stylize", help="stylize a content image")
    p.add_argument("--coarse", required=True)
    p.add_argument("--fine", required=True)
    p.add_argument("--content", required=True)
    p.add_argument("--style", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--coarse-only", action="store_true",
                   help="emit the coarse stage's half-resolution stylization")
    p.add_argument("--vgg", default=None, help="VGG weight archive (full profile only)")

    p = sub.add_parser("eval", help="evaluation metrics")
    eval_sub = p.add_subparsers(dest="metric", required=True)
    p_ssim = eval_sub.add_parser("ssim", help="structural similarity between two images")
    p_ssim.add_argument("--a", required=True)
    p_ssim.add_argument("--b", required=True)

    p = sub.add_parser("bench", help="stylization timing benchmark")
    p.add_argument("--coarse", required=True)
    p.add_argument("--fine", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--vgg", default=None)

    p = sub.add_parser("ablate", help="train and evaluate ablation variants")
    p.add_argument("--config", required=True)
    p.add_argument("--coarse", default=None, help="reuse an existing coarse checkpoint")
    return parser


def _cmd_train_coarse(args):
    path = train_coarse(load_config(args.config))
    print(f"coarse checkpoint written to {path}")


def _cmd_train_fine(args):
    path = train_fine(load_config(args.config), args.coarse)
    print(f"fine checkpoint written to {path}")


def _cmd_stylize(args):
    content = load_image(args.content)
    style = load_image(args.style)
    if args.coarse_only:
        dec, meta = load_coarse_checkpoint(args.coarse)
        enc = build_encoder(encoder_profile_from_meta(meta, args.vgg))
        out = coarse_stylize(enc, dec, downsample2(content), downsample2(style))
    else:
        out = stylize(args.coarse, args.fine, content, style, vgg_archive=args.vgg)
    save_image(out, args.out)
    print(f"stylized image written to {args.out}")


def _cmd_eval(args):
    if args.metric == "ssim":
        value = ssim(load_image(args.a), load_image(args.b), SsimConfig())
        print(f"ssim {value:.6f}")


def _cmd_bench(args):
    result = bench_stylize(args.coarse, args.fine, n=args.n, size=args.size,
                           vgg_archive=args.vgg)
    print(result)


def _cmd_ablate(args):
    report = ablate(load_config(args.config), coarse_ckpt=args.coarse)
    for name, row in report.items():
        print(f"{name}: total={row['total']:.6f}")


_DISPATCH = {
    "train-coarse": _cmd_train_coarse,
    "train-fine": _cmd_train_fine,
    "stylize": _cmd_stylize,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "ablate": _cmd_ablate,
}


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        _DISPATCH[args.command](args)
    except (ConfigError, InvalidInputError) as exc:
        logger.error("%s", exc)
        return 2
    except (ImageIOError, ArchiveError) as exc:
        logger.error("%s", exc)
        return 3
    except NumericAbort as exc:
        logger.error("%s", exc)
        return 4
    except StylerError as exc:
        logger.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: ``styleforge {nst,ust,color-match} ...``.

Every RunConfig parameter is exposed as a flag; an optional ``--config``
file (plain ``key = value`` lines) supplies defaults that flags override.
Exits 0 on success and 1 with a stage-tagged message on stderr otherwise.
"""

from __future__ import annotations

import argparse
import sys

from .pipeline import (
    RunConfig,
    config_from_mapping,
    parse_config_file,
    run_color_match,
    run_nst,
    run_ust,
)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--content", help="content image path (PNG/JPEG)")
    p.add_argument("--style", help="style image path")
    p.add_argument("--style2", help="second style image for n-ary masks")
    p.add_argument("--mask", help="mask image: grayscale scalar field or indexed palette")
    p.add_argument("--weights", help="SFW1 weight file")
    p.add_argument("--output", help="output image path (default out.png)")
    p.add_argument("--color", choices=["off", "pre", "post"], help="color matching mode")
    p.add_argument("--region-styles", dest="region_styles",
                   help="palette-index:style-slot pairs, e.g. '0:0,1:1'")
    p.add_argument("--upscale", type=int, help="integer bilinear upscale factor")
    p.add_argument("--blur-sigma", dest="blur_sigma", type=float,
                   help="Gaussian blur sigma applied after upscaling")
    p.add_argument("--seed", type=int, help="RNG seed (runs are reproducible)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="styleforge",
        description="Neural style transfer: optimization-based (nst) and "
        "feed-forward whitening/coloring (ust).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    nst = sub.add_parser("nst", help="optimization-based style transfer")
    _add_common(nst)
    nst.add_argument("--alpha", type=float, help="content weight")
    nst.add_argument("--beta", type=float, help="style weight")
    nst.add_argument("--lambda", dest="lambda_tv", type=float,
                     help="total-variation weight (default 8.5e-2)")
    nst.add_argument("--shift", action="store_true", default=None,
                     help="activation shift in the Gram matrices")
    nst.add_argument("--chained", action="store_true", default=None,
                     help="chained correlations between adjacent layers")
    nst.add_argument("--all-layers", dest="all_layers",
                     action=argparse.BooleanOptionalAction, default=None,
                     help="style loss over all conv layers (default on)")
    nst.add_argument("--reverse-layer-weights", dest="reverse_layer_weights",
                     action="store_true", default=None,
                     help="count geometric layer depth from the deep end")
    nst.add_argument("--content-layer", dest="content_layer", help="content loss layer")
    nst.add_argument("--style-layers", dest="style_layers",
                     help="explicit comma-separated style layer list")
    nst.add_argument("--optimizer", choices=["adam", "lbfgs"])
    nst.add_argument("--iters", type=int, help="optimization iterations")
    nst.add_argument("--lr", type=float, help="Adam learning rate")
    nst.add_argument("--memory", type=int, help="L-BFGS history length")
    nst.add_argument("--init", choices=["noise", "content"], help="image initialization")
    nst.add_argument("--noise-sigma", dest="noise_sigma", type=float,
                     help="stddev of the Gaussian init (0-255 units)")
    nst.add_argument("--trace", help="write a loss trace CSV here")

    ust = sub.add_parser("ust", help="feed-forward universal style transfer")
    _add_common(ust)
    ust.add_argument("--ust-alpha", dest="ust_alpha", type=float,
                     help="style blend weight in [0, 1]")
    ust.add_argument("--levels", help="descending encoder levels, e.g. 5,4,3,2,1")

    cm = sub.add_parser("color-match", help="recolor style to content statistics")
    _add_common(cm)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    values = {k: v for k, v in vars(args).items() if v is not None}
    config_path = values.pop("config", None)
    merged: dict = {}
    if config_path:
        merged.update(parse_config_file(config_path))
    merged.update(values)

    try:
        cfg = config_from_mapping(merged)
        cfg.command = args.command
        if cfg.command == "nst":
            run_nst(cfg)
        elif cfg.command == "ust":
            run_ust(cfg)
        else:
            run_color_match(cfg)
    except Exception as e:
        print(f"styleforge: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

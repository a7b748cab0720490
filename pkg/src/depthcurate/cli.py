"""Command-line interface.

Subcommands: curate, eval, reward, ssim, register, gradcheck.  Every flag
default matches the pipeline's standard constants, so a bare `curate`
invocation runs the reference configuration.  Exit codes: 0 success, 1 I/O
or configuration error, 2 validation failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
from PIL import Image

from . import __version__
from .evaluation import (EvalConfig, aggregate, evaluate_sample, write_report_csv,
                         write_report_json)
from .fusion import FusionConfig
from .losses import (DegenerateAlignmentError, RewardWeights, aesthetic_score,
                     cosine_depth_loss, load_mlp_weights, rl_total_loss, toy_embed)
from .pipeline import (DEFAULT_PNG16_SCALE, ManifestError, PipelineConfig, parse_manifest,
                       run_pipeline)
from .probes import GRADCHECK_TOLERANCES, run_gradcheck
from .raster import (DepthMap, RasterError, RgbImage, load_depth, load_disparity,
                     resize_bilinear, rgb_to_luma)
from .registration import RegistrationConfig, register
from .ssim import mean_ssim, ssim_map

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VALIDATION = 2

WORKERS_ENV = "DEPTHCURATE_WORKERS"


def _load_rgb(path) -> RgbImage:
    with Image.open(path) as img:
        return RgbImage(np.asarray(img.convert("RGB")))


def _load_depth_auto(path, scale: float) -> DepthMap:
    fmt = "png16" if str(path).lower().endswith(".png") else "pfm"
    return load_depth(path, fmt=fmt, scale=scale)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depthcurate",
                                     description="depth-data curation and evaluation tools")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curate", help="build fusion masks for a JSONL manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ssim-threshold", type=float, default=0.85)
    p.add_argument("--min-matches", type=int, default=10)
    p.add_argument("--min-valid-fraction", type=float, default=0.5)
    p.add_argument("--crop", type=int, default=518)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None,
                   help=f"worker count (default: ${WORKERS_ENV} or 1)")

    p = sub.add_parser("eval", help="evaluate disparity predictions against ground truth")
    p.add_argument("manifest", help="JSONL lines: {id, pred_disp, depth_gt[, depth_scale]}")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--csv", default=None, help="optional per-sample CSV path")
    p.add_argument("--delta", type=float, default=1.25)
    p.add_argument("--max-depth", type=float, default=None)

    p = sub.add_parser("reward", help="score a generated/source depth pair plus image")
    p.add_argument("depth_gen")
    p.add_argument("depth_src")
    p.add_argument("image")
    p.add_argument("--mlp", required=True, help="MLP weight JSON")
    p.add_argument("--lambda-depth", type=float, default=0.9)
    p.add_argument("--lambda-aesthetic", type=float, default=0.1)
    p.add_argument("--depth-scale", type=float, default=DEFAULT_PNG16_SCALE)

    p = sub.add_parser("ssim", help="mean SSIM between two images")
    p.add_argument("image_a")
    p.add_argument("image_b")

    p = sub.add_parser("register", help="estimate the affine registration of two images")
    p.add_argument("image_gen")
    p.add_argument("image_orig")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--op", choices=["all", "ssi", "gm", "cosine", "aesthetic"], default="all")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_curate(args) -> int:
    workers = args.workers
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    cfg = PipelineConfig(
        fusion=FusionConfig(
            ssim_threshold=args.ssim_threshold,
            min_matches=args.min_matches,
            min_valid_fraction=args.min_valid_fraction,
            crop_size=args.crop,
        ),
        workers=workers,
        seed=args.seed,
        output_dir=args.out,
    )
    entries = parse_manifest(args.manifest)
    summary = run_pipeline(entries, cfg)
    print(json.dumps({k: summary[k] for k in
                      ("processed", "accepted", "rejected", "failed", "mean_valid_fraction")}))
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = EvalConfig(delta_threshold=args.delta, max_depth=args.max_depth)
    samples = []
    with open(args.manifest, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            pred = load_disparity(doc["pred_disp"])
            gt = _load_depth_auto(doc["depth_gt"], float(doc.get("depth_scale", DEFAULT_PNG16_SCALE)))
            samples.append(evaluate_sample(pred, gt, cfg, sample_id=str(doc["id"])))
    report = aggregate(samples, cfg)
    write_report_json(report, args.out)
    if args.csv:
        write_report_csv(report, args.csv)
    agg = report.aggregate
    print(f"samples={len(samples)} absrel={agg['absrel']:.6f} "
          f"delta1={agg['delta1']:.6f} rmse={agg['rmse']:.6f}")
    return EXIT_OK


def _cmd_reward(args) -> int:
    d_gen = _load_depth_auto(args.depth_gen, args.depth_scale)
    d_src = _load_depth_auto(args.depth_src, args.depth_scale)
    img = _load_rgb(args.image)
    weights = load_mlp_weights(args.mlp)
    rw = RewardWeights(lambda_depth=args.lambda_depth, lambda_aesthetic=args.lambda_aesthetic)
    result = rl_total_loss(d_gen, d_src, img, weights, rw)
    depth = cosine_depth_loss(d_gen, d_src)
    score, _ = aesthetic_score(toy_embed(img), weights)
    print(json.dumps({
        "total_loss": result.value,
        "cosine_depth_loss": depth.value,
        "aesthetic_score": score,
        "lambda_depth": rw.lambda_depth,
        "lambda_aesthetic": rw.lambda_aesthetic,
    }))
    return EXIT_OK


def _cmd_ssim(args) -> int:
    a = _load_rgb(args.image_a)
    b = _load_rgb(args.image_b)
    if (b.width, b.height) != (a.width, a.height):
        b = resize_bilinear(b, a.width, a.height)
    value = mean_ssim(ssim_map(rgb_to_luma(a), rgb_to_luma(b)))
    print(f"mean_ssim={value:.6f}")
    return EXIT_OK


def _cmd_register(args) -> int:
    gen = _load_rgb(args.image_gen)
    orig = _load_rgb(args.image_orig)
    rng = np.random.default_rng(args.seed)
    result, _, coverage = register(gen, orig, RegistrationConfig(), rng)
    out = {
        "succeeded": result.succeeded,
        "matches": result.match_count,
        "inliers": result.inlier_count,
        "coverage_fraction": float(coverage.bits.mean()) if coverage.bits.size else 0.0,
    }
    if result.transform is not None:
        out["transform"] = [list(row) for row in result.transform.matrix.tolist()]
    print(json.dumps(out))
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    ops = list(GRADCHECK_TOLERANCES) if args.op == "all" else [args.op]
    failed = False
    for op in ops:
        error = run_gradcheck(op, seed=args.seed, instances=20)
        tolerance = GRADCHECK_TOLERANCES[op]
        status = "ok" if error < tolerance else "FAIL"
        print(f"{op}: max relative error {error:.3e} (tolerance {tolerance:.0e}) {status}")
        failed = failed or error >= tolerance
    return EXIT_VALIDATION if failed else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_ERROR if e.code not in (0, None) else EXIT_OK
    handlers = {
        "curate": _cmd_curate,
        "eval": _cmd_eval,
        "reward": _cmd_reward,
        "ssim": _cmd_ssim,
        "register": _cmd_register,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except (OSError, json.JSONDecodeError, ManifestError, RasterError,
            DegenerateAlignmentError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

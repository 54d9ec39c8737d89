"""Command-line surface.

Subcommands: loss, heatmap, optimize, gradcheck, gen-toy, rerun. Every
command that writes files drops a JSON run manifest beside them with all
defaults materialized, input hashes, and the fully resolved argv; `rerun
--manifest` replays that argv and must reproduce the outputs byte for byte.

Exit codes: 0 ok, 1 gradient check failed, 2 I/O or undecodable input,
3 contract/shape/schema violation, 4 non-finite loss (divergence).
"""

import argparse
import dataclasses
import hashlib
import json
import sys

import numpy as np

from . import gradcheck as gc
from . import images, losses, similarity, weights_io
from .encoder import FEATURE_KINDS, ViTConfig
from .errors import (ContractError, CorruptionError, DimensionError,
                     FormatError, ImageDecodeError, NonFiniteError,
                     SchemaError)
from .losses import LossConfig

TOOL = "vitpercep"
VERSION = "0.1.0"

EXIT_OK = 0
EXIT_GRADCHECK = 1
EXIT_IO = 2
EXIT_CONTRACT = 3
EXIT_DIVERGED = 4


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    return h.hexdigest()


def _manifest(command: str, argv: list, inputs: list, outputs: list,
              config: dict, seed: int) -> dict:
    return {
        "tool": TOOL,
        "version": VERSION,
        "command": command,
        "argv": argv,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "config": config,
        "seed": seed,
    }


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _write_manifest(path, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(_dump_json(manifest))
        f.write("\n")


def _load_for_encoder(path, config: ViTConfig, refuse_crop: bool) -> np.ndarray:
    img = images.load_image(path)
    want = config.image_size
    if img.shape[0] != want or img.shape[1] != want:
        if refuse_crop:
            raise DimensionError(
                f"{path}: image {img.shape[0]}x{img.shape[1]} does not match "
                f"encoder size {want} (cropping refused)"
            )
        img = images.center_crop(img, want)
    return img


def _loss_config_from_args(args) -> LossConfig:
    return LossConfig(
        loss_kind=args.loss,
        layer=args.layer,
        feature_kind=args.feature,
        mask_ratio=args.mask_ratio,
        lam=args.lam,
        p=args.p,
        deblur_metric=args.metric,
        charbonnier_eps=args.charbonnier_eps,
        seed=args.seed,
        local_norm=args.local_norm,
        local_reduction=args.local_reduction,
        wasserstein_root=not args.no_root,
        apply_final_norm=args.final_norm,
    ).resolved()


def _loss_argv(command: str, args, cfg: LossConfig, tail: list) -> list:
    argv = [
        command,
        "--weights", str(args.weights),
        "--loss", cfg.loss_kind,
        "--layer", str(cfg.layer),
        "--feature", cfg.feature_kind,
        "--mask-ratio", repr(cfg.mask_ratio),
        "--lambda", repr(cfg.lam),
        "--p", repr(cfg.p),
        "--metric", cfg.deblur_metric,
        "--charbonnier-eps", repr(cfg.charbonnier_eps),
        "--seed", str(cfg.seed),
        "--precision", args.precision,
        "--local-norm", cfg.local_norm,
        "--local-reduction", cfg.local_reduction,
    ]
    if not cfg.wasserstein_root:
        argv.append("--no-root")
    if cfg.apply_final_norm:
        argv.append("--final-norm")
    if getattr(args, "refuse_crop", False):
        argv.append("--refuse-crop")
    return argv + tail


def _np_dtype(precision: str):
    return np.float32 if precision == "f32" else np.float64


# ---------------------------------------------------------------------------
# commands


def cmd_loss(args) -> int:
    cfg = _loss_config_from_args(args)
    config, bundle = weights_io.load(args.weights, dtype=_np_dtype(args.precision))
    recon = _load_for_encoder(args.recon, config, args.refuse_crop)
    ref = _load_for_encoder(args.ref, config, args.refuse_crop)
    report = losses.total_loss(recon, ref, bundle, cfg)
    argv = _loss_argv("loss", args, cfg, [str(args.recon), str(args.ref)])
    manifest = _manifest("loss", argv, [args.recon, args.ref, args.weights],
                         [], dataclasses.asdict(cfg), cfg.seed)
    out = {
        "deblur_term": report.deblur_term,
        "percep_term": report.percep_term,
        "total": report.total,
        "config": dataclasses.asdict(cfg),
        "manifest": manifest,
    }
    print(_dump_json(out))
    return EXIT_OK


def cmd_heatmap(args) -> int:
    config, bundle = weights_io.load(args.weights, dtype=_np_dtype(args.precision))
    img = _load_for_encoder(args.image, config, args.refuse_crop)
    g = config.grid
    if not (0 <= args.row < g and 0 <= args.col < g):
        raise ContractError(f"query cell ({args.row}, {args.col}) outside {g}x{g} grid")
    query_index = args.row * g + args.col + 1
    smap = similarity.similarity_map(img, bundle, args.layer,
                                     query_index, feature_kind=args.feature)
    pgm_path = args.out_prefix + ".pgm"
    csv_path = args.out_prefix + ".csv"
    man_path = args.out_prefix + ".manifest.json"
    # linear [-1, 1] -> [0, 255]
    images.save_pnm(pgm_path, ((smap.values + 1.0) * 0.5)[:, :, None], maxval=255)
    with open(csv_path, "w", encoding="utf-8") as f:
        for r in range(g):
            f.write(",".join(f"{v:.9f}" for v in smap.values[r]))
            f.write("\n")
    argv = [
        "heatmap",
        "--weights", str(args.weights),
        "--row", str(args.row), "--col", str(args.col),
        "--layer", str(args.layer), "--feature", args.feature,
        "--precision", args.precision,
        "--out-prefix", args.out_prefix,
    ]
    if args.refuse_crop:
        argv.append("--refuse-crop")
    argv.append(str(args.image))
    manifest = _manifest(
        "heatmap", argv, [args.image, args.weights], [pgm_path, csv_path],
        {"layer": args.layer, "feature_kind": args.feature,
         "query_index": query_index, "grid": g}, 0,
    )
    _write_manifest(man_path, manifest)
    print(_dump_json({"pgm": pgm_path, "csv": csv_path,
                      "query_value": smap.value_at(query_index)}))
    return EXIT_OK


def cmd_optimize(args) -> int:
    if args.steps < 1:
        raise ContractError(f"steps must be >= 1, got {args.steps}")
    if args.step_size <= 0:
        raise ContractError(f"step-size must be positive, got {args.step_size}")
    cfg = _loss_config_from_args(args)
    config, bundle = weights_io.load(args.weights, dtype=_np_dtype(args.precision))
    x = _load_for_encoder(args.init, config, args.refuse_crop)
    target = _load_for_encoder(args.target, config, args.refuse_crop)

    rows = []
    diverged = False
    good_x = x
    # row k holds the state after k updates; row 0 is the starting point
    for k in range(args.steps + 1):
        try:
            report = losses.total_loss(x, target, bundle, cfg, want_gradient=True)
        except NonFiniteError:
            diverged = True
            break
        rows.append((k, report.deblur_term, report.percep_term, report.total,
                     losses.psnr(x, target)))
        good_x = x
        if k < args.steps:
            x = x - args.step_size * report.gradient

    images.save_image(args.out, np.clip(good_x, 0.0, 1.0), bitdepth=16)
    with open(args.trace, "w", encoding="utf-8") as f:
        f.write("step,deblur,percep,total,psnr\n")
        for k, d, p_, t, ps in rows:
            f.write(f"{k},{d!r},{p_!r},{t!r},{ps!r}\n")
    argv = _loss_argv("optimize", args, cfg, [
        "--steps", str(args.steps), "--step-size", repr(args.step_size),
        "--out", str(args.out), "--trace", str(args.trace),
        str(args.init), str(args.target),
    ])
    manifest = _manifest("optimize", argv, [args.init, args.target, args.weights],
                         [args.out, args.trace], dataclasses.asdict(cfg), cfg.seed)
    _write_manifest(str(args.out) + ".manifest.json", manifest)
    if diverged:
        print(f"diverged after {len(rows)} steps; last finite state saved",
              file=sys.stderr)
        return EXIT_DIVERGED
    print(_dump_json({"out": str(args.out), "trace": str(args.trace),
                      "initial_total": rows[0][3], "final_total": rows[-1][3],
                      "initial_psnr": rows[0][4], "final_psnr": rows[-1][4]}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.precision == "f32":
        raise ContractError(
            "gradient checking runs in f64 only; an f32 difference quotient "
            "at step 1e-5 is rounding noise"
        )
    if args.weights:
        _, bundle = weights_io.load(args.weights, dtype=np.float64)
    else:
        config = ViTConfig(image_size=16, patch_size=4, embed_dim=8,
                           num_layers=3, num_heads=2, flavor="toy")
        bundle = weights_io.generate_toy(config, seed=args.seed)
    results = gc.run_suite(bundle, count=args.instances, seed=args.seed,
                           step=args.step, threshold=args.threshold,
                           corrupt=args.corrupt_gradient)
    print(_dump_json({"results": results, "tool": TOOL, "version": VERSION}))
    return EXIT_OK if all(r["passed"] for r in results) else EXIT_GRADCHECK


def cmd_gen_toy(args) -> int:
    config = ViTConfig(
        image_size=args.image_size,
        patch_size=args.patch_size,
        embed_dim=args.dim,
        num_layers=args.depth,
        num_heads=args.heads,
        mlp_ratio=args.mlp_ratio,
        channels=args.channels,
        flavor="toy",
        norm_mean=(0.0,) * args.channels,
        norm_std=(1.0,) * args.channels,
        final_norm=not args.no_final_norm,
    )
    bundle = weights_io.generate_toy(config, seed=args.seed)
    weights_io.save(config, bundle, args.out)
    argv = [
        "gen-toy",
        "--image-size", str(args.image_size), "--patch-size", str(args.patch_size),
        "--dim", str(args.dim), "--depth", str(args.depth),
        "--heads", str(args.heads), "--mlp-ratio", repr(args.mlp_ratio),
        "--channels", str(args.channels), "--seed", str(args.seed),
        "--out", str(args.out),
    ]
    if args.no_final_norm:
        argv.append("--no-final-norm")
    manifest = _manifest("gen-toy", argv, [], [args.out],
                         dataclasses.asdict(config), args.seed)
    _write_manifest(str(args.out) + ".manifest.json", manifest)
    print(_dump_json({"out": str(args.out), "sha256": _sha256(args.out)}))
    return EXIT_OK


def cmd_rerun(args) -> int:
    with open(args.manifest, "r", encoding="utf-8") as f:
        try:
            manifest = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"{args.manifest}: not valid JSON: {e}") from e
    if not isinstance(manifest, dict) or "argv" not in manifest:
        raise FormatError(f"{args.manifest}: not a run manifest")
    return main(manifest["argv"])


# ---------------------------------------------------------------------------
# parser


def _add_loss_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--loss", choices=("local", "global"), default="local")
    p.add_argument("--layer", type=int, default=losses.DEFAULT_LAYER)
    p.add_argument("--feature", choices=FEATURE_KINDS, default="token")
    p.add_argument("--mask-ratio", type=float, default=None,
                   help="default: 0.5 for local, 0.0 for global")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="balance factor; default: 1.0 local, 1e-5 global")
    p.add_argument("--p", type=float, default=losses.DEFAULT_P)
    p.add_argument("--metric", choices=losses.DEBLUR_METRICS, default="l1")
    p.add_argument("--charbonnier-eps", type=float,
                   default=losses.DEFAULT_CHARBONNIER_EPS)
    p.add_argument("--local-norm", choices=("l1", "l2"), default="l1")
    p.add_argument("--local-reduction", choices=("sum", "mean"), default="sum")
    p.add_argument("--no-root", action="store_true",
                   help="use the p-th power form of the transport term")
    p.add_argument("--final-norm", action="store_true",
                   help="apply the final normalization when tapping the last layer")


def _add_common(p: argparse.ArgumentParser, weights_required=True) -> None:
    p.add_argument("--weights", required=weights_required, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", choices=("f32", "f64"), default="f64")
    p.add_argument("--refuse-crop", action="store_true",
                   help="error out instead of center-cropping oversized images")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=TOOL,
        description="transformer-feature perceptual losses over images",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("loss", help="print a loss report for an image pair")
    p.add_argument("recon")
    p.add_argument("ref")
    _add_common(p)
    _add_loss_flags(p)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("heatmap", help="self-similarity map of one query patch")
    p.add_argument("image")
    p.add_argument("--row", type=int, required=True)
    p.add_argument("--col", type=int, required=True)
    p.add_argument("--layer", type=int, default=losses.DEFAULT_LAYER)
    p.add_argument("--feature", choices=FEATURE_KINDS, default="token")
    p.add_argument("--out-prefix", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("optimize", help="gradient descent on pixels toward a target")
    p.add_argument("init")
    p.add_argument("target")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--step-size", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", required=True)
    _add_common(p)
    _add_loss_flags(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--instances", type=int, default=3)
    p.add_argument("--step", type=float, default=gc.FD_STEP)
    p.add_argument("--threshold", type=float, default=gc.REL_TOLERANCE)
    p.add_argument("--corrupt-gradient", type=float, default=0.0,
                   help=argparse.SUPPRESS)
    _add_common(p, weights_required=False)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-toy", help="write deterministic toy weights (VPW1)")
    p.add_argument("--image-size", type=int, default=16)
    p.add_argument("--patch-size", type=int, default=4)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--mlp-ratio", type=float, default=4.0)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--no-final-norm", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("rerun", help="replay a run manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_rerun)

    return parser


def main(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors and 0 on --help
        return EXIT_OK if e.code == 0 else EXIT_CONTRACT
    try:
        return args.func(args)
    except (FormatError, CorruptionError, ImageDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ContractError, DimensionError, SchemaError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    except NonFiniteError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()

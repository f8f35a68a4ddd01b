"""Command-line surface for the estimation and deblurring pipeline.

Exit codes: 0 success, 2 bad arguments (including dimension mismatches),
3 I/O failure, 4 corrupt model/weight file.  ``eval`` prints machine-
parseable ``key=value`` lines; ``--fig-dir`` on the report-producing
commands additionally renders matplotlib figures next to that output.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

_BUNDLED_PRIOR = Path(__file__).parent / "data" / "default_prior.gmmp"


def _add_common_mrf_flags(p: argparse.ArgumentParser):
    p.add_argument("--stride", type=int, default=6, help="patch sampling interval (px)")
    p.add_argument("--sigma", type=float, default=10.0, help="confidence fusion bandwidth")
    p.add_argument("--top-k", type=int, default=20, help="shortlist: top candidates kept")
    p.add_argument("--sampled", type=int, default=30, help="shortlist: extra sampled candidates")
    p.add_argument("--lambda-smooth", type=float, default=0.01, help="MRF smoothness weight")
    p.add_argument("--bp-iters", type=int, default=30)
    p.add_argument("--damping", type=float, default=0.5)
    p.add_argument("--grid-stride", type=int, default=1,
                   help="solve the MRF on every n-th pixel, upsample labels")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blurfield",
        description="Estimate and remove per-pixel linear motion blur from a single image.")
    parser.add_argument("--threads", type=int, default=os.cpu_count(),
                        help="worker threads for numeric kernels")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate a dense motion field from a blurry image")
    p.add_argument("--image", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--weights", help="CNNW weight file for the patch classifier")
    src.add_argument("--oracle", help="ground-truth MFLD file driving the oracle predictor")
    p.add_argument("--epsilon", type=float, default=0.0, help="oracle softness")
    p.add_argument("--out", required=True, help="output MFLD path")
    p.add_argument("--no-extend", action="store_true",
                   help="stay on the 73-kernel base set (no rotated passes)")
    p.add_argument("--conf-out", help="also dump the fused confidence volume (CONF)")
    p.add_argument("--fig-dir", help="render motion-field figures into this directory")
    _add_common_mrf_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("deblur", help="non-blind deconvolution given a motion field")
    p.add_argument("--image", required=True)
    p.add_argument("--field", required=True, help="MFLD motion field")
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--prior", default=str(_BUNDLED_PRIOR), help="GMMP patch prior")
    p.add_argument("--lambda-data", type=float, default=2e5)
    p.add_argument("--beta-start", type=float, default=50.0)
    p.add_argument("--beta-ratio", type=float, default=2.0)
    p.add_argument("--beta-iters", type=int, default=7)
    p.add_argument("--cg-tol", type=float, default=1e-5)
    p.add_argument("--cg-max-iter", type=int, default=200)
    p.add_argument("--fig-dir")
    p.set_defaults(func=cmd_deblur)

    p = sub.add_parser("synth", help="synthesize a blurred image with ground truth")
    kind = p.add_subparsers(dest="kind", required=True)
    pt = kind.add_parser("translation")
    pt.add_argument("--image", required=True)
    pt.add_argument("--u", type=float, required=True)
    pt.add_argument("--v", type=float, required=True)
    pt.add_argument("--out-prefix", required=True)
    pt.set_defaults(func=cmd_synth)
    pr = kind.add_parser("rotation")
    pr.add_argument("--image", required=True)
    pr.add_argument("--omega", type=float, required=True, help="radians of roll per pixel radius")
    pr.add_argument("--center", help="x,y rotation center (default: image center)")
    pr.add_argument("--out-prefix", required=True)
    pr.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score an estimated field (and optionally a restoration)")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--deblurred", help="restored PNG to score as psnr_deblur")
    p.add_argument("--sharp", help="ground-truth sharp PNG")
    p.add_argument("--support", type=int, default=25, help="kernel support for mse_ker")
    p.add_argument("--fig-dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-patches", help="write a labeled PTCH training dataset")
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_patches)

    p = sub.add_parser("fit-gmm", help="fit a GMMP patch prior from images")
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--patches", type=int, default=50000)
    p.add_argument("--components", type=int, default=20)
    p.add_argument("--patch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_gmm)
    return parser


def cmd_estimate(args) -> int:
    from . import formats, predict
    from .fuse import MrfParams
    from .pipeline import estimate_field

    t0 = time.perf_counter()
    image = formats.load_png(args.image)
    if args.oracle:
        gt = formats.load_motion_field(args.oracle)
        if gt.shape != image.shape[:2]:
            raise ValueError(f"oracle field {gt.shape} vs image {image.shape[:2]} size mismatch")
        predictor = predict.OraclePredictor(gt, epsilon=args.epsilon)
    else:
        predictor = predict.CnnPredictor(predict.load_model(args.weights))
    params = MrfParams(lambda_smooth=args.lambda_smooth, bp_iterations=args.bp_iters,
                       damping=args.damping, rng_seed=args.seed, grid_stride=args.grid_stride)
    field, volume = estimate_field(image, predictor, extend=not args.no_extend,
                                   stride=args.stride, sigma=args.sigma,
                                   top_k=args.top_k, sampled=args.sampled, params=params)
    formats.save_motion_field(field, args.out)
    if args.conf_out:
        formats.save_confidence(volume.data, args.conf_out)
    if args.fig_dir:
        from . import viz
        figs = Path(args.fig_dir)
        figs.mkdir(parents=True, exist_ok=True)
        viz.field_figure(field, figs / "estimated_field.png")
        h, w = volume.shape
        corners = [(h // 4, w // 4), (h // 4, 3 * w // 4),
                   (3 * h // 4, w // 4), (3 * h // 4, 3 * w // 4)]
        viz.confidence_figure(volume, corners, figs / "confidence_samples.png")
    print(f"elapsed_s={time.perf_counter() - t0:.2f}")
    return 0


def cmd_deblur(args) -> int:
    from . import formats
    from .deconv import GmmPrior, HqsSchedule, deblur

    image = formats.load_png(args.image)
    field = formats.load_motion_field(args.field)
    if field.shape != image.shape[:2]:
        raise ValueError(f"field {field.shape} vs image {image.shape[:2]} size mismatch")
    betas = tuple(args.beta_start * args.beta_ratio ** k for k in range(args.beta_iters))
    if not betas:
        formats.save_png(image, args.out)
        return 0
    prior = GmmPrior.load(args.prior)
    schedule = HqsSchedule(lambda_data=args.lambda_data, betas=betas,
                           cg_tol=args.cg_tol, cg_max_iter=args.cg_max_iter)
    t0 = time.perf_counter()
    restored = deblur(image, field, prior, schedule)
    formats.save_png(restored, args.out)
    if args.fig_dir:
        from . import viz
        figs = Path(args.fig_dir)
        figs.mkdir(parents=True, exist_ok=True)
        viz.deblur_figure(image, restored, figs / "deblur.png")
    print(f"elapsed_s={time.perf_counter() - t0:.2f}")
    return 0


def cmd_synth(args) -> int:
    from . import formats, synth

    image = formats.load_png(args.image)
    h, w = image.shape[:2]
    if args.kind == "translation":
        field = synth.field_translation(w, h, args.u, args.v)
    else:
        if args.center:
            cx, cy = (float(t) for t in args.center.split(","))
        else:
            cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
        field = synth.field_rotation(w, h, (cx, cy), args.omega)
    blurred = synth.blur_with_field(image, field)
    formats.save_png(blurred, args.out_prefix + ".png")
    formats.save_motion_field(field, args.out_prefix + ".mfld")
    return 0


def cmd_eval(args) -> int:
    from . import formats, metrics

    est = formats.load_motion_field(args.est)
    gt = formats.load_motion_field(args.gt)
    values = {
        "mse_motion": metrics.mse_motion(est, gt),
        "psnr_motion": metrics.psnr_motion(est, gt),
        "mse_ker": metrics.mse_ker(est, gt, support=args.support),
    }
    restored = sharp = None
    if args.deblurred and args.sharp:
        restored = formats.load_png(args.deblurred)
        sharp = formats.load_png(args.sharp)
        values["psnr_deblur"] = metrics.psnr_image(restored, sharp)
    for key, value in values.items():
        print(f"{key}={value:.10g}")
    if args.fig_dir:
        from . import viz
        figs = Path(args.fig_dir)
        figs.mkdir(parents=True, exist_ok=True)
        viz.field_comparison_figure(est, gt, figs / "field_comparison.png")
        if restored is not None:
            viz.deblur_figure(restored, sharp, figs / "restoration.png",
                              titles=("restored", "reference", ""))
    return 0


def cmd_export_patches(args) -> int:
    from . import formats, synth

    images = [formats.load_png(p) for p in args.images]
    synth.export_training_patches(images, args.count, args.seed, args.out)
    return 0


def cmd_fit_gmm(args) -> int:
    import numpy as np

    from . import formats
    from .deconv import fit_gmm

    rng = np.random.default_rng(args.seed)
    size = args.patch_size
    grays = [formats.load_png(p, gray=True) for p in args.images]
    grays = [g for g in grays if g.shape[0] >= size and g.shape[1] >= size]
    if not grays:
        raise ValueError(f"no source image is at least {size} pixels on each side")
    rows = np.empty((args.patches, size * size))
    for i in range(args.patches):
        g = grays[int(rng.integers(len(grays)))]
        r0 = int(rng.integers(g.shape[0] - size + 1))
        c0 = int(rng.integers(g.shape[1] - size + 1))
        rows[i] = g[r0 : r0 + size, c0 : c0 + size].ravel()
    rows -= rows.mean(axis=1, keepdims=True)
    prior = fit_gmm(rows, args.components, seed=args.seed)
    prior.save(args.out)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(args.threads))
    from .formats import FileFormatError, ModelFormatError

    try:
        return args.func(args)
    except ModelFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return 3
    except (FileFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

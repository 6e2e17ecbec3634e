"""Command-line surface tying the pipeline stages together.

Every subcommand is a thin wrapper over one library call, and its file output
is byte-identical to what the corresponding call writes. Exit codes:

    0  success
    2  usage error (bad flags or arguments)
    3  a required input file is missing
    4  invalid config or manifest content
    5  invalid data (bad tensor file, shape mismatch, failed fit)
    6  output could not be written
    1  unexpected internal error
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluate, micronet
from .engines import Engine, REQUIRED_ROLES, grid_for_engine
from .erf import FitError, estimate_erf, fit_gaussian2d
from .manifest import ManifestError, TensorManifest, add_tensor
from .micronet import MicroNetError
from .render import RenderSpec, render_heatmap
from .tensorio import TensorFormatError, read_tensor, write_tensor
from .upsampling import UpsamplerKind, upsample

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_BAD_CONFIG = 4
EXIT_BAD_DATA = 5
EXIT_IO = 6

_EPILOG = """exit codes:
  0  success
  2  usage error
  3  missing input file
  4  invalid config or manifest
  5  invalid data (bad tensor, shape mismatch, failed fit)
  6  output not writable
  1  unexpected internal error
"""


def _load_net(args):
    if getattr(args, "net_dir", None):
        return micronet.load_net(args.net_dir)
    return micronet.seeded_init(args.arch, args.seed)


def _add_net_args(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--net-dir", help="directory with arch.json and layer tensors")
    g.add_argument("--arch", choices=micronet.architectures(),
                   help="built-in architecture (with --seed)")
    p.add_argument("--seed", type=int, default=0, help="weight seed for --arch")


def _resolve_class(args, manifest, sample_id):
    if args.class_id is not None:
        return args.class_id
    for role in ("grad1", "feature_map", "image"):
        e = manifest.entry(role, sample_id)
        if e is not None and e.class_id is not None:
            return e.class_id
    raise ManifestError("no class id: pass --class-id or record one in the manifest")


# ---------------------------------------------------------------------------
# subcommands

def _cmd_compute(args):
    manifest = TensorManifest.load(args.manifest)
    engine = Engine(args.engine)
    sample = args.sample
    manifest.require(REQUIRED_ROLES[engine], sample)
    class_id = _resolve_class(args, manifest, sample)
    kwargs = {}
    if engine is Engine.ORIGINAL_CAM:
        kwargs["fc_weights"] = manifest.tensor("fc_weights", sample)
    else:
        kwargs["grad1"] = manifest.tensor("grad1", sample)
    if engine is Engine.GRAD_CAM_PP:
        kwargs["grad2"] = manifest.tensor("grad2", sample)
        kwargs["grad3"] = manifest.tensor("grad3", sample)
    grid = grid_for_engine(engine, feature_map=manifest.tensor("feature_map", sample),
                           class_id=class_id, **kwargs)
    write_tensor(grid.values, args.out)
    return EXIT_OK


def _cmd_upsample(args):
    grid = read_tensor(args.grid)
    smap = upsample(grid, args.mode, args.width, args.height,
                    sigma_x=args.sigma_x, sigma_y=args.sigma_y,
                    center_offset=args.center_offset)
    write_tensor(smap.values, args.out)
    return EXIT_OK


def _cmd_erf(args):
    if args.grads:
        acc = None
        shape = None
        for path in args.grads:
            g = read_tensor(path)
            reduced = np.abs(g).sum(axis=0) if g.ndim == 3 else np.abs(g)
            if shape is None:
                shape = reduced.shape
            elif reduced.shape != shape:
                raise ValueError(f"gradient {path} shape {reduced.shape} differs from {shape}")
            acc = reduced if acc is None else acc + reduced
        avg = acc / len(args.grads)
        peak = avg.max()
        if peak <= 0:
            raise ValueError("gradient footprint is empty")
        values = avg / peak
        n_images = len(args.grads)
    else:
        net = _load_net(args)
        shape = micronet.input_shape(args.arch) if args.arch else None
        if shape is None:
            raise ManifestError("--net-dir mode needs --grads or --arch for image shape")
        images = micronet.synthetic_images(args.n_images, shape, args.image_seed)
        erf_map = estimate_erf(net, images)
        values, n_images = erf_map.values, erf_map.n_images
    write_tensor(values, args.out)
    if args.meta:
        Path(args.meta).write_text(json.dumps({"n_images": n_images}, indent=2) + "\n")
    return EXIT_OK


def _cmd_fit(args):
    erf_values = read_tensor(args.erf)
    fit = fit_gaussian2d(erf_values, ignore_negative=args.ignore_negative)
    fit.save(args.out)
    return EXIT_OK


def _cmd_mask(args):
    image = read_tensor(args.image)
    saliency = read_tensor(args.map)
    if args.mode == "soft":
        masked = evaluate.soft_mask(image, saliency)
    else:
        masked = evaluate.relative_mask(image, saliency, args.keep, fill=args.fill)
    write_tensor(masked, args.out)
    return EXIT_OK


def _cmd_eval(args):
    config = evaluate.EvalConfig.load(args.config)
    manifest = TensorManifest.load(args.manifest)
    if args.emit_masked:
        evaluate.emit_masked(manifest, config, args.emit_masked)
        return EXIT_OK
    if args.original_scores or args.masked_scores:
        if not (args.original_scores and args.masked_scores):
            raise evaluate.ConfigError("round-trip mode needs both score files")
        reports = evaluate.run_matrix(
            manifest, config,
            original_scores=evaluate.read_scores_csv(args.original_scores),
            masked_scores=evaluate.read_masked_scores_csv(args.masked_scores),
        )
    else:
        net = _load_net(args)
        reports = evaluate.run_matrix(manifest, config, micronet.MicroNetScorer(net))
    evaluate.write_reports_csv(reports, args.out)
    if args.json:
        evaluate.write_reports_json(reports, args.json)
    return EXIT_OK


def _cmd_render(args):
    saliency = read_tensor(args.map)
    image = read_tensor(args.image) if args.image else None
    spec = RenderSpec(colormap=args.colormap, overlay_alpha=args.alpha,
                      output_path=args.out)
    render_heatmap(saliency, image=image, spec=spec)
    return EXIT_OK


def _cmd_pipeline(args):
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    net = micronet.seeded_init(args.arch, args.seed)
    shape = micronet.input_shape(args.arch)
    images = micronet.synthetic_images(args.n_images, shape, args.image_seed)

    erf_map = estimate_erf(net, images)
    write_tensor(erf_map.values, out_dir / "erf.npy")
    fit = fit_gaussian2d(erf_map)
    fit.save(out_dir / "erf_fit.json")

    manifest = TensorManifest(base_dir=out_dir)
    fc = micronet.fc_weight_matrix(net)
    add_tensor(manifest, fc, "fc_weights", "fc_weights.npy")
    for n, img in enumerate(images):
        sid = f"s{n:03d}"
        acts = micronet.forward(net, img)
        class_id = int(np.argmax(acts.scores))
        A = acts.last_feature_map
        g1 = micronet.backward(net, acts, class_id, wrt="last_feature_map", order=1)
        g2 = micronet.backward(net, acts, class_id, wrt="last_feature_map", order=2)
        g3 = micronet.backward(net, acts, class_id, wrt="last_feature_map", order=3)
        add_tensor(manifest, img, "image", f"{sid}_image.npy", class_id, sid)
        add_tensor(manifest, A, "feature_map", f"{sid}_feature_map.npy", class_id, sid)
        add_tensor(manifest, g1, "grad1", f"{sid}_grad1.npy", class_id, sid)
        add_tensor(manifest, g2, "grad2", f"{sid}_grad2.npy", class_id, sid)
        add_tensor(manifest, g3, "grad3", f"{sid}_grad3.npy", class_id, sid)
    manifest.save(out_dir / "manifest.json")

    config = evaluate.EvalConfig(
        engines=[Engine(args.engine)],
        upsamplers=[UpsamplerKind(args.upsampler)],
        sigma=evaluate.SigmaSpec(source="explicit", sigma_x=fit.sigma_x, sigma_y=fit.sigma_y),
        masking=evaluate.MaskingSpec(mode=args.masking, keep_fraction=args.keep),
    )
    reports = evaluate.run_matrix(manifest, config, micronet.MicroNetScorer(net))
    evaluate.write_reports_csv(reports, out_dir / "report.csv")
    evaluate.write_reports_json(reports, out_dir / "report.json")

    if args.render:
        sid = "s000"
        image = manifest.tensor("image", sid)
        grid = grid_for_engine(
            Engine(args.engine), feature_map=manifest.tensor("feature_map", sid),
            class_id=_class_for(manifest, sid), grad1=manifest.tensor("grad1", sid),
            grad2=manifest.tensor("grad2", sid), grad3=manifest.tensor("grad3", sid),
            fc_weights=fc,
        )
        smap = upsample(grid, args.upsampler, shape[1], shape[2],
                        sigma_x=fit.sigma_x, sigma_y=fit.sigma_y)
        render_heatmap(smap, image=image,
                       spec=RenderSpec(output_path=str(out_dir / "overlay.png")))
    return EXIT_OK


def _class_for(manifest, sid):
    for role in ("grad1", "feature_map", "image"):
        e = manifest.entry(role, sid)
        if e is not None and e.class_id is not None:
            return e.class_id
    raise ManifestError(f"no class_id for sample {sid!r}")


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cam",
        description="CAM-family saliency maps, Gaussian upsampling, receptive-field "
                    "fitting, and confidence-drop evaluation.",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compute", help="grid-level saliency from a manifest")
    p.add_argument("--engine", required=True, choices=[e.value for e in Engine])
    p.add_argument("--manifest", required=True)
    p.add_argument("--sample", default=None, help="sample id (omit for single-sample manifests)")
    p.add_argument("--class-id", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compute)

    p = sub.add_parser("upsample", help="grid to pixel map")
    p.add_argument("--grid", required=True)
    p.add_argument("--mode", required=True, choices=[u.value for u in UpsamplerKind])
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--sigma-x", type=float, default=None)
    p.add_argument("--sigma-y", type=float, default=None)
    p.add_argument("--center-offset", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_upsample)

    p = sub.add_parser("erf", help="estimate a receptive-field map")
    p.add_argument("--grads", nargs="*", default=None,
                   help="precomputed per-image input-gradient tensors to aggregate")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--net-dir")
    g.add_argument("--arch", choices=micronet.architectures())
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-images", type=int, default=8)
    p.add_argument("--image-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--meta", default=None, help="optional JSON sidecar")
    p.set_defaults(func=_cmd_erf)

    p = sub.add_parser("fit", help="fit a 2D Gaussian to a receptive-field map")
    p.add_argument("--erf", required=True)
    p.add_argument("--ignore-negative", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("mask", help="mask an image with a saliency map")
    p.add_argument("--image", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--mode", required=True, choices=["soft", "relative"])
    p.add_argument("--keep", type=float, default=0.5)
    p.add_argument("--fill", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_mask)

    p = sub.add_parser("eval", help="engine x upsampler study matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--net-dir")
    g.add_argument("--arch", choices=micronet.architectures())
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--original-scores", default=None, help="CSV from an external scorer")
    p.add_argument("--masked-scores", default=None, help="CSV from an external scorer")
    p.add_argument("--emit-masked", default=None,
                   help="write masked images for external scoring instead of reporting")
    p.add_argument("--out", default="report.csv")
    p.add_argument("--json", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("render", help="heatmap or overlay PNG")
    p.add_argument("--map", required=True)
    p.add_argument("--image", default=None)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--colormap", default="jet_like", choices=["jet_like", "grayscale"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("pipeline", help="end-to-end desk-scale run on a built-in net")
    p.add_argument("--arch", required=True, choices=micronet.architectures())
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-images", type=int, default=8)
    p.add_argument("--image-seed", type=int, default=0)
    p.add_argument("--engine", default="extended_cam", choices=[e.value for e in Engine])
    p.add_argument("--upsampler", default="gaussian", choices=[u.value for u in UpsamplerKind])
    p.add_argument("--masking", default="soft", choices=["soft", "relative"])
    p.add_argument("--keep", type=float, default=0.5)
    p.add_argument("--render", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_pipeline)

    return parser


def cli_dispatch(argv) -> int:
    """Parse and run one command, mapping failures to documented exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"cam: missing input file: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (ManifestError, evaluate.ConfigError) as exc:
        print(f"cam: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (TensorFormatError, MicroNetError, FitError, ValueError) as exc:
        print(f"cam: {exc}", file=sys.stderr)
        return EXIT_BAD_DATA
    except OSError as exc:
        print(f"cam: cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # pragma: no cover
        print(f"cam: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))

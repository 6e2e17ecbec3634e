"""Command line for the model adapter.

Exports flow into the core toolkit through files only:

    cam-adapter export --model vgg16 --images a.jpg b.jpg --outputs-dir out/
    cam compute --engine extended_cam --manifest out/manifest.json --sample s000 --out grid.npy

    cam-adapter erf --model vgg16 --images *.jpg --outputs-dir erf/
    cam erf --grads erf/erf_*.npy --out erf.npy && cam fit --erf erf.npy --out fit.json

    cam eval ... --emit-masked masked/
    cam-adapter score --model vgg16 --job masked/job.json --out masked_scores.csv
"""

import argparse
import json
import sys
from pathlib import Path

from .export import AdapterJob, export_erf_samples, export_tensors, score_images
from .models import ModelError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cam-adapter",
        description="Export classifier tensors, receptive-field samples, and "
                    "confidences in the camkit file formats.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="feature maps and score gradients per image")
    p.add_argument("--model", required=True)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--outputs-dir", required=True)
    p.add_argument("--class-id", type=int, default=None,
                   help="explicit class; default is the predicted class per image")
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("score", help="softmax confidences as CSV")
    p.add_argument("--model", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--inputs", nargs="+", help="image or .npy tensor files")
    g.add_argument("--job", help="job.json from `cam eval --emit-masked`")
    p.add_argument("--class-id", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("erf", help="input gradients of one feature cell per image")
    p.add_argument("--model", required=True)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--outputs-dir", required=True)
    p.add_argument("--cell", default="center", help='"center" or "i,j"')
    p.set_defaults(func=_cmd_erf)

    return parser


def _cmd_export(args):
    job = AdapterJob(model_id=args.model, image_paths=args.images,
                     outputs_dir=Path(args.outputs_dir), class_id=args.class_id)
    manifest = export_tensors(job)
    print(manifest)
    return 0


def _cmd_score(args):
    if args.job:
        doc = json.loads(Path(args.job).read_text())
        base = Path(args.job).parent
        inputs = [base / cell["path"] for cell in doc["cells"]]
        class_map = {Path(cell["path"]).stem: cell["class_id"] for cell in doc["cells"]}
    else:
        inputs = args.inputs
        class_map = None
    score_images(args.model, inputs, args.out, class_id=args.class_id,
                 class_map=class_map)
    return 0


def _cmd_erf(args):
    job = AdapterJob(model_id=args.model, image_paths=args.images,
                     outputs_dir=Path(args.outputs_dir))
    for path in export_erf_samples(job, cell=args.cell):
        print(path)
    return 0


def main() -> None:
    args = build_parser().parse_args()
    try:
        sys.exit(args.func(args))
    except ModelError as exc:
        print(f"cam-adapter: {exc}", file=sys.stderr)
        sys.exit(3)
    except FileNotFoundError as exc:
        print(f"cam-adapter: missing input: {exc}", file=sys.stderr)
        sys.exit(3)
    except (ValueError, NotImplementedError) as exc:
        print(f"cam-adapter: {exc}", file=sys.stderr)
        sys.exit(5)

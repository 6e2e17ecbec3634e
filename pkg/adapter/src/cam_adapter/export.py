"""Tensor, gradient, and confidence exports in the camkit file formats.

The adapter's only interface to the core toolkit is files: ``.npy`` tensor
containers, the manifest JSON schema, and scores CSVs. Higher-order
derivative tensors use the exponential-of-score closed form
(``grad2 = exp(y) * g^2``, ``grad3 = exp(y) * g^3`` with ``g = dy/dA``),
the standard practice for relu networks whose true elementwise second
derivatives are zero; exact elementwise higher-order autodiff would need one
double-backward per feature-map element and is refused rather than silently
approximated. The mode is recorded in the manifest.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .models import ModelBundle, load_model
from .preprocess import load_image, preprocess_settings

HIGHER_ORDER_MODE = "exp_score"


@dataclass
class AdapterJob:
    model_id: str
    image_paths: list
    outputs_dir: Path
    class_id: int | None = None  # None selects the predicted class per image
    extra: dict = field(default_factory=dict)


def _forward_with_features(bundle: ModelBundle, image: torch.Tensor):
    """One batched forward; returns (batched input, batched feature map, scores).

    Gradients must target the hook-captured batched tensor itself, which sits
    on the autograd path; slicing it off first would create a side branch.
    """
    captured = {}

    def hook(_mod, _inp, out):
        captured["A"] = out

    handle = bundle.named_module().register_forward_hook(hook)
    try:
        image = image.unsqueeze(0).requires_grad_(True)
        scores = bundle.module(image)[0]
    finally:
        handle.remove()
    return image, captured["A"], scores


def _pick_class(scores: torch.Tensor, explicit: int | None) -> int:
    if explicit is None:
        return int(scores.argmax().item())
    if not (0 <= explicit < scores.shape[0]):
        raise ValueError(f"class {explicit} out of range for {scores.shape[0]} classes")
    return explicit


def export_tensors(job: AdapterJob, higher_order: str = HIGHER_ORDER_MODE) -> Path:
    """Per image: image tensor, feature map, grad1..grad3; plus manifest.json."""
    if higher_order != HIGHER_ORDER_MODE:
        raise NotImplementedError(
            f"higher-order mode {higher_order!r} unsupported: exact elementwise "
            "second/third derivatives need per-element double-backward"
        )
    bundle = load_model(job.model_id)
    out = Path(job.outputs_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for n, path in enumerate(job.image_paths):
        sid = f"s{n:03d}"
        tensor = load_image(path, bundle)
        _, A, scores = _forward_with_features(bundle, tensor)
        cid = _pick_class(scores, job.class_id)
        (grad1,) = torch.autograd.grad(scores[cid], A)
        y = float(scores[cid].detach())
        g1 = grad1[0].detach().double().numpy()
        expy = float(np.exp(min(y, 80.0)))
        tensors = {
            "image": tensor.double().numpy(),
            "feature_map": A[0].detach().double().numpy(),
            "grad1": g1,
            "grad2": expy * g1**2,
            "grad3": expy * g1**3,
        }
        for role, arr in tensors.items():
            fname = f"{sid}_{role}.npy"
            np.save(out / fname, np.ascontiguousarray(arr))
            entries.append({"role": role, "path": fname, "class_id": cid, "sample_id": sid})
    manifest = {
        "entries": entries,
        "meta": {
            "model": bundle.name,
            "feature_layer": bundle.feature_layer,
            "higher_order": higher_order,
            "preprocess": preprocess_settings(bundle),
            "deterministic": True,
        },
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def score_images(model_id: str, inputs, out_csv, class_id: int | None = None,
                 class_map: dict | None = None) -> Path:
    """Softmax confidences as CSV rows (sample_id, class_id, confidence).

    ``inputs`` may be image files or ``.npy`` tensors (e.g. masked images from
    the evaluation harness). ``class_map`` overrides the class per sample id;
    otherwise ``class_id`` applies, falling back to the predicted class.
    """
    bundle = load_model(model_id)
    rows = []
    with torch.no_grad():
        for path in inputs:
            path = Path(path)
            sid = path.stem
            tensor = load_image(path, bundle)
            probs = torch.softmax(bundle.module(tensor.unsqueeze(0))[0], dim=0)
            cid = class_map.get(sid) if class_map and sid in class_map else class_id
            cid = int(probs.argmax().item()) if cid is None else int(cid)
            rows.append({"sample_id": sid, "class_id": cid,
                         "confidence": float(probs[cid].item())})
    out_csv = Path(out_csv)
    with open(out_csv, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["sample_id", "class_id", "confidence"])
        writer.writeheader()
        writer.writerows(rows)
    return out_csv


def export_erf_samples(job: AdapterJob, cell: str = "center") -> list:
    """Per-image input gradients of the channel-summed feature cell.

    Output tensors have the input image's shape; aggregate them with
    ``cam erf --grads`` and fit with ``cam fit``.
    """
    bundle = load_model(job.model_id)
    out = Path(job.outputs_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for n, path in enumerate(job.image_paths):
        tensor = load_image(path, bundle)
        image, A, _scores = _forward_with_features(bundle, tensor)
        _, _, u, v = A.shape
        if cell == "center":
            ci, cj = u // 2, v // 2
        else:
            ci, cj = (int(x) for x in cell.split(","))
        (grad,) = torch.autograd.grad(A[0, :, ci, cj].sum(), image)
        fname = out / f"erf_{n:03d}.npy"
        np.save(fname, np.ascontiguousarray(grad[0].detach().double().numpy()))
        written.append(fname)
    return written

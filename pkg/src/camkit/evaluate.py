"""Masking protocols and confidence-change metrics.

A saliency map is judged by what happens to the classifier's confidence when
the image is masked with it: soft masking multiplies the image by the
normalized map, relative masking keeps only the top fraction of pixels by
map value. Two aggregate indicators summarize a run:

* average drop %  — mean of max(0, Y - O) / Y over samples, times 100, where
  Y is the confidence on the original image and O on the masked one. Lower
  is better.
* % increase      — share of samples whose confidence strictly rises after
  masking, times 100. Higher is better.

``run_matrix`` sweeps an engine x upsampler grid over a sample manifest and
produces one report per cell, scoring either through an in-process callback
or through confidence files produced by an external model runner.
"""

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engines import REQUIRED_ROLES, Engine, grid_for_engine
from .erf import ErfFit
from .manifest import TensorManifest
from .tensorio import as_tensor, minmax_normalize, write_tensor
from .upsampling import UpsamplerKind, upsample


class ConfigError(ValueError):
    pass


@dataclass
class EvalRecord:
    sample_id: str
    class_id: int
    y_original: float
    y_masked: float

    def __post_init__(self):
        for name, val in (("y_original", self.y_original), ("y_masked", self.y_masked)):
            if not (0.0 <= val <= 1.0):
                raise ValueError(f"{name}={val} outside [0, 1] for sample {self.sample_id}")


@dataclass
class EvalReport:
    engine: Engine
    upsampler: UpsamplerKind
    masking_mode: str
    average_drop_pct: float
    pct_increase: float
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "engine": self.engine.value,
            "upsampler": self.upsampler.value,
            "masking_mode": self.masking_mode,
            "average_drop_pct": self.average_drop_pct,
            "pct_increase": self.pct_increase,
            "n_samples": self.n_samples,
        }


def soft_mask(image, saliency) -> np.ndarray:
    """Multiply the image by the min-max normalized map, per channel."""
    img = as_tensor(image)
    vals = saliency.values if hasattr(saliency, "values") else as_tensor(saliency)
    if img.ndim != 3 or img.shape[1:] != vals.shape:
        raise ValueError(f"image {img.shape} does not match map {vals.shape}")
    return img * minmax_normalize(vals)[None, :, :]


def relative_mask(image, saliency, keep_fraction: float, fill: float = 0.0) -> np.ndarray:
    """Keep the top ``keep_fraction`` of pixels by map value, fill the rest.

    The kept count is ceil(keep_fraction * w * h). Ties resolve by ascending
    row-major scan order: among equal values the lower-index pixel is kept
    first. ``fill`` is 0 in the normalized image scale; callers whose images
    are mean-subtracted should pass the per-channel mean instead.
    """
    img = as_tensor(image)
    vals = saliency.values if hasattr(saliency, "values") else as_tensor(saliency)
    if img.ndim != 3 or img.shape[1:] != vals.shape:
        raise ValueError(f"image {img.shape} does not match map {vals.shape}")
    if not (0.0 < keep_fraction <= 1.0):
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    n_pixels = vals.size
    n_keep = math.ceil(keep_fraction * n_pixels)
    order = np.argsort(-vals.ravel(), kind="stable")
    keep = np.zeros(n_pixels, dtype=bool)
    keep[order[:n_keep]] = True
    keep = keep.reshape(vals.shape)
    out = np.full_like(img, fill)
    out[:, keep] = img[:, keep]
    return out


def average_drop_pct(records) -> float:
    records = list(records)
    if not records:
        raise ValueError("no records")
    total = 0.0
    for r in records:
        if r.y_original <= 0:
            raise ValueError(f"sample {r.sample_id} has zero original confidence")
        total += max(0.0, r.y_original - r.y_masked) / r.y_original
    return 100.0 * total / len(records)


def pct_increase(records) -> float:
    records = list(records)
    if not records:
        raise ValueError("no records")
    risen = sum(1 for r in records if r.y_masked > r.y_original)
    return 100.0 * risen / len(records)


# ---------------------------------------------------------------------------
# configuration

@dataclass
class SigmaSpec:
    source: str  # "explicit" | "erf_fit"
    sigma_x: float | None = None
    sigma_y: float | None = None
    path: str | None = None


@dataclass
class MaskingSpec:
    mode: str  # "soft" | "relative"
    keep_fraction: float = 0.5
    fill: float = 0.0

    def label(self) -> str:
        if self.mode == "soft":
            return "soft"
        return f"relative({self.keep_fraction:g})"


@dataclass
class EvalConfig:
    engines: list
    upsamplers: list
    sigma: SigmaSpec
    masking: MaskingSpec
    center_offset: float = 0.0

    @classmethod
    def from_json(cls, text: str) -> "EvalConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        try:
            engines = [Engine(e) for e in doc["engines"]]
            upsamplers = [UpsamplerKind(u) for u in doc["upsamplers"]]
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad engines/upsamplers: {exc}") from None
        if not engines or not upsamplers:
            raise ConfigError("config needs at least one engine and one upsampler")
        sig = doc.get("sigma", {})
        sigma = SigmaSpec(
            source=sig.get("source", "explicit"),
            sigma_x=sig.get("sigma_x"),
            sigma_y=sig.get("sigma_y"),
            path=sig.get("path"),
        )
        if sigma.source not in ("explicit", "erf_fit"):
            raise ConfigError(f"unknown sigma source {sigma.source!r}")
        msk = doc.get("masking", {"mode": "soft"})
        if msk.get("mode") not in ("soft", "relative"):
            raise ConfigError(f"unknown masking mode {msk.get('mode')!r}")
        masking = MaskingSpec(
            mode=msk["mode"],
            keep_fraction=float(msk.get("keep_fraction", 0.5)),
            fill=float(msk.get("fill", 0.0)),
        )
        return cls(engines=engines, upsamplers=upsamplers, sigma=sigma,
                   masking=masking, center_offset=float(doc.get("center_offset", 0.0)))

    @classmethod
    def load(cls, path) -> "EvalConfig":
        cfg = cls.from_json(Path(path).read_text())
        if cfg.sigma.source == "erf_fit" and cfg.sigma.path:
            cfg.sigma.path = str(Path(path).parent / cfg.sigma.path)
        return cfg

    def resolve_sigma(self) -> tuple:
        """(sigma_x, sigma_y) for Gaussian upsampling, if any is configured."""
        if self.sigma.source == "explicit":
            if self.sigma.sigma_x is None or self.sigma.sigma_y is None:
                raise ConfigError("explicit sigma needs sigma_x and sigma_y")
            return float(self.sigma.sigma_x), float(self.sigma.sigma_y)
        if not self.sigma.path:
            raise ConfigError("erf_fit sigma needs a 'path' to a fit JSON")
        fit = ErfFit.load(self.sigma.path)
        return fit.sigma_x, fit.sigma_y


# ---------------------------------------------------------------------------
# matrix runner

def _class_for_sample(manifest: TensorManifest, sample_id: str) -> int:
    for role in ("grad1", "feature_map", "image"):
        e = manifest.entry(role, sample_id)
        if e is not None and e.class_id is not None:
            return e.class_id
    raise ConfigError(f"no class_id recorded for sample {sample_id!r}")


def _mask_image(image, smap, masking: MaskingSpec) -> np.ndarray:
    if masking.mode == "soft":
        return soft_mask(image, smap)
    return relative_mask(image, smap, masking.keep_fraction, fill=masking.fill)


def iter_masked_images(manifest: TensorManifest, config: EvalConfig):
    """Yield (sample_id, engine, upsampler, class_id, image, masked) cells.

    Samples run in manifest order inside each (engine, upsampler) pair, so
    aggregation over floating-point sums is reproducible.
    """
    sample_ids = manifest.sample_ids()
    if not sample_ids:
        raise ConfigError("manifest has no samples")
    needs_gaussian = UpsamplerKind.GAUSSIAN in config.upsamplers
    sigma = config.resolve_sigma() if needs_gaussian else (None, None)
    for engine in config.engines:
        for sample_id in sample_ids:
            manifest.require(REQUIRED_ROLES[engine], sample_id)
    shape = None
    for engine in config.engines:
        for upsampler in config.upsamplers:
            for sample_id in sample_ids:
                image = manifest.tensor("image", sample_id)
                if shape is None:
                    shape = image.shape
                elif image.shape != shape:
                    raise ConfigError(
                        f"sample {sample_id!r} image shape {image.shape} differs from {shape}"
                    )
                class_id = _class_for_sample(manifest, sample_id)
                kwargs = {}
                if engine is Engine.ORIGINAL_CAM:
                    kwargs["fc_weights"] = manifest.tensor("fc_weights", sample_id)
                else:
                    kwargs["grad1"] = manifest.tensor("grad1", sample_id)
                if engine is Engine.GRAD_CAM_PP:
                    kwargs["grad2"] = manifest.tensor("grad2", sample_id)
                    kwargs["grad3"] = manifest.tensor("grad3", sample_id)
                grid = grid_for_engine(
                    engine, feature_map=manifest.tensor("feature_map", sample_id),
                    class_id=class_id, **kwargs,
                )
                smap = upsample(grid, upsampler, image.shape[1], image.shape[2],
                                sigma_x=sigma[0], sigma_y=sigma[1],
                                center_offset=config.center_offset)
                masked = _mask_image(image, smap, config.masking)
                yield sample_id, engine, upsampler, class_id, image, masked


def run_matrix(manifest: TensorManifest, config: EvalConfig, scorer=None, *,
               original_scores=None, masked_scores=None) -> list:
    """One report per (engine, upsampler) cell.

    Callback mode: ``scorer(image) -> probability vector`` scores originals
    and masked images in-process. Round-trip mode: ``original_scores`` maps
    sample_id -> confidence and ``masked_scores`` maps
    (sample_id, engine, upsampler) -> confidence, both previously produced by
    an external model run. The two modes produce identical reports when fed
    identical confidences.
    """
    if scorer is None and (original_scores is None or masked_scores is None):
        raise ConfigError("need a scorer or both score tables")
    cells: dict = {}
    original_cache: dict = {}
    for sample_id, engine, upsampler, class_id, image, masked in iter_masked_images(manifest, config):
        if scorer is not None:
            if sample_id not in original_cache:
                original_cache[sample_id] = scorer(image)
            y0 = float(original_cache[sample_id][class_id])
            ym = float(scorer(masked)[class_id])
        else:
            try:
                y0 = float(original_scores[sample_id])
                ym = float(masked_scores[(sample_id, engine.value, upsampler.value)])
            except KeyError as exc:
                raise ConfigError(f"missing confidence for {exc}") from None
        record = EvalRecord(sample_id=sample_id, class_id=class_id,
                            y_original=y0, y_masked=ym)
        cells.setdefault((engine, upsampler), []).append(record)
    reports = []
    for engine in config.engines:
        for upsampler in config.upsamplers:
            records = cells[(engine, upsampler)]
            reports.append(EvalReport(
                engine=engine,
                upsampler=upsampler,
                masking_mode=config.masking.label(),
                average_drop_pct=average_drop_pct(records),
                pct_increase=pct_increase(records),
                n_samples=len(records),
            ))
    return reports


def emit_masked(manifest: TensorManifest, config: EvalConfig, out_dir) -> list:
    """Write masked images as tensor files for external scoring.

    Files are named ``{sample}__{engine}__{upsampler}.npy``; a ``job.json``
    index in the same directory lists every cell with its class id. The
    external scorer should emit a masked-scores CSV whose sample_id column
    repeats these compound names.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for sample_id, engine, upsampler, class_id, _, masked in iter_masked_images(manifest, config):
        name = f"{sample_id}__{engine.value}__{upsampler.value}.npy"
        write_tensor(masked, out_dir / name)
        jobs.append({"sample_id": sample_id, "engine": engine.value,
                     "upsampler": upsampler.value, "class_id": class_id, "path": name})
    (out_dir / "job.json").write_text(json.dumps({"cells": jobs}, indent=2) + "\n")
    return jobs


# ---------------------------------------------------------------------------
# scores and report files

def read_scores_csv(path) -> dict:
    """Original-image scores: sample_id -> confidence (class_id ignored here)."""
    out = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out[row["sample_id"]] = float(row["confidence"])
    return out


def read_masked_scores_csv(path) -> dict:
    """Masked-image scores keyed by (sample_id, engine, upsampler).

    Accepts either explicit engine/upsampler columns or compound sample ids
    of the form ``sample__engine__upsampler`` as written by ``emit_masked``.
    """
    out = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            sid = row["sample_id"]
            if "engine" in row and row.get("engine"):
                key = (sid, row["engine"], row["upsampler"])
            else:
                parts = sid.rsplit("__", 2)
                if len(parts) != 3:
                    raise ConfigError(f"cannot split compound sample id {sid!r}")
                key = tuple(parts)
            out[key] = float(row["confidence"])
    return out


def write_scores_csv(rows, path, masked: bool = False) -> None:
    fields = ["sample_id", "class_id", "confidence"]
    if masked:
        fields = ["sample_id", "engine", "upsampler", "class_id", "confidence"]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fields})


def write_reports_csv(reports, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["engine", "upsampler", "masking_mode",
                         "average_drop_pct", "pct_increase", "n_samples"])
        for r in reports:
            writer.writerow([r.engine.value, r.upsampler.value, r.masking_mode,
                             repr(r.average_drop_pct), repr(r.pct_increase), r.n_samples])


def write_reports_json(reports, path) -> None:
    Path(path).write_text(
        json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"
    )

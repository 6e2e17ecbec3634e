"""Bridges torch classifiers to the camkit file formats.

Exports last-feature-map activations, score gradients (first order exact,
higher orders in the exponential-of-score form), receptive-field gradient
samples, and softmax confidences; everything lands as tensor containers,
manifest JSON, and scores CSVs that the core toolkit consumes directly.
"""

from .export import AdapterJob, export_erf_samples, export_tensors, score_images
from .models import ModelBundle, ModelError, load_model

__all__ = [
    "AdapterJob",
    "ModelBundle",
    "ModelError",
    "export_erf_samples",
    "export_tensors",
    "load_model",
    "score_images",
]

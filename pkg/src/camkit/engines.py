"""Grid-level saliency engines.

Each engine decomposes a class score into per-cell contributions over the
final K x u x v feature map, producing a u x v grid:

* ``original_cam_map``    L_ij = sum_k w[c,k] * A[k,i,j] with w taken from the
  linear classifier that follows global average pooling.
* ``grad_cam_weights``    w_k = spatial mean of dY/dA over channel k; combine
  with the feature map and clip negatives.
* ``grad_cam_pp_weights`` alpha-weighted positive gradients,
  alpha[k,i,j] = g2 / (2*g2 + (sum_ab A[k,a,b]) * g3), zero when the
  denominator is zero.
* ``extended_cam_map``    L_ij = sum_k dY/dA[k,i,j] * A[k,i,j], no clipping
  anywhere; negative contributions are kept and later blended away by
  Gaussian upsampling rather than discarded.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .tensorio import as_tensor


class Engine(str, Enum):
    ORIGINAL_CAM = "original_cam"
    GRAD_CAM = "grad_cam"
    GRAD_CAM_PP = "grad_cam_pp"
    EXTENDED_CAM = "extended_cam"


#: manifest roles each engine needs beyond the image
REQUIRED_ROLES = {
    Engine.ORIGINAL_CAM: frozenset({"feature_map", "fc_weights"}),
    Engine.GRAD_CAM: frozenset({"feature_map", "grad1"}),
    Engine.GRAD_CAM_PP: frozenset({"feature_map", "grad1", "grad2", "grad3"}),
    Engine.EXTENDED_CAM: frozenset({"feature_map", "grad1"}),
}


@dataclass
class SaliencyGrid:
    values: np.ndarray  # (u, v)
    class_id: int
    engine: Engine

    def __post_init__(self):
        self.values = as_tensor(self.values)
        if self.values.ndim != 2:
            raise ValueError(f"saliency grid must be rank-2, got rank {self.values.ndim}")

    @property
    def u(self) -> int:
        return self.values.shape[0]

    @property
    def v(self) -> int:
        return self.values.shape[1]


@dataclass
class WeightTensor:
    values: np.ndarray
    kind: str  # "per_channel" (K,) or "per_cell" (K, u, v)

    def __post_init__(self):
        self.values = as_tensor(self.values)
        if self.kind not in ("per_channel", "per_cell"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        expected = 1 if self.kind == "per_channel" else 3
        if self.values.ndim != expected:
            raise ValueError(f"{self.kind} weights must be rank-{expected}")


@dataclass
class AlphaTensor:
    values: np.ndarray  # (K, u, v)

    def __post_init__(self):
        self.values = as_tensor(self.values)


def _check_feature_map(A) -> np.ndarray:
    A = as_tensor(A)
    if A.ndim != 3:
        raise ValueError(f"feature map must be rank-3 (K, u, v), got rank {A.ndim}")
    return A


def original_cam_map(A, fc_weights, class_id: int) -> SaliencyGrid:
    """L_ij = sum_k w[class,k] * A[k,i,j] using the linear head's weight row."""
    A = _check_feature_map(A)
    fc_weights = as_tensor(fc_weights)
    if fc_weights.ndim != 2:
        raise ValueError("fc_weights must be rank-2 (num_classes, K)")
    if not (0 <= class_id < fc_weights.shape[0]):
        raise ValueError(f"class {class_id} out of range for {fc_weights.shape[0]} classes")
    if fc_weights.shape[1] != A.shape[0]:
        raise ValueError(
            f"channel mismatch: feature map has {A.shape[0]} channels, "
            f"fc weights expect {fc_weights.shape[1]}"
        )
    values = np.tensordot(fc_weights[class_id], A, axes=(0, 0))
    return SaliencyGrid(values=values, class_id=class_id, engine=Engine.ORIGINAL_CAM)


def grad_cam_weights(grad1) -> WeightTensor:
    """Per-channel weights: the spatial mean of the first-order gradient."""
    g = _check_feature_map(grad1)
    return WeightTensor(values=g.mean(axis=(1, 2)), kind="per_channel")


def grad_cam_pp_weights(A, grad1, grad2, grad3) -> tuple:
    """Alpha-weighted positive-gradient channel weights.

    alpha[k,i,j] = grad2 / (2*grad2 + (sum_ab A[k,a,b]) * grad3), with the 0/0
    case (and any exactly-zero denominator) resolved to alpha = 0, which drops
    that cell. w_k = sum_ij alpha[k,i,j] * max(0, grad1[k,i,j]).
    """
    A = _check_feature_map(A)
    tensors = [as_tensor(t) for t in (grad1, grad2, grad3)]
    for name, t in zip(("grad1", "grad2", "grad3"), tensors):
        if t.shape != A.shape:
            raise ValueError(f"{name} shape {t.shape} does not match feature map {A.shape}")
    g1, g2, g3 = tensors
    channel_sums = A.sum(axis=(1, 2))
    denom = 2.0 * g2 + channel_sums[:, None, None] * g3
    safe = np.where(denom == 0.0, 1.0, denom)
    alpha = np.where(denom == 0.0, 0.0, g2 / safe)
    w = (alpha * np.maximum(g1, 0.0)).sum(axis=(1, 2))
    return WeightTensor(values=w, kind="per_channel"), AlphaTensor(values=alpha)


def extended_cam_map(A, grad1, class_id: int) -> SaliencyGrid:
    """L_ij = sum_k grad1[k,i,j] * A[k,i,j]; negative values are preserved."""
    A = _check_feature_map(A)
    g = as_tensor(grad1)
    if g.shape != A.shape:
        raise ValueError(f"grad1 shape {g.shape} does not match feature map {A.shape}")
    values = (g * A).sum(axis=0)
    return SaliencyGrid(values=values, class_id=class_id, engine=Engine.EXTENDED_CAM)


def combine(w: WeightTensor, A, relu_output: bool = False, *,
            class_id: int = 0, engine: Engine | None = None) -> SaliencyGrid:
    """Weighted feature-map sum over channels, optionally clipping negatives.

    per_channel weights give L_ij = sum_k w_k * A[k,i,j]; per_cell weights give
    L_ij = sum_k w[k,i,j] * A[k,i,j].
    """
    A = _check_feature_map(A)
    if w.kind == "per_channel":
        if w.values.shape[0] != A.shape[0]:
            raise ValueError(
                f"weight length {w.values.shape[0]} does not match {A.shape[0]} channels"
            )
        values = np.tensordot(w.values, A, axes=(0, 0))
        default_engine = Engine.GRAD_CAM
    else:
        if w.values.shape != A.shape:
            raise ValueError(f"weight shape {w.values.shape} does not match {A.shape}")
        values = (w.values * A).sum(axis=0)
        default_engine = Engine.EXTENDED_CAM
    if relu_output:
        values = np.maximum(values, 0.0)
    return SaliencyGrid(values=values, class_id=class_id,
                        engine=engine if engine is not None else default_engine)


def grid_for_engine(engine: Engine, *, feature_map, class_id: int, grad1=None,
                    grad2=None, grad3=None, fc_weights=None) -> SaliencyGrid:
    """Dispatch one engine on already-extracted tensors.

    Grad-CAM clips the combined grid at zero; Grad-CAM++ clips only the
    gradient inside its weights; the other engines never clip.
    """
    engine = Engine(engine)
    if engine is Engine.ORIGINAL_CAM:
        if fc_weights is None:
            raise ValueError("original_cam needs fc_weights")
        return original_cam_map(feature_map, fc_weights, class_id)
    if grad1 is None:
        raise ValueError(f"{engine.value} needs grad1")
    if engine is Engine.GRAD_CAM:
        w = grad_cam_weights(grad1)
        return combine(w, feature_map, relu_output=True, class_id=class_id,
                       engine=Engine.GRAD_CAM)
    if engine is Engine.GRAD_CAM_PP:
        if grad2 is None or grad3 is None:
            raise ValueError("grad_cam_pp needs grad2 and grad3")
        w, _ = grad_cam_pp_weights(feature_map, grad1, grad2, grad3)
        return combine(w, feature_map, relu_output=False, class_id=class_id,
                       engine=Engine.GRAD_CAM_PP)
    return extended_cam_map(feature_map, grad1, class_id)

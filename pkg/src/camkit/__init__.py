"""CAM-family saliency toolkit.

Grid-level saliency engines (original CAM, Grad-CAM, Grad-CAM++,
Extended-CAM), bilinear and Gaussian upsampling to pixel level, effective
receptive-field estimation with 2D Gaussian fitting, and confidence-drop
evaluation, all verifiable at desk scale through a built-in differentiable
micro-network.
"""

from .engines import (
    AlphaTensor,
    Engine,
    SaliencyGrid,
    WeightTensor,
    combine,
    extended_cam_map,
    grad_cam_pp_weights,
    grad_cam_weights,
    grid_for_engine,
    original_cam_map,
)
from .erf import ErfFit, ErfMap, estimate_erf, fit_gaussian2d, lm_fit, r_squared
from .evaluate import (
    EvalConfig,
    EvalRecord,
    EvalReport,
    average_drop_pct,
    pct_increase,
    relative_mask,
    run_matrix,
    soft_mask,
)
from .manifest import ManifestEntry, TensorManifest
from .micronet import (
    LayerSpec,
    MicroNetScorer,
    NetActivations,
    backward,
    forward,
    seeded_init,
)
from .render import RenderSpec, apply_colormap, render_heatmap
from .tensorio import minmax_normalize, read_tensor, write_tensor
from .upsampling import (
    SaliencyMap,
    UpsamplerKind,
    bilinear_upsample,
    gaussian_upsample,
    gaussian_upsample_direct,
    upsample,
    zero_insertion_filter_reference,
)

__version__ = "0.1.0"

__all__ = [
    "AlphaTensor", "Engine", "SaliencyGrid", "WeightTensor", "combine",
    "extended_cam_map", "grad_cam_pp_weights", "grad_cam_weights",
    "grid_for_engine", "original_cam_map",
    "ErfFit", "ErfMap", "estimate_erf", "fit_gaussian2d", "lm_fit", "r_squared",
    "EvalConfig", "EvalRecord", "EvalReport", "average_drop_pct", "pct_increase",
    "relative_mask", "run_matrix", "soft_mask",
    "ManifestEntry", "TensorManifest",
    "LayerSpec", "MicroNetScorer", "NetActivations", "backward", "forward", "seeded_init",
    "RenderSpec", "apply_colormap", "render_heatmap",
    "minmax_normalize", "read_tensor", "write_tensor",
    "SaliencyMap", "UpsamplerKind", "bilinear_upsample", "gaussian_upsample",
    "gaussian_upsample_direct", "upsample", "zero_insertion_filter_reference",
    "__version__",
]

"""Model registry: which classifiers can be bridged and where their last
spatial feature map lives.

Every model is served in eval mode on CPU with a fixed construction seed, so
two exports of the same inputs are byte-identical. The feature layer is the
module whose *output* is the last feature map (for VGG-16 that is the relu
after conv5_3, giving 512x14x14 at 224x224 input).
"""

from dataclasses import dataclass

import torch
from torch import nn


class ModelError(RuntimeError):
    pass


@dataclass
class ModelBundle:
    name: str
    module: nn.Module
    feature_layer: str          # dotted path of the module producing A
    input_size: int             # square side after preprocessing
    mean: tuple                 # per-channel, applied after scaling to [0,1]
    std: tuple
    num_classes: int

    def named_module(self) -> nn.Module:
        mod = self.module
        for part in self.feature_layer.split("."):
            mod = mod[int(part)] if part.isdigit() else getattr(mod, part)
        return mod


class ToyCnn(nn.Module):
    """Small deterministic CNN for offline tests: 3x32x32 in, 10 classes.

    Biases are zero so an all-zero input scores exactly uniform, which keeps
    sanity checks on masked images deterministic.
    """

    def __init__(self):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 8, 3, padding=1, bias=False), nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(8, 16, 3, padding=1, bias=False), nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(16, 16, 3, padding=1, bias=False), nn.ReLU(),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.classifier = nn.Linear(16, 10, bias=False)

    def forward(self, x):
        x = self.features(x)
        x = self.pool(x).flatten(1)
        return self.classifier(x)


def _seeded(builder):
    torch.manual_seed(0)
    model = builder()
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def load_model(model_id: str) -> ModelBundle:
    if model_id == "toy":
        return ModelBundle(
            name="toy", module=_seeded(ToyCnn), feature_layer="features.7",
            input_size=32, mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0),
            num_classes=10,
        )
    if model_id in ("vgg16", "vgg16-random"):
        from torchvision.models import VGG16_Weights, vgg16

        if model_id == "vgg16":
            try:
                module = _seeded(lambda: vgg16(weights=VGG16_Weights.IMAGENET1K_V1))
            except Exception as exc:
                raise ModelError(
                    f"pretrained vgg16 weights unavailable in this environment: {exc}"
                ) from exc
        else:
            module = _seeded(lambda: vgg16(weights=None))
        return ModelBundle(
            name=model_id, module=module, feature_layer="features.29",
            input_size=224, mean=(0.485, 0.456, 0.406), std=(0.229, 0.224, 0.225),
            num_classes=1000,
        )
    raise ModelError(f"unknown model id {model_id!r} (use toy, vgg16, or vgg16-random)")

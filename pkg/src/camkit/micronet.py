"""Small deterministic convolutional classifiers with exact reverse-mode gradients.

These nets stand in for a large image classifier at desk scale: a few
conv/relu/maxpool layers feeding a sum-pooling or flatten head and a linear
classifier. Forward passes are pure functions of (weights, image), and the
backward pass returns the exact derivative of the pre-softmax class score,
which makes finite-difference checks and score-decomposition identities
testable to machine precision.

Conventions that matter for reproducibility:

* Global average pooling uses the *sum* convention: ``F_k = sum_ij A[k,i,j]``.
* ReLU's derivative at exactly 0 is 0.
* Max-pool windows are fixed 2x2 stride 2; gradient routes to the first
  maximal element in row-major scan order on ties.
* All layers here are piecewise linear, so elementwise second and third
  derivatives of the score are identically zero away from kinks; ``backward``
  returns that honest zero tensor for ``order`` 2 and 3.
* Seeded weights come from a documented xorshift64* stream (see
  :class:`XorShift64Star`) so independent implementations can reproduce them.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensorio import as_tensor, read_tensor, write_tensor

KINDS = ("conv", "relu", "maxpool", "gap", "fc", "flatten")


class MicroNetError(ValueError):
    pass


@dataclass
class LayerSpec:
    kind: str
    kernel: np.ndarray | None = None  # conv: (out_c, in_c, kh, kw); fc: (out, in)
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MicroNetError(f"unknown layer kind {self.kind!r}")
        if self.kernel is not None:
            self.kernel = as_tensor(self.kernel)
        if self.bias is not None:
            self.bias = as_tensor(self.bias)
        if self.kind == "conv" and (self.kernel is None or self.kernel.ndim != 4):
            raise MicroNetError("conv layer needs a rank-4 kernel (out_c, in_c, kh, kw)")
        if self.kind == "fc" and (self.kernel is None or self.kernel.ndim != 2):
            raise MicroNetError("fc layer needs a rank-2 kernel (out, in)")


@dataclass
class NetActivations:
    """Per-layer outputs of one forward pass."""

    image: np.ndarray
    outputs: list
    last_feature_index: int | None
    gap_index: int | None

    @property
    def last_feature_map(self) -> np.ndarray:
        if self.last_feature_index is None:
            raise MicroNetError("net has no feature-map boundary")
        return self.outputs[self.last_feature_index]

    @property
    def gap_output(self) -> np.ndarray | None:
        return None if self.gap_index is None else self.outputs[self.gap_index]

    @property
    def scores(self) -> np.ndarray:
        return self.outputs[-1]

    def input_to(self, index: int) -> np.ndarray:
        return self.image if index == 0 else self.outputs[index - 1]


def feature_boundary(net) -> int | None:
    """Index of the layer whose output is the last feature map.

    The boundary sits just before the first gap/flatten layer; a net without a
    head (pure feature extractor) ends at its last layer.
    """
    for idx, layer in enumerate(net):
        if layer.kind in ("gap", "flatten"):
            return idx - 1 if idx > 0 else None
    return len(net) - 1 if net else None


# ---------------------------------------------------------------------------
# layer forward / backward

def _conv_forward(x, layer, idx):
    cout, cin_k, kh, kw = layer.kernel.shape
    cin, h, w = x.shape
    if cin != cin_k:
        raise MicroNetError(f"layer {idx} (conv): input has {cin} channels, kernel expects {cin_k}")
    s, p = layer.stride, layer.padding
    xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
    oh = (h + 2 * p - kh) // s + 1
    ow = (w + 2 * p - kw) // s + 1
    if oh < 1 or ow < 1:
        raise MicroNetError(f"layer {idx} (conv): kernel {kh}x{kw} does not fit {h}x{w} input")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::s, ::s]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(cin * kh * kw, oh * ow)
    out = layer.kernel.reshape(cout, -1) @ cols
    if layer.bias is not None:
        out = out + layer.bias[:, None]
    return out.reshape(cout, oh, ow)


def _conv_backward(x, layer, grad_out):
    cout, cin, kh, kw = layer.kernel.shape
    _, h, w = x.shape
    s, p = layer.stride, layer.padding
    oh, ow = grad_out.shape[1], grad_out.shape[2]
    gcols = layer.kernel.reshape(cout, -1).T @ grad_out.reshape(cout, -1)
    gcols = gcols.reshape(cin, kh, kw, oh, ow)
    gx = np.zeros((cin, h + 2 * p, w + 2 * p))
    for a in range(kh):
        for b in range(kw):
            gx[:, a : a + s * oh : s, b : b + s * ow : s] += gcols[:, a, b]
    return gx[:, p : p + h, p : p + w] if p else gx


def _pool_view(x):
    c, h, w = x.shape
    oh, ow = h // 2, w // 2
    v = x[:, : oh * 2, : ow * 2].reshape(c, oh, 2, ow, 2)
    # windows flattened in row-major scan order: (0,0),(0,1),(1,0),(1,1)
    return v.transpose(0, 1, 3, 2, 4).reshape(c, oh, ow, 4)


def _maxpool_forward(x, idx):
    if x.ndim != 3 or x.shape[1] < 2 or x.shape[2] < 2:
        raise MicroNetError(f"layer {idx} (maxpool): needs a spatial map of at least 2x2")
    return _pool_view(x).max(axis=-1)


def _maxpool_backward(x, grad_out):
    c, h, w = x.shape
    oh, ow = h // 2, w // 2
    view = _pool_view(x)
    idx = view.argmax(axis=-1)  # first maximum wins on ties
    g = np.zeros_like(view)
    np.put_along_axis(g, idx[..., None], grad_out[..., None], axis=-1)
    g = g.reshape(c, oh, ow, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, oh * 2, ow * 2)
    full = np.zeros((c, h, w))
    full[:, : oh * 2, : ow * 2] = g
    return full


def _layer_forward(layer, x, idx):
    if layer.kind == "conv":
        if x.ndim != 3:
            raise MicroNetError(f"layer {idx} (conv): expected a rank-3 input, got rank {x.ndim}")
        return _conv_forward(x, layer, idx)
    if layer.kind == "relu":
        return np.maximum(x, 0.0)
    if layer.kind == "maxpool":
        return _maxpool_forward(x, idx)
    if layer.kind == "gap":
        if x.ndim != 3:
            raise MicroNetError(f"layer {idx} (gap): expected a rank-3 input, got rank {x.ndim}")
        return x.sum(axis=(1, 2))
    if layer.kind == "flatten":
        return x.reshape(-1)
    if layer.kind == "fc":
        if x.ndim != 1:
            raise MicroNetError(f"layer {idx} (fc): expected a rank-1 input, got rank {x.ndim}")
        out_dim, in_dim = layer.kernel.shape
        if x.shape[0] != in_dim:
            raise MicroNetError(f"layer {idx} (fc): input length {x.shape[0]}, weight expects {in_dim}")
        out = layer.kernel @ x
        if layer.bias is not None:
            out = out + layer.bias
        return out
    raise MicroNetError(f"layer {idx}: unknown kind {layer.kind!r}")


def _layer_backward(layer, x, grad_out):
    if layer.kind == "conv":
        return _conv_backward(x, layer, grad_out)
    if layer.kind == "relu":
        return grad_out * (x > 0.0)
    if layer.kind == "maxpool":
        return _maxpool_backward(x, grad_out)
    if layer.kind == "gap":
        return np.broadcast_to(grad_out[:, None, None], x.shape).copy()
    if layer.kind == "flatten":
        return grad_out.reshape(x.shape)
    if layer.kind == "fc":
        return layer.kernel.T @ grad_out
    raise MicroNetError(f"unknown kind {layer.kind!r}")


# ---------------------------------------------------------------------------
# public operations

def forward(net, image) -> NetActivations:
    """Run the net on one image, recording every layer output.

    Deterministic: identical inputs and weights produce bitwise-identical
    activations.
    """
    if not net:
        raise MicroNetError("empty net")
    x = as_tensor(image)
    if x.ndim != 3:
        raise MicroNetError(f"image must be rank-3 (channels, rows, cols), got rank {x.ndim}")
    outputs = []
    gap_index = None
    for idx, layer in enumerate(net):
        x = _layer_forward(layer, x, idx)
        outputs.append(x)
        if layer.kind == "gap":
            gap_index = idx
    return NetActivations(
        image=as_tensor(image),
        outputs=outputs,
        last_feature_index=feature_boundary(net),
        gap_index=gap_index,
    )


def backward(net, acts: NetActivations, target_class: int,
             wrt: str = "input", order: int = 1) -> np.ndarray:
    """Derivative of the pre-softmax score for ``target_class``.

    ``wrt`` selects the differentiation target (the input image or the last
    feature map); ``order`` selects the elementwise derivative order. Orders
    2 and 3 are identically zero for these piecewise-linear nets (exact
    subgradient convention), and the zero tensor is what comes back.
    """
    scores = acts.scores
    if not (0 <= target_class < scores.shape[0]):
        raise MicroNetError(f"class index {target_class} out of range for {scores.shape[0]} classes")
    if wrt not in ("input", "last_feature_map"):
        raise MicroNetError(f"unsupported wrt target {wrt!r}")
    if order not in (1, 2, 3):
        raise MicroNetError(f"derivative order must be 1, 2, or 3, got {order}")
    if scores.ndim != 1:
        raise MicroNetError("net output is not a score vector; add a classifier head")
    if wrt == "input":
        stop = 0
        target_shape = acts.image.shape
    else:
        if acts.last_feature_index is None:
            raise MicroNetError("net has no feature-map boundary")
        stop = acts.last_feature_index + 1
        target_shape = acts.last_feature_map.shape
    if order > 1:
        return np.zeros(target_shape)
    grad = np.zeros_like(scores)
    grad[target_class] = 1.0
    for idx in range(len(net) - 1, stop - 1, -1):
        grad = _layer_backward(net[idx], acts.input_to(idx), grad)
    return grad


def feature_cell_input_gradient(net, acts: NetActivations, cell=None) -> np.ndarray:
    """Gradient of the channel-summed feature-map cell w.r.t. the input image.

    ``cell`` defaults to the center cell (floor(u/2), floor(v/2)). This is the
    per-image ingredient of receptive-field estimation.
    """
    if acts.last_feature_index is None:
        raise MicroNetError("net has no feature-map boundary")
    fmap = acts.last_feature_map
    if fmap.ndim != 3:
        raise MicroNetError("last feature map is not spatial")
    _, u, v = fmap.shape
    ci, cj = (u // 2, v // 2) if cell is None else cell
    if not (0 <= ci < u and 0 <= cj < v):
        raise MicroNetError(f"cell {(ci, cj)} outside {u}x{v} feature map")
    grad = np.zeros_like(fmap)
    grad[:, ci, cj] = 1.0
    for idx in range(acts.last_feature_index, -1, -1):
        grad = _layer_backward(net[idx], acts.input_to(idx), grad)
    return grad


def scores_from_feature_map(net, fmap) -> np.ndarray:
    """Run only the head layers on a given feature map."""
    boundary = feature_boundary(net)
    if boundary is None or boundary >= len(net) - 1:
        raise MicroNetError("net has no head after the feature map")
    x = as_tensor(fmap)
    for idx in range(boundary + 1, len(net)):
        x = _layer_forward(net[idx], x, idx)
    return x


def class_probabilities(net, image) -> np.ndarray:
    """Softmax of the forward scores."""
    return softmax(forward(net, image).scores)


def softmax(z) -> np.ndarray:
    z = as_tensor(z)
    e = np.exp(z - z.max())
    return e / e.sum()


class MicroNetScorer:
    """Callable scoring adapter: image tensor -> softmax probability vector."""

    def __init__(self, net):
        self.net = net

    def __call__(self, image) -> np.ndarray:
        return class_probabilities(self.net, image)


# ---------------------------------------------------------------------------
# seeded initialization

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class XorShift64Star:
    """xorshift64* PRNG with splitmix64 seeding.

    State update: ``x ^= x >> 12; x ^= x << 25; x ^= x >> 27`` (64-bit
    wrapping), output ``(x * 0x2545F4914F6CDD1D) mod 2^64``. ``next_float``
    takes the top 53 output bits over 2^53, giving a double in [0, 1).
    The initial state is ``splitmix64(seed)`` so small seeds still produce
    well-mixed streams.
    """

    def __init__(self, seed: int):
        self._state = _splitmix64(seed & _MASK64)
        if self._state == 0:
            self._state = 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x = (x ^ (x << 25)) & _MASK64
        x ^= x >> 27
        self._state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def next_float(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_float()

    def array(self, shape, lo: float, hi: float) -> np.ndarray:
        n = int(np.prod(shape))
        vals = [self.uniform(lo, hi) for _ in range(n)]
        return np.array(vals, dtype=np.float64).reshape(shape)


# (kind, *params); conv: (in, out, k, stride, pad); fc: (in, out)
_ARCHITECTURES = {
    "micro-vgg": {
        "input_shape": (3, 28, 28),
        "plan": (
            ("conv", 3, 4, 3, 1, 1), ("relu",), ("maxpool",),
            ("conv", 4, 8, 3, 1, 1), ("relu",), ("maxpool",),
            ("conv", 8, 8, 3, 1, 1), ("relu",),
            ("gap",), ("fc", 8, 4),
        ),
        "num_classes": 4,
    },
    "micro-tiny": {
        "input_shape": (1, 8, 8),
        "plan": (
            ("conv", 1, 2, 3, 1, 1), ("relu",), ("maxpool",),
            ("conv", 2, 4, 3, 1, 1), ("relu",),
            ("gap",), ("fc", 4, 3),
        ),
        "num_classes": 3,
    },
    "micro-mlp-head": {
        "input_shape": (1, 6, 6),
        "plan": (
            ("conv", 1, 3, 3, 1, 1), ("relu",),
            ("flatten",), ("fc", 108, 8), ("relu",), ("fc", 8, 3),
        ),
        "num_classes": 3,
    },
    # crafted weights, see _planted_layers
    "micro-planted": {
        "input_shape": (3, 28, 28),
        "plan": None,
        "num_classes": 4,
    },
}

#: channel signatures of the four planted detectors: three color-selective
#: filters plus one generic brightness filter
_PLANTED_SIGNATURES = (
    (2.0, -1.0, -1.0),
    (-1.0, 2.0, -1.0),
    (-1.0, -1.0, 2.0),
    (1.0, 1.0, 1.0),
)


def _planted_layers(rng: "XorShift64Star") -> list:
    """A classifier with built-in class structure instead of random weights.

    Each of the four conv filters is a 3x3 box detector selective for one
    input-channel signature; sum-pooling plus an identity readout makes class
    k literally "how much of pattern k is present". A small seed-dependent
    jitter keeps distinct seeds distinct without destroying the structure.
    Unlike the randomly-initialized architectures, this net has real evidence
    geometry, which end-to-end saliency checks need.
    """
    jitter = 0.02
    kernel = np.zeros((4, 3, 3, 3))
    for k, sig in enumerate(_PLANTED_SIGNATURES):
        for c, wc in enumerate(sig):
            kernel[k, c] = wc / 9.0
    kernel = kernel + jitter * rng.array(kernel.shape, -1.0, 1.0)
    fc = np.eye(4) + jitter * rng.array((4, 4), -1.0, 1.0)
    return [
        LayerSpec("conv", kernel=kernel, bias=np.zeros(4), stride=1, padding=1),
        LayerSpec("relu"),
        LayerSpec("maxpool"),
        LayerSpec("gap"),
        LayerSpec("fc", kernel=fc, bias=np.zeros(4)),
    ]


def architectures() -> list[str]:
    return sorted(_ARCHITECTURES)


def input_shape(arch_id: str) -> tuple:
    if arch_id not in _ARCHITECTURES:
        raise MicroNetError(f"unknown architecture {arch_id!r}")
    return _ARCHITECTURES[arch_id]["input_shape"]


def num_classes(arch_id: str) -> int:
    if arch_id not in _ARCHITECTURES:
        raise MicroNetError(f"unknown architecture {arch_id!r}")
    return _ARCHITECTURES[arch_id]["num_classes"]


def seeded_init(arch_id: str, seed: int) -> list:
    """Deterministic weights for a built-in architecture.

    A single xorshift64* stream, seeded once, fills each weighted layer in
    order. Conv kernels draw row-major over (out_c, in_c, kh, kw) and fc
    weights row-major over (out, in), uniform in ``[-a, a)`` with
    ``a = sqrt(3 / fan_in)``. Biases are zero throughout, which keeps the
    score an exactly positively-homogeneous function of the input.
    """
    if arch_id not in _ARCHITECTURES:
        raise MicroNetError(f"unknown architecture {arch_id!r}")
    rng = XorShift64Star(seed)
    if arch_id == "micro-planted":
        return _planted_layers(rng)
    layers = []
    for item in _ARCHITECTURES[arch_id]["plan"]:
        kind = item[0]
        if kind == "conv":
            _, cin, cout, k, stride, pad = item
            a = math.sqrt(3.0 / (cin * k * k))
            kernel = rng.array((cout, cin, k, k), -a, a)
            layers.append(LayerSpec("conv", kernel=kernel, bias=np.zeros(cout),
                                    stride=stride, padding=pad))
        elif kind == "fc":
            _, fin, fout = item
            a = math.sqrt(3.0 / fin)
            layers.append(LayerSpec("fc", kernel=rng.array((fout, fin), -a, a),
                                    bias=np.zeros(fout)))
        else:
            layers.append(LayerSpec(kind))
    return layers


def fc_weight_matrix(net) -> np.ndarray:
    """Weight matrix of the final fc layer (num_classes x K for a GAP+FC head)."""
    for layer in reversed(net):
        if layer.kind == "fc":
            return layer.kernel
    raise MicroNetError("net has no fc layer")


def class_structured_images(n: int, shape, seed: int) -> list:
    """Images with one strong single-channel blob plus a weaker distractor.

    Built to pair with "micro-planted": the strong blob is the evidence for
    one detector class, the distractor activates a rival. Values in [0, 1].
    """
    rng = np.random.default_rng(seed)
    c, h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    images = []
    for _ in range(n):
        a, b = rng.choice(c, size=2, replace=False)
        img = np.zeros((c, h, w))
        cy, cx, s1 = rng.uniform(5, h - 5), rng.uniform(5, w - 5), rng.uniform(1.5, 3.0)
        dy, dx, s2 = rng.uniform(5, h - 5), rng.uniform(5, w - 5), rng.uniform(1.5, 3.0)
        img[a] += rng.uniform(0.8, 1.0) * np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * s1**2))
        img[b] += rng.uniform(0.4, 0.6) * np.exp(-((ys - dy) ** 2 + (xs - dx) ** 2) / (2 * s2**2))
        images.append(np.clip(img, 0.0, 1.0))
    return images


def synthetic_images(n: int, shape, seed: int) -> list:
    """Seed-fixed synthetic blob images in [0, 1], shaped like ``shape``."""
    rng = np.random.default_rng(seed)
    c, h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    images = []
    for _ in range(n):
        field = np.zeros((h, w))
        for _ in range(3):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            sig = rng.uniform(max(2.0, h / 12), max(3.0, h / 5))
            amp = rng.uniform(0.4, 1.0)
            field += amp * np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sig**2))
        field += rng.uniform(0, 0.1, size=(h, w))
        field = np.clip(field / max(field.max(), 1e-12), 0.0, 1.0)
        chans = rng.uniform(0.3, 1.0, size=c)
        images.append(np.stack([field * s for s in chans]))
    return images


# ---------------------------------------------------------------------------
# serialization: one tensor file per weighted layer + a JSON descriptor

def save_net(net, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    layers_doc = []
    for idx, layer in enumerate(net):
        entry = {"kind": layer.kind, "stride": layer.stride, "padding": layer.padding,
                 "kernel_path": None, "bias_path": None}
        if layer.kernel is not None:
            name = f"layer_{idx:02d}_kernel.npy"
            write_tensor(layer.kernel, directory / name)
            entry["kernel_path"] = name
        if layer.bias is not None:
            name = f"layer_{idx:02d}_bias.npy"
            write_tensor(layer.bias, directory / name)
            entry["bias_path"] = name
        layers_doc.append(entry)
    desc = directory / "arch.json"
    desc.write_text(json.dumps({"layers": layers_doc}, indent=2) + "\n")
    return desc


def load_net(directory) -> list:
    directory = Path(directory)
    desc = directory / "arch.json"
    if not desc.exists():
        raise MicroNetError(f"no arch.json in {directory}")
    doc = json.loads(desc.read_text())
    layers = []
    for entry in doc["layers"]:
        kernel = read_tensor(directory / entry["kernel_path"]) if entry.get("kernel_path") else None
        bias = read_tensor(directory / entry["bias_path"]) if entry.get("bias_path") else None
        layers.append(LayerSpec(entry["kind"], kernel=kernel, bias=bias,
                                stride=entry.get("stride", 1), padding=entry.get("padding", 0)))
    return layers

"""Independent oracles shared by the unit and acceptance tests.

Everything in here is deliberately written the slow, obvious way (scalar
loops, finite differences, explicit convolutions) and never calls the
production code paths it is used to check.
"""

import numpy as np

from camkit import micronet as mn


# ---------------------------------------------------------------------------
# finite differences

def fd_score_gradient_wrt_input(net, image, class_id, step=1e-5):
    """Central finite differences of the class score over every input pixel."""
    grad = np.zeros_like(image)
    it = np.nditer(image, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        hi = image.copy()
        lo = image.copy()
        hi[idx] += step
        lo[idx] -= step
        y_hi = mn.forward(net, hi).scores[class_id]
        y_lo = mn.forward(net, lo).scores[class_id]
        grad[idx] = (y_hi - y_lo) / (2 * step)
        it.iternext()
    return grad


def fd_score_gradient_wrt_feature(net, fmap, class_id, step=1e-5):
    """Central finite differences through the head only."""
    grad = np.zeros_like(fmap)
    it = np.nditer(fmap, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        hi = fmap.copy()
        lo = fmap.copy()
        hi[idx] += step
        lo[idx] -= step
        y_hi = mn.scores_from_feature_map(net, hi)[class_id]
        y_lo = mn.scores_from_feature_map(net, lo)[class_id]
        grad[idx] = (y_hi - y_lo) / (2 * step)
        it.iternext()
    return grad


def near_kink(net, acts, margin, start_layer=0):
    """True when any relu input or maxpool window sits within ``margin`` of a
    decision boundary, where finite differences stop being a valid oracle.

    ``start_layer`` restricts the check to the layers a perturbation actually
    traverses (head-only for feature-map differentiation).
    """
    for idx, layer in enumerate(net):
        if idx < start_layer:
            continue
        x = acts.input_to(idx)
        if layer.kind == "relu":
            if np.any(np.abs(x) < margin):
                return True
        elif layer.kind == "maxpool":
            c, h, w = x.shape
            oh, ow = h // 2, w // 2
            win = (
                x[:, : oh * 2, : ow * 2]
                .reshape(c, oh, 2, ow, 2)
                .transpose(0, 1, 3, 2, 4)
                .reshape(c, oh, ow, 4)
            )
            srt = np.sort(win, axis=-1)
            gap = srt[..., 3] - srt[..., 2]
            # ties between relu-floored exact zeros are benign; the relu
            # proximity check above already guards their pre-activations
            if np.any((gap < margin) & (srt[..., 3] > margin)):
                return True
    return False


def sample_away_from_kinks(arch, net_seed, image_seed, margin=1e-4, tries=60,
                           wrt="input"):
    """A (net, image, acts) triple whose activations are safely off every kink.

    Finite differences are only a valid oracle away from relu and maxpool
    decision boundaries, so kink-adjacent samples are re-drawn; a net whose
    activations hug the boundaries for every image is skipped entirely by
    advancing the weight seed. For ``wrt="last_feature_map"`` only the head
    layers matter, since the perturbation never touches the extractor.
    """
    shape = mn.input_shape(arch)
    for net_try in range(10):
        net = mn.seeded_init(arch, net_seed + 1000 * net_try)
        start = 0 if wrt == "input" else mn.feature_boundary(net) + 1
        for k in range(tries):
            img = mn.synthetic_images(1, shape, image_seed + 1000 * k)[0]
            acts = mn.forward(net, img)
            if not near_kink(net, acts, margin, start_layer=start):
                return net, img, acts
    raise AssertionError(f"could not find a kink-free sample for {arch} seed {net_seed}")


# ---------------------------------------------------------------------------
# scalar-loop engine oracles

def grad_cam_weights_loops(grad1):
    K, u, v = grad1.shape
    w = np.zeros(K)
    for k in range(K):
        s = 0.0
        for i in range(u):
            for j in range(v):
                s += grad1[k, i, j]
        w[k] = s / (u * v)
    return w


def grad_cam_map_loops(A, grad1):
    """Full Grad-CAM: mean weights, weighted sum, clip at zero."""
    K, u, v = A.shape
    w = grad_cam_weights_loops(grad1)
    L = np.zeros((u, v))
    for i in range(u):
        for j in range(v):
            s = 0.0
            for k in range(K):
                s += w[k] * A[k, i, j]
            L[i, j] = max(0.0, s)
    return L


def grad_cam_pp_weights_loops(A, g1, g2, g3):
    K, u, v = A.shape
    w = np.zeros(K)
    for k in range(K):
        a_sum = 0.0
        for a in range(u):
            for b in range(v):
                a_sum += A[k, a, b]
        for i in range(u):
            for j in range(v):
                denom = 2.0 * g2[k, i, j] + a_sum * g3[k, i, j]
                alpha = 0.0 if denom == 0.0 else g2[k, i, j] / denom
                w[k] += alpha * max(0.0, g1[k, i, j])
    return w


# ---------------------------------------------------------------------------
# upsampling oracles

def gaussian_upsample_loops(grid, w, h, sx, sy, offset=0.0):
    """Literal quadruple loop over pixels and cells."""
    u, v = grid.shape
    out = np.zeros((w, h))
    for x in range(w):
        for y in range(h):
            s = 0.0
            for i in range(u):
                for j in range(v):
                    ex = (x - (w / u) * (i + offset)) ** 2 / (2 * sx * sx)
                    ey = (y - (h / v) * (j + offset)) ** 2 / (2 * sy * sy)
                    s += grid[i, j] * np.exp(-(ex + ey))
            out[x, y] = s
    return out


def bilinear_loops(grid, w, h):
    """Per-pixel two-axis lerp with align-corners source coordinates."""
    u, v = grid.shape
    out = np.zeros((w, h))
    for x in range(w):
        sx = 0.0 if w == 1 or u == 1 else x * (u - 1) / (w - 1)
        x0 = min(int(np.floor(sx)), u - 2) if u > 1 else 0
        fx = sx - x0
        for y in range(h):
            sy = 0.0 if h == 1 or v == 1 else y * (v - 1) / (h - 1)
            y0 = min(int(np.floor(sy)), v - 2) if v > 1 else 0
            fy = sy - y0
            if u == 1 and v == 1:
                out[x, y] = grid[0, 0]
            elif u == 1:
                out[x, y] = grid[0, y0] * (1 - fy) + grid[0, y0 + 1] * fy
            elif v == 1:
                out[x, y] = grid[x0, 0] * (1 - fx) + grid[x0 + 1, 0] * fx
            else:
                out[x, y] = (
                    grid[x0, y0] * (1 - fx) * (1 - fy)
                    + grid[x0 + 1, y0] * fx * (1 - fy)
                    + grid[x0, y0 + 1] * (1 - fx) * fy
                    + grid[x0 + 1, y0 + 1] * fx * fy
                )
    return out


# ---------------------------------------------------------------------------
# convolution oracle for receptive-field shapes

def conv2d_full(a, b):
    """Plain full 2D convolution by explicit summation."""
    ah, aw = a.shape
    bh, bw = b.shape
    out = np.zeros((ah + bh - 1, aw + bw - 1))
    for i in range(ah):
        for j in range(aw):
            out[i : i + bh, j : j + bw] += a[i, j] * b
    return out


def box_selfconv(n):
    """n-fold self-convolution of the 3x3 all-ones box, peak-normalized."""
    k = np.ones((3, 3))
    acc = k
    for _ in range(n - 1):
        acc = conv2d_full(acc, k)
    return acc / acc.max()


def embed_centered(patch, shape):
    """Place a patch at the center of a zero canvas of the given shape."""
    out = np.zeros(shape)
    ph, pw = patch.shape
    r0 = (shape[0] - ph) // 2
    c0 = (shape[1] - pw) // 2
    out[r0 : r0 + ph, c0 : c0 + pw] = patch
    return out


def box_conv_net(n_layers):
    """n stacked 3x3 all-ones convs, one channel, stride 1, pad 1."""
    layers = []
    for _ in range(n_layers):
        layers.append(mn.LayerSpec("conv", kernel=np.ones((1, 1, 3, 3)), stride=1, padding=1))
    return layers

import numpy as np
import pytest

from camkit import micronet as mn
from camkit.manifest import TensorManifest, add_tensor


def build_micronet_manifest(directory, arch="micro-vgg", seed=0, n_images=4,
                            image_seed=0, grad_style="true"):
    """Write a sample manifest from micro-net exports.

    ``grad_style`` controls grad2/grad3: "true" stores the net's honest zero
    higher-order derivatives; "synthetic" stores positive stand-ins shaped
    like the exponential-score convention so the alpha-weighted engine has
    something to chew on; "constant" makes every tensor spatially constant.
    """
    directory.mkdir(parents=True, exist_ok=True)
    net = mn.seeded_init(arch, seed)
    images = mn.synthetic_images(n_images, mn.input_shape(arch), image_seed)
    manifest = TensorManifest(base_dir=directory)
    add_tensor(manifest, mn.fc_weight_matrix(net), "fc_weights", "fc_weights.npy")
    for n, img in enumerate(images):
        sid = f"s{n:03d}"
        acts = mn.forward(net, img)
        class_id = int(np.argmax(acts.scores))
        A = acts.last_feature_map
        g1 = mn.backward(net, acts, class_id, wrt="last_feature_map", order=1)
        if grad_style == "true":
            g2 = mn.backward(net, acts, class_id, wrt="last_feature_map", order=2)
            g3 = mn.backward(net, acts, class_id, wrt="last_feature_map", order=3)
        elif grad_style == "synthetic":
            g2 = np.exp(np.clip(acts.scores[class_id], -20, 20)) * g1**2
            g3 = np.exp(np.clip(acts.scores[class_id], -20, 20)) * g1**3
        elif grad_style == "constant":
            # dyadic constants keep every engine's combine bit-exactly flat
            img = np.full_like(img, 0.5)
            A = np.full_like(A, 0.5)
            g1 = np.full_like(g1, 0.25)
            g2 = np.full_like(g1, 0.125)
            g3 = np.full_like(g1, 0.0)
            add_tensor(manifest, img, "image", f"{sid}_image.npy", class_id, sid)
            add_tensor(manifest, A, "feature_map", f"{sid}_feature_map.npy", class_id, sid)
            add_tensor(manifest, g1, "grad1", f"{sid}_grad1.npy", class_id, sid)
            add_tensor(manifest, g2, "grad2", f"{sid}_grad2.npy", class_id, sid)
            add_tensor(manifest, g3, "grad3", f"{sid}_grad3.npy", class_id, sid)
            continue
        else:
            raise ValueError(grad_style)
        add_tensor(manifest, img, "image", f"{sid}_image.npy", class_id, sid)
        add_tensor(manifest, A, "feature_map", f"{sid}_feature_map.npy", class_id, sid)
        add_tensor(manifest, g1, "grad1", f"{sid}_grad1.npy", class_id, sid)
        add_tensor(manifest, g2, "grad2", f"{sid}_grad2.npy", class_id, sid)
        add_tensor(manifest, g3, "grad3", f"{sid}_grad3.npy", class_id, sid)
    path = directory / "manifest.json"
    manifest.save(path)
    return net, path


@pytest.fixture
def micronet_fixture(tmp_path):
    net, path = build_micronet_manifest(tmp_path / "fixture")
    return net, path

"""Manifest loading, lookup, and validation."""

import json

import numpy as np
import pytest

from camkit.manifest import ManifestError, TensorManifest, add_tensor
from camkit.tensorio import write_tensor


@pytest.fixture
def manifest_dir(tmp_path):
    m = TensorManifest(base_dir=tmp_path)
    add_tensor(m, np.ones((2, 3)), "fc_weights", "fc.npy")
    add_tensor(m, np.ones((2, 4, 4)), "feature_map", "a.npy", class_id=1, sample_id="s0")
    add_tensor(m, np.zeros((2, 4, 4)), "grad1", "g.npy", class_id=1, sample_id="s0")
    m.save(tmp_path / "manifest.json")
    return tmp_path


class TestLoad:
    def test_roundtrip(self, manifest_dir):
        m = TensorManifest.load(manifest_dir / "manifest.json")
        assert m.sample_ids() == ["s0"]
        assert m.tensor("feature_map", "s0").shape == (2, 4, 4)
        assert m.entry("grad1", "s0").class_id == 1

    def test_global_fallback(self, manifest_dir):
        m = TensorManifest.load(manifest_dir / "manifest.json")
        assert m.tensor("fc_weights", "s0").shape == (2, 3)

    def test_missing_role(self, manifest_dir):
        m = TensorManifest.load(manifest_dir / "manifest.json")
        with pytest.raises(ManifestError, match="grad2"):
            m.require({"grad1", "grad2"}, "s0")
        with pytest.raises(ManifestError, match="no 'image' entry"):
            m.tensor("image", "s0")

    def test_unknown_role_rejected(self, tmp_path):
        doc = {"entries": [{"role": "gradient4", "path": "x.npy"}]}
        p = tmp_path / "m.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(ManifestError, match="unknown role"):
            TensorManifest.load(p)

    def test_not_json(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text("{nope")
        with pytest.raises(ManifestError, match="not valid JSON"):
            TensorManifest.load(p)


class TestValidateFiles:
    def test_all_present(self, manifest_dir):
        TensorManifest.load(manifest_dir / "manifest.json").validate_files()

    def test_missing_file(self, manifest_dir):
        m = TensorManifest.load(manifest_dir / "manifest.json")
        (manifest_dir / "g.npy").unlink()
        with pytest.raises(ManifestError, match="missing file"):
            m.validate_files()

    def test_corrupt_file(self, manifest_dir):
        (manifest_dir / "g.npy").write_bytes(b"garbage")
        m = TensorManifest.load(manifest_dir / "manifest.json")
        with pytest.raises(Exception, match="magic"):
            m.validate_files()

    def test_extra_metadata_ignored(self, tmp_path):
        write_tensor(np.ones(3), tmp_path / "t.npy")
        doc = {"entries": [{"role": "scores", "path": "t.npy"}],
               "meta": {"model": "external", "higher_order": "exp_score"}}
        p = tmp_path / "m.json"
        p.write_text(json.dumps(doc))
        m = TensorManifest.load(p)
        assert m.tensor("scores").tolist() == [1.0, 1.0, 1.0]

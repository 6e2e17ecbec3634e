"""Manifest files tying tensor roles to container files on disk.

A manifest is a JSON document ``{"entries": [{role, path, class_id?,
sample_id?}, ...]}``. Paths are resolved relative to the manifest file.
Entries without a ``sample_id`` are global (e.g. ``fc_weights``); per-sample
entries carry the sample they belong to.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensorio import read_tensor, write_tensor

ROLES = ("image", "feature_map", "grad1", "grad2", "grad3", "fc_weights", "scores")


class ManifestError(ValueError):
    pass


@dataclass
class ManifestEntry:
    role: str
    path: str
    class_id: int | None = None
    sample_id: str | None = None

    def to_dict(self) -> dict:
        d = {"role": self.role, "path": self.path}
        if self.class_id is not None:
            d["class_id"] = self.class_id
        if self.sample_id is not None:
            d["sample_id"] = self.sample_id
        return d


@dataclass
class TensorManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    base_dir: Path = Path(".")

    @classmethod
    def load(cls, path) -> "TensorManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict) or not isinstance(doc.get("entries"), list):
            raise ManifestError(f"manifest {path} must be an object with an 'entries' list")
        entries = []
        for i, raw in enumerate(doc["entries"]):
            if not isinstance(raw, dict) or "role" not in raw or "path" not in raw:
                raise ManifestError(f"manifest entry {i} needs 'role' and 'path'")
            if raw["role"] not in ROLES:
                raise ManifestError(f"manifest entry {i} has unknown role {raw['role']!r}")
            entries.append(
                ManifestEntry(
                    role=raw["role"],
                    path=raw["path"],
                    class_id=raw.get("class_id"),
                    sample_id=raw.get("sample_id"),
                )
            )
        return cls(entries=entries, base_dir=path.parent)

    def save(self, path) -> None:
        doc = {"entries": [e.to_dict() for e in self.entries]}
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.base_dir / entry.path

    def sample_ids(self) -> list[str]:
        """Distinct sample ids in first-appearance order."""
        seen = []
        for e in self.entries:
            if e.sample_id is not None and e.sample_id not in seen:
                seen.append(e.sample_id)
        return seen

    def entry(self, role: str, sample_id: str | None = None) -> ManifestEntry | None:
        """Entry for a role, preferring the sample-specific one over a global one."""
        fallback = None
        for e in self.entries:
            if e.role != role:
                continue
            if e.sample_id == sample_id:
                return e
            if e.sample_id is None:
                fallback = e
        return fallback

    def tensor(self, role: str, sample_id: str | None = None) -> np.ndarray:
        e = self.entry(role, sample_id)
        if e is None:
            where = f" for sample {sample_id!r}" if sample_id else ""
            raise ManifestError(f"manifest has no '{role}' entry{where}")
        return read_tensor(self.resolve(e))

    def require(self, roles, sample_id: str | None = None) -> None:
        missing = [r for r in roles if self.entry(r, sample_id) is None]
        if missing:
            where = f" for sample {sample_id!r}" if sample_id else ""
            raise ManifestError(f"manifest is missing roles {missing}{where}")

    def validate_files(self) -> None:
        """Check every referenced file exists and parses as a tensor."""
        for e in self.entries:
            p = self.resolve(e)
            if not p.exists():
                raise ManifestError(f"manifest references missing file {p}")
            read_tensor(p)


def add_tensor(manifest: TensorManifest, arr, role: str, filename: str,
               class_id: int | None = None, sample_id: str | None = None) -> ManifestEntry:
    """Write ``arr`` under the manifest's base dir and append an entry for it."""
    write_tensor(arr, manifest.base_dir / filename)
    entry = ManifestEntry(role=role, path=filename, class_id=class_id, sample_id=sample_id)
    manifest.entries.append(entry)
    return entry

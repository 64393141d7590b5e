"""Per-output-directory artifact manifest with content hashes."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

from ..errors import DataError

MANIFEST_NAME = "manifest.json"


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class Manifest:
    """Tracks every artifact a pipeline stage wrote, keyed by relative path."""

    def __init__(self, root):
        self.root = os.path.abspath(root)
        self.entries = {}
        path = self.path
        if os.path.exists(path):
            with open(path) as fh:
                self.entries = json.load(fh)["artifacts"]

    @property
    def path(self) -> str:
        return os.path.join(self.root, MANIFEST_NAME)

    def add(self, relpath: str, stage: str, params: dict | None = None) -> None:
        full = os.path.join(self.root, relpath)
        self.entries[relpath] = {
            "sha256": _sha256(full),
            "stage": stage,
            "params": params or {},
        }

    def save(self) -> None:
        os.makedirs(self.root, exist_ok=True)
        payload = json.dumps({"artifacts": dict(sorted(self.entries.items()))},
                             indent=2, sort_keys=True)
        fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".manifest.tmp")
        with os.fdopen(fd, "w") as fh:
            fh.write(payload + "\n")
        os.replace(tmp, self.path)

    def verify(self, relpath: str) -> None:
        """Raise DataError if the artifact is unknown or its hash changed."""
        if relpath not in self.entries:
            raise DataError(f"{relpath} is not listed in {self.path}")
        full = os.path.join(self.root, relpath)
        if not os.path.exists(full):
            raise DataError(f"{relpath}: file missing but listed in manifest")
        actual = _sha256(full)
        expected = self.entries[relpath]["sha256"]
        if actual != expected:
            raise DataError(
                f"{relpath}: content hash {actual[:12]}... does not match manifest "
                f"{expected[:12]}... (artifact modified?)")

    def list_stage(self, stage: str) -> list:
        return sorted(p for p, e in self.entries.items() if e["stage"] == stage)

"""Run manifests: config digest, seeds, code version and SHA-256 of every output."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

MANIFEST = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, config_digest: str, seeds, version: str, extra: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    files = {str(p.relative_to(out_dir)): sha256_file(p)
             for p in sorted(out_dir.rglob("*")) if p.is_file() and p.name != MANIFEST}
    doc = {"config_sha256": config_digest, "seeds": list(seeds), "code_version": version,
           "files": files, **(extra or {})}
    path = out_dir / MANIFEST
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def verify_manifest(out_dir) -> list:
    """Return the list of files whose hash differs from (or is missing versus) the manifest."""
    out_dir = Path(out_dir)
    doc = json.loads((out_dir / MANIFEST).read_text())
    bad = []
    for rel, digest in doc["files"].items():
        p = out_dir / rel
        if not p.is_file() or sha256_file(p) != digest:
            bad.append(rel)
    return bad

"""Run manifests: deterministic record of what a pipeline produced.

The manifest lists every artifact with its sha256, the config hash, and
the run's bookkeeping (bandwidth tallies, trigger log, simulated-time
summary). Nothing wall-clock-dependent goes in, so identical
config+seed reproduces a byte-identical manifest; wall timing belongs
on stderr, not in artifacts.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .io import atomic_write_text

TOOL_VERSION = "0.1.0"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def config_hash(config_dict: dict) -> str:
    return sha256_bytes(canonical_json(config_dict).encode())


def build_manifest(config_dict: dict, out_dir, artifact_paths,
                   extra: dict | None = None) -> dict:
    out_dir = Path(out_dir)
    artifacts = {}
    for p in sorted(Path(p) for p in artifact_paths):
        artifacts[p.relative_to(out_dir).as_posix()] = sha256_file(p)
    manifest = {
        "tool_version": TOOL_VERSION,
        "config_hash": config_hash(config_dict),
        "config": config_dict,
        "artifacts": artifacts,
    }
    if extra:
        manifest.update(extra)
    return manifest


def write_manifest(out_dir, manifest: dict) -> Path:
    path = Path(out_dir) / "manifest.json"
    atomic_write_text(path, canonical_json(manifest) + "\n")
    return path


def load_manifest(out_dir) -> dict:
    return json.loads((Path(out_dir) / "manifest.json").read_text())

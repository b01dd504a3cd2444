"""Reproducible run records: command echo, digests, versions, timing.

Every pipeline command writes one manifest next to its outputs so a run can
be audited later: what was invoked, with which configuration, reading which
input bytes, producing which output bytes.  All digests are SHA-256 over
file contents; the configuration digest hashes the canonical JSON encoding
of the resolved configuration.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy
import pandas
import scipy

from . import __version__


def file_digest(path) -> str:
    """SHA-256 hex digest of a file's contents."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def config_digest(config: dict) -> str:
    """SHA-256 hex digest of the canonical JSON encoding of a config dict."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def tool_versions() -> dict[str, str]:
    return {
        "vcgrowth": __version__,
        "python": sys.version.split()[0],
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "pandas": pandas.__version__,
    }


@dataclass(frozen=True)
class RunManifest:
    """One command execution: inputs, outputs, configuration, environment."""

    command: tuple[str, ...]
    config: dict
    config_sha256: str
    inputs: dict[str, str]
    outputs: dict[str, str]
    versions: dict[str, str]
    elapsed_seconds: float


def build_manifest(
    command,
    config: dict,
    input_paths,
    output_paths,
    elapsed_seconds: float,
) -> RunManifest:
    """Assemble a manifest, digesting every input and output file.

    Inputs are keyed by the path as supplied; outputs by file name, since
    they sit next to the manifest itself.
    """
    return RunManifest(
        command=tuple(str(part) for part in command),
        config=dict(config),
        config_sha256=config_digest(dict(config)),
        inputs={str(p): file_digest(p) for p in input_paths},
        outputs={Path(p).name: file_digest(p) for p in output_paths},
        versions=tool_versions(),
        elapsed_seconds=float(elapsed_seconds),
    )


def write_manifest(manifest: RunManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(asdict(manifest), handle, sort_keys=True, indent=2)
        handle.write("\n")


def read_manifest(path) -> RunManifest:
    with open(path, encoding="utf-8") as handle:
        payload = json.load(handle)
    payload["command"] = tuple(payload["command"])
    return RunManifest(**payload)


def verify_manifest(manifest: RunManifest, out_dir) -> list[str]:
    """Names of listed output files whose current digests do not match."""
    out_dir = Path(out_dir)
    bad = []
    for name, digest in manifest.outputs.items():
        target = out_dir / name
        if not target.exists() or file_digest(target) != digest:
            bad.append(name)
    return bad

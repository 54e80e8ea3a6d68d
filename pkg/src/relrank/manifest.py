"""Run manifests: enough metadata to detect an exact replay.

Every CLI command writes a manifest next to its primary output recording
the command, its config, the seed, sha256 digests of the inputs, the
output paths, and wall-clock time.  Recomputing the digests tells whether
the inputs of a past run are still byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

from relrank import __version__
from relrank.errors import InputValidationError

MANIFEST_FORMAT = "relrank-manifest"


@dataclass
class RunManifest:
    command: str
    argv: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int | None = None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    version: str = __version__
    wall_clock_s: float = 0.0

    def to_json_dict(self) -> dict:
        return {"format": MANIFEST_FORMAT, **asdict(self)}


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, manifest: RunManifest) -> None:
    with open(path, "w") as fh:
        json.dump(manifest.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> RunManifest:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputValidationError(f"cannot read manifest {path}: {exc}") from exc
    if data.get("format") != MANIFEST_FORMAT:
        raise InputValidationError(f"{path}: not a run manifest")
    data.pop("format")
    try:
        return RunManifest(**data)
    except TypeError as exc:
        raise InputValidationError(f"{path}: bad manifest fields: {exc}") from exc


def changed_inputs(manifest: RunManifest) -> list[str]:
    """Input paths whose current digest differs (or that vanished)."""
    changed = []
    for path, digest in manifest.inputs.items():
        try:
            if sha256_file(path) != digest:
                changed.append(path)
        except OSError:
            changed.append(path)
    return changed

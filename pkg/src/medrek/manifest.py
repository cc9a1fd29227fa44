"""Run manifests: what a command read, wrote, and was configured with.

Every CLI run drops a manifest next to its outputs. Timestamps live
only here, so the data files themselves stay byte-identical across
same-seed reruns; comparing two runs means diffing everything except
the manifest. Verification re-hashes the recorded files and reports
anything missing or changed.

File keys are stored relative to the manifest's own directory, so a
whole run directory can be moved or archived and still verify.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .errors import IoError, ValidationError

MANIFEST_NAME = "manifest.json"


def sha256_file(path: str) -> str:
    if not os.path.isfile(path):
        raise IoError(f"cannot hash missing file: {path}")
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    command: str
    seed: int
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    started: str = ""
    finished: str = ""

    def bind_base(self, base_dir: str) -> "RunManifest":
        self._base = os.path.abspath(base_dir)
        return self

    def _key(self, path: str) -> str:
        return os.path.relpath(os.path.abspath(path), self._base)

    def add_input(self, path: str) -> None:
        self.inputs[self._key(path)] = sha256_file(path)

    def add_output(self, path: str) -> None:
        self.outputs[self._key(path)] = sha256_file(path)


def start_manifest(command: str, seed: int, config: dict, out_dir: str) -> RunManifest:
    return RunManifest(
        command=command, seed=seed, config=config,
        started=datetime.now(timezone.utc).isoformat(),
    ).bind_base(out_dir)


def write_manifest(manifest: RunManifest) -> str:
    manifest.finished = datetime.now(timezone.utc).isoformat()
    path = os.path.join(manifest._base, MANIFEST_NAME)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dataclasses.asdict(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_manifest(path: str) -> RunManifest:
    if not os.path.isfile(path):
        raise IoError(f"manifest not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"manifest {path} is not valid JSON: {exc}") from None
    expected = {f.name for f in dataclasses.fields(RunManifest)}
    if not isinstance(data, dict) or set(data) != expected:
        raise ValidationError(f"manifest {path} has the wrong shape")
    return RunManifest(**data).bind_base(os.path.dirname(os.path.abspath(path)))


def verify_manifest(path: str) -> list[str]:
    """Re-hash recorded files; returns problems, empty when clean."""
    manifest = load_manifest(path)
    problems = []
    for kind, table in (("input", manifest.inputs), ("output", manifest.outputs)):
        for name, recorded in sorted(table.items()):
            target = os.path.join(manifest._base, name)
            if not os.path.isfile(target):
                problems.append(f"{kind} {name}: missing")
            elif sha256_file(target) != recorded:
                problems.append(f"{kind} {name}: hash mismatch")
    return problems

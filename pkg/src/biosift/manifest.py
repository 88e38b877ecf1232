"""Run manifests: provenance records written beside every CLI output."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
from pathlib import Path


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(command: str, flags: dict, inputs, outputs) -> Path:
    """Record the command, its flags, and digests of every input and output
    file next to the primary output (``<output>.manifest.json``)."""
    outputs = [Path(p) for p in outputs]
    doc = {
        "command": command,
        "flags": {k: v for k, v in sorted(flags.items())},
        "inputs": {str(p): _sha256(p) for p in inputs if Path(p).is_file()},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "written_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    target = outputs[0].with_name(outputs[0].name + ".manifest.json")
    with open(target, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return target

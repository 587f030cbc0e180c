"""Artifact provenance and CSV helpers shared by the library and the CLI.

Artifact files carry a digest of the inputs that produced them plus the
tool version, and never timestamps, so re-running a command with the same
inputs reproduces byte-identical files.
"""

from __future__ import annotations

import hashlib
import json

from . import __version__

TOOL_VERSION = __version__


def canonical_json(data) -> str:
    """Deterministic JSON: sorted keys, compact separators."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def canonical_digest(data) -> str:
    """sha256 of the canonical JSON form, truncated for readability."""
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()[:16]


def fmt(value) -> str:
    """Shortest decimal that round-trips the float exactly."""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header: list[str], rows, meta: dict | None = None) -> None:
    """CSV with '#'-prefixed provenance lines before the header row."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, val in (meta or {}).items():
            fh.write(f"# {key}={val}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_json(path, data: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)

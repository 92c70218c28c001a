"""JSON Lines manifest I/O with a stable field order for reproducible files."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

# Well-known keys come first so manifests diff cleanly; anything else follows
# in sorted order.
_PREFERRED_ORDER = (
    "id",
    "wav",
    "label",
    "phones",
    "split",
    "segments",
    "kind",
    "target_sir_db",
    "interference_id",
    "rir_label",
    "alpha",
    "crop_offset",
)


def _ordered(entry: dict) -> dict:
    out = {key: entry[key] for key in _PREFERRED_ORDER if key in entry}
    for key in sorted(entry):
        if key not in out:
            out[key] = entry[key]
    return out


def write_manifest(path: str | Path, entries: Iterable[dict]) -> None:
    """Write entries as JSONL, sorted by id, one object per line."""
    rows = sorted(entries, key=lambda e: str(e.get("id", "")))
    with open(path, "w", encoding="utf-8") as fh:
        for entry in rows:
            fh.write(json.dumps(_ordered(entry), ensure_ascii=True))
            fh.write("\n")


def read_manifest(path: str | Path) -> list[dict]:
    """Read a JSONL manifest into a list of dicts (blank lines ignored)."""
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    return entries


def resolve_wav_path(manifest_path: str | Path, entry: dict) -> Path:
    """Resolve an entry's wav path relative to its manifest's directory."""
    wav = Path(entry["wav"])
    if wav.is_absolute():
        return wav
    return Path(manifest_path).parent / wav

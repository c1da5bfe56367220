"""Tab-separated dataset manifests.

One record per line: image path, split, comma-joined labels, optional
ground-truth mask path and proposals path ("-" when absent). A `#` header
line declares the columns. Paths are stored relative to the manifest file.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import FormatError
from .image import atomic_write_bytes

COLUMNS = ("image", "split", "labels", "mask", "proposals")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestRecord:
    image: Path
    split: str
    labels: tuple[str, ...]
    mask: Path | None = None
    proposals: Path | None = None


def write_manifest(path, records: list[ManifestRecord]) -> None:
    path = Path(path)
    lines = ["# " + "\t".join(COLUMNS)]
    for r in records:
        if r.split not in SPLITS:
            raise FormatError(f"unknown split {r.split!r}")
        lines.append(
            "\t".join(
                [
                    str(r.image),
                    r.split,
                    ",".join(r.labels),
                    str(r.mask) if r.mask else "-",
                    str(r.proposals) if r.proposals else "-",
                ]
            )
        )
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_manifest(path, check_paths: bool = True) -> list[ManifestRecord]:
    path = Path(path)
    base = path.parent
    records: list[ManifestRecord] = []
    for ln, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 3:
            raise FormatError(f"{path}:{ln}: expected at least 3 tab-separated columns")
        image = base / parts[0]
        split = parts[1]
        if split not in SPLITS:
            raise FormatError(f"{path}:{ln}: unknown split {split!r}")
        labels = tuple(l for l in parts[2].split(",") if l)
        if not labels:
            raise FormatError(f"{path}:{ln}: record has no labels")
        mask = base / parts[3] if len(parts) > 3 and parts[3] not in ("-", "") else None
        props = base / parts[4] if len(parts) > 4 and parts[4] not in ("-", "") else None
        if check_paths:
            for p in (image, mask, props):
                if p is not None and not p.exists():
                    raise FormatError(f"{path}:{ln}: missing file {p}")
        records.append(
            ManifestRecord(image=image, split=split, labels=labels, mask=mask, proposals=props)
        )
    if not records:
        raise FormatError(f"{path}: manifest has no records")
    return records


def split_records(records: list[ManifestRecord], split: str) -> list[ManifestRecord]:
    return [r for r in records if r.split == split]

"""PGM / CSV readers and writers used by the experiment runner."""

from __future__ import annotations

import csv
from collections.abc import Sequence
from pathlib import Path

import numpy as np


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Binary P5, maxval 255; values in [0, 1] map to round(255 v), clipped."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {image.shape}")
    h, w = image.shape
    pixels = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM not supported")
    data = np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    return data.reshape(h, w).astype(float) / maxval


def montage(images: Sequence[np.ndarray], gap: int = 1, fill: float = 1.0) -> np.ndarray:
    """Side-by-side row of equally sized images separated by ``gap`` pixels."""
    h, w = images[0].shape
    out = np.full((h, len(images) * w + (len(images) - 1) * gap), fill)
    for i, img in enumerate(images):
        out[:, i * (w + gap):i * (w + gap) + w] = img
    return out


def write_rows(path: str | Path, rows: np.ndarray, header: Sequence[str] | None = None) -> None:
    """Float rows at full round-trip precision."""
    rows = np.asarray(rows, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header is not None:
            w.writerow(header)
        for row in rows.reshape(len(rows), -1):
            w.writerow([repr(float(v)) for v in row])


def read_rows(path: str | Path, header: bool = True) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if header:
            next(reader, None)
        rows = [[float(v) for v in row] for row in reader if row]
    return np.asarray(rows, dtype=float)


def write_table(path: str | Path, header: Sequence[str], rows: Sequence[Sequence[object]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])

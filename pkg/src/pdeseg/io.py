"""On-disk formats: binary PGM images, raw float64 field dumps, corpus manifests."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .datagen import SPLITS, Corpus, Sample

RAW_MAGIC = b"PDESEGF1"
MANIFEST_FORMAT = "pdeseg-corpus"


class PGMError(ValueError):
    pass


def write_pgm(path, img: np.ndarray) -> None:
    """Write an 8-bit P5 file; ``img`` must already hold integers in [0, 255]."""
    img = np.asarray(img)
    if img.ndim != 2 or img.min(initial=0) < 0 or img.max(initial=0) > 255:
        raise ValueError("PGM data must be a 2-D array with values in [0, 255]")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM with maxval <= 255 as a ``uint8`` array."""
    data = Path(path).read_bytes()
    pos = 0

    def token() -> tuple[bytes, int]:
        nonlocal pos
        while pos < len(data):
            c = data[pos:pos + 1]
            if c == b"#":
                while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PGMError(f"{path}: unexpected end of header at byte offset {start}")
        return data[start:pos], start

    magic, off = token()
    if magic != b"P5":
        raise PGMError(f"{path}: bad magic {magic!r} at byte offset {off}, expected b'P5'")
    fields = []
    for name in ("width", "height", "maxval"):
        tok, off = token()
        if not tok.isdigit():
            raise PGMError(f"{path}: invalid {name} {tok!r} at byte offset {off}")
        fields.append(int(tok))
    w, h, maxval = fields
    if w < 1 or h < 1 or not 0 < maxval <= 255:
        raise PGMError(f"{path}: unsupported header (w={w}, h={h}, maxval={maxval}) ending at byte offset {pos}")
    pos += 1  # single whitespace byte before the raster
    if len(data) - pos < w * h:
        raise PGMError(
            f"{path}: raster truncated at byte offset {len(data)}; expected {w * h} bytes from offset {pos}"
        )
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).copy()


def quantize(u: np.ndarray) -> np.ndarray:
    """Lossy ``round(255 * u)`` for fields in [0, 1]."""
    return np.rint(255.0 * np.clip(u, 0.0, 1.0)).astype(np.uint8)


def write_mask_pgm(path, mask: np.ndarray) -> None:
    write_pgm(path, np.asarray(mask, dtype=np.uint8) * 255)


def read_mask_pgm(path) -> np.ndarray:
    """Any nonzero pixel is foreground."""
    return (read_pgm(path) > 0).astype(np.uint8)


def write_field_raw(path, f: np.ndarray) -> None:
    """Lossless dump: magic, uint32 height and width, row-major float64, all little-endian."""
    f = np.asarray(f, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<II", *f.shape))
        fh.write(f.astype("<f8").tobytes())


def read_field_raw(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != RAW_MAGIC:
        raise ValueError(f"{path}: not a raw field dump")
    h, w = struct.unpack("<II", data[8:16])
    if len(data) != 16 + 8 * h * w:
        raise ValueError(f"{path}: expected {16 + 8 * h * w} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f8", offset=16).reshape(h, w).astype(np.float64)


def save_corpus(corpus: Corpus, out_dir) -> Path:
    """Write every sample as image/mask PGMs plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in corpus.samples:
        stem = f"{s.index:05d}_{s.split}_{s.morphology}"
        write_pgm(out / "images" / f"{stem}.pgm", quantize(s.image))
        write_mask_pgm(out / "masks" / f"{stem}.pgm", s.mask)
        entries.append({
            "index": s.index,
            "image": f"images/{stem}.pgm",
            "mask": f"masks/{stem}.pgm",
            "morphology": s.morphology,
            "split": s.split,
            "seed": s.seed,
        })
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "seed": corpus.seed,
        "train_order": corpus.train_order,
        "samples": entries,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_corpus(manifest_path) -> Corpus:
    """Load a corpus written by :func:`save_corpus`; images come back as ``pgm / 255``."""
    path = Path(manifest_path)
    doc = json.loads(path.read_text())
    if doc.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"{path}: not a corpus manifest")
    base = path.parent
    samples = []
    for e in doc["samples"]:
        if e["split"] not in SPLITS:
            raise ValueError(f"{path}: unknown split {e['split']!r}")
        image = read_pgm(base / e["image"]).astype(np.float64) / 255.0
        mask = read_mask_pgm(base / e["mask"])
        samples.append(Sample(image, mask, e["morphology"], e["split"], int(e["seed"]), int(e["index"])))
    return Corpus(samples, int(doc.get("seed", 0)), [int(i) for i in doc.get("train_order", [])])

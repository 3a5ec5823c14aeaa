"""Base image datasets: an in-repo synthetic glyph set and the FOMLDS v1 format.

The glyph set is 10 procedurally generated 8x8 grayscale classes with
per-sample jitter (shift, intensity, pixel noise), so streams built on it are
learnable but not trivially memorizable and tests need no downloads.

FOMLDS v1 is the on-disk exchange format: a one-line ASCII header
``FOMLDS v1 <num_items> <height> <width> <channels>`` followed by binary
records of one uint8 label plus row-major uint8 pixels per item. A converter
from the standard IDX byte layout (e.g. raw MNIST files) is included.
"""

from __future__ import annotations

import struct

import numpy as np

GLYPH_SIDE = 8
GLYPH_CLASSES = 10
_TEMPLATE_SEED = 722301


class DatasetError(Exception):
    """Malformed dataset file or invalid generation parameters."""


def glyph_templates(num_classes=GLYPH_CLASSES, side=GLYPH_SIDE):
    """Fixed binary class templates (procedural, frozen by an internal seed).

    Patterns are drawn at half resolution and upsampled 2x, so their identity
    survives the half-scale stream transform, and rejection-sampled to keep
    every class at Hamming distance >= 4 from every rotation of every other
    class (labels stay decodable under all stream transforms).
    """
    rng = np.random.default_rng(_TEMPLATE_SEED)
    half = side // 2
    accepted = []  # half-resolution masks
    while len(accepted) < num_classes:
        cand = (rng.random((half, half)) < 0.5).astype(np.float64)
        ok = True
        for other in accepted:
            for rot in range(4):
                if np.abs(np.rot90(cand, rot) - other).sum() < 4:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            accepted.append(cand)
    templates = np.zeros((num_classes, side, side))
    for c, small in enumerate(accepted):
        templates[c] = np.repeat(np.repeat(small, 2, axis=0), 2, axis=1)
    return templates


def make_glyph_dataset(n_per_class, seed, noise=0.08, num_classes=GLYPH_CLASSES):
    """Jittered samples of the glyph templates.

    Returns (images (N, side, side) float64 in [0,1], labels (N,) int64),
    ordered class-by-class then shuffled deterministically.
    """
    if n_per_class < 1:
        raise DatasetError("n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    templates = glyph_templates(num_classes)
    images, labels = [], []
    for c in range(num_classes):
        for _ in range(n_per_class):
            img = templates[c]
            dx, dy = rng.integers(-1, 2, size=2)
            img = np.roll(np.roll(img, dx, axis=0), dy, axis=1)
            img = img * rng.uniform(0.75, 1.0)
            img = img + rng.normal(0.0, noise, size=img.shape)
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(c)
    images = np.stack(images)
    labels = np.asarray(labels, dtype=np.int64)
    order = rng.permutation(len(labels))
    return images[order], labels[order]


# --- FOMLDS v1 ------------------------------------------------------------------

_MAGIC = "FOMLDS"
_VERSION = "v1"


def save_dataset(path, images, labels):
    """Write (N,C,H,W) float [0,1] images + int labels as FOMLDS v1."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.ndim == 3:  # grayscale (N,H,W)
        images = images[:, None, :, :]
    n, c, h, w = images.shape
    if labels.shape != (n,):
        raise DatasetError(f"labels shape {labels.shape} does not match {n} items")
    if labels.min() < 0 or labels.max() > 255:
        raise DatasetError("labels must fit in one byte")
    px = np.clip(np.round(images * 255.0), 0, 255).astype(np.uint8)
    px = px.transpose(0, 2, 3, 1)  # row-major (H, W, C) per item
    with open(path, "wb") as fh:
        fh.write(f"{_MAGIC} {_VERSION} {n} {h} {w} {c}\n".encode("ascii"))
        body = np.empty((n, 1 + h * w * c), dtype=np.uint8)
        body[:, 0] = labels.astype(np.uint8)
        body[:, 1:] = px.reshape(n, -1)
        fh.write(body.tobytes())


def load_dataset(path):
    """Read a FOMLDS v1 file, validating the header before touching the payload.

    Returns (images (N,C,H,W) float64 in [0,1], labels (N,) int64).
    """
    with open(path, "rb") as fh:
        header = fh.readline(128)
        if not header.endswith(b"\n"):
            raise DatasetError("missing or oversized FOMLDS header line")
        parts = header.decode("ascii", errors="replace").split()
        if len(parts) != 6 or parts[0] != _MAGIC:
            raise DatasetError(f"bad magic in header: {header!r}")
        if parts[1] != _VERSION:
            raise DatasetError(f"unsupported FOMLDS version {parts[1]!r}")
        try:
            n, h, w, c = (int(p) for p in parts[2:])
        except ValueError:
            raise DatasetError(f"non-integer dimensions in header: {header!r}") from None
        if min(n, h, w, c) < 1:
            raise DatasetError(f"non-positive dimensions in header: {header!r}")
        body = fh.read()
    record = 1 + h * w * c
    if len(body) != n * record:
        raise DatasetError(f"payload is {len(body)} bytes, header promises {n * record}")
    raw = np.frombuffer(body, dtype=np.uint8).reshape(n, record)
    labels = raw[:, 0].astype(np.int64)
    images = raw[:, 1:].reshape(n, h, w, c).transpose(0, 3, 1, 2).astype(np.float64) / 255.0
    return images, labels


# --- IDX (MNIST-style) ingestion ---------------------------------------------------


def _read_idx_images(path):
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16:
            raise DatasetError("IDX image header truncated")
        magic, n, rows, cols = struct.unpack(">IIII", header)
        if magic != 0x00000803:
            raise DatasetError(f"not an IDX image file (magic {magic:#010x})")
        data = fh.read(n * rows * cols)
    if len(data) != n * rows * cols:
        raise DatasetError("IDX image payload truncated")
    return np.frombuffer(data, dtype=np.uint8).reshape(n, rows, cols)


def _read_idx_labels(path):
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise DatasetError("IDX label header truncated")
        magic, n = struct.unpack(">II", header)
        if magic != 0x00000801:
            raise DatasetError(f"not an IDX label file (magic {magic:#010x})")
        data = fh.read(n)
    if len(data) != n:
        raise DatasetError("IDX label payload truncated")
    return np.frombuffer(data, dtype=np.uint8).astype(np.int64)


def convert_idx(images_path, labels_path, out_path, limit=0):
    """Convert an IDX image/label pair into one FOMLDS v1 file."""
    images = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DatasetError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    if limit:
        images, labels = images[:limit], labels[:limit]
    save_dataset(out_path, images.astype(np.float64) / 255.0, labels)
    return images.shape[0]

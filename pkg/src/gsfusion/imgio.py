"""Image, mask, and float-raster file IO.

Color images: 8-bit RGB PNG. Instance masks: single-channel 8-bit PNG with
label = pixel value. Depth/alpha rasters: 16-byte header (magic "IGD1",
uint32 width, uint32 height, uint32 reserved) + row-major little-endian
float32 samples.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError

RASTER_MAGIC = b"IGD1"


def save_image(image: np.ndarray, path: str | Path) -> None:
    """Save a float HxWx3 image in [0, 1] as 8-bit RGB PNG."""
    data = np.clip(np.asarray(image), 0.0, 1.0)
    Image.fromarray((data * 255.0 + 0.5).astype(np.uint8), mode="RGB").save(path)


def load_image(path: str | Path) -> np.ndarray:
    """Load an 8-bit RGB PNG as float HxWx3 in [0, 1]."""
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    mask = np.asarray(mask)
    if mask.min() < 0 or mask.max() > 255:
        raise FormatError("mask labels must fit in one byte")
    Image.fromarray(mask.astype(np.uint8), mode="L").save(path)


def load_mask(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.int32)


def save_raster(values: np.ndarray, path: str | Path) -> None:
    values = np.asarray(values, dtype="<f4")
    if values.ndim != 2:
        raise FormatError("raster must be a 2D array")
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(RASTER_MAGIC)
        fh.write(struct.pack("<III", w, h, 0))
        fh.write(values.tobytes())


def load_raster(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise FormatError("raster file shorter than its 16-byte header", offset=0)
    if raw[:4] != RASTER_MAGIC:
        raise FormatError(f"bad raster magic {raw[:4]!r}, expected {RASTER_MAGIC!r}", offset=0)
    w, h, _ = struct.unpack_from("<III", raw, 4)
    if len(raw) != 16 + w * h * 4:
        raise FormatError(
            f"raster payload size mismatch: header says {w}x{h}", offset=len(raw)
        )
    return np.frombuffer(raw, dtype="<f4", count=w * h, offset=16).reshape(h, w).astype(np.float64)

"""Image file input/output.

8-bit RGB PNG (via Pillow) and binary PPM (P6, parsed directly) are both
accepted as input. Label rasters can be written as 16-bit grayscale PNG.
Float images are (H, W, 3) in [0, 1].
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return _read_ppm(path)
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr.astype(np.float32) / 255.0


def write_png(path, img: np.ndarray):
    arr = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def write_label_png16(path, labels: np.ndarray):
    """Entity index raster as 16-bit PNG; 0 is background, i+1 is entity i."""
    arr = np.asarray(labels)
    if arr.min() < -1 or arr.max() >= 2 ** 16 - 1:
        raise DataError("label raster out of 16-bit range")
    Image.fromarray((arr + 1).astype(np.uint16), mode="I;16").save(path, format="PNG")


def write_ppm(path, img: np.ndarray):
    arr = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def _read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(b"P6"):
        raise DataError(f"{path}: not a binary PPM (P6) file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(x) for x in fields)
    except ValueError as e:
        raise DataError(f"{path}: malformed PPM header") from e
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 PPM supported, got {maxval}")
    need = w * h * 3
    raw = blob[pos:pos + need]
    if len(raw) != need:
        raise DataError(f"{path}: truncated PPM payload")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return arr.astype(np.float32) / 255.0

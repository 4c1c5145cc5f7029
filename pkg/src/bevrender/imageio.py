"""Minimal netpbm readers/writers used by the file interfaces.

Label images are 8-bit PGM (P5), depth images 16-bit PGM (P5, millimeters,
big-endian per the format), color visualizations 8-bit PPM (P6).
"""

from __future__ import annotations

import numpy as np

from .errors import DataError


def _read_header(fh, magic: bytes, path):
    if fh.read(2) != magic:
        raise DataError(f"{path}: not a {magic.decode()} file")
    fields = []
    while len(fields) < 3:
        line = fh.readline()
        if not line:
            raise DataError(f"{path}: truncated header")
        line = line.split(b"#", 1)[0]
        fields.extend(line.split())
    width, height, maxval = (int(v) for v in fields[:3])
    return width, height, maxval


def write_pgm(path, image: np.ndarray, maxval: int = 255) -> None:
    image = np.asarray(image)
    if maxval <= 255:
        data = image.astype(np.uint8)
    else:
        data = image.astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n{maxval}\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        width, height, maxval = _read_header(fh, b"P5", path)
        dtype = np.uint8 if maxval <= 255 else np.dtype(">u2")
        count = width * height
        raw = fh.read(count * dtype.itemsize if maxval > 255 else count)
        data = np.frombuffer(raw, dtype=dtype)
        if data.size != count:
            raise DataError(f"{path}: expected {count} pixels, got {data.size}")
    return data.reshape(height, width)


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        width, height, maxval = _read_header(fh, b"P6", path)
        if maxval != 255:
            raise DataError(f"{path}: only 8-bit PPM supported")
        data = np.frombuffer(fh.read(width * height * 3), dtype=np.uint8)
        if data.size != width * height * 3:
            raise DataError(f"{path}: truncated pixel data")
    return data.reshape(height, width, 3)


def labels_to_rgb(labels: np.ndarray, palette: np.ndarray) -> np.ndarray:
    """Map a (H, W) label image through a (K, 3) palette."""
    labels = np.asarray(labels)
    if labels.max(initial=0) >= palette.shape[0]:
        raise DataError("label image contains indices outside the palette")
    return palette[labels].astype(np.uint8)

"""Binary PGM (P5) reading and writing for emitted sample images."""

from __future__ import annotations

import numpy as np

from .errors import DataError


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2-D uint8 array as a binary P5 file with maxval 255."""
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[:, :, 0]
    if image.ndim != 2 or image.dtype != np.uint8:
        raise DataError(f"PGM writer needs a 2-D uint8 image, got {image.dtype} {image.shape}")
    height, width = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4 and pos < len(blob):
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":  # comment runs to end of line
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM file")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise DataError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    pixels = np.frombuffer(blob, dtype=np.uint8, offset=pos)
    if pixels.size != width * height:
        raise DataError(f"{path}: expected {width * height} pixels, got {pixels.size}")
    return pixels.reshape(height, width).copy()

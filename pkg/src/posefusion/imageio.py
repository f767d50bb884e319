"""Image files: gamma-encoded PPM for viewing and a raw float sidecar for exact values.

The float sidecar ("PDIF") is a 16-byte header followed by little-endian float32
RGB triples in row-major order::

    bytes 0-3    b"PDIF"
    bytes 4-7    rows (uint32 LE)
    bytes 8-11   cols (uint32 LE)
    bytes 12-15  reserved, written as 0
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .render import Image

PDIF_MAGIC = b"PDIF"
_HEADER = struct.Struct("<4sIII")
GAMMA = 2.2


class ImageFormatError(ValueError):
    pass


def to_display(pixels: np.ndarray, gamma: float = GAMMA) -> np.ndarray:
    """Clamp linear radiance to [0, 1], gamma-encode, quantize to uint8."""
    x = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    return np.round(255.0 * x ** (1.0 / gamma)).astype(np.uint8)


def write_ppm(image: Union[Image, np.ndarray], path: Union[str, Path], exposure: float = 1.0) -> None:
    px = getattr(image, "pixels", image)
    rgb = to_display(np.asarray(px) * exposure)
    rows, cols = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def read_ppm(path: Union[str, Path]) -> np.ndarray:
    """uint8 array of shape (rows, cols, 3). Only binary P6 with maxval 255 is supported."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    magic, cols, rows, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != b"P6" or maxval != 255:
        raise ImageFormatError(f"unsupported PPM header {magic!r} maxval {maxval}")
    body = data[pos + 1:pos + 1 + rows * cols * 3]
    if len(body) != rows * cols * 3:
        raise ImageFormatError("truncated PPM data")
    return np.frombuffer(body, dtype=np.uint8).reshape(rows, cols, 3)


def write_pdif(image: Union[Image, np.ndarray], path: Union[str, Path]) -> None:
    px = np.asarray(getattr(image, "pixels", image))
    rows, cols = px.shape[:2]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(PDIF_MAGIC, rows, cols, 0))
        fh.write(px.astype("<f4").tobytes())


def read_pdif(path: Union[str, Path]) -> Image:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ImageFormatError("file shorter than the PDIF header")
    magic, rows, cols, _ = _HEADER.unpack_from(data)
    if magic != PDIF_MAGIC:
        raise ImageFormatError(f"bad magic {magic!r}")
    expected = _HEADER.size + rows * cols * 3 * 4
    if len(data) != expected:
        raise ImageFormatError(f"expected {expected} bytes for {rows}x{cols}, got {len(data)}")
    px = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(rows, cols, 3)
    return Image(px.astype(np.float64))


def diff_heatmap(a: Union[Image, np.ndarray], b: Union[Image, np.ndarray], max_diff: float = 1.0) -> np.ndarray:
    """Per-pixel mean absolute channel difference mapped black -> red -> yellow -> white.

    Differences are divided by ``max_diff`` and clamped, so a fixed scale keeps
    heatmaps from different iterations comparable.
    """
    if not max_diff > 0.0:
        raise ValueError("max_diff must be > 0")
    pa = np.asarray(getattr(a, "pixels", a), dtype=np.float64)
    pb = np.asarray(getattr(b, "pixels", b), dtype=np.float64)
    if pa.shape != pb.shape:
        raise ValueError(f"image shapes differ: {pa.shape} vs {pb.shape}")
    s = np.clip(np.abs(pa - pb).mean(axis=2) / max_diff, 0.0, 1.0) * 3.0
    out = np.empty(s.shape + (3,))
    out[..., 0] = np.clip(s, 0.0, 1.0)
    out[..., 1] = np.clip(s - 1.0, 0.0, 1.0)
    out[..., 2] = np.clip(s - 2.0, 0.0, 1.0)
    return out

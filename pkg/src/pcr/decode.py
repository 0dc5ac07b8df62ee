"""Narrow JPEG decoder interface: bytes in, pixel buffers out.

Everything else in the package is byte-level; this is the single place a
codec (Pillow/libjpeg) is touched, so callers can swap in another decoder.
"""

import io

import numpy as np
from PIL import Image


def to_rgb(jpeg_bytes: bytes) -> np.ndarray:
    """Decode to an (H, W, 3) uint8 RGB buffer."""
    with Image.open(io.BytesIO(jpeg_bytes)) as im:
        return np.asarray(im.convert("RGB"))


def to_gray(jpeg_bytes: bytes) -> np.ndarray:
    """Decode to an (H, W) uint8 luminance buffer."""
    with Image.open(io.BytesIO(jpeg_bytes)) as im:
        return np.asarray(im.convert("L"))


def gray_features(jpeg_bytes: bytes, hw: tuple[int, int] = (32, 32)) -> np.ndarray:
    """Decode, downsample to a fixed grayscale grid, flatten to [0, 1] floats."""
    with Image.open(io.BytesIO(jpeg_bytes)) as im:
        small = im.convert("L").resize((hw[1], hw[0]), Image.BILINEAR)
    return np.asarray(small, dtype=np.float64).ravel() / 255.0

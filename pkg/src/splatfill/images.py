"""PNG helpers: 8-bit RGB for color, 16-bit grayscale for depth."""
from __future__ import annotations

from io import BytesIO

import numpy as np
from PIL import Image


def encode_rgb_png(img: np.ndarray) -> bytes:
    arr = np.clip(np.asarray(img) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    buf = BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_rgb_png(data: bytes) -> np.ndarray:
    img = Image.open(BytesIO(data)).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def encode_depth_png(depth: np.ndarray, far: float) -> bytes:
    """Depth normalized by the far plane into 16-bit grayscale."""
    norm = np.clip(np.asarray(depth) / far, 0.0, 1.0)
    arr = (norm * 65535.0 + 0.5).astype(np.uint16)
    buf = BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def decode_depth_png(data: bytes, far: float = 1.0) -> np.ndarray:
    img = Image.open(BytesIO(data))
    return np.asarray(img, dtype=np.float64) / 65535.0 * far

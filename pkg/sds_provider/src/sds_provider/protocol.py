"""Wire protocol shared with the splat-side client: newline-delimited JSON
over stdin/stdout, images as base64 PNG."""
from __future__ import annotations

import base64
from io import BytesIO

import numpy as np
from PIL import Image

PROTOCOL_VERSION = 1

REQUEST_SCHEMA = {
    "type": "object",
    "properties": {
        "type": {"enum": ["init_reference", "refine_reference"]},
        "view_id": {"type": "string"},
        "rgb": {"type": "string"},
        "depth": {"type": "string"},
        "prompt_tag": {"type": "string"},
        "steps": {"type": "integer", "minimum": 1},
    },
    "required": ["type", "view_id", "rgb", "depth", "prompt_tag", "steps"],
    "additionalProperties": False,
}

HELLO_SCHEMA = {
    "type": "object",
    "properties": {"type": {"const": "hello"}, "version": {"type": "integer"}},
    "required": ["type", "version"],
}


class ProtocolError(RuntimeError):
    pass


def decode_rgb(b64: str) -> np.ndarray:
    img = Image.open(BytesIO(base64.b64decode(b64))).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def decode_depth(b64: str) -> np.ndarray:
    img = Image.open(BytesIO(base64.b64decode(b64)))
    return np.asarray(img, dtype=np.float64) / 65535.0


def encode_rgb(img: np.ndarray) -> str:
    arr = np.clip(np.asarray(img) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    buf = BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")

"""Reference image providers: procedural analytic solids, image files, and an
external sidecar speaking newline-delimited JSON over stdin/stdout.

Procedural solids are pure functions of 3D position, so every plane through
the same solid is texture-consistent by construction; they serve as the
desk-verifiable ground truth in place of a diffusion prior.
"""
from __future__ import annotations

import base64
import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import jsonschema

from .camera import Camera, ray_plane_points
from .cutplane import CutPlane
from .images import decode_rgb_png, encode_depth_png, encode_rgb_png

PROTOCOL_VERSION = 1
INIT_STEPS_DEFAULT = 20
REFINE_STEPS_DEFAULT = 4

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

RESPONSE_SCHEMA = {
    "type": "object",
    "properties": {
        "view_id": {"type": "string"},
        "reference_png": {"type": "string"},
        "version": {"type": "integer", "minimum": 1},
    },
    "required": ["view_id", "reference_png", "version"],
    "additionalProperties": False,
}

HELLO_SCHEMA = {
    "type": "object",
    "properties": {"type": {"const": "hello"}, "version": {"type": "integer"}},
    "required": ["type", "version"],
}


class ProviderError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReferenceRequest:
    view_id: str
    rgb: np.ndarray
    depth: np.ndarray
    prompt_tag: str
    steps: int
    kind: str = "init"  # init | refine
    alpha: np.ndarray | None = None  # per-pixel coverage; in-process hint, not on the wire

    def __post_init__(self):
        if self.rgb.shape[:2] != self.depth.shape[:2]:
            raise ProviderError("rgb and depth resolutions differ")
        if self.steps < 1:
            raise ProviderError("steps must be >= 1")


@dataclass
class ReferenceView:
    view_id: str
    camera: Camera
    plane: CutPlane
    image: np.ndarray
    version: int = 1


# ---------------------------------------------------------------------------
# procedural analytic solids

FLESH_RED = np.array([0.86, 0.2, 0.22])
RIND_GREEN = np.array([0.12, 0.32, 0.14])
PITH_WHITE = np.array([0.93, 0.93, 0.85])
SEED_DARK = np.array([0.08, 0.05, 0.05])
ORANGE_FLESH = np.array([0.95, 0.55, 0.12])
ORANGE_PITH = np.array([0.97, 0.9, 0.75])
ORANGE_RIND = np.array([0.9, 0.45, 0.05])
CRUMB = np.array([0.93, 0.85, 0.65])
CRUST = np.array([0.55, 0.33, 0.12])

_WATERMELON_SEED_COUNT = 64
_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))

# radial zone boundaries of the watermelon solid, relative to the unit ball
FLESH_RHO = 0.26
PITH_RHO = 0.31
SEED_RHO_LO = 0.40
SEED_RHO_HI = 0.50
SEED_RADIUS = 0.03


def _watermelon_seed_centers() -> np.ndarray:
    """Deterministic seed sites on a spiral shell, relative coordinates."""
    k = np.arange(_WATERMELON_SEED_COUNT)
    radii = SEED_RHO_LO + (SEED_RHO_HI - SEED_RHO_LO) * ((k * 0.6180339887) % 1.0)
    theta = k * _GOLDEN_ANGLE
    zfrac = -0.8 + 1.6 * (k + 0.5) / _WATERMELON_SEED_COUNT
    rr = radii * np.sqrt(np.maximum(1.0 - zfrac ** 2, 0.0))
    return np.stack([rr * np.cos(theta), rr * np.sin(theta), radii * zfrac], axis=1)


def texture_color(kind: str, rel: np.ndarray) -> np.ndarray:
    """Color of a canonical solid at relative coordinates (unit ball = object).

    `rel` is (...,3) in object-relative units; anything outside the unit ball
    is background (black). Pure function of position.
    """
    rel = np.asarray(rel, dtype=np.float64)
    flat = rel.reshape(-1, 3)
    rho = np.linalg.norm(flat, axis=1)
    out = np.zeros_like(flat)
    inside = rho <= 1.0
    if kind == "watermelon":
        # thick rind: the solid is mostly rind so that renders dominated by
        # fat surface splats still match the analytic colors
        out[inside] = FLESH_RED
        band = inside & (rho > FLESH_RHO) & (rho <= PITH_RHO)
        out[band] = PITH_WHITE
        rind = inside & (rho > PITH_RHO)
        out[rind] = RIND_GREEN
        # radial tone variation inside the flesh keeps histograms informative
        fleshy = inside & (rho <= FLESH_RHO)
        out[fleshy, 0] -= 0.10 * (rho[fleshy] / FLESH_RHO)
        seeds = _watermelon_seed_centers()
        seedable = inside & (rho > PITH_RHO) & (rho < SEED_RHO_HI + SEED_RADIUS)
        pts = flat[seedable]
        if len(pts):
            d2 = ((pts[:, None, :] - seeds[None, :, :]) ** 2).sum(axis=2)
            hit = (d2.min(axis=1) < SEED_RADIUS ** 2)
            sub = out[seedable]
            sub[hit] = SEED_DARK
            out[seedable] = sub
    elif kind == "orange":
        out[inside] = ORANGE_FLESH
        theta = np.arctan2(flat[:, 1], flat[:, 0])
        wedge = np.abs(((theta * 10.0 / (2 * np.pi)) % 1.0) - 0.5) < 0.06
        rxy = np.linalg.norm(flat[:, :2], axis=1)
        out[inside & wedge & (rxy > 0.15)] = ORANGE_PITH
        out[inside & (rxy <= 0.1)] = ORANGE_PITH
        out[inside & (rho > 0.88)] = ORANGE_RIND
    elif kind == "bread":
        out[inside] = CRUMB
        # speckled crumb: deterministic lattice hash
        cell = np.floor(flat * 14.0).astype(np.int64)
        h = (cell[:, 0] * 73856093) ^ (cell[:, 1] * 19349663) ^ (cell[:, 2] * 83492791)
        speck = (h % 17 == 0)
        out[inside & speck] = CRUMB * 0.75
        out[inside & (rho > 0.9)] = CRUST
    else:
        raise ProviderError(f"unknown procedural kind {kind!r}")
    return out.reshape(rel.shape)


def procedural_texture(kind: str, plane: CutPlane, cam: Camera,
                       bbox: tuple[np.ndarray, np.ndarray],
                       background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Analytic cross-section image of a canonical solid inscribed in `bbox`.

    Pixels whose ray misses the plane or lands outside the solid show the
    background color."""
    lo, hi = bbox
    center = (lo + hi) / 2.0
    half = np.maximum((hi - lo) / 2.0, 1e-12)
    pts, valid = ray_plane_points(cam, plane)
    rel = (pts - center) / half
    img = texture_color(kind, rel)
    outside = ~valid | (np.linalg.norm(rel, axis=-1) > 1.0)
    img[outside] = np.asarray(background, dtype=np.float64)
    return img


class ProceduralProvider:
    """Ground-truth provider: paints the analytic solid over the rendered
    foreground (depth > 0) and leaves the request's background untouched."""

    def __init__(self, kind: str, bbox, background=(0.0, 0.0, 0.0)):
        self.kind = kind
        self.bbox = (np.asarray(bbox[0], dtype=np.float64), np.asarray(bbox[1], dtype=np.float64))
        self.background = tuple(background)
        self._views: dict[str, tuple[Camera, CutPlane]] = {}

    def register_view(self, view_id: str, camera: Camera, plane: CutPlane):
        self._views[view_id] = (camera, plane)

    def provide(self, request: ReferenceRequest) -> np.ndarray:
        if request.view_id not in self._views:
            raise ProviderError(f"view {request.view_id!r} was never registered")
        cam, plane = self._views[request.view_id]
        if (cam.height, cam.width) != request.rgb.shape[:2]:
            raise ProviderError("request resolution does not match the registered view")
        tex = procedural_texture(self.kind, plane, cam, self.bbox, self.background)
        fg = request.depth > 0
        out = request.rgb.copy()
        if request.alpha is not None:
            # respect the rendered coverage: a reachable target for color-only
            # optimization is alpha * texture over the background
            a = np.clip(request.alpha, 0.0, 1.0)[..., None]
            bg = np.asarray(self.background, dtype=np.float64)
            blended = a * tex + (1.0 - a) * bg
            out[fg] = blended[fg]
        else:
            out[fg] = tex[fg]
        return out


class FileProvider:
    """Serves one reference image per prompt tag from a directory of
    <tag>.png files, resolution-checked against the request."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def provide(self, request: ReferenceRequest) -> np.ndarray:
        path = self.directory / f"{request.prompt_tag}.png"
        if not path.exists():
            raise ProviderError(f"no reference image for prompt tag {request.prompt_tag!r}")
        img = decode_rgb_png(path.read_bytes())
        if img.shape[:2] != request.rgb.shape[:2]:
            raise ProviderError(
                f"reference {path.name} is {img.shape[:2]}, request wants {request.rgb.shape[:2]}")
        return img


class ExternalProvider:
    """Client side of the JSON-over-stdio sidecar protocol."""

    def __init__(self, command: list[str] | str, depth_far: float = 1.0):
        if isinstance(command, str):
            command = command.split()
        try:
            self.proc = subprocess.Popen(
                command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1)
        except OSError as exc:
            raise ProviderError(f"cannot launch provider {command!r}: {exc}") from exc
        self.depth_far = depth_far
        self._send({"type": "hello", "version": PROTOCOL_VERSION})
        hello = self._recv()
        try:
            jsonschema.validate(hello, HELLO_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ProviderError(f"bad handshake from provider: {exc.message}") from exc

    def _send(self, obj):
        try:
            self.proc.stdin.write(json.dumps(obj) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProviderError(f"provider transport failure: {exc}") from exc

    def _recv(self):
        line = self.proc.stdout.readline()
        if not line:
            raise ProviderError("provider closed its output stream")
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProviderError(f"provider sent invalid JSON: {exc}") from exc

    def provide(self, request: ReferenceRequest) -> np.ndarray:
        msg = {
            "type": "init_reference" if request.kind == "init" else "refine_reference",
            "view_id": request.view_id,
            "rgb": base64.b64encode(encode_rgb_png(request.rgb)).decode("ascii"),
            "depth": base64.b64encode(encode_depth_png(request.depth, self.depth_far)).decode("ascii"),
            "prompt_tag": request.prompt_tag,
            "steps": int(request.steps),
        }
        jsonschema.validate(msg, REQUEST_SCHEMA)
        self._send(msg)
        resp = self._recv()
        try:
            jsonschema.validate(resp, RESPONSE_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ProviderError(f"provider response violates schema: {exc.message}") from exc
        if resp["view_id"] != request.view_id:
            raise ProviderError(f"provider answered for view {resp['view_id']!r}, "
                                f"expected {request.view_id!r}")
        img = decode_rgb_png(base64.b64decode(resp["reference_png"]))
        if img.shape[:2] != request.rgb.shape[:2]:
            raise ProviderError(f"provider returned {img.shape[:2]}, "
                                f"expected {request.rgb.shape[:2]}")
        return img

    def close(self):
        if self.proc.stdin:
            self.proc.stdin.close()
        self.proc.wait(timeout=10)


def make_provider(spec: str, bbox=None, depth_far: float = 1.0,
                  background=(0.0, 0.0, 0.0)):
    """Build a provider from a CLI spec: procedural:<kind> | files:<dir> | external:<cmd>."""
    scheme, _, rest = spec.partition(":")
    if scheme == "procedural":
        if bbox is None:
            raise ProviderError("procedural provider needs a model bbox")
        return ProceduralProvider(rest, bbox, background)
    if scheme == "files":
        return FileProvider(rest)
    if scheme == "external":
        return ExternalProvider(rest, depth_far=depth_far)
    raise ProviderError(f"unknown provider spec {spec!r}")

"""Standard 3DGS splat PLY import/export plus the trained-flag sidecar.

On disk scales are log-space, opacity is a pre-sigmoid logit and color is the
degree-0 SH coefficient. Import decodes all three; higher SH bands (f_rest_*)
are dropped with a warning since interior particles carry plain RGB only.
"""
from __future__ import annotations

import base64
import json
import struct
import warnings
from io import BytesIO

import numpy as np

from .model import SplatModel, make_model

SH_C0 = 0.28209479177387814
_OPACITY_EPS = 1e-6

REQUIRED_FIELDS = (
    "x", "y", "z",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "opacity",
    "f_dc_0", "f_dc_1", "f_dc_2",
)

_PLY_TYPES = {
    "float": ("<f4", 4), "float32": ("<f4", 4),
    "double": ("<f8", 8), "float64": ("<f8", 8),
    "uchar": ("<u1", 1), "uint8": ("<u1", 1),
    "char": ("<i1", 1), "int8": ("<i1", 1),
    "short": ("<i2", 2), "ushort": ("<u2", 2),
    "int": ("<i4", 4), "int32": ("<i4", 4),
    "uint": ("<u4", 4), "uint32": ("<u4", 4),
}


class PlyParseError(ValueError):
    pass


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p):
    p = np.clip(p, _OPACITY_EPS, 1.0 - _OPACITY_EPS)
    return np.log(p / (1.0 - p))


def _parse_header(stream) -> tuple[int, list[tuple[str, str]]]:
    line = stream.readline().strip()
    if line != b"ply":
        raise PlyParseError("not a PLY file (missing 'ply' magic)")
    fmt = stream.readline().strip()
    if fmt != b"format binary_little_endian 1.0":
        raise PlyParseError(f"unsupported PLY format: {fmt.decode(errors='replace')}")
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    while True:
        raw = stream.readline()
        if not raw:
            raise PlyParseError("unexpected end of header")
        line = raw.strip().decode("ascii", errors="replace")
        if line == "end_header":
            break
        toks = line.split()
        if not toks or toks[0] == "comment":
            continue
        if toks[0] == "element":
            in_vertex = toks[1] == "vertex"
            if in_vertex:
                count = int(toks[2])
        elif toks[0] == "property" and in_vertex:
            if toks[1] == "list":
                raise PlyParseError("list properties are not supported for vertex elements")
            if toks[1] not in _PLY_TYPES:
                raise PlyParseError(f"unsupported property type {toks[1]!r}")
            props.append((toks[2], toks[1]))
    if count is None:
        raise PlyParseError("header has no vertex element")
    return count, props


def import_ply(data: bytes | BytesIO) -> SplatModel:
    """Decode a binary little-endian splat PLY into a SplatModel.

    All imported particles are marked trained=True (they are the surface the
    model was reconstructed from).
    """
    stream = BytesIO(data) if isinstance(data, (bytes, bytearray)) else data
    count, props = _parse_header(stream)
    names = [p[0] for p in props]
    for f in REQUIRED_FIELDS:
        if f not in names:
            raise PlyParseError(f"missing required field {f!r}")
    if any(n.startswith("f_rest_") for n in names):
        warnings.warn("dropping higher-order SH coefficients (f_rest_*)", stacklevel=2)
    dtype = np.dtype([(n, _PLY_TYPES[t][0]) for n, t in props])
    raw = stream.read(dtype.itemsize * count)
    if len(raw) != dtype.itemsize * count:
        raise PlyParseError(f"truncated body: expected {dtype.itemsize * count} bytes, got {len(raw)}")
    rec = np.frombuffer(raw, dtype=dtype, count=count)

    def col(*fields):
        return np.stack([rec[f].astype(np.float64) for f in fields], axis=1) if count else np.zeros((0, len(fields)))

    for f in REQUIRED_FIELDS:
        vals = rec[f].astype(np.float64)
        bad = np.flatnonzero(~np.isfinite(vals))
        if bad.size:
            raise PlyParseError(f"non-finite value in field {f!r} at element {int(bad[0])}")

    positions = col("x", "y", "z")
    scales = np.exp(col("scale_0", "scale_1", "scale_2"))
    rotations = col("rot_0", "rot_1", "rot_2", "rot_3")
    if count:
        norms = np.linalg.norm(rotations, axis=1)
        zero = np.flatnonzero(norms < 1e-12)
        if zero.size:
            raise PlyParseError(f"zero-norm rotation at element {int(zero[0])}")
        rotations = rotations / norms[:, None]
        opacities = _sigmoid(rec["opacity"].astype(np.float64))
        colors = np.clip(col("f_dc_0", "f_dc_1", "f_dc_2") * SH_C0 + 0.5, 0.0, 1.0)
    else:
        opacities = np.zeros(0)
        colors = np.zeros((0, 3))
    return make_model(positions, scales, rotations, colors, opacities,
                      trained=np.ones(count, dtype=bool))


def export_ply(model: SplatModel) -> bytes:
    """Encode a model as a re-importable binary splat PLY.

    Opacities of exactly 0 or 1 are clamped into (eps, 1-eps) before the
    logit; this is the one documented lossy case.
    """
    n = len(model)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        + "".join(f"property float {f}\n" for f in REQUIRED_FIELDS)
        + "end_header\n"
    ).encode("ascii")
    rec = np.empty(n, dtype=np.dtype([(f, "<f4") for f in REQUIRED_FIELDS]))
    if n:
        rec["x"], rec["y"], rec["z"] = model.positions.T
        logs = np.log(model.scales)
        rec["scale_0"], rec["scale_1"], rec["scale_2"] = logs.T
        rec["rot_0"], rec["rot_1"], rec["rot_2"], rec["rot_3"] = model.rotations.T
        rec["opacity"] = _logit(model.opacities)
        fdc = (model.colors - 0.5) / SH_C0
        rec["f_dc_0"], rec["f_dc_1"], rec["f_dc_2"] = fdc.T
    return header + rec.tobytes()


def export_meta(model: SplatModel) -> str:
    """Sidecar JSON recording per-particle trained flags and fill provenance."""
    packed = np.packbits(model.trained.astype(np.uint8))
    meta = {
        "version": 1,
        "count": len(model),
        "filled_particle_range": model.metadata.get("filled_particle_range"),
        "trained_flags": base64.b64encode(packed.tobytes()).decode("ascii"),
    }
    return json.dumps(meta)


def import_meta(model: SplatModel, text: str) -> SplatModel:
    """Apply a sidecar file onto an imported model."""
    meta = json.loads(text)
    if meta.get("version") != 1:
        raise PlyParseError(f"unsupported meta version {meta.get('version')!r}")
    if meta["count"] != len(model):
        raise PlyParseError(f"meta count {meta['count']} != model size {len(model)}")
    bits = np.unpackbits(np.frombuffer(base64.b64decode(meta["trained_flags"]), dtype=np.uint8))
    model = model.with_trained(bits[: len(model)].astype(bool))
    if meta.get("filled_particle_range") is not None:
        model.metadata["filled_particle_range"] = tuple(meta["filled_particle_range"])
    return model

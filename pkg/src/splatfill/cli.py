"""Command-line pipeline: import, fill, train, smooth, slice, render, eval.

Config comes from a TOML or JSON file; flags override config keys of the same
name. Seeds are mandatory for fill/train/eval so every run is reproducible
from config alone. Failures print one machine-readable JSON object on stderr
and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

try:
    import tomllib
except ImportError:
    import tomli as tomllib

import numpy as np

from . import _kernels, evalx, ply_io
from .camera import orbit_camera, slice_camera
from .cutplane import (CutPlane, SliceSchedule, default_slab_half_width,
                       horizontal_stack, radial_fan, schedule_from_json,
                       schedule_to_json)
from .fill import FillConfig, fill_interior
from .images import encode_depth_png, encode_rgb_png
from .model import apply_opaque_atom
from .providers import make_provider
from .render import MASK_ALL, make_cut_mask, render
from .smooth import SmoothConfig, smooth, untrained_report
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)


class CliError(RuntimeError):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _thread_cap() -> int:
    raw = os.environ.get("SPLAT_INTERIOR_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        cap = int(raw)
    except ValueError:
        raise CliError("bad_env", f"SPLAT_INTERIOR_THREADS must be an integer, got {raw!r}")
    if cap < 1:
        raise CliError("bad_env", "SPLAT_INTERIOR_THREADS must be >= 1")
    return cap


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError("missing_input", f"config file not found: {path}")
    text = p.read_bytes()
    if p.suffix == ".json":
        return json.loads(text)
    try:
        return tomllib.loads(text.decode())
    except tomllib.TOMLDecodeError as exc:
        raise CliError("bad_config", f"cannot parse {path}: {exc}")


def _merged(args: argparse.Namespace, cfg: dict, key: str, default=None):
    """Flag beats config beats default."""
    v = getattr(args, key.replace("-", "_"), None)
    if v is not None:
        return v
    return cfg.get(key, default)


def _require_seed(args, cfg) -> int:
    seed = _merged(args, cfg, "seed")
    if seed is None:
        raise CliError("missing_seed", "a seed is required (config key 'seed' or --seed); "
                                       "wall-clock seeding is not supported")
    return int(seed)


def _load_model(path: str, meta_path: str | None = None):
    p = Path(path)
    if not p.exists():
        raise CliError("missing_input", f"input model not found: {path}")
    model = ply_io.import_ply(p.read_bytes())
    meta = Path(meta_path) if meta_path else p.with_suffix(".meta.json")
    if meta.exists():
        model = ply_io.import_meta(model, meta.read_text())
    return model


def _save_model(model, path: str):
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(ply_io.export_ply(model))
    p.with_suffix(".meta.json").write_text(ply_io.export_meta(model))


def _parse_plane(spec: str, extent: float, mode: str,
                 slab_half_width: float | None) -> CutPlane:
    try:
        a, b, c, d = (float(v) for v in spec.split(","))
    except ValueError:
        raise CliError("invalid_plane", f"--plane wants 'a,b,c,d', got {spec!r}")
    if a == b == c == 0.0:
        raise CliError("invalid_plane", "plane normal must be non-zero")
    w = slab_half_width if slab_half_width else default_slab_half_width(extent)
    return CutPlane(normal=np.array([a, b, c]), offset=d, slab_half_width=w, mode=mode)


def _build_schedule(model, spec: str, slab_half_width: float | None) -> SliceSchedule:
    """'radial:8+horizontal:8' presets or a path to a schedule JSON file."""
    if Path(spec).exists():
        return schedule_from_json(Path(spec).read_text())
    planes = []
    names = []
    for part in spec.split("+"):
        kind, _, num = part.partition(":")
        try:
            count = int(num)
        except ValueError:
            raise CliError("bad_config", f"schedule part {part!r} wants <kind>:<count>")
        if kind == "radial":
            sched = radial_fan(model, count, slab_half_width=slab_half_width)
        elif kind == "horizontal":
            sched = horizontal_stack(model, count, slab_half_width=slab_half_width)
        else:
            raise CliError("bad_config", f"unknown schedule kind {kind!r}")
        planes.extend(sched.planes)
        names.append(sched.name)
    return SliceSchedule(planes=tuple(planes), name="+".join(names))


def cmd_fill(args, cfg):
    model = _load_model(args.input, args.meta)
    fc = FillConfig(
        grid_resolution=int(_merged(args, cfg, "grid-resolution", 64)),
        sigma_th=float(_merged(args, cfg, "sigma-th", 0.1)),
        particles_per_voxel=int(_merged(args, cfg, "particles-per-voxel", 8)),
        init_scale_cap_fraction=float(_merged(args, cfg, "init-scale-cap-fraction", 1e-3)),
        rng_seed=_require_seed(args, cfg),
    )
    filled = fill_interior(model, fc)
    _save_model(filled, args.output)
    print(json.dumps({"particles_before": len(model), "particles_after": len(filled),
                      "filled_particle_range": filled.metadata["filled_particle_range"]}))
    return 0


def _train_config(args, cfg) -> TrainConfig:
    return TrainConfig(
        alpha=float(_merged(args, cfg, "alpha", 0.8)),
        learning_rate=float(_merged(args, cfg, "learning-rate", 0.05)),
        iterations_max=int(_merged(args, cfg, "iterations", 200)),
        surface_views_per_iter=int(_merged(args, cfg, "surface-views", 20)),
        refine_steps_per_iter=int(_merged(args, cfg, "refine-steps", 4)),
        smooth_interval=int(_merged(args, cfg, "smooth-interval", 35)),
        convergence_epsilon=float(_merged(args, cfg, "epsilon", 0.005)),
        rng_seed=_require_seed(args, cfg),
        render_width=int(_merged(args, cfg, "width", 128)),
        render_height=int(_merged(args, cfg, "height", 128)),
    )


def cmd_train(args, cfg):
    model = _load_model(args.input, args.meta)
    tc = _train_config(args, cfg)
    sched = _build_schedule(model, _merged(args, cfg, "schedule", "radial:8+horizontal:8"),
                            _merged(args, cfg, "slab-half-width"))
    provider = make_provider(_merged(args, cfg, "provider", "procedural:watermelon"),
                             bbox=model.bbox)
    trained = train(model, sched, provider, tc,
                    checkpoint_dir=args.checkpoint_dir, log_path=args.log)
    if hasattr(provider, "close"):
        provider.close()
    _save_model(trained, args.output)
    print(json.dumps({"particles": len(trained),
                      "trained": int(trained.trained.sum())}))
    return 0


def cmd_smooth(args, cfg):
    model = _load_model(args.input, args.meta)
    sc = SmoothConfig(
        grid_resolution=int(_merged(args, cfg, "grid-resolution", 128)),
        neighbor_fallback=bool(_merged(args, cfg, "neighbor-fallback", False)),
    )
    out, report = smooth(model, sc)
    _save_model(out, args.output)
    print(json.dumps({"trained": report.trained, "untrained": report.untrained,
                      "untrained_isolated": report.untrained_isolated}))
    return 0


def _check_resolution(width: int, height: int):
    if width < 16 or height < 16:
        raise CliError("bad_config", "render resolutions must be >= 16")


def _write_view(out, path: str, far: float):
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(encode_rgb_png(out.rgb))
    p.with_suffix(".depth.png").write_bytes(encode_depth_png(out.depth, far))


def cmd_slice(args, cfg):
    model = _load_model(args.input, args.meta)
    width = int(_merged(args, cfg, "width", 512))
    height = int(_merged(args, cfg, "height", 512))
    _check_resolution(width, height)
    plane = _parse_plane(args.plane, model.extent, args.mode,
                         _merged(args, cfg, "slab-half-width"))
    cam = slice_camera(plane, model.bbox, width, height)
    out = render(model, cam, make_cut_mask(plane))
    _write_view(out, args.output, cam.far)
    return 0


def cmd_render(args, cfg):
    model = _load_model(args.input, args.meta)
    width = int(_merged(args, cfg, "width", 512))
    height = int(_merged(args, cfg, "height", 512))
    _check_resolution(width, height)
    lo, hi = model.bbox
    center = (lo + hi) / 2.0
    radius = float(np.linalg.norm(hi - lo)) / 2.0
    cam = orbit_camera(center, radius, math.radians(args.azimuth),
                       math.radians(args.elevation), width, height)
    out = render(model, cam, MASK_ALL)
    _write_view(out, args.output, cam.far)
    return 0


def cmd_eval(args, cfg):
    model = _load_model(args.input, args.meta)
    shw = _merged(args, cfg, "slab-half-width")
    report = evalx.slice_consistency(
        model,
        count=int(_merged(args, cfg, "count", 120)),
        seed=_require_seed(args, cfg),
        # atom-scale particles need slabs much wider than the render default
        slab_half_width=float(shw) if shw is not None else 0.05 * model.extent,
        oracle_kind=_merged(args, cfg, "oracle"),
    )
    doc = {
        "num_views": report.num_views,
        "mean_pairwise_similarity": report.mean_pairwise_similarity,
        "per_view_oracle_error": report.per_view_oracle_error,
        "runtime_ms": report.runtime_ms,
    }
    doc.update(untrained_report(model))
    if args.report:
        Path(args.report).write_text(json.dumps(doc, indent=2))
    print(json.dumps(doc))
    return 0


def cmd_pipeline(args, cfg):
    """fill -> train -> smooth -> eval, equivalent to the subcommands in sequence."""
    model = _load_model(args.input, args.meta)
    seed = _require_seed(args, cfg)
    fc = FillConfig(
        grid_resolution=int(_merged(args, cfg, "grid-resolution", 64)),
        sigma_th=float(_merged(args, cfg, "sigma-th", 0.1)),
        particles_per_voxel=int(_merged(args, cfg, "particles-per-voxel", 8)),
        rng_seed=seed,
    )
    filled = fill_interior(model, fc)
    # fill must see the original opacity field; atomization happens after
    filled = apply_opaque_atom(filled)
    tc = _train_config(args, cfg)
    sched = _build_schedule(filled, _merged(args, cfg, "schedule", "radial:8+horizontal:8"),
                            _merged(args, cfg, "slab-half-width"))
    provider = make_provider(_merged(args, cfg, "provider", "procedural:watermelon"),
                             bbox=filled.bbox)
    trained = train(filled, sched, provider, tc,
                    checkpoint_dir=args.checkpoint_dir, log_path=args.log)
    if hasattr(provider, "close"):
        provider.close()
    sc = SmoothConfig(
        grid_resolution=int(_merged(args, cfg, "smooth-grid-resolution", 128)),
        neighbor_fallback=bool(_merged(args, cfg, "neighbor-fallback", True)),
    )
    smoothed, _ = smooth(trained, sc)
    smoothed = apply_opaque_atom(smoothed)
    _save_model(smoothed, args.output)
    if args.schedule_out:
        Path(args.schedule_out).write_text(schedule_to_json(sched))
    eshw = _merged(args, cfg, "eval-slab-half-width")
    report = evalx.slice_consistency(
        smoothed, count=int(_merged(args, cfg, "count", 120)), seed=seed,
        slab_half_width=float(eshw) if eshw is not None else 0.05 * smoothed.extent,
        oracle_kind=_merged(args, cfg, "oracle"))
    doc = {
        "num_views": report.num_views,
        "mean_pairwise_similarity": report.mean_pairwise_similarity,
        "per_view_oracle_error": report.per_view_oracle_error,
        "runtime_ms": report.runtime_ms,
    }
    doc.update(untrained_report(smoothed))
    if args.report:
        Path(args.report).write_text(json.dumps(doc, indent=2))
    print(json.dumps(doc))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splatfill",
                                 description="interior texture synthesis for splat models")
    ap.add_argument("--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, output=True):
        p.add_argument("--config", help="TOML or JSON config file; flags override it")
        p.add_argument("--input", required=True, help="input PLY model")
        p.add_argument("--meta", help="trained-flag sidecar (default: <input>.meta.json)")
        if output:
            p.add_argument("--output", required=True)

    p = sub.add_parser("fill", help="detect and fill the hollow interior")
    common(p)
    p.add_argument("--grid-resolution", type=int, help="opacity grid cells per axis (default 64)")
    p.add_argument("--sigma-th", type=float, help="opacity threshold (default 0.1)")
    p.add_argument("--particles-per-voxel", type=int, help="default 8")
    p.add_argument("--init-scale-cap-fraction", type=float,
                   help="fill-atom scale cap as a fraction of extent (default 1e-3)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_fill)

    p = sub.add_parser("train", help="optimize interior colors against reference slices")
    common(p)
    p.add_argument("--provider", help="procedural:<kind> | files:<dir> | external:<cmd>")
    p.add_argument("--schedule", help="'radial:8+horizontal:8' or a schedule JSON file")
    p.add_argument("--iterations", type=int, help="default 200")
    p.add_argument("--alpha", type=float, help="MSE weight in the loss (default 0.8)")
    p.add_argument("--learning-rate", type=float, help="default 0.05")
    p.add_argument("--epsilon", type=float, help="convergence threshold (default 0.005)")
    p.add_argument("--smooth-interval", type=int, help="default 35")
    p.add_argument("--surface-views", type=int, help="surface views per iteration (default 20)")
    p.add_argument("--refine-steps", type=int, help="provider refine steps (default 4)")
    p.add_argument("--width", type=int, help="training render width (default 128)")
    p.add_argument("--height", type=int, help="training render height (default 128)")
    p.add_argument("--slab-half-width", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-dir")
    p.add_argument("--log", help="line-delimited JSON training log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("smooth", help="recolor untrained particles from trained neighbors")
    common(p)
    p.add_argument("--grid-resolution", type=int, help="default 128")
    p.add_argument("--neighbor-fallback", action="store_const", const=True)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("slice", help="render an arbitrary cut, no optimization")
    common(p)
    p.add_argument("--plane", required=True, help="a,b,c,d for ax+by+cz+d=0")
    p.add_argument("--mode", choices=["slab", "half"], default="slab")
    p.add_argument("--slab-half-width", type=float)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("render", help="render a surface view")
    common(p)
    p.add_argument("--azimuth", type=float, default=30.0, help="degrees")
    p.add_argument("--elevation", type=float, default=20.0, help="degrees")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="slice-consistency report")
    common(p, output=False)
    p.add_argument("--count", type=int, help="random slabs to render (default 120)")
    p.add_argument("--seed", type=int)
    p.add_argument("--slab-half-width", type=float,
                   help="evaluation slab half width (default 0.05 x extent)")
    p.add_argument("--oracle", help="analytic solid for per-view error (e.g. watermelon)")
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="fill, train, smooth and eval in one run")
    common(p)
    p.add_argument("--provider")
    p.add_argument("--schedule")
    p.add_argument("--schedule-out", help="write the generated schedule JSON here")
    p.add_argument("--grid-resolution", type=int)
    p.add_argument("--sigma-th", type=float)
    p.add_argument("--particles-per-voxel", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--smooth-interval", type=int)
    p.add_argument("--surface-views", type=int)
    p.add_argument("--refine-steps", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--slab-half-width", type=float)
    p.add_argument("--smooth-grid-resolution", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--eval-slab-half-width", type=float)
    p.add_argument("--oracle")
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-dir")
    p.add_argument("--log")
    p.add_argument("--report")
    p.set_defaults(func=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        _thread_cap()  # validated up front; kernels are currently single-threaded
        cfg = load_config(getattr(args, "config", None))
        return args.func(args, cfg)
    except CliError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every failure must stay machine-readable
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

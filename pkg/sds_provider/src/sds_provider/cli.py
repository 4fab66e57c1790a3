"""Entry point: `sds-provider serve` (the sidecar) and `sds-provider finetune`."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .prompts import PromptMap, PromptMapError
from .sds import SdsSettings


def _prompt_map(args) -> PromptMap:
    if args.prompts:
        return PromptMap.from_file(args.prompts)
    return PromptMap.default(args.subject)


def _settings(args) -> SdsSettings:
    return SdsSettings(weights=args.weights, device=args.device,
                       guidance_scale=args.guidance_scale,
                       step_size=args.step_size, seed=args.seed)


def cmd_serve(args) -> int:
    from .serve import DiffusionBackend, EchoBackend, serve
    if args.dry_run:
        return serve(EchoBackend())
    from .sds import BackendError, SdsRefiner
    try:
        refiner = SdsRefiner(_settings(args), finetune_dir=args.finetune_dir)
    except BackendError as exc:
        print(json.dumps({"error": "backend_unavailable", "message": str(exc)}),
              file=sys.stderr)
        return 1
    return serve(DiffusionBackend(refiner, _prompt_map(args)))


def cmd_finetune(args) -> int:
    from .finetune import FinetuneError, finetune
    from .sds import BackendError
    try:
        out = finetune(args.images, _prompt_map(args), args.finetune_dir,
                       _settings(args), train_steps=args.train_steps)
    except (FinetuneError, PromptMapError, BackendError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    print(json.dumps({"weights": str(out)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sds-provider")
    ap.add_argument("--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--weights", default="stabilityai/stable-diffusion-2-depth",
                       help="model id or local path")
        p.add_argument("--device", default="cuda")
        p.add_argument("--finetune-dir", help="adapted weights; loaded when present")
        p.add_argument("--prompts", help="JSON file mapping prompt tags to text prompts")
        p.add_argument("--subject", default="a watermelon",
                       help="subject for the default prompt templates")
        p.add_argument("--guidance-scale", type=float, default=7.5,
                       help="community default, not a prescribed value")
        p.add_argument("--step-size", type=float, default=0.05)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="speak the stdio protocol until stdin closes")
    common(p)
    p.add_argument("--dry-run", action="store_true",
                   help="identity echo mode; needs no ML dependencies")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("finetune", help="adapt the model on 1-6 cross-section images")
    common(p)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--train-steps", type=int, default=400)
    p.set_defaults(func=cmd_finetune)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        stream=sys.stderr)
    if args.command == "finetune" and not args.finetune_dir:
        print(json.dumps({"error": "bad_flags", "message": "--finetune-dir is required"}),
              file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())

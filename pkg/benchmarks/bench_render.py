"""Compare the compiled compositing kernel against the pure-numpy fallback.

Runs the same seeded scenes in a subprocess per backend (backend selection
happens at import time) and prints a table of render times plus the max
pixel deviation between the two.

Usage: python benchmarks/bench_render.py [--particles 20000] [--size 256] [--repeats 3]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import tempfile
from pathlib import Path

WORKER = r"""
import json, math, os, sys, time
import numpy as np
from splatfill._kernels import BACKEND_NAME
from splatfill.camera import Camera
from splatfill.model import make_model
from splatfill.render import MASK_ALL, render

n, size, repeats, out_path = int(sys.argv[1]), int(sys.argv[2]), int(sys.argv[3]), sys.argv[4]
rng = np.random.default_rng(42)
q = rng.normal(size=(n, 4)); q /= np.linalg.norm(q, axis=1, keepdims=True)
model = make_model(rng.uniform(-1, 1, (n, 3)), rng.uniform(0.005, 0.04, (n, 3)),
                   rotations=q, colors=rng.random((n, 3)),
                   opacities=rng.uniform(0.3, 1.0, n))
cam = Camera(position=np.array([0.0, 0, -4.0]), look_at=np.zeros(3),
             up=np.array([0.0, 1, 0]), vertical_fov=math.radians(50.0),
             width=size, height=size, near=0.1, far=20.0)
render(model, cam, MASK_ALL, (0, 0, 0))  # warm up
times = []
for _ in range(repeats):
    t0 = time.perf_counter()
    out = render(model, cam, MASK_ALL, (0, 0, 0))
    times.append(time.perf_counter() - t0)
np.save(out_path, out.rgb)
print(json.dumps({"backend": BACKEND_NAME, "best_s": min(times), "mean_s": sum(times) / len(times)}))
"""


def run_backend(force_numpy: bool, n: int, size: int, repeats: int, out_path: str) -> dict:
    env = dict(os.environ)
    env.pop("SPLATFILL_FORCE_NUMPY", None)
    if force_numpy:
        env["SPLATFILL_FORCE_NUMPY"] = "1"
    proc = subprocess.run([sys.executable, "-c", WORKER, str(n), str(size),
                           str(repeats), out_path],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--particles", type=int, default=20000)
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    import numpy as np
    with tempfile.TemporaryDirectory() as td:
        fast_npy = str(Path(td) / "fast.npy")
        slow_npy = str(Path(td) / "slow.npy")
        fast = run_backend(False, args.particles, args.size, args.repeats, fast_npy)
        slow = run_backend(True, args.particles, args.size, args.repeats, slow_npy)
        dev = float(np.abs(np.load(fast_npy) - np.load(slow_npy)).max())

    print(f"\n{args.particles} particles, {args.size}x{args.size}, best of {args.repeats}")
    print(f"{'backend':<12}{'best':>10}{'mean':>10}")
    for r in (fast, slow):
        print(f"{r['backend']:<12}{r['best_s']*1e3:>8.1f}ms{r['mean_s']*1e3:>8.1f}ms")
    if fast["backend"] == slow["backend"]:
        print("note: compiled extension unavailable; both runs used the numpy fallback")
    else:
        print(f"speedup: {slow['best_s'] / fast['best_s']:.1f}x")
    print(f"max pixel deviation between backends: {dev:.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

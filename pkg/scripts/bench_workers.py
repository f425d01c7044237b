"""Wall-clock of the warp command against worker count.

Usage: python scripts/bench_workers.py [--images N] [--size W H] [--max-workers K]

Builds a synthetic corpus in a temporary directory, runs the warp command at
1..K workers and reports seconds, images/s and whether the timings decrease
monotonically. Also confirms every run produced the same manifest.
"""

import argparse
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
from PIL import Image

from fisheyeaug.pipeline import PipelineConfig, cmd_warp


def build(root: Path, n: int, size, seed: int):
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True)
    for i in range(n):
        img = rng.integers(0, 256, (size[1], size[0], 3), dtype=np.uint8)
        Image.fromarray(img).save(root / f"im_{i:04d}.png", compress_level=1)
        (root / f"im_{i:04d}.txt").write_text("0 0.5 0.5 0.2 0.2\n1 0.3 0.7 0.1 0.05\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--images", type=int, default=200)
    ap.add_argument("--size", type=int, nargs=2, default=(320, 240), metavar=("W", "H"))
    ap.add_argument("--max-workers", type=int, default=min(4, os.cpu_count() or 1))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        src = Path(tmp) / "in"
        build(src, args.images, args.size, args.seed)
        times, manifests = [], []
        for workers in range(1, args.max_workers + 1):
            cfg = PipelineConfig(seed=args.seed, input_dir=str(src), output_dir=str(Path(tmp) / f"out{workers}"), workers=workers)
            t0 = time.perf_counter()
            manifest, code = cmd_warp(cfg)
            dt = time.perf_counter() - t0
            if code != 0:
                print(f"warp failed at workers={workers} (exit {code})", file=sys.stderr)
                return 1
            times.append(dt)
            manifests.append(json.dumps(manifest, sort_keys=True))
            print(f"workers={workers}  {dt:7.2f}s  {args.images / dt:7.1f} images/s")
    monotone = all(b < a for a, b in zip(times, times[1:]))
    print(f"monotone decrease: {monotone}; manifests identical: {len(set(manifests)) == 1}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""How far the 8-point box warp is from a dense boundary hull, per model and box size.

Usage: python scripts/label_warp_oracle.py [--boxes N] [--size S] [--samples K]

For each distortion model at its default parameters and a range of maximum
box sizes, draws random boxes, warps them by the 8-point rule and by a dense
sampling of the box perimeter, and reports the worst AABB disagreement in
pixels at S x S.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from fisheyeaug.annotations import BBox, warp_points_aabb
from fisheyeaug.geometry import forward_points, paper_default_models

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
from oracles import dense_boundary_aabb  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--boxes", type=int, default=1000)
    ap.add_argument("--size", type=int, default=640)
    ap.add_argument("--samples", type=int, default=10_000)
    ap.add_argument("--max-sizes", type=float, nargs="+", default=[0.1, 0.2, 0.3, 0.5])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    dims = (args.size, args.size)
    models = paper_default_models()
    print(f"{'max w,h':>8} " + " ".join(f"{m.kind:>12}" for m in models) + "   (worst gap in px)")
    for max_size in args.max_sizes:
        rng = np.random.default_rng(args.seed)
        t0 = time.perf_counter()
        row = []
        for model in models:
            worst = 0.0
            for _ in range(args.boxes):
                w, h = rng.uniform(0.005, max_size, 2)
                b = BBox(rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h)
                got, _ = warp_points_aabb(b, model, dims)
                dense = dense_boundary_aabb(b.corners, lambda x, y: forward_points(model, x, y, dims), args.samples)
                worst = max(worst, float(np.max(np.abs(np.array(got) - dense))) * args.size)
            row.append(worst)
        print(f"{max_size:>8.2f} " + " ".join(f"{v:>12.2f}" for v in row) + f"   [{time.perf_counter() - t0:.1f}s]")


if __name__ == "__main__":
    main()

"""Write a small synthetic corpus of images, labels and teacher files.

Usage: python scripts/make_demo_corpus.py OUT_DIR [--images N] [--size W H] [--seed S]

Creates OUT_DIR/images (PNG + YOLO-style label files) and OUT_DIR/teachers
(three face teachers and one plate teacher in the teacher JSON format), which
is enough to exercise every CLI subcommand end to end.
"""

import argparse
import json
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

FACE_TEACHERS = ("uai", "yolo5face", "retinaface")
PLATE_TEACHER = "lpr"


def scene(rng, width, height):
    """Gradient background with a few drawn blobs (faces) and bars (plates)."""
    yy, xx = np.mgrid[0:height, 0:width]
    bg = np.stack([xx * 255 // max(width - 1, 1), yy * 255 // max(height - 1, 1), np.full_like(xx, 96)], axis=2)
    im = Image.fromarray(bg.astype(np.uint8))
    draw = ImageDraw.Draw(im)
    labels = []
    for _ in range(rng.integers(1, 4)):
        w, h = rng.uniform(0.06, 0.18), rng.uniform(0.08, 0.22)
        cx, cy = rng.uniform(w, 1 - w), rng.uniform(h, 1 - h)
        draw.ellipse([(cx - w / 2) * width, (cy - h / 2) * height, (cx + w / 2) * width, (cy + h / 2) * height], fill=(230, 190, 160))
        labels.append((0, cx, cy, w, h))
    if rng.random() < 0.7:
        w, h = rng.uniform(0.1, 0.2), rng.uniform(0.03, 0.06)
        cx, cy = rng.uniform(w, 1 - w), rng.uniform(0.6, 1 - h)
        draw.rectangle([(cx - w / 2) * width, (cy - h / 2) * height, (cx + w / 2) * width, (cy + h / 2) * height], fill=(250, 250, 250))
        labels.append((1, cx, cy, w, h))
    return np.asarray(im), labels


def jitter(rng, label, scale=0.01):
    cls, cx, cy, w, h = label
    cx = float(np.clip(cx + rng.normal(0, scale), 0, 1))
    cy = float(np.clip(cy + rng.normal(0, scale), 0, 1))
    w = float(np.clip(w * (1 + rng.normal(0, 0.05)), 1e-3, 1))
    h = float(np.clip(h * (1 + rng.normal(0, 0.05)), 1e-3, 1))
    return {"class": cls, "cx": cx, "cy": cy, "w": w, "h": h, "confidence": round(float(rng.uniform(0.3, 0.99)), 3)}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--images", type=int, default=20)
    ap.add_argument("--size", type=int, nargs=2, default=(320, 240), metavar=("W", "H"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "teachers").mkdir(parents=True, exist_ok=True)
    teachers = {t: [] for t in FACE_TEACHERS + (PLATE_TEACHER,)}
    for i in range(args.images):
        image_id = f"demo_{i:04d}"
        img, labels = scene(rng, *args.size)
        Image.fromarray(img).save(out / "images" / f"{image_id}.png")
        (out / "images" / f"{image_id}.txt").write_text(
            "".join(f"{c} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}\n" for c, cx, cy, w, h in labels))
        for t in teachers:
            cls = 1 if t == PLATE_TEACHER else 0
            # Each teacher misses an object now and then.
            dets = [jitter(rng, lab) for lab in labels if lab[0] == cls and rng.random() < 0.85]
            teachers[t].append({"image_id": image_id, "detections": dets})
    for t, images in teachers.items():
        (out / "teachers" / f"{t}.json").write_text(json.dumps({"teacher_id": t, "images": images}, indent=1))
    print(f"wrote {args.images} images and {len(teachers)} teacher files under {out}")


if __name__ == "__main__":
    main()

import os
import random

import hypothesis
import numpy as np
import pytest
from PIL import Image

from fisheyeaug.annotations import FACE, BBox, Detection
from fisheyeaug.evaluation import sort_predictions

hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=20, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


def make_scene(rng, width=64, height=48, channels=3):
    """Random smooth-ish uint8 image."""
    yy, xx = np.mgrid[0:height, 0:width]
    base = 127 + 100 * np.sin(xx / 7.0 + rng.uniform(0, 6)) * np.cos(yy / 5.0 + rng.uniform(0, 6))
    noise = rng.integers(-20, 21, size=(height, width))
    img = np.clip(base + noise, 0, 255).astype(np.uint8)
    if channels == 3:
        img = np.stack([img, np.roll(img, 3, axis=1), 255 - img], axis=2)
    return img


def write_corpus(root, n, seed=0, size=(48, 40), boxes_per_image=2):
    """Directory of PNG images with matching label files."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        img = make_scene(rng, *size)
        Image.fromarray(img).save(root / f"img_{i:03d}.png")
        lines = []
        for _ in range(boxes_per_image):
            w, h = rng.uniform(0.05, 0.2, 2)
            cx, cy = rng.uniform(0.15, 0.85, 2)
            lines.append(f"{int(rng.integers(0, 2))} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}\n")
        (root / f"img_{i:03d}.txt").write_text("".join(lines))
    return root


def random_scene(r: random.Random, n_pred=None, n_gt=None):
    """Clustered small boxes so that overlaps and conflicts are common."""
    n_gt = r.randint(0, 5) if n_gt is None else n_gt
    n_pred = r.randint(0, 5) if n_pred is None else n_pred
    centers = [(r.uniform(0.3, 0.7), r.uniform(0.3, 0.7)) for _ in range(3)]

    def box():
        cx, cy = r.choice(centers)
        return BBox(cx + r.uniform(-0.04, 0.04), cy + r.uniform(-0.04, 0.04), r.uniform(0.08, 0.14), r.uniform(0.08, 0.14))

    gts = [box() for _ in range(n_gt)]
    preds = [Detection(box(), FACE, r.choice([0.2, 0.4, 0.6, 0.8, r.random()])) for _ in range(n_pred)]
    return sort_predictions(preds), gts


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance verdicts, one line per criterion, printed after the run.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])

"""Box data model, label file IO and pseudo-label warping through a distortion."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .geometry import DistortionModel, Dims, forward_points

FACE = 0
PLATE = 1
CLASS_NAMES = {FACE: "face", PLATE: "plate"}

# Warped boxes whose clipped area falls below this (in [0,1]^2 units) are dropped.
MIN_BOX_AREA = 1e-6


class LabelError(ValueError):
    """Raised for malformed or out-of-range label data."""

    def __init__(self, message, path=None, line=None, field=None):
        self.path = path
        self.line = line
        self.field = field
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in [0,1] dataset coordinates, center/size form."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise LabelError(f"{name} must be finite, got {v!r}", field=name)
        for name in ("cx", "cy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise LabelError(f"{name} must lie in [0, 1], got {v!r}", field=name)
        for name in ("w", "h"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise LabelError(f"{name} must lie in (0, 1], got {v!r}", field=name)

    @property
    def corners(self) -> Tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max)."""
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    @property
    def area(self) -> float:
        return self.w * self.h

    @classmethod
    def from_corners(cls, x0, y0, x1, y1) -> "BBox":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    class_id: int
    confidence: Optional[float] = None  # None for ground truth

    def __post_init__(self):
        if self.class_id not in CLASS_NAMES:
            raise LabelError(f"class_id out of range: {self.class_id!r} (expected 0=face or 1=plate)", field="class_id")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise LabelError(f"confidence must lie in [0, 1], got {self.confidence!r}", field="confidence")

    @property
    def score(self) -> float:
        return 1.0 if self.confidence is None else self.confidence


@dataclass
class LabeledImage:
    image_id: str
    width: int = 0
    height: int = 0
    detections: List[Detection] = field(default_factory=list)

    def __post_init__(self):
        if not self.image_id:
            raise LabelError("image_id must be non-empty", field="image_id")


# ---------------------------------------------------------------------------
# Label warping
# ---------------------------------------------------------------------------


def eight_points(b: BBox) -> np.ndarray:
    """Corners then edge midpoints of ``b`` in [-1,1] model coordinates, shape (8, 2).

    Order: top-left, top-right, bottom-left, bottom-right, top-mid,
    bottom-mid, left-mid, right-mid.
    """
    x0, y0, x1, y1 = b.corners
    xm, ym = b.cx, b.cy
    pts = np.array(
        [
            [x0, y0], [x1, y0], [x0, y1], [x1, y1],
            [xm, y0], [xm, y1], [x0, ym], [x1, ym],
        ],
        dtype=float,
    )
    return 2.0 * pts - 1.0


def warp_points_aabb(b: BBox, model: DistortionModel, dims: Optional[Dims] = None):
    """Unclipped AABB of the 8 forward-mapped points, in [0,1] dataset units.

    Returns ``(x0, y0, x1, y1), mapped_points`` with mapped points also in
    dataset units.
    """
    pts = eight_points(b)
    xd, yd = forward_points(model, pts[:, 0], pts[:, 1], dims)
    mapped = np.stack([(xd + 1.0) / 2.0, (yd + 1.0) / 2.0], axis=1)
    lo = mapped.min(axis=0)
    hi = mapped.max(axis=0)
    return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])), mapped


def warp_bbox(b: BBox, model: DistortionModel, dims: Optional[Dims] = None) -> Optional[BBox]:
    """Warp a box by mapping its 8 boundary points and taking their hull.

    Returns None (dropped) if the clipped box has area below MIN_BOX_AREA or
    none of the mapped points lands inside the frame. Parts of ``b`` outside
    the frame are clipped away before mapping.
    """
    b = clip_corners(*b.corners)
    if b is None:
        return None
    (x0, y0, x1, y1), mapped = warp_points_aabb(b, model, dims)
    inside = np.all((mapped >= 0.0) & (mapped <= 1.0), axis=1)
    if not inside.any():
        return None
    x0, y0 = max(x0, 0.0), max(y0, 0.0)
    x1, y1 = min(x1, 1.0), min(y1, 1.0)
    if x1 <= x0 or y1 <= y0 or (x1 - x0) * (y1 - y0) < MIN_BOX_AREA:
        return None
    return BBox.from_corners(x0, y0, x1, y1)


def clip_corners(x0, y0, x1, y1) -> Optional[BBox]:
    """Clip a corner-form box to [0,1]^2; None if nothing of positive area remains."""
    x0, y0 = max(x0, 0.0), max(y0, 0.0)
    x1, y1 = min(x1, 1.0), min(y1, 1.0)
    if x1 <= x0 or y1 <= y0:
        return None
    return BBox.from_corners(x0, y0, x1, y1)


# ---------------------------------------------------------------------------
# Label files: one ``class cx cy w h [confidence]`` line per detection
# ---------------------------------------------------------------------------


def parse_labels(text: str, image_id: str = "image", path=None) -> LabeledImage:
    detections = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in (5, 6):
            raise LabelError(f"expected 5 or 6 fields, got {len(parts)}", path, lineno)
        try:
            cls = int(parts[0])
            values = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise LabelError(f"unparseable field ({exc})", path, lineno) from None
        try:
            bbox = BBox(*values[:4])
            det = Detection(bbox, cls, values[4] if len(values) == 5 else None)
        except LabelError as exc:
            raise LabelError(str(exc), path, lineno, exc.field) from None
        detections.append(det)
    return LabeledImage(image_id, detections=detections)


def read_labels(path, image_id: Optional[str] = None) -> LabeledImage:
    path = os.fspath(path)
    if image_id is None:
        image_id = os.path.splitext(os.path.basename(path))[0]
    with open(path, encoding="utf-8") as fh:
        return parse_labels(fh.read(), image_id, path)


def format_labels(detections: Sequence[Detection]) -> str:
    lines = []
    for d in detections:
        b = d.bbox
        line = f"{d.class_id} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}"
        if d.confidence is not None:
            line += f" {d.confidence:.6f}"
        lines.append(line)
    return "".join(line + "\n" for line in lines)


def write_labels(labels: LabeledImage, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_labels(labels.detections))

"""Merge detections from several teacher models into one pseudo-label set.

Per class, detections from all teachers are ordered by confidence and
greedily clustered against each cluster's top-scoring member. A cluster
becomes one box whose coordinates are the confidence-weighted mean of its
members and whose confidence is the members' summed confidence divided by
the number of teachers expected to report that class. Objects seen by only
some teachers are thereby down-weighted.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Sequence

from .annotations import CLASS_NAMES, FACE, PLATE, BBox, Detection, LabelError
from .evaluation import iou


class TeacherFileError(ValueError):
    """Schema violation in a teacher detection file; ``json_path`` locates the offending value."""

    def __init__(self, message, path="$", file=None):
        self.json_path = path
        self.file = file
        prefix = f"{file}: " if file else ""
        super().__init__(f"{prefix}{path}: {message}")


@dataclass(frozen=True)
class TeacherOutput:
    teacher_id: str
    image_id: str
    detections: tuple = ()

    def __post_init__(self):
        if not self.teacher_id:
            raise ValueError("teacher_id must be non-empty")
        object.__setattr__(self, "detections", tuple(self.detections))


@dataclass(frozen=True)
class FusionConfig:
    iou_threshold: float = 0.5
    min_confidence: float = 0.3
    expected_teachers: Dict[int, int] = field(default_factory=lambda: {FACE: 3, PLATE: 1})

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold must lie in (0, 1], got {self.iou_threshold}")
        if not 0.0 <= self.min_confidence <= 1.0:
            raise ValueError(f"min_confidence must lie in [0, 1], got {self.min_confidence}")
        expected = {int(k): int(v) for k, v in self.expected_teachers.items()}
        for cls in CLASS_NAMES:
            if expected.get(cls, 0) < 1:
                raise ValueError(f"expected_teachers for class {cls} must be >= 1")
        object.__setattr__(self, "expected_teachers", expected)


def _sort_key(d: Detection):
    b = d.bbox
    return (-d.score, b.cx, b.cy, b.w, b.h)


def _fuse_cluster(members: List[Detection], class_id: int, expected: int) -> Detection:
    weights = [m.score for m in members]
    total = sum(weights)
    if total > 0:
        norm = [w / total for w in weights]
    else:
        norm = [1.0 / len(members)] * len(members)
    # A single member keeps its coordinates exactly (norm == [1.0]).
    coords = [sum(n * getattr(m.bbox, name) for n, m in zip(norm, members)) for name in ("cx", "cy", "w", "h")]
    # Exact sum of the member confidences, rounded once.
    conf = float(min(sum(Fraction(w) for w in weights) / expected, Fraction(1)))
    cx, cy, w, h = coords
    return Detection(BBox(min(max(cx, 0.0), 1.0), min(max(cy, 0.0), 1.0), min(w, 1.0), min(h, 1.0)), class_id, conf)


def fuse(outputs: Sequence[TeacherOutput], cfg: FusionConfig = FusionConfig()) -> List[Detection]:
    """Fuse the teacher outputs for a single image."""
    image_ids = {o.image_id for o in outputs}
    if len(image_ids) > 1:
        raise ValueError(f"fuse expects outputs for one image, got {sorted(image_ids)}")

    by_class: Dict[int, List[Detection]] = {}
    seen = set()
    for o in outputs:
        for cls in {d.class_id for d in o.detections}:
            if (o.teacher_id, cls) in seen:
                raise LabelError(f"teacher {o.teacher_id!r} appears twice for class {cls}", field="teacher_id")
            seen.add((o.teacher_id, cls))
        for d in o.detections:
            by_class.setdefault(d.class_id, []).append(d)

    fused: List[Detection] = []
    for cls in sorted(by_class):
        clusters: List[List[Detection]] = []
        for det in sorted(by_class[cls], key=_sort_key):
            for members in clusters:
                if iou(members[0].bbox, det.bbox) >= cfg.iou_threshold:
                    members.append(det)
                    break
            else:
                clusters.append([det])
        for members in clusters:
            d = _fuse_cluster(members, cls, cfg.expected_teachers[cls])
            if d.score >= cfg.min_confidence:
                fused.append(d)
    fused.sort(key=lambda d: (-d.score, d.bbox.cx, d.bbox.cy, d.class_id, d.bbox.w, d.bbox.h))
    return fused


# ---------------------------------------------------------------------------
# Teacher detection JSON
# ---------------------------------------------------------------------------


def _require(obj, key, kind, path, file):
    if not isinstance(obj, dict):
        raise TeacherFileError("expected an object", path, file)
    if key not in obj:
        raise TeacherFileError(f"missing required field {key!r}", path, file)
    value = obj[key]
    if kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise TeacherFileError(f"{key!r} has wrong type {type(value).__name__}", f"{path}.{key}", file)
    return value


def parse_teacher_json(doc, file=None) -> List[TeacherOutput]:
    teacher_id = _require(doc, "teacher_id", str, "$", file)
    if not teacher_id:
        raise TeacherFileError("must be non-empty", "$.teacher_id", file)
    images = _require(doc, "images", list, "$", file)
    outputs = []
    for i, img in enumerate(images):
        ipath = f"$.images[{i}]"
        image_id = _require(img, "image_id", str, ipath, file)
        if not image_id:
            raise TeacherFileError("must be non-empty", f"{ipath}.image_id", file)
        dets = _require(img, "detections", list, ipath, file)
        detections = []
        for j, d in enumerate(dets):
            dpath = f"{ipath}.detections[{j}]"
            cls = _require(d, "class", int, dpath, file)
            values = {k: float(_require(d, k, float, dpath, file)) for k in ("cx", "cy", "w", "h", "confidence")}
            try:
                bbox = BBox(values["cx"], values["cy"], values["w"], values["h"])
                detections.append(Detection(bbox, cls, values["confidence"]))
            except LabelError as exc:
                name = {"class_id": "class"}.get(exc.field, exc.field)
                raise TeacherFileError(str(exc), f"{dpath}.{name}", file) from None
        outputs.append(TeacherOutput(teacher_id, image_id, tuple(detections)))
    return outputs


def read_teacher_file(path) -> List[TeacherOutput]:
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise TeacherFileError(f"invalid JSON ({exc.msg} at line {exc.lineno})", "$", path) from None
    return parse_teacher_json(doc, path)


def teacher_outputs_to_json(outputs: Sequence[TeacherOutput]) -> dict:
    teacher_ids = {o.teacher_id for o in outputs}
    if len(teacher_ids) != 1:
        raise ValueError("a teacher file holds exactly one teacher_id")
    return {
        "teacher_id": teacher_ids.pop(),
        "images": [
            {
                "image_id": o.image_id,
                "detections": [
                    {"class": d.class_id, "cx": d.bbox.cx, "cy": d.bbox.cy, "w": d.bbox.w, "h": d.bbox.h, "confidence": d.score}
                    for d in o.detections
                ],
            }
            for o in outputs
        ],
    }

"""Batch commands: warp a dataset, fuse teacher files, evaluate, render overlays.

Every command returns ``(result, exit_code)`` with the exit-code contract
0 = clean, 1 = some inputs failed (outputs for the rest still written),
2 = configuration or usage error.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml
from PIL import Image, ImageDraw

from . import annotations as ann
from .evaluation import EvalReport, evaluate
from .fusion import FusionConfig, TeacherFileError, TeacherOutput, fuse, read_teacher_file
from .geometry import (
    Circular,
    DistortionModel,
    Radial,
    Rectangular,
    Tangential,
    TransformSelector,
    model_to_dict,
    select_transform,
)
from .warp import AugmentSpec, apply_augmentations, encode_image, encode_mask, read_image, warp_image

log = logging.getLogger(__name__)

WORKERS_ENV = "FISHEYEAUG_WORKERS"
MODEL_NAMES = ("circular", "rectangular", "radial", "tangential")
CLASS_KEYS = {"face": ann.FACE, "plate": ann.PLATE}

OK, PARTIAL, USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1, got {n}")
    return n


@dataclass
class PipelineConfig:
    seed: int = 0
    input_dir: Optional[str] = None
    output_dir: Optional[str] = None
    label_dir: Optional[str] = None
    workers: int = 1
    extensions: Tuple[str, ...] = (".png", ".jpg", ".jpeg")
    models: Tuple[str, ...] = MODEL_NAMES
    weights: Optional[Tuple[float, ...]] = None
    rectangular: Rectangular = field(default_factory=Rectangular)
    radial: Radial = field(default_factory=Radial)
    tangential: Tangential = field(default_factory=Tangential)
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    interpolation: str = "bilinear"
    output_format: str = "png"
    write_mask: bool = False
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        unknown = [m for m in self.models if m not in MODEL_NAMES]
        if unknown:
            raise ConfigError(f"unknown models {unknown}; choose from {list(MODEL_NAMES)}")
        if self.interpolation not in ("bilinear", "nearest"):
            raise ConfigError(f"interpolation must be 'bilinear' or 'nearest', got {self.interpolation!r}")
        if self.output_format not in ("png", "jpg"):
            raise ConfigError(f"output_format must be 'png' or 'jpg', got {self.output_format!r}")
        self.extensions = tuple(e.lower() if e.startswith(".") else "." + e.lower() for e in self.extensions)
        try:
            self.selector()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def model(self, name: str) -> DistortionModel:
        return {"circular": Circular(), "rectangular": self.rectangular, "radial": self.radial, "tangential": self.tangential}[name]

    def selector(self) -> TransformSelector:
        return TransformSelector(tuple(self.model(m) for m in self.models), self.weights, self.seed)

    def check_dirs(self):
        if not self.input_dir or not self.output_dir:
            raise ConfigError("input_dir and output_dir are required")
        out = Path(self.output_dir).resolve()
        for name in ("input_dir", "label_dir"):
            d = getattr(self, name)
            if d and Path(d).resolve() == out:
                raise ConfigError(f"output_dir must differ from {name}")
        if not Path(self.input_dir).is_dir():
            raise ConfigError(f"input_dir {self.input_dir!r} is not a directory")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "input_dir": self.input_dir,
            "output_dir": self.output_dir,
            "label_dir": self.label_dir,
            "workers": self.workers,
            "extensions": list(self.extensions),
            "selector": {"models": list(self.models), "weights": None if self.weights is None else list(self.weights)},
            "distortion": {
                "rectangular": self.rectangular.params(),
                "radial": self.radial.params(),
                "tangential": self.tangential.params(),
            },
            "augment": dataclasses.asdict(self.augment),
            "warp": {"interpolation": self.interpolation, "output_format": self.output_format, "write_mask": self.write_mask},
            "fusion": {
                "iou_threshold": self.fusion.iou_threshold,
                "min_confidence": self.fusion.min_confidence,
                "expected_teachers": {name: self.fusion.expected_teachers[c] for name, c in CLASS_KEYS.items()},
            },
        }


def _take(d: dict, allowed: Sequence[str], where: str) -> dict:
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {extra}")
    return d


def parse_expected_teachers(d) -> Dict[int, int]:
    d = _take(d, list(CLASS_KEYS), "fusion.expected_teachers")
    expected = dict(FusionConfig().expected_teachers)
    for name, n in d.items():
        expected[CLASS_KEYS[name]] = int(n)
    return expected


def config_from_dict(raw: dict, require_seed: bool = True) -> PipelineConfig:
    raw = _take(raw, ["seed", "input_dir", "output_dir", "label_dir", "workers", "extensions", "selector",
                      "distortion", "augment", "warp", "fusion"], "config")
    if require_seed and "seed" not in raw:
        raise ConfigError("config must set 'seed' explicitly")
    try:
        kwargs = {k: raw[k] for k in ("seed", "input_dir", "output_dir", "label_dir") if k in raw}
        kwargs["workers"] = int(raw["workers"]) if "workers" in raw else default_workers()
        if "extensions" in raw:
            kwargs["extensions"] = tuple(raw["extensions"])
        sel = _take(raw.get("selector"), ["models", "weights"], "selector")
        if "models" in sel:
            kwargs["models"] = tuple(sel["models"])
        if sel.get("weights") is not None:
            kwargs["weights"] = tuple(float(w) for w in sel["weights"])
        dist = _take(raw.get("distortion"), ["rectangular", "radial", "tangential"], "distortion")
        if "rectangular" in dist:
            kwargs["rectangular"] = Rectangular(**_take(dist["rectangular"], ["focal_length", "space"], "distortion.rectangular"))
        if "radial" in dist:
            kwargs["radial"] = Radial(**_take(dist["radial"], ["k1", "k2", "k3"], "distortion.radial"))
        if "tangential" in dist:
            kwargs["tangential"] = Tangential(**_take(dist["tangential"], ["p1", "p2"], "distortion.tangential"))
        if "augment" in raw:
            fields = [f.name for f in dataclasses.fields(AugmentSpec)]
            kwargs["augment"] = AugmentSpec(**_take(raw["augment"], fields, "augment"))
        warp = _take(raw.get("warp"), ["interpolation", "output_format", "write_mask"], "warp")
        kwargs.update(warp)
        fus = _take(raw.get("fusion"), ["iou_threshold", "min_confidence", "expected_teachers"], "fusion")
        if fus:
            kwargs["fusion"] = FusionConfig(
                iou_threshold=float(fus.get("iou_threshold", 0.5)),
                min_confidence=float(fus.get("min_confidence", 0.3)),
                expected_teachers=parse_expected_teachers(fus.get("expected_teachers")),
            )
        return PipelineConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if raw is None:
        raw = {}
    return config_from_dict(raw)


def default_config_yaml() -> str:
    return yaml.safe_dump(PipelineConfig().to_dict(), sort_keys=False)


# ---------------------------------------------------------------------------
# warp
# ---------------------------------------------------------------------------


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def find_images(root: Path, extensions: Sequence[str]) -> List[Tuple[str, Path]]:
    """(image_id, path) pairs sorted by image_id; image_id is the relative posix path without suffix."""
    found = []
    for p in root.rglob("*"):
        if p.is_file() and p.suffix.lower() in extensions and not p.name.endswith(".mask.png"):
            found.append((p.relative_to(root).with_suffix("").as_posix(), p))
    found.sort()
    ids = [i for i, _ in found]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise ConfigError(f"image ids are not unique (same stem, different extension): {dup[:5]}")
    return found


@dataclass(frozen=True)
class _WarpTask:
    image_id: str
    image_path: str
    label_path: Optional[str]
    out_dir: str
    cfg: PipelineConfig


def _error_record(image_id, stage, exc) -> dict:
    return {"image_id": image_id, "status": "error", "stage": stage, "error": f"{type(exc).__name__}: {exc}"}


def process_image(task: _WarpTask) -> dict:
    """Full per-image pipeline. Never raises; failures become error records."""
    cfg = task.cfg
    stage = "read_image"
    try:
        raw = Path(task.image_path).read_bytes()
        img = read_image(task.image_path)
        stage = "read_labels"
        if task.label_path and os.path.exists(task.label_path):
            detections = ann.read_labels(task.label_path, task.image_id).detections
            has_labels = True
        else:
            detections, has_labels = [], False

        stage = "transform"
        model, seed = select_transform(cfg.selector(), task.image_id)
        h, w = img.shape[:2]
        img, aug_boxes, record = apply_augmentations(img, [d.bbox for d in detections], cfg.augment, seed)
        out_img, mask = warp_image(img, model, cfg.interpolation)
        warped = []
        for det, b in zip(detections, aug_boxes):
            wb = None if b is None else ann.warp_bbox(b, model, (w, h))
            if wb is not None:
                warped.append(ann.Detection(wb, det.class_id, det.confidence))

        stage = "write"
        out = Path(task.out_dir)
        img_bytes = encode_image(out_img, cfg.output_format)
        label_text = ann.format_labels(warped).encode("utf-8")
        img_path = out / "images" / f"{task.image_id}.{cfg.output_format}"
        label_path = out / "labels" / f"{task.image_id}.txt"
        img_path.parent.mkdir(parents=True, exist_ok=True)
        label_path.parent.mkdir(parents=True, exist_ok=True)
        img_path.write_bytes(img_bytes)
        label_path.write_bytes(label_text)
        rec = {
            "image_id": task.image_id,
            "status": "ok",
            "width": w,
            "height": h,
            "model": model_to_dict(model),
            "seed": seed,
            "augmentations": record.to_dict()["applied"],
            "has_labels": has_labels,
            "boxes_in": len(detections),
            "boxes_out": len(warped),
            "boxes_dropped": len(detections) - len(warped),
            "input_sha256": _sha256(raw),
            "output_sha256": _sha256(img_bytes),
            "labels_sha256": _sha256(label_text),
            "masked_pixels": int((~mask).sum()),
        }
        if cfg.write_mask:
            mask_bytes = encode_mask(mask)
            (out / "images" / f"{task.image_id}.mask.png").write_bytes(mask_bytes)
            rec["mask_sha256"] = _sha256(mask_bytes)
        return rec
    except Exception as exc:  # crash-free contract: every failure becomes a record
        return _error_record(task.image_id, stage, exc)


def summarize(records: Sequence[dict]) -> dict:
    ok = [r for r in records if r["status"] == "ok"]
    counts: Dict[str, int] = {}
    for r in ok:
        counts[r["model"]["kind"]] = counts.get(r["model"]["kind"], 0) + 1
    return {
        "images": len(records),
        "ok": len(ok),
        "errors": len(records) - len(ok),
        "model_counts": dict(sorted(counts.items())),
        "boxes_in": sum(r["boxes_in"] for r in ok),
        "boxes_out": sum(r["boxes_out"] for r in ok),
        "boxes_dropped": sum(r["boxes_dropped"] for r in ok),
    }


def cmd_warp(cfg: PipelineConfig) -> Tuple[dict, int]:
    """Turn a directory of images (+ labels) into fisheye-like images and labels.

    Writes ``images/``, ``labels/`` and ``manifest.json`` under output_dir.
    """
    cfg.check_dirs()
    in_dir = Path(cfg.input_dir)
    label_root = Path(cfg.label_dir) if cfg.label_dir else in_dir
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    tasks = [
        _WarpTask(image_id, str(path), str(label_root / f"{image_id}.txt"), str(out_dir), cfg)
        for image_id, path in find_images(in_dir, cfg.extensions)
    ]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(process_image, tasks, chunksize=max(1, len(tasks) // (4 * cfg.workers))))
    else:
        records = [process_image(t) for t in tasks]
    records.sort(key=lambda r: r["image_id"])

    manifest = {
        "format_version": 1,
        "master_seed": cfg.seed,
        "selector": {
            "models": [model_to_dict(cfg.model(m)) for m in cfg.models],
            "weights": list(cfg.selector().weights),
        },
        "augment": dataclasses.asdict(cfg.augment),
        "interpolation": cfg.interpolation,
        "records": records,
        "summary": summarize(records),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=False)
        fh.write("\n")
    for r in records:
        if r["status"] != "ok":
            log.warning("%s: %s failed: %s", r["image_id"], r["stage"], r["error"])
    return manifest, PARTIAL if manifest["summary"]["errors"] else OK


# ---------------------------------------------------------------------------
# fuse
# ---------------------------------------------------------------------------


def cmd_fuse(teacher_files: Sequence, cfg: FusionConfig, out_dir) -> Tuple[dict, int]:
    if not teacher_files:
        raise ConfigError("at least one teacher file is required")
    per_image: Dict[str, List[TeacherOutput]] = {}
    teachers = []
    for path in teacher_files:
        outputs = read_teacher_file(path)
        tid = outputs[0].teacher_id if outputs else None
        if tid is not None:
            if tid in teachers:
                raise TeacherFileError(f"teacher {tid!r} already loaded from another file", "$.teacher_id", os.fspath(path))
            teachers.append(tid)
        for o in outputs:
            if any(prev.teacher_id == o.teacher_id for prev in per_image.get(o.image_id, ())):
                raise TeacherFileError(f"image {o.image_id!r} listed twice", "$.images", os.fspath(path))
            per_image.setdefault(o.image_id, []).append(o)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = {c: n for n, c in CLASS_KEYS.items()}
    before = {n: 0 for n in CLASS_KEYS}
    after = {n: 0 for n in CLASS_KEYS}
    for image_id in sorted(per_image):
        outputs = per_image[image_id]
        for o in outputs:
            for d in o.detections:
                before[names[d.class_id]] += 1
        fused = fuse(outputs, cfg)
        for d in fused:
            after[names[d.class_id]] += 1
        path = out / f"{image_id}.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        ann.write_labels(ann.LabeledImage(image_id, detections=fused), path)
    summary = {"teachers": teachers, "images": len(per_image), "before": before, "after": after}
    with open(out / "fusion_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return summary, OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _read_label_dir(root: Path, errors: List[str]) -> Dict[str, List[ann.Detection]]:
    labels = {}
    if not root.is_dir():
        return labels
    for p in sorted(root.rglob("*.txt")):
        image_id = p.relative_to(root).with_suffix("").as_posix()
        try:
            labels[image_id] = ann.read_labels(p, image_id).detections
        except (ann.LabelError, OSError, UnicodeDecodeError) as exc:
            errors.append(str(exc))
    return labels


def cmd_eval(pred_dir, gt_dir, out_dir=None) -> Tuple[EvalReport, int]:
    if not Path(gt_dir).is_dir():
        raise ConfigError(f"ground-truth directory {gt_dir!r} does not exist")
    errors: List[str] = []
    gts = _read_label_dir(Path(gt_dir), errors)
    preds = _read_label_dir(Path(pred_dir), errors)
    report = evaluate(preds, gts)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        doc = report.to_dict()
        doc["errors"] = errors
        with open(out / "eval.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        (out / "eval.txt").write_text(report.format_table() + "\n", encoding="utf-8")
    for e in errors:
        log.warning("%s", e)
    return report, PARTIAL if errors else OK


# ---------------------------------------------------------------------------
# render
# ---------------------------------------------------------------------------

CLASS_COLORS = {ann.FACE: (255, 48, 48), ann.PLATE: (40, 140, 255)}


def box_to_pixels(b: ann.BBox, width: int, height: int) -> Tuple[int, int, int, int]:
    x0, y0, x1, y1 = b.corners

    def px(v, size):
        return int(min(max(round(v * size), 0), size - 1))

    return px(x0, width), px(y0, height), px(x1, width), px(y1, height)


def render_overlay(img: np.ndarray, detections: Sequence[ann.Detection]) -> Image.Image:
    im = Image.fromarray(img)
    if not detections:
        return im
    im = im.convert("RGB")
    draw = ImageDraw.Draw(im)
    h, w = img.shape[:2]
    for d in detections:
        x0, y0, x1, y1 = box_to_pixels(d.bbox, w, h)
        color = CLASS_COLORS[d.class_id]
        draw.rectangle([x0, y0, x1, y1], outline=color, width=2)
        if d.confidence is not None:
            draw.text((x0 + 2, max(y0 - 11, 0)), f"{ann.CLASS_NAMES[d.class_id]} {d.confidence:.2f}", fill=color)
    return im


def cmd_render(image_dir, label_dir, out_dir, extensions=(".png", ".jpg", ".jpeg")) -> Tuple[dict, int]:
    image_root, label_root, out = Path(image_dir), Path(label_dir), Path(out_dir)
    if not image_root.is_dir():
        raise ConfigError(f"image directory {image_dir!r} does not exist")
    out.mkdir(parents=True, exist_ok=True)
    summary = {"rendered": 0, "missing_labels": [], "errors": []}
    for image_id, path in find_images(image_root, extensions):
        try:
            img = read_image(path)
            label_path = label_root / f"{image_id}.txt"
            if label_path.exists():
                dets = ann.read_labels(label_path, image_id).detections
            else:
                dets = []
                summary["missing_labels"].append(image_id)
            target = out / f"{image_id}.png"
            target.parent.mkdir(parents=True, exist_ok=True)
            render_overlay(img, dets).save(target, format="PNG")
            summary["rendered"] += 1
        except Exception as exc:
            summary["errors"].append(f"{image_id}: {type(exc).__name__}: {exc}")
    for m in summary["missing_labels"]:
        log.warning("%s: no label file, rendered without boxes", m)
    return summary, PARTIAL if summary["errors"] else OK

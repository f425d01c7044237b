"""Raster resampling through a distortion model and seeded detection augmentations.

Images are numpy ``uint8`` arrays of shape (H, W) or (H, W, 3). Validity masks
are boolean arrays of shape (H, W).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .annotations import BBox, clip_corners
from .geometry import DistortionModel, inverse_points, normalized_to_pixels, pixels_to_normalized

FILL_VALUE = 0


def check_image(img: np.ndarray) -> np.ndarray:
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got {img.dtype}")
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise ValueError(f"expected (H, W) or (H, W, 3) image, got shape {img.shape}")
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError(f"image must be at least 2x2, got {img.shape[1]}x{img.shape[0]}")
    return img


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def sample(img: np.ndarray, u: np.ndarray, v: np.ndarray, valid: np.ndarray, interpolation: str = "bilinear") -> np.ndarray:
    """Read ``img`` at continuous pixel positions; invalid positions get FILL_VALUE."""
    h, w = img.shape[:2]
    u = np.clip(np.where(valid, u, 0.0), 0.0, w - 1.0)
    v = np.clip(np.where(valid, v, 0.0), 0.0, h - 1.0)
    src = img.astype(np.float64)
    if interpolation == "nearest":
        out = src[np.rint(v).astype(np.intp), np.rint(u).astype(np.intp)]
    elif interpolation == "bilinear":
        u0 = np.minimum(np.floor(u).astype(np.intp), w - 2)
        v0 = np.minimum(np.floor(v).astype(np.intp), h - 2)
        fu = u - u0
        fv = v - v0
        if img.ndim == 3:
            fu = fu[..., None]
            fv = fv[..., None]
        top = src[v0, u0] * (1.0 - fu) + src[v0, u0 + 1] * fu
        bottom = src[v0 + 1, u0] * (1.0 - fu) + src[v0 + 1, u0 + 1] * fu
        out = top * (1.0 - fv) + bottom * fv
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    out = _to_uint8(out)
    out[~valid] = FILL_VALUE
    return out


def warp_image(img: np.ndarray, model: DistortionModel, interpolation: str = "bilinear") -> Tuple[np.ndarray, np.ndarray]:
    """Resample ``img`` so that its content appears distorted by ``model``.

    Every destination pixel center is pulled back through the inverse map;
    pixels with no preimage in the source square are filled with 0 and
    flagged false in the returned mask.
    """
    img = check_image(img)
    h, w = img.shape[:2]
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    qx, qy = pixels_to_normalized(uu, vv, w, h)
    px, py, valid = inverse_points(model, qx, qy, (w, h))
    su, sv = normalized_to_pixels(px, py, w, h)
    return sample(img, su, sv, valid, interpolation), valid


# ---------------------------------------------------------------------------
# Augmentations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentSpec:
    """Maximum magnitudes and application probabilities.

    Photometric magnitudes are relative deltas drawn uniformly from
    ``[-max, +max]``; hue is a fraction of a full turn. Every op other than
    the flip uses ``prob``.
    """

    flip_prob: float = 0.5
    prob: float = 0.5
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    hue: float = 0.1
    rotation: float = 10.0  # degrees
    shear: float = 2.0  # degrees

    def __post_init__(self):
        for name in ("flip_prob", "prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")
        for name in ("brightness", "contrast", "saturation", "hue", "rotation", "shear"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a non-negative magnitude, got {v}")

    @classmethod
    def disabled(cls) -> "AugmentSpec":
        return cls(flip_prob=0.0, prob=0.0)


@dataclass
class AugmentRecord:
    applied: List[Tuple[str, float]] = field(default_factory=list)
    boxes_dropped: int = 0

    def to_dict(self) -> dict:
        return {"applied": [{"op": op, "value": value} for op, value in self.applied], "boxes_dropped": self.boxes_dropped}


def _affine_image(img: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Apply a 2x2 linear map about the image center (pixel units, y down)."""
    h, w = img.shape[:2]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    inv = np.linalg.inv(matrix)
    dx, dy = uu - cx, vv - cy
    su = inv[0, 0] * dx + inv[0, 1] * dy + cx
    sv = inv[1, 0] * dx + inv[1, 1] * dy + cy
    eps = 1e-9
    valid = (su >= -eps) & (su <= w - 1 + eps) & (sv >= -eps) & (sv <= h - 1 + eps)
    return sample(img, su, sv, valid)


def _affine_box(b: BBox, matrix: np.ndarray, width: int, height: int) -> Optional[BBox]:
    x0, y0, x1, y1 = b.corners
    corners = np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]])
    px = (corners[:, 0] - 0.5) * width
    py = (corners[:, 1] - 0.5) * height
    tx = matrix[0, 0] * px + matrix[0, 1] * py
    ty = matrix[1, 0] * px + matrix[1, 1] * py
    nx = tx / width + 0.5
    ny = ty / height + 0.5
    return clip_corners(float(nx.min()), float(ny.min()), float(nx.max()), float(ny.max()))


def rotation_matrix(degrees: float) -> np.ndarray:
    t = math.radians(degrees)
    return np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])


def shear_matrix(degrees: float) -> np.ndarray:
    return np.array([[1.0, math.tan(math.radians(degrees))], [0.0, 1.0]])


def hflip(img: np.ndarray, boxes: Sequence[Optional[BBox]]):
    return img[:, ::-1].copy(), [None if b is None else BBox(1.0 - b.cx, b.cy, b.w, b.h) for b in boxes]


def affine(img: np.ndarray, boxes: Sequence[Optional[BBox]], matrix: np.ndarray):
    h, w = img.shape[:2]
    return _affine_image(img, matrix), [None if b is None else _affine_box(b, matrix, w, h) for b in boxes]


_LUMA = np.array([0.299, 0.587, 0.114])
_RGB_TO_YIQ = np.array([[0.299, 0.587, 0.114], [0.596, -0.274, -0.322], [0.211, -0.523, 0.312]])
_YIQ_TO_RGB = np.linalg.inv(_RGB_TO_YIQ)


def _luma(x: np.ndarray) -> np.ndarray:
    return x if x.ndim == 2 else x @ _LUMA


def adjust_brightness(x: np.ndarray, delta: float) -> np.ndarray:
    return np.clip(x * (1.0 + delta), 0.0, 255.0)


def adjust_contrast(x: np.ndarray, delta: float) -> np.ndarray:
    mean = _luma(x).mean()
    return np.clip(mean + (1.0 + delta) * (x - mean), 0.0, 255.0)


def adjust_saturation(x: np.ndarray, delta: float) -> np.ndarray:
    if x.ndim == 2:
        return x
    gray = _luma(x)[..., None]
    return np.clip(gray + (1.0 + delta) * (x - gray), 0.0, 255.0)


def adjust_hue(x: np.ndarray, delta: float) -> np.ndarray:
    """Rotate chroma in YIQ space by ``delta`` turns."""
    if x.ndim == 2:
        return x
    t = 2.0 * math.pi * delta
    rot = np.array([[1.0, 0.0, 0.0], [0.0, math.cos(t), -math.sin(t)], [0.0, math.sin(t), math.cos(t)]])
    m = _YIQ_TO_RGB @ rot @ _RGB_TO_YIQ
    return np.clip(x @ m.T, 0.0, 255.0)


def apply_augmentations(img: np.ndarray, boxes: Sequence[BBox], spec: AugmentSpec, seed: int):
    """Seeded geometric then photometric augmentation.

    Returns ``(image, boxes, record)`` where ``boxes`` is aligned with the
    input and holds None for boxes pushed entirely out of frame. Every op
    consumes the same random draws whether or not it fires, so the stream
    is stable across specs that differ only in probabilities.
    """
    img = check_image(img)
    rng = np.random.default_rng([seed, 1])
    record = AugmentRecord()
    out_boxes: List[Optional[BBox]] = list(boxes)

    if rng.random() < spec.flip_prob:
        img, out_boxes = hflip(img, out_boxes)
        record.applied.append(("flip", 1.0))

    for op, magnitude, make in (("rotation", spec.rotation, rotation_matrix), ("shear", spec.shear, shear_matrix)):
        fire = rng.random() < spec.prob
        value = float(rng.uniform(-magnitude, magnitude))
        if fire:
            img, out_boxes = affine(img, out_boxes, make(value))
            record.applied.append((op, value))

    photometric = (
        ("brightness", spec.brightness, adjust_brightness),
        ("contrast", spec.contrast, adjust_contrast),
        ("saturation", spec.saturation, adjust_saturation),
        ("hue", spec.hue, adjust_hue),
    )
    pixels = None
    for op, magnitude, fn in photometric:
        fire = rng.random() < spec.prob
        value = float(rng.uniform(-magnitude, magnitude))
        if fire:
            if pixels is None:
                pixels = img.astype(np.float64)
            pixels = fn(pixels, value)
            record.applied.append((op, value))
    if pixels is not None:
        img = _to_uint8(pixels)

    record.boxes_dropped = sum(1 for b, o in zip(boxes, out_boxes) if b is not None and o is None)
    return img, out_boxes, record


# ---------------------------------------------------------------------------
# IO
# ---------------------------------------------------------------------------


def read_image(path) -> np.ndarray:
    """Load an 8-bit gray or RGB image; other modes are converted to RGB."""
    with Image.open(path) as im:
        im.load()
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return check_image(np.asarray(im, dtype=np.uint8).copy())


def encode_image(img: np.ndarray, fmt: str = "png") -> bytes:
    buf = io.BytesIO()
    pil_fmt = {"png": "PNG", "jpg": "JPEG", "jpeg": "JPEG"}[fmt.lower()]
    kwargs = {"quality": 95} if pil_fmt == "JPEG" else {}
    Image.fromarray(check_image(img)).save(buf, format=pil_fmt, **kwargs)
    return buf.getvalue()


def encode_mask(mask: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(mask.astype(bool)).convert("1").save(buf, format="PNG")
    return buf.getvalue()


def psnr(a: np.ndarray, b: np.ndarray, where: Optional[np.ndarray] = None) -> float:
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    if where is not None:
        a, b = a[where], b[where]
    mse = np.mean((a - b) ** 2)
    return math.inf if mse == 0 else 10.0 * math.log10(255.0**2 / mse)


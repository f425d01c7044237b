"""Coordinate maths for the four fisheye-like distortion models.

Coordinates follow the normalized convention: image center at (0, 0) and the
four corner pixel centers at (+-1, +-1). Forward maps send an undistorted
point to its distorted position; inverse maps are solved numerically and are
only used for destination-to-source resampling.

All array functions accept scalars or numpy arrays of matching shape.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

# Inverse solutions may sit this far outside [-1, 1]^2 and still count as in-domain.
DOMAIN_GUARD = 1.001
INVERSE_TOL = 1e-6
MAX_NEWTON_ITERS = 50
# Residual at which Newton iterations stop early.
_NEWTON_STOP = 1e-14
# Residual accepted as converged after the iteration cap.
_NEWTON_ACCEPT = 1e-9

Dims = Tuple[int, int]


def _check_finite(*values):
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"coordinate must be finite, got {v!r}")


@dataclass(frozen=True)
class NormalizedPoint:
    x: float
    y: float

    def __post_init__(self):
        _check_finite(self.x, self.y)


@dataclass(frozen=True)
class PixelPoint:
    """Continuous pixel position; (0, 0) is the center of the top-left pixel."""

    u: float
    v: float

    def __post_init__(self):
        _check_finite(self.u, self.v)


def _check_dims(width, height):
    if width < 2 or height < 2:
        raise ValueError(f"image dimensions must be at least 2x2, got {width}x{height}")


def pixels_to_normalized(u, v, width: int, height: int):
    _check_dims(width, height)
    return 2.0 * np.asarray(u, dtype=float) / (width - 1) - 1.0, 2.0 * np.asarray(v, dtype=float) / (height - 1) - 1.0


def normalized_to_pixels(x, y, width: int, height: int):
    _check_dims(width, height)
    return (np.asarray(x, dtype=float) + 1.0) * (width - 1) / 2.0, (np.asarray(y, dtype=float) + 1.0) * (height - 1) / 2.0


def pixel_to_normalized(p: PixelPoint, width: int, height: int) -> NormalizedPoint:
    x, y = pixels_to_normalized(p.u, p.v, width, height)
    return NormalizedPoint(float(x), float(y))


def normalized_to_pixel(p: NormalizedPoint, width: int, height: int) -> PixelPoint:
    u, v = normalized_to_pixels(p.x, p.y, width, height)
    return PixelPoint(float(u), float(v))


# ---------------------------------------------------------------------------
# Distortion models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Circular:
    """Square-to-disc mapping followed by a Gaussian squeeze toward the center."""

    kind = "circular"

    def params(self) -> dict:
        return {}


@dataclass(frozen=True)
class Rectangular:
    """Arctangent radial compression ``r_f = f * atan(r / f)``.

    ``space="pixel"`` evaluates the map in pixel offsets from the image
    center, where a focal length of a few hundred is meaningful. With
    ``space="normalized"`` it acts directly on normalized coordinates.
    """

    focal_length: float = 250.0
    space: str = "pixel"
    kind = "rectangular"

    def __post_init__(self):
        if not (self.focal_length > 0 and math.isfinite(self.focal_length)):
            raise ValueError(f"focal_length must be positive, got {self.focal_length}")
        if self.space not in ("pixel", "normalized"):
            raise ValueError(f"space must be 'pixel' or 'normalized', got {self.space!r}")

    def params(self) -> dict:
        return {"focal_length": self.focal_length, "space": self.space}


@dataclass(frozen=True)
class Radial:
    k1: float = 0.2
    k2: float = 0.1
    k3: float = 0.05
    kind = "radial"

    def __post_init__(self):
        _check_finite(self.k1, self.k2, self.k3)
        r2 = np.linspace(0.0, math.sqrt(2.0), 20001) ** 2
        s = 1.0 + self.k1 * r2 + self.k2 * r2**2 + self.k3 * r2**3
        if s.min() <= 0:
            raise ValueError(
                f"radial coefficients ({self.k1}, {self.k2}, {self.k3}) fold the image: "
                f"scale factor reaches {s.min():.3g} on r in [0, sqrt(2)]"
            )

    def params(self) -> dict:
        return {"k1": self.k1, "k2": self.k2, "k3": self.k3}


@dataclass(frozen=True)
class Tangential:
    p1: float = 0.2
    p2: float = 0.1
    kind = "tangential"

    def __post_init__(self):
        _check_finite(self.p1, self.p2)

    def params(self) -> dict:
        return {"p1": self.p1, "p2": self.p2}


DistortionModel = Union[Circular, Rectangular, Radial, Tangential]

MODEL_TYPES = {cls.kind: cls for cls in (Circular, Rectangular, Radial, Tangential)}


def model_to_dict(model: DistortionModel) -> dict:
    return {"kind": model.kind, **model.params()}


def model_from_dict(d: dict) -> DistortionModel:
    d = dict(d)
    kind = d.pop("kind")
    if kind not in MODEL_TYPES:
        raise ValueError(f"unknown distortion model {kind!r}; expected one of {sorted(MODEL_TYPES)}")
    return MODEL_TYPES[kind](**d)


def paper_default_models() -> Tuple[DistortionModel, ...]:
    return (Circular(), Rectangular(), Radial(), Tangential())


# ---------------------------------------------------------------------------
# Forward maps (raw, in the model's own coordinate space)
# ---------------------------------------------------------------------------


def _in_square(x, y, bound=DOMAIN_GUARD):
    return (np.abs(x) <= bound) & (np.abs(y) <= bound)


def forward_circular(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not np.all(_in_square(x, y)):
        raise ValueError("circular distortion is only defined on [-1, 1]^2")
    xp = x * np.sqrt(np.maximum(1.0 - y * y / 2.0, 0.0))
    yp = y * np.sqrt(np.maximum(1.0 - x * x / 2.0, 0.0))
    squeeze = np.exp(-(xp * xp + yp * yp) / 4.0)
    return xp * squeeze, yp * squeeze


def forward_rectangular(x, y, f: float):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.hypot(x, y)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(r > 0, f * np.arctan(r / f) / np.where(r > 0, r, 1.0), 1.0)
    return x * scale, y * scale


def radial_scale(r2, k1, k2, k3):
    return 1.0 + k1 * r2 + k2 * r2 * r2 + k3 * r2 * r2 * r2


def forward_radial(x, y, k1: float, k2: float, k3: float):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s = radial_scale(x * x + y * y, k1, k2, k3)
    return x * s, y * s


def forward_tangential(x, y, p1: float, p2: float):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r2 = x * x + y * y
    xd = x + (2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x))
    yd = y + (p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y)
    return xd, yd


# ---------------------------------------------------------------------------
# Inverse maps (raw). Each returns (x, y, ok).
# ---------------------------------------------------------------------------


def _circular_profile(rho):
    return rho * np.exp(-rho * rho / 4.0)


def inverse_circular(xd, yd):
    xd = np.asarray(xd, dtype=float)
    yd = np.asarray(yd, dtype=float)
    rd = np.hypot(xd, yd)
    # rho * exp(-rho^2/4) is increasing and concave on [0, 1]; Newton from
    # rho = rd approaches the root monotonically from below.
    ok = rd <= _circular_profile(1.0) * (1.0 + 1e-12)
    rho = np.where(ok, rd, 0.0)
    target = np.where(ok, rd, 0.0)
    for _ in range(MAX_NEWTON_ITERS):
        e = np.exp(-rho * rho / 4.0)
        g = rho * e - target
        if np.all(np.abs(g) <= _NEWTON_STOP):
            break
        rho = rho - g / (e * (1.0 - rho * rho / 2.0))
    rho = np.minimum(rho, 1.0)
    ok &= np.abs(_circular_profile(rho) - target) <= _NEWTON_ACCEPT

    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(rd > 0, rho / np.where(rd > 0, rd, 1.0), 1.0)
    u = xd * scale
    v = yd * scale
    # Closed-form inverse of the elliptical square-to-disc mapping.
    uu, vv = u * u, v * v
    c = 2.0 * math.sqrt(2.0)
    x = 0.5 * np.sqrt(np.maximum(2.0 + uu - vv + c * u, 0.0)) - 0.5 * np.sqrt(np.maximum(2.0 + uu - vv - c * u, 0.0))
    y = 0.5 * np.sqrt(np.maximum(2.0 - uu + vv + c * v, 0.0)) - 0.5 * np.sqrt(np.maximum(2.0 - uu + vv - c * v, 0.0))
    return x, y, ok


def inverse_rectangular(xd, yd, f: float):
    xd = np.asarray(xd, dtype=float)
    yd = np.asarray(yd, dtype=float)
    rf = np.hypot(xd, yd)
    theta = rf / f
    ok = theta < math.pi / 2
    r = f * np.tan(np.where(ok, theta, 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(rf > 0, r / np.where(rf > 0, rf, 1.0), 1.0)
    return xd * scale, yd * scale, ok


def inverse_radial(xd, yd, k1: float, k2: float, k3: float):
    xd = np.asarray(xd, dtype=float)
    yd = np.asarray(yd, dtype=float)
    rd = np.hypot(xd, yd)
    r = rd.copy()
    with np.errstate(all="ignore"):
        for _ in range(MAX_NEWTON_ITERS):
            r2 = r * r
            g = r * radial_scale(r2, k1, k2, k3) - rd
            if np.all(np.abs(g) <= _NEWTON_STOP):
                break
            dg = 1.0 + 3.0 * k1 * r2 + 5.0 * k2 * r2 * r2 + 7.0 * k3 * r2 * r2 * r2
            r = r - g / dg
        resid = np.abs(r * radial_scale(r * r, k1, k2, k3) - rd)
        ok = np.isfinite(r) & (r >= 0) & (resid <= _NEWTON_ACCEPT)
        scale = np.where(rd > 0, r / np.where(rd > 0, rd, 1.0), 1.0)
    scale = np.where(ok, scale, 0.0)
    return xd * scale, yd * scale, ok


def inverse_tangential(xd, yd, p1: float, p2: float):
    """Damped 2-D Newton seeded at the distorted point itself.

    The tangential map is quadratic and not globally injective; seeding at
    the target selects the preimage that is continuous with the identity.
    """
    xd = np.asarray(xd, dtype=float)
    yd = np.asarray(yd, dtype=float)
    x = xd.copy()
    y = yd.copy()

    def residual(x, y, tx, ty):
        fx, fy = forward_tangential(x, y, p1, p2)
        return fx - tx, fy - ty

    shape = xd.shape
    x, y, txs, tys = (a.ravel() for a in (x, y, xd, yd))
    with np.errstate(all="ignore"):
        gx, gy = residual(x, y, txs, tys)
        norm = np.hypot(gx, gy)
        # Work only on points still above the stop tolerance. A point whose
        # Newton step cannot be improved by backtracking would repeat the same
        # step forever, so it is retired as stalled.
        idx = np.nonzero(~(norm <= _NEWTON_STOP))[0]
        for _ in range(MAX_NEWTON_ITERS):
            if idx.size == 0:
                break
            cx, cy, ex, ey = x[idx], y[idx], gx[idx], gy[idx]
            tx, ty, cn = txs[idx], tys[idx], norm[idx]
            j11 = 1.0 + 2.0 * p1 * cy + 6.0 * p2 * cx
            j12 = 2.0 * p1 * cx + 2.0 * p2 * cy
            j22 = 1.0 + 6.0 * p1 * cy + 2.0 * p2 * cx
            det = j11 * j22 - j12 * j12
            dx = (j22 * ex - j12 * ey) / det
            dy = (j11 * ey - j12 * ex) / det
            step = 1.0
            pending = np.isfinite(dx) & np.isfinite(dy)
            moved = np.zeros(idx.size, dtype=bool)
            for _ in range(30):
                if not np.any(pending):
                    break
                sx, sy = cx[pending] - step * dx[pending], cy[pending] - step * dy[pending]
                rx, ry = residual(sx, sy, tx[pending], ty[pending])
                rn = np.hypot(rx, ry)
                better = rn < cn[pending]
                sel = np.nonzero(pending)[0][better]
                x[idx[sel]], y[idx[sel]] = sx[better], sy[better]
                gx[idx[sel]], gy[idx[sel]], norm[idx[sel]] = rx[better], ry[better], rn[better]
                moved[sel] = True
                pending[sel] = False
                step *= 0.5
            keep = moved & (norm[idx] > _NEWTON_STOP)
            idx = idx[keep]
        ok = np.isfinite(norm) & (norm <= _NEWTON_ACCEPT)
    return x.reshape(shape), y.reshape(shape), ok.reshape(shape)


# ---------------------------------------------------------------------------
# Model dispatch in normalized coordinates
# ---------------------------------------------------------------------------


def _model_space_scale(model: DistortionModel, dims: Optional[Dims]):
    """Per-axis factors taking normalized coordinates to the model's space."""
    if isinstance(model, Rectangular) and model.space == "pixel":
        if dims is None:
            raise ValueError("pixel-space rectangular distortion needs image dimensions")
        width, height = dims
        _check_dims(width, height)
        return (width - 1) / 2.0, (height - 1) / 2.0
    return 1.0, 1.0


def forward_points(model: DistortionModel, x, y, dims: Optional[Dims] = None):
    """Apply ``model`` to normalized coordinates, returning normalized coordinates."""
    if isinstance(model, Circular):
        return forward_circular(x, y)
    if isinstance(model, Radial):
        return forward_radial(x, y, model.k1, model.k2, model.k3)
    if isinstance(model, Tangential):
        return forward_tangential(x, y, model.p1, model.p2)
    if isinstance(model, Rectangular):
        sx, sy = _model_space_scale(model, dims)
        xd, yd = forward_rectangular(np.asarray(x, dtype=float) * sx, np.asarray(y, dtype=float) * sy, model.focal_length)
        return xd / sx, yd / sy
    raise TypeError(f"not a distortion model: {model!r}")


def inverse_points(model: DistortionModel, x, y, dims: Optional[Dims] = None):
    """Solve ``forward_points(model, p) = (x, y)`` for p.

    Returns ``(px, py, valid)``; ``valid`` is false where the solver did not
    converge or the solution falls outside the guarded input square.
    """
    if isinstance(model, Circular):
        px, py, ok = inverse_circular(x, y)
    elif isinstance(model, Radial):
        px, py, ok = inverse_radial(x, y, model.k1, model.k2, model.k3)
    elif isinstance(model, Tangential):
        px, py, ok = inverse_tangential(x, y, model.p1, model.p2)
    elif isinstance(model, Rectangular):
        sx, sy = _model_space_scale(model, dims)
        px, py, ok = inverse_rectangular(np.asarray(x, dtype=float) * sx, np.asarray(y, dtype=float) * sy, model.focal_length)
        px, py = px / sx, py / sy
    else:
        raise TypeError(f"not a distortion model: {model!r}")
    valid = ok & np.isfinite(px) & np.isfinite(py) & _in_square(px, py)
    return px, py, valid


def forward(model: DistortionModel, p: NormalizedPoint, dims: Optional[Dims] = None) -> NormalizedPoint:
    xd, yd = forward_points(model, p.x, p.y, dims)
    return NormalizedPoint(float(xd), float(yd))


def inverse_map(model: DistortionModel, q: NormalizedPoint, dims: Optional[Dims] = None) -> Optional[NormalizedPoint]:
    """Source point that ``model`` sends to ``q``, or None when out of domain."""
    px, py, valid = inverse_points(model, q.x, q.y, dims)
    if not bool(valid):
        return None
    return NormalizedPoint(float(px), float(py))


# ---------------------------------------------------------------------------
# Random selection aggregator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransformSelector:
    """Picks one enabled distortion model per image.

    Selection is a pure function of ``(master_seed, image_id)`` so datasets
    are reproducible regardless of processing order.
    """

    enabled: Tuple[DistortionModel, ...] = field(default_factory=paper_default_models)
    weights: Optional[Tuple[float, ...]] = None
    master_seed: int = 0

    def __post_init__(self):
        enabled = tuple(self.enabled)
        if not enabled:
            raise ValueError("at least one distortion model must be enabled")
        object.__setattr__(self, "enabled", enabled)
        if self.weights is None:
            weights = tuple(1.0 / len(enabled) for _ in enabled)
        else:
            weights = tuple(float(w) for w in self.weights)
        if len(weights) != len(enabled):
            raise ValueError(f"{len(weights)} weights given for {len(enabled)} models")
        if any(w < 0 or not math.isfinite(w) for w in weights):
            raise ValueError(f"weights must be non-negative, got {weights}")
        if abs(math.fsum(weights) - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got sum {math.fsum(weights)!r}")
        object.__setattr__(self, "weights", weights)
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must fit in 64 unsigned bits")


def image_seed(master_seed: int, image_id: str) -> int:
    """64-bit per-image seed: little-endian BLAKE2b-64 of ``"<master_seed>:<image_id>"``."""
    digest = hashlib.blake2b(f"{int(master_seed)}:{image_id}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def select_transform(sel: TransformSelector, image_id: str) -> Tuple[DistortionModel, int]:
    seed = image_seed(sel.master_seed, image_id)
    # Stream 0 of the per-image seed is reserved for model choice.
    u = np.random.default_rng([seed, 0]).random()
    cdf = np.cumsum(sel.weights)
    idx = int(np.searchsorted(cdf, u, side="right"))
    idx = min(idx, len(sel.enabled) - 1)
    while sel.weights[idx] == 0:  # u landed beyond a rounding-short cdf tail
        idx -= 1
    return sel.enabled[idx], seed


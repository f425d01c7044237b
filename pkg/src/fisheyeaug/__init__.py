"""Fisheye-like dataset conversion for face and license-plate detection.

Submodules:

- ``geometry``: the four distortion models, their inverses and random selection
- ``warp``: image resampling and seeded augmentations
- ``annotations``: boxes, label files and 8-point label warping
- ``fusion``: multi-teacher pseudo-label fusion
- ``evaluation``: IoU, AP50/AR50 and loss terms
- ``pipeline`` / ``cli``: batch commands
"""

from .annotations import BBox, Detection, LabeledImage, read_labels, warp_bbox, write_labels
from .evaluation import evaluate, iou
from .fusion import FusionConfig, TeacherOutput, fuse
from .geometry import (
    Circular,
    NormalizedPoint,
    PixelPoint,
    Radial,
    Rectangular,
    Tangential,
    TransformSelector,
    forward,
    inverse_map,
    select_transform,
)
from .warp import AugmentSpec, apply_augmentations, warp_image

__version__ = "0.1.0"

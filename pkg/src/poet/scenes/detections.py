"""Ground-truth and corrupted detection lists for a frame."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from ..model.types import Detection
from .scene import Frame

_MIN_SIZE = 1e-3


@dataclass(frozen=True)
class NoiseModel:
    """Detector corruption: Gaussian center/size jitter, misses and mislabels.

    ``sigma_center`` is in normalized image units (0.02 = 2% of the image),
    ``sigma_size`` is relative to the box size.
    """

    sigma_center: float = 0.0
    sigma_size: float = 0.0
    p_miss: float = 0.0
    p_cls: float = 0.0
    n_classes: int | None = None

    def __post_init__(self):
        if self.sigma_center < 0 or self.sigma_size < 0:
            raise InputError("noise scales must be non-negative")
        if not (0 <= self.p_miss <= 1 and 0 <= self.p_cls <= 1):
            raise InputError("probabilities must lie in [0, 1]")
        if self.p_cls > 0 and (self.n_classes is None or self.n_classes < 2):
            raise InputError("mislabeling needs n_classes >= 2")


def gt_detections(frame: Frame) -> list[Detection]:
    return [Detection(o.bbox, o.class_id, 1.0, o.landmark_id) for o in frame.objects]


def _clamp_box(cx, cy, w, h):
    x0, x1 = np.clip([cx - w / 2, cx + w / 2], 0.0, 1.0)
    y0, y1 = np.clip([cy - h / 2, cy + h / 2], 0.0, 1.0)
    if x1 - x0 < _MIN_SIZE:
        x0, x1 = (x0, x0 + _MIN_SIZE) if x0 + _MIN_SIZE <= 1 else (1 - _MIN_SIZE, 1.0)
    if y1 - y0 < _MIN_SIZE:
        y0, y1 = (y0, y0 + _MIN_SIZE) if y0 + _MIN_SIZE <= 1 else (1 - _MIN_SIZE, 1.0)
    return ((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)


def perturb_detections(frame: Frame, noise: NoiseModel, rng: np.random.Generator) -> list[Detection]:
    """Simulate an imperfect detector on the frame's ground-truth boxes.

    Random draws per object happen in a fixed order (miss, center, size,
    class) so results depend only on the generator state.
    """
    out = []
    for o in frame.objects:
        miss = rng.random() < noise.p_miss
        dc = rng.normal(scale=noise.sigma_center, size=2) if noise.sigma_center > 0 else np.zeros(2)
        ds = rng.normal(scale=noise.sigma_size, size=2) if noise.sigma_size > 0 else np.zeros(2)
        flip = rng.random() < noise.p_cls
        if miss:
            continue
        cx, cy, w, h = o.bbox
        box = (cx, cy, w, h)
        if noise.sigma_center > 0 or noise.sigma_size > 0:
            box = _clamp_box(cx + dc[0], cy + dc[1], w * max(1 + ds[0], 0.0), h * max(1 + ds[1], 0.0))
        cid = o.class_id
        if flip:
            others = [c for c in range(noise.n_classes) if c != cid]
            cid = int(others[rng.integers(len(others))])
        out.append(Detection(box, cid, 1.0, o.landmark_id))
    return out

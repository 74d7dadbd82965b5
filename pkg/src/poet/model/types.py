from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError


@dataclass(frozen=True)
class Detection:
    """A normalized (c_x, c_y, w, h) box with its class and score.

    ``source`` identifies the annotated object the box was derived from; the
    trainer and evaluator pair predictions with ground truth through it.
    """

    bbox: tuple[float, float, float, float]
    class_id: int
    score: float = 1.0
    source: int | None = None

    def __post_init__(self):
        bbox = tuple(float(v) for v in self.bbox)
        if len(bbox) != 4 or not all(np.isfinite(bbox)):
            raise InputError(f"bbox must be four finite numbers, got {self.bbox}")
        if not all(0.0 <= v <= 1.0 for v in bbox):
            raise InputError(f"bbox {bbox} is not normalized to [0, 1]")
        cx, cy, w, h = bbox
        if cx - w / 2 < -1e-9 or cx + w / 2 > 1 + 1e-9 or cy - h / 2 < -1e-9 or cy + h / 2 > 1 + 1e-9:
            raise InputError(f"bbox {bbox} extends beyond the image")
        if not 0.0 <= self.score <= 1.0:
            raise InputError(f"score {self.score} outside [0, 1]")
        object.__setattr__(self, "bbox", bbox)


@dataclass(frozen=True)
class PosePrediction:
    translation: np.ndarray
    rotation_6d: np.ndarray
    rotation: np.ndarray
    class_id: int

"""Translation, rotation and weighted multi-task training losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import InputError, UndefinedLossError
from .geometry import GEODESIC_EPS, geodesic_distance_tensor


@dataclass(frozen=True)
class LossWeights:
    translation: float = 2.0
    rotation: float = 1.0

    def __post_init__(self):
        if self.translation < 0 or self.rotation < 0:
            raise InputError("loss weights must be non-negative")


@dataclass
class LossTerms:
    total: T.Tensor
    translation: T.Tensor
    rotation: T.Tensor
    count: int


def translation_loss(t, t_pred) -> T.Tensor:
    """Per-object Euclidean distance ‖t − t̃‖ for [N, 3] (or [3]) inputs."""
    return T.norm(T.sub(t, t_pred), axis=-1)


def rotation_loss(R, R_pred, eps: float = GEODESIC_EPS) -> T.Tensor:
    """Per-object clamped geodesic distance for [N, 3, 3] (or [3, 3]) inputs."""
    R, R_pred = T.as_tensor(R), T.as_tensor(R_pred)
    if R.ndim == 2:
        R = T.reshape(R, (1, 3, 3))
    if R_pred.ndim == 2:
        R_pred = T.reshape(R_pred, (1, 3, 3))
    return geodesic_distance_tensor(R, R_pred, eps)


def multitask_loss(t_pred, R_pred, t_gt, R_gt, weights: LossWeights = LossWeights()) -> LossTerms:
    """λ_t·mean(L_t) + λ_rot·mean(L_rot) over every object in the batch.

    Predictions and ground truths are paired row by row; callers concatenate
    objects from all frames of a batch before calling.
    """
    t_pred, R_pred = T.as_tensor(t_pred), T.as_tensor(R_pred)
    n = t_pred.shape[0]
    if n == 0:
        raise UndefinedLossError("batch contains no objects")
    if R_pred.shape[0] != n or np.shape(t_gt)[0] != n or np.shape(R_gt)[0] != n:
        raise InputError("prediction and ground-truth counts differ")
    lt = T.mean(translation_loss(t_gt, t_pred))
    lr = T.mean(rotation_loss(R_gt, R_pred))
    total = weights.translation * lt + weights.rotation * lr
    return LossTerms(total, lt, lr, n)

"""AdamW optimization of the pose transformer on annotated frames."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, InputError, TrainingFault, UndefinedLossError
from .losses import LossWeights, multitask_loss
from .model.poet import PoET
from .scenes.detections import gt_detections

log = logging.getLogger(__name__)

CSV_HEADER = ("epoch", "step", "loss", "loss_t", "loss_rot")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-5
    batch_size: int = 16
    epochs: int = 50
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    grad_clip: float = 1.0
    lambda_t: float = 2.0
    lambda_rot: float = 1.0
    checkpoint_every: int = 0
    shuffle_detections: bool = True

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0:
            raise ConfigError("learning rate and eps must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.weight_decay < 0 or self.grad_clip < 0:
            raise ConfigError("weight_decay and grad_clip must be non-negative")
        if self.lambda_t < 0 or self.lambda_rot < 0:
            raise ConfigError("loss weights must be non-negative")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_t, self.lambda_rot)

    def to_dict(self) -> dict:
        return {**asdict(self), "version": 1}

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = {k: v for k, v in d.items() if k != "version"}
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def toy_train_config(**overrides) -> TrainConfig:
    """Settings for the desk-scale benchmark (larger steps, smaller batches)."""
    return replace(TrainConfig(lr=1e-3, batch_size=8, epochs=300), **overrides)


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
                   cfg: TrainConfig) -> tuple[dict[str, np.ndarray], AdamState]:
    """One AdamW update; parameters without a gradient entry are left untouched.

    Weight decay shrinks the parameter directly (p -= lr * wd * p) instead of
    being folded into the gradient.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingFault(f"non-finite gradient for parameter {name!r}")
    t = state.step + 1
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    new_params = dict(params)
    m, v = dict(state.m), dict(state.v)
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise InputError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        mi = cfg.beta1 * m.get(name, 0.0) + (1 - cfg.beta1) * g
        vi = cfg.beta2 * v.get(name, 0.0) + (1 - cfg.beta2) * g * g
        m[name], v[name] = mi, vi
        update = (mi / c1) / (np.sqrt(vi / c2) + cfg.eps)
        new_params[name] = p * (1.0 - cfg.lr * cfg.weight_decay) - cfg.lr * update
    return new_params, AdamState(t, m, v)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return total


@dataclass
class StepRecord:
    epoch: int
    step: int
    loss: float
    loss_t: float
    loss_rot: float


@dataclass
class TrainResult:
    steps: list[StepRecord]
    epoch_losses: list[float]
    checkpoints: list[Path]
    skipped_steps: int = 0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for r in self.steps:
                w.writerow([r.epoch, r.step, repr(r.loss), repr(r.loss_t), repr(r.loss_rot)])


def _frames(dataset) -> list:
    frames = []
    for item in dataset:
        frames.extend(item.frames if hasattr(item, "frames") else [item])
    return [f for f in frames if not f.empty]


def batch_loss(model: PoET, batch, cache: dict | None, weights: LossWeights,
               rng: np.random.Generator | None = None):
    """Forward every frame of ``batch`` on gt boxes; objects from all frames
    share one averaged loss.

    With ``rng`` the detections of each frame are presented in random order,
    as a detector would emit them, so a query slot index carries no object
    identity.
    """
    trans, rots, gt_t, gt_R = [], [], [], []
    for frame in batch:
        order = rng.permutation(len(frame.objects)) if rng is not None else range(len(frame.objects))
        objs = [frame.objects[i] for i in order]
        all_dets = gt_detections(frame)
        dets = [all_dets[i] for i in order]
        if cache is not None:
            key = id(frame)
            if key not in cache:
                cache[key] = [f.data for f in model.features(frame)]
            inputs = cache[key]
        else:
            inputs = frame
        out = model.forward(inputs, dets)
        if not len(out):
            continue
        trans.append(out.translation)
        rots.append(out.rotation)
        gt_t.extend(o.pose_cam.translation for o in objs)
        gt_R.extend(o.pose_cam.rotation for o in objs)
    if not trans:
        raise UndefinedLossError("batch contains no objects")
    t_pred = trans[0] if len(trans) == 1 else T.concat(trans, axis=0)
    R_pred = rots[0] if len(rots) == 1 else T.concat(rots, axis=0)
    return multitask_loss(t_pred, R_pred, np.array(gt_t), np.array(gt_R), weights)


def train(model: PoET, dataset, cfg: TrainConfig, out_dir=None, progress=None) -> TrainResult:
    """Train in place. Deterministic for a fixed ``cfg.seed``.

    ``dataset`` is a list of sequences or frames; frames without objects are
    skipped. When ``out_dir`` is given, writes ``loss.csv`` and checkpoints
    (every ``cfg.checkpoint_every`` epochs plus ``final.ckpt``).
    """
    frames = _frames(dataset)
    if not frames:
        raise InputError("dataset has no frames with objects")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    det_rng = np.random.default_rng([cfg.seed, 1]) if cfg.shuffle_detections else None
    params = model.trainable()
    state = AdamState()
    cache = {} if model.features_constant else None
    result = TrainResult([], [], [])
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(frames))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [frames[i] for i in order[start:start + cfg.batch_size]]
            model.zero_grad()
            try:
                terms = batch_loss(model, batch, cache, cfg.weights, det_rng)
            except UndefinedLossError:
                result.skipped_steps += 1
                continue
            T.backward(terms.total)
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            clip_global_norm(grads, cfg.grad_clip)
            new, state = optimizer_step({k: params[k].data for k in grads}, grads, state, cfg)
            for k, arr in new.items():
                params[k].data = arr
            rec = StepRecord(epoch, step, terms.total.item(), terms.translation.item(), terms.rotation.item())
            result.steps.append(rec)
            losses.append(rec.loss)
            step += 1
        result.epoch_losses.append(float(np.mean(losses)) if losses else float("nan"))
        if progress is not None:
            progress(epoch, result.epoch_losses[-1])
        log.debug("epoch %d mean loss %.6f", epoch, result.epoch_losses[-1])
        if out is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            path = out / f"epoch_{epoch + 1:04d}.ckpt"
            model.save(path)
            result.checkpoints.append(path)
    model.zero_grad()
    if out is not None:
        final = out / "final.ckpt"
        model.save(final)
        result.checkpoints.append(final)
        result.write_csv(out / "loss.csv")
    return result

"""Finite-difference utilities shared by the gradient tests."""

import numpy as np


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to every entry of ``x`` (mutated in place, restored)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def toy_scene(seed: int = 3, n_frames: int = 2, n_objects: int = 3, rasterize: bool = False):
    from poet.scenes import make_sequence

    return make_sequence("t", seed, n_frames, n_objects, "orbit", n_classes=4, rasterize=rasterize)


def frame_loss(model, raw, frame):
    """Multi-task loss of ``model`` on ``frame`` given a precomputed raw pyramid."""
    from poet.losses import multitask_loss
    from poet.scenes import gt_detections

    out = model.forward(raw, gt_detections(frame))
    t_gt = np.array([o.pose_cam.translation for o in frame.objects])
    R_gt = np.array([o.pose_cam.rotation for o in frame.objects])
    return multitask_loss(out.translation, out.rotation, t_gt, R_gt).total


def jitter_params(model, rng, scale: float = 0.05):
    """Move every parameter off its structured initialization (zero offsets, unit gains)."""
    for p in model.params.values():
        p.data = p.data + rng.normal(scale=scale, size=p.shape)

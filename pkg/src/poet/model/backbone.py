"""Feature pyramids feeding the transformer.

Two sources are available:

* ``stub``: values synthesized deterministically from a frame's annotations.
  Each object paints a fixed random projection of its pose (rotation entries,
  translation, presence) over an elliptical plateau inside its box; nearer
  objects occlude farther ones. Stands in for a frozen, pretrained detector.
* ``conv``: a three-stage strided convolutional pyramid over the rendered
  RGB image.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..errors import InputError
from .config import ModelConfig
from .layers import Init, Params

_STUB_SEED = 20230509
_CODE_DIM = 13
CONV_CHANNELS = (8, 16, 16)


def stub_projection(channels: int) -> np.ndarray:
    rng = np.random.default_rng(_STUB_SEED)
    return rng.normal(size=(channels, _CODE_DIM)) / np.sqrt(_CODE_DIM)


def stub_level_shapes(cfg: ModelConfig) -> list[tuple[int, int]]:
    gw, gh = cfg.stub_grid
    return [(gh >> lvl, gw >> lvl) for lvl in range(cfg.n_levels)]


def stub_pyramid(frame, cfg: ModelConfig) -> list[np.ndarray]:
    """Deterministic [C, H_l, W_l] maps for ``cfg.n_levels`` levels (finest first)."""
    proj = stub_projection(cfg.stub_channels)
    objs = sorted(frame.objects, key=lambda o: -o.pose_cam.translation[2])  # far to near
    levels = []
    for h, w in stub_level_shapes(cfg):
        xs = (np.arange(w) + 0.5) / w
        ys = (np.arange(h) + 0.5) / h
        gx, gy = np.meshgrid(xs, ys)
        fmap = np.zeros((cfg.stub_channels, h, w))
        for o in objs:
            cx, cy, bw, bh = o.bbox
            r = np.sqrt(((gx - cx) / (bw / 2)) ** 2 + ((gy - cy) / (bh / 2)) ** 2)
            alpha = np.clip(2.0 * (1.0 - r), 0.0, 1.0)
            code = np.concatenate([o.pose_cam.rotation.ravel(), o.pose_cam.translation, [1.0]])
            fmap = fmap * (1 - alpha) + alpha * (proj @ code)[:, None, None]
        levels.append(fmap)
    return levels


def init_conv(init: Init, trainable: bool) -> None:
    c_in = 3
    for i, c_out in enumerate(CONV_CHANNELS):
        fan_in = c_in * 9
        w = init.rng.normal(scale=np.sqrt(2.0 / fan_in), size=(c_out, c_in, 3, 3))
        init.add(f"backbone.conv{i}.weight", w, trainable)
        init.add(f"backbone.conv{i}.bias", np.zeros(c_out), trainable)
        c_in = c_out


def conv_pyramid(p: Params, image: np.ndarray, cfg: ModelConfig) -> list[T.Tensor]:
    """Run the strided conv stages on an [H, W, 3] uint8 image; returns the
    last ``cfg.n_levels`` stage outputs."""
    if image is None:
        raise InputError("conv backbone needs a rendered image")
    x = T.Tensor(np.asarray(image, dtype=np.float64).transpose(2, 0, 1) / 255.0 - 0.5)
    outs = []
    for i in range(len(CONV_CHANNELS)):
        x = T.relu(T.conv2d(x, p[f"backbone.conv{i}.weight"], p[f"backbone.conv{i}.bias"], stride=2, padding=1))
        outs.append(x)
    return outs[len(outs) - cfg.n_levels:]


def input_channels(cfg: ModelConfig) -> list[int]:
    if cfg.backbone == "stub":
        return [cfg.stub_channels] * cfg.n_levels
    return list(CONV_CHANNELS[len(CONV_CHANNELS) - cfg.n_levels:])

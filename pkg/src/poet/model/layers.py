"""Functional building blocks over a flat ``name -> Tensor`` parameter dict."""

from __future__ import annotations

import math

import numpy as np

from .. import tensor as T
from ..errors import InputError

Params = dict[str, T.Tensor]


def positional_encode(bbox, n_freq: int) -> np.ndarray:
    """Sine/cosine encoding of normalized box parameters.

    For each scalar p and k = 0..n_freq-1 emits sin(2^k π p), cos(2^k π p);
    the four parameters are concatenated, giving 8 * n_freq values. Accepts a
    single box [4] or a batch [N, 4].
    """
    b = np.asarray(bbox, dtype=np.float64)
    if b.shape[-1] != 4:
        raise InputError(f"bbox must have 4 parameters, got shape {b.shape}")
    if not np.all(np.isfinite(b)) or np.any(b < 0.0) or np.any(b > 1.0):
        raise InputError("bbox parameters must lie in [0, 1]")
    freqs = (2.0 ** np.arange(n_freq)) * np.pi
    ang = b[..., :, None] * freqs  # [..., 4, L]
    enc = np.stack([np.sin(ang), np.cos(ang)], axis=-1)  # [..., 4, L, 2]
    return enc.reshape(b.shape[:-1] + (8 * n_freq,))


# --- initialisation -------------------------------------------------------------


class Init:
    def __init__(self, params: Params, rng: np.random.Generator):
        self.params = params
        self.rng = rng

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> None:
        self.params[name] = T.Tensor(np.array(value, dtype=np.float64), requires_grad=trainable, name=name)

    def linear(self, name: str, n_in: int, n_out: int, weight=None, bias=None, trainable: bool = True) -> None:
        if weight is None:
            limit = math.sqrt(6.0 / (n_in + n_out))
            weight = self.rng.uniform(-limit, limit, size=(n_in, n_out))
        self.add(f"{name}.weight", weight, trainable)
        self.add(f"{name}.bias", np.zeros(n_out) if bias is None else bias, trainable)

    def norm(self, name: str, dim: int) -> None:
        self.add(f"{name}.gain", np.ones(dim))
        self.add(f"{name}.bias", np.zeros(dim))

    def mlp(self, name: str, n_in: int, n_hidden: int, n_out: int, out_bias=None) -> None:
        self.linear(f"{name}.0", n_in, n_hidden)
        self.linear(f"{name}.1", n_hidden, n_out, bias=out_bias)

    def deformable(self, name: str, d: int, n_heads: int, n_levels: int, n_points: int) -> None:
        theta = np.arange(n_heads) * (2.0 * math.pi / n_heads)
        grid = np.stack([np.cos(theta), np.sin(theta)], -1)
        grid = grid / np.abs(grid).max(-1, keepdims=True)
        grid = np.tile(grid[:, None, None, :], (1, n_levels, n_points, 1))
        grid *= np.arange(1, n_points + 1)[None, None, :, None]
        n_off = n_heads * n_levels * n_points
        self.linear(f"{name}.offsets", d, 2 * n_off, weight=np.zeros((d, 2 * n_off)), bias=grid.reshape(-1))
        self.linear(f"{name}.weights", d, n_off, weight=np.zeros((d, n_off)))
        self.linear(f"{name}.value", d, d)
        self.linear(f"{name}.output", d, d)

    def self_attention(self, name: str, d: int) -> None:
        for part in ("q", "k", "v", "output"):
            self.linear(f"{name}.{part}", d, d)


# --- layers ---------------------------------------------------------------------


def linear(p: Params, name: str, x):
    return T.add(T.matmul(x, p[f"{name}.weight"]), p[f"{name}.bias"])


def norm(p: Params, name: str, x, eps: float = 1e-5):
    return T.add(T.mul(T.layernorm(x, axis=-1, eps=eps), p[f"{name}.gain"]), p[f"{name}.bias"])


def mlp(p: Params, name: str, x):
    return linear(p, f"{name}.1", T.relu(linear(p, f"{name}.0", x)))


def self_attention(p: Params, name: str, x, pos, n_heads: int):
    """Multi-head attention among the rows of x (queries and keys see x + pos)."""
    n, d = x.shape
    dh = d // n_heads
    qk_in = T.add(x, pos)

    def heads(t):
        return T.transpose(T.reshape(t, (n, n_heads, dh)), (1, 0, 2))

    q = heads(linear(p, f"{name}.q", qk_in))
    k = heads(linear(p, f"{name}.k", qk_in))
    v = heads(linear(p, f"{name}.v", x))
    scores = T.mul(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
    out = T.matmul(T.softmax(scores, axis=-1), v)  # [M, N, dh]
    out = T.reshape(T.transpose(out, (1, 0, 2)), (n, d))
    return linear(p, f"{name}.output", out)


def deformable_attention(p: Params, name: str, query, ref, value_src, shapes, n_heads: int, n_points: int):
    """Multi-scale deformable attention.

    query: [N, d]; ref: [N, 2] normalized reference points; value_src: [S, d]
    flattened pyramid with per-level grid sizes ``shapes`` = [(H, W), ...].
    Each head samples ``n_points`` locations per level at ref + offset, where
    offsets are predicted from the query in units of that level's cells.
    """
    n, d = query.shape
    n_levels = len(shapes)
    dh = d // n_heads
    value = linear(p, f"{name}.value", value_src)
    off = T.reshape(linear(p, f"{name}.offsets", query), (n, n_heads, n_levels, n_points, 2))
    aw = T.softmax(T.reshape(linear(p, f"{name}.weights", query), (n, n_heads, n_levels * n_points)), axis=-1)
    aw = T.reshape(aw, (n, n_heads, n_levels, n_points))
    ref4 = T.reshape(ref, (n, 1, 1, 2))
    out = None
    start = 0
    for lvl, (h, w) in enumerate(shapes):
        v = T.getitem(value, slice(start, start + h * w))
        start += h * w
        v = T.transpose(T.reshape(v, (h, w, n_heads, dh)), (2, 3, 0, 1))
        loc = T.add(ref4, T.mul(off[:, :, lvl], np.array([1.0 / w, 1.0 / h])))
        loc = T.reshape(T.transpose(loc, (1, 0, 2, 3)), (n_heads, n * n_points, 2))
        sampled = T.reshape(T.grouped_bilinear_sample(v, loc), (n_heads, n, n_points, dh))
        wts = T.reshape(T.transpose(aw[:, :, lvl], (1, 0, 2)), (n_heads, n, n_points, 1))
        term = T.tsum(T.mul(sampled, wts), axis=2)
        out = term if out is None else T.add(out, term)
    out = T.reshape(T.transpose(out, (1, 0, 2)), (n, d))
    return linear(p, f"{name}.output", out)

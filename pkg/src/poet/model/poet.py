"""The pose estimation transformer: bbox-conditioned deformable DETR plus
translation and rotation heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import container
from .. import tensor as T
from ..errors import CapacityError, ClassError, ConfigError, DimensionError, VersionError
from ..geometry import decode_6d_tensor
from . import layers as nn
from .backbone import conv_pyramid, init_conv, input_channels, stub_pyramid
from .config import ModelConfig
from .types import Detection, PosePrediction

CHECKPOINT_KIND = "poet-checkpoint"
_ROT6D_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


@dataclass
class HeadOutput:
    translation: T.Tensor  # [N, 3]
    rotation_6d: T.Tensor  # [N, 6]
    rotation: T.Tensor  # [N, 3, 3]
    class_ids: np.ndarray

    def __len__(self) -> int:
        return self.translation.shape[0]

    def to_predictions(self) -> list[PosePrediction]:
        return [
            PosePrediction(
                self.translation.data[i].copy(),
                self.rotation_6d.data[i].copy(),
                self.rotation.data[i].copy(),
                int(self.class_ids[i]),
            )
            for i in range(len(self))
        ]


class PoET:
    """Parameters plus the forward pass.

    ``forward`` accepts either a scene frame (features are produced by the
    configured backbone) or an already computed raw pyramid.
    """

    def __init__(self, cfg: ModelConfig, params: dict[str, T.Tensor] | None = None, seed: int | None = None):
        self.cfg = cfg
        self.params = params if params is not None else self._init_params(cfg.seed if seed is None else seed)
        self._cell_tables: dict = {}

    # --- parameters ---------------------------------------------------------------
    def _init_params(self, seed: int) -> dict[str, T.Tensor]:
        cfg = self.cfg
        d, nc = cfg.d_h, cfg.n_head_classes
        params: dict[str, T.Tensor] = {}
        init = nn.Init(params, np.random.default_rng(seed))
        if cfg.backbone == "conv":
            init_conv(init, trainable=not cfg.backbone_frozen)
        for lvl, c in enumerate(input_channels(cfg)):
            init.linear(f"input_proj.{lvl}", c, d)
        init.add("level_embed", init.rng.normal(size=(cfg.n_levels, d)))
        for i in range(cfg.n_encoder_layers):
            pre = f"encoder.{i}"
            init.deformable(f"{pre}.attn", d, cfg.n_heads, cfg.n_levels, cfg.n_points)
            init.norm(f"{pre}.norm1", d)
            init.mlp(f"{pre}.ffn", d, cfg.ffn_dim, d)
            init.norm(f"{pre}.norm2", d)
        for i in range(cfg.n_decoder_layers):
            pre = f"decoder.{i}"
            init.self_attention(f"{pre}.self_attn", d)
            init.norm(f"{pre}.norm1", d)
            init.deformable(f"{pre}.cross_attn", d, cfg.n_heads, cfg.n_levels, cfg.n_points)
            init.norm(f"{pre}.norm2", d)
            init.mlp(f"{pre}.ffn", d, cfg.ffn_dim, d)
            init.norm(f"{pre}.norm3", d)
        if cfg.query_mode == "learned":
            init.add("query_embed", init.rng.normal(size=(cfg.n_queries, 2 * d)))
        if cfg.ref_point_mode == "learned":
            init.linear("ref_points", d, 2)
        init.mlp("head.translation", d, d, 3 * nc)
        init.mlp("head.rotation", d, d, 6 * nc, out_bias=np.tile(_ROT6D_IDENTITY, nc))
        return params

    def trainable(self) -> dict[str, T.Tensor]:
        return {k: v for k, v in self.params.items() if v.requires_grad}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    @property
    def features_constant(self) -> bool:
        """True when backbone output does not depend on trainable parameters."""
        return self.cfg.backbone == "stub" or self.cfg.backbone_frozen

    # --- backbone ---------------------------------------------------------------------
    def features(self, frame) -> list[T.Tensor]:
        """Raw backbone pyramid for a frame (before input projection)."""
        if self.cfg.backbone == "stub":
            return [T.Tensor(m) for m in stub_pyramid(frame, self.cfg)]
        return conv_pyramid(self.params, frame.image, self.cfg)

    def project_input(self, raw: list) -> list[T.Tensor]:
        """Map each raw level [C_l, H, W] to [d_h, H, W]."""
        if len(raw) != self.cfg.n_levels:
            raise ConfigError(f"expected {self.cfg.n_levels} pyramid levels, got {len(raw)}")
        out = []
        for lvl, fmap in enumerate(raw):
            fmap = T.as_tensor(fmap)
            c, h, w = fmap.shape
            flat = T.transpose(T.reshape(fmap, (c, h * w)), (1, 0))
            proj = nn.linear(self.params, f"input_proj.{lvl}", flat)
            out.append(T.reshape(T.transpose(proj, (1, 0)), (self.cfg.d_h, h, w)))
        return out

    # --- transformer ------------------------------------------------------------------
    @staticmethod
    def _flatten(pyramid: list) -> tuple[T.Tensor, list[tuple[int, int]]]:
        shapes, flat = [], []
        for fmap in pyramid:
            fmap = T.as_tensor(fmap)
            c, h, w = fmap.shape
            shapes.append((h, w))
            flat.append(T.transpose(T.reshape(fmap, (c, h * w)), (1, 0)))
        return (flat[0] if len(flat) == 1 else T.concat(flat, axis=0)), shapes

    @staticmethod
    def _unflatten(src: T.Tensor, shapes) -> list[T.Tensor]:
        out, start = [], 0
        for h, w in shapes:
            lvl = T.getitem(src, slice(start, start + h * w))
            start += h * w
            out.append(T.reshape(T.transpose(lvl, (1, 0)), (src.shape[1], h, w)))
        return out

    def _cells(self, shapes) -> tuple[np.ndarray, np.ndarray]:
        key = tuple(shapes)
        if key not in self._cell_tables:
            refs, encs = [], []
            for h, w in shapes:
                gx, gy = np.meshgrid((np.arange(w) + 0.5) / w, (np.arange(h) + 0.5) / h)
                ref = np.stack([gx.ravel(), gy.ravel()], 1)
                box = np.column_stack([ref, np.full(len(ref), 1.0 / w), np.full(len(ref), 1.0 / h)])
                refs.append(ref)
                encs.append(nn.positional_encode(box, self.cfg.pos_frequencies))
            self._cell_tables[key] = (np.concatenate(refs), encs)
        return self._cell_tables[key]

    def _encode_flat(self, src: T.Tensor, shapes) -> T.Tensor:
        cfg, p = self.cfg, self.params
        ref, encs = self._cells(shapes)
        pos = T.concat(
            [T.add(enc, p["level_embed"][lvl]) for lvl, enc in enumerate(encs)], axis=0
        ) if len(encs) > 1 else T.add(encs[0], p["level_embed"][0])
        for i in range(cfg.n_encoder_layers):
            pre = f"encoder.{i}"
            attn = nn.deformable_attention(p, f"{pre}.attn", T.add(src, pos), ref, src, shapes, cfg.n_heads, cfg.n_points)
            src = nn.norm(p, f"{pre}.norm1", T.add(src, attn))
            src = nn.norm(p, f"{pre}.norm2", T.add(src, nn.mlp(p, f"{pre}.ffn", src)))
        return src

    def encode(self, pyramid: list) -> list[T.Tensor]:
        """Deformable self-attention over all cells of a d_h-channel pyramid."""
        if len(pyramid) != self.cfg.n_levels:
            raise ConfigError(f"expected {self.cfg.n_levels} pyramid levels, got {len(pyramid)}")
        src, shapes = self._flatten(pyramid)
        if src.shape[1] != self.cfg.d_h:
            raise DimensionError(f"pyramid has {src.shape[1]} channels, expected d_h = {self.cfg.d_h}")
        return self._unflatten(self._encode_flat(src, shapes), shapes)

    def queries(self, detections: list[Detection]) -> tuple[T.Tensor, T.Tensor, T.Tensor]:
        """(target, query position, reference points) for the decoder."""
        cfg, p = self.cfg, self.params
        n = len(detections)
        boxes = np.array([det.bbox for det in detections], dtype=np.float64).reshape(n, 4)
        if cfg.query_mode == "bbox_encoded":
            enc = T.Tensor(nn.positional_encode(boxes, cfg.pos_frequencies))
            tgt, qpos = enc, enc
        else:
            emb = p["query_embed"][:n]
            qpos, tgt = emb[:, : cfg.d_h], emb[:, cfg.d_h:]
        if cfg.ref_point_mode == "bbox_center":
            ref = T.Tensor(boxes[:, :2])
        else:
            ref = T.sigmoid(nn.linear(p, "ref_points", qpos))
        return tgt, qpos, ref

    def _decode_flat(self, memory: T.Tensor, shapes, detections: list[Detection]) -> T.Tensor:
        cfg, p = self.cfg, self.params
        if len(detections) > cfg.n_queries:
            raise CapacityError(f"{len(detections)} detections exceed n_queries = {cfg.n_queries}")
        if not detections:
            return T.Tensor(np.zeros((0, cfg.d_h)))
        tgt, qpos, ref = self.queries(detections)
        for i in range(cfg.n_decoder_layers):
            pre = f"decoder.{i}"
            sa = nn.self_attention(p, f"{pre}.self_attn", tgt, qpos, cfg.n_heads)
            tgt = nn.norm(p, f"{pre}.norm1", T.add(tgt, sa))
            ca = nn.deformable_attention(
                p, f"{pre}.cross_attn", T.add(tgt, qpos), ref, memory, shapes, cfg.n_heads, cfg.n_points
            )
            tgt = nn.norm(p, f"{pre}.norm2", T.add(tgt, ca))
            tgt = nn.norm(p, f"{pre}.norm3", T.add(tgt, nn.mlp(p, f"{pre}.ffn", tgt)))
        return tgt

    def decode(self, memory: list, detections: list[Detection]) -> T.Tensor:
        """One d_h embedding per detection, conditioned on the memory pyramid."""
        flat, shapes = self._flatten(memory)
        return self._decode_flat(flat, shapes, detections)

    def heads(self, embeddings: T.Tensor, class_ids) -> HeadOutput:
        cfg, p = self.cfg, self.params
        cls = np.asarray(class_ids, dtype=np.int64).reshape(-1)
        n = embeddings.shape[0]
        if len(cls) != n:
            raise DimensionError(f"{n} embeddings but {len(cls)} class ids")
        if n == 0:
            z = np.zeros((0,))
            return HeadOutput(T.Tensor(z.reshape(0, 3)), T.Tensor(z.reshape(0, 6)), T.Tensor(z.reshape(0, 3, 3)), cls)
        trans = nn.mlp(p, "head.translation", embeddings)
        rot6 = nn.mlp(p, "head.rotation", embeddings)
        if cfg.class_mode == "specific":
            if np.any(cls < 0) or np.any(cls >= cfg.n_classes):
                raise ClassError(f"class ids {cls.tolist()} invalid for {cfg.n_classes} classes")
            rows = np.arange(n)
            trans = T.reshape(trans, (n, cfg.n_classes, 3))[rows, cls]
            rot6 = T.reshape(rot6, (n, cfg.n_classes, 6))[rows, cls]
        return HeadOutput(trans, rot6, decode_6d_tensor(rot6), cls)

    # --- end to end ----------------------------------------------------------------
    def forward(self, inputs, detections: list[Detection]) -> HeadOutput:
        """Backbone (unless ``inputs`` is a raw pyramid) -> encoder -> decoder -> heads."""
        raw = inputs if isinstance(inputs, (list, tuple)) else self.features(inputs)
        src, shapes = self._flatten(self.project_input(raw))
        memory = self._encode_flat(src, shapes)
        emb = self._decode_flat(memory, shapes, detections)
        return self.heads(emb, [det.class_id for det in detections])

    def predict(self, inputs, detections: list[Detection]) -> list[PosePrediction]:
        return self.forward(inputs, detections).to_predictions()

    # --- persistence ----------------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def save(self, path) -> None:
        meta = {"kind": CHECKPOINT_KIND, "model_config": self.cfg.to_dict()}
        container.save(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path) -> PoET:
        tensors, meta = container.load(path)
        if meta.get("kind") != CHECKPOINT_KIND or "model_config" not in meta:
            raise VersionError(f"{path}: not a model checkpoint")
        cfg = ModelConfig.from_dict(meta["model_config"])
        model = cls(cfg)
        expected = set(model.params)
        if set(tensors) != expected:
            missing, extra = sorted(expected - set(tensors)), sorted(set(tensors) - expected)
            raise VersionError(f"{path}: parameter mismatch (missing {missing[:3]}, unexpected {extra[:3]})")
        for name, arr in tensors.items():
            ref = model.params[name]
            if arr.shape != ref.shape:
                raise VersionError(f"{path}: {name} has shape {arr.shape}, expected {ref.shape}")
            ref.data = np.array(arr, dtype=np.float64)
        return model

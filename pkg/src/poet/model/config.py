from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

from ..errors import ConfigError, VersionError

CONFIG_VERSION = 1
N_BBOX_PARAMS = 4

CLASS_MODES = ("agnostic", "specific")
QUERY_MODES = ("bbox_encoded", "learned")
REF_POINT_MODES = ("bbox_center", "learned")
BACKBONES = ("stub", "conv")
ABLATIONS = ("baseline", "agnostic", "small", "rp", "q", "rp+q")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``pos_frequencies`` is the number of sine/cosine frequency bands per bbox
    parameter; the bbox embedding has 2 * 4 * pos_frequencies entries, which
    must equal ``d_h``.
    """

    d_h: int = 256
    n_heads: int = 16
    n_encoder_layers: int = 5
    n_decoder_layers: int = 5
    pos_frequencies: int = 32
    n_levels: int = 3
    n_points: int = 4
    n_queries: int = 20
    ffn_dim: int = 1024
    class_mode: str = "specific"
    n_classes: int = 21
    query_mode: str = "bbox_encoded"
    ref_point_mode: str = "bbox_center"
    backbone: str = "stub"
    backbone_frozen: bool = True
    stub_channels: int = 16
    stub_grid: tuple[int, int] = (16, 12)
    seed: int = 0

    def __post_init__(self):
        if 2 * N_BBOX_PARAMS * self.pos_frequencies != self.d_h:
            raise ConfigError(
                f"2 * {N_BBOX_PARAMS} * pos_frequencies = {2 * N_BBOX_PARAMS * self.pos_frequencies} "
                f"must equal d_h = {self.d_h}"
            )
        if self.n_heads < 1 or self.d_h % self.n_heads:
            raise ConfigError(f"d_h = {self.d_h} is not divisible by n_heads = {self.n_heads}")
        for name in ("n_encoder_layers", "n_decoder_layers", "n_points", "n_queries", "ffn_dim", "stub_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 1 <= self.n_levels <= 3:
            raise ConfigError("n_levels must be between 1 and 3")
        if self.class_mode not in CLASS_MODES:
            raise ConfigError(f"class_mode must be one of {CLASS_MODES}")
        if self.class_mode == "specific" and self.n_classes < 1:
            raise ConfigError("class-specific heads need n_classes >= 1")
        if self.query_mode not in QUERY_MODES:
            raise ConfigError(f"query_mode must be one of {QUERY_MODES}")
        if self.ref_point_mode not in REF_POINT_MODES:
            raise ConfigError(f"ref_point_mode must be one of {REF_POINT_MODES}")
        if self.backbone not in BACKBONES:
            raise ConfigError(f"backbone must be one of {BACKBONES}")
        gw, gh = self.stub_grid
        if gw % (1 << (self.n_levels - 1)) or gh % (1 << (self.n_levels - 1)):
            raise ConfigError("stub_grid must be divisible by 2**(n_levels - 1)")

    @property
    def head_dim(self) -> int:
        return self.d_h // self.n_heads

    @property
    def n_head_classes(self) -> int:
        return self.n_classes if self.class_mode == "specific" else 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stub_grid"] = list(self.stub_grid)
        d["version"] = CONFIG_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        d = dict(d)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise VersionError(f"model config version {version}, expected {CONFIG_VERSION}")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        for key in ("stub_grid",):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def with_ablation(self, name: str) -> ModelConfig:
        """Apply one of the ablation presets (baseline, agnostic, small, rp, q, rp+q)."""
        if name == "baseline":
            return self
        if name == "agnostic":
            return replace(self, class_mode="agnostic")
        if name == "small":
            def shrink(n):
                return max(1, min(3, n - 1))
            return replace(
                self,
                n_encoder_layers=shrink(self.n_encoder_layers),
                n_decoder_layers=shrink(self.n_decoder_layers),
            )
        if name == "rp":
            return replace(self, ref_point_mode="learned")
        if name == "q":
            return replace(self, query_mode="learned")
        if name == "rp+q":
            return replace(self, ref_point_mode="learned", query_mode="learned")
        raise ConfigError(f"unknown ablation {name!r}; choose from {ABLATIONS}")


def full_scale_config(**overrides) -> ModelConfig:
    """Full-size architecture (d_h=256, 16 heads, 5+5 layers, L=32)."""
    return replace(ModelConfig(), **overrides)


def toy_config(**overrides) -> ModelConfig:
    """Desk-scale architecture used by the tests and the synthetic benchmark."""
    base = ModelConfig(
        d_h=32,
        n_heads=4,
        n_encoder_layers=1,
        n_decoder_layers=1,
        pos_frequencies=4,
        n_levels=2,
        n_points=4,
        n_queries=10,
        ffn_dim=64,
        n_classes=4,
    )
    return replace(base, **overrides)

from .config import ABLATIONS, ModelConfig, full_scale_config, toy_config
from .layers import positional_encode
from .poet import HeadOutput, PoET
from .types import Detection, PosePrediction

__all__ = [
    "ABLATIONS",
    "Detection",
    "HeadOutput",
    "ModelConfig",
    "PoET",
    "PosePrediction",
    "full_scale_config",
    "positional_encode",
    "toy_config",
]

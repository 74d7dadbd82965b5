from .annotations import load_dataset, load_sequence, save_dataset, save_sequence
from .detections import NoiseModel, gt_detections, perturb_detections
from .primitives import ObjectModel, Symmetry, build_model, default_library, symmetry_group
from .scene import (
    TRAJECTORIES,
    Frame,
    FrameObject,
    Landmark,
    Sequence,
    WorldLayout,
    default_intrinsics,
    generate_scene,
    make_dataset,
    make_sequence,
    rasterize_frame,
    render_frame,
    toy_benchmark,
    trajectory,
    verify_sequence,
)

__all__ = [
    "TRAJECTORIES",
    "Frame",
    "FrameObject",
    "Landmark",
    "NoiseModel",
    "ObjectModel",
    "Sequence",
    "Symmetry",
    "WorldLayout",
    "build_model",
    "default_intrinsics",
    "default_library",
    "generate_scene",
    "gt_detections",
    "load_dataset",
    "load_sequence",
    "make_dataset",
    "make_sequence",
    "perturb_detections",
    "rasterize_frame",
    "render_frame",
    "save_dataset",
    "save_sequence",
    "symmetry_group",
    "toy_benchmark",
    "trajectory",
    "verify_sequence",
]

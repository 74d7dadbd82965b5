"""World layouts, camera trajectories and per-frame ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError, PackingError
from ..geometry import CameraIntrinsics, Pose, look_at, project, random_rotation
from .primitives import CLASS_COLORS, ObjectModel, default_library

DEFAULT_BOUNDS = ((-0.25, 0.25), (-0.25, 0.25), (0.0, 0.08))
NEAR_PLANE = 0.05
MIN_BOX_PIXELS = 2.0


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=90.0, fy=90.0, cx=48.0, cy=36.0, width=96, height=72)


@dataclass
class Landmark:
    landmark_id: int
    class_id: int
    pose: Pose  # object in world


@dataclass
class WorldLayout:
    landmarks: list[Landmark]
    models: dict[int, ObjectModel]


@dataclass
class FrameObject:
    landmark_id: int
    class_id: int
    pose_world: Pose
    pose_cam: Pose
    bbox: tuple[float, float, float, float]  # normalized (cx, cy, w, h)


@dataclass
class Frame:
    frame_id: int
    intrinsics: CameraIntrinsics
    camera_pose: Pose  # camera in world
    objects: list[FrameObject] = field(default_factory=list)
    image: np.ndarray | None = None  # [H, W, 3] uint8

    @property
    def empty(self) -> bool:
        return not self.objects


@dataclass
class Sequence:
    name: str
    intrinsics: CameraIntrinsics
    layout: WorldLayout
    frames: list[Frame]
    trajectory: dict = field(default_factory=dict)

    @property
    def models(self) -> dict[int, ObjectModel]:
        return self.layout.models


# --- layout -----------------------------------------------------------------------


def generate_scene(seed: int, n_objects: int, bounds=DEFAULT_BOUNDS,
                   models: dict[int, ObjectModel] | None = None, max_tries: int = 2000) -> WorldLayout:
    """Place ``n_objects`` random-class objects without overlap.

    Two objects overlap when their centers are closer than the sum of their
    bounding radii. Orientations are uniform on SO(3).
    """
    if n_objects < 1:
        raise InputError("n_objects must be >= 1")
    models = models or default_library()
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in bounds], dtype=np.float64)
    hi = np.array([b[1] for b in bounds], dtype=np.float64)
    classes = sorted(models)
    placed: list[Landmark] = []
    tries = 0
    while len(placed) < n_objects:
        if tries >= max_tries:
            raise PackingError(f"could not place {n_objects} objects in {bounds} after {max_tries} tries")
        tries += 1
        cid = int(classes[rng.integers(len(classes))])
        center = rng.uniform(lo, hi)
        R = random_rotation(rng)
        r = models[cid].radius
        if all(np.linalg.norm(center - lm.pose.translation) > r + models[lm.class_id].radius for lm in placed):
            placed.append(Landmark(len(placed), cid, Pose(R, center)))
    return WorldLayout(placed, models)


# --- trajectories ------------------------------------------------------------------

TRAJECTORY_KINDS = ("orbit", "dolly", "walk")
TRAJECTORIES = tuple(f"{kind}-{i}" for kind in TRAJECTORY_KINDS for i in range(4))
_TARGET = np.array([0.0, 0.0, 0.04])


def trajectory(name: str, n_frames: int, seed: int = 0) -> list[Pose]:
    """Camera-in-world poses for one of the 12 canned trajectories.

    ``name`` is ``<kind>-<variant>`` with kind in orbit/dolly/walk and variant
    0..3; a bare kind picks variant ``seed % 4``.
    """
    if name in TRAJECTORY_KINDS:
        name = f"{name}-{seed % 4}"
    if name not in TRAJECTORIES:
        raise InputError(f"unknown trajectory {name!r}; choose from {TRAJECTORIES}")
    if n_frames < 1:
        raise InputError("n_frames must be >= 1")
    kind, variant = name.split("-")
    v = int(variant)
    s = np.linspace(0.0, 1.0, n_frames)
    if kind == "orbit":
        radius = 0.65 + 0.1 * v
        height = 0.45 + 0.05 * v
        span = (1.0 + 0.5 * v) * np.pi / 2
        direction = 1.0 if v % 2 == 0 else -1.0
        az = direction * span * s + 0.4 * v
        eyes = np.stack([radius * np.cos(az), radius * np.sin(az), np.full(n_frames, height)], 1)
    elif kind == "dolly":
        az = np.pi / 4 + v * np.pi / 2
        dist = 1.05 - 0.4 * s
        elev = 0.6 + 0.08 * v
        eyes = np.stack(
            [dist * np.cos(elev) * np.cos(az), dist * np.cos(elev) * np.sin(az), dist * np.sin(elev)], 1
        )
    else:
        rng = np.random.default_rng(1000 + 17 * v + seed)
        steps = rng.normal(scale=[0.08, 0.03, 0.02], size=(n_frames, 3))
        steps[0] = 0.0
        az, elev, dist = (np.cumsum(steps, axis=0) + [v * np.pi / 2, 0.65, 0.8]).T
        elev = np.clip(elev, 0.35, 1.2)
        dist = np.clip(dist, 0.6, 1.1)
        eyes = np.stack(
            [dist * np.cos(elev) * np.cos(az), dist * np.cos(elev) * np.sin(az), dist * np.sin(elev)], 1
        )
    return [look_at(e, _TARGET) for e in eyes]


# --- rendering ---------------------------------------------------------------------


def bbox_from_points(intr: CameraIntrinsics, pts_cam: np.ndarray):
    """Clamped projection bound of camera-frame points.

    Returns normalized (cx, cy, w, h) plus the unclamped pixel bound, or None
    when the clamped box is thinner than MIN_BOX_PIXELS.
    """
    uv = project(intr, pts_cam)
    x0, y0 = uv.min(0)
    x1, y1 = uv.max(0)
    cx0, cx1 = np.clip([x0, x1], 0.0, intr.width)
    cy0, cy1 = np.clip([y0, y1], 0.0, intr.height)
    if cx1 - cx0 < MIN_BOX_PIXELS or cy1 - cy0 < MIN_BOX_PIXELS:
        return None
    W, H = intr.width, intr.height
    bbox = ((cx0 + cx1) / (2 * W), (cy0 + cy1) / (2 * H), (cx1 - cx0) / W, (cy1 - cy0) / H)
    return tuple(float(v) for v in bbox), (x0, y0, x1, y1)


def render_frame(layout: WorldLayout, camera_pose: Pose, intr: CameraIntrinsics,
                 frame_id: int = 0, rasterize: bool = False) -> Frame:
    """Ground truth for one camera pose; an object is kept when it lies fully
    in front of the camera and its clamped box is at least MIN_BOX_PIXELS wide."""
    cam_inv = camera_pose.inverse()
    objects = []
    for lm in layout.landmarks:
        pose_cam = cam_inv.compose(lm.pose)
        pts = pose_cam.apply(layout.models[lm.class_id].points)
        if np.any(pts[:, 2] <= NEAR_PLANE):
            continue
        res = bbox_from_points(intr, pts)
        if res is None:
            continue
        objects.append(FrameObject(lm.landmark_id, lm.class_id, lm.pose, pose_cam, res[0]))
    frame = Frame(frame_id, intr, camera_pose, objects)
    if rasterize:
        frame.image = rasterize_frame(frame, layout.models)
    return frame


_LIGHT = np.array([-0.3, -0.5, -1.0]) / np.linalg.norm([-0.3, -0.5, -1.0])


def rasterize_frame(frame: Frame, models: dict[int, ObjectModel]) -> np.ndarray:
    """Flat-shaded point splatting into an [H, W, 3] uint8 image.

    Splats are drawn far-to-near so the nearest surface wins each pixel.
    """
    intr = frame.intrinsics
    H, W = intr.height, intr.width
    img = np.full((H, W, 3), 40.0)
    us, vs, zs, cols = [], [], [], []
    for obj in frame.objects:
        model = models[obj.class_id]
        pts = obj.pose_cam.apply(model.points)
        nrm = model.normals @ obj.pose_cam.rotation.T
        shade = 0.25 + 0.75 * np.clip(-(nrm @ _LIGHT), 0.0, 1.0)
        color = CLASS_COLORS[obj.class_id % len(CLASS_COLORS)][None, :] * shade[:, None]
        uv = np.floor(project(intr, pts)).astype(np.int64)
        for du in (0, 1):
            for dv in (0, 1):
                us.append(uv[:, 0] + du)
                vs.append(uv[:, 1] + dv)
                zs.append(pts[:, 2])
                cols.append(color)
    if us:
        u, v, z, c = (np.concatenate(a) for a in (us, vs, zs, cols))
        ok = (u >= 0) & (u < W) & (v >= 0) & (v < H)
        order = np.argsort(-z[ok], kind="stable")
        img[v[ok][order], u[ok][order]] = c[ok][order]
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def make_sequence(name: str, seed: int, n_frames: int, n_objects: int, trajectory_name: str = "orbit",
                  n_classes: int = 4, intr: CameraIntrinsics | None = None, rasterize: bool = False) -> Sequence:
    intr = intr or default_intrinsics()
    layout = generate_scene(seed, n_objects, models=default_library(n_classes))
    poses = trajectory(trajectory_name, n_frames, seed)
    frames = [render_frame(layout, p, intr, i, rasterize) for i, p in enumerate(poses)]
    desc = {"name": trajectory_name if "-" in trajectory_name else f"{trajectory_name}-{seed % 4}", "seed": seed}
    return Sequence(name, intr, layout, frames, desc)


def make_dataset(seed: int, n_sequences: int, n_frames: int, n_objects: int, trajectory_kind: str = "mixed",
                 n_classes: int = 4, rasterize: bool = False) -> list[Sequence]:
    """Several sequences with derived seeds. ``mixed`` cycles through the 12
    canned trajectories, alternating kinds; a kind picks variant i % 4; a full name is reused."""
    if n_sequences < 1:
        raise InputError("n_sequences must be >= 1")
    seqs = []
    for i in range(n_sequences):
        if trajectory_kind == "mixed":
            name = f"{TRAJECTORY_KINDS[i % 3]}-{(i // 3) % 4}"
        elif trajectory_kind in TRAJECTORY_KINDS:
            name = f"{trajectory_kind}-{i % 4}"
        else:
            name = trajectory_kind
        seqs.append(make_sequence(f"seq_{i:03d}", seed * 1000 + i, n_frames, n_objects, name, n_classes,
                                  rasterize=rasterize))
    return seqs


def toy_benchmark(seed: int = 0, rasterize: bool = False) -> list[Sequence]:
    """The 64-frame, 4-class desk benchmark: 4 sequences x 16 frames x 4 objects."""
    return make_dataset(seed, 4, 16, 4, "mixed", 4, rasterize)


# --- invariant checks --------------------------------------------------------------


def verify_sequence(seq: Sequence, tol: float = 1e-9) -> list[str]:
    """Return human-readable violations of the frame invariants (empty if valid)."""
    problems = []
    ids = [f.frame_id for f in seq.frames]
    if any(b <= a for a, b in zip(ids, ids[1:])):
        problems.append(f"{seq.name}: frame ids are not strictly increasing")
    world = {lm.landmark_id: lm for lm in seq.layout.landmarks}
    for f in seq.frames:
        cam_inv = f.camera_pose.inverse()
        for o in f.objects:
            tag = f"{seq.name}/frame {f.frame_id}/landmark {o.landmark_id}"
            expect = cam_inv.compose(world[o.landmark_id].pose)
            if (np.abs(expect.rotation - o.pose_cam.rotation).max() > tol
                    or np.abs(expect.translation - o.pose_cam.translation).max() > tol):
                problems.append(f"{tag}: camera-frame pose disagrees with world poses")
            if not all(0.0 <= v <= 1.0 for v in o.bbox):
                problems.append(f"{tag}: bbox outside [0, 1]")
                continue
            pts = o.pose_cam.apply(seq.models[o.class_id].points)
            res = bbox_from_points(f.intrinsics, pts)
            if res is None or np.abs(np.subtract(res[0], o.bbox)).max() > tol:
                problems.append(f"{tag}: bbox is not the clamped projection bound")
                continue
            problems.extend(f"{tag}: {p}" for p in _tightness(f.intrinsics, pts, o.bbox))
    return problems


def _tightness(intr: CameraIntrinsics, pts: np.ndarray, bbox) -> list[str]:
    uv = project(intr, pts)
    cx, cy, w, h = bbox
    x0, x1 = (cx - w / 2) * intr.width, (cx + w / 2) * intr.width
    y0, y1 = (cy - h / 2) * intr.height, (cy + h / 2) * intr.height
    out = []
    # sides clamped at the image border are exempt
    if x0 > 1e-9 and not np.any(uv[:, 0] < x0 + 2):
        out.append("left side not tight")
    if x1 < intr.width - 1e-9 and not np.any(uv[:, 0] > x1 - 2):
        out.append("right side not tight")
    if y0 > 1e-9 and not np.any(uv[:, 1] < y0 + 2):
        out.append("top side not tight")
    if y1 < intr.height - 1e-9 and not np.any(uv[:, 1] > y1 - 2):
        out.append("bottom side not tight")
    return out

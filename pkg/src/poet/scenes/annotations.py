"""JSON annotation files for synthetic sequences.

Layout of one sequence directory::

    scene_meta.json        intrinsics, class library, landmark world poses
    frames/NNNNNN.json     camera pose plus per-object pose and bbox
    frames/NNNNNN.ppm      optional rendering

A dataset directory holds one sub-directory per sequence.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ParseError
from ..geometry import CameraIntrinsics, Pose, is_rotation
from .primitives import build_model
from .scene import Frame, FrameObject, Landmark, Sequence, WorldLayout

FORMAT_VERSION = 1


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _pose_dict(prefix: str, pose: Pose) -> dict:
    return {f"R_{prefix}": pose.rotation.tolist(), f"t_{prefix}": pose.translation.tolist()}


def meta_dict(seq: Sequence) -> dict:
    intr = seq.intrinsics
    return {
        "version": FORMAT_VERSION,
        "name": seq.name,
        "intrinsics": {
            "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "width": intr.width, "height": intr.height,
        },
        "trajectory": seq.trajectory,
        "objects": [seq.models[c].spec() for c in sorted(seq.models)],
        "landmarks": [
            {"landmark_id": lm.landmark_id, "class_id": lm.class_id, **_pose_dict("wo", lm.pose)}
            for lm in seq.layout.landmarks
        ],
    }


def frame_dict(frame: Frame) -> dict:
    return {
        "frame_id": frame.frame_id,
        **_pose_dict("wc", frame.camera_pose),
        "objects": [
            {
                "landmark_id": o.landmark_id,
                "class_id": o.class_id,
                "bbox": list(o.bbox),
                **_pose_dict("co", o.pose_cam),
            }
            for o in frame.objects
        ],
    }


def write_ppm(path: Path, image: np.ndarray) -> None:
    h, w, _ = image.shape
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + image.astype(np.uint8).tobytes())


def read_ppm(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    parts = blob.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P6":
        raise ParseError(f"{path}: not a binary PPM")
    w, h = int(parts[1]), int(parts[2])
    data = parts[4]
    return np.frombuffer(data[: w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()


def save_sequence(seq: Sequence, directory) -> list[Path]:
    """Write a sequence; returns the written file paths in a stable order."""
    root = Path(directory)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    written = [root / "scene_meta.json"]
    written[0].write_text(_dump(meta_dict(seq)), encoding="utf-8")
    for f in seq.frames:
        p = root / "frames" / f"{f.frame_id:06d}.json"
        p.write_text(_dump(frame_dict(f)), encoding="utf-8")
        written.append(p)
        if f.image is not None:
            img = root / "frames" / f"{f.frame_id:06d}.ppm"
            write_ppm(img, f.image)
            written.append(img)
    return written


# --- loading -------------------------------------------------------------------------


def _field(d: dict, key: str, where: str):
    if key not in d:
        raise ParseError(f"{where}: missing field {key!r}")
    return d[key]


def _pose(d: dict, prefix: str, where: str) -> Pose:
    try:
        R = np.array(_field(d, f"R_{prefix}", where), dtype=np.float64)
        t = np.array(_field(d, f"t_{prefix}", where), dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: malformed pose R_{prefix}/t_{prefix}: {exc}") from exc
    if R.shape != (3, 3) or t.shape != (3,):
        raise ParseError(f"{where}: pose R_{prefix}/t_{prefix} has wrong shape")
    if not is_rotation(R, tol=1e-6):
        raise ParseError(f"{where}: R_{prefix} is not a rotation matrix")
    if not np.all(np.isfinite(t)):
        raise ParseError(f"{where}: t_{prefix} is not finite")
    return Pose(R, t)


def _read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def load_sequence(directory, load_images: bool = True) -> Sequence:
    root = Path(directory)
    meta_path = root / "scene_meta.json"
    if not meta_path.exists():
        raise ParseError(f"{root}: no scene_meta.json")
    meta = _read_json(meta_path)
    where = str(meta_path)
    if _field(meta, "version", where) != FORMAT_VERSION:
        raise ParseError(f"{where}: unsupported annotation version {meta['version']}")
    try:
        intr = CameraIntrinsics(**_field(meta, "intrinsics", where))
        models = {}
        for spec in _field(meta, "objects", where):
            m = build_model(spec)
            models[m.class_id] = m
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: {exc}") from exc
    landmarks = []
    for i, d in enumerate(_field(meta, "landmarks", where)):
        lw = f"{where}: landmark #{i}"
        cid = int(_field(d, "class_id", lw))
        if cid not in models:
            raise ParseError(f"{lw}: unknown class_id {cid}")
        landmarks.append(Landmark(int(_field(d, "landmark_id", lw)), cid, _pose(d, "wo", lw)))
    layout = WorldLayout(landmarks, models)
    by_id = {lm.landmark_id: lm for lm in landmarks}
    frames = []
    for path in sorted((root / "frames").glob("*.json")):
        fd = _read_json(path)
        fw = f"{path} (frame {fd.get('frame_id', '?')})"
        frame = Frame(int(_field(fd, "frame_id", fw)), intr, _pose(fd, "wc", fw))
        for j, od in enumerate(_field(fd, "objects", fw)):
            ow = f"{fw}: object #{j}"
            lid = int(_field(od, "landmark_id", ow))
            if lid not in by_id:
                raise ParseError(f"{ow}: unknown landmark_id {lid}")
            bbox = _field(od, "bbox", ow)
            if (not isinstance(bbox, list) or len(bbox) != 4
                    or not all(isinstance(v, (int, float)) and 0.0 <= v <= 1.0 for v in bbox)):
                raise ParseError(f"{ow}: field 'bbox' out of range or malformed: {bbox}")
            frame.objects.append(
                FrameObject(lid, int(_field(od, "class_id", ow)), by_id[lid].pose,
                            _pose(od, "co", ow), tuple(float(v) for v in bbox))
            )
        img = path.with_suffix(".ppm")
        if load_images and img.exists():
            frame.image = read_ppm(img)
        frames.append(frame)
    return Sequence(str(meta.get("name", root.name)), intr, layout, frames, dict(meta.get("trajectory", {})))


def save_dataset(sequences: list[Sequence], directory) -> list[Path]:
    root = Path(directory)
    written = []
    for seq in sequences:
        written.extend(save_sequence(seq, root / seq.name))
    return written


def load_dataset(directory, load_images: bool = True) -> list[Sequence]:
    root = Path(directory)
    if (root / "scene_meta.json").exists():
        return [load_sequence(root, load_images)]
    dirs = sorted(p for p in root.iterdir() if (p / "scene_meta.json").exists()) if root.is_dir() else []
    if not dirs:
        raise ParseError(f"{root}: no sequences found")
    return [load_sequence(d, load_images) for d in dirs]

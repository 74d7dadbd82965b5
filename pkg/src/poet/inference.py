"""Running a trained model over sequences and (de)serializing its predictions.

Predictions are nested dicts: sequence name -> frame_id -> landmark_id -> Pose
(object pose in the camera frame). On disk::

    {"version": 1, "sequences": {"<name>": {"<frame_id>": {"<landmark_id>": {"R_co": ..., "t_co": ...}}}}}
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .errors import ParseError
from .geometry import Pose, is_rotation
from .model.poet import PoET
from .scenes.detections import NoiseModel, gt_detections, perturb_detections

FORMAT_VERSION = 1
THREADS_ENV = "POET_THREADS"


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def frame_detections(frame, mode: str, noise: NoiseModel | None, seed: int, seq_index: int):
    if mode == "gt":
        return gt_detections(frame)
    # one generator per (sequence, frame): results do not depend on scheduling order
    rng = np.random.default_rng([seed, seq_index, frame.frame_id])
    return perturb_detections(frame, noise or NoiseModel(), rng)


def predict_sequence(model: PoET, seq, mode: str = "gt", noise: NoiseModel | None = None,
                     seed: int = 0, seq_index: int = 0, threads: int | None = None) -> dict:
    """{frame_id: {landmark_id: Pose}} for one sequence. Frames are independent
    and may be processed on ``threads`` worker threads."""

    def one(frame):
        dets = frame_detections(frame, mode, noise, seed, seq_index)
        if not dets:
            return frame.frame_id, {}
        preds = model.predict(frame, dets)
        return frame.frame_id, {d.source: Pose(p.rotation, p.translation) for d, p in zip(dets, preds)}

    n = threads or thread_count()
    if n > 1:
        with ThreadPoolExecutor(n) as pool:
            items = list(pool.map(one, seq.frames))
    else:
        items = [one(f) for f in seq.frames]
    return dict(items)


def predict_dataset(model: PoET, dataset, mode: str = "gt", noise: NoiseModel | None = None,
                    seed: int = 0, threads: int | None = None) -> dict:
    return {seq.name: predict_sequence(model, seq, mode, noise, seed, i, threads) for i, seq in enumerate(dataset)}


def gt_predictions(dataset) -> dict:
    """Predictions equal to the annotations (perfect estimator)."""
    return {
        seq.name: {f.frame_id: {o.landmark_id: o.pose_cam for o in f.objects} for f in seq.frames}
        for seq in dataset
    }


def predictions_to_dict(preds: dict) -> dict:
    return {
        "version": FORMAT_VERSION,
        "sequences": {
            name: {
                str(fid): {
                    str(lid): {"R_co": p.rotation.tolist(), "t_co": p.translation.tolist()}
                    for lid, p in sorted(objs.items())
                }
                for fid, objs in sorted(frames.items())
            }
            for name, frames in sorted(preds.items())
        },
    }


def save_predictions(preds: dict, path) -> None:
    Path(path).write_text(json.dumps(predictions_to_dict(preds), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_predictions(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("version") != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported predictions version {doc.get('version') if isinstance(doc, dict) else None}")
    out = {}
    for name, frames in doc.get("sequences", {}).items():
        out[name] = {}
        for fid, objs in frames.items():
            fd = out[name].setdefault(int(fid), {})
            for lid, rec in objs.items():
                where = f"{path}: sequence {name!r} frame {fid} landmark {lid}"
                try:
                    R = np.array(rec["R_co"], dtype=np.float64)
                    t = np.array(rec["t_co"], dtype=np.float64)
                except (KeyError, TypeError, ValueError) as exc:
                    raise ParseError(f"{where}: malformed pose ({exc})") from exc
                if R.shape != (3, 3) or t.shape != (3,) or not is_rotation(R, 1e-6) or not np.all(np.isfinite(t)):
                    raise ParseError(f"{where}: invalid pose")
                fd[int(lid)] = Pose(R, t)
    return out

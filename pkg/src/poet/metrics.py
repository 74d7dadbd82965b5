"""Pose-estimation metrics: ADD, ADD-S, exact AUC and symmetry-aware rotation error."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .geometry import Pose, decompose_error_about_axis, rotation_angle
from .scenes.primitives import ObjectModel, Symmetry, symmetry_group

MAX_THRESHOLD = 0.10
_NN_CHUNK = 512


def _points(model) -> np.ndarray:
    pts = np.asarray(model.points if hasattr(model, "points") else model, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise InputError("model has no points")
    return pts


def add_distance(model, pose_gt: Pose, pose_est: Pose) -> float:
    """Mean distance between corresponding model points under the two poses."""
    pts = _points(model)
    d = pose_gt.apply(pts) - pose_est.apply(pts)
    return float(np.linalg.norm(d, axis=1).mean())


def adds_distance(model, pose_gt: Pose, pose_est: Pose) -> float:
    """Mean closest-point distance from gt-posed to est-posed points (exact brute force)."""
    pts = _points(model)
    a = pose_gt.apply(pts)
    b = pose_est.apply(pts)
    best = np.empty(len(a))
    for s in range(0, len(a), _NN_CHUNK):
        diff = a[s:s + _NN_CHUNK, None, :] - b[None, :, :]
        best[s:s + _NN_CHUNK] = np.sqrt((diff * diff).sum(-1).min(1))
    return float(best.mean())


def auc(distances, max_threshold: float = MAX_THRESHOLD) -> float:
    """Area under the accuracy/threshold curve on [0, max_threshold], scaled to 100.

    The accuracy curve is the empirical CDF of ``distances``, so the area is
    exactly mean(max(0, 1 - d / max_threshold)). Infinite distances
    contribute nothing.
    """
    d = np.asarray(list(distances), dtype=np.float64)
    if d.size == 0:
        raise InputError("auc of an empty distance list")
    if max_threshold <= 0:
        raise InputError("max_threshold must be positive")
    if np.isnan(d).any() or (d < 0).any():
        raise InputError("distances must be non-negative numbers")
    return float(np.clip(1.0 - d / max_threshold, 0.0, None).mean() * 100.0)


def _symmetries(symmetries) -> list[Symmetry]:
    out = []
    for s in symmetries or []:
        if isinstance(s, Symmetry):
            out.append(s)
            continue
        try:
            out.append(Symmetry.from_dict(s))
        except (KeyError, TypeError, AttributeError) as exc:
            raise InputError(f"malformed symmetry descriptor {s!r}") from exc
    return out


def symmetry_reduced_rotation_error(R_gt, R_est, symmetries) -> float:
    """Rotation error in degrees after discounting declared object symmetries.

    The error rotation is taken in the object frame (R_gt^T R_est). Each
    element g of the discrete symmetry group gives an equivalent ground
    truth; with a continuous axis the rotation about that axis is discarded
    and only the swing remains. The result is the minimum over equivalents,
    so it never exceeds the plain geodesic error.
    """
    syms = _symmetries(symmetries)
    E = np.asarray(R_gt, dtype=np.float64).T @ np.asarray(R_est, dtype=np.float64)
    plain = rotation_angle(E)
    cont = [np.asarray(s.axis) for s in syms if s.continuous]
    if len(cont) > 1 and any(np.linalg.norm(np.cross(cont[0], c)) > 1e-9 for c in cont[1:]):
        return 0.0  # two independent continuous axes: every orientation is equivalent
    best = plain
    for g in symmetry_group(syms):
        M = g.T @ E
        err = decompose_error_about_axis(M, cont[0])[1] if cont else rotation_angle(M)
        best = min(best, err)
    return float(np.degrees(best))


# --- dataset evaluation -------------------------------------------------------------------


@dataclass
class ObjectRecord:
    sequence: str
    frame_id: int
    landmark_id: int
    class_id: int
    missing: bool
    add: float
    adds: float
    t_err_cm: float
    rot_err_deg: float
    sym_rot_err_deg: float


RECORD_FIELDS = ("sequence", "frame_id", "landmark_id", "class_id", "missing",
                 "add", "adds", "t_err_cm", "rot_err_deg", "sym_rot_err_deg")
ROW_FIELDS = ("class", "count", "missing", "auc_add", "auc_adds", "t_err_cm", "rot_err_deg", "sym_rot_err_deg")


def aggregate(records: list[ObjectRecord], label: str, max_threshold: float = MAX_THRESHOLD) -> dict:
    """One report row. AUCs count missing objects as beyond the threshold;
    mean errors are over found objects only (NaN when none were found)."""
    found = [r for r in records if not r.missing]

    def mean(key):
        return float(np.mean([getattr(r, key) for r in found])) if found else float("nan")

    return {
        "class": label,
        "count": len(records),
        "missing": len(records) - len(found),
        "auc_add": auc([r.add for r in records], max_threshold),
        "auc_adds": auc([r.adds for r in records], max_threshold),
        "t_err_cm": mean("t_err_cm"),
        "rot_err_deg": mean("rot_err_deg"),
        "sym_rot_err_deg": mean("sym_rot_err_deg"),
    }


def _num(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


@dataclass
class EvalReport:
    rows: list[dict]
    records: list[ObjectRecord]
    metadata: dict = field(default_factory=dict)

    def row(self, label) -> dict:
        for r in self.rows:
            if r["class"] == str(label):
                return r
        raise KeyError(label)

    @property
    def overall(self) -> dict:
        return self.row("ALL")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(ROW_FIELDS)
            for r in self.rows:
                w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in ROW_FIELDS])

    def write_records_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RECORD_FIELDS)
            for rec in self.records:
                vals = [getattr(rec, k) for k in RECORD_FIELDS]
                w.writerow([repr(v) if isinstance(v, float) else int(v) if isinstance(v, bool) else v for v in vals])

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "rows": [{k: _num(v) for k, v in r.items()} for r in self.rows],
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def object_record(seq_name: str, frame_id: int, obj, model: ObjectModel, est: Pose | None) -> ObjectRecord:
    if est is None:
        inf = float("inf")
        return ObjectRecord(seq_name, frame_id, obj.landmark_id, obj.class_id, True, inf, inf, inf, inf, inf)
    gt = obj.pose_cam
    return ObjectRecord(
        seq_name, frame_id, obj.landmark_id, obj.class_id, False,
        add_distance(model, gt, est),
        adds_distance(model, gt, est),
        float(np.linalg.norm(gt.translation - est.translation) * 100.0),
        float(np.degrees(rotation_angle(gt.rotation.T @ est.rotation))),
        symmetry_reduced_rotation_error(gt.rotation, est.rotation, model.symmetries),
    )


def evaluate(dataset, predictions: dict, max_threshold: float = MAX_THRESHOLD) -> EvalReport:
    """Score predictions against every annotated object of ``dataset``.

    ``predictions`` maps sequence name -> frame_id -> landmark_id -> camera-frame
    object Pose. Objects without a prediction are scored at infinite distance
    and tallied as missing. The ALL row weights every object equally.
    """
    records = []
    for seq in dataset:
        seq_pred = predictions.get(seq.name, {})
        for frame in seq.frames:
            fp = seq_pred.get(frame.frame_id, {})
            for obj in frame.objects:
                records.append(object_record(seq.name, frame.frame_id, obj, seq.models[obj.class_id], fp.get(obj.landmark_id)))
    rows = []
    for cid in sorted({r.class_id for r in records}):
        rows.append(aggregate([r for r in records if r.class_id == cid], str(cid), max_threshold))
    if records:
        rows.append(aggregate(records, "ALL", max_threshold))
    meta = {
        "aggregation": "per-object",
        "max_threshold_m": max_threshold,
        "missing_policy": "distance=inf, counted beyond threshold, mean errors over found objects",
        "objects": len(records),
        "missing": sum(r.missing for r in records),
    }
    return EvalReport(rows, records, meta)

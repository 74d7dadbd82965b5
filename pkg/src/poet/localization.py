"""Camera localization from object-relative pose estimates.

Every landmark with a known world pose and an estimated camera-frame pose
gives one camera-pose hypothesis. Hypotheses of a frame are fused with one
of four strategies:

* ``all``: mean over every hypothesis;
* ``out``: mean over the largest agreement cluster;
* ``prev``: like ``out``, but equal-size clusters are resolved by closeness to
  the previous frame's estimate;
* ``best``: the candidate closest to ground truth (an oracle upper bound).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError, InputError
from .geometry import Pose, axis_angle, camera_pose_from_landmark, euler_zyx, rotation_angle, rotation_mean

STRATEGIES = ("all", "out", "prev", "best")
CSV_HEADER = ("frame", "x_err", "y_err", "z_err", "yaw_err", "roll_err", "pitch_err", "strategy", "n_hyp", "n_used")


@dataclass(frozen=True)
class Hypothesis:
    landmark_id: int
    pose: Pose
    flags: dict = field(default_factory=dict)


@dataclass
class HypothesisSet:
    frame_id: int
    hypotheses: list[Hypothesis]

    def __len__(self) -> int:
        return len(self.hypotheses)


@dataclass(frozen=True)
class FusionConfig:
    strategy: str = "out"
    tau_t: float = 0.05
    tau_R_deg: float = 10.0
    carry_prev: bool = True

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown fusion strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.tau_t <= 0 or self.tau_R_deg <= 0:
            raise ConfigError("cluster thresholds must be positive")


def hypotheses_for_frame(frame_id: int, landmarks: dict[int, Pose], estimates: dict[int, Pose],
                         flags: dict[int, dict] | None = None) -> HypothesisSet:
    """One camera-pose hypothesis per estimated landmark, ordered by landmark id."""
    hyps = []
    for lid in sorted(estimates):
        if lid not in landmarks:
            raise InputError(f"frame {frame_id}: unknown landmark id {lid}")
        pose = camera_pose_from_landmark(landmarks[lid], estimates[lid])
        hyps.append(Hypothesis(lid, pose, dict((flags or {}).get(lid, {}))))
    return HypothesisSet(frame_id, hyps)


def mean_pose(poses: list[Pose]) -> Pose:
    return Pose(rotation_mean([p.rotation for p in poses]), np.mean([p.translation for p in poses], axis=0))


def pose_distance(a: Pose, b: Pose, cfg: FusionConfig) -> float:
    """Threshold-normalized distance: translation / tau_t + angle / tau_R."""
    return (float(np.linalg.norm(a.translation - b.translation)) / cfg.tau_t
            + np.degrees(rotation_angle(a.rotation.T @ b.rotation)) / cfg.tau_R_deg)


def clusters(h: HypothesisSet, cfg: FusionConfig) -> list[list[int]]:
    """Single-linkage clusters (indices into ``h.hypotheses``) of the graph
    joining hypotheses within both tau_t and tau_R of each other."""
    n = len(h)
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = h.hypotheses[i].pose, h.hypotheses[j].pose
            close_t = np.linalg.norm(a.translation - b.translation) <= cfg.tau_t
            close_R = np.degrees(rotation_angle(a.rotation.T @ b.rotation)) <= cfg.tau_R_deg
            adj[i, j] = adj[j, i] = close_t and close_R
    _, labels = connected_components(adj, directed=False)
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    return list(groups.values())


def _spread(poses: list[Pose], centre: Pose, cfg: FusionConfig) -> float:
    return float(np.mean([pose_distance(p, centre, cfg) for p in poses]))


@dataclass
class FusionResult:
    pose: Pose | None
    used: tuple[int, ...]

    @property
    def n_used(self) -> int:
        return len(self.used)


def fuse_detailed(h: HypothesisSet, cfg: FusionConfig, prev: Pose | None = None,
                  truth: Pose | None = None) -> FusionResult:
    """Fused camera pose plus the landmark ids it was computed from."""
    if cfg.strategy == "best" and truth is None:
        raise ConfigError("strategy 'best' needs the ground-truth camera pose")
    if not len(h):
        return FusionResult(None, ())
    hyps = h.hypotheses
    ids = [x.landmark_id for x in hyps]
    everything = FusionResult(mean_pose([x.pose for x in hyps]), tuple(sorted(ids)))
    if cfg.strategy == "all":
        return everything

    cands = []
    for members in clusters(h, cfg):
        poses = [hyps[i].pose for i in members]
        centre = mean_pose(poses)
        lids = tuple(sorted(ids[i] for i in members))
        cands.append((len(members), _spread(poses, centre, cfg), lids, FusionResult(centre, lids)))

    if cfg.strategy in ("out", "prev"):
        use_prev = cfg.strategy == "prev" and prev is not None

        def key(c):
            closeness = pose_distance(c[3].pose, prev, cfg) if use_prev else 0.0
            return (-c[0], closeness, c[1], c[2][0])

        return min(cands, key=key)[3]

    # best: every individual hypothesis, every cluster mean and the overall mean
    pool = [FusionResult(x.pose, (x.landmark_id,)) for x in hyps] + [c[3] for c in cands] + [everything]

    def err(r):
        return (float(np.linalg.norm(r.pose.translation - truth.translation)),
                rotation_angle(truth.rotation.T @ r.pose.rotation), r.used)

    return min(pool, key=err)


def fuse(h: HypothesisSet, cfg: FusionConfig, prev: Pose | None = None, truth: Pose | None = None) -> Pose | None:
    """Fused camera pose, or None (no estimate) for an empty hypothesis set."""
    return fuse_detailed(h, cfg, prev, truth).pose


# --- trajectories ---------------------------------------------------------------------


@dataclass
class FrameError:
    frame_id: int
    x_err: float
    y_err: float
    z_err: float
    yaw_err: float
    roll_err: float
    pitch_err: float
    n_hyp: int
    n_used: int
    excluded: bool = False


_AXES = ("x_err", "y_err", "z_err", "yaw_err", "roll_err", "pitch_err")


def pose_errors(est: Pose, truth: Pose) -> tuple[float, ...]:
    """Absolute per-axis position errors (mm) and Z-Y-X attitude errors of the
    estimate relative to the truth (degrees), ordered x, y, z, yaw, roll, pitch."""
    d = np.abs(est.translation - truth.translation) * 1000.0
    yaw, pitch, roll = euler_zyx(truth.rotation.T @ est.rotation)
    return (float(d[0]), float(d[1]), float(d[2]),
            float(abs(np.degrees(yaw))), float(abs(np.degrees(roll))), float(abs(np.degrees(pitch))))


def _stats(values: list[float]) -> tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    arr = np.asarray(values)
    return float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0


@dataclass
class TrajectoryReport:
    strategy: str
    frames: list[FrameError]
    sequence: str = ""

    @property
    def used_frames(self) -> list[FrameError]:
        return [f for f in self.frames if not f.excluded]

    @property
    def n_excluded(self) -> int:
        return sum(f.excluded for f in self.frames)

    def stats(self) -> dict[str, tuple[float, float]]:
        """Sample mean and standard deviation per error axis over non-excluded frames."""
        used = self.used_frames
        return {k: _stats([getattr(f, k) for f in used]) for k in _AXES}

    def mean_position_error(self) -> float:
        """Mean Euclidean camera-position error in mm."""
        used = self.used_frames
        if not used:
            return float("nan")
        return float(np.mean([np.sqrt(f.x_err ** 2 + f.y_err ** 2 + f.z_err ** 2) for f in used]))

    def csv_rows(self) -> list[list]:
        rows = []
        for f in self.frames:
            vals = ["" if f.excluded else repr(getattr(f, k)) for k in _AXES]
            rows.append([f.frame_id, *vals, self.strategy, f.n_hyp, f.n_used])
        return rows

    def to_dict(self) -> dict:
        return {
            "sequence": self.sequence,
            "strategy": self.strategy,
            "frames": len(self.frames),
            "excluded": self.n_excluded,
            "mean_position_error_mm": _finite(self.mean_position_error()),
            "stats": {k: {"mean": _finite(m), "std": _finite(s)} for k, (m, s) in self.stats().items()},
        }


def _finite(v: float):
    return None if not np.isfinite(v) else v


def write_trajectory_csv(reports: list[TrajectoryReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in reports:
            w.writerows(r.csv_rows())


def write_trajectory_json(reports: list[TrajectoryReport], path) -> None:
    doc = {"version": 1, "reports": [r.to_dict() for r in reports]}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def run_sequence(seq, predictions: dict, cfg: FusionConfig) -> TrajectoryReport:
    """Fuse every frame of ``seq`` and compare with the true camera poses.

    ``predictions`` maps frame_id -> landmark_id -> estimated camera-frame
    object pose. Frames without any estimate are excluded from the
    statistics and counted. With ``cfg.carry_prev`` the last available
    estimate is threaded into the next frame.
    """
    frame_ids = {f.frame_id for f in seq.frames}
    stray = sorted(set(predictions) - frame_ids)
    if stray:
        raise InputError(f"sequence {seq.name!r}: predictions for unknown frames {stray[:5]}")
    landmarks = {lm.landmark_id: lm.pose for lm in seq.layout.landmarks}
    prev = None
    out = []
    for frame in seq.frames:
        h = hypotheses_for_frame(frame.frame_id, landmarks, predictions.get(frame.frame_id, {}))
        res = fuse_detailed(h, cfg, prev, frame.camera_pose)
        if res.pose is None:
            nan = float("nan")
            out.append(FrameError(frame.frame_id, nan, nan, nan, nan, nan, nan, 0, 0, True))
            continue
        out.append(FrameError(frame.frame_id, *pose_errors(res.pose, frame.camera_pose), len(h), res.n_used))
        if cfg.carry_prev:
            prev = res.pose
    return TrajectoryReport(cfg.strategy, out, seq.name)


def perturb_pose(pose: Pose, rng: np.random.Generator, sigma_t: float, sigma_deg: float) -> Pose:
    axis = rng.normal(size=3)
    R = pose.rotation @ axis_angle(axis, np.radians(rng.normal(scale=sigma_deg)))
    return Pose(R, pose.translation + rng.normal(scale=sigma_t, size=3))


def outlier_predictions(seq, seed: int = 0, outlier_fraction: float = 0.2, offset: float = 1.0,
                        angle_deg: float = 90.0, sigma_t: float = 0.005, sigma_deg: float = 0.5) -> dict:
    """Relative-pose estimates for every landmark of ``seq`` in every frame.

    Inlier estimates imply camera poses jittered by (sigma_t, sigma_deg);
    a fraction ``outlier_fraction`` of landmarks per frame (at least one)
    imply camera poses exactly ``offset`` meters and ``angle_deg`` degrees
    away from the truth.
    """
    rng = np.random.default_rng(seed)
    lms = sorted(seq.layout.landmarks, key=lambda lm: lm.landmark_id)
    n_out = max(1, int(round(outlier_fraction * len(lms))))
    preds = {}
    for frame in seq.frames:
        truth = frame.camera_pose
        bad = set(rng.choice(len(lms), size=n_out, replace=False).tolist())
        fp = {}
        for i, lm in enumerate(lms):
            if i in bad:
                d = rng.normal(size=3)
                cam = Pose(truth.rotation @ axis_angle(rng.normal(size=3), np.radians(angle_deg)),
                           truth.translation + offset * d / np.linalg.norm(d))
            else:
                cam = perturb_pose(truth, rng, sigma_t, sigma_deg)
            fp[lm.landmark_id] = cam.inverse().compose(lm.pose)
        preds[frame.frame_id] = fp
    return preds

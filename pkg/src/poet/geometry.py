"""Rotations, rigid poses, the pinhole camera and the 6D rotation encoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation as _Rot

from . import tensor as T
from .errors import DegeneracyError, InputError

GEODESIC_EPS = 1e-6
_DEGENERATE = 1e-9


@dataclass(frozen=True)
class Pose:
    """Rigid transform x -> R x + t (object-in-camera or camera-in-world)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise InputError("pose translation must be finite")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> Pose:
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> Pose:
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: Pose) -> Pose:
        """self ∘ other, i.e. apply ``other`` first."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InputError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise InputError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])


# --- rotation constructors and checks ----------------------------------------


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about ``axis`` by ``angle`` radians."""
    u = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(u)
    if n < _DEGENERATE:
        raise InputError("rotation axis must be non-zero")
    u = u / n
    K = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def random_rotation(rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Uniform samples on SO(3)."""
    return _Rot.random(n, random_state=rng).as_matrix()


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    R = np.asarray(R)
    return bool(np.linalg.norm(R.T @ R - np.eye(3)) < tol and np.linalg.det(R) > 0)


def orthonormalize(M: np.ndarray) -> np.ndarray:
    """Closest rotation in Frobenius norm (polar projection with det fix)."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    return U @ D @ Vt


# --- 6D representation --------------------------------------------------------


def decode_6d(r) -> np.ndarray:
    """Gram–Schmidt map from (a1, a2) to a rotation with columns (b1, b2, b3).

    Accepts a single 6-vector or a batch [..., 6]; returns [..., 3, 3].
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != 6:
        raise InputError(f"6D rotation needs a trailing dimension of 6, got {r.shape}")
    a1, a2 = r[..., :3], r[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 < _DEGENERATE):
        raise DegeneracyError("first 6D column has (near) zero norm")
    b1 = a1 / n1
    u = a2 - (b1 * a2).sum(-1, keepdims=True) * b1
    n2 = np.linalg.norm(u, axis=-1, keepdims=True)
    if np.any(n2 < _DEGENERATE):
        raise DegeneracyError("second 6D column is parallel to the first")
    b2 = u / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def encode_6d(R) -> np.ndarray:
    """First two columns of R, concatenated."""
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def _cross(a: T.Tensor, b: T.Tensor) -> T.Tensor:
    i, j = [1, 2, 0], [2, 0, 1]
    return a[..., i] * b[..., j] - a[..., j] * b[..., i]


def decode_6d_tensor(r: T.Tensor) -> T.Tensor:
    """Differentiable :func:`decode_6d` for a Tensor[N, 6] -> Tensor[N, 3, 3]."""
    a1 = r[:, 0:3]
    a2 = r[:, 3:6]
    n1 = T.norm(a1, axis=-1, keepdims=True)
    if np.any(n1.data < _DEGENERATE):
        raise DegeneracyError("first 6D column has (near) zero norm")
    b1 = a1 / n1
    u = a2 - T.tsum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = T.norm(u, axis=-1, keepdims=True)
    if np.any(n2.data < _DEGENERATE):
        raise DegeneracyError("second 6D column is parallel to the first")
    b2 = u / n2
    b3 = _cross(b1, b2)
    return T.stack([b1, b2, b3], axis=-1)


# --- distances ------------------------------------------------------------------


def geodesic_distance(R_a, R_b, eps: float = GEODESIC_EPS):
    """Angle of R_a R_bᵀ, with the arccos argument clamped to [-1+eps, 1-eps].

    Works on single matrices or batches [..., 3, 3].
    """
    R_a = np.asarray(R_a, dtype=np.float64)
    R_b = np.asarray(R_b, dtype=np.float64)
    cos = 0.5 * ((R_a * R_b).sum(axis=(-1, -2)) - 1.0)
    out = np.arccos(np.clip(cos, -1.0 + eps, 1.0 - eps))
    return float(out) if out.ndim == 0 else out


def geodesic_distance_tensor(R_a, R_b, eps: float = GEODESIC_EPS) -> T.Tensor:
    """Differentiable batched geodesic distance over [N, 3, 3] inputs -> [N]."""
    tr = T.tsum(T.mul(R_a, R_b), axis=(-2, -1))
    return T.arccos((tr - 1.0) * 0.5, eps=eps)


def rotation_angle(R) -> float:
    """Unclamped rotation angle of R in [0, π].

    Uses atan2 of the skew and trace parts, which stays accurate near 0
    where arccos of the trace loses half the significant digits.
    """
    R = np.asarray(R, dtype=np.float64)
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arctan2(s, c))


# --- camera ---------------------------------------------------------------------


def camera_pose_from_landmark(world_obj: Pose, rel_est: Pose) -> Pose:
    """Camera-in-world pose implied by a landmark's world pose and its
    estimated pose relative to the camera."""
    R = world_obj.rotation @ rel_est.rotation.T
    return Pose(R, world_obj.translation - R @ rel_est.translation)


def project(intr: CameraIntrinsics, point_cam) -> np.ndarray:
    """Pinhole projection of camera-frame point(s) [..., 3] to pixels [..., 2]."""
    p = np.asarray(point_cam, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= 0):
        raise InputError("point is behind the camera (z <= 0)")
    u = intr.fx * p[..., 0] / z + intr.cx
    v = intr.fy * p[..., 1] / z + intr.cy
    return np.stack([u, v], axis=-1)


def unproject(intr: CameraIntrinsics, pixel, depth) -> np.ndarray:
    px = np.asarray(pixel, dtype=np.float64)
    z = np.asarray(depth, dtype=np.float64)
    x = (px[..., 0] - intr.cx) / intr.fx * z
    y = (px[..., 1] - intr.cy) / intr.fy * z
    return np.stack([x, y, z * np.ones_like(x)], axis=-1)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-in-world pose (OpenCV axes: x right, y down, z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.stack([x, y, z], axis=1), eye)


# --- averaging and error analysis ----------------------------------------------


def rotation_mean(rs) -> np.ndarray:
    """Chordal L2 mean: arithmetic mean projected back onto SO(3)."""
    rs = [np.asarray(r, dtype=np.float64) for r in rs]
    if not rs:
        raise InputError("rotation_mean of an empty list")
    return orthonormalize(np.mean(rs, axis=0))


def _quat_wxyz(R: np.ndarray) -> np.ndarray:
    x, y, z, w = _Rot.from_matrix(R).as_quat()
    q = np.array([w, x, y, z])
    return q if w >= 0 else -q


def _quat_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return _Rot.from_quat([x, y, z, w]).as_matrix()


def twist_swing(R_err, axis) -> tuple[np.ndarray, np.ndarray]:
    """Split R_err = swing @ twist with twist a rotation about ``axis``."""
    a = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(a)
    if n < _DEGENERATE:
        raise InputError("symmetry axis must be non-zero")
    a = a / n
    q = _quat_wxyz(np.asarray(R_err, dtype=np.float64))
    proj = np.dot(q[1:], a) * a
    tw = np.concatenate([[q[0]], proj])
    tn = np.linalg.norm(tw)
    if tn < 1e-12:
        # 180° rotation about an axis perpendicular to ``axis``: no twist part
        twist = np.eye(3)
    else:
        twist = _quat_matrix(tw / tn)
    swing = np.asarray(R_err) @ twist.T
    return swing, twist


def decompose_error_about_axis(R_err, axis) -> tuple[float, float]:
    """(signed angle about ``axis``, angle of the remaining swing), radians."""
    a = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(a)
    if n < _DEGENERATE:
        raise InputError("symmetry axis must be non-zero")
    a = a / n
    q = _quat_wxyz(np.asarray(R_err, dtype=np.float64))
    about = 2.0 * np.arctan2(np.dot(q[1:], a), q[0])
    about = (about + np.pi) % (2 * np.pi) - np.pi
    swing, _ = twist_swing(R_err, a)
    return float(about), rotation_angle(swing)


def euler_zyx(R) -> tuple[float, float, float]:
    """Intrinsic Z-Y-X angles (yaw about z, pitch about y, roll about x), radians."""
    yaw, pitch, roll = _Rot.from_matrix(np.asarray(R)).as_euler("ZYX")
    return float(yaw), float(pitch), float(roll)

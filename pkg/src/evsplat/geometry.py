"""Pinhole camera model, rigid poses, and instantaneous rigid velocities.

Conventions used throughout the package:

* Poses are world-to-camera: ``p_cam = R(q) @ p_world + t`` with unit
  quaternions stored as (w, x, y, z).
* Pixel (i, j) samples the image plane at integer coordinates (x=j, y=i).
* ``RigidVelocity`` holds the camera's own twist expressed in the camera
  frame: a static world point seen from the camera moves with
  ``dp/dt = -w x p - v``.

All functions are pure; pose and intrinsics objects are treated as
immutable values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BehindCameraError",
    "InvalidDepthError",
    "InvalidIntervalError",
    "CameraIntrinsics",
    "Pose",
    "RigidVelocity",
    "quat_normalize",
    "quat_conj",
    "quat_mul",
    "quat_to_matrix",
    "quat_from_rotvec",
    "rotvec_from_quat",
    "quat_slerp",
    "project",
    "project_many",
    "unproject",
    "unproject_many",
    "relative_velocity",
    "apply_twist",
    "interpolate_pose",
]


class BehindCameraError(ValueError):
    """Point has non-positive depth in the camera frame."""


class InvalidDepthError(ValueError):
    """Unprojection requested with a non-positive depth."""


class InvalidIntervalError(ValueError):
    """Velocity requested over a non-positive time interval."""


# --------------------------------------------------------------------------
# quaternion algebra (w, x, y, z)
# --------------------------------------------------------------------------

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = np.asarray(a, dtype=np.float64)
    bw, bx, by, bz = np.asarray(b, dtype=np.float64)
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_rotvec(r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    angle = np.linalg.norm(r)
    if angle < 1e-12:
        # sin(a/2)/a ~ 1/2 - a^2/48
        half_sinc = 0.5 - angle * angle / 48.0
        return quat_normalize(np.array([1.0, *(r * half_sinc)]))
    axis = r / angle
    return np.array([np.cos(angle / 2.0), *(np.sin(angle / 2.0) * axis)])


def rotvec_from_quat(q) -> np.ndarray:
    q = quat_normalize(q)
    if q[0] < 0:
        q = -q
    vec = q[1:]
    n = np.linalg.norm(vec)
    if n < 1e-12:
        return vec * 2.0
    angle = 2.0 * np.arctan2(n, q[0])
    return vec * (angle / n)


def quat_slerp(q0, q1, u: float) -> np.ndarray:
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-10:
        return quat_normalize(q0 + u * (q1 - q0))
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    return (np.sin((1.0 - u) * theta) * q0 + np.sin(u * theta) * q1) / s


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------

@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the sensor")

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]))

    def pixel_to_normalized(self, u, v):
        """Focal-normalized coordinates x=(u-cx)/fx, y=(v-cy)/fy."""
        return (np.asarray(u) - self.cx) / self.fx, (np.asarray(v) - self.cy) / self.fy

    def normalized_to_pixel(self, x, y):
        return np.asarray(x) * self.fx + self.cx, np.asarray(y) * self.fy + self.cy


class Pose:
    """World-to-camera rigid transform with a unit quaternion rotation."""

    __slots__ = ("q", "t")

    def __init__(self, q, t):
        q = np.asarray(q, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {norm} too far from 1")
        self.q = q / norm
        self.t = t.copy()

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_camera_center(cls, q, center) -> "Pose":
        q = quat_normalize(q)
        r = quat_to_matrix(q)
        return cls(q, -r @ np.asarray(center, dtype=np.float64))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    @property
    def camera_center(self) -> np.ndarray:
        return -self.rotation.T @ self.t

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.t

    def inverse(self) -> "Pose":
        r = self.rotation
        return Pose(quat_conj(self.q), -r.T @ self.t)

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self ∘ other)(p) = self(other(p))."""
        return Pose(quat_mul(self.q, other.q), self.rotation @ other.t + self.t)

    def to_dict(self) -> dict:
        return {"q": self.q.tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.array(d["q"]), np.array(d["t"]))

    def __repr__(self):
        return f"Pose(q={self.q.tolist()}, t={self.t.tolist()})"


@dataclass
class RigidVelocity:
    """Camera twist in the camera frame: linear v_c, angular w_c."""

    v_c: np.ndarray
    w_c: np.ndarray

    def __post_init__(self):
        self.v_c = np.asarray(self.v_c, dtype=np.float64)
        self.w_c = np.asarray(self.w_c, dtype=np.float64)
        if not (np.isfinite(self.v_c).all() and np.isfinite(self.w_c).all()):
            raise ValueError("velocity components must be finite")


# --------------------------------------------------------------------------
# projection
# --------------------------------------------------------------------------

def project_many(points, pose: Pose, intr: CameraIntrinsics):
    """Project (N, 3) world points; returns pixel coords (N, 2) and depths (N,)."""
    cam = pose.apply(np.atleast_2d(points))
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[:, 0] / z + intr.cx
        v = intr.fy * cam[:, 1] / z + intr.cy
    return np.stack([u, v], axis=1), z


def project(point, pose: Pose, intr: CameraIntrinsics):
    """Project a single world point; raises if it lies behind the camera.

    Returns ((u, v), depth) with depth in the camera frame.
    """
    uv, z = project_many(np.asarray(point, dtype=np.float64)[None, :], pose, intr)
    if z[0] <= 0:
        raise BehindCameraError(f"point depth {z[0]} is not positive")
    return uv[0], float(z[0])


def unproject_many(uv, depths, pose: Pose, intr: CameraIntrinsics) -> np.ndarray:
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    depths = np.asarray(depths, dtype=np.float64)
    x = (uv[:, 0] - intr.cx) / intr.fx * depths
    y = (uv[:, 1] - intr.cy) / intr.fy * depths
    cam = np.stack([x, y, depths], axis=1)
    inv = pose.inverse()
    return cam @ inv.rotation.T + inv.t


def unproject(pixel, depth: float, pose: Pose, intr: CameraIntrinsics) -> np.ndarray:
    if depth <= 0:
        raise InvalidDepthError(f"depth must be positive, got {depth}")
    return unproject_many(np.asarray(pixel, dtype=np.float64)[None, :], [depth], pose, intr)[0]


# --------------------------------------------------------------------------
# velocities
# --------------------------------------------------------------------------

def relative_velocity(pose_t0: Pose, pose_t1: Pose, dt: float) -> RigidVelocity:
    """Instantaneous twist carrying pose_t0 toward pose_t1 over dt.

    The angular part is the principal rotation logarithm of the relative
    rotation; the linear part is the camera-center displacement expressed
    in the t0 camera frame.  Both are divided by dt.
    """
    if dt <= 0:
        raise InvalidIntervalError(f"dt must be positive, got {dt}")
    q_rel = quat_mul(pose_t0.q, quat_conj(pose_t1.q))
    w_c = rotvec_from_quat(q_rel) / dt
    v_c = pose_t0.rotation @ (pose_t1.camera_center - pose_t0.camera_center) / dt
    return RigidVelocity(v_c, w_c)


def apply_twist(pose: Pose, vel: RigidVelocity, dt: float) -> Pose:
    """Advance a pose by a camera-frame twist for time dt.

    Inverse of `relative_velocity`: relative_velocity(P, apply_twist(P, vel, dt), dt)
    returns vel exactly.
    """
    q_step = quat_from_rotvec(vel.w_c * dt)
    q1 = quat_mul(quat_conj(q_step), pose.q)
    center1 = pose.camera_center + pose.rotation.T @ (vel.v_c * dt)
    return Pose.from_camera_center(q1, center1)


def interpolate_pose(times, poses, t: float) -> Pose:
    """Piecewise slerp/lerp between keyframe poses at strictly increasing times."""
    times = np.asarray(times, dtype=np.float64)
    if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
        raise ValueError(f"time {t} outside keyframe range [{times[0]}, {times[-1]}]")
    idx = int(np.searchsorted(times, t, side="right")) - 1
    idx = max(0, min(idx, len(times) - 2))
    t0, t1 = times[idx], times[idx + 1]
    u = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
    u = min(max(u, 0.0), 1.0)
    q = quat_slerp(poses[idx].q, poses[idx + 1].q, u)
    c = (1.0 - u) * poses[idx].camera_center + u * poses[idx + 1].camera_center
    return Pose.from_camera_center(q, c)


# --------------------------------------------------------------------------
# differentiable twins of the quaternion/pose algebra
#
# Training backpropagates through pose corrections and velocities, so the
# same formulas exist as autodiff graphs.  Each twin is cross-checked
# against its numeric counterpart in the test suite.
# --------------------------------------------------------------------------

from .autodiff import Tensor, as_tensor, atan2, concat, stack, where  # noqa: E402


def quat_conj_graph(q: Tensor) -> Tensor:
    return concat([q[0:1], -q[1:4]])


def quat_mul_graph(a: Tensor, b: Tensor) -> Tensor:
    aw, ax, ay, az = a[0], a[1], a[2], a[3]
    bw, bx, by, bz = b[0], b[1], b[2], b[3]
    return stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_rotate_graph(q: Tensor, v: Tensor) -> Tensor:
    """Rotate a 3-vector by a unit quaternion: v + 2 qv x (qv x v + w v)."""
    qv = q[1:4]
    w = q[0]

    def cross(u, s):
        return stack(
            [
                u[1] * s[2] - u[2] * s[1],
                u[2] * s[0] - u[0] * s[2],
                u[0] * s[1] - u[1] * s[0],
            ]
        )

    t1 = cross(qv, v) * 2.0
    return v + w * t1 + cross(qv, t1)


def quat_from_rotvec_graph(r: Tensor) -> Tensor:
    sq = (r * r).sum()
    angle = (sq + 1e-30).sqrt()
    small = sq.data < 1e-12
    half_sinc = where(small, 0.5 - sq * (1.0 / 48.0), (angle * 0.5).sin() / angle)
    w = where(small, 1.0 - sq * 0.125, (angle * 0.5).cos())
    return concat([w.reshape(1), r * half_sinc])


def rotvec_from_quat_graph(q: Tensor) -> Tensor:
    """Principal rotation vector; expects scalar part bounded away from -1."""
    sign = 1.0 if q.data[0] >= 0 else -1.0
    q = q * sign
    vec = q[1:4]
    sq = (vec * vec).sum()
    n = (sq + 1e-30).sqrt()
    small = sq.data < 1e-12
    # 2*atan2(n, w)/n, series 2/w * (1 - sq/(3 w^2)) near zero
    w = q[0]
    factor = where(small, (2.0 / w) * (1.0 - sq / (3.0 * w * w)), 2.0 * atan2(n, w) / n)
    return vec * factor


def pose_step_graph(q0, t0, v: Tensor, w: Tensor, dt: float):
    """Differentiable `apply_twist`: advance constant pose (q0, t0) by a
    twist (v, w) held as tensors, for time dt."""
    q0 = as_tensor(q0)
    t0 = as_tensor(t0)
    q_step = quat_from_rotvec_graph(w * dt)
    qc = quat_conj_graph(q_step)
    q1 = quat_mul_graph(qc, q0)
    t1 = quat_rotate_graph(qc, t0 - v * dt)
    return q1, t1


def relative_velocity_graph(qa: Tensor, ta: Tensor, qb: Tensor, tb: Tensor, dt: float):
    """Differentiable twin of `relative_velocity` on quaternion/translation tensors."""
    q_rel = quat_mul_graph(qa, quat_conj_graph(qb))
    w = rotvec_from_quat_graph(q_rel) * (1.0 / dt)
    center_a = -quat_rotate_graph(quat_conj_graph(qa), ta)
    center_b = -quat_rotate_graph(quat_conj_graph(qb), tb)
    v = quat_rotate_graph(qa, center_b - center_a) * (1.0 / dt)
    return v, w

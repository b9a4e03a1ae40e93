"""Rigid-body algebra, pinhole camera model, and matrix decompositions.

Conventions used throughout the package:
  * quaternions are (w, x, y, z) with unit norm and w >= 0
  * camera frame: x right, y down, z forward (image row 0 is the top)
  * a WORLD_TO_CAM pose maps world/object coordinates into the camera frame
  * the principal point sits at the exact image center
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, InvalidDepth, NonOrthonormal, Singular

DEPTH_EPS = 1e-6


class PoseDirection(enum.Enum):
    WORLD_TO_CAM = "world_to_cam"
    CAM_TO_WORLD = "cam_to_world"


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Return q scaled to unit norm and flipped onto the w >= 0 hemisphere."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-12:
        raise NonOrthonormal(f"cannot normalize quaternion with norm {n}")
    q = q / n
    if q[0] < 0:
        q = -q
    return q


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) -> 3x3 rotation matrix."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if abs(n - 1.0) > 1e-6:
        raise NonOrthonormal(f"quaternion norm {n} deviates from 1")
    w, x, y, z = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """3x3 rotation matrix -> unit quaternion (w, x, y, z) with w >= 0.

    Raises NonOrthonormal if R'R deviates from identity by more than 1e-4
    (max-abs) or det(R) is not +1.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise NonOrthonormal(f"expected 3x3 matrix, got {R.shape}")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > 1e-4 or np.linalg.det(R) < 0:
        raise NonOrthonormal(f"not a rotation: |R'R - I| = {err:.3g}, det = {np.linalg.det(R):.3g}")

    # Shepperd's method: branch on the largest diagonal combination.
    trace = R[0, 0] + R[1, 1] + R[2, 2]
    if trace > 0:
        s = 0.5 / np.sqrt(trace + 1.0)
        w = 0.25 / s
        x = (R[2, 1] - R[1, 2]) * s
        y = (R[0, 2] - R[2, 0]) * s
        z = (R[1, 0] - R[0, 1]) * s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    return quat_normalize(np.array([w, x, y, z]))


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b for (w, x, y, z) quaternions (not canonicalized)."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


@dataclass(frozen=True)
class Pose:
    """Rigid transform as unit quaternion + translation with explicit direction."""

    rotation: np.ndarray
    translation: np.ndarray
    direction: PoseDirection = PoseDirection.WORLD_TO_CAM

    def __post_init__(self):
        object.__setattr__(self, "rotation", quat_normalize(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        if not np.all(np.isfinite(t)):
            raise NonOrthonormal("translation must be finite")
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity(direction: PoseDirection = PoseDirection.WORLD_TO_CAM) -> "Pose":
        return Pose(np.array([1.0, 0, 0, 0]), np.zeros(3), direction)

    @staticmethod
    def from_matrix(R: np.ndarray, t: np.ndarray,
                    direction: PoseDirection = PoseDirection.WORLD_TO_CAM) -> "Pose":
        return Pose(matrix_to_quat(R), t, direction)

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.translation
        return M

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (3,) or (N, 3) points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.R.T + self.translation

    def inverse(self) -> "Pose":
        """Inverse transform; flips the direction tag."""
        R = self.R
        flipped = (PoseDirection.CAM_TO_WORLD
                   if self.direction is PoseDirection.WORLD_TO_CAM
                   else PoseDirection.WORLD_TO_CAM)
        return Pose(matrix_to_quat(R.T), -R.T @ self.translation, flipped)

    def compose(self, other: "Pose") -> "Pose":
        """self then-applied-after other: matrix(self) @ matrix(other).

        Caller is responsible for direction compatibility; the result keeps
        self's direction tag.
        """
        q = quat_multiply(self.rotation, other.rotation)
        t = self.R @ other.translation + self.translation
        return Pose(q, t, self.direction)


def pose_compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def pose_invert(p: Pose) -> Pose:
    return p.inverse()


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics; fields-of-view in radians, principal point at center."""

    fov_x: float
    fov_y: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("fov_x", "fov_y"):
            v = getattr(self, name)
            if not (0.0 < v < np.pi):
                raise ValueError(f"{name} = {v} outside (0, pi)")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")

    @property
    def fx(self) -> float:
        return self.width / (2.0 * np.tan(self.fov_x / 2.0))

    @property
    def fy(self) -> float:
        return self.height / (2.0 * np.tan(self.fov_y / 2.0))

    @property
    def cx(self) -> float:
        return self.width / 2.0

    @property
    def cy(self) -> float:
        return self.height / 2.0

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @staticmethod
    def from_matrix(K: np.ndarray, width: int, height: int) -> "Intrinsics":
        fov_x = 2.0 * np.arctan(width / (2.0 * K[0, 0]))
        fov_y = 2.0 * np.arctan(height / (2.0 * K[1, 1]))
        return Intrinsics(fov_x, fov_y, width, height)


def project(q_cam: np.ndarray, K: Intrinsics) -> np.ndarray:
    """Project camera-frame point(s) to pixel coordinates.

    Accepts (3,) or (N, 3); raises BehindCamera when any depth <= DEPTH_EPS.
    """
    pts = np.asarray(q_cam, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    z = pts[:, 2]
    if np.any(z <= DEPTH_EPS):
        raise BehindCamera(f"depth {z.min():.3g} <= {DEPTH_EPS}")
    uv = np.empty((pts.shape[0], 2))
    uv[:, 0] = K.cx + K.fx * pts[:, 0] / z
    uv[:, 1] = K.cy + K.fy * pts[:, 1] / z
    return uv[0] if single else uv


def backproject(pixel: np.ndarray, depth: float, K: Intrinsics, T: Pose) -> np.ndarray:
    """Pixel + depth -> world point, using the inverse of the WORLD_TO_CAM pose T."""
    if depth <= 0:
        raise InvalidDepth(f"depth {depth} <= 0")
    assert T.direction is PoseDirection.WORLD_TO_CAM
    u, v = np.asarray(pixel, dtype=np.float64)
    cam = np.array([(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, depth])
    return T.inverse().apply(cam)


def backproject_grid(us: np.ndarray, vs: np.ndarray, depths: np.ndarray,
                     K: Intrinsics, T: Pose) -> np.ndarray:
    """Vectorized backprojection of many pixels (used by point-map assembly)."""
    cam = np.stack(
        [
            (us - K.cx) / K.fx * depths,
            (vs - K.cy) / K.fy * depths,
            depths,
        ],
        axis=-1,
    )
    inv = T.inverse()
    return cam @ inv.R.T + inv.translation


def nearest_rigid(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closest rotation + consistently rescaled translation for a 3x4 matrix.

    The rotation comes from the SVD of the left 3x3 block with the usual
    det correction; the translation column is divided by the mean singular
    value so that an input of the form s*[R | t] maps back to (R, t).
    """
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (3, 4):
        raise ValueError(f"expected 3x4 matrix, got {M.shape}")
    A = M[:, :3]
    U, S, Vt = np.linalg.svd(A)
    if S[2] < 1e-9 * S[0]:
        raise Singular(f"singular values {S}")
    d = np.sign(np.linalg.det(U @ Vt))
    R = U @ np.diag([1.0, 1.0, d]) @ Vt
    scale = S.mean()
    t = M[:, 3] / scale
    return R, t


@dataclass(frozen=True)
class Camera9:
    """9-vector camera record: quaternion(4) | translation(3) | fov(2).

    Always encodes a WORLD_TO_CAM pose; fov order is (fov_x, fov_y) radians.
    """

    vec: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.vec, dtype=np.float64).reshape(9).copy()
        object.__setattr__(self, "vec", v)

    @staticmethod
    def encode(pose: Pose, K: Intrinsics) -> "Camera9":
        assert pose.direction is PoseDirection.WORLD_TO_CAM
        return Camera9(np.concatenate([pose.rotation, pose.translation,
                                       [K.fov_x, K.fov_y]]))

    def decode(self, width: int, height: int) -> tuple[Pose, Intrinsics]:
        pose = Pose(self.vec[:4], self.vec[4:7], PoseDirection.WORLD_TO_CAM)
        K = Intrinsics(float(self.vec[7]), float(self.vec[8]), width, height)
        return pose, K


def rotation_angle_deg(R_a: np.ndarray, R_b: np.ndarray) -> float:
    """Geodesic angle between two rotations, in degrees."""
    c = (np.trace(R_a @ R_b.T) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def direction_angle_deg(a: np.ndarray, b: np.ndarray, eps: float = 1e-6) -> float:
    """Angle between two direction vectors in degrees.

    Near-zero vectors: both below eps -> 0 (no direction to compare);
    exactly one below eps -> 180 (maximal disagreement).
    """
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < eps and nb < eps:
        return 0.0
    if na < eps or nb < eps:
        return 180.0
    c = np.dot(a, b) / (na * nb)
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))

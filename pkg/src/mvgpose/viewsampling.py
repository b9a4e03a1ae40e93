"""Camera pose sampling around an object: low-discrepancy sphere coverage,
farthest-point / random subset selection, and off-center perturbations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadCount, NoValidPose
from .geometry import Intrinsics, Pose, PoseDirection, matrix_to_quat, project

# Camera "up" is global +Z; fall back to +Y when the viewing direction is
# (anti)parallel to Z, e.g. for the pole views.
UP_PRIMARY = np.array([0.0, 0.0, 1.0])
UP_FALLBACK = np.array([0.0, 1.0, 0.0])


def look_at_pose(position: np.ndarray, target: np.ndarray) -> Pose:
    """WORLD_TO_CAM pose for a camera at `position` looking at `target`.

    Camera axes: z toward the target, x = z x up, y completes the
    right-handed frame (points "down" in the image).
    """
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    z = target - position
    nz = np.linalg.norm(z)
    if nz < 1e-12:
        raise ValueError("camera position coincides with look-at target")
    z = z / nz
    up = UP_PRIMARY if np.linalg.norm(np.cross(z, UP_PRIMARY)) > 1e-6 else UP_FALLBACK
    x = np.cross(z, up)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    R_c2w = np.stack([x, y, z], axis=1)
    R = R_c2w.T
    return Pose(matrix_to_quat(R), -R @ position, PoseDirection.WORLD_TO_CAM)


def camera_center(pose: Pose) -> np.ndarray:
    """World-space camera center of a WORLD_TO_CAM pose."""
    assert pose.direction is PoseDirection.WORLD_TO_CAM
    return -(pose.R.T @ pose.translation)


@dataclass(frozen=True)
class ViewPoseSet:
    """Ordered WORLD_TO_CAM poses on a sphere, sharing one set of intrinsics."""

    poses: tuple[Pose, ...]
    radius: float
    intrinsics: Intrinsics

    def __len__(self) -> int:
        return len(self.poses)

    def centers(self) -> np.ndarray:
        return np.array([camera_center(p) for p in self.poses])

    def subset(self, indices) -> "ViewPoseSet":
        return ViewPoseSet(tuple(self.poses[i] for i in indices),
                           self.radius, self.intrinsics)


def radical_inverse_base2(i: int) -> float:
    """Van der Corput radical inverse of i in base 2."""
    v = 0.0
    f = 0.5
    while i > 0:
        v += (i & 1) * f
        i >>= 1
        f *= 0.5
    return v


def hammersley_sphere(n: int, radius: float, intrinsics: Intrinsics) -> ViewPoseSet:
    """n cameras on a radius-sphere via the spherical Hammersley sequence.

    Point i maps (u, v) = (i/n, radical-inverse-base-2(i)) through the
    area-preserving cylindrical map z = 1 - 2v, phi = 2*pi*u; every camera
    looks at the origin.
    """
    if n < 1:
        raise BadCount(f"n = {n} < 1")
    poses = []
    for i in range(n):
        u = i / n
        v = radical_inverse_base2(i)
        z = 1.0 - 2.0 * v
        phi = 2.0 * np.pi * u
        s = np.sqrt(max(0.0, 1.0 - z * z))
        direction = np.array([s * np.cos(phi), s * np.sin(phi), z])
        poses.append(look_at_pose(radius * direction, np.zeros(3)))
    return ViewPoseSet(tuple(poses), radius, intrinsics)


def _pairwise_angles(dirs: np.ndarray) -> np.ndarray:
    dots = np.clip(dirs @ dirs.T, -1.0, 1.0)
    return np.arccos(dots)


def fps_select_indices(candidates: ViewPoseSet, k: int,
                       seed_index: int = 0) -> list[int]:
    """Greedy farthest-point selection on camera directions (geodesic angle).

    Ties broken by lower candidate index; selection order preserved.
    """
    n = len(candidates)
    if not (1 <= k <= n):
        raise BadCount(f"k = {k} out of [1, {n}]")
    if not (0 <= seed_index < n):
        raise BadCount(f"seed_index = {seed_index} out of [0, {n})")
    dirs = candidates.centers()
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    angles = _pairwise_angles(dirs)

    selected = [seed_index]
    min_angle = angles[seed_index].copy()
    for _ in range(k - 1):
        min_angle[selected] = -1.0
        best = int(np.argmax(min_angle))  # argmax returns the lowest tied index
        selected.append(best)
        min_angle = np.minimum(min_angle, angles[best])
    return selected


def fps_select(candidates: ViewPoseSet, k: int, seed_index: int = 0) -> ViewPoseSet:
    return candidates.subset(fps_select_indices(candidates, k, seed_index))


def random_select(candidates: ViewPoseSet, k: int, rng_seed: int) -> ViewPoseSet:
    """Uniform selection of k poses without replacement, reproducible by seed."""
    n = len(candidates)
    if not (1 <= k <= n):
        raise BadCount(f"k = {k} out of [1, {n}]")
    rng = np.random.default_rng(rng_seed)
    idx = rng.choice(n, size=k, replace=False)
    return candidates.subset(idx.tolist())


def min_pairwise_angle(views: ViewPoseSet) -> float:
    """Smallest pairwise geodesic angle between camera directions (radians)."""
    dirs = views.centers()
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    ang = _pairwise_angles(dirs)
    iu = np.triu_indices(len(views), k=1)
    return float(ang[iu].min())


def visible_vertex_fraction(vertices: np.ndarray, pose: Pose, K: Intrinsics) -> float:
    """Fraction of vertices that project inside the image plane."""
    cam = pose.apply(vertices)
    in_front = cam[:, 2] > 1e-6
    if not np.any(in_front):
        return 0.0
    pts = cam[in_front]
    u = K.cx + K.fx * pts[:, 0] / pts[:, 2]
    v = K.cy + K.fy * pts[:, 1] / pts[:, 2]
    inside = (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    return float(inside.sum()) / float(len(vertices))


def perturb_uncentric(
    pose: Pose,
    vertices: np.ndarray,
    K: Intrinsics,
    rng: np.random.Generator,
    pos_jitter: float = 0.15,
    lookat_box: float = 1.05,
    min_visible: float = 0.3,
    max_attempts: int = 64,
) -> Pose:
    """Jitter a centric view so the object sits off-center but stays visible.

    Camera position moves uniformly by +-pos_jitter * radius per axis and the
    look-at target is drawn uniformly from [-lookat_box, lookat_box]^3,
    retrying until at least `min_visible` of the vertices project in frame.
    Raises NoValidPose when no candidate passes within `max_attempts`.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    if vertices.size == 0:
        raise NoValidPose("empty mesh")
    center = camera_center(pose)
    radius = np.linalg.norm(center)
    if pos_jitter == 0.0 and lookat_box == 0.0:
        return pose
    for _ in range(max_attempts):
        offset = rng.uniform(-pos_jitter * radius, pos_jitter * radius, size=3)
        target = rng.uniform(-lookat_box, lookat_box, size=3)
        position = center + offset
        if np.linalg.norm(position - target) < 1e-9:
            continue
        candidate = look_at_pose(position, target)
        if visible_vertex_fraction(vertices, candidate, K) >= min_visible:
            return candidate
    raise NoValidPose(f"no candidate with >= {min_visible:.0%} visibility "
                      f"in {max_attempts} attempts")

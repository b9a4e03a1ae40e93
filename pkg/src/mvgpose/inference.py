"""Inference chain: query preprocessing, normalized-space prediction,
metric rescaling, intrinsic-space conversion, and mask refinement glue."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .dataset import quantize_rgb
from .errors import EmptyMask
from .geometry import Camera9, Intrinsics, Pose, PoseDirection, nearest_rigid
from .meshes import Mesh, NormalizationSpec, normalize_mesh
from .network import MultiViewPoseNet, scene_from_views
from .refinement import RefineResult, refine_with_mask
from .render import rasterize_view
from .viewsampling import fps_select, hammersley_sphere


@dataclass
class QueryCase:
    """One pose-estimation problem: image + segmentation + intrinsics + mesh."""

    image: np.ndarray          # (H, W, 3) float32 in [0, 1]
    seg_mask: np.ndarray       # (H, W) uint8
    intrinsics: Intrinsics     # K_dst of the query camera
    mesh: Mesh                 # original (un-normalized) scale

    def __post_init__(self):
        if not self.seg_mask.any():
            raise EmptyMask("query segmentation is empty")


@dataclass
class PoseEstimate:
    pose: Pose                 # object-to-camera (WORLD_TO_CAM), original scale
    camera9_norm: np.ndarray   # raw network prediction in normalized space
    refine_iterations: int = 0
    final_iou: float = float("nan")
    final_chamfer: float = float("nan")


@dataclass(frozen=True)
class CropRecord:
    """Affine from crop pixel coordinates to original image coordinates:
    uv_orig = scale * uv_crop + (x0, y0)."""

    scale: float
    x0: float
    y0: float
    out_size: int

    def to_original(self, uv: np.ndarray) -> np.ndarray:
        return np.asarray(uv, dtype=np.float64) * self.scale + np.array(
            [self.x0, self.y0])

    def to_crop(self, uv: np.ndarray) -> np.ndarray:
        return (np.asarray(uv, dtype=np.float64) - np.array([self.x0, self.y0])) \
            / self.scale

    def matrix(self) -> np.ndarray:
        return np.array([[self.scale, 0.0, self.x0],
                         [0.0, self.scale, self.y0],
                         [0.0, 0.0, 1.0]])


def prepare_query(image: np.ndarray, seg_mask: np.ndarray,
                  out_size: int, margin: float = 0.1):
    """Square crop around the segmentation bbox (10% margin), resized by
    nearest neighbor to out_size. Returns (crop image, crop mask, CropRecord)."""
    ys, xs = np.nonzero(seg_mask)
    if len(ys) == 0:
        raise EmptyMask("cannot crop an empty mask")
    cx = (xs.min() + xs.max() + 1) / 2.0
    cy = (ys.min() + ys.max() + 1) / 2.0
    side = max(xs.max() - xs.min() + 1, ys.max() - ys.min() + 1)
    side = side * (1.0 + 2.0 * margin)
    x0, y0 = cx - side / 2.0, cy - side / 2.0
    scale = side / out_size
    rec = CropRecord(scale=scale, x0=x0, y0=y0, out_size=out_size)

    idx = np.arange(out_size)
    sx = np.rint(x0 + (idx + 0.5) * scale - 0.5).astype(np.int64)
    sy = np.rint(y0 + (idx + 0.5) * scale - 0.5).astype(np.int64)
    vx = (sx >= 0) & (sx < image.shape[1])
    vy = (sy >= 0) & (sy < image.shape[0])
    crop = np.zeros((out_size, out_size, 3), dtype=np.float32)
    cmask = np.zeros((out_size, out_size), dtype=np.uint8)
    yy, xx = np.meshgrid(sy.clip(0, image.shape[0] - 1),
                         sx.clip(0, image.shape[1] - 1), indexing="ij")
    valid = np.outer(vy, vx)
    crop[valid] = image[yy, xx][valid]
    cmask[valid] = seg_mask[yy, xx][valid]
    return crop, cmask, rec


def denormalize_pose(pose_norm: Pose, spec: NormalizationSpec) -> Pose:
    """Undo mesh normalization on a WORLD_TO_CAM pose.

    With q_norm = s (q - o), projective equivalence gives
    R = R_norm, t = t_norm / s - R_norm o; for o = 0 this is the plain
    translation rescale t / s.
    """
    R = pose_norm.R
    t = pose_norm.translation / spec.scale - R @ spec.offset
    return Pose(pose_norm.rotation, t, PoseDirection.WORLD_TO_CAM)


def convert_intrinsics(pose_src: Pose, K_src: np.ndarray,
                       K_dst: np.ndarray) -> Pose:
    """Move a pose between intrinsic spaces via the nearest rigid transform
    to K_dst^-1 K_src [R | t]."""
    M = np.linalg.inv(K_dst) @ K_src @ np.hstack(
        [pose_src.R, pose_src.translation[:, None]])
    R, t = nearest_rigid(M)
    return Pose.from_matrix(R, t, PoseDirection.WORLD_TO_CAM)


@dataclass
class InferenceSettings:
    n_known: int = 10
    n_candidates: int = 50
    radius: float = 3.2
    render_fov: float = 0.9
    refine: bool = True
    refine_iters: int = 100
    refine_step: float = 1e-2
    chamfer_weight: float = 0.1
    sharpness: float = 40.0


def render_known_views(mesh_norm: Mesh, settings: InferenceSettings,
                       resolution: int):
    K = Intrinsics(settings.render_fov, settings.render_fov,
                   resolution, resolution)
    cands = hammersley_sphere(settings.n_candidates, settings.radius, K)
    selected = fps_select(cands, settings.n_known)
    bundles = []
    for pose in selected.poses:
        b = rasterize_view(mesh_norm, pose, K)
        b.rgb = quantize_rgb(b.rgb)
        bundles.append(b)
    return bundles


def estimate_pose(case: QueryCase, model: MultiViewPoseNet,
                  settings: InferenceSettings | None = None,
                  predictor=None) -> PoseEstimate:
    """Full pre-refinement chain.

    Normalize the mesh, render FPS-selected known views, run the network on
    the cropped query, undo the normalization (translation / s plus the
    centering offset), and convert from the predicted intrinsic space into
    the query's K. `predictor(scene) -> (9,) ndarray` can replace the
    network (used by plumbing tests with a ground-truth oracle).
    """
    settings = settings or InferenceSettings()
    res = model.cfg.resolution
    mesh_norm, spec = normalize_mesh(case.mesh)
    knowns = render_known_views(mesh_norm, settings, res)
    crop, _, rec = prepare_query(case.image, case.seg_mask, res)

    scene = scene_from_views([crop], knowns, model.cfg)
    if predictor is None:
        model.eval()
        with torch.no_grad():
            vec = model(scene)[0].numpy()
    else:
        vec = np.asarray(predictor(scene), dtype=np.float64)

    fov = np.clip(vec[7:9], 0.05, 3.0)
    pose_norm = Pose(vec[:4], vec[4:7], PoseDirection.WORLD_TO_CAM)
    pose_orig = denormalize_pose(pose_norm, spec)

    # predicted intrinsics live in crop space; lift them through the crop
    # affine into the original image frame, then convert into K_dst
    K_pred = Intrinsics(float(fov[0]), float(fov[1]), res, res)
    K_src_full = rec.matrix() @ K_pred.matrix()
    pose_dst = convert_intrinsics(pose_orig, K_src_full,
                                  case.intrinsics.matrix())
    return PoseEstimate(pose_dst, vec.copy())


def estimate_and_refine(case: QueryCase, model: MultiViewPoseNet,
                        settings: InferenceSettings | None = None,
                        predictor=None) -> tuple[PoseEstimate, RefineResult | None]:
    settings = settings or InferenceSettings()
    est = estimate_pose(case, model, settings, predictor)
    if not settings.refine:
        return est, None
    result = refine_with_mask(est.pose, case.mesh, case.seg_mask,
                              case.intrinsics, iters=settings.refine_iters,
                              step=settings.refine_step,
                              chamfer_weight=settings.chamfer_weight,
                              sharpness=settings.sharpness)
    refined = PoseEstimate(result.pose, est.camera9_norm,
                           result.iterations, result.iou, result.chamfer)
    return refined, result

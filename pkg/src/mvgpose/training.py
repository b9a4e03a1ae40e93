"""Supervised training: pose L1 loss with known-view down-weighting,
consistency-preserving augmentations, dynamic batches, momentum descent."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import Dataset
from .errors import EmptyBatch, InsufficientViews, NonFiniteLoss
from .geometry import (
    Camera9,
    Intrinsics,
    Pose,
    direction_angle_deg,
    matrix_to_quat,
    rotation_angle_deg,
)
from .network import ModelConfig, MultiViewPoseNet, build_model, scene_from_views
from .occlusion import KINDS, apply_occlusion
from .render import ViewBundle
from .viewsampling import ViewPoseSet, fps_select_indices


@dataclass
class TrainConfig:
    steps: int = 2000
    lr_new: float = 1e-3
    lr_encoder: float = 5e-4
    momentum: float = 0.9
    warmup_steps: int = 100
    grad_clip: float = 5.0
    frame_min: int = 11
    frame_max: int = 24
    known_views: int = 10
    known_loss_weight: float = 0.5
    aug_rot3d: bool = True
    aug_rot2d: bool = True
    aug_occlusion: bool = True
    aug_photometric: bool = True
    occlusion_prob: float = 0.5
    seed: int = 0
    checkpoint_every: int = 500
    fixed_sample: bool = False  # overfit-one-batch debugging mode

    def __post_init__(self):
        if not (0.0 <= self.known_loss_weight <= 1.0):
            raise ValueError("known_loss_weight outside [0, 1]")
        if self.frame_min <= self.known_views:
            raise ValueError("frame range must leave room for a query frame")
        if self.frame_max < self.frame_min:
            raise ValueError("empty frame range")


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def pose_l1_loss(pred: torch.Tensor, gt: torch.Tensor, known: torch.Tensor,
                 known_weight: float = 0.5):
    """Mean of per-frame 9-component L1, query frames at weight 1 and known
    frames at `known_weight`; the GT quaternion is sign-aligned to the
    prediction's hemisphere first. Returns (loss, query_term, known_term)."""
    if pred.shape[0] == 0:
        raise EmptyBatch("no frames in loss")
    dot = (pred[:, :4] * gt[:, :4]).sum(dim=1, keepdim=True)
    sign = torch.where(dot < 0, -1.0, 1.0)
    gt_aligned = torch.cat([gt[:, :4] * sign, gt[:, 4:]], dim=1)
    per_frame = (pred - gt_aligned).abs().mean(dim=1)
    zero = pred.new_zeros(())
    query_term = per_frame[~known].mean() if (~known).any() else zero
    known_term = per_frame[known].mean() if known.any() else zero
    return query_term + known_weight * known_term, query_term, known_term


# ---------------------------------------------------------------------------
# Augmentations
# ---------------------------------------------------------------------------

@dataclass
class FrameData:
    rgb: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    normal: np.ndarray
    pointmap: np.ndarray
    pose: Pose
    intrinsics: Intrinsics
    is_known: bool


@dataclass
class TrainSample:
    obj_id: str
    frames: list[FrameData] = field(default_factory=list)  # queries first

    @property
    def known_flags(self) -> np.ndarray:
        return np.array([f.is_known for f in self.frames])


def frame_from_bundle(b: ViewBundle, is_known: bool) -> FrameData:
    return FrameData(b.rgb.copy(), b.depth.copy(), b.mask.copy(),
                     b.normal.copy(), b.pointmap.copy(), b.pose, b.intrinsics,
                     is_known)


def bundle_from_frame(f: FrameData) -> ViewBundle:
    return ViewBundle(f.rgb, f.depth, f.normal, f.mask, f.pointmap,
                      f.pose, f.intrinsics)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, 2 * np.pi)
    K = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def augment_rotation3d(sample: TrainSample, rng: np.random.Generator,
                       Q: np.ndarray | None = None) -> TrainSample:
    """Rotate the world by Q: point maps and normals rotate, extrinsics are
    right-composed with Q^-1, pixels stay untouched."""
    if Q is None:
        Q = random_rotation(rng)
    out = TrainSample(sample.obj_id)
    for f in sample.frames:
        pm = (f.pointmap.reshape(-1, 3) @ Q.T).reshape(f.pointmap.shape)
        nm = (f.normal.reshape(-1, 3) @ Q.T).reshape(f.normal.shape)
        pose = Pose(matrix_to_quat(f.pose.R @ Q.T), f.pose.translation)
        out.frames.append(FrameData(f.rgb, f.depth, f.mask,
                                    nm.astype(f.normal.dtype),
                                    pm.astype(f.pointmap.dtype),
                                    pose, f.intrinsics, f.is_known))
    return out


def _rotate_nn(arr: np.ndarray, angle: float) -> np.ndarray:
    """Nearest-neighbor rotation about the image center; out-of-frame -> 0."""
    H, W = arr.shape[:2]
    assert H == W, "in-plane rotation needs square images"
    c = W / 2.0
    iy, ix = np.mgrid[0:H, 0:W]
    dx = ix + 0.5 - c
    dy = iy + 0.5 - c
    ca, sa = np.cos(-angle), np.sin(-angle)
    sx = ca * dx - sa * dy + c
    sy = sa * dx + ca * dy + c
    jx = np.rint(sx - 0.5).astype(np.int64)
    jy = np.rint(sy - 0.5).astype(np.int64)
    valid = (jx >= 0) & (jx < W) & (jy >= 0) & (jy < H)
    out = np.zeros_like(arr)
    out[valid] = arr[jy[valid], jx[valid]]
    return out


def augment_rotation2d(frame: FrameData, angle: float) -> FrameData:
    """In-plane rotation about the principal point: every image array is
    resampled (nearest neighbor keeps masks binary) and the extrinsics are
    left-composed with the camera-axis roll."""
    roll_q = np.array([np.cos(angle / 2), 0.0, 0.0, np.sin(angle / 2)])
    roll = Pose(roll_q, np.zeros(3))
    pose = roll.compose(frame.pose)
    return FrameData(
        _rotate_nn(frame.rgb, angle),
        _rotate_nn(frame.depth, angle),
        _rotate_nn(frame.mask, angle),
        _rotate_nn(frame.normal, angle),
        _rotate_nn(frame.pointmap, angle),
        pose, frame.intrinsics, frame.is_known,
    )


def photometric_jitter(rgb: np.ndarray, rng: np.random.Generator,
                       grayscale_prob: float = 0.1) -> np.ndarray:
    out = rgb.astype(np.float32).copy()
    out *= rng.uniform(0.7, 1.3)
    mean = out.mean()
    out = (out - mean) * rng.uniform(0.7, 1.3) + mean
    out += rng.uniform(-0.08, 0.08, size=3).astype(np.float32)
    if rng.uniform() < grayscale_prob:
        out[:] = out.mean(axis=2, keepdims=True)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Batch assembly
# ---------------------------------------------------------------------------

def known_view_indices(ds: Dataset, obj_id: str, k: int) -> list[int]:
    """FPS selection of k known views over all stored poses of the object."""
    doc = ds.load_poses(obj_id)
    poses = tuple(ds.pose(obj_id, i) for i in range(len(doc["views"])))
    vset = ViewPoseSet(poses, doc["radius"], ds.intrinsics(obj_id))
    return fps_select_indices(vset, k, seed_index=0)


def sample_batch(ds: Dataset, cfg: TrainConfig, rng: np.random.Generator,
                 obj_id: str | None = None) -> TrainSample:
    """Dynamic batch: F ~ U[frame_min, frame_max] frames of one object,
    `known_views` of them FPS-selected, the rest occluded/jittered queries."""
    if obj_id is None:
        obj_id = ds.object_ids[int(rng.integers(len(ds.object_ids)))]
    n = ds.n_views(obj_id)
    if n < cfg.frame_max:
        raise InsufficientViews(f"{obj_id} has {n} views < {cfg.frame_max}")

    F = int(rng.integers(cfg.frame_min, cfg.frame_max + 1))
    known_idx = known_view_indices(ds, obj_id, cfg.known_views)
    remaining = [i for i in range(n) if i not in known_idx]
    query_idx = rng.choice(remaining, size=F - cfg.known_views, replace=False)

    sample = TrainSample(obj_id)
    for i in query_idx:
        sample.frames.append(frame_from_bundle(ds.load_view(obj_id, int(i)), False))
    for i in known_idx:
        sample.frames.append(frame_from_bundle(ds.load_view(obj_id, int(i)), True))

    if cfg.aug_rot3d:
        sample = augment_rotation3d(sample, rng)
    if cfg.aug_rot2d:
        for j, f in enumerate(sample.frames):
            angle = rng.uniform(-np.pi / 4, np.pi / 4)
            sample.frames[j] = augment_rotation2d(f, angle)
    for j, f in enumerate(sample.frames):
        if f.is_known:
            continue
        if cfg.aug_occlusion and f.mask.any() and rng.uniform() < cfg.occlusion_prob:
            kind = KINDS[int(rng.integers(len(KINDS)))]
            budget = rng.uniform(0.05, 0.4)
            f.rgb, f.mask, _ = apply_occlusion(f.rgb, f.mask, kind, rng, budget)
        if cfg.aug_photometric:
            f.rgb = photometric_jitter(f.rgb, rng)
    return sample


def sample_to_inputs(sample: TrainSample, model_cfg: ModelConfig,
                     dtype: torch.dtype = torch.float32):
    """(SceneInputs, gt Camera9 tensor, known flags) for one TrainSample."""
    queries = [f for f in sample.frames if not f.is_known]
    knowns = [f for f in sample.frames if f.is_known]
    scene = scene_from_views([f.rgb for f in queries],
                             [bundle_from_frame(f) for f in knowns],
                             model_cfg, dtype)
    ordered = queries + knowns
    gt = torch.stack([
        torch.from_numpy(Camera9.encode(f.pose, f.intrinsics).vec).to(dtype)
        for f in ordered
    ])
    known = torch.tensor([f.is_known for f in ordered])
    return scene, gt, known


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------

def lr_at(step: int, cfg: TrainConfig) -> float:
    """Cosine decay with linear warmup, as a multiplier of the base rate."""
    warm = min(1.0, (step + 1) / max(1, cfg.warmup_steps))
    cos = 0.5 * (1.0 + np.cos(np.pi * step / max(1, cfg.steps)))
    return warm * cos


def train_loop(ds: Dataset, model_cfg: ModelConfig, cfg: TrainConfig,
               out_dir, resume_from=None, log_every: int = 1):
    """Momentum gradient descent over the dataset; returns the trained model.

    Writes loss_log.csv (step, total, query-term, known-term) and periodic
    checkpoints under out_dir. Resuming from a checkpoint reproduces the
    uninterrupted run bit-for-bit because every step reseeds from
    (seed, step) and the momentum buffers ride along in the checkpoint.
    """
    torch.set_num_threads(1)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        model, start_step, momentum = load_checkpoint(resume_from)
        named = dict(model.named_parameters())
        velocity = {n: momentum.get(n, torch.zeros_like(p)) for n, p in named.items()}
    else:
        model = build_model(model_cfg)
        start_step = 0
        velocity = {n: torch.zeros_like(p) for n, p in model.named_parameters()}
    model.train()

    log_path = out_dir / "loss_log.csv"
    mode = "a" if (resume_from is not None and log_path.exists()) else "w"
    log_file = open(log_path, mode, newline="")
    logger = csv.writer(log_file)
    if mode == "w":
        logger.writerow(["step", "total", "query_term", "known_term"])

    base_lr = {"encoder": cfg.lr_encoder, "new": cfg.lr_new}
    try:
        for step in range(start_step, cfg.steps):
            rng = np.random.default_rng([cfg.seed, 0 if cfg.fixed_sample else step])
            sample = sample_batch(ds, cfg, rng)
            scene, gt, known = sample_to_inputs(sample, model.cfg)

            out = model(scene)
            loss, qterm, kterm = pose_l1_loss(out, gt, known,
                                              cfg.known_loss_weight)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite loss at step {step} on {sample.obj_id}")

            model.zero_grad()
            loss.backward()
            with torch.no_grad():
                if cfg.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(),
                                                   cfg.grad_clip)
                mult = lr_at(step, cfg)
                for name, p in model.named_parameters():
                    if p.grad is None:
                        continue
                    group = "encoder" if name.startswith("point_encoder.") else "new"
                    v = velocity[name]
                    v.mul_(cfg.momentum).add_(p.grad)
                    p.add_(v, alpha=-base_lr[group] * mult)

            if step % log_every == 0 or step == cfg.steps - 1:
                logger.writerow([step, f"{loss.item():.6f}",
                                 f"{qterm.item():.6f}", f"{kterm.item():.6f}"])
                log_file.flush()
            if (step + 1) % cfg.checkpoint_every == 0 or step + 1 == cfg.steps:
                save_checkpoint(out_dir / f"ckpt_{step + 1:06d}", model,
                                step + 1, velocity)
    finally:
        log_file.close()
    return model


# ---------------------------------------------------------------------------
# Training-split pose evaluation (network-level, normalized space)
# ---------------------------------------------------------------------------

def evaluate_pose_errors(model: MultiViewPoseNet, ds: Dataset, n_cases: int,
                         seed: int = 0) -> list[dict]:
    """Per-case (rotation deg, translation-direction deg) errors of the raw
    network prediction on clean dataset queries."""
    model.eval()
    rng = np.random.default_rng([seed, 777])
    cases = []
    with torch.no_grad():
        for _ in range(n_cases):
            obj_id = ds.object_ids[int(rng.integers(len(ds.object_ids)))]
            known_idx = known_view_indices(ds, obj_id, min(10, ds.n_views(obj_id) - 1))
            remaining = [i for i in range(ds.n_views(obj_id)) if i not in known_idx]
            qi = int(rng.choice(remaining))
            query = ds.load_view(obj_id, qi)
            knowns = [ds.load_view(obj_id, i) for i in known_idx]
            scene = scene_from_views([query.rgb], knowns, model.cfg)
            pred = model(scene)[0].numpy()
            pose_pred = Pose(pred[:4], pred[4:7])
            ara = rotation_angle_deg(pose_pred.R, query.pose.R)
            ata = direction_angle_deg(pose_pred.translation,
                                      query.pose.translation)
            cases.append({"object": obj_id, "view": qi, "ara": ara, "ata": ata})
    return cases

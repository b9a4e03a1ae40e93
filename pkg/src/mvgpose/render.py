"""Software rasterizer: mesh + camera -> RGB / depth / normal / mask / point map.

Z-buffered perspective rasterization with barycentric interpolation, no
anti-aliasing and no back-face culling (masks must stay crisp and open
meshes must render from both sides). Shading is Lambertian with three
directional lights fixed in the camera frame, which keeps renders exactly
covariant under (mesh rotation, compensated extrinsics) pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadShape
from .geometry import DEPTH_EPS, Intrinsics, Pose, PoseDirection
from .meshes import Mesh

# Camera-frame directional lights (direction the light travels), plus ambient.
LIGHT_DIRS = np.array(
    [
        [0.0, 1.0, 0.3],    # top light (camera up is -y)
        [0.0, -1.0, 0.2],   # bottom fill
        [0.3, -0.4, 1.0],   # front-top, roughly along the view axis
    ]
)
LIGHT_DIRS = LIGHT_DIRS / np.linalg.norm(LIGHT_DIRS, axis=1, keepdims=True)
LIGHT_WEIGHTS = np.array([0.55, 0.15, 0.45])
AMBIENT = 0.18


@dataclass
class ViewBundle:
    """Everything rendered for one view, plus the camera that produced it."""

    rgb: np.ndarray       # (H, W, 3) float32 in [0, 1]
    depth: np.ndarray     # (H, W) float32, camera-frame z, 0 = background
    normal: np.ndarray    # (H, W, 3) float32, world-space unit normals
    mask: np.ndarray      # (H, W) uint8 in {0, 1}
    pointmap: np.ndarray  # (H, W, 3) float32, world coordinates, 0 at background
    pose: Pose
    intrinsics: Intrinsics


def rasterize_view(mesh: Mesh, pose: Pose, K: Intrinsics) -> ViewBundle:
    """Render one view. Returns an empty-mask bundle if nothing is in frustum."""
    if K.width < 8 or K.height < 8:
        raise BadShape(f"image dims {K.width}x{K.height} below 8x8")
    assert pose.direction is PoseDirection.WORLD_TO_CAM

    H, W = K.height, K.width
    R = pose.R
    cam = mesh.vertices @ R.T + pose.translation
    cam_normals = mesh.normals @ R.T

    depth, tri_of, wA, wB, wC = _rasterize_buffers(cam, mesh.triangles, K)

    mask = (depth > 0).astype(np.uint8)
    rgb = np.zeros((H, W, 3), dtype=np.float64)
    normal = np.zeros((H, W, 3), dtype=np.float64)

    hit = tri_of >= 0
    if np.any(hit):
        tri = mesh.triangles[tri_of[hit]]
        w = np.stack([wA[hit], wB[hit], wC[hit]], axis=1)[..., None]  # (M, 3, 1)

        n_cam = (cam_normals[tri] * w).sum(axis=1)
        n_len = np.linalg.norm(n_cam, axis=1, keepdims=True)
        n_len[n_len < 1e-12] = 1.0
        n_cam /= n_len

        albedo = (mesh.colors[tri] * w).sum(axis=1)
        shade = np.full(len(albedo), AMBIENT)
        for ld, lw in zip(LIGHT_DIRS, LIGHT_WEIGHTS):
            # two-sided: open meshes must light from both sides
            shade += lw * np.abs(n_cam @ ld)
        rgb[hit] = np.clip(albedo * np.clip(shade, 0.0, 1.0)[:, None], 0.0, 1.0)

        n_world = (mesh.normals[tri] * w).sum(axis=1)
        n_len = np.linalg.norm(n_world, axis=1, keepdims=True)
        n_len[n_len < 1e-12] = 1.0
        normal[hit] = n_world / n_len

    # derive the point map from the float32 depth that callers will store,
    # so a bundle reloaded from disk reproduces it bitwise
    depth32 = depth.astype(np.float32)
    pointmap = depth_to_pointmap(depth32.astype(np.float64), mask, pose, K)
    return ViewBundle(
        rgb=rgb.astype(np.float32),
        depth=depth32,
        normal=normal.astype(np.float32),
        mask=mask,
        pointmap=pointmap,
        pose=pose,
        intrinsics=K,
    )


def render_depth(mesh: Mesh, pose: Pose, K: Intrinsics) -> np.ndarray:
    """Depth-only render (used by the VSD metric); float64 (H, W), 0 = background."""
    cam = mesh.vertices @ pose.R.T + pose.translation
    depth, _, _, _, _ = _rasterize_buffers(cam, mesh.triangles, K)
    return depth


def _rasterize_buffers(cam_vertices: np.ndarray, triangles: np.ndarray,
                       K: Intrinsics):
    """Shared z-buffer pass.

    Returns (depth, winning triangle index or -1, perspective-correct
    barycentric weights for the three vertices), all (H, W) float64 arrays.
    Triangles with any vertex at depth <= DEPTH_EPS are skipped (no clipping).
    """
    H, W = K.height, K.width
    depth = np.zeros((H, W), dtype=np.float64)
    tri_of = np.full((H, W), -1, dtype=np.int64)
    wA = np.zeros((H, W), dtype=np.float64)
    wB = np.zeros((H, W), dtype=np.float64)
    wC = np.zeros((H, W), dtype=np.float64)

    z_all = cam_vertices[:, 2]
    front = np.all(z_all[triangles] > DEPTH_EPS, axis=1)
    tris = triangles[front]
    if len(tris) == 0:
        return depth, tri_of, wA, wB, wC

    uv = np.empty((len(cam_vertices), 2))
    uv[:, 0] = K.cx + K.fx * cam_vertices[:, 0] / z_all
    uv[:, 1] = K.cy + K.fy * cam_vertices[:, 1] / z_all

    a, b, c = uv[tris[:, 0]], uv[tris[:, 1]], uv[tris[:, 2]]
    za, zb, zc = (z_all[tris[:, 0]], z_all[tris[:, 1]], z_all[tris[:, 2]])

    # pixel (ix, iy) samples at center (ix + 0.5, iy + 0.5)
    umin = np.minimum(np.minimum(a[:, 0], b[:, 0]), c[:, 0])
    umax = np.maximum(np.maximum(a[:, 0], b[:, 0]), c[:, 0])
    vmin = np.minimum(np.minimum(a[:, 1], b[:, 1]), c[:, 1])
    vmax = np.maximum(np.maximum(a[:, 1], b[:, 1]), c[:, 1])
    x0 = np.clip(np.ceil(umin - 0.5).astype(np.int64), 0, W - 1)
    x1 = np.clip(np.floor(umax - 0.5).astype(np.int64), 0, W - 1)
    y0 = np.clip(np.ceil(vmin - 0.5).astype(np.int64), 0, H - 1)
    y1 = np.clip(np.floor(vmax - 0.5).astype(np.int64), 0, H - 1)

    denom = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) \
        - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    keep = (x1 >= x0) & (y1 >= y0) & (np.abs(denom) > 1e-14)
    if not np.any(keep):
        return depth, tri_of, wA, wB, wC
    tri_ids = np.nonzero(front)[0][keep]
    a, b, c, za, zb, zc, denom = (arr[keep] for arr in (a, b, c, za, zb, zc, denom))
    x0, x1, y0, y1 = x0[keep], x1[keep], y0[keep], y1[keep]

    widths = x1 - x0 + 1
    heights = y1 - y0 + 1
    counts = widths * heights
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(counts)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    px = x0[owner] + local % widths[owner]
    py = y0[owner] + local // widths[owner]
    sx = px + 0.5
    sy = py + 0.5

    ax, ay = a[owner, 0], a[owner, 1]
    lam_b = ((sx - ax) * (c[owner, 1] - ay) - (sy - ay) * (c[owner, 0] - ax)) / denom[owner]
    lam_c = ((b[owner, 0] - ax) * (sy - ay) - (b[owner, 1] - ay) * (sx - ax)) / denom[owner]
    lam_a = 1.0 - lam_b - lam_c
    inside = (lam_a >= 0) & (lam_b >= 0) & (lam_c >= 0)
    if not np.any(inside):
        return depth, tri_of, wA, wB, wC

    owner = owner[inside]
    px, py = px[inside], py[inside]
    lam_a, lam_b, lam_c = lam_a[inside], lam_b[inside], lam_c[inside]

    inv_z = lam_a / za[owner] + lam_b / zb[owner] + lam_c / zc[owner]
    z = 1.0 / inv_z
    pid = py * W + px

    zflat = np.full(H * W, np.inf)
    np.minimum.at(zflat, pid, z)
    won = z == zflat[pid]
    # depth ties between triangles: lowest candidate position wins
    order = np.full(H * W, np.iinfo(np.int64).max, dtype=np.int64)
    cand_pos = np.nonzero(won)[0]
    np.minimum.at(order, pid[won], cand_pos)
    final = np.zeros(len(z), dtype=bool)
    final[cand_pos] = order[pid[won]] == cand_pos

    fpid = pid[final]
    fz = z[final]
    depth.reshape(-1)[fpid] = fz
    tri_of.reshape(-1)[fpid] = tri_ids[owner[final]]
    # perspective-correct attribute weights
    wa = (lam_a[final] / za[owner[final]]) * fz
    wb = (lam_b[final] / zb[owner[final]]) * fz
    wc = (lam_c[final] / zc[owner[final]]) * fz
    wA.reshape(-1)[fpid] = wa
    wB.reshape(-1)[fpid] = wb
    wC.reshape(-1)[fpid] = wc
    return depth, tri_of, wA, wB, wC


def depth_to_pointmap(depth: np.ndarray, mask: np.ndarray, pose: Pose,
                      K: Intrinsics) -> np.ndarray:
    """Per-pixel backprojection of masked depths to world coordinates.

    Pixels sample at their centers (u + 0.5, v + 0.5), matching the
    rasterizer; background pixels map to the zero vector.
    """
    H, W = depth.shape
    pointmap = np.zeros((H, W, 3), dtype=np.float64)
    vs, us = np.nonzero(mask)
    if len(us) == 0:
        return pointmap.astype(np.float32)
    d = depth[vs, us].astype(np.float64)
    cam = np.stack(
        [
            (us + 0.5 - K.cx) / K.fx * d,
            (vs + 0.5 - K.cy) / K.fy * d,
            d,
        ],
        axis=1,
    )
    inv = pose.inverse()
    pointmap[vs, us] = cam @ inv.R.T + inv.translation
    return pointmap.astype(np.float32)


def check_bundle_invariants(bundle: ViewBundle, tol: float = 1e-5) -> None:
    """Assert mask/depth/pointmap mutual consistency; raises AssertionError."""
    mask_bool = bundle.mask.astype(bool)
    assert np.array_equal(mask_bool, bundle.depth > 0), "mask != (depth > 0)"
    assert np.all(bundle.pointmap[~mask_bool] == 0), "pointmap nonzero off-mask"
    recomputed = depth_to_pointmap(
        bundle.depth.astype(np.float64), bundle.mask, bundle.pose, bundle.intrinsics
    )
    err = np.abs(recomputed - bundle.pointmap).max()
    assert err < tol, f"pointmap deviates from backprojection by {err}"

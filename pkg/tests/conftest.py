"""Shared fixtures: a tiny rendered scene reused by network/training tests."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from mvgpose.dataset import quantize_rgb
from mvgpose.geometry import Intrinsics
from mvgpose.meshes import make_zoo_mesh, normalize_mesh
from mvgpose.render import rasterize_view
from mvgpose.viewsampling import fps_select, hammersley_sphere

torch.set_num_threads(1)

SCENE_RES = 64
SCENE_K = Intrinsics(0.9, 0.9, SCENE_RES, SCENE_RES)
SCENE_RADIUS = 3.2


def render_object_views(mesh_index: int, n_views: int, res: int = SCENE_RES):
    K = Intrinsics(0.9, 0.9, res, res)
    mesh, spec = normalize_mesh(make_zoo_mesh(mesh_index))
    views = hammersley_sphere(n_views, SCENE_RADIUS, K)
    bundles = []
    for pose in views.poses:
        b = rasterize_view(mesh, pose, K)
        b.rgb = quantize_rgb(b.rgb)
        bundles.append(b)
    return mesh, spec, bundles


@pytest.fixture(scope="session")
def tiny_scene():
    """12 rendered views of one normalized object at 64x64."""
    mesh, spec, bundles = render_object_views(0, 12)
    return {"mesh": mesh, "norm": spec, "bundles": bundles, "K": SCENE_K}


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """On-disk dataset: 3 objects x 26 views at 48x48 (just enough for
    dynamic batches up to 24 frames + FPS-known selection)."""
    from mvgpose.dataset import build_object, read_dataset, write_dataset

    root = tmp_path_factory.mktemp("tinyds")
    K = Intrinsics(0.9, 0.9, 48, 48)
    records = [
        build_object(make_zoo_mesh(i), f"obj{i:03d}", n_views=26,
                     radius=SCENE_RADIUS, K=K)
        for i in range(3)
    ]
    write_dataset(records, root)
    return read_dataset(root)

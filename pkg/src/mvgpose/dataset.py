"""On-disk dataset of rendered template views.

Layout:
    root/manifest.json                  per-file sha256 checksums + view counts
    root/objects/<id>/mesh.obj          normalized mesh (v with rgb, vn, f)
    root/objects/<id>/poses.json        Camera9 records + normalization spec
    root/objects/<id>/views/<k>.rgb.ppm, <k>.depth.pfm, <k>.normal.pfm, <k>.mask.pgm

Point maps are not stored; they are reconstructed from depth + pose on read,
which is exact because the writer also derives them that way.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptManifest
from .geometry import Camera9, Intrinsics, Pose
from .imgio import read_pfm, read_pgm, read_ppm, write_pfm, write_pgm, write_ppm
from .meshes import Mesh, NormalizationSpec, normalize_mesh, read_obj, write_obj
from .render import ViewBundle, depth_to_pointmap, rasterize_view
from .viewsampling import hammersley_sphere

MANIFEST_NAME = "manifest.json"


@dataclass
class ObjectRecord:
    obj_id: str
    mesh: Mesh                      # normalized coordinates
    normalization: NormalizationSpec
    radius: float
    views: list[ViewBundle]


def quantize_rgb(rgb: np.ndarray) -> np.ndarray:
    """Snap float rgb onto the 8-bit grid the PPM writer will use."""
    u8 = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
    return (u8.astype(np.float32) / 255.0)


def build_object(mesh: Mesh, obj_id: str, n_views: int, radius: float,
                 K: Intrinsics) -> ObjectRecord:
    """Normalize a mesh and render its Hammersley template views."""
    norm_mesh, spec = normalize_mesh(mesh)
    poses = hammersley_sphere(n_views, radius, K)
    views = []
    for pose in poses.poses:
        b = rasterize_view(norm_mesh, pose, K)
        b.rgb = quantize_rgb(b.rgb)
        views.append(b)
    return ObjectRecord(obj_id, norm_mesh, spec, radius, views)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_dataset(records: list[ObjectRecord], root) -> Path:
    root = Path(root)
    files: dict[str, str] = {}
    objects = []
    for rec in records:
        obj_dir = root / "objects" / rec.obj_id
        (obj_dir / "views").mkdir(parents=True, exist_ok=True)

        write_obj(rec.mesh, obj_dir / "mesh.obj")
        poses_doc = {
            "normalization": {
                "scale": rec.normalization.scale,
                "offset": rec.normalization.offset.tolist(),
                "box": rec.normalization.box,
            },
            "radius": rec.radius,
            "width": rec.views[0].intrinsics.width,
            "height": rec.views[0].intrinsics.height,
            "views": [Camera9.encode(v.pose, v.intrinsics).vec.tolist()
                      for v in rec.views],
        }
        with open(obj_dir / "poses.json", "w") as f:
            json.dump(poses_doc, f, indent=1)

        for k, v in enumerate(rec.views):
            base = obj_dir / "views" / str(k)
            write_ppm(f"{base}.rgb.ppm", np.rint(v.rgb * 255.0).astype(np.uint8))
            write_pfm(f"{base}.depth.pfm", v.depth)
            write_pfm(f"{base}.normal.pfm", v.normal)
            write_pgm(f"{base}.mask.pgm", v.mask * 255)

        rel = obj_dir.relative_to(root)
        for p in sorted(obj_dir.rglob("*")):
            if p.is_file():
                files[str(p.relative_to(root))] = _sha256(p)
        objects.append({"id": rec.obj_id, "n_views": len(rec.views)})

    manifest = {
        "objects": objects,
        "n_view_records": sum(o["n_views"] for o in objects),
        "files": files,
    }
    with open(root / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, indent=1)
    return root


class Dataset:
    """Read handle; every file access is checksum-verified against the manifest."""

    def __init__(self, root):
        self.root = Path(root)
        mpath = self.root / MANIFEST_NAME
        if not mpath.exists():
            raise CorruptManifest(f"missing {mpath}")
        with open(mpath) as f:
            self.manifest = json.load(f)
        self.object_ids = [o["id"] for o in self.manifest["objects"]]
        self._n_views = {o["id"]: o["n_views"] for o in self.manifest["objects"]}
        self._poses_cache: dict[str, dict] = {}

    def n_views(self, obj_id: str) -> int:
        return self._n_views[obj_id]

    def _verified(self, relpath: str) -> Path:
        path = self.root / relpath
        expected = self.manifest["files"].get(relpath)
        if expected is None:
            raise CorruptManifest(f"{relpath} not in manifest")
        if not path.exists() or _sha256(path) != expected:
            raise CorruptManifest(f"checksum mismatch for {relpath}")
        return path

    def load_mesh(self, obj_id: str) -> Mesh:
        return read_obj(self._verified(f"objects/{obj_id}/mesh.obj"))

    def load_poses(self, obj_id: str) -> dict:
        if obj_id not in self._poses_cache:
            with open(self._verified(f"objects/{obj_id}/poses.json")) as f:
                self._poses_cache[obj_id] = json.load(f)
        return self._poses_cache[obj_id]

    def normalization(self, obj_id: str) -> NormalizationSpec:
        doc = self.load_poses(obj_id)["normalization"]
        return NormalizationSpec(doc["scale"], np.array(doc["offset"]), doc["box"])

    def intrinsics(self, obj_id: str) -> Intrinsics:
        doc = self.load_poses(obj_id)
        vec = doc["views"][0]
        return Intrinsics(vec[7], vec[8], doc["width"], doc["height"])

    def pose(self, obj_id: str, k: int) -> Pose:
        doc = self.load_poses(obj_id)
        pose, _ = Camera9(np.array(doc["views"][k])).decode(doc["width"], doc["height"])
        return pose

    def camera9(self, obj_id: str, k: int) -> Camera9:
        return Camera9(np.array(self.load_poses(obj_id)["views"][k]))

    def load_view(self, obj_id: str, k: int) -> ViewBundle:
        doc = self.load_poses(obj_id)
        base = f"objects/{obj_id}/views/{k}"
        rgb = read_ppm(self._verified(f"{base}.rgb.ppm")).astype(np.float32) / 255.0
        depth = read_pfm(self._verified(f"{base}.depth.pfm"))
        normal = read_pfm(self._verified(f"{base}.normal.pfm"))
        mask = (read_pgm(self._verified(f"{base}.mask.pgm")) > 0).astype(np.uint8)
        pose, K = Camera9(np.array(doc["views"][k])).decode(doc["width"], doc["height"])
        pointmap = depth_to_pointmap(depth.astype(np.float64), mask, pose, K)
        return ViewBundle(rgb=rgb, depth=depth, normal=normal, mask=mask,
                          pointmap=pointmap, pose=pose, intrinsics=K)


def read_dataset(root) -> Dataset:
    return Dataset(root)

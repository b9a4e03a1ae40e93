"""Image formats and on-disk dataset round trips."""

from __future__ import annotations

import numpy as np
import pytest

from mvgpose.dataset import build_object, read_dataset, write_dataset
from mvgpose.errors import CorruptManifest
from mvgpose.geometry import Intrinsics
from mvgpose.imgio import read_pfm, read_pgm, read_ppm, write_pfm, write_pgm, write_ppm
from mvgpose.meshes import make_zoo_mesh

K = Intrinsics(0.9, 0.9, 64, 64)


class TestImageFormats:
    def test_ppm_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(17, 23, 3), dtype=np.uint8)
        write_ppm(tmp_path / "a.ppm", img)
        np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), img)

    def test_pgm_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, size=(9, 31), dtype=np.uint8)
        write_pgm(tmp_path / "a.pgm", img)
        np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)

    @pytest.mark.parametrize("shape", [(11, 13), (11, 13, 3)])
    def test_pfm_round_trip(self, tmp_path, shape):
        rng = np.random.default_rng(2)
        img = rng.normal(size=shape).astype(np.float32)
        write_pfm(tmp_path / "a.pfm", img)
        np.testing.assert_array_equal(read_pfm(tmp_path / "a.pfm"), img)

    def test_truncated_pfm_raises(self, tmp_path):
        img = np.ones((8, 8), dtype=np.float32)
        write_pfm(tmp_path / "a.pfm", img)
        data = (tmp_path / "a.pfm").read_bytes()
        (tmp_path / "a.pfm").write_bytes(data[:-17])
        with pytest.raises(CorruptManifest):
            read_pfm(tmp_path / "a.pfm")


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    records = [
        build_object(make_zoo_mesh(i), f"obj{i:03d}", n_views=4, radius=3.0, K=K)
        for i in range(2)
    ]
    write_dataset(records, root)
    return root, records


class TestDataset:
    def test_round_trip_bitwise(self, small_dataset):
        root, records = small_dataset
        ds = read_dataset(root)
        assert ds.object_ids == ["obj000", "obj001"]
        for rec in records:
            mesh = ds.load_mesh(rec.obj_id)
            np.testing.assert_array_equal(mesh.vertices, rec.mesh.vertices)
            np.testing.assert_array_equal(mesh.colors, rec.mesh.colors)
            for k, v in enumerate(rec.views):
                got = ds.load_view(rec.obj_id, k)
                np.testing.assert_array_equal(got.rgb, v.rgb)
                np.testing.assert_array_equal(got.depth, v.depth)
                np.testing.assert_array_equal(got.normal, v.normal)
                np.testing.assert_array_equal(got.mask, v.mask)
                np.testing.assert_array_equal(got.pointmap, v.pointmap)
                np.testing.assert_array_equal(got.pose.rotation, v.pose.rotation)
                np.testing.assert_array_equal(got.pose.translation,
                                              v.pose.translation)

    def test_normalization_round_trip(self, small_dataset):
        root, records = small_dataset
        ds = read_dataset(root)
        spec = ds.normalization("obj000")
        assert spec.scale == records[0].normalization.scale
        np.testing.assert_array_equal(spec.offset, records[0].normalization.offset)

    def test_manifest_counts_views(self, small_dataset):
        root, _ = small_dataset
        ds = read_dataset(root)
        assert ds.manifest["n_view_records"] == 8
        assert all(o["n_views"] == 4 for o in ds.manifest["objects"])

    def test_truncated_depth_file_raises(self, tmp_path):
        records = [build_object(make_zoo_mesh(0), "obj", n_views=2, radius=3.0, K=K)]
        write_dataset(records, tmp_path)
        target = tmp_path / "objects/obj/views/1.depth.pfm"
        target.write_bytes(target.read_bytes()[:-40])
        ds = read_dataset(tmp_path)
        ds.load_view("obj", 0)  # untouched view still loads
        with pytest.raises(CorruptManifest):
            ds.load_view("obj", 1)

    def test_missing_manifest_raises(self, tmp_path):
        with pytest.raises(CorruptManifest):
            read_dataset(tmp_path / "nope")

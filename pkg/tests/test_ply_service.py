import numpy as np
import pytest
import torch
from plyfile import PlyData, PlyElement
from app.models import SceneSpec
from app.services.ply_service import PLY_PROPERTIES, export_ply, import_ply
from app.services.scene_service import generate_cloud, voxelize_cloud


def test_export_then_import_preserves_fields(tmp_path):
    cloud = generate_cloud(SceneSpec(gaussian_count=64, seed=2))
    restored = import_ply(export_ply(cloud, tmp_path / "cloud.ply"))
    for name in ("positions", "colors", "opacities", "scales", "rotations"):
        assert torch.equal(getattr(restored, name), getattr(cloud, name))
    assert restored.grid_n is None


def test_header_lists_vertex_count_and_properties(tmp_path):
    cloud = voxelize_cloud(generate_cloud(SceneSpec(gaussian_count=64, seed=2)), 3)
    path = export_ply(cloud, tmp_path / "grid.ply")
    ply = PlyData.read(str(path))
    assert ply["vertex"].count == 27
    assert tuple(p.name for p in ply["vertex"].properties) == PLY_PROPERTIES
    assert not ply.text
    assert import_ply(path).grid_n == 3


def test_missing_property_is_rejected(tmp_path):
    vertices = np.zeros(2, dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4")])
    path = tmp_path / "points.ply"
    PlyData([PlyElement.describe(vertices, "vertex")]).write(str(path))
    with pytest.raises(RuntimeError):
        import_ply(path)


def test_unwritable_path_raises(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x", encoding="utf-8")
    with pytest.raises(OSError):
        export_ply(generate_cloud(SceneSpec(gaussian_count=4)), blocker / "cloud.ply")

import json
import pytest
import torch
from app.services.dataset_service import (
    CAMERAS_FILE,
    list_scenes,
    quantize_image,
    read_dataset,
    read_ground_truth,
    read_png,
    write_dataset,
    write_png,
)


def test_dataset_round_trip(tmp_path, scene):
    views = scene.views[:5]
    write_dataset(tmp_path / "scene", views, scene.cloud)
    restored = read_dataset(tmp_path / "scene")
    assert len(restored) == 5
    for original, loaded in zip(views, restored):
        assert torch.equal(loaded.camera.extrinsic, original.camera.extrinsic)
        assert (loaded.elevation_deg, loaded.azimuth_deg) == (original.elevation_deg, original.azimuth_deg)
        assert (loaded.image - original.image).abs().max() <= 0.5 / 255.0 + 1e-6
    assert read_ground_truth(tmp_path / "scene").count == scene.cloud.count


def test_png_quantization_is_exact_for_8bit_values(tmp_path):
    image = torch.arange(16 * 16 * 4, dtype=torch.float32).reshape(16, 16, 4) % 256 / 255.0
    restored = read_png(write_png(tmp_path / "image.png", image))
    assert torch.equal(torch.from_numpy(quantize_image(restored)), torch.from_numpy(quantize_image(image)))


def test_missing_image_is_reported(tmp_path, scene):
    root = write_dataset(tmp_path / "scene", scene.views[:3])
    (root / "view_1.png").unlink()
    with pytest.raises(FileNotFoundError):
        read_dataset(root)


def test_sparse_indices_are_rejected(tmp_path, scene):
    root = write_dataset(tmp_path / "scene", scene.views[:3])
    records = json.loads((root / CAMERAS_FILE).read_text(encoding="utf-8"))
    records[2]["index"] = 5
    (root / CAMERAS_FILE).write_text(json.dumps(records), encoding="utf-8")
    with pytest.raises(RuntimeError):
        read_dataset(root)


def test_malformed_records_are_rejected(tmp_path, scene):
    root = write_dataset(tmp_path / "scene", scene.views[:2])
    (root / CAMERAS_FILE).write_text(json.dumps([{"index": 0}]), encoding="utf-8")
    with pytest.raises(RuntimeError):
        read_dataset(root)


def test_list_scenes(tmp_path, scene):
    write_dataset(tmp_path / "b", scene.views[:1])
    write_dataset(tmp_path / "a", scene.views[:1])
    assert [p.name for p in list_scenes(tmp_path)] == ["a", "b"]
    assert list_scenes(tmp_path / "a") == [tmp_path / "a"]
    assert read_ground_truth(tmp_path / "a") is None

import pytest
import torch
from app.core.cameras import (
    Camera,
    PosedView,
    camera_to_vec,
    candidate_poses,
    dataset_poses,
    orbit_camera,
    vec_to_camera,
)


def test_identity_camera_vector():
    cam = Camera(extrinsic=torch.eye(4), fx=64.0, fy=64.0, cx=32.0, cy=32.0, width=64, height=64)
    expected = torch.tensor([1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 1, 1, 0.5, 0.5], dtype=torch.float64)
    assert torch.equal(camera_to_vec(cam), expected)


def test_camera_vector_round_trip():
    cam = orbit_camera(18.0, 135.0, 32)
    vec = camera_to_vec(cam)
    assert torch.allclose(camera_to_vec(vec_to_camera(vec, 32, 32)), vec, atol=1e-12)


def test_non_rigid_extrinsic_is_rejected():
    extrinsic = torch.eye(4)
    extrinsic[0, 0] = 2.0
    with pytest.raises(ValueError):
        Camera(extrinsic=extrinsic, fx=1.0, fy=1.0, cx=0.5, cy=0.5, width=1, height=1)


def test_reflection_is_rejected():
    extrinsic = torch.eye(4)
    extrinsic[2, 2] = -1.0
    with pytest.raises(ValueError):
        Camera(extrinsic=extrinsic, fx=1.0, fy=1.0, cx=0.5, cy=0.5, width=1, height=1)


def test_orbit_camera_looks_at_origin():
    cam = orbit_camera(30.0, 45.0, 64, radius=3.0)
    origin_cam = cam.rotation @ torch.zeros(3, dtype=torch.float64) + cam.translation
    assert torch.allclose(origin_cam[:2], torch.zeros(2, dtype=torch.float64), atol=1e-12)
    assert origin_cam[2].item() == pytest.approx(3.0)
    assert cam.center.norm().item() == pytest.approx(3.0)


def test_world_up_projects_upwards():
    cam = orbit_camera(0.0, 0.0, 64)
    up_point = cam.rotation @ torch.tensor([0.0, 0.5, 0.0], dtype=torch.float64) + cam.translation
    assert up_point[1] < 0


def test_crop_shifts_principal_point():
    cam = orbit_camera(0.0, 0.0, 16).crop(4, 2, 8, 8)
    assert (cam.cx, cam.cy, cam.width, cam.height) == (4.0, 6.0, 8, 8)
    with pytest.raises(ValueError):
        orbit_camera(0.0, 0.0, 16).crop(10, 0, 8, 8)


def test_posed_view_checks_image_shape():
    with pytest.raises(ValueError):
        PosedView(image=torch.zeros(8, 8, 3), camera=orbit_camera(0.0, 0.0, 8))


def test_pose_layouts():
    assert len(dataset_poses([-18.0, 6.0, 18.0, 30.0], 16)) == 64
    poses = candidate_poses([-18.0, 6.0, 18.0, 30.0], 16)
    assert len(poses) == 20
    assert poses[4] == (6.0, 0.0, "azimuth")
    assert poses[12][1] == pytest.approx(180.0)

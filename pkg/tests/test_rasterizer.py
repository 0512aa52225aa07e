import math
import pytest
import torch
from app.core.cameras import Camera, PosedView, orbit_camera
from app.core.gaussians import GaussianCloud, quaternion_multiply, rotation_to_quaternion
from app.core.rasterizer import project_gaussian, rasterize, rasterize_grad
from app.models import LossConfig, RenderConfig
from app.processing.losses import composite_loss_adjoint

CFG = RenderConfig()
WHITE = (1.0, 1.0, 1.0)


def _camera(size=16, focal=16.0):
    return Camera(extrinsic=torch.eye(4), fx=focal, fy=focal, cx=size / 2.0, cy=size / 2.0, width=size, height=size)


def _cloud(positions, colors, opacities, scales, rotations=None, dtype=torch.float64):
    count = len(positions)
    if rotations is None:
        rotations = [[1.0, 0.0, 0.0, 0.0]] * count
    return GaussianCloud(
        positions=torch.tensor(positions, dtype=dtype),
        colors=torch.tensor(colors, dtype=dtype),
        opacities=torch.tensor(opacities, dtype=dtype),
        scales=torch.tensor(scales, dtype=dtype),
        rotations=torch.tensor(rotations, dtype=dtype),
    )


def test_empty_cloud_renders_background():
    image = rasterize(GaussianCloud.empty(torch.float64), _camera(), (0.2, 0.4, 0.6), CFG)
    assert torch.allclose(image.rgb, torch.tensor([0.2, 0.4, 0.6], dtype=torch.float64).expand(16, 16, 3))
    assert torch.equal(image.alpha, torch.zeros(16, 16, dtype=torch.float64))


def test_opaque_red_gaussian_covers_principal_pixel():
    cloud = _cloud([[0.0, 0.0, 3.0]], [[1.0, 0.0, 0.0]], [0.999], [[0.3, 0.3, 0.3]])
    image = rasterize(cloud, _camera(), WHITE, CFG)
    pixel = image.rgb[8, 8]
    assert torch.allclose(pixel, torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64), atol=0.05)
    assert image.alpha[8, 8] > 0.9


def test_front_gaussian_dominates():
    cloud = _cloud(
        [[0.0, 0.0, 4.0], [0.0, 0.0, 2.0]],
        [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]],
        [0.95, 0.95],
        [[0.3, 0.3, 0.3], [0.15, 0.15, 0.15]],
    )
    pixel = rasterize(cloud, _camera(), WHITE, CFG).rgb[8, 8]
    assert pixel[0] > 0.9 and pixel[2] < 0.1


def test_on_axis_covariance_matches_perspective_scaling():
    cfg = RenderConfig(cov2d_floor=0.0)
    cloud = _cloud([[0.0, 0.0, 5.0]], [[0.5, 0.5, 0.5]], [0.5], [[0.1, 0.1, 0.1]])
    mean, cov, depth = project_gaussian(cloud[0], _camera(focal=20.0), cfg)
    assert depth.item() == pytest.approx(5.0)
    assert torch.allclose(mean, torch.tensor([8.0, 8.0], dtype=torch.float64))
    expected = (20.0 * 0.1 / 5.0) ** 2
    assert torch.allclose(cov, torch.diag(torch.tensor([expected, expected], dtype=torch.float64)), atol=1e-12)


def test_behind_camera_gaussian_is_culled():
    cloud = _cloud([[0.0, 0.0, -2.0]], [[1.0, 0.0, 0.0]], [0.9], [[0.3, 0.3, 0.3]])
    image = rasterize(cloud, _camera(), WHITE, CFG)
    assert torch.equal(image.alpha, torch.zeros(16, 16, dtype=torch.float64))


def test_render_is_invariant_to_cloud_order():
    generator = torch.Generator().manual_seed(4)
    count = 12
    cloud = GaussianCloud(
        positions=torch.rand(count, 3, generator=generator, dtype=torch.float64) - 0.5 + torch.tensor([0.0, 0.0, 3.0], dtype=torch.float64),
        colors=torch.rand(count, 3, generator=generator, dtype=torch.float64),
        opacities=torch.rand(count, generator=generator, dtype=torch.float64) * 0.8 + 0.1,
        scales=torch.rand(count, 3, generator=generator, dtype=torch.float64) * 0.2 + 0.05,
        rotations=torch.nn.functional.normalize(torch.randn(count, 4, generator=generator, dtype=torch.float64), dim=-1),
    )
    order = torch.randperm(count, generator=generator)
    first = rasterize(cloud, _camera(), WHITE, CFG)
    second = rasterize(cloud.permute(order), _camera(), WHITE, CFG)
    assert torch.allclose(first.rgb, second.rgb, atol=1e-12)
    assert torch.allclose(first.alpha, second.alpha, atol=1e-12)


def test_render_is_invariant_to_rigid_world_motion():
    cloud = _cloud(
        [[0.1, 0.0, 0.0], [-0.2, 0.1, 0.2], [0.0, -0.2, -0.1]],
        [[0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.1, 0.1, 0.9]],
        [0.8, 0.6, 0.7],
        [[0.15, 0.05, 0.1], [0.1, 0.1, 0.1], [0.05, 0.2, 0.1]],
    )
    cam = orbit_camera(20.0, 30.0, 16)
    angle = math.radians(40.0)
    rotation = torch.tensor(
        [[math.cos(angle), 0.0, math.sin(angle)], [0.0, 1.0, 0.0], [-math.sin(angle), 0.0, math.cos(angle)]],
        dtype=torch.float64,
    )
    transform = torch.eye(4, dtype=torch.float64)
    transform[:3, :3] = rotation
    transform[:3, 3] = torch.tensor([0.3, -0.2, 0.1], dtype=torch.float64)
    q = rotation_to_quaternion(rotation)
    moved = cloud.with_fields(
        positions=cloud.positions @ rotation.T + transform[:3, 3],
        rotations=quaternion_multiply(q.expand(3, 4), cloud.rotations),
    )
    first = rasterize(cloud, cam, WHITE, CFG)
    second = rasterize(moved, cam.transformed(transform), WHITE, CFG)
    assert torch.allclose(first.rgb, second.rgb, atol=1e-6)


def test_zero_adjoint_gives_zero_gradients():
    cloud = _cloud([[0.0, 0.0, 3.0]], [[0.5, 0.2, 0.1]], [0.7], [[0.2, 0.2, 0.2]])
    grads = rasterize_grad(cloud, _camera(), WHITE, torch.zeros(16, 16, 4, dtype=torch.float64), CFG)
    assert grads.global_norm() == 0.0


def test_self_match_has_vanishing_gradient():
    cloud = _cloud([[0.0, 0.0, 3.0]], [[0.5, 0.2, 0.1]], [0.7], [[0.2, 0.2, 0.2]])
    cam = _camera()
    render = rasterize(cloud, cam, WHITE, CFG)
    target = PosedView(image=render.as_rgba().detach(), camera=cam)
    _, adjoint = composite_loss_adjoint(render, target, LossConfig())
    grads = rasterize_grad(cloud, cam, WHITE, adjoint, CFG)
    assert grads.global_norm() < 1e-8


def test_non_finite_adjoint_is_rejected():
    cloud = _cloud([[0.0, 0.0, 3.0]], [[0.5, 0.2, 0.1]], [0.7], [[0.2, 0.2, 0.2]])
    adjoint = torch.zeros(16, 16, 4, dtype=torch.float64)
    adjoint[0, 0, 0] = float("inf")
    with pytest.raises(ValueError):
        rasterize_grad(cloud, _camera(), WHITE, adjoint, CFG)


def test_gradients_match_finite_differences():
    cfg = RenderConfig(alpha_min=0.0, sigma_cutoff=100.0, alpha_max=0.999, cov2d_floor=0.3)
    cam = _camera(size=8, focal=8.0)
    generator = torch.Generator().manual_seed(7)
    base = _cloud(
        [[0.05, -0.05, 3.0], [-0.1, 0.1, 3.5], [0.1, 0.1, 4.0]],
        [[0.8, 0.2, 0.3], [0.2, 0.7, 0.4], [0.3, 0.3, 0.9]],
        [0.5, 0.4, 0.6],
        [[0.3, 0.2, 0.25], [0.25, 0.3, 0.2], [0.2, 0.25, 0.3]],
        rotations=[[0.9, 0.1, 0.2, 0.1], [0.8, -0.2, 0.1, 0.3], [1.0, 0.0, 0.0, 0.1]],
    )
    adjoint = torch.randn(8, 8, 4, generator=generator, dtype=torch.float64)
    grads = rasterize_grad(base, cam, WHITE, adjoint, cfg)

    def objective(cloud):
        image = rasterize(cloud, cam, WHITE, cfg)
        return float((image.as_rgba() * adjoint).sum())

    eps = 1e-6
    for name in ("positions", "colors", "opacities", "scales", "rotations"):
        field = getattr(base, name)
        analytic = getattr(grads, name)
        numeric = torch.zeros_like(field)
        flat = field.reshape(-1)
        for index in range(flat.numel()):
            plus, minus = flat.clone(), flat.clone()
            plus[index] += eps
            minus[index] -= eps
            f_plus = objective(base.with_fields(**{name: plus.reshape(field.shape)}))
            f_minus = objective(base.with_fields(**{name: minus.reshape(field.shape)}))
            numeric.reshape(-1)[index] = (f_plus - f_minus) / (2.0 * eps)
        error = (analytic - numeric).norm() / max(numeric.norm().item(), 1e-12)
        assert error < 1e-3, name

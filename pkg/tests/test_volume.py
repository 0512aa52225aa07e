import pytest
import torch
from app.core.cameras import Camera, look_at, orbit_camera
from app.core.triplane import DecoderMLP, TriPlane
from app.core.volume import intersect_cube, render_volume
from app.models import ActivationConfig, DecoderConfig, RenderConfig

ACT = ActivationConfig()
CFG = RenderConfig(volume_reference_grid=8)
BACKGROUND = (0.1, 0.2, 0.3)


def _field(color_bias=None, opacity_bias=None):
    torch.manual_seed(0)
    mlp = DecoderMLP(DecoderConfig(feature_dim=2, hidden_dim=8, num_layers=2, grid_size=8)).double()
    if color_bias is not None or opacity_bias is not None:
        mlp.zero_heads()
        with torch.no_grad():
            mlp.heads["color"].bias.fill_(color_bias or 0.0)
            mlp.heads["opacity"].bias.fill_(opacity_bias or 0.0)
    generator = torch.Generator().manual_seed(1)
    return TriPlane(torch.randn(3, 2, 6, 6, generator=generator, dtype=torch.float64)), mlp


def test_transparent_field_renders_background():
    tri, mlp = _field(color_bias=0.0, opacity_bias=-1e4)
    image = render_volume(tri, mlp, orbit_camera(10.0, 30.0, 8), 8, ACT, CFG, BACKGROUND)
    assert torch.allclose(image.rgb, torch.tensor(BACKGROUND, dtype=torch.float64).expand(8, 8, 3))
    assert torch.equal(image.alpha, torch.zeros(8, 8, dtype=torch.float64))


def test_dense_white_field_saturates_center():
    tri, mlp = _field(color_bias=20.0, opacity_bias=20.0)
    image = render_volume(tri, mlp, orbit_camera(0.0, 0.0, 8), 16, ACT, CFG, BACKGROUND)
    assert torch.allclose(image.rgb[3:5, 3:5], torch.ones(2, 2, 3, dtype=torch.float64), atol=0.05)


def test_rays_missing_the_cube_show_background():
    cam = Camera(extrinsic=look_at((0.0, 0.0, 3.0), target=(0.0, 0.0, 10.0)), fx=4.0, fy=4.0, cx=4.0, cy=4.0, width=8, height=8)
    tri, mlp = _field(color_bias=20.0, opacity_bias=20.0)
    image = render_volume(tri, mlp, cam, 8, ACT, CFG, BACKGROUND)
    assert torch.allclose(image.rgb, torch.tensor(BACKGROUND, dtype=torch.float64).expand(8, 8, 3))


def test_image_converges_with_more_samples():
    tri, mlp = _field()
    cam = orbit_camera(20.0, 45.0, 8)
    images = {s: render_volume(tri, mlp, cam, s, ACT, CFG, BACKGROUND).rgb for s in (8, 16, 32, 64)}
    coarse = (images[16] - images[8]).abs().max()
    fine = (images[64] - images[32]).abs().max()
    assert fine < coarse


def test_alpha_scales_linearly_with_step_length():
    # 16 samples over the 2-unit axial chord give steps of 0.125, half the 0.25 reference step.
    tri, mlp = _field(color_bias=0.0, opacity_bias=ACT.opacity_shift)
    cam = Camera(extrinsic=look_at((0.0, 0.0, 3.0)), fx=4.0, fy=4.0, cx=4.0, cy=4.0, width=8, height=8)
    image = render_volume(tri, mlp, cam, 16, ACT, CFG, BACKGROUND)
    assert image.alpha[4, 4].item() == pytest.approx(1.0 - 0.75 ** 16, abs=1e-9)


def test_too_few_samples_are_rejected():
    tri, mlp = _field()
    with pytest.raises(ValueError):
        render_volume(tri, mlp, orbit_camera(0.0, 0.0, 8), 1, ACT, CFG, BACKGROUND)


def test_cube_intersection():
    origins = torch.tensor([[0.0, 0.0, 3.0]], dtype=torch.float64)
    directions = torch.tensor([[0.0, 0.0, -1.0]], dtype=torch.float64)
    t_near, t_far, hit = intersect_cube(origins, directions)
    assert bool(hit[0])
    assert t_near.item() == pytest.approx(2.0)
    assert t_far.item() == pytest.approx(4.0)


def test_volume_render_is_differentiable():
    tri, mlp = _field()
    planes = tri.planes.clone().requires_grad_(True)
    image = render_volume(TriPlane(planes), mlp, orbit_camera(0.0, 0.0, 4), 4, ACT, CFG, BACKGROUND)
    image.rgb.sum().backward()
    assert planes.grad is not None and torch.isfinite(planes.grad).all()
    assert planes.grad.abs().sum() > 0

import math
import pytest
import torch
from app.core.gaussians import (
    GaussianCloud,
    activate,
    activate_cloud,
    blend_position,
    quaternion_multiply,
    quaternion_to_rotation,
    rotation_to_quaternion,
)
from app.models import ActivationConfig

ACT = ActivationConfig()


def _raw(offset=(0.0, 0.0, 0.0), color=(0.0, 0.0, 0.0), opacity=0.0, scale=(0.0, 0.0, 0.0), rotation=(1.0, 0.0, 0.0, 0.0)):
    return torch.tensor([*offset, *color, opacity, *scale, *rotation], dtype=torch.float64)


def test_blend_position_zero_offset_scales_grid_point():
    result = blend_position(torch.tensor([0.5, 0.0, -0.5]), torch.zeros(3), ACT)
    assert torch.allclose(result, torch.tensor([0.375, 0.0, -0.375]))


def test_blend_position_saturated_offset_reaches_corner():
    result = blend_position(torch.ones(3, dtype=torch.float64), torch.full((3,), 50.0, dtype=torch.float64), ACT)
    assert torch.allclose(result, torch.ones(3, dtype=torch.float64))


def test_blend_position_small_offset():
    result = blend_position(torch.zeros(3, dtype=torch.float64), torch.tensor([0.5, 0.0, 0.0], dtype=torch.float64), ACT)
    assert result[0].item() == pytest.approx(0.25 * math.tanh(0.5), abs=1e-12)
    assert result[0].item() == pytest.approx(0.11555, abs=1e-5)


def test_blend_position_rejects_point_outside_cube():
    with pytest.raises(ValueError):
        blend_position(torch.tensor([1.5, 0.0, 0.0]), torch.zeros(3), ACT)


def test_activation_examples():
    g = activate(_raw(opacity=2.0, scale=(2.3, 2.3, 2.3), rotation=(2.0, 0.0, 0.0, 0.0)), torch.zeros(3), ACT)
    assert g.opacity.item() == pytest.approx(0.5)
    assert torch.allclose(g.scale, torch.full((3,), 0.3, dtype=torch.float64))
    assert torch.allclose(g.color, torch.full((3,), 0.5 * 1.002 - 0.001, dtype=torch.float64))
    assert torch.allclose(g.rotation, torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=torch.float64))


def test_initial_opacity_is_about_one_tenth():
    g = activate(_raw(opacity=0.0), torch.zeros(3), ACT)
    assert g.opacity.item() == pytest.approx(0.1192, abs=1e-4)


def test_zero_rotation_is_rejected():
    with pytest.raises(ValueError):
        activate(_raw(rotation=(0.0, 0.0, 0.0, 0.0)), torch.zeros(3), ACT)


def test_non_finite_channels_are_rejected():
    with pytest.raises(ValueError):
        activate(_raw(opacity=float("nan")), torch.zeros(3), ACT)


def test_random_raw_parameters_stay_in_range():
    generator = torch.Generator().manual_seed(0)
    raw = torch.randn(10_000, 14, generator=generator, dtype=torch.float64) * 10.0
    raw[:, 10] = raw[:, 10].abs() + 1e-3
    p0 = torch.rand(10_000, 3, generator=generator, dtype=torch.float64) * 2.0 - 1.0
    cloud = activate_cloud(raw, p0, ACT)
    cloud.check_invariants(ACT)


def test_activations_are_monotone():
    values = torch.linspace(-20.0, 20.0, 401, dtype=torch.float64)
    raw = torch.zeros(401, 14, dtype=torch.float64)
    raw[:, 10] = 1.0
    raw[:, 3] = values
    raw[:, 6] = values
    raw[:, 7] = values
    cloud = activate_cloud(raw, torch.zeros(401, 3, dtype=torch.float64), ACT)
    assert bool((cloud.colors[1:, 0] >= cloud.colors[:-1, 0]).all())
    assert bool((cloud.opacities[1:] >= cloud.opacities[:-1]).all())
    assert bool((cloud.scales[1:, 0] >= cloud.scales[:-1, 0]).all())


def test_cloud_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        GaussianCloud(
            positions=torch.zeros(2, 3),
            colors=torch.zeros(2, 3),
            opacities=torch.zeros(3),
            scales=torch.zeros(2, 3),
            rotations=torch.zeros(2, 4),
        )


def test_grid_indexed_cloud_needs_n_cubed_gaussians():
    with pytest.raises(ValueError):
        GaussianCloud(
            positions=torch.zeros(7, 3),
            colors=torch.zeros(7, 3),
            opacities=torch.zeros(7),
            scales=torch.zeros(7, 3),
            rotations=torch.zeros(7, 4),
            grid_n=2,
        )


def test_quaternion_round_trip():
    q = torch.tensor([0.8, 0.2, -0.4, 0.4], dtype=torch.float64)
    q = q / q.norm()
    assert torch.allclose(rotation_to_quaternion(quaternion_to_rotation(q)), q, atol=1e-12)


def test_quaternion_product_matches_matrix_product():
    a = torch.tensor([0.9, 0.1, 0.3, -0.2], dtype=torch.float64)
    b = torch.tensor([0.5, -0.5, 0.5, 0.5], dtype=torch.float64)
    product = quaternion_to_rotation(quaternion_multiply(a, b))
    assert torch.allclose(product, quaternion_to_rotation(a) @ quaternion_to_rotation(b), atol=1e-12)

import pytest
import torch
from app.core.cameras import PosedView, orbit_camera
from app.core.rasterizer import RenderedImage
from app.models import LossConfig
from app.processing.losses import (
    composite_loss,
    composite_loss_adjoint,
    gradient_difference,
    register_perceptual,
)


def _target(size=16, seed=0):
    image = torch.rand(size, size, 4, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    return PosedView(image=image, camera=orbit_camera(6.0, 0.0, size))


def test_matching_render_has_zero_loss():
    target = _target()
    terms = composite_loss(RenderedImage(rgb=target.rgb.clone(), alpha=target.mask.clone()), target, LossConfig())
    assert float(terms.total) == 0.0


def test_constant_offset_costs_its_square():
    target = _target()
    delta = 0.05
    render = RenderedImage(rgb=target.rgb + delta, alpha=target.mask.clone())
    terms = composite_loss(render, target, LossConfig())
    assert float(terms.l2) == pytest.approx(delta ** 2, rel=1e-9)
    assert float(terms.perceptual) == pytest.approx(0.0, abs=1e-12)
    assert float(terms.total) == pytest.approx(delta ** 2, rel=1e-9)


def test_opacity_term_compares_coverage_with_mask():
    target = _target()
    render = RenderedImage(rgb=target.rgb.clone(), alpha=torch.zeros_like(target.mask))
    terms = composite_loss(render, target, LossConfig(w_opacity=2.0))
    assert float(terms.opacity) == pytest.approx(float((target.mask ** 2).mean()))
    assert float(terms.total) == pytest.approx(2.0 * float(terms.opacity))


def test_adjoint_matches_autograd():
    target = _target()
    rgb = torch.rand(16, 16, 3, generator=torch.Generator().manual_seed(1), dtype=torch.float64, requires_grad=True)
    alpha = torch.rand(16, 16, generator=torch.Generator().manual_seed(2), dtype=torch.float64, requires_grad=True)
    terms = composite_loss(RenderedImage(rgb=rgb, alpha=alpha), target, LossConfig())
    d_rgb, d_alpha = torch.autograd.grad(terms.total, (rgb, alpha))
    detached, adjoint = composite_loss_adjoint(RenderedImage(rgb=rgb.detach(), alpha=alpha.detach()), target, LossConfig())
    assert adjoint.shape == (16, 16, 4)
    assert torch.allclose(adjoint[..., :3], d_rgb)
    assert torch.allclose(adjoint[..., 3], d_alpha)
    assert float(detached.total) == pytest.approx(float(terms.total))


def test_gradient_difference_ignores_constant_shift():
    image = torch.rand(16, 16, 3, generator=torch.Generator().manual_seed(3))
    assert float(gradient_difference(image, image + 0.2)) == pytest.approx(0.0, abs=1e-6)
    assert float(gradient_difference(image, torch.zeros_like(image))) > 0.0


def test_shape_mismatch_is_rejected():
    target = _target(16)
    render = RenderedImage(rgb=torch.zeros(8, 8, 3, dtype=torch.float64), alpha=torch.zeros(8, 8, dtype=torch.float64))
    with pytest.raises(ValueError):
        composite_loss(render, target, LossConfig())


def test_unknown_perceptual_term_is_rejected():
    target = _target()
    with pytest.raises(ValueError):
        composite_loss(RenderedImage(rgb=target.rgb, alpha=target.mask), target, LossConfig(perceptual_extractor="lpips"))


def test_registered_perceptual_term_is_used():
    register_perceptual("mean_abs", lambda a, b: (a - b).abs().mean())
    target = _target()
    render = RenderedImage(rgb=target.rgb + 0.1, alpha=target.mask.clone())
    terms = composite_loss(render, target, LossConfig(perceptual_extractor="mean_abs", w_l2=0.0, w_opacity=0.0, w_perceptual=1.0))
    assert float(terms.total) == pytest.approx(0.1, rel=1e-6)

"""
Composite reconstruction loss.

The loss is a weighted sum of the mean squared RGB error, a perceptual term
and the mean squared error between rendered coverage and the object mask.
Perceptual terms are looked up by id so that a learned metric can be plugged
in; the built-in one compares image gradients at three dyadic scales.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Tuple
import torch
import torch.nn.functional as F
from app.core.cameras import PosedView
from app.core.rasterizer import RenderedImage
from app.models import LossConfig

logger = logging.getLogger(__name__)

GRADIENT_SCALES = 3

PerceptualTerm = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


def gradient_difference(a: torch.Tensor, b: torch.Tensor, scales: int = GRADIENT_SCALES) -> torch.Tensor:
    """
    Mean L1 distance between finite-difference gradients of two (H, W, 3) images,
    averaged over `scales` dyadic resolutions.
    """
    x = a.permute(2, 0, 1).unsqueeze(0)
    y = b.permute(2, 0, 1).unsqueeze(0)
    total = a.new_zeros(())
    used = 0
    for level in range(scales):
        if level:
            if min(x.shape[-2:]) < 4:
                break
            x = F.avg_pool2d(x, 2)
            y = F.avg_pool2d(y, 2)
        diff = x - y
        total = total + (diff[..., :, 1:] - diff[..., :, :-1]).abs().mean()
        total = total + (diff[..., 1:, :] - diff[..., :-1, :]).abs().mean()
        used += 1
    return total / max(used, 1)


def no_perceptual(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return a.new_zeros(())


PERCEPTUAL_TERMS: Dict[str, PerceptualTerm] = {
    "gradient": gradient_difference,
    "none": no_perceptual,
}


def register_perceptual(name: str, term: PerceptualTerm) -> None:
    """Makes a perceptual term selectable through `LossConfig.perceptual_extractor`."""
    PERCEPTUAL_TERMS[name] = term


@dataclass
class LossTerms:
    total: torch.Tensor
    l2: torch.Tensor
    perceptual: torch.Tensor
    opacity: torch.Tensor

    def as_floats(self) -> Dict[str, float]:
        return {name: float(getattr(self, name).detach()) for name in ("total", "l2", "perceptual", "opacity")}


def composite_loss(render: RenderedImage, target: PosedView, lcfg: LossConfig) -> LossTerms:
    """
    Weighted L2 + perceptual + opacity loss of one render against its target view.
    Args:
        render: Rendered colors and coverage.
        target: The view whose RGB and mask supervise the render.
        lcfg: Term weights and the perceptual term id.
    Returns:
        LossTerms: The total and each unweighted term.
    Raises:
        ValueError: If resolutions differ or the perceptual term is unknown.
    """
    if tuple(render.rgb.shape) != tuple(target.rgb.shape):
        raise ValueError(f"Render {tuple(render.rgb.shape)} and target {tuple(target.rgb.shape)} differ in shape.")
    if lcfg.perceptual_extractor not in PERCEPTUAL_TERMS:
        raise ValueError(f"Unknown perceptual term '{lcfg.perceptual_extractor}'.")
    rgb_target = target.rgb.to(render.rgb.dtype)
    mask = target.mask.to(render.alpha.dtype)
    l2 = ((render.rgb - rgb_target) ** 2).mean()
    perceptual = PERCEPTUAL_TERMS[lcfg.perceptual_extractor](render.rgb, rgb_target)
    opacity = ((render.alpha - mask) ** 2).mean()
    total = lcfg.w_l2 * l2 + lcfg.w_perceptual * perceptual + lcfg.w_opacity * opacity
    return LossTerms(total=total, l2=l2, perceptual=perceptual, opacity=opacity)


def composite_loss_adjoint(render: RenderedImage, target: PosedView, lcfg: LossConfig) -> Tuple[LossTerms, torch.Tensor]:
    """
    The loss together with its (H, W, 4) adjoint d(loss)/d(rgb, alpha), the
    input expected by `rasterize_grad`.
    """
    rgb = render.rgb.detach().clone().requires_grad_(True)
    alpha = render.alpha.detach().clone().requires_grad_(True)
    with torch.enable_grad():
        terms = composite_loss(RenderedImage(rgb=rgb, alpha=alpha), target, lcfg)
        d_rgb, d_alpha = torch.autograd.grad(terms.total, (rgb, alpha))
    detached = LossTerms(**{name: value.detach() for name, value in vars(terms).items()})
    return detached, torch.cat([d_rgb, d_alpha.unsqueeze(-1)], dim=-1)

"""
Differentiable 3D Gaussian Splatting rasterizer.

Gaussians are projected with the EWA approximation, sorted front to back by
camera depth (stable, so equal depths keep cloud order) and alpha-composited
per pixel over a background. Image rows are processed in chunks; when
gradients are required each chunk is recomputed during the backward pass
instead of keeping its per-pixel intermediates alive. Gradients come from
torch autograd, which makes `rasterize_grad` the exact vector-Jacobian
product of `rasterize`.
"""
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple
import torch
from torch.utils.checkpoint import checkpoint
from app.core.cameras import Camera
from app.core.gaussians import Gaussian, GaussianCloud, quaternion_to_rotation
from app.models import RenderConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RenderedImage:
    """Composited colors (H, W, 3) and coverage (H, W), both in [0, 1]."""
    rgb: torch.Tensor
    alpha: torch.Tensor

    def as_rgba(self) -> torch.Tensor:
        return torch.cat([self.rgb, self.alpha.unsqueeze(-1)], dim=-1)


@dataclass(frozen=True)
class Projection:
    """Screen-space footprint of every Gaussian of a cloud."""
    means2d: torch.Tensor
    cov2d: torch.Tensor
    depths: torch.Tensor
    visible: torch.Tensor


@dataclass(frozen=True)
class CloudGradients:
    """d(loss)/d(field) for each Gaussian, shaped like the cloud's tensors."""
    positions: torch.Tensor
    colors: torch.Tensor
    opacities: torch.Tensor
    scales: torch.Tensor
    rotations: torch.Tensor

    def global_norm(self) -> float:
        stacked = torch.cat([g.reshape(-1) for g in (self.positions, self.colors, self.opacities, self.scales, self.rotations)])
        return float(stacked.norm())


def _matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    # Elementwise product and sum keeps every Gaussian's result independent of its batch position.
    return (a.unsqueeze(-1) * b.unsqueeze(-3)).sum(-2)


def project_gaussians(cloud: GaussianCloud, cam: Camera, cfg: RenderConfig) -> Projection:
    """
    Projects every Gaussian of a cloud into the camera image.
    Args:
        cloud: Gaussians to project.
        cam: The camera.
        cfg: Provides the near plane and the covariance floor.
    Returns:
        Projection: Means in pixels, floored 2D covariances, camera depths and a visibility mask.
    """
    dtype = cloud.dtype
    rotation = cam.rotation.to(dtype)
    translation = cam.translation.to(dtype)
    positions = cloud.positions
    cam_points = (positions.unsqueeze(-2) * rotation).sum(-1) + translation
    x, y, z = cam_points.unbind(-1)
    visible = z > cfg.near_plane
    z_safe = torch.where(visible, z, torch.ones_like(z))

    means2d = torch.stack([cam.fx * x / z_safe + cam.cx, cam.fy * y / z_safe + cam.cy], dim=-1)

    gaussian_rotation = quaternion_to_rotation(cloud.rotations)
    world_to_local = _matmul(rotation.expand_as(gaussian_rotation), gaussian_rotation)
    scaled = world_to_local * cloud.scales.unsqueeze(-2)
    cov_cam = _matmul(scaled, scaled.transpose(-1, -2))

    zeros = torch.zeros_like(z_safe)
    jacobian = torch.stack(
        [
            torch.stack([cam.fx / z_safe, zeros, -cam.fx * x / z_safe ** 2], dim=-1),
            torch.stack([zeros, cam.fy / z_safe, -cam.fy * y / z_safe ** 2], dim=-1),
        ],
        dim=-2,
    )
    cov2d = _matmul(_matmul(jacobian, cov_cam), jacobian.transpose(-1, -2))
    cov2d = cov2d + cfg.cov2d_floor * torch.eye(2, dtype=dtype)
    return Projection(means2d=means2d, cov2d=cov2d, depths=z, visible=visible)


def project_gaussian(g: Gaussian, cam: Camera, cfg: RenderConfig) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Projects one Gaussian; returns (mean2d, cov2d, depth). Check depth against the near plane for culling."""
    cloud = GaussianCloud(
        positions=g.position.reshape(1, 3),
        colors=g.color.reshape(1, 3),
        opacities=g.opacity.reshape(1),
        scales=g.scale.reshape(1, 3),
        rotations=g.rotation.reshape(1, 4),
    )
    projection = project_gaussians(cloud, cam, cfg)
    return projection.means2d[0], projection.cov2d[0], projection.depths[0]


def _composite_rows(
    pixels: torch.Tensor,
    means2d: torch.Tensor,
    conics: torch.Tensor,
    opacities: torch.Tensor,
    colors: torch.Tensor,
    background: torch.Tensor,
    cutoff: float,
    alpha_min: float,
    alpha_max: float,
) -> Tuple[torch.Tensor, torch.Tensor]:
    delta = pixels.unsqueeze(1) - means2d.unsqueeze(0)
    dx, dy = delta.unbind(-1)
    power = -0.5 * (conics[:, 0] * dx * dx + 2.0 * conics[:, 1] * dx * dy + conics[:, 2] * dy * dy)
    alpha = opacities * torch.exp(power)
    valid = (power >= -0.5 * cutoff * cutoff) & (alpha >= alpha_min)
    alpha = torch.where(valid, torch.clamp(alpha, max=alpha_max), torch.zeros_like(alpha))
    transmittance = torch.cumprod(1.0 - alpha, dim=1)
    exclusive = torch.cat([torch.ones_like(transmittance[:, :1]), transmittance[:, :-1]], dim=1)
    weights = alpha * exclusive
    remaining = transmittance[:, -1:] if transmittance.shape[1] else torch.ones_like(pixels[:, :1])
    rgb = weights @ torch.clamp(colors, 0.0, 1.0) + remaining * background
    return rgb, 1.0 - remaining.squeeze(-1)


def rasterize(
    cloud: GaussianCloud,
    cam: Camera,
    background: Sequence[float],
    cfg: RenderConfig,
) -> RenderedImage:
    """
    Renders a cloud by front-to-back alpha compositing.
    Args:
        cloud: Gaussians; an empty cloud renders the background.
        cam: The camera; its width and height set the image size.
        background: RGB fill behind the Gaussians.
        cfg: Projection, cutoff and chunking constants.
    Returns:
        RenderedImage: rgb (H, W, 3) and alpha (H, W).
    """
    dtype = cloud.dtype
    bg = torch.as_tensor(background, dtype=dtype)
    projection = project_gaussians(cloud, cam, cfg)
    keep = projection.visible & (cloud.opacities >= cfg.alpha_min)

    cov = projection.cov2d
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = a * c - b * b
    half_trace = 0.5 * (a + c)
    largest_eig = half_trace + torch.sqrt(torch.clamp(half_trace ** 2 - det, min=0.0))
    radius = cfg.sigma_cutoff * torch.sqrt(largest_eig)
    mx, my = projection.means2d.unbind(-1)
    keep = keep & (mx + radius >= 0) & (mx - radius <= cam.width - 1) & (my + radius >= 0) & (my - radius <= cam.height - 1)

    index = torch.nonzero(keep, as_tuple=False).squeeze(-1)
    order = index[torch.sort(projection.depths[index].detach(), stable=True).indices]
    means2d = projection.means2d[order]
    det_sorted = det[order]
    conics = torch.stack([c[order], -b[order], a[order]], dim=-1) / det_sorted.unsqueeze(-1)
    opacities = cloud.opacities[order]
    colors = cloud.colors[order]
    radius_sorted = radius[order].detach()
    my_sorted = means2d[:, 1].detach()

    use_checkpoint = torch.is_grad_enabled() and any(
        t.requires_grad for t in (means2d, conics, opacities, colors)
    )
    xs = torch.arange(cam.width, dtype=dtype)
    rgb_rows, alpha_rows = [], []
    for y0 in range(0, cam.height, cfg.chunk_rows):
        y1 = min(y0 + cfg.chunk_rows, cam.height)
        ys = torch.arange(y0, y1, dtype=dtype)
        pixels = torch.stack(torch.meshgrid(ys, xs, indexing="ij")[::-1], dim=-1).reshape(-1, 2)
        rows = torch.nonzero((my_sorted + radius_sorted >= y0) & (my_sorted - radius_sorted <= y1 - 1), as_tuple=False).squeeze(-1)
        args = (pixels, means2d[rows], conics[rows], opacities[rows], colors[rows], bg)
        kwargs = dict(cutoff=cfg.sigma_cutoff, alpha_min=cfg.alpha_min, alpha_max=cfg.alpha_max)
        if use_checkpoint:
            rgb, alpha = checkpoint(_composite_rows, *args, use_reentrant=False, **kwargs)
        else:
            rgb, alpha = _composite_rows(*args, **kwargs)
        rgb_rows.append(rgb.reshape(y1 - y0, cam.width, 3))
        alpha_rows.append(alpha.reshape(y1 - y0, cam.width))
    return RenderedImage(rgb=torch.cat(rgb_rows, dim=0), alpha=torch.cat(alpha_rows, dim=0))


def rasterize_grad(
    cloud: GaussianCloud,
    cam: Camera,
    background: Sequence[float],
    loss_adjoint: torch.Tensor,
    cfg: RenderConfig,
) -> CloudGradients:
    """
    Back-propagates an image-space adjoint to every Gaussian field.
    Args:
        cloud: Gaussians as passed to `rasterize`.
        cam: The camera.
        background: RGB fill.
        loss_adjoint: (H, W, 4) d(loss)/d(rgb, alpha).
        cfg: Rendering constants.
    Returns:
        CloudGradients: Gradients for positions, colors, opacities, scales and rotations.
    Raises:
        ValueError: If the adjoint has the wrong shape or non-finite entries.
    """
    expected = (cam.height, cam.width, 4)
    if tuple(loss_adjoint.shape) != expected:
        raise ValueError(f"Loss adjoint must have shape {expected}, got {tuple(loss_adjoint.shape)}.")
    if not bool(torch.isfinite(loss_adjoint).all()):
        raise ValueError("Loss adjoint contains non-finite values.")
    fields = {
        name: getattr(cloud, name).detach().clone().requires_grad_(True)
        for name in ("positions", "colors", "opacities", "scales", "rotations")
    }
    leaf_cloud = GaussianCloud(grid_n=cloud.grid_n, **fields)
    adjoint = loss_adjoint.to(cloud.dtype)
    with torch.enable_grad():
        image = rasterize(leaf_cloud, cam, background, cfg)
        grads = torch.autograd.grad(
            outputs=(image.rgb, image.alpha),
            inputs=list(fields.values()),
            grad_outputs=(adjoint[..., :3], adjoint[..., 3]),
            allow_unused=True,
        )
    resolved = {
        name: torch.zeros_like(tensor) if grad is None else grad
        for (name, tensor), grad in zip(fields.items(), grads)
    }
    return CloudGradients(**resolved)


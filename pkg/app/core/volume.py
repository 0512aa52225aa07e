"""
Ray-marching volume renderer used for NeRF-style pretraining.

Only the decoder trunk and its color and opacity heads are evaluated. Each
pixel ray is clipped to the [-1, 1] cube and sampled at the midpoints of
equal segments. A sample's alpha is the decoder opacity scaled by the
segment length over the reference step 2/n of the init grid.
"""
from typing import Sequence, Tuple
import torch
from torch.utils.checkpoint import checkpoint
from app.core.cameras import Camera
from app.core.rasterizer import RenderedImage
from app.core.triplane import DecoderMLP, TriPlane, sample_features
from app.models import ActivationConfig, RenderConfig

_OPACITY_CEILING = 1.0 - 1e-6
_PARALLEL_EPS = 1e-12


def camera_rays(cam: Camera, dtype: torch.dtype) -> Tuple[torch.Tensor, torch.Tensor]:
    """World-space origins and unit directions of every pixel ray, row-major (H * W, 3)."""
    ys, xs = torch.meshgrid(
        torch.arange(cam.height, dtype=torch.float64),
        torch.arange(cam.width, dtype=torch.float64),
        indexing="ij",
    )
    directions_cam = torch.stack(
        [(xs - cam.cx) / cam.fx, (ys - cam.cy) / cam.fy, torch.ones_like(xs)], dim=-1
    ).reshape(-1, 3)
    directions = directions_cam @ cam.rotation
    directions = directions / directions.norm(dim=-1, keepdim=True)
    origins = cam.center.expand_as(directions)
    return origins.to(dtype), directions.to(dtype)


def intersect_cube(origins: torch.Tensor, directions: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Slab test against [-1, 1]^3; returns (t_near, t_far, hit)."""
    safe = torch.where(directions.abs() < _PARALLEL_EPS, torch.full_like(directions, _PARALLEL_EPS), directions)
    t_lo = (-1.0 - origins) / safe
    t_hi = (1.0 - origins) / safe
    t_near = torch.minimum(t_lo, t_hi).amax(dim=-1).clamp(min=0.0)
    t_far = torch.maximum(t_lo, t_hi).amin(dim=-1)
    hit = t_far > t_near
    return t_near, t_far, hit


def _march(
    planes: torch.Tensor,
    origins: torch.Tensor,
    directions: torch.Tensor,
    t_near: torch.Tensor,
    steps: torch.Tensor,
    background: torch.Tensor,
    mlp: DecoderMLP,
    act: ActivationConfig,
    samples: int,
    reference_step: float,
) -> Tuple[torch.Tensor, torch.Tensor]:
    offsets = torch.arange(samples, dtype=origins.dtype) + 0.5
    t_values = t_near.unsqueeze(-1) + offsets * steps.unsqueeze(-1)
    points = origins.unsqueeze(1) + t_values.unsqueeze(-1) * directions.unsqueeze(1)
    points = points.reshape(-1, 3).clamp(-1.0, 1.0)
    color_raw, opacity_raw = mlp.nerf_forward(sample_features(TriPlane(planes), points))
    colors = torch.sigmoid(color_raw) * act.color_gain - act.color_bias
    opacity = torch.sigmoid(opacity_raw - act.opacity_shift).clamp(max=_OPACITY_CEILING)
    colors = colors.reshape(-1, samples, 3)
    opacity = opacity.reshape(-1, samples)

    ratio = (steps / reference_step).unsqueeze(-1)
    alpha = (opacity * ratio).clamp(max=_OPACITY_CEILING)
    transmittance = torch.cumprod(1.0 - alpha, dim=-1)
    exclusive = torch.cat([torch.ones_like(transmittance[:, :1]), transmittance[:, :-1]], dim=-1)
    weights = alpha * exclusive
    remaining = transmittance[:, -1:]
    rgb = (weights.unsqueeze(-1) * colors.clamp(0.0, 1.0)).sum(dim=1) + remaining * background
    return rgb, 1.0 - remaining.squeeze(-1)


def render_volume(
    tri: TriPlane,
    mlp: DecoderMLP,
    cam: Camera,
    samples_per_ray: int,
    act: ActivationConfig,
    cfg: RenderConfig,
    background: Sequence[float] = (1.0, 1.0, 1.0),
) -> RenderedImage:
    """
    Volume-renders the decoder's color and opacity field.
    Args:
        tri: Tri-plane features.
        mlp: Decoder; only the trunk, color head and opacity head are used.
        cam: The camera.
        samples_per_ray: Midpoint samples per ray inside the cube.
        act: Color and opacity activation constants.
        cfg: Provides the reference step and row chunking.
        background: RGB fill for rays that miss or pass through.
    Returns:
        RenderedImage: rgb (H, W, 3) and alpha (H, W).
    Raises:
        ValueError: If fewer than two samples per ray are requested.
    """
    if samples_per_ray < 2:
        raise ValueError(f"Volume rendering needs at least 2 samples per ray, got {samples_per_ray}.")
    dtype = tri.planes.dtype
    bg = torch.as_tensor(background, dtype=dtype)
    origins, directions = camera_rays(cam, dtype)
    t_near, t_far, hit = intersect_cube(origins, directions)
    # Missed rays get zero-length segments and therefore zero alpha.
    steps = torch.where(hit, (t_far - t_near) / samples_per_ray, torch.zeros_like(t_near))

    use_checkpoint = torch.is_grad_enabled() and (
        tri.planes.requires_grad or any(p.requires_grad for p in mlp.parameters())
    )
    rays_per_chunk = cfg.chunk_rows * cam.width
    rgb_chunks, alpha_chunks = [], []
    for start in range(0, origins.shape[0], rays_per_chunk):
        stop = start + rays_per_chunk
        args = (tri.planes, origins[start:stop], directions[start:stop], t_near[start:stop], steps[start:stop], bg)
        kwargs = dict(mlp=mlp, act=act, samples=samples_per_ray, reference_step=cfg.reference_step)
        if use_checkpoint:
            rgb, alpha = checkpoint(_march, *args, use_reentrant=False, **kwargs)
        else:
            rgb, alpha = _march(*args, **kwargs)
        rgb_chunks.append(rgb)
        alpha_chunks.append(alpha)
    rgb = torch.cat(rgb_chunks).reshape(cam.height, cam.width, 3)
    alpha = torch.cat(alpha_chunks).reshape(cam.height, cam.width)
    return RenderedImage(rgb=rgb, alpha=alpha)

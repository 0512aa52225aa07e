"""
Tri-plane feature volume, initial-position grid and the Gaussian decoder MLP.

A point p in [-1, 1]^3 reads bilinear samples from the xy, xz and yz planes
and concatenates them into a 3*d feature. The decoder maps that feature to the
14 raw Gaussian channels; its trunk together with the color and opacity heads
doubles as the NeRF field used during volume-rendered pretraining.
"""
import copy
import logging
from dataclasses import dataclass
from typing import Tuple
import torch
import torch.nn as nn
import torch.nn.functional as F
from app.core.gaussians import GaussianCloud, activate_cloud
from app.models import ActivationConfig, DecoderConfig

logger = logging.getLogger(__name__)

HEAD_DIMS = (("offset", 3), ("color", 3), ("opacity", 1), ("scale", 3), ("rotation", 4))
NERF_HEADS = ("color", "opacity")
_HEAD_INIT_STD = 1e-3


@dataclass(frozen=True)
class TriPlane:
    """Three R x R feature planes of d channels, stacked as (3, d, R, R) in xy, xz, yz order."""
    planes: torch.Tensor

    def __post_init__(self) -> None:
        if self.planes.dim() != 4 or self.planes.shape[0] != 3 or self.planes.shape[2] != self.planes.shape[3]:
            raise ValueError(f"Tri-plane tensor must have shape (3, d, R, R), got {tuple(self.planes.shape)}.")

    @property
    def channels(self) -> int:
        return int(self.planes.shape[1])

    @property
    def resolution(self) -> int:
        return int(self.planes.shape[2])

    @property
    def plane_xy(self) -> torch.Tensor:
        return self.planes[0]

    @property
    def plane_xz(self) -> torch.Tensor:
        return self.planes[1]

    @property
    def plane_yz(self) -> torch.Tensor:
        return self.planes[2]


def sample_features(tri: TriPlane, points: torch.Tensor) -> torch.Tensor:
    """
    Bilinearly samples the tri-plane at many points.
    Args:
        tri: The feature planes.
        points: (N, 3) points in [-1, 1].
    Returns:
        torch.Tensor: (N, 3 * d) concatenated xy, xz and yz features.
    Raises:
        ValueError: If any point lies outside the cube.
    """
    if bool((points.abs() > 1.0).any()):
        raise ValueError("Tri-plane sample points must lie within [-1, 1]^3.")
    points = points.to(tri.planes.dtype)
    # grid_sample reads (column, row); the first coordinate of each pair is the column.
    coords = torch.stack([points[:, [0, 1]], points[:, [0, 2]], points[:, [1, 2]]])
    sampled = F.grid_sample(
        tri.planes,
        coords.unsqueeze(2),
        mode="bilinear",
        padding_mode="border",
        align_corners=True,
    )
    # (3, d, N, 1) -> (N, 3 * d)
    return sampled.squeeze(-1).permute(2, 0, 1).reshape(points.shape[0], -1)


def sample_feature(tri: TriPlane, p: torch.Tensor) -> torch.Tensor:
    """Samples the 3 * d feature of a single point."""
    p = torch.as_tensor(p, dtype=tri.planes.dtype)
    return sample_features(tri, p.reshape(1, 3))[0]


@dataclass(frozen=True)
class InitGrid:
    """Cell centers of a uniform n^3 partition of [-1, 1]^3, flat index (i * n + j) * n + k."""
    n: int
    positions: torch.Tensor

    @property
    def count(self) -> int:
        return self.n ** 3


def make_init_grid(n: int, dtype: torch.dtype = torch.float32) -> InitGrid:
    """
    Builds the initial-position grid.
    Args:
        n: Points per axis.
        dtype: Floating point type of the positions.
    Returns:
        InitGrid: n^3 cell centers with spacing 2 / n.
    Raises:
        ValueError: If n is smaller than one.
    """
    if n < 1:
        raise ValueError(f"Init grid needs at least one point per axis, got n={n}.")
    centers = -1.0 + (2.0 * torch.arange(n, dtype=torch.float64) + 1.0) / n
    gx, gy, gz = torch.meshgrid(centers, centers, centers, indexing="ij")
    positions = torch.stack([gx, gy, gz], dim=-1).reshape(-1, 3).to(dtype)
    return InitGrid(n=n, positions=positions)


class DecoderMLP(nn.Module):
    """Fully-connected trunk on 3 * d features followed by five linear heads (14 outputs)."""

    def __init__(self, cfg: DecoderConfig) -> None:
        super().__init__()
        self.cfg = cfg
        layers = []
        in_dim = 3 * cfg.feature_dim
        for _ in range(cfg.num_layers):
            layers += [nn.Linear(in_dim, cfg.hidden_dim), nn.LeakyReLU(cfg.negative_slope)]
            in_dim = cfg.hidden_dim
        self.trunk = nn.Sequential(*layers)
        self.heads = nn.ModuleDict({name: nn.Linear(cfg.hidden_dim, dim) for name, dim in HEAD_DIMS})
        self.reset_gaussian_heads()

    @property
    def input_dim(self) -> int:
        return 3 * self.cfg.feature_dim

    def reset_gaussian_heads(self) -> None:
        """Fresh initialization of the heads that are never transferred from the NeRF field."""
        with torch.no_grad():
            nn.init.zeros_(self.heads["offset"].weight)
            nn.init.zeros_(self.heads["offset"].bias)
            for name in ("scale", "rotation"):
                nn.init.normal_(self.heads[name].weight, std=_HEAD_INIT_STD)
                nn.init.zeros_(self.heads[name].bias)
            self.heads["rotation"].bias.copy_(torch.tensor([1.0, 0.0, 0.0, 0.0]))

    def zero_heads(self) -> None:
        """Zeroes every head; the rotation bias keeps the identity quaternion."""
        with torch.no_grad():
            for head in self.heads.values():
                nn.init.zeros_(head.weight)
                nn.init.zeros_(head.bias)
            self.heads["rotation"].bias.copy_(torch.tensor([1.0, 0.0, 0.0, 0.0]))

    def _check_input(self, features: torch.Tensor) -> None:
        if features.shape[-1] != self.input_dim:
            raise ValueError(f"Decoder expects {self.input_dim} feature channels, got {features.shape[-1]}.")

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        self._check_input(features)
        hidden = self.trunk(features)
        return torch.cat([self.heads[name](hidden) for name, _ in HEAD_DIMS], dim=-1)

    def nerf_forward(self, features: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Raw color (N, 3) and raw opacity (N, 1) from the shared trunk."""
        self._check_input(features)
        hidden = self.trunk(features)
        return self.heads["color"](hidden), self.heads["opacity"](hidden)


def decode_cloud(
    tri: TriPlane,
    mlp: DecoderMLP,
    grid: InitGrid,
    cfg: ActivationConfig,
    chunk_size: int = 32768,
) -> GaussianCloud:
    """
    Decodes one Gaussian per init-grid point.
    Args:
        tri: Tri-plane features.
        mlp: The decoder.
        grid: Initial positions; output order follows the grid order.
        cfg: Activation constants.
        chunk_size: Grid points decoded per MLP call.
    Returns:
        GaussianCloud: grid.count Gaussians, grid-indexed.
    Raises:
        ValueError: If the tri-plane width does not match the decoder input.
    """
    if 3 * tri.channels != mlp.input_dim:
        raise ValueError(f"Tri-plane gives {3 * tri.channels} feature channels but the decoder expects {mlp.input_dim}.")
    positions = grid.positions.to(tri.planes.dtype)
    raw = torch.cat(
        [mlp(sample_features(tri, chunk)) for chunk in torch.split(positions, chunk_size)],
        dim=0,
    )
    return activate_cloud(raw, positions, cfg, grid_n=grid.n)


def transfer_nerf_heads(src: DecoderMLP, dst: DecoderMLP) -> DecoderMLP:
    """
    Copies the trunk, color head and opacity head of a pretrained NeRF decoder.
    Args:
        src: Decoder trained through volume rendering.
        dst: Freshly initialized decoder.
    Returns:
        DecoderMLP: A copy of dst with the shared parts taken from src.
    Raises:
        ValueError: If the trunk or the transferred heads differ in shape.
    """
    result = copy.deepcopy(dst)
    src_state = src.state_dict()
    updates = {}
    for key, value in result.state_dict().items():
        if key.startswith("trunk.") or any(key.startswith(f"heads.{name}.") for name in NERF_HEADS):
            if key not in src_state or src_state[key].shape != value.shape:
                raise ValueError(f"Cannot transfer decoder parameter '{key}': shapes differ between source and target.")
            updates[key] = src_state[key].detach().clone()
    result.load_state_dict(updates, strict=False)
    logger.info(f"Transferred {len(updates)} decoder tensors from the NeRF field.")
    return result

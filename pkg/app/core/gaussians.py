"""
3D Gaussian data model and the raw-parameter activation rules.

A decoder emits 14 unbounded channels per Gaussian in the fixed order
offset(3), color(3), opacity(1), scale(3), rotation(4). This module turns
them into bounded Gaussians: positions blended with their grid point, colors
as zero-order SH coefficients, opacities in (0, 1), clipped scales and unit
quaternions in (w, x, y, z) order. Everything is written in torch so the same
code path is used for inference and for autograd during training.
"""
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union
import torch
from app.models import ActivationConfig

RAW_CHANNELS = 14
OFFSET_SLICE = slice(0, 3)
COLOR_SLICE = slice(3, 6)
OPACITY_SLICE = slice(6, 7)
SCALE_SLICE = slice(7, 10)
ROTATION_SLICE = slice(10, 14)

TensorLike = Union[torch.Tensor, Sequence[float]]


def _as_tensor(value: TensorLike, dtype: Optional[torch.dtype] = None) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        return value if dtype is None else value.to(dtype)
    return torch.as_tensor(value, dtype=dtype or torch.get_default_dtype())


@dataclass(frozen=True)
class RawGaussianParams:
    """Unbounded decoder output for one or many Gaussians (leading batch dims allowed)."""
    offset_raw: torch.Tensor
    color_raw: torch.Tensor
    opacity_raw: torch.Tensor
    scale_raw: torch.Tensor
    rotation_raw: torch.Tensor

    @classmethod
    def from_tensor(cls, raw: TensorLike) -> "RawGaussianParams":
        raw = _as_tensor(raw)
        if raw.shape[-1] != RAW_CHANNELS:
            raise ValueError(f"Raw Gaussian parameters need {RAW_CHANNELS} channels, got {raw.shape[-1]}.")
        return cls(
            offset_raw=raw[..., OFFSET_SLICE],
            color_raw=raw[..., COLOR_SLICE],
            opacity_raw=raw[..., OPACITY_SLICE],
            scale_raw=raw[..., SCALE_SLICE],
            rotation_raw=raw[..., ROTATION_SLICE],
        )

    def to_tensor(self) -> torch.Tensor:
        return torch.cat(
            [self.offset_raw, self.color_raw, self.opacity_raw, self.scale_raw, self.rotation_raw], dim=-1
        )


@dataclass(frozen=True)
class Gaussian:
    """A single activated Gaussian."""
    position: torch.Tensor
    color: torch.Tensor
    opacity: torch.Tensor
    scale: torch.Tensor
    rotation: torch.Tensor


@dataclass(frozen=True)
class GaussianCloud:
    """
    An ordered, immutable set of activated Gaussians stored as parallel tensors.

    `grid_n` is set when Gaussian i was decoded from init-grid point i, which is
    what lets sub-cube noise address Gaussians by grid coordinates.
    """
    positions: torch.Tensor
    colors: torch.Tensor
    opacities: torch.Tensor
    scales: torch.Tensor
    rotations: torch.Tensor
    grid_n: Optional[int] = None

    def __post_init__(self) -> None:
        count = self.positions.shape[0]
        expected = {
            "positions": (count, 3),
            "colors": (count, 3),
            "opacities": (count,),
            "scales": (count, 3),
            "rotations": (count, 4),
        }
        for name, shape in expected.items():
            if tuple(getattr(self, name).shape) != shape:
                raise ValueError(f"GaussianCloud.{name} must have shape {shape}, got {tuple(getattr(self, name).shape)}.")
        if self.grid_n is not None and self.grid_n ** 3 != count:
            raise ValueError(f"Grid-indexed cloud with n={self.grid_n} must hold {self.grid_n ** 3} Gaussians, got {count}.")

    @property
    def count(self) -> int:
        return int(self.positions.shape[0])

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, index: int) -> Gaussian:
        return Gaussian(
            position=self.positions[index],
            color=self.colors[index],
            opacity=self.opacities[index],
            scale=self.scales[index],
            rotation=self.rotations[index],
        )

    @property
    def dtype(self) -> torch.dtype:
        return self.positions.dtype

    @classmethod
    def empty(cls, dtype: torch.dtype = torch.float32) -> "GaussianCloud":
        return cls(
            positions=torch.zeros(0, 3, dtype=dtype),
            colors=torch.zeros(0, 3, dtype=dtype),
            opacities=torch.zeros(0, dtype=dtype),
            scales=torch.zeros(0, 3, dtype=dtype),
            rotations=torch.zeros(0, 4, dtype=dtype),
        )

    def permute(self, order: torch.Tensor) -> "GaussianCloud":
        """Returns the cloud reordered by `order`; the grid indexing is dropped."""
        return GaussianCloud(
            positions=self.positions[order],
            colors=self.colors[order],
            opacities=self.opacities[order],
            scales=self.scales[order],
            rotations=self.rotations[order],
        )

    def to(self, dtype: torch.dtype) -> "GaussianCloud":
        return replace(
            self,
            positions=self.positions.to(dtype),
            colors=self.colors.to(dtype),
            opacities=self.opacities.to(dtype),
            scales=self.scales.to(dtype),
            rotations=self.rotations.to(dtype),
        )

    def detach(self) -> "GaussianCloud":
        return replace(
            self,
            positions=self.positions.detach(),
            colors=self.colors.detach(),
            opacities=self.opacities.detach(),
            scales=self.scales.detach(),
            rotations=self.rotations.detach(),
        )

    def with_fields(self, **fields: torch.Tensor) -> "GaussianCloud":
        return replace(self, **fields)

    def check_invariants(self, cfg: ActivationConfig, atol: float = 1e-6) -> None:
        """
        Verifies every per-field range of the Gaussian type.
        Raises:
            ValueError: Naming the first violated range.
        """
        checks = {
            "position": bool((self.positions.abs() <= 1.0).all()),
            "color": bool(((self.colors >= cfg.color_min - atol) & (self.colors <= cfg.color_max + atol)).all()),
            "opacity": bool(((self.opacities > 0.0) & (self.opacities < 1.0)).all()),
            "scale": bool(((self.scales >= cfg.scale_min - atol) & (self.scales <= cfg.scale_max + atol)).all()),
            "rotation": bool(((self.rotations.norm(dim=-1) - 1.0).abs() <= atol).all()),
        }
        for name, ok in checks.items():
            if not ok:
                raise ValueError(f"Gaussian {name} outside its valid range.")


def blend_position(p0: TensorLike, offset_raw: TensorLike, cfg: ActivationConfig) -> torch.Tensor:
    """
    Blends a grid point with a tanh-bounded offset: alpha * p0 + (1 - alpha) * tanh(offset).
    Args:
        p0: Grid point(s) in [-1, 1], shape (..., 3).
        offset_raw: Unbounded offsets, shape (..., 3).
        cfg: Activation constants providing alpha.
    Returns:
        torch.Tensor: Positions in [-1, 1].
    Raises:
        ValueError: If p0 leaves [-1, 1].
    """
    offset_raw = _as_tensor(offset_raw)
    p0 = _as_tensor(p0, offset_raw.dtype)
    if bool((p0.abs() > 1.0).any()):
        raise ValueError("Initial positions must lie within [-1, 1]; the init grid is malformed.")
    return cfg.alpha * p0 + (1.0 - cfg.alpha) * torch.tanh(offset_raw)


def _activate_fields(raw: RawGaussianParams, p0: torch.Tensor, cfg: ActivationConfig):
    stacked = raw.to_tensor()
    if not bool(torch.isfinite(stacked).all()):
        raise ValueError("Raw Gaussian parameters contain non-finite values.")
    rotation_norm = raw.rotation_raw.norm(dim=-1, keepdim=True)
    if bool((rotation_norm == 0).any()):
        raise ValueError("Raw rotation quaternion is all zero; normalization is undefined.")
    position = blend_position(p0, raw.offset_raw, cfg)
    color = torch.sigmoid(raw.color_raw) * cfg.color_gain - cfg.color_bias
    opacity = torch.sigmoid(raw.opacity_raw - cfg.opacity_shift).squeeze(-1)
    scale = torch.clamp(torch.sigmoid(raw.scale_raw - cfg.scale_shift), cfg.scale_min, cfg.scale_max)
    rotation = raw.rotation_raw / rotation_norm
    return position, color, opacity, scale, rotation


def activate(raw: Union[RawGaussianParams, TensorLike], p0: TensorLike, cfg: ActivationConfig) -> Gaussian:
    """
    Activates one Gaussian from its 14 raw channels.
    Args:
        raw: RawGaussianParams or a 14-channel tensor.
        p0: The Gaussian's grid point.
        cfg: Activation constants.
    Returns:
        Gaussian: The bounded Gaussian.
    Raises:
        ValueError: On non-finite channels, a zero rotation or p0 outside [-1, 1].
    """
    if not isinstance(raw, RawGaussianParams):
        raw = RawGaussianParams.from_tensor(raw)
    position, color, opacity, scale, rotation = _activate_fields(raw, _as_tensor(p0), cfg)
    return Gaussian(position=position, color=color, opacity=opacity, scale=scale, rotation=rotation)


def activate_cloud(
    raw: torch.Tensor,
    p0: torch.Tensor,
    cfg: ActivationConfig,
    grid_n: Optional[int] = None,
) -> GaussianCloud:
    """Batched, differentiable `activate` over an (N, 14) raw tensor and (N, 3) grid points."""
    params = RawGaussianParams.from_tensor(raw)
    position, color, opacity, scale, rotation = _activate_fields(params, p0.to(raw.dtype), cfg)
    return GaussianCloud(
        positions=position,
        colors=color,
        opacities=opacity,
        scales=scale,
        rotations=rotation,
        grid_n=grid_n,
    )


def quaternion_to_rotation(q: torch.Tensor) -> torch.Tensor:
    """Converts (..., 4) quaternions in (w, x, y, z) order to (..., 3, 3) rotation matrices."""
    q = q / q.norm(dim=-1, keepdim=True)
    w, x, y, z = q.unbind(-1)
    rows = [
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ]
    return torch.stack(rows, dim=-1).reshape(*q.shape[:-1], 3, 3)


def quaternion_multiply(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Hamilton product a * b of (w, x, y, z) quaternions."""
    aw, ax, ay, az = a.unbind(-1)
    bw, bx, by, bz = b.unbind(-1)
    return torch.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dim=-1,
    )


def rotation_to_quaternion(matrix: torch.Tensor) -> torch.Tensor:
    """Converts a single 3x3 rotation matrix to a (w, x, y, z) quaternion with w >= 0."""
    m = matrix
    trace = m[0, 0] + m[1, 1] + m[2, 2]
    if trace > 0:
        s = torch.sqrt(trace + 1.0) * 2
        q = torch.stack([0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = torch.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = torch.stack([(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = torch.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = torch.stack([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = torch.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = torch.stack([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    q = q / q.norm()
    return q if q[0] >= 0 else -q

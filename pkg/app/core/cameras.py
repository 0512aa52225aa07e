"""
Pinhole cameras, posed views and the 20-value camera vector.

Cameras follow the OpenCV convention: the 4x4 extrinsic maps world to camera
coordinates, camera x points right, y down and z forward, and pixel (u, v)
has its center at integer coordinates. The world is y-up; orbit cameras look
at the origin from a sphere of fixed radius.
"""
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple
import torch

_ORTHONORMAL_TOL = 1e-6


@dataclass(frozen=True)
class Camera:
    """A pinhole camera with a rigid world-to-camera extrinsic."""
    extrinsic: torch.Tensor
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    strict: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self) -> None:
        extrinsic = torch.as_tensor(self.extrinsic, dtype=torch.float64)
        object.__setattr__(self, "extrinsic", extrinsic)
        if tuple(extrinsic.shape) != (4, 4):
            raise ValueError(f"Camera extrinsic must be 4x4, got {tuple(extrinsic.shape)}.")
        if not bool(torch.isfinite(extrinsic).all()):
            raise ValueError("Camera extrinsic contains non-finite values.")
        rotation = extrinsic[:3, :3]
        gram_error = (rotation @ rotation.T - torch.eye(3, dtype=torch.float64)).abs().max()
        if gram_error > _ORTHONORMAL_TOL or torch.linalg.det(rotation) < 0:
            raise ValueError("Camera rotation block must be orthonormal with determinant +1.")
        if not torch.equal(extrinsic[3], torch.tensor([0.0, 0.0, 0.0, 1.0], dtype=torch.float64)):
            raise ValueError("Camera extrinsic bottom row must be (0, 0, 0, 1).")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("Camera focal lengths must be positive.")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("Camera image size must be positive.")
        if self.strict and not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("Camera principal point must lie inside the image.")

    @property
    def rotation(self) -> torch.Tensor:
        return self.extrinsic[:3, :3]

    @property
    def translation(self) -> torch.Tensor:
        return self.extrinsic[:3, 3]

    @property
    def center(self) -> torch.Tensor:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def crop(self, x0: int, y0: int, width: int, height: int) -> "Camera":
        """
        Returns the camera of an image sub-window starting at pixel (x0, y0).
        The principal point of a crop may fall outside the window.
        """
        if x0 < 0 or y0 < 0 or x0 + width > self.width or y0 + height > self.height:
            raise ValueError("Crop window exceeds the image bounds.")
        return Camera(
            extrinsic=self.extrinsic,
            fx=self.fx,
            fy=self.fy,
            cx=self.cx - x0,
            cy=self.cy - y0,
            width=width,
            height=height,
            strict=False,
        )

    def transformed(self, world_transform: torch.Tensor) -> "Camera":
        """The same camera after the whole world is moved by a rigid 4x4 transform."""
        world_transform = torch.as_tensor(world_transform, dtype=torch.float64)
        rotation = world_transform[:3, :3]
        inverse = torch.eye(4, dtype=torch.float64)
        inverse[:3, :3] = rotation.T
        inverse[:3, 3] = -rotation.T @ world_transform[:3, 3]
        return Camera(
            extrinsic=self.extrinsic @ inverse,
            fx=self.fx,
            fy=self.fy,
            cx=self.cx,
            cy=self.cy,
            width=self.width,
            height=self.height,
            strict=self.strict,
        )


@dataclass(frozen=True)
class PosedView:
    """An RGBA image in [0, 1] (straight alpha, RGB composited over the background) and its camera."""
    image: torch.Tensor
    camera: Camera
    elevation_deg: float = 0.0
    azimuth_deg: float = 0.0

    def __post_init__(self) -> None:
        expected = (self.camera.height, self.camera.width, 4)
        if tuple(self.image.shape) != expected:
            raise ValueError(f"View image must have shape {expected}, got {tuple(self.image.shape)}.")

    @property
    def rgb(self) -> torch.Tensor:
        return self.image[..., :3]

    @property
    def mask(self) -> torch.Tensor:
        return self.image[..., 3]

    def with_image(self, image: torch.Tensor) -> "PosedView":
        return PosedView(image=image, camera=self.camera, elevation_deg=self.elevation_deg, azimuth_deg=self.azimuth_deg)

    def crop(self, x0: int, y0: int, width: int, height: int) -> "PosedView":
        return PosedView(
            image=self.image[y0:y0 + height, x0:x0 + width],
            camera=self.camera.crop(x0, y0, width, height),
            elevation_deg=self.elevation_deg,
            azimuth_deg=self.azimuth_deg,
        )


def look_at(position: Sequence[float], target: Sequence[float] = (0.0, 0.0, 0.0), up: Sequence[float] = (0.0, 1.0, 0.0)) -> torch.Tensor:
    """Builds a world-to-camera extrinsic for a camera at `position` looking at `target`."""
    position = torch.as_tensor(position, dtype=torch.float64)
    forward = torch.as_tensor(target, dtype=torch.float64) - position
    forward = forward / forward.norm()
    right = torch.linalg.cross(forward, torch.as_tensor(up, dtype=torch.float64))
    if right.norm() < 1e-9:
        raise ValueError("Camera forward direction is parallel to the up vector.")
    right = right / right.norm()
    down = torch.linalg.cross(forward, right)
    rotation = torch.stack([right, down, forward])
    extrinsic = torch.eye(4, dtype=torch.float64)
    extrinsic[:3, :3] = rotation
    extrinsic[:3, 3] = -rotation @ position
    return extrinsic


def orbit_position(elevation_deg: float, azimuth_deg: float, radius: float) -> Tuple[float, float, float]:
    elevation = math.radians(elevation_deg)
    azimuth = math.radians(azimuth_deg)
    return (
        radius * math.cos(elevation) * math.sin(azimuth),
        radius * math.sin(elevation),
        radius * math.cos(elevation) * math.cos(azimuth),
    )


def orbit_camera(
    elevation_deg: float,
    azimuth_deg: float,
    image_size: int,
    radius: float = 3.0,
    fov_deg: float = 45.0,
) -> Camera:
    """
    A square camera on the orbit sphere looking at the origin.
    Args:
        elevation_deg: Angle above the horizontal plane.
        azimuth_deg: Angle around the y axis, 0 on the +z axis.
        image_size: Width and height in pixels.
        radius: Distance from the origin.
        fov_deg: Full field of view.
    Returns:
        Camera: With the principal point at the image center.
    """
    focal = (image_size / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    return Camera(
        extrinsic=look_at(orbit_position(elevation_deg, azimuth_deg, radius)),
        fx=focal,
        fy=focal,
        cx=image_size / 2.0,
        cy=image_size / 2.0,
        width=image_size,
        height=image_size,
    )


def dataset_poses(elevations: Iterable[float], azimuth_count: int) -> List[Tuple[float, float]]:
    """Every (elevation, azimuth) pair of the render grid, elevation-major."""
    step = 360.0 / azimuth_count
    return [(float(elevation), index * step) for elevation in elevations for index in range(azimuth_count)]


def candidate_poses(elevations: Sequence[float], azimuth_count: int, azimuth_elevation: float = 6.0) -> List[Tuple[float, float, str]]:
    """
    Poses of a candidate pool: one view per elevation at azimuth 0 followed by a
    full azimuth sweep at a fixed elevation. Each pose carries its provenance tag.
    """
    step = 360.0 / azimuth_count
    poses = [(float(elevation), 0.0, "elevation") for elevation in elevations]
    poses += [(azimuth_elevation, index * step, "azimuth") for index in range(azimuth_count)]
    return poses


def camera_to_vec(cam: Camera) -> torch.Tensor:
    """Flattens a camera to 20 values: the row-major extrinsic then fx/W, fy/H, cx/W, cy/H."""
    intrinsics = torch.tensor(
        [cam.fx / cam.width, cam.fy / cam.height, cam.cx / cam.width, cam.cy / cam.height],
        dtype=torch.float64,
    )
    return torch.cat([cam.extrinsic.reshape(16), intrinsics])


def vec_to_camera(vec: torch.Tensor, width: int, height: int) -> Camera:
    """Inverse of `camera_to_vec` given the image size."""
    vec = torch.as_tensor(vec, dtype=torch.float64)
    if vec.shape != (20,):
        raise ValueError(f"Camera vector must have 20 entries, got {tuple(vec.shape)}.")
    return Camera(
        extrinsic=vec[:16].reshape(4, 4).clone(),
        fx=float(vec[16]) * width,
        fy=float(vec[17]) * height,
        cx=float(vec[18]) * width,
        cy=float(vec[19]) * height,
        width=width,
        height=height,
    )

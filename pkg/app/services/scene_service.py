"""
This module generates synthetic scenes and candidate pools.

Procedural Gaussian clouds stand in for ground-truth objects. They are rendered
at the orbit poses of a dataset, and candidate pools of twenty views (four
elevations at the front azimuth plus a full azimuth sweep) are synthesized from
clean renders, some of which can be swapped for renders of a corrupted
reconstruction to emulate defective generations.
"""
import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union
import numpy as np
import torch
from app.config import Settings
from app.core.cameras import PosedView, candidate_poses, dataset_poses, orbit_camera
from app.core.gaussians import GaussianCloud
from app.core.rasterizer import rasterize
from app.core.triplane import make_init_grid
from app.models import ActivationConfig, NoiseConfig, SceneSpec, heavy_noise_config
from app.services.dataset_service import write_dataset
from app.services.selection_service import CandidateSet, extract_quality_features
from app.services.simulation_service import OPACITY_FLOOR, perturb_cloud

logger = logging.getLogger(__name__)

POSITION_LIMIT = 0.95
SCALE_JITTER = 0.2
CANDIDATE_AZIMUTH_ELEVATION = 6.0

_PALETTE = np.array(
    [
        [0.85, 0.20, 0.15],
        [0.15, 0.55, 0.85],
        [0.95, 0.80, 0.10],
        [0.20, 0.70, 0.30],
        [0.55, 0.25, 0.70],
        [0.95, 0.50, 0.10],
        [0.10, 0.20, 0.45],
        [0.90, 0.90, 0.85],
    ]
)
_SOLID_COLOR = (0.80, 0.35, 0.20)


# --- Procedural clouds ---

def _unit_directions(rng: np.random.Generator, count: int) -> np.ndarray:
    directions = rng.normal(size=(count, 3))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    return directions / np.maximum(norms, 1e-12)


def _sphere_shell(rng: np.random.Generator, count: int, radius: float) -> np.ndarray:
    return radius * _unit_directions(rng, count)


def _box(rng: np.random.Generator, count: int, radius: float) -> np.ndarray:
    points = rng.uniform(-radius, radius, size=(count, 3))
    axis = rng.integers(0, 3, size=count)
    sign = np.where(rng.random(count) < 0.5, -1.0, 1.0)
    points[np.arange(count), axis] = sign * radius
    return points


def _two_blob(rng: np.random.Generator, count: int, radius: float) -> np.ndarray:
    centers = np.array([[-0.6 * radius, 0.0, 0.0], [0.6 * radius, 0.2 * radius, 0.0]])
    which = rng.integers(0, 2, size=count)
    return centers[which] + rng.normal(scale=0.3 * radius, size=(count, 3))


def _ring(rng: np.random.Generator, count: int, radius: float) -> np.ndarray:
    theta = rng.uniform(0.0, 2.0 * math.pi, size=count)
    phi = rng.uniform(0.0, 2.0 * math.pi, size=count)
    minor = 0.25 * radius
    major = radius - minor
    ring = major + minor * np.cos(phi)
    return np.stack([ring * np.cos(theta), minor * np.sin(phi), ring * np.sin(theta)], axis=1)


_SHAPES = {
    "sphere_shell": _sphere_shell,
    "box": _box,
    "two_blob": _two_blob,
    "ring": _ring,
}


def _colors(scheme: str, positions: np.ndarray, radius: float) -> np.ndarray:
    if scheme == "solid":
        return np.tile(np.asarray(_SOLID_COLOR), (len(positions), 1))
    if scheme == "gradient":
        return np.clip((positions / radius + 1.0) / 2.0, 0.0, 1.0)
    if scheme == "octants":
        index = (positions[:, 0] > 0) * 4 + (positions[:, 1] > 0) * 2 + (positions[:, 2] > 0)
        return _PALETTE[index.astype(int)]
    sector = np.floor((np.arctan2(positions[:, 0], positions[:, 2]) + math.pi) / (2.0 * math.pi) * 8.0)
    level = np.floor((positions[:, 1] / radius + 1.0) * 3.0)
    return _PALETTE[((sector + level) % len(_PALETTE)).astype(int)]


def generate_cloud(spec: SceneSpec) -> GaussianCloud:
    """
    Builds the procedural cloud of a scene description.
    Args:
        spec: Shape, color scheme, Gaussian count and seed.
    Returns:
        GaussianCloud: float32 cloud; identical for identical specs.
    """
    rng = np.random.default_rng(spec.seed)
    positions = np.clip(_SHAPES[spec.shape](rng, spec.gaussian_count, spec.radius), -POSITION_LIMIT, POSITION_LIMIT)
    colors = _colors(spec.color_scheme, positions, spec.radius)
    jitter = rng.uniform(1.0 - SCALE_JITTER, 1.0 + SCALE_JITTER, size=(spec.gaussian_count, 3))
    scales = np.clip(spec.gaussian_scale * jitter, 1e-4, 0.3)
    rotations = rng.normal(size=(spec.gaussian_count, 4))
    rotations /= np.linalg.norm(rotations, axis=1, keepdims=True)
    rotations *= np.where(rotations[:, :1] < 0, -1.0, 1.0)

    def as_tensor(array: np.ndarray) -> torch.Tensor:
        return torch.from_numpy(np.ascontiguousarray(array)).to(torch.float32)

    cloud = GaussianCloud(
        positions=as_tensor(positions),
        colors=as_tensor(colors),
        opacities=torch.full((spec.gaussian_count,), spec.opacity, dtype=torch.float32),
        scales=as_tensor(scales),
        rotations=as_tensor(rotations),
    )
    logger.debug(f"Generated {spec.shape} cloud with {cloud.count} Gaussians (seed {spec.seed}).")
    return cloud


def voxelize_cloud(cloud: GaussianCloud, n: int, act: Optional[ActivationConfig] = None) -> GaussianCloud:
    """
    Resamples a cloud onto the n^3 init grid so that sub-cube noise can address it.
    Each occupied cell holds the mean of its Gaussians, widened to cover the cell;
    empty cells hold an invisible Gaussian at the cell center.
    """
    act = act or ActivationConfig()
    grid = make_init_grid(n, torch.float64)
    positions = cloud.positions.detach().to(torch.float64)
    cell = torch.clamp(torch.floor((positions + 1.0) / 2.0 * n).long(), 0, n - 1)
    flat = cell[:, 0] * n * n + cell[:, 1] * n + cell[:, 2]
    total = n ** 3
    counts = torch.zeros(total, dtype=torch.float64).index_add_(0, flat, torch.ones(len(flat), dtype=torch.float64))
    occupied = counts > 0
    denom = counts.clamp(min=1.0).unsqueeze(-1)

    def cell_mean(values: torch.Tensor) -> torch.Tensor:
        summed = torch.zeros(total, values.shape[1], dtype=torch.float64).index_add_(0, flat, values.to(torch.float64))
        return summed / denom

    mean_positions = torch.where(occupied.unsqueeze(-1), cell_mean(positions), grid.positions)
    colors = torch.where(occupied.unsqueeze(-1), cell_mean(cloud.colors.detach()), torch.full((total, 3), 0.5, dtype=torch.float64))
    opacities = torch.zeros(total, dtype=torch.float64).scatter_reduce_(
        0, flat, cloud.opacities.detach().to(torch.float64), reduce="amax", include_self=False
    )
    opacities = torch.where(occupied, opacities, torch.full_like(opacities, OPACITY_FLOOR)).clamp(OPACITY_FLOOR, 1.0 - OPACITY_FLOOR)
    widened = cell_mean(cloud.scales.detach()) + 0.25 * (2.0 / n)
    scales = torch.where(occupied.unsqueeze(-1), widened, torch.full((total, 3), act.scale_min, dtype=torch.float64))
    rotations = torch.zeros(total, 4, dtype=torch.float64)
    rotations[:, 0] = 1.0
    dtype = cloud.dtype
    return GaussianCloud(
        positions=mean_positions.clamp(-1.0, 1.0).to(dtype),
        colors=colors.clamp(act.color_min, act.color_max).to(dtype),
        opacities=opacities.to(dtype),
        scales=scales.clamp(act.scale_min, act.scale_max).to(dtype),
        rotations=rotations.to(dtype),
        grid_n=n,
    )


# --- Rendering ---

def render_at(cloud: GaussianCloud, settings: Settings, elevation_deg: float, azimuth_deg: float) -> PosedView:
    camera = orbit_camera(elevation_deg, azimuth_deg, settings.IMAGE_SIZE, settings.CAMERA_RADIUS, settings.CAMERA_FOV_DEG)
    with torch.no_grad():
        image = rasterize(cloud, camera, settings.background, settings.render_config())
    return PosedView(
        image=image.as_rgba().to(torch.float32).clamp(0.0, 1.0),
        camera=camera,
        elevation_deg=elevation_deg,
        azimuth_deg=azimuth_deg,
    )


def render_scene_views(
    cloud: GaussianCloud,
    settings: Settings,
    poses: Optional[Sequence[Tuple[float, float]]] = None,
) -> List[PosedView]:
    """Renders a cloud at the dataset poses (every configured elevation times every azimuth step)."""
    poses = poses if poses is not None else dataset_poses(settings.VIEW_ELEVATIONS, settings.VIEW_AZIMUTH_COUNT)
    return [render_at(cloud, settings, elevation, azimuth) for elevation, azimuth in poses]


def gen_scene(
    spec: SceneSpec,
    settings: Settings,
    out_dir: Optional[Union[str, Path]] = None,
) -> Tuple[GaussianCloud, List[PosedView]]:
    """
    Generates a scene cloud and its rendered views.
    Args:
        spec: Scene description.
        settings: Image size, camera orbit and render constants.
        out_dir: When given, the dataset is written there with the cloud as gt_cloud.ply.
    Returns:
        Tuple: The ground-truth cloud and its posed renders.
    """
    cloud = generate_cloud(spec)
    views = render_scene_views(cloud, settings)
    if out_dir is not None:
        write_dataset(out_dir, views, cloud)
    logger.info(f"Generated scene '{spec.shape}' (seed {spec.seed}) with {len(views)} views.")
    return cloud, views


# --- Candidate pools ---

def pool_query_indices(settings: Settings) -> Tuple[int, int]:
    """Indices of the front view (azimuth 0 of the sweep) and the back view (azimuth 180)."""
    front = len(settings.VIEW_ELEVATIONS)
    return front, front + settings.VIEW_AZIMUTH_COUNT // 2


def pick_corrupt_indices(rng: np.random.Generator, pool_size: int, count: int, exclude: Sequence[int] = ()) -> List[int]:
    """Draws `count` distinct pool indices outside `exclude`."""
    allowed = [i for i in range(pool_size) if i not in set(exclude)]
    if count > len(allowed):
        raise ValueError(f"Cannot corrupt {count} views of a pool with {len(allowed)} eligible views.")
    return sorted(allowed[int(i)] for i in rng.choice(len(allowed), size=count, replace=False))


def corruption_source(
    cloud: GaussianCloud,
    settings: Settings,
    rng: np.random.Generator,
    model=None,
    clean_views: Optional[Sequence[PosedView]] = None,
    source_count: int = 4,
) -> GaussianCloud:
    """
    A grid-indexed cloud to corrupt: the model's reconstruction from a few clean
    views when a model is given, otherwise the voxelized ground truth.
    """
    if model is None or not clean_views:
        return voxelize_cloud(cloud, settings.GRID_SIZE, settings.activation_config())
    picks = rng.choice(len(clean_views), size=min(source_count, len(clean_views)), replace=False)
    with torch.no_grad():
        return model.reconstruct([clean_views[int(i)] for i in picks]).detach()


def synth_candidate_pool(
    cloud: GaussianCloud,
    settings: Settings,
    rng: np.random.Generator,
    model=None,
    corrupt_indices: Sequence[int] = (),
    noise: Optional[NoiseConfig] = None,
) -> CandidateSet:
    """
    Builds a twenty-view candidate pool with per-view corruption flags.
    Args:
        cloud: Ground-truth cloud of the scene.
        settings: Poses, image size and render constants.
        rng: Random generator for the corruption draws.
        model: Optional reconstructor used as the corruption source.
        corrupt_indices: Pool indices whose clean render is replaced by a corrupted one.
        noise: Noise applied to the corruption source; the heavy preset by default.
    Returns:
        CandidateSet: Views in pose order, front and back indices, tags and flags.
    Raises:
        ValueError: If a corrupt index lies outside the pool.
    """
    poses = candidate_poses(settings.VIEW_ELEVATIONS, settings.VIEW_AZIMUTH_COUNT, CANDIDATE_AZIMUTH_ELEVATION)
    views = [render_at(cloud, settings, elevation, azimuth) for elevation, azimuth, _ in poses]
    corrupted = [False] * len(views)
    if any(not 0 <= i < len(views) for i in corrupt_indices):
        raise ValueError(f"Corrupt indices must lie in [0, {len(views)}).")
    if corrupt_indices:
        clean = [view for i, view in enumerate(views) if i not in set(corrupt_indices)]
        source = corruption_source(cloud, settings, rng, model, clean)
        noise = noise or heavy_noise_config()
        for index in sorted(set(corrupt_indices)):
            elevation, azimuth, _ = poses[index]
            views[index] = render_at(perturb_cloud(source, rng, noise, settings.activation_config()), settings, elevation, azimuth)
            corrupted[index] = True
    front, back = pool_query_indices(settings)
    logger.info(f"Synthesized candidate pool of {len(views)} views, {sum(corrupted)} corrupted.")
    return CandidateSet(
        views=views,
        front_index=front,
        back_index=back,
        tags=[tag for _, _, tag in poses],
        corrupted=corrupted,
    )


def quality_training_samples(
    clouds: Sequence[GaussianCloud],
    settings: Settings,
    rng: np.random.Generator,
    bad_per_scene: int = 2,
    extractor: str = "histogram",
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Machine-labelled (front, back) feature pairs: the clean back view is good,
    corrupted renders of the back pose are bad.
    Returns:
        Tuple: (N, F) features and (N,) boolean labels.
    """
    bins = settings.QUALITY_HISTOGRAM_BINS
    noise = heavy_noise_config()
    features: List[np.ndarray] = []
    labels: List[bool] = []
    for cloud in clouds:
        front = render_at(cloud, settings, CANDIDATE_AZIMUTH_ELEVATION, 0.0)
        back = render_at(cloud, settings, CANDIDATE_AZIMUTH_ELEVATION, 180.0)
        features.append(extract_quality_features(front.rgb, back.rgb, bins, extractor))
        labels.append(True)
        source = voxelize_cloud(cloud, settings.GRID_SIZE, settings.activation_config())
        for _ in range(bad_per_scene):
            bad = render_at(perturb_cloud(source, rng, noise, settings.activation_config()), settings, CANDIDATE_AZIMUTH_ELEVATION, 180.0)
            features.append(extract_quality_features(front.rgb, bad.rgb, bins, extractor))
            labels.append(False)
    logger.info(f"Built {len(labels)} quality samples from {len(clouds)} scenes.")
    return np.stack(features), np.asarray(labels, dtype=bool)

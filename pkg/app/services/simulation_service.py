"""
Imperfect-input simulation.

A model reconstructs a scene from a few clean views, its Gaussian cloud is
corrupted by noise confined to random sub-cubes of the init grid (one
independent cube per parameter class, rotation never touched), and the
corrupted cloud is rendered back at clean-view poses. Each of those renders
then replaces its clean counterpart with a fixed probability, producing the
flawed input sets used for robustness fine-tuning. Supervision targets are
always clean views.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import numpy as np
import torch
from app.core.cameras import Camera, PosedView
from app.core.gaussians import GaussianCloud
from app.core.rasterizer import RenderedImage, rasterize
from app.models import NOISE_EFFECTS, ActivationConfig, NoiseConfig, RenderConfig

logger = logging.getLogger(__name__)

OPACITY_FLOOR = 1e-6
MIN_CLEAN_VIEWS = 8

_EFFECT_FIELDS = {
    "position": "positions",
    "color": "colors",
    "opacity": "opacities",
    "scale": "scales",
}

TargetSampler = Callable[[Sequence[PosedView], np.random.Generator, int], List[int]]


@dataclass(frozen=True)
class SubCube:
    """An axis-aligned cube of grid cells: indices origin[a] .. origin[a] + side - 1 on each axis."""
    origin: Tuple[int, int, int]
    side: int

    def mask(self, n: int) -> torch.Tensor:
        """Boolean (n^3,) mask over grid-ordered Gaussians."""
        axis = torch.arange(n)
        inside = [(axis >= start) & (axis < start + self.side) for start in self.origin]
        return (inside[0][:, None, None] & inside[1][None, :, None] & inside[2][None, None, :]).reshape(-1)


def cube_side_range(n: int, fraction_min: float, fraction_max: float) -> Tuple[int, int]:
    """Integer side bounds [ceil(fmin * n), floor(fmax * n)], clamped to at least 1."""
    low = max(1, math.ceil(round(fraction_min * n, 9)))
    high = max(low, math.floor(round(fraction_max * n, 9)))
    return low, high


def sample_subcube(rng: np.random.Generator, n: int, fraction_min: float = 0.1, fraction_max: float = 0.4) -> SubCube:
    """
    Draws a cube with uniform side length and uniform placement inside [0, n)^3.
    Args:
        rng: Random generator.
        n: Grid side.
        fraction_min: Smallest side as a fraction of n.
        fraction_max: Largest side as a fraction of n.
    Returns:
        SubCube: The sampled cube.
    Raises:
        ValueError: If n is smaller than one.
    """
    if n < 1:
        raise ValueError(f"Grid side must be at least 1, got {n}.")
    low, high = cube_side_range(n, fraction_min, fraction_max)
    high = min(high, n)
    low = min(low, high)
    side = int(rng.integers(low, high + 1))
    origin = tuple(int(v) for v in rng.integers(0, n - side + 1, size=3))
    return SubCube(origin=origin, side=side)


def _clamp_bounds(effect: str, act: ActivationConfig) -> Tuple[float, float]:
    if effect == "position":
        return -1.0, 1.0
    if effect == "color":
        return act.color_min, act.color_max
    if effect == "opacity":
        return OPACITY_FLOOR, 1.0 - OPACITY_FLOOR
    return act.scale_min, act.scale_max


def perturb_cloud_recorded(
    cloud: GaussianCloud,
    rng: np.random.Generator,
    ncfg: NoiseConfig,
    act: Optional[ActivationConfig] = None,
) -> Tuple[GaussianCloud, Dict[str, SubCube]]:
    """
    Adds sub-cube uniform noise to positions, colors, opacities and scales.
    Args:
        cloud: A grid-indexed cloud.
        rng: Random generator; effects draw in the order position, color, opacity, scale.
        ncfg: Probabilities, levels and cube fractions.
        act: Valid ranges for re-clamping; defaults to the standard activation constants.
    Returns:
        Tuple: The perturbed cloud and the cube drawn for every applied effect.
    Raises:
        ValueError: If the cloud is not grid-indexed.
    """
    if cloud.grid_n is None:
        raise ValueError("Sub-cube noise needs a grid-indexed cloud (grid_n is unset).")
    act = act or ActivationConfig()
    fields: Dict[str, torch.Tensor] = {}
    cubes: Dict[str, SubCube] = {}
    for effect in NOISE_EFFECTS:
        if rng.random() >= ncfg.probability(effect):
            continue
        cube = sample_subcube(rng, cloud.grid_n, ncfg.cube_fraction_min, ncfg.cube_fraction_max)
        cubes[effect] = cube
        name = _EFFECT_FIELDS[effect]
        values = getattr(cloud, name).detach().clone()
        mask = cube.mask(cloud.grid_n)
        selected = values[mask]
        level = ncfg.level(effect)
        noise = torch.from_numpy(rng.uniform(-level, level, size=tuple(selected.shape))).to(values.dtype)
        low, high = _clamp_bounds(effect, act)
        values[mask] = torch.clamp(selected + noise, low, high)
        fields[name] = values
    if cubes:
        logger.debug(f"Perturbed cloud with effects {sorted(cubes)}.")
    return cloud.with_fields(**fields), cubes


def perturb_cloud(
    cloud: GaussianCloud,
    rng: np.random.Generator,
    ncfg: NoiseConfig,
    act: Optional[ActivationConfig] = None,
) -> GaussianCloud:
    """Sub-cube noise injection; see `perturb_cloud_recorded`."""
    return perturb_cloud_recorded(cloud, rng, ncfg, act)[0]


def draw_counts(rng: np.random.Generator, ncfg: NoiseConfig) -> Tuple[int, int]:
    """Number of reconstruction inputs k and of corrupted renders m."""
    k = int(rng.integers(ncfg.min_inputs, ncfg.max_inputs + 1))
    m = int(rng.integers(ncfg.min_renders, ncfg.max_renders + 1))
    return k, m


def mix_inputs(
    clean: Sequence[PosedView],
    corrupted: Sequence[PosedView],
    rng: np.random.Generator,
    replace_prob: float,
) -> Tuple[List[PosedView], List[bool]]:
    """Replaces each clean view by its corrupted render at the same pose with probability `replace_prob`."""
    if len(clean) != len(corrupted):
        raise ValueError("Clean and corrupted view lists must have the same length.")
    views: List[PosedView] = []
    flags: List[bool] = []
    for clean_view, corrupted_view in zip(clean, corrupted):
        replace = bool(rng.random() < replace_prob)
        views.append(corrupted_view if replace else clean_view)
        flags.append(replace)
    return views, flags


@dataclass
class ImperfectBatch:
    """Mixed clean/corrupted inputs with per-view flags and clean supervision targets."""
    inputs: List[PosedView]
    corrupted: List[bool]
    targets: List[PosedView]
    source_indices: List[int] = field(default_factory=list)
    input_indices: List[int] = field(default_factory=list)
    target_indices: List[int] = field(default_factory=list)
    k: int = 0
    m: int = 0
    cubes: Dict[str, SubCube] = field(default_factory=dict)


def uniform_targets(views: Sequence[PosedView], rng: np.random.Generator, count: int) -> List[int]:
    return [int(i) for i in rng.choice(len(views), size=min(count, len(views)), replace=False)]


def render_posed(cloud: GaussianCloud, view: PosedView, render_cfg: RenderConfig, background: Sequence[float]) -> PosedView:
    """Renders a cloud at a view's pose and returns it as a posed RGBA view."""
    image = rasterize(cloud, view.camera, background, render_cfg)
    return view.with_image(image.as_rgba().to(view.image.dtype).clamp(0.0, 1.0))


def simulate_imperfect_inputs(
    model,
    views: Sequence[PosedView],
    rng: np.random.Generator,
    ncfg: NoiseConfig,
    target_count: int = 4,
    target_sampler: Optional[TargetSampler] = None,
) -> ImperfectBatch:
    """
    Builds one imperfect input set for a scene.
    Args:
        model: A reconstructor with `reconstruct`, `activation_cfg`, `render_cfg` and `background`.
        views: Clean posed views of the scene.
        rng: Random generator driving every stochastic choice.
        ncfg: Noise and count settings.
        target_count: Number of clean supervision targets.
        target_sampler: Picks target indices; uniform without replacement by default.
    Returns:
        ImperfectBatch: Inputs, corruption flags and clean targets.
    Raises:
        ValueError: If fewer than eight clean views are available.
    """
    if len(views) < MIN_CLEAN_VIEWS:
        raise ValueError(f"Imperfect-input simulation needs at least {MIN_CLEAN_VIEWS} clean views, got {len(views)}.")
    k, m = draw_counts(rng, ncfg)
    source_indices = [int(i) for i in rng.choice(len(views), size=min(k, len(views)), replace=False)]
    with torch.no_grad():
        cloud = model.reconstruct([views[i] for i in source_indices]).detach()
    cloud, cubes = perturb_cloud_recorded(cloud, rng, ncfg, model.activation_cfg)

    render_count = min(m, len(views))
    input_indices = [int(i) for i in rng.choice(len(views), size=render_count, replace=False)]
    clean_inputs = [views[i] for i in input_indices]
    with torch.no_grad():
        corrupted = [render_posed(cloud, view, model.render_cfg, model.background) for view in clean_inputs]
    inputs, flags = mix_inputs(clean_inputs, corrupted, rng, ncfg.replace_prob)

    sampler = target_sampler or uniform_targets
    target_indices = sampler(views, rng, target_count)
    return ImperfectBatch(
        inputs=inputs,
        corrupted=flags,
        targets=[views[i] for i in target_indices],
        source_indices=source_indices,
        input_indices=input_indices,
        target_indices=target_indices,
        k=k,
        m=m,
        cubes=cubes,
    )


def corrupt_render(
    cloud: GaussianCloud,
    camera: Camera,
    rng: np.random.Generator,
    ncfg: NoiseConfig,
    render_cfg: RenderConfig,
    background: Sequence[float],
    act: Optional[ActivationConfig] = None,
) -> RenderedImage:
    """Renders a freshly perturbed copy of a grid-indexed cloud."""
    with torch.no_grad():
        return rasterize(perturb_cloud(cloud, rng, ncfg, act), camera, background, render_cfg)


def noise_catalog(
    cloud: GaussianCloud,
    camera: Camera,
    ncfg: NoiseConfig,
    render_cfg: RenderConfig,
    background: Sequence[float],
    seed: int = 0,
    act: Optional[ActivationConfig] = None,
) -> Dict[str, RenderedImage]:
    """
    One render per noise effect with only that effect active, plus the clean render.
    Returns:
        Dict: Keys "clean" and every effect name.
    """
    catalog = {"clean": rasterize(cloud.detach(), camera, background, render_cfg)}
    for effect in NOISE_EFFECTS:
        rng = np.random.default_rng(seed)
        catalog[effect] = corrupt_render(cloud.detach(), camera, rng, ncfg.only(effect), render_cfg, background, act)
    logger.info(f"Rendered noise catalog with {len(catalog) - 1} effects.")
    return catalog

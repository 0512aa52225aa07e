"""
Evaluation protocol and input-corruption ablations.

A scene is reconstructed from the first k views of the documented pick order
and scored on every remaining view (PSNR, SSIM) and, when the ground-truth
cloud is known, by the chamfer distance between Gaussian centers.
"""
import logging
from typing import Dict, List, Literal, Optional, Sequence
import numpy as np
import torch
from app.config import Settings
from app.core.cameras import PosedView
from app.core.reconstructor import GaussianReconstructor, reconstruct_and_render
from app.models import EvalResult, NoiseConfig
from app.processing.sampling import view_pick_order
from app.processing.training_processor import SceneData
from app.services.metrics_service import cloud_chamfer, psnr, ssim
from app.services.simulation_service import mix_inputs, perturb_cloud, render_posed

logger = logging.getLogger(__name__)

NoiseKind = Literal["gaussian", "salt_pepper"]


def split_views(views: Sequence[PosedView], view_count: int) -> tuple:
    """Input and held-out views for `view_count` inputs under `view_pick_order`."""
    if not 1 <= view_count < len(views):
        raise ValueError(f"View count must lie in [1, {len(views) - 1}], got {view_count}.")
    order = view_pick_order(views)
    return [views[i] for i in order[:view_count]], [views[i] for i in order[view_count:]]


def score_views(model: GaussianReconstructor, inputs: Sequence[PosedView], held_out: Sequence[PosedView]):
    """Mean held-out PSNR and SSIM of a reconstruction from `inputs`, plus the cloud."""
    cloud, renders = reconstruct_and_render(model, inputs, [view.camera for view in held_out])
    psnrs = [psnr(render.rgb, view.rgb.to(render.rgb.dtype)) for render, view in zip(renders, held_out)]
    ssims = [ssim(render.rgb, view.rgb.to(render.rgb.dtype)) for render, view in zip(renders, held_out)]
    return float(np.mean(psnrs)), float(np.mean(ssims)), cloud


def evaluate_scene(
    model: GaussianReconstructor,
    scene: SceneData,
    view_counts: Sequence[int],
    chamfer_threshold: float = 0.05,
) -> List[EvalResult]:
    """
    Scores a scene for several input-view counts.
    Args:
        model: The reconstructor.
        scene: Views and optional ground-truth cloud.
        view_counts: Numbers of input views; counts not below the view total are skipped.
        chamfer_threshold: Opacity threshold of the chamfer center extraction.
    Returns:
        List[EvalResult]: One result per evaluated count.
    """
    model.eval()
    results = []
    for count in view_counts:
        if count >= len(scene.views):
            logger.warning(f"Skipping {count} input views for scene '{scene.name}' with {len(scene.views)} views.")
            continue
        inputs, held_out = split_views(scene.views, count)
        mean_psnr, mean_ssim, cloud = score_views(model, inputs, held_out)
        chamfer = cloud_chamfer(cloud, scene.cloud, chamfer_threshold) if scene.cloud is not None else None
        results.append(
            EvalResult(scene=scene.name, view_count=count, psnr=mean_psnr, ssim=mean_ssim, chamfer=chamfer, held_out=len(held_out))
        )
        logger.info(f"Scene '{scene.name}' with {count} views: PSNR {mean_psnr:.2f} dB, SSIM {mean_ssim:.4f}.")
    return results


def format_metrics_table(results: Sequence[EvalResult]) -> str:
    """Plain-text table of evaluation results, one row per (scene, view count)."""
    header = f"{'scene':<16} {'views':>5} {'psnr':>8} {'ssim':>8} {'chamfer':>10} {'held_out':>8}"
    rows = [header, "-" * len(header)]
    for result in results:
        chamfer = f"{result.chamfer:.5f}" if result.chamfer is not None else "-"
        rows.append(
            f"{result.scene:<16} {result.view_count:>5} {result.psnr:>8.3f} {result.ssim:>8.4f} {chamfer:>10} {result.held_out:>8}"
        )
    return "\n".join(rows)


def image_space_noise(view: PosedView, rng: np.random.Generator, kind: NoiseKind = "gaussian", level: float = 0.1) -> PosedView:
    """
    Pixel noise baseline: additive Gaussian noise with std `level`, or salt-and-pepper
    noise flipping a `level` fraction of pixels. The mask is left untouched.
    """
    rgb = view.rgb.detach().cpu().to(torch.float64).numpy()
    if kind == "gaussian":
        noisy = rgb + rng.normal(scale=level, size=rgb.shape)
    elif kind == "salt_pepper":
        noisy = rgb.copy()
        flip = rng.random(rgb.shape[:2]) < level
        salt = rng.random(rgb.shape[:2]) < 0.5
        noisy[flip & salt] = 1.0
        noisy[flip & ~salt] = 0.0
    else:
        raise ValueError(f"Unknown image noise kind '{kind}'.")
    image = view.image.clone()
    image[..., :3] = torch.from_numpy(np.clip(noisy, 0.0, 1.0)).to(image.dtype)
    return view.with_image(image)


def imperfect_inputs(
    model: GaussianReconstructor,
    inputs: Sequence[PosedView],
    rng: np.random.Generator,
    ncfg: NoiseConfig,
    replace_prob: Optional[float] = None,
) -> List[PosedView]:
    """Inputs where views are swapped for renders of the model's perturbed reconstruction."""
    with torch.no_grad():
        cloud = perturb_cloud(model.reconstruct(inputs).detach(), rng, ncfg, model.activation_cfg)
        corrupted = [render_posed(cloud, view, model.render_cfg, model.background) for view in inputs]
    prob = ncfg.replace_prob if replace_prob is None else replace_prob
    return mix_inputs(inputs, corrupted, rng, prob)[0]


def compare_input_corruptions(
    model: GaussianReconstructor,
    scene: SceneData,
    settings: Settings,
    rng: np.random.Generator,
    view_count: int = 4,
    image_noise_level: float = 0.1,
) -> Dict[str, float]:
    """
    Held-out PSNR of one scene for clean inputs, self-rendered imperfect inputs
    and the two pixel-noise baselines.
    """
    model.eval()
    inputs, held_out = split_views(scene.views, view_count)
    variants = {
        "clean": list(inputs),
        "imperfect": imperfect_inputs(model, inputs, rng, settings.noise_config(), replace_prob=1.0),
        "gaussian": [image_space_noise(view, rng, "gaussian", image_noise_level) for view in inputs],
        "salt_pepper": [image_space_noise(view, rng, "salt_pepper", image_noise_level) for view in inputs],
    }
    scores = {name: score_views(model, views, held_out)[0] for name, views in variants.items()}
    logger.info("Input corruption PSNR: " + ", ".join(f"{name} {value:.2f}" for name, value in scores.items()))
    return scores

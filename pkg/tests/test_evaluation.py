import numpy as np
import pytest
import torch
from app.models import EvalResult, SceneSpec
from app.processing.evaluation import (
    compare_input_corruptions,
    evaluate_scene,
    format_metrics_table,
    image_space_noise,
    split_views,
)
from app.processing.training_processor import SceneData, TrainingProcessor
from app.services.scene_service import generate_cloud, render_scene_views


def test_split_views_follows_pick_order(scene):
    inputs, held_out = split_views(scene.views, 4)
    assert len(inputs) == 4 and len(held_out) == len(scene.views) - 4
    assert [v.elevation_deg for v in inputs] == [6.0] * 4
    assert [v.azimuth_deg for v in inputs] == [0.0, 180.0, 90.0, 270.0]


@pytest.mark.parametrize("count", [0, 16])
def test_split_views_rejects_bad_counts(scene, count):
    with pytest.raises(ValueError):
        split_views(scene.views, count)


def test_gaussian_image_noise_keeps_mask(scene, rng):
    view = scene.views[0]
    noisy = image_space_noise(view, rng, "gaussian", 0.2)
    assert torch.equal(noisy.mask, view.mask)
    assert not torch.equal(noisy.rgb, view.rgb)
    assert float(noisy.rgb.min()) >= 0.0 and float(noisy.rgb.max()) <= 1.0


def test_salt_and_pepper_noise_only_sets_extremes(scene, rng):
    view = scene.views[0]
    noisy = image_space_noise(view, rng, "salt_pepper", 0.3)
    changed = (noisy.rgb != view.rgb).any(dim=-1)
    assert bool(changed.any())
    values = noisy.rgb[changed]
    assert bool(((values == 0.0).all(dim=-1) | (values == 1.0).all(dim=-1)).all())


def test_unknown_image_noise_is_rejected(scene, rng):
    with pytest.raises(ValueError):
        image_space_noise(scene.views[0], rng, "blur")


def test_metrics_table_lists_every_result():
    results = [
        EvalResult(scene="sphere", view_count=1, psnr=20.5, ssim=0.81, chamfer=0.01234, held_out=15),
        EvalResult(scene="sphere", view_count=4, psnr=24.0, ssim=0.9, held_out=12),
    ]
    lines = format_metrics_table(results).splitlines()
    assert len(lines) == 4
    assert lines[0].split() == ["scene", "views", "psnr", "ssim", "chamfer", "held_out"]
    assert lines[2].split() == ["sphere", "1", "20.500", "0.8100", "0.01234", "15"]
    assert lines[3].split()[4] == "-"


def test_evaluate_scene_skips_oversized_counts(model, scene):
    results = evaluate_scene(model, scene, [1, 4, 16, 40])
    assert [r.view_count for r in results] == [1, 4]
    for result in results:
        assert result.held_out == len(scene.views) - result.view_count
        assert np.isfinite(result.psnr) and -1.0 <= result.ssim <= 1.0
        assert result.chamfer is not None and result.chamfer >= 0.0


def test_compare_input_corruptions(model, scene, settings):
    scores = compare_input_corruptions(model, scene, settings, np.random.default_rng(0), view_count=2)
    assert set(scores) == {"clean", "imperfect", "gaussian", "salt_pepper"}
    assert all(np.isfinite(value) for value in scores.values())


@pytest.mark.slow
def test_more_input_views_improve_held_out_psnr(make_settings):
    settings = make_settings(STEPS_STAGE1=200, STEPS_STAGE2=600, WARMUP_STEPS=20, STAGE2_MAX_VIEWS=8)
    scenes = []
    for index, shape in enumerate(["sphere_shell", "box", "two_blob", "ring", "sphere_shell"]):
        cloud = generate_cloud(SceneSpec(shape=shape, color_scheme="octants", gaussian_count=150, seed=10 + index, gaussian_scale=0.08))
        scenes.append(SceneData(views=render_scene_views(cloud, settings), cloud=cloud, name=f"{shape}_{index}"))
    processor = TrainingProcessor(settings, scenes)
    model = processor.train_stage2(processor.train_stage1(), init="transfer").model

    results = [result for scene in scenes for result in evaluate_scene(model, scene, [1, 8])]
    one_view = np.mean([r.psnr for r in results if r.view_count == 1])
    eight_views = np.mean([r.psnr for r in results if r.view_count == 8])
    assert eight_views >= one_view + 1.0

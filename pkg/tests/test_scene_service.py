import numpy as np
import pytest
import torch
from app.models import SceneSpec
from app.services.dataset_service import read_dataset
from app.services.scene_service import (
    gen_scene,
    generate_cloud,
    pick_corrupt_indices,
    pool_query_indices,
    quality_training_samples,
    synth_candidate_pool,
    voxelize_cloud,
)


@pytest.mark.parametrize("shape", ["sphere_shell", "box", "two_blob", "ring"])
def test_generated_clouds_are_deterministic_and_valid(shape, settings):
    spec = SceneSpec(shape=shape, gaussian_count=100, seed=9)
    first, second = generate_cloud(spec), generate_cloud(spec)
    assert torch.equal(first.positions, second.positions)
    assert torch.equal(first.colors, second.colors)
    assert bool((first.positions.abs() <= 0.95).all())
    first.check_invariants(settings.activation_config())


def test_sphere_shell_has_constant_radius():
    cloud = generate_cloud(SceneSpec(shape="sphere_shell", gaussian_count=500, radius=0.6))
    radii = cloud.positions.norm(dim=-1)
    assert torch.allclose(radii, torch.full_like(radii, 0.6), atol=1e-5)


def test_gen_scene_is_bitwise_reproducible(tmp_path, settings):
    spec = SceneSpec(gaussian_count=80, seed=4)
    gen_scene(spec, settings, tmp_path / "a")
    gen_scene(spec, settings, tmp_path / "b")
    for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert len(read_dataset(tmp_path / "a")) == len(settings.VIEW_ELEVATIONS) * settings.VIEW_AZIMUTH_COUNT


def test_voxelized_cloud_is_grid_indexed(scene_cloud, settings):
    grid = voxelize_cloud(scene_cloud, 4, settings.activation_config())
    assert grid.grid_n == 4 and grid.count == 64
    grid.check_invariants(settings.activation_config())
    assert bool((grid.opacities > 0.5).any())


def test_candidate_pool_layout(scene_cloud, settings, rng):
    front, back = pool_query_indices(settings)
    corrupt = pick_corrupt_indices(rng, len(settings.VIEW_ELEVATIONS) + settings.VIEW_AZIMUTH_COUNT, 2, exclude=(front, back))
    pool = synth_candidate_pool(scene_cloud, settings, rng, corrupt_indices=corrupt)
    assert len(pool.views) == len(settings.VIEW_ELEVATIONS) + settings.VIEW_AZIMUTH_COUNT
    assert (pool.front_index, pool.back_index) == (front, back)
    assert [i for i, flag in enumerate(pool.corrupted) if flag] == corrupt
    assert pool.tags[:4] == ["elevation"] * 4


def test_corrupt_index_outside_pool_is_rejected(scene_cloud, settings, rng):
    with pytest.raises(ValueError):
        synth_candidate_pool(scene_cloud, settings, rng, corrupt_indices=[99])


def test_pick_corrupt_indices_respects_exclusions(rng):
    picks = pick_corrupt_indices(rng, 20, 5, exclude=(4, 12))
    assert len(set(picks)) == 5 and not {4, 12} & set(picks)
    with pytest.raises(ValueError):
        pick_corrupt_indices(rng, 3, 3, exclude=(0,))


def test_quality_samples_are_labelled(settings, rng):
    clouds = [generate_cloud(SceneSpec(gaussian_count=60, seed=s)) for s in range(2)]
    features, labels = quality_training_samples(clouds, settings, rng, bad_per_scene=2)
    assert features.shape[0] == 6
    assert labels.tolist() == [True, False, False, True, False, False]
    assert np.isfinite(features).all()

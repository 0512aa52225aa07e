import numpy as np
import pytest
from app.config import Settings
from app.models import SceneSpec
from app.processing.evaluation import imperfect_inputs, score_views, split_views
from app.processing.training_processor import (
    STAGE1_MIN_VIEWS,
    SceneData,
    TrainState,
    TrainingProcessor,
    load_model,
    load_scenes,
)
from app.services.dataset_service import write_dataset
from app.services.scene_service import generate_cloud, render_scene_views


def _records(path):
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        records.append(dict(pair.split("=", 1) for pair in line.split()))
    return records


def test_stage1_runs_are_reproducible(tmp_path, scene, make_settings):
    for name in ("a", "b"):
        TrainingProcessor(make_settings(), [scene], output_dir=tmp_path / name).train_stage1()
    first = (tmp_path / "a" / "metrics.log").read_text(encoding="utf-8")
    assert first == (tmp_path / "b" / "metrics.log").read_text(encoding="utf-8")
    records = _records(tmp_path / "a" / "metrics.log")
    assert [int(r["step"]) for r in records] == [0, 1, 2, 3]
    assert set(records[0]) == {"phase", "step", "lr", "views", "total", "l2", "perceptual", "opacity", "grad_norm", "clipped_norm"}
    assert float(records[0]["lr"]) == 0.0


def test_resumed_run_matches_uninterrupted_run(tmp_path, scene, make_settings):
    TrainingProcessor(make_settings(), [scene], output_dir=tmp_path / "full").train_stage1()

    interrupted = TrainingProcessor(make_settings(CHECKPOINT_EVERY=2), [scene], output_dir=tmp_path / "split")
    interrupted.train_stage1(steps=2)
    state = TrainState.load(interrupted.checkpoint_path("stage1"))
    assert state.step == 2 and state.phase == "stage1"
    TrainingProcessor(make_settings(), [scene], output_dir=tmp_path / "split").resume(state)

    full = (tmp_path / "full" / "metrics.log").read_text(encoding="utf-8")
    assert full == (tmp_path / "split" / "metrics.log").read_text(encoding="utf-8")


def test_clipped_gradient_norm_is_bounded(tmp_path, scene, make_settings):
    processor = TrainingProcessor(make_settings(GRAD_CLIP=1.0), [scene], output_dir=tmp_path)
    processor.train_stage1()
    for record in _records(tmp_path / "metrics.log"):
        assert float(record["clipped_norm"]) <= 1.0 + 1e-6
    assert processor.summary["steps_run"] == 4


def test_stage1_needs_sixteen_views(scene, make_settings):
    small = SceneData(views=scene.views[:STAGE1_MIN_VIEWS - 1], name="small")
    with pytest.raises(ValueError):
        TrainingProcessor(make_settings(), [small]).train_stage1()


def test_transfer_needs_a_stage1_state(scene, make_settings):
    with pytest.raises(ValueError):
        TrainingProcessor(make_settings(), [scene]).train_stage2(None, init="transfer")


def test_transfer_copies_pretrained_encoder(scene, make_settings):
    processor = TrainingProcessor(make_settings(), [scene])
    state1 = processor.train_stage1(steps=1)
    model = processor.transfer_model(state1.model)
    for name, value in state1.model.encoder.state_dict().items():
        assert (model.encoder.state_dict()[name] == value).all()


def test_full_program_through_finetuning(tmp_path, scene, make_settings):
    processor = TrainingProcessor(make_settings(), [scene], output_dir=tmp_path)
    state1 = processor.train_stage1(steps=1)
    state2 = processor.train_stage2(state1, init="transfer", steps=2)
    assert state2.phase == "stage2" and state2.step == 2
    state3 = processor.finetune_imperfect(state2, steps=1)
    assert state3.phase == "finetune" and state3.step == 1
    path = processor.save_checkpoint(state3)
    assert path == tmp_path / "finetune.flxr"
    assert not load_model(path).training


def test_finetune_rejects_stage1_state(scene, make_settings):
    processor = TrainingProcessor(make_settings(), [scene])
    with pytest.raises(ValueError):
        processor.finetune_imperfect(processor.new_state("stage1"))


def test_fresh_stage2_ignores_pretraining(scene, make_settings):
    state = TrainingProcessor(make_settings(), [scene]).train_stage2(None, init="fresh", steps=1)
    assert state.step == 1


def test_load_scenes(tmp_path, scene):
    write_dataset(tmp_path / "one", scene.views, scene.cloud)
    write_dataset(tmp_path / "two", scene.views[:3])
    scenes = load_scenes(tmp_path)
    assert [s.name for s in scenes] == ["one", "two"]
    assert scenes[0].cloud is not None and scenes[1].cloud is None
    with pytest.raises(FileNotFoundError):
        load_scenes(tmp_path / "missing")


def test_processor_needs_scenes(make_settings):
    with pytest.raises(ValueError):
        TrainingProcessor(make_settings(), [])


@pytest.mark.slow
def test_transferred_heads_beat_fresh_heads(scene, make_settings):
    settings = make_settings(STEPS_STAGE1=200, STEPS_STAGE2=100, WARMUP_STEPS=10)
    processor = TrainingProcessor(settings, [scene])
    state1 = processor.train_stage1()
    transferred = processor.train_stage2(state1, init="transfer")
    transferred_loss = processor.summary["last_loss"]
    processor.train_stage2(None, init="fresh")
    assert transferred.step == processor.summary["steps_run"]
    assert transferred_loss < processor.summary["last_loss"]


def _scenes(settings, count, gaussians=150, scale=0.08):
    shapes = ["sphere_shell", "box", "two_blob", "ring"]
    scenes = []
    for index in range(count):
        spec = SceneSpec(shape=shapes[index % len(shapes)], gaussian_count=gaussians, seed=index, gaussian_scale=scale)
        cloud = generate_cloud(spec)
        scenes.append(SceneData(views=render_scene_views(cloud, settings), cloud=cloud, name=f"{spec.shape}_{index}"))
    return scenes


@pytest.mark.slow
def test_transferred_stage2_overfits_one_scene():
    settings = Settings(_env_file=None, BATCH_SCENES=1, STAGE2_MAX_VIEWS=8, STEPS_STAGE1=1000, STEPS_STAGE2=5000)
    scenes = _scenes(settings, 1, gaussians=2000, scale=0.035)
    processor = TrainingProcessor(settings, scenes)
    state = processor.train_stage2(processor.train_stage1(), init="transfer")
    state.model.eval()
    inputs, held_out = split_views(scenes[0].views, 8)
    assert score_views(state.model, inputs, held_out)[0] > 28.0


@pytest.mark.slow
def test_finetuning_helps_corrupted_inputs_without_hurting_clean_ones(make_settings):
    settings = make_settings(STEPS_STAGE1=200, STEPS_STAGE2=400, STEPS_FINETUNE=200, WARMUP_STEPS=10, STAGE2_MAX_VIEWS=8)
    scenes = _scenes(settings, 5)
    processor = TrainingProcessor(settings, scenes)
    state = processor.train_stage2(processor.train_stage1(), init="transfer")
    model = state.model.eval()

    rng = np.random.default_rng(7)
    cases = []
    for scene in scenes:
        inputs, held_out = split_views(scene.views, 4)
        corrupted = imperfect_inputs(model, inputs, rng, settings.noise_config(), replace_prob=1.0)
        cases.append((inputs, corrupted, held_out))

    def mean_psnr(m):
        clean = np.mean([score_views(m, inputs, held_out)[0] for inputs, _, held_out in cases])
        noisy = np.mean([score_views(m, corrupted, held_out)[0] for _, corrupted, held_out in cases])
        return clean, noisy

    clean_before, noisy_before = mean_psnr(model)
    tuned = processor.finetune_imperfect(state).model.eval()
    clean_after, noisy_after = mean_psnr(tuned)
    assert noisy_after >= noisy_before + 0.5
    assert clean_after >= clean_before - 0.5

"""Shared fixtures: a tiny configuration and a small rendered scene."""
import json
import numpy as np
import pytest
import torch
from app.config import Settings
from app.core.reconstructor import GaussianReconstructor
from app.models import SceneSpec
from app.processing.training_processor import SceneData
from app.services.scene_service import generate_cloud, render_scene_views

TINY = {
    "IMAGE_SIZE": 16,
    "PATCH_SIZE": 8,
    "MODEL_DIM": 16,
    "ENCODER_LAYERS": 1,
    "TRIPLANE_LAYERS": 1,
    "ATTENTION_HEADS": 2,
    "MLP_RATIO": 2,
    "TRIPLANE_RESOLUTION": 8,
    "TRIPLANE_CHANNELS": 4,
    "TRIPLANE_TOKEN_RESOLUTION": 4,
    "GRID_SIZE": 4,
    "MLP_HIDDEN": 16,
    "MLP_LAYERS": 2,
    "VIEW_ELEVATIONS": [-18.0, 6.0, 18.0, 30.0],
    "VIEW_AZIMUTH_COUNT": 4,
    "VOLUME_SAMPLES": 8,
    "BATCH_SCENES": 1,
    "TARGET_VIEWS": 2,
    "SUPERVISION_PATCH": 8,
    "WARMUP_STEPS": 1,
    "STEPS_STAGE1": 4,
    "STEPS_STAGE2": 4,
    "STEPS_FINETUNE": 4,
    "SIM_MAX_INPUTS": 4,
    "SIM_MAX_RENDERS": 4,
    "CHECKPOINT_EVERY": 1000,
}


def tiny_settings(**overrides) -> Settings:
    return Settings(_env_file=None, **{**TINY, **overrides})


@pytest.fixture
def settings() -> Settings:
    return tiny_settings()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def scene_cloud():
    return generate_cloud(SceneSpec(shape="sphere_shell", gaussian_count=150, seed=3, gaussian_scale=0.08))


@pytest.fixture(scope="session")
def scene(scene_cloud) -> SceneData:
    views = render_scene_views(scene_cloud, tiny_settings())
    return SceneData(views=views, cloud=scene_cloud, name="sphere")


@pytest.fixture
def model(settings) -> GaussianReconstructor:
    torch.manual_seed(0)
    return GaussianReconstructor.from_settings(settings)


@pytest.fixture
def make_settings():
    return tiny_settings


@pytest.fixture
def config_file(tmp_path) -> str:
    """The tiny configuration written as a KEY=VALUE settings file."""
    path = tmp_path / "tiny.env"
    lines = [f"{key}={json.dumps(value, separators=(',', ':'))}" for key, value in TINY.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)

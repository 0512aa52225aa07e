"""
Configuration management for the reconstruction workbench.

This module defines the Settings class, which loads and validates all settings
from environment variables and a key/value configuration file (`.env` by
default, any file via `--config`). It centralizes every tunable constant and
builds the typed configuration blocks of `app.models` from them.
"""
from pathlib import Path
from typing import Any, List, Optional, Tuple
from pydantic import ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict
from app.models import (
    ActivationConfig,
    ClassifierConfig,
    DecoderConfig,
    EncoderConfig,
    LossConfig,
    MatcherConfig,
    NoiseConfig,
    OptimConfig,
    RenderConfig,
    SelectionConfig,
    TrainingPhase,
)


class Settings(BaseSettings):
    """Loads and validates all workbench settings from the environment."""

    _VALID_LOG_LEVELS = {"CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG", "NOTSET"}

    # --- Environment File Configuration ---
    model_config: SettingsConfigDict = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )
    # --- General ---
    LOG_LEVEL: str = "INFO"
    SEED: int = 0
    METRICS_LOG_NAME: str = "metrics.log"
    # --- Gaussian activation ---
    POSITION_ALPHA: float = 0.75
    OPACITY_SHIFT: float = 2.0
    SCALE_SHIFT: float = 2.3
    SCALE_MIN: float = 0.0001
    SCALE_MAX: float = 0.3
    COLOR_GAIN: float = 1.002
    COLOR_BIAS: float = 0.001
    # --- Tri-plane decoder ---
    GRID_SIZE: int = 16
    MLP_HIDDEN: int = 64
    MLP_LAYERS: int = 4
    MLP_NEGATIVE_SLOPE: float = 0.2
    # --- View encoder ---
    IMAGE_SIZE: int = 64
    PATCH_SIZE: int = 8
    MODEL_DIM: int = 64
    ENCODER_LAYERS: int = 2
    TRIPLANE_LAYERS: int = 2
    ATTENTION_HEADS: int = 4
    MLP_RATIO: int = 4
    TRIPLANE_RESOLUTION: int = 32
    TRIPLANE_CHANNELS: int = 16
    TRIPLANE_TOKEN_RESOLUTION: int = 8
    MAX_VIEWS: int = 32
    CAMERA_TOKEN: bool = True
    # --- Cameras & rendering ---
    CAMERA_RADIUS: float = 3.0
    CAMERA_FOV_DEG: float = 45.0
    VIEW_ELEVATIONS: List[float] = [-18.0, 6.0, 18.0, 30.0]
    VIEW_AZIMUTH_COUNT: int = 16
    BACKGROUND: List[float] = [1.0, 1.0, 1.0]
    NEAR_PLANE: float = 0.01
    COV2D_FLOOR: float = 0.3
    ALPHA_MAX: float = 0.99
    ALPHA_MIN: float = 1.0 / 255.0
    SIGMA_CUTOFF: float = 3.0
    RENDER_CHUNK_ROWS: int = 16
    VOLUME_SAMPLES: int = 32
    # --- Losses ---
    LOSS_W_L2: float = 1.0
    LOSS_W_PERCEPTUAL: float = 2.0
    LOSS_W_OPACITY: float = 1.0
    PERCEPTUAL_EXTRACTOR: str = "gradient"
    # --- Optimization ---
    LR_STAGE1: float = 2e-4
    LR_STAGE2: float = 2e-4
    LR_FINETUNE: float = 2e-5
    WARMUP_STEPS: int = 100
    STEPS_STAGE1: int = 5000
    STEPS_STAGE2: int = 5000
    STEPS_FINETUNE: int = 1000
    GRAD_CLIP: float = 1.0
    WEIGHT_DECAY: float = 0.05
    ADAM_BETA1: float = 0.9
    ADAM_BETA2: float = 0.95
    ADAM_EPS: float = 1e-8
    BATCH_SCENES: int = 4
    TARGET_VIEWS: int = 4
    STAGE1_MAX_VIEWS: int = 16
    STAGE2_MAX_VIEWS: int = 32
    SUPERVISION_PATCH: int = 32
    CHECKPOINT_EVERY: int = 500
    # --- Imperfect-input simulation ---
    NOISE_POSITION_PROB: float = 0.2
    NOISE_COLOR_PROB: float = 0.2
    NOISE_OPACITY_PROB: float = 0.2
    NOISE_SCALE_PROB: float = 0.2
    NOISE_POSITION_LEVEL: float = 0.1
    NOISE_COLOR_LEVEL: float = 0.1
    NOISE_OPACITY_LEVEL: float = 0.1
    NOISE_SCALE_LEVEL: float = 0.02
    NOISE_CUBE_FRACTION_MIN: float = 0.1
    NOISE_CUBE_FRACTION_MAX: float = 0.4
    SIM_REPLACE_PROB: float = 0.5
    SIM_MAX_INPUTS: int = 8
    SIM_MAX_RENDERS: int = 32
    # --- View curation ---
    MATCH_MAX_KEYPOINTS: int = 200
    MATCH_HARRIS_K: float = 0.05
    MATCH_HARRIS_SIGMA: float = 1.0
    MATCH_NMS_SIZE: int = 5
    MATCH_RESPONSE_THRESHOLD: float = 0.01
    MATCH_PATCH_RADIUS: int = 4
    MATCH_RATIO: float = 0.8
    MATCH_MIN_CORRELATION: float = 0.7
    SELECTION_STD_FACTOR: float = 0.6
    SVM_REG: float = 1e-3
    SVM_ITERATIONS: int = 2000
    SVM_LEARNING_RATE: float = 0.1
    SVM_BATCH_SIZE: int = 64
    QUALITY_HISTOGRAM_BINS: int = 16
    # --- Evaluation ---
    CHAMFER_OPACITY_THRESHOLD: float = 0.05
    EVAL_VIEW_COUNTS: List[int] = [1, 4, 8, 16]

    @model_validator(mode="after")
    def _validate_settings(self) -> "Settings":
        """
        Performs cross-field validation for settings that depend on each other.
        Returns:
            Settings: The validated settings instance.
        Raises:
            ValueError: When a value or a combination of values is invalid.
        """
        log_level = self.LOG_LEVEL.strip().upper()
        if log_level not in self._VALID_LOG_LEVELS:
            raise ValueError(
                f"LOG_LEVEL must be one of {sorted(self._VALID_LOG_LEVELS)}, got '{self.LOG_LEVEL}'."
            )
        if not 0.0 < self.POSITION_ALPHA <= 1.0:
            raise ValueError("POSITION_ALPHA must lie in (0, 1].")
        if self.SCALE_MIN >= self.SCALE_MAX:
            raise ValueError("SCALE_MIN must be smaller than SCALE_MAX.")
        if self.GRID_SIZE <= 0:
            raise ValueError("GRID_SIZE must be greater than zero.")
        if self.IMAGE_SIZE % self.PATCH_SIZE:
            raise ValueError("IMAGE_SIZE must be divisible by PATCH_SIZE.")
        if self.MODEL_DIM % self.ATTENTION_HEADS:
            raise ValueError("MODEL_DIM must be divisible by ATTENTION_HEADS.")
        if self.TRIPLANE_RESOLUTION % self.TRIPLANE_TOKEN_RESOLUTION:
            raise ValueError("TRIPLANE_RESOLUTION must be divisible by TRIPLANE_TOKEN_RESOLUTION.")
        if len(self.BACKGROUND) != 3 or not all(0.0 <= value <= 1.0 for value in self.BACKGROUND):
            raise ValueError("BACKGROUND must be three values within [0, 1].")
        if not self.VIEW_ELEVATIONS:
            raise ValueError("VIEW_ELEVATIONS must contain at least one elevation.")
        if self.VIEW_AZIMUTH_COUNT <= 0:
            raise ValueError("VIEW_AZIMUTH_COUNT must be greater than zero.")
        if self.CAMERA_RADIUS <= 1.0:
            raise ValueError("CAMERA_RADIUS must place cameras outside the [-1, 1] cube.")
        if not 0.0 < self.CAMERA_FOV_DEG < 180.0:
            raise ValueError("CAMERA_FOV_DEG must lie in (0, 180).")
        if self.VOLUME_SAMPLES < 2:
            raise ValueError("VOLUME_SAMPLES must be at least 2.")
        if min(self.LOSS_W_L2, self.LOSS_W_PERCEPTUAL, self.LOSS_W_OPACITY) < 0:
            raise ValueError("Loss weights must be zero or greater.")
        for name in ("LR_STAGE1", "LR_STAGE2", "LR_FINETUNE"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be greater than zero.")
        if self.WARMUP_STEPS < 0:
            raise ValueError("WARMUP_STEPS must be zero or greater.")
        if self.SUPERVISION_PATCH < 0 or self.SUPERVISION_PATCH > self.IMAGE_SIZE:
            raise ValueError("SUPERVISION_PATCH must lie within [0, IMAGE_SIZE].")
        for name in ("NOISE_POSITION_PROB", "NOISE_COLOR_PROB", "NOISE_OPACITY_PROB", "NOISE_SCALE_PROB", "SIM_REPLACE_PROB"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie within [0, 1].")
        if not 0.0 < self.NOISE_CUBE_FRACTION_MIN <= self.NOISE_CUBE_FRACTION_MAX <= 1.0:
            raise ValueError("Noise cube fractions must satisfy 0 < min <= max <= 1.")
        if self.CHAMFER_OPACITY_THRESHOLD < 0:
            raise ValueError("CHAMFER_OPACITY_THRESHOLD must be zero or greater.")
        return self

    # --- Typed configuration blocks ---

    def activation_config(self) -> ActivationConfig:
        return ActivationConfig(
            alpha=self.POSITION_ALPHA,
            opacity_shift=self.OPACITY_SHIFT,
            scale_shift=self.SCALE_SHIFT,
            scale_min=self.SCALE_MIN,
            scale_max=self.SCALE_MAX,
            color_gain=self.COLOR_GAIN,
            color_bias=self.COLOR_BIAS,
        )

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(
            feature_dim=self.TRIPLANE_CHANNELS,
            hidden_dim=self.MLP_HIDDEN,
            num_layers=self.MLP_LAYERS,
            negative_slope=self.MLP_NEGATIVE_SLOPE,
            grid_size=self.GRID_SIZE,
        )

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            image_size=self.IMAGE_SIZE,
            patch_size=self.PATCH_SIZE,
            model_dim=self.MODEL_DIM,
            encoder_layers=self.ENCODER_LAYERS,
            triplane_layers=self.TRIPLANE_LAYERS,
            attention_heads=self.ATTENTION_HEADS,
            mlp_ratio=self.MLP_RATIO,
            triplane_resolution=self.TRIPLANE_RESOLUTION,
            triplane_channels=self.TRIPLANE_CHANNELS,
            triplane_token_resolution=self.TRIPLANE_TOKEN_RESOLUTION,
            max_views=self.MAX_VIEWS,
            camera_token=self.CAMERA_TOKEN,
        )

    def render_config(self) -> RenderConfig:
        return RenderConfig(
            near_plane=self.NEAR_PLANE,
            cov2d_floor=self.COV2D_FLOOR,
            alpha_max=self.ALPHA_MAX,
            alpha_min=self.ALPHA_MIN,
            sigma_cutoff=self.SIGMA_CUTOFF,
            chunk_rows=self.RENDER_CHUNK_ROWS,
            volume_samples=self.VOLUME_SAMPLES,
            volume_reference_grid=self.GRID_SIZE,
            background=self.background,
        )

    def noise_config(self, seed: Optional[int] = None) -> NoiseConfig:
        return NoiseConfig(
            position_prob=self.NOISE_POSITION_PROB,
            color_prob=self.NOISE_COLOR_PROB,
            opacity_prob=self.NOISE_OPACITY_PROB,
            scale_prob=self.NOISE_SCALE_PROB,
            position_level=self.NOISE_POSITION_LEVEL,
            color_level=self.NOISE_COLOR_LEVEL,
            opacity_level=self.NOISE_OPACITY_LEVEL,
            scale_level=self.NOISE_SCALE_LEVEL,
            cube_fraction_min=self.NOISE_CUBE_FRACTION_MIN,
            cube_fraction_max=self.NOISE_CUBE_FRACTION_MAX,
            replace_prob=self.SIM_REPLACE_PROB,
            max_inputs=self.SIM_MAX_INPUTS,
            max_renders=self.SIM_MAX_RENDERS,
            seed=self.SEED if seed is None else seed,
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(
            w_l2=self.LOSS_W_L2,
            w_perceptual=self.LOSS_W_PERCEPTUAL,
            w_opacity=self.LOSS_W_OPACITY,
            perceptual_extractor=self.PERCEPTUAL_EXTRACTOR,
        )

    def optim_config(self, phase: TrainingPhase) -> OptimConfig:
        """
        Builds the optimizer settings of one training phase.
        Args:
            phase: One of "stage1", "stage2" or "finetune".
        Returns:
            OptimConfig: Learning rate, schedule and sampling ranges for the phase.
        Raises:
            ValueError: If the phase is unknown.
        """
        per_phase = {
            "stage1": (self.LR_STAGE1, self.STEPS_STAGE1, self.STAGE1_MAX_VIEWS, self.SUPERVISION_PATCH),
            "stage2": (self.LR_STAGE2, self.STEPS_STAGE2, self.STAGE2_MAX_VIEWS, 0),
            "finetune": (self.LR_FINETUNE, self.STEPS_FINETUNE, self.STAGE2_MAX_VIEWS, 0),
        }
        if phase not in per_phase:
            raise ValueError(f"Unknown training phase '{phase}'.")
        lr, total_steps, max_views, patch = per_phase[phase]
        return OptimConfig(
            lr=lr,
            warmup_steps=self.WARMUP_STEPS,
            total_steps=total_steps,
            grad_clip=self.GRAD_CLIP,
            weight_decay=self.WEIGHT_DECAY,
            beta1=self.ADAM_BETA1,
            beta2=self.ADAM_BETA2,
            eps=self.ADAM_EPS,
            batch_scenes=self.BATCH_SCENES,
            target_views=self.TARGET_VIEWS,
            max_input_views=max_views,
            supervision_patch=patch,
        )

    def matcher_config(self) -> MatcherConfig:
        return MatcherConfig(
            max_keypoints=self.MATCH_MAX_KEYPOINTS,
            harris_k=self.MATCH_HARRIS_K,
            harris_sigma=self.MATCH_HARRIS_SIGMA,
            nms_size=self.MATCH_NMS_SIZE,
            response_threshold=self.MATCH_RESPONSE_THRESHOLD,
            patch_radius=self.MATCH_PATCH_RADIUS,
            ratio=self.MATCH_RATIO,
            min_correlation=self.MATCH_MIN_CORRELATION,
        )

    def selection_config(self) -> SelectionConfig:
        return SelectionConfig(std_factor=self.SELECTION_STD_FACTOR)

    def classifier_config(self) -> ClassifierConfig:
        return ClassifierConfig(
            reg=self.SVM_REG,
            iterations=self.SVM_ITERATIONS,
            learning_rate=self.SVM_LEARNING_RATE,
            batch_size=self.SVM_BATCH_SIZE,
            histogram_bins=self.QUALITY_HISTOGRAM_BINS,
        )

    @property
    def background(self) -> Tuple[float, float, float]:
        return (float(self.BACKGROUND[0]), float(self.BACKGROUND[1]), float(self.BACKGROUND[2]))


def load_settings(config_path: Optional[str] = None, **overrides: Any) -> Settings:
    """
    Builds Settings from an optional key/value configuration file.
    Args:
        config_path: Path to a KEY=VALUE file; the default `.env` lookup is used when None.
        overrides: Field values that take precedence over the file and the environment.
    Returns:
        Settings: The validated settings.
    Raises:
        FileNotFoundError: If the configuration file does not exist.
        RuntimeError: If the configuration is invalid.
    """
    if config_path is not None and not Path(config_path).is_file():
        raise FileNotFoundError(f"Configuration file not found: {config_path}")
    try:
        if config_path is None:
            return Settings(**overrides)
        return Settings(_env_file=config_path, **overrides)
    except ValidationError as error:
        raise RuntimeError(f"Invalid workbench configuration: {error}") from error


try:
    settings = Settings()
except ValidationError as error:
    raise RuntimeError(f"Invalid workbench configuration: {error}") from error

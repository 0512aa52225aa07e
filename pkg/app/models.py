"""
Pydantic models for configuration blocks and persisted records.

This module defines the typed configuration objects consumed by the core
reconstruction code, the services and the training processor, together with
the JSON records written to disk (camera entries, checkpoint manifests and
view-selection reports). `app.config.Settings` builds every config block from
the flat key/value configuration file.
"""
from typing import Any, Dict, List, Literal, Optional, Tuple
from pydantic import BaseModel, ConfigDict, Field, model_validator

# --- Gaussian activation & decoding ---

class ActivationConfig(BaseModel):
    """Constants of the raw-parameter to Gaussian activation rules."""
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(0.75, gt=0.0, le=1.0, description="Position blend weight of the grid point.")
    opacity_shift: float = 2.0
    scale_shift: float = 2.3
    scale_min: float = Field(0.0001, gt=0.0)
    scale_max: float = 0.3
    color_gain: float = 1.002
    color_bias: float = 0.001

    @model_validator(mode="after")
    def _check_scale_range(self) -> "ActivationConfig":
        if self.scale_min >= self.scale_max:
            raise ValueError("scale_min must be smaller than scale_max.")
        return self

    @property
    def color_min(self) -> float:
        return -self.color_bias

    @property
    def color_max(self) -> float:
        return self.color_gain - self.color_bias


class DecoderConfig(BaseModel):
    """Shape of the tri-plane feature decoder."""
    model_config = ConfigDict(frozen=True)

    feature_dim: int = Field(16, gt=0, description="Channels d of each tri-plane.")
    hidden_dim: int = Field(64, gt=0)
    num_layers: int = Field(4, ge=1)
    negative_slope: float = Field(0.2, gt=0.0, lt=1.0)
    grid_size: int = Field(16, ge=1, description="Initial positions per axis.")


class EncoderConfig(BaseModel):
    """Shape of the variable-view transformer that produces tri-planes."""
    model_config = ConfigDict(frozen=True)

    image_size: int = Field(64, gt=0)
    patch_size: int = Field(8, gt=0)
    model_dim: int = Field(64, gt=0)
    encoder_layers: int = Field(2, ge=0)
    triplane_layers: int = Field(2, ge=1)
    attention_heads: int = Field(4, gt=0)
    mlp_ratio: int = Field(4, gt=0)
    triplane_resolution: int = Field(32, gt=0)
    triplane_channels: int = Field(16, gt=0)
    triplane_token_resolution: int = Field(8, gt=0)
    max_views: int = Field(32, gt=0)
    camera_token: bool = True

    @model_validator(mode="after")
    def _check_shapes(self) -> "EncoderConfig":
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size.")
        if self.model_dim % self.attention_heads:
            raise ValueError("model_dim must be divisible by attention_heads.")
        if self.model_dim % 4:
            raise ValueError("model_dim must be divisible by 4 for 2D positional encodings.")
        if self.triplane_resolution % self.triplane_token_resolution:
            raise ValueError("triplane_resolution must be divisible by triplane_token_resolution.")
        return self

    @property
    def patches_per_view(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def tokens_per_view(self) -> int:
        return self.patches_per_view + (1 if self.camera_token else 0)


class RenderConfig(BaseModel):
    """Rasterization and volume-rendering constants."""
    model_config = ConfigDict(frozen=True)

    near_plane: float = Field(0.01, gt=0.0)
    cov2d_floor: float = Field(0.3, ge=0.0)
    alpha_max: float = Field(0.99, gt=0.0, lt=1.0)
    alpha_min: float = Field(1.0 / 255.0, ge=0.0)
    sigma_cutoff: float = Field(3.0, gt=0.0)
    chunk_rows: int = Field(16, gt=0)
    volume_samples: int = Field(32, ge=2)
    volume_reference_grid: int = Field(16, ge=1, description="Grid size n whose cell 2/n is the reference step.")
    background: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    @property
    def reference_step(self) -> float:
        return 2.0 / self.volume_reference_grid


# --- Imperfect-input simulation ---

NOISE_EFFECTS: Tuple[str, ...] = ("position", "color", "opacity", "scale")


class NoiseConfig(BaseModel):
    """Sub-cube noise injection and self-feeding parameters."""
    model_config = ConfigDict(frozen=True)

    position_prob: float = Field(0.2, ge=0.0, le=1.0)
    color_prob: float = Field(0.2, ge=0.0, le=1.0)
    opacity_prob: float = Field(0.2, ge=0.0, le=1.0)
    scale_prob: float = Field(0.2, ge=0.0, le=1.0)
    position_level: float = Field(0.1, ge=0.0)
    color_level: float = Field(0.1, ge=0.0)
    opacity_level: float = Field(0.1, ge=0.0)
    scale_level: float = Field(0.02, ge=0.0)
    cube_fraction_min: float = Field(0.1, gt=0.0, le=1.0)
    cube_fraction_max: float = Field(0.4, gt=0.0, le=1.0)
    replace_prob: float = Field(0.5, ge=0.0, le=1.0)
    min_inputs: int = Field(1, ge=1)
    max_inputs: int = Field(8, ge=1)
    min_renders: int = Field(1, ge=1)
    max_renders: int = Field(32, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check_ranges(self) -> "NoiseConfig":
        if self.cube_fraction_min > self.cube_fraction_max:
            raise ValueError("cube_fraction_min must not exceed cube_fraction_max.")
        if self.min_inputs > self.max_inputs:
            raise ValueError("min_inputs must not exceed max_inputs.")
        if self.min_renders > self.max_renders:
            raise ValueError("min_renders must not exceed max_renders.")
        return self

    def probability(self, effect: str) -> float:
        return getattr(self, f"{effect}_prob")

    def level(self, effect: str) -> float:
        return getattr(self, f"{effect}_level")

    def only(self, effect: str, prob: float = 1.0) -> "NoiseConfig":
        """Returns a copy where only `effect` is active, with the given probability."""
        if effect not in NOISE_EFFECTS:
            raise ValueError(f"Unknown noise effect '{effect}'.")
        updates = {f"{name}_prob": (prob if name == effect else 0.0) for name in NOISE_EFFECTS}
        return self.model_copy(update=updates)


def heavy_noise_config(seed: int = 0) -> NoiseConfig:
    """Noise preset used to fabricate clearly defective candidate views."""
    return NoiseConfig(
        position_prob=1.0,
        color_prob=1.0,
        opacity_prob=1.0,
        scale_prob=1.0,
        position_level=0.5,
        color_level=0.6,
        opacity_level=0.6,
        scale_level=0.1,
        cube_fraction_min=1.0,
        cube_fraction_max=1.0,
        seed=seed,
    )


# --- Training ---

class LossConfig(BaseModel):
    """Weights of the composite reconstruction loss."""
    model_config = ConfigDict(frozen=True)

    w_l2: float = Field(1.0, ge=0.0)
    w_perceptual: float = Field(2.0, ge=0.0)
    w_opacity: float = Field(1.0, ge=0.0)
    perceptual_extractor: str = "gradient"


TrainingPhase = Literal["stage1", "stage2", "finetune"]


class OptimConfig(BaseModel):
    """Optimizer and schedule settings for one training phase."""
    model_config = ConfigDict(frozen=True)

    lr: float = Field(2e-4, gt=0.0)
    warmup_steps: int = Field(100, ge=0)
    total_steps: int = Field(5000, ge=1)
    grad_clip: float = Field(1.0, gt=0.0)
    weight_decay: float = Field(0.05, ge=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.95, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    batch_scenes: int = Field(4, ge=1)
    target_views: int = Field(4, ge=1)
    min_input_views: int = Field(1, ge=1)
    max_input_views: int = Field(32, ge=1)
    supervision_patch: int = Field(0, ge=0, description="Square patch side for supervision, 0 for full images.")


# --- View curation ---

class MatcherConfig(BaseModel):
    """Corner detection and patch-matching thresholds."""
    model_config = ConfigDict(frozen=True)

    max_keypoints: int = Field(200, gt=0)
    harris_k: float = Field(0.05, gt=0.0)
    harris_sigma: float = Field(1.0, gt=0.0)
    nms_size: int = Field(5, ge=1)
    response_threshold: float = Field(0.01, ge=0.0, description="Fraction of the strongest corner response.")
    patch_radius: int = Field(4, ge=1)
    ratio: float = Field(0.8, gt=0.0, le=1.0)
    min_correlation: float = Field(0.7, ge=-1.0, le=1.0)


class SelectionConfig(BaseModel):
    """Consistency-threshold rule."""
    model_config = ConfigDict(frozen=True)

    std_factor: float = Field(0.6, ge=0.0)


class ClassifierConfig(BaseModel):
    """Linear quality classifier training settings."""
    model_config = ConfigDict(frozen=True)

    reg: float = Field(1e-3, gt=0.0)
    iterations: int = Field(2000, gt=0)
    learning_rate: float = Field(0.1, gt=0.0)
    batch_size: int = Field(64, gt=0)
    histogram_bins: int = Field(16, gt=1)


# --- Workbench ---

SceneShape = Literal["sphere_shell", "box", "two_blob", "ring"]
ColorScheme = Literal["solid", "gradient", "bands", "octants"]


class SceneSpec(BaseModel):
    """Procedural synthetic object description."""
    model_config = ConfigDict(frozen=True)

    shape: SceneShape = "sphere_shell"
    gaussian_count: int = Field(2000, gt=0)
    color_scheme: ColorScheme = "bands"
    seed: int = 0
    radius: float = Field(0.5, gt=0.0, lt=1.0)
    gaussian_scale: float = Field(0.035, gt=0.0, le=0.3)
    opacity: float = Field(0.9, gt=0.0, lt=1.0)


class CameraRecord(BaseModel):
    """One entry of a scene's cameras.json."""
    index: int = Field(ge=0)
    extrinsic: List[float] = Field(min_length=16, max_length=16, description="Row-major 4x4 world-to-camera.")
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    elevation_deg: float
    azimuth_deg: float


class TensorEntry(BaseModel):
    """Manifest description of one tensor in a checkpoint payload."""
    name: str
    shape: List[int]
    dtype: Literal["float32"] = "float32"
    offset: int = Field(ge=0)
    nbytes: int = Field(ge=0)


class CheckpointManifest(BaseModel):
    """JSON header of a FLXR checkpoint."""
    tensors: List[TensorEntry]
    metadata: Dict[str, Any] = Field(default_factory=dict)


class SelectionReport(BaseModel):
    """Outcome of consistency-based view curation."""
    counts: List[Optional[int]] = Field(description="Match count per candidate; None for query views.")
    mean: float
    std: float
    threshold: float
    selected: List[int]
    queries: List[int]
    back_view_accepted: bool = True

    @property
    def rejected(self) -> List[int]:
        selected = set(self.selected)
        return [index for index in range(len(self.counts)) if index not in selected]


class EvalResult(BaseModel):
    """Metrics of one scene reconstructed from a given number of input views."""
    scene: str
    view_count: int
    psnr: float
    ssim: float
    chamfer: Optional[float] = None
    held_out: int

"""
Feed-forward reconstructor: posed views -> tri-plane -> Gaussian cloud.

Bundles the view encoder, the Gaussian decoder and the init grid, and exposes
both image formation paths (splatting for the Gaussian cloud, ray marching
for the NeRF pretraining field).
"""
import logging
from typing import List, Sequence, Tuple
import torch
import torch.nn as nn
from app.core.cameras import Camera, PosedView
from app.core.encoder import ViewEncoder, count_parameters
from app.core.gaussians import GaussianCloud
from app.core.rasterizer import RenderedImage, rasterize
from app.core.triplane import DecoderMLP, InitGrid, TriPlane, decode_cloud, make_init_grid
from app.core.volume import render_volume
from app.models import ActivationConfig, DecoderConfig, EncoderConfig, RenderConfig

logger = logging.getLogger(__name__)


class GaussianReconstructor(nn.Module):
    """Encoder, decoder and init grid of the feed-forward model."""

    def __init__(
        self,
        encoder_cfg: EncoderConfig,
        decoder_cfg: DecoderConfig,
        activation_cfg: ActivationConfig,
        render_cfg: RenderConfig,
    ) -> None:
        super().__init__()
        if decoder_cfg.feature_dim != encoder_cfg.triplane_channels:
            raise ValueError(
                f"Decoder feature_dim ({decoder_cfg.feature_dim}) must equal the tri-plane channels ({encoder_cfg.triplane_channels})."
            )
        self.encoder_cfg = encoder_cfg
        self.decoder_cfg = decoder_cfg
        self.activation_cfg = activation_cfg
        self.render_cfg = render_cfg
        self.encoder = ViewEncoder(encoder_cfg)
        self.decoder = DecoderMLP(decoder_cfg)
        self.register_buffer("grid_positions", make_init_grid(decoder_cfg.grid_size).positions, persistent=False)
        logger.debug(
            f"Reconstructor built: {count_parameters(self)} parameters, grid n={decoder_cfg.grid_size}."
        )

    @classmethod
    def from_settings(cls, settings) -> "GaussianReconstructor":
        return cls(
            encoder_cfg=settings.encoder_config(),
            decoder_cfg=settings.decoder_config(),
            activation_cfg=settings.activation_config(),
            render_cfg=settings.render_config(),
        )

    @property
    def background(self) -> Tuple[float, float, float]:
        return self.render_cfg.background

    @property
    def grid(self) -> InitGrid:
        return InitGrid(n=self.decoder_cfg.grid_size, positions=self.grid_positions)

    def encode(self, views: Sequence[PosedView]) -> TriPlane:
        return self.encoder(views)

    def decode(self, tri: TriPlane) -> GaussianCloud:
        return decode_cloud(tri, self.decoder, self.grid, self.activation_cfg)

    def reconstruct(self, views: Sequence[PosedView]) -> GaussianCloud:
        """Views to a grid-indexed Gaussian cloud."""
        return self.decode(self.encode(views))

    def render(self, cloud: GaussianCloud, cameras: Sequence[Camera]) -> List[RenderedImage]:
        return [rasterize(cloud, cam, self.background, self.render_cfg) for cam in cameras]

    def render_nerf(self, tri: TriPlane, cameras: Sequence[Camera], samples_per_ray: int = 0) -> List[RenderedImage]:
        samples = samples_per_ray or self.render_cfg.volume_samples
        return [
            render_volume(tri, self.decoder, cam, samples, self.activation_cfg, self.render_cfg, self.background)
            for cam in cameras
        ]

    def config_metadata(self) -> dict:
        """Configuration blocks as JSON-ready dicts, stored alongside checkpoints."""
        return {
            "encoder": self.encoder_cfg.model_dump(),
            "decoder": self.decoder_cfg.model_dump(),
            "activation": self.activation_cfg.model_dump(),
            "render": self.render_cfg.model_dump(mode="json"),
        }

    @classmethod
    def from_metadata(cls, metadata: dict) -> "GaussianReconstructor":
        return cls(
            encoder_cfg=EncoderConfig(**metadata["encoder"]),
            decoder_cfg=DecoderConfig(**metadata["decoder"]),
            activation_cfg=ActivationConfig(**metadata["activation"]),
            render_cfg=RenderConfig(**metadata["render"]),
        )


def reconstruct_and_render(
    model: GaussianReconstructor,
    views: Sequence[PosedView],
    cameras: Sequence[Camera],
) -> Tuple[GaussianCloud, List[RenderedImage]]:
    """Inference helper without gradients."""
    with torch.no_grad():
        cloud = model.reconstruct(views)
        return cloud, model.render(cloud, cameras)

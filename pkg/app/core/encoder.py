"""
Variable-view transformer that turns posed views into a tri-plane.

Every view is cut into patches, linearly embedded, modulated by its camera
embedding through AdaIN (a per-channel scale and shift) and given a 2D
sinusoidal position code. Optionally a per-view transformer refines the patch
tokens, after which the camera embedding itself is appended as one extra
token. Learnable tri-plane queries then cross-attend to the concatenated
tokens of all views. No position code distinguishes views, so the output
does not depend on the order in which views are given.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Sequence
import torch
import torch.nn as nn
import torch.nn.functional as F
from app.core.cameras import PosedView, camera_to_vec
from app.core.triplane import TriPlane
from app.models import EncoderConfig

logger = logging.getLogger(__name__)

CAMERA_VEC_DIM = 20


def sinusoidal_position_encoding(grid: int, dim: int) -> torch.Tensor:
    """Row-major (grid * grid, dim) 2D sine/cosine codes; dim/2 channels per axis."""
    if dim % 4:
        raise ValueError("Positional encoding dimension must be divisible by 4.")
    quarter = dim // 4
    frequencies = 1.0 / (10000.0 ** (torch.arange(quarter, dtype=torch.float64) / quarter))
    coords = torch.arange(grid, dtype=torch.float64)
    rows, cols = torch.meshgrid(coords, coords, indexing="ij")

    def encode(values: torch.Tensor) -> torch.Tensor:
        angles = values.reshape(-1, 1) * frequencies
        return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)

    return torch.cat([encode(rows), encode(cols)], dim=-1).float()


@dataclass(frozen=True)
class TokenSequence:
    """Concatenated view tokens (T, D) with per-view segment boundaries."""
    tokens: torch.Tensor
    boundaries: List[int]
    tokens_per_view: int

    def __post_init__(self) -> None:
        if not self.boundaries or self.boundaries[0] != 0 or self.boundaries[-1] != self.tokens.shape[0]:
            raise ValueError("Token boundaries must start at 0 and end at the token count.")
        for start, stop in zip(self.boundaries, self.boundaries[1:]):
            if stop - start != self.tokens_per_view:
                raise ValueError(f"Every view must contribute {self.tokens_per_view} tokens, got {stop - start}.")

    @property
    def view_count(self) -> int:
        return len(self.boundaries) - 1

    def segment(self, view_index: int) -> torch.Tensor:
        return self.tokens[self.boundaries[view_index]:self.boundaries[view_index + 1]]


class CameraEmbedder(nn.Module):
    """Maps the 20-value camera vector to a model-dim feature."""

    def __init__(self, model_dim: int) -> None:
        super().__init__()
        self.net = nn.Sequential(nn.Linear(CAMERA_VEC_DIM, model_dim), nn.SiLU(), nn.Linear(model_dim, model_dim))

    def forward(self, camera_vecs: torch.Tensor) -> torch.Tensor:
        return self.net(camera_vecs)


class ViewTokenizer(nn.Module):
    """Patch embedding with AdaIN camera modulation and an appended camera token."""

    def __init__(self, cfg: EncoderConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.camera_embedder = CameraEmbedder(cfg.model_dim)
        self.patch_embed = nn.Linear(4 * cfg.patch_size ** 2, cfg.model_dim, bias=False)
        self.adain = nn.Linear(cfg.model_dim, 2 * cfg.model_dim, bias=False)
        grid = cfg.image_size // cfg.patch_size
        self.register_buffer("position_code", sinusoidal_position_encoding(grid, cfg.model_dim), persistent=False)
        if cfg.encoder_layers:
            layer = nn.TransformerEncoderLayer(
                d_model=cfg.model_dim,
                nhead=cfg.attention_heads,
                dim_feedforward=cfg.mlp_ratio * cfg.model_dim,
                dropout=0.0,
                activation="gelu",
                batch_first=True,
                norm_first=True,
            )
            self.view_transformer = nn.TransformerEncoder(layer, num_layers=cfg.encoder_layers, enable_nested_tensor=False)
        else:
            self.view_transformer = None

    def patchify(self, images: torch.Tensor) -> torch.Tensor:
        """(V, H, W, 4) RGBA images to (V, P, 4 * p * p) patch vectors."""
        size = self.cfg.image_size
        if images.dim() != 4 or tuple(images.shape[1:]) != (size, size, 4):
            raise ValueError(f"View images must have shape (V, {size}, {size}, 4), got {tuple(images.shape)}.")
        patches = F.unfold(images.permute(0, 3, 1, 2), kernel_size=self.cfg.patch_size, stride=self.cfg.patch_size)
        return patches.transpose(1, 2)

    def tokenize_features(self, images: torch.Tensor, camera_features: torch.Tensor) -> torch.Tensor:
        """Tokens (V, P + 1, D) from images and already-embedded camera features (V, D)."""
        patch_tokens = self.patch_embed(self.patchify(images.to(self.patch_embed.weight.dtype)))
        gamma, beta = self.adain(camera_features).unsqueeze(1).chunk(2, dim=-1)
        tokens = patch_tokens * (1.0 + gamma) + beta + self.position_code.to(patch_tokens.dtype)
        if self.view_transformer is not None:
            tokens = self.view_transformer(tokens)
        if self.cfg.camera_token:
            tokens = torch.cat([tokens, camera_features.unsqueeze(1)], dim=1)
        return tokens

    def forward(self, images: torch.Tensor, camera_vecs: torch.Tensor) -> torch.Tensor:
        camera_features = self.camera_embedder(camera_vecs.to(self.patch_embed.weight.dtype))
        return self.tokenize_features(images, camera_features)


class TriplaneBlock(nn.Module):
    """Cross-attention to view tokens, self-attention among queries, then an MLP."""

    def __init__(self, cfg: EncoderConfig) -> None:
        super().__init__()
        dim = cfg.model_dim
        self.norm_cross = nn.LayerNorm(dim)
        self.norm_context = nn.LayerNorm(dim)
        self.cross_attention = nn.MultiheadAttention(dim, cfg.attention_heads, batch_first=True)
        self.norm_self = nn.LayerNorm(dim)
        self.self_attention = nn.MultiheadAttention(dim, cfg.attention_heads, batch_first=True)
        self.norm_mlp = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, cfg.mlp_ratio * dim), nn.GELU(), nn.Linear(cfg.mlp_ratio * dim, dim))

    def forward(self, queries: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        normed_context = self.norm_context(context)
        normed = self.norm_cross(queries)
        queries = queries + self.cross_attention(normed, normed_context, normed_context, need_weights=False)[0]
        normed = self.norm_self(queries)
        queries = queries + self.self_attention(normed, normed, normed, need_weights=False)[0]
        return queries + self.mlp(self.norm_mlp(queries))


class TriplaneTransformer(nn.Module):
    """Learnable tri-plane tokens refined against view tokens and unpatchified into planes."""

    def __init__(self, cfg: EncoderConfig) -> None:
        super().__init__()
        self.cfg = cfg
        token_res = cfg.triplane_token_resolution
        self.upsample = cfg.triplane_resolution // token_res
        self.queries = nn.Parameter(torch.randn(3 * token_res ** 2, cfg.model_dim) * 0.02)
        self.blocks = nn.ModuleList([TriplaneBlock(cfg) for _ in range(cfg.triplane_layers)])
        self.norm_out = nn.LayerNorm(cfg.model_dim)
        self.to_planes = nn.Linear(cfg.model_dim, self.upsample ** 2 * cfg.triplane_channels)

    def forward(self, context: torch.Tensor) -> torch.Tensor:
        """(T, D) tokens to (3, d, R, R) planes."""
        queries = self.queries.unsqueeze(0)
        context = context.unsqueeze(0)
        for block in self.blocks:
            queries = block(queries, context)
        out = self.to_planes(self.norm_out(queries))[0]
        token_res, up, channels = self.cfg.triplane_token_resolution, self.upsample, self.cfg.triplane_channels
        out = out.reshape(3, token_res, token_res, up, up, channels)
        return out.permute(0, 5, 1, 3, 2, 4).reshape(3, channels, token_res * up, token_res * up)


class ViewEncoder(nn.Module):
    """Any number of posed views to one tri-plane."""

    def __init__(self, cfg: EncoderConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.tokenizer = ViewTokenizer(cfg)
        self.triplane_transformer = TriplaneTransformer(cfg)

    @property
    def dtype(self) -> torch.dtype:
        return self.tokenizer.patch_embed.weight.dtype

    def _stack_inputs(self, views: Sequence[PosedView]):
        if not views:
            raise ValueError("At least one input view is required.")
        if len(views) > self.cfg.max_views:
            raise ValueError(f"At most {self.cfg.max_views} input views are supported, got {len(views)}.")
        images = torch.stack([view.image for view in views]).to(self.dtype)
        camera_vecs = torch.stack([camera_to_vec(view.camera) for view in views]).to(self.dtype)
        return images, camera_vecs

    def tokenize_view(self, view: PosedView) -> torch.Tensor:
        """The (P + 1, D) token segment of a single view."""
        images, camera_vecs = self._stack_inputs([view])
        return self.tokenizer(images, camera_vecs)[0]

    def tokenize_views(self, views: Sequence[PosedView]) -> TokenSequence:
        images, camera_vecs = self._stack_inputs(views)
        tokens = self.tokenizer(images, camera_vecs)
        per_view = tokens.shape[1]
        return TokenSequence(
            tokens=tokens.reshape(-1, tokens.shape[-1]),
            boundaries=[index * per_view for index in range(len(views) + 1)],
            tokens_per_view=self.cfg.tokens_per_view,
        )

    def forward(self, views: Sequence[PosedView]) -> TriPlane:
        sequence = self.tokenize_views(views)
        return TriPlane(self.triplane_transformer(sequence.tokens))


def encode_views(encoder: ViewEncoder, views: Sequence[PosedView]) -> TriPlane:
    """
    Encodes a variable number of posed views into a tri-plane.
    Args:
        encoder: Encoder weights.
        views: 1 to max_views posed views of matching image size.
    Returns:
        TriPlane: Shape (3, d, R, R) regardless of the view count.
    Raises:
        ValueError: On an empty list, too many views or mismatched image sizes.
    """
    return encoder(views)


def count_parameters(module: nn.Module) -> int:
    return int(sum(math.prod(p.shape) for p in module.parameters()))

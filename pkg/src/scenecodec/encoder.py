"""Patch encoder: point/positional embeddings, class-conditioned FiLM,
transformer blocks, spatial-attention pooling and the latent projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import MLP, Embedding, FiLM, Linear, Module, TransformerBlock
from .patching import Patch

RELEASE_LATENT_DIMS = (8, 16, 32, 64, 128)


@dataclass
class EncoderConfig:
    d_z: int
    n_classes: int
    d_f: int = 128
    d_p: int = 64
    d_s: int = 32
    blocks: int = 4
    heads: int = 4
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_f % self.heads != 0:
            raise ValueError(f"d_f {self.d_f} must be divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class Latent:
    values: np.ndarray  # (d_z,)
    layer: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("latent values must be finite")


class PatchEncoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32):
        c = cfg
        self.cfg = cfg
        self.embed_f = Linear(3, c.d_f, rng, dtype)
        self.embed_p = Linear(3, c.d_p, rng, dtype)
        self.proj_p = Linear(c.d_p, c.d_f, rng, dtype)
        self.class_embed = Embedding(c.n_classes, c.d_s, rng, dtype)
        self.film = FiLM(c.d_s, c.d_f, rng, dtype)
        self.blocks = [
            TransformerBlock(c.d_f, c.heads, rng, dtype, dropout=c.dropout)
            for _ in range(c.blocks)
        ]
        self.pool_score = MLP(3 + c.d_p, c.d_f, 1, rng, dtype)
        self.head_z = Linear(c.d_f, c.d_z, rng, dtype)
        self.dtype = dtype

    def embed_points(self, points: Tensor) -> tuple[Tensor, Tensor]:
        """Per-point features h = f + proj(p) plus the raw positional
        embedding p (the pooling head needs it)."""
        f = self.embed_f(points)
        p = self.embed_p(points)
        return ad.add(f, self.proj_p(p)), p

    def forward(
        self,
        points: np.ndarray,  # (B, N, 3)
        valid_mask: np.ndarray,  # (B, N) bool
        class_index: np.ndarray,  # (B,) dense class indices
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        if not valid_mask.any(axis=1).all():
            raise ValueError("every patch in a batch needs at least one valid point")
        x = Tensor(np.ascontiguousarray(points, dtype=self.dtype))
        h, p = self.embed_points(x)
        s = self.class_embed(class_index)
        h = self.film(h, s)
        for block in self.blocks:
            h = block(h, valid_mask, rng)
        g = self.spatial_attention_pool(h, x, p, valid_mask)
        return self.head_z(g)

    def spatial_attention_pool(
        self, h: Tensor, x: Tensor, p: Tensor, valid_mask: np.ndarray
    ) -> Tensor:
        """Softmax-weighted sum of features over valid slots only."""
        scores = self.pool_score(ad.concat([x, p], axis=-1))  # (B, N, 1)
        scores = ad.masked_fill(scores, ~valid_mask[:, :, None], -np.inf)
        weights = ad.softmax(scores, axis=1)
        return ad.tsum(ad.mul(weights, h), axis=1)


def encode_patch(model: PatchEncoder, patch: Patch, class_index: int) -> Latent:
    """Deterministic eval-mode encoding of a single canonical patch."""
    z = model.forward(
        patch.points_local[None, :, :],
        patch.valid_mask[None, :],
        np.array([class_index], dtype=np.int64),
        rng=None,
    )
    return Latent(values=z.data[0].astype(np.float64), layer=patch.layer)

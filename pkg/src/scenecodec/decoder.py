"""Patch decoder: seeded uniform coarse init, latent-driven offsets,
grid-folding upsample by G, and coarse/fine confidence heads."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import ObbAttributes
from .layers import MLP, Module
from .patching import counter_rng, denormalize_patch, mix64


@dataclass
class DecoderConfig:
    m: int  # coarse point count
    d_z: int
    g: int = 2  # grid side; upsampling factor G = g*g
    d_fc: int = 64  # coarse feature width
    coarse_hidden: int = 256
    offset_hidden: int = 64
    fold_hidden: int = 128
    mask_hidden: int = 64
    coarse_offset_scale: float = 1.0
    fold_offset_scale: float = 0.5

    @property
    def grid_points(self) -> int:
        return self.g * self.g

    @property
    def n_points(self) -> int:
        return self.m * self.grid_points

    def __post_init__(self):
        if self.m < 1 or self.g < 1:
            raise ValueError(f"m and g must be >= 1, got m={self.m}, g={self.g}")


@dataclass
class Reconstruction:
    points_world: np.ndarray  # (N, 3)
    confidence: np.ndarray  # (N,)
    coarse_points_world: np.ndarray  # (M, 3)
    coarse_confidence: np.ndarray  # (M,)

    def __post_init__(self):
        for c in (self.confidence, self.coarse_confidence):
            if np.any(c < 0) or np.any(c > 1):
                raise ValueError("confidences must lie in [0, 1]")

    def pruned_points(self, threshold: float = 0.5) -> np.ndarray:
        return self.points_world[self.confidence >= threshold]


@dataclass
class DecodedPatch:
    """Training-side decoder outputs in the local frame (tensors)."""

    coarse_local: Tensor  # (B, M, 3)
    fine_local: Tensor  # (B, N, 3)
    mu_coarse: Tensor  # (B, M)
    mu_fine: Tensor  # (B, N)
    features: Tensor = field(repr=False, default=None)  # (B, M, d_fc)


def folding_grid(g: int) -> np.ndarray:
    """The fixed g x g lattice over [-0.25, 0.25]^2, row-major."""
    axis = np.linspace(-0.25, 0.25, g) if g > 1 else np.zeros(1)
    uu, vv = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([uu.ravel(), vv.ravel()], axis=1)


def sample_coarse_init(m: int, seed: int, dtype=np.float64) -> np.ndarray:
    """M i.i.d. points uniform in [-1, 1]^3 from a Philox stream."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    return counter_rng(seed).uniform(-1.0, 1.0, size=(m, 3)).astype(dtype)


def decode_seed(node_id: int, cell_index: int) -> int:
    """Decode-time init seed; derived from ids so it is never transmitted."""
    return mix64(node_id, cell_index)


class PatchDecoder(Module):
    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator, dtype=np.float32):
        c = cfg
        self.cfg = cfg
        self.coarse_net = MLP(c.d_z, c.coarse_hidden, c.m * c.d_fc, rng, dtype)
        self.offset_head = MLP(c.d_fc, c.offset_hidden, 3, rng, dtype)
        self.coarse_mask_head = MLP(c.d_fc, c.mask_hidden, 1, rng, dtype)
        self.fold_net = MLP(c.d_fc + 2, c.fold_hidden, 3, rng, dtype)
        self.fine_mask_head = MLP(c.d_fc + 1, c.mask_hidden, c.grid_points, rng, dtype)
        self.grid = folding_grid(c.g).astype(dtype)
        self.dtype = dtype

    def decode_coarse(self, z: Tensor, init: np.ndarray) -> tuple[Tensor, Tensor, Tensor]:
        """Coarse features depend on z only; init just anchors the offsets."""
        c = self.cfg
        b = z.shape[0]
        feats = ad.reshape(self.coarse_net(z), (b, c.m, c.d_fc))
        offsets = ad.mul(ad.tanh(self.offset_head(feats)), c.coarse_offset_scale)
        coarse = ad.add(offsets, Tensor(np.ascontiguousarray(init, dtype=self.dtype)))
        mu_c = ad.sigmoid(ad.reshape(self.coarse_mask_head(feats), (b, c.m)))
        return coarse, feats, mu_c

    def fold_upsample(self, coarse: Tensor, feats: Tensor) -> Tensor:
        """Expand each coarse point into G fine points; output is m-major,
        n-minor, so fine index m*G + n comes from coarse m and grid slot n."""
        c = self.cfg
        b = coarse.shape[0]
        G = c.grid_points
        tiled = ad.reshape(
            ad.broadcast_to(ad.reshape(feats, (b, c.m, 1, c.d_fc)), (b, c.m, G, c.d_fc)),
            (b, c.m * G, c.d_fc),
        )
        grid = np.broadcast_to(self.grid[None, None], (b, c.m, G, 2)).reshape(b, c.m * G, 2)
        folded = self.fold_net(ad.concat([tiled, Tensor(np.ascontiguousarray(grid))], axis=-1))
        offsets = ad.mul(ad.tanh(folded), c.fold_offset_scale)
        base = ad.reshape(
            ad.broadcast_to(ad.reshape(coarse, (b, c.m, 1, 3)), (b, c.m, G, 3)),
            (b, c.m * G, 3),
        )
        return ad.add(base, offsets)

    def predict_fine_mask(self, feats: Tensor, mu_coarse: Tensor) -> Tensor:
        """Fine slot m*G+n takes logit n of the head applied to coarse row m."""
        c = self.cfg
        b = feats.shape[0]
        mu_col = ad.reshape(mu_coarse, (b, c.m, 1))
        logits = self.fine_mask_head(ad.concat([feats, mu_col], axis=-1))  # (B, M, G)
        return ad.sigmoid(ad.reshape(logits, (b, c.m * c.grid_points)))

    def forward(self, z: Tensor, init: np.ndarray) -> DecodedPatch:
        coarse, feats, mu_c = self.decode_coarse(z, init)
        fine = self.fold_upsample(coarse, feats)
        mu_f = self.predict_fine_mask(feats, mu_c)
        return DecodedPatch(
            coarse_local=coarse, fine_local=fine, mu_coarse=mu_c, mu_fine=mu_f, features=feats
        )


def decode_patch(
    model: PatchDecoder,
    z_values: np.ndarray,
    obb: ObbAttributes,
    node_id: int,
    cell_index: int,
) -> Reconstruction:
    """Deterministic eval-mode decode of one latent into world points."""
    cfg = model.cfg
    init = sample_coarse_init(cfg.m, decode_seed(node_id, cell_index), dtype=model.dtype)
    z = Tensor(np.asarray(z_values, dtype=model.dtype).reshape(1, -1))
    out = model.forward(z, init[None, :, :])
    return Reconstruction(
        points_world=denormalize_patch(out.fine_local.data[0], obb),
        confidence=np.clip(out.mu_fine.data[0].astype(np.float64), 0.0, 1.0),
        coarse_points_world=denormalize_patch(out.coarse_local.data[0], obb),
        coarse_confidence=np.clip(out.mu_coarse.data[0].astype(np.float64), 0.0, 1.0),
    )

"""Training objective: fine/coarse Chamfer, voxel density regularization,
confidence-mask BCE, and the decaying weight schedule.

Every term has two routes: a float route for plain arrays (used by metrics
and oracles, kd-tree accelerated where it pays off) and a Tensor route that
participates in the autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .autodiff import Tensor

BCE_CLAMP = 1e-7


@dataclass
class LossWeights:
    lambda1: float = 0.5  # coarse Chamfer
    lambda2: float = 10.0  # density
    lambda3: float = 1.0  # fine mask BCE
    lambda4: float = 0.5  # coarse mask BCE
    decay: float = 0.98
    epoch: int = 0

    def __post_init__(self):
        for lam in (self.lambda1, self.lambda2, self.lambda3, self.lambda4):
            if lam < 0:
                raise ValueError("loss weights must be non-negative")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")


def schedule_lambdas(
    epoch: int, initial: LossWeights | None = None
) -> LossWeights:
    """Exponential decay of all auxiliary weights: lambda_i * decay**epoch."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    base = initial or LossWeights()
    f = base.decay**epoch
    return LossWeights(
        lambda1=base.lambda1 * f,
        lambda2=base.lambda2 * f,
        lambda3=base.lambda3 * f,
        lambda4=base.lambda4 * f,
        decay=base.decay,
        epoch=epoch,
    )


def chamfer(src, trg):
    """Symmetric mean squared nearest-neighbor distance.

    Array inputs return a float (kd-tree accelerated); Tensor inputs return
    a scalar Tensor differentiable through the fixed nearest assignment.
    """
    if isinstance(src, Tensor) or isinstance(trg, Tensor):
        return _chamfer_tensor(_as_t(src), _as_t(trg))
    src = np.asarray(src, dtype=np.float64)
    trg = np.asarray(trg, dtype=np.float64)
    if len(src) == 0 or len(trg) == 0:
        raise ValueError("chamfer requires non-empty point sets")
    d_src = cKDTree(trg).query(src)[0]
    d_trg = cKDTree(src).query(trg)[0]
    return float(np.mean(d_trg**2) / 2.0 + np.mean(d_src**2) / 2.0)


def _as_t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _pairwise_sqdist(a: Tensor, b: Tensor) -> Tensor:
    """(n, m) squared distances from direct differences (exact at zero)."""
    diff = ad.sub(ad.reshape(a, (a.shape[0], 1, 3)), ad.reshape(b, (1, b.shape[0], 3)))
    return ad.tsum(ad.square(diff), axis=-1)


def _chamfer_tensor(src: Tensor, trg: Tensor) -> Tensor:
    if src.shape[0] == 0 or trg.shape[0] == 0:
        raise ValueError("chamfer requires non-empty point sets")
    d = _pairwise_sqdist(src, trg)
    d_src = ad.tmean(ad.tmin(d, axis=1))  # src -> trg
    d_trg = ad.tmean(ad.tmin(d, axis=0))  # trg -> src
    return ad.mul(ad.add(d_src, d_trg), 0.5)


def soft_occupancy(points: Tensor, dims: tuple[int, int, int]) -> Tensor:
    """Normalized trilinear occupancy of points in [-1, 1]^3, flattened.

    Each point spreads unit mass over the 8 surrounding cell centers
    (coordinates clamped into the grid), so the grid always sums to 1 and
    the binning stays differentiable in the point coordinates.
    """
    dims = tuple(int(d) for d in dims)
    n = points.shape[0]
    if n == 0:
        raise ValueError("soft_occupancy requires a non-empty point set")
    d = np.asarray(dims, dtype=np.float64)
    x = points.data.astype(np.float64)
    u = (x + 1.0) * d / 2.0 - 0.5  # continuous cell-center coordinates
    inside = (u > 0.0) & (u < d - 1.0)  # clamp zone has zero gradient
    u = np.clip(u, 0.0, d - 1.0)
    i0 = np.minimum(np.floor(u).astype(np.int64), np.asarray(dims) - 2)
    i0 = np.maximum(i0, 0)
    f = u - i0  # in [0, 1]
    v = int(np.prod(dims))
    strides = np.array([dims[1] * dims[2], dims[2], 1], dtype=np.int64)

    grid = np.zeros(v)
    corner_cache = []
    for corner in range(8):
        bits = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
        w_axis = np.where(bits[None, :] == 1, f, 1.0 - f)  # (n, 3)
        weight = w_axis.prod(axis=1)
        flat = ((i0 + bits[None, :]) * strides[None, :]).sum(axis=1)
        np.add.at(grid, flat, weight)
        corner_cache.append((bits, w_axis, flat))
    grid /= n

    def backward(g):
        gx = np.zeros_like(x)
        scale = d / 2.0 / n  # du/dx times normalization
        for bits, w_axis, flat in corner_cache:
            g_cell = g[flat]  # (n,)
            for axis in range(3):
                others = [a for a in range(3) if a != axis]
                dw = (1.0 if bits[axis] == 1 else -1.0) * w_axis[:, others].prod(axis=1)
                gx[:, axis] += g_cell * dw * scale[axis] * inside[:, axis]
        return (gx.astype(points.dtype, copy=False),)

    return Tensor(grid.astype(points.dtype), parents=(points,), backward_fn=backward)


def density_loss(src, trg, grid_dims=(8, 8, 8)):
    """MSE between normalized soft occupancy grids over [-1, 1]^3."""
    if isinstance(src, Tensor) or isinstance(trg, Tensor):
        o_src = soft_occupancy(_as_t(src), grid_dims)
        o_trg = soft_occupancy(_as_t(trg), grid_dims)
        return ad.tmean(ad.square(ad.sub(o_trg, o_src)))
    o_src = soft_occupancy(Tensor(np.asarray(src, dtype=np.float64)), grid_dims).data
    o_trg = soft_occupancy(Tensor(np.asarray(trg, dtype=np.float64)), grid_dims).data
    return float(np.mean((o_trg - o_src) ** 2))


def mask_bce(mu_true, mu_hat):
    """Mean binary cross-entropy; predictions clamped to [1e-7, 1 - 1e-7]."""
    target = np.asarray(mu_true, dtype=np.float64).reshape(-1)
    if isinstance(mu_hat, Tensor):
        if target.shape[0] != mu_hat.data.reshape(-1).shape[0]:
            raise ValueError(
                f"mask length mismatch: {target.shape[0]} vs {mu_hat.data.size}"
            )
        mu = ad.clip(ad.reshape(mu_hat, (-1,)), BCE_CLAMP, 1.0 - BCE_CLAMP)
        t = Tensor(target.astype(mu_hat.dtype))
        pos = ad.mul(t, ad.log(mu))
        neg = ad.mul(ad.sub(Tensor(np.asarray(1.0, dtype=mu_hat.dtype)), t), ad.log(ad.sub(Tensor(np.asarray(1.0, dtype=mu_hat.dtype)), mu)))
        return ad.mul(ad.tmean(ad.add(pos, neg)), -1.0)
    pred = np.clip(np.asarray(mu_hat, dtype=np.float64).reshape(-1), BCE_CLAMP, 1.0 - BCE_CLAMP)
    if target.shape != pred.shape:
        raise ValueError(f"mask length mismatch: {target.shape} vs {pred.shape}")
    return float(-np.mean(target * np.log(pred) + (1.0 - target) * np.log(1.0 - pred)))


def coarse_mask_target(n_valid: int, m: int, grid_points: int) -> np.ndarray:
    """Prefix downsampling of the fine mask: ceil(n_valid / G) coarse slots."""
    k = min(m, -(-n_valid // grid_points))
    target = np.zeros(m, dtype=bool)
    target[:k] = True
    return target


def total_loss(
    gt_local: np.ndarray,
    fine_mask_true: np.ndarray,
    decoded,
    weights: LossWeights,
    batch_index: int = 0,
    density_dims=(8, 8, 8),
) -> tuple[Tensor, dict]:
    """Weighted sum of the five terms for one patch of a decoded batch.

    gt_local holds only the valid ground-truth points; predictions use all
    fixed-size slots. Returns the scalar plus per-term floats for logging.
    """
    b = batch_index
    fine = _row(decoded.fine_local, b)
    coarse = _row(decoded.coarse_local, b)
    mu_f = _row(decoded.mu_fine, b)
    mu_c = _row(decoded.mu_coarse, b)
    gt = np.asarray(gt_local, dtype=np.float64)
    if len(gt) == 0:
        raise ValueError("total_loss requires at least one valid ground-truth point")

    m = mu_c.shape[0]
    grid_points = mu_f.shape[0] // m
    coarse_true = coarse_mask_target(len(gt), m, grid_points)

    fine_cd = chamfer(Tensor(gt.astype(fine.dtype)), fine)
    coarse_cd = chamfer(Tensor(gt.astype(coarse.dtype)), coarse)
    density = density_loss(Tensor(gt.astype(fine.dtype)), fine, density_dims)
    bce_fine = mask_bce(fine_mask_true, mu_f)
    bce_coarse = mask_bce(coarse_true, mu_c)

    total = fine_cd
    total = ad.add(total, ad.mul(coarse_cd, weights.lambda1))
    total = ad.add(total, ad.mul(density, weights.lambda2))
    total = ad.add(total, ad.mul(bce_fine, weights.lambda3))
    total = ad.add(total, ad.mul(bce_coarse, weights.lambda4))
    parts = {
        "fine_cd": fine_cd.item(),
        "coarse_cd": coarse_cd.item(),
        "density": density.item(),
        "mask_fine": bce_fine.item(),
        "mask_coarse": bce_coarse.item(),
        "total": total.item(),
    }
    return total, parts


def _row(t: Tensor, b: int) -> Tensor:
    """Select one batch row of a (B, ...) tensor, keeping gradients flowing."""
    out_data = t.data[b]

    def backward(g):
        gt_full = np.zeros_like(t.data)
        gt_full[b] = g
        return (gt_full,)

    return Tensor(out_data, parents=(t,), backward_fn=backward)

"""Per-node patch extraction, normalization and fixed-size packing.

A patch is the unit of encoding: the points of one graph node (or one
terrain cell), mapped into the box-local [-1, 1]^3 frame, subsampled or
zero-padded to the layer's fixed size with a prefix validity mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import LabeledPointCloud, ObbAttributes
from .graph import GraphNode, SceneGraph, TERRAIN

# Per-layer point caps; all multiples of the upsampling factor 4.
N_LAYER = {1: 720, 2: 1720, 3: 320, 4: 1536}

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix64(*values: int) -> int:
    """Deterministic 64-bit mix of any number of integers."""
    h = 0
    for v in values:
        h = _splitmix64(h ^ (int(v) & _MASK64))
    return h


def counter_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) keyed directly by ``seed``."""
    return np.random.Generator(np.random.Philox(key=seed & _MASK64))


@dataclass
class Patch:
    """Fixed-size masked point set in the box-local frame.

    Valid points occupy rows 0..n_valid-1 (prefix layout); padded rows are
    all-zero. cell_index is 0 for non-terrain nodes.
    """

    node_id: int
    cell_index: int
    class_id: int
    layer: int
    points_local: np.ndarray  # (N_layer, 3)
    valid_mask: np.ndarray  # (N_layer,) bool
    n_valid: int
    obb: ObbAttributes

    def __post_init__(self):
        if self.n_valid != int(self.valid_mask.sum()):
            raise ValueError("n_valid must equal the mask's true count")
        if not np.all(self.valid_mask[: self.n_valid]):
            raise ValueError("valid entries must form a prefix")
        if self.n_valid < len(self.valid_mask) and np.any(self.valid_mask[self.n_valid :]):
            raise ValueError("mask must be false past the prefix")
        if np.any(np.abs(self.points_local[: self.n_valid]) > 1.0 + 1e-6):
            raise ValueError("valid local coordinates must be within [-1, 1]")


def extract_patch(cloud: LabeledPointCloud, node: GraphNode, cell: int = 0) -> np.ndarray:
    """World points of one node (or one terrain cell) by box membership.

    A point belongs if it carries the node's class and lies inside the
    (cell) box inflated by 1e-6 m. Input order is preserved.
    """
    if node.layer == TERRAIN:
        if node.terrain_cells is None or not (0 <= cell < len(node.terrain_cells)):
            raise IndexError(f"cell {cell} invalid for terrain node {node.id}")
        obb = node.terrain_cells[cell].obb
    else:
        if cell != 0:
            raise IndexError(f"cell must be 0 for non-terrain node {node.id}")
        obb = node.obb
    mask = (cloud.labels == node.class_id) & obb.contains(cloud.points)
    return cloud.points[mask]


def normalize_patch(points_world: np.ndarray, obb: ObbAttributes) -> np.ndarray:
    """World -> box-local frame scaled so the box spans [-1, 1]^3."""
    if np.any(obb.extent < 1e-6):
        raise ValueError(f"extent too small to normalize: {obb.extent}")
    return 2.0 * obb.to_local(points_world) / obb.extent


def denormalize_patch(points_local: np.ndarray, obb: ObbAttributes) -> np.ndarray:
    """Inverse of normalize_patch."""
    return obb.to_world(np.asarray(points_local, dtype=np.float64) * obb.extent / 2.0)


def fix_size(points_local: np.ndarray, n_layer: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Subsample or zero-pad to exactly ``n_layer`` rows with a prefix mask.

    Oversized inputs are sampled uniformly without replacement by a Philox
    stream keyed by ``seed`` (kept in ascending input order); undersized
    inputs are kept whole, so the result is then seed-independent.
    """
    if n_layer < 1:
        raise ValueError(f"n_layer must be >= 1, got {n_layer}")
    pts = np.asarray(points_local, dtype=np.float64).reshape(-1, 3)
    count = len(pts)
    out = np.zeros((n_layer, 3))
    mask = np.zeros(n_layer, dtype=bool)
    if count > n_layer:
        keep = counter_rng(seed).choice(count, size=n_layer, replace=False, shuffle=False)
        out[:] = pts[np.sort(keep)]
        mask[:] = True
    else:
        out[:count] = pts
        mask[:count] = True
    return out, mask


def patch_seed(frame_id: int, node_id: int, cell_index: int) -> int:
    """Subsampling seed convention: reproducible without storing index lists."""
    return mix64(frame_id, node_id, cell_index)


def patches_from_graph(
    cloud: LabeledPointCloud,
    graph: SceneGraph,
    n_layer: dict[int, int] | None = None,
) -> list[Patch]:
    """Build the canonical patch set from a graph's territory assignment.

    Terrain nodes yield one patch per cell; other nodes one patch each.
    Ordered by (node id, cell index), matching the bitstream layout.
    """
    n_layer = n_layer or N_LAYER
    patches = []
    for node in sorted(graph.nodes, key=lambda n: n.id):
        if node.layer == TERRAIN:
            territories = [
                (ci, c.obb, c.point_indices) for ci, c in enumerate(node.terrain_cells or [])
            ]
        else:
            territories = [(0, node.obb, node.point_indices)]
        for cell_index, obb, indices in territories:
            if len(indices) == 0:
                continue
            local = normalize_patch(cloud.points[indices], obb)
            cap = n_layer[node.layer]
            pts, mask = fix_size(local, cap, patch_seed(graph.frame_id, node.id, cell_index))
            patches.append(
                Patch(
                    node_id=node.id,
                    cell_index=cell_index,
                    class_id=node.class_id,
                    layer=node.layer,
                    points_local=pts,
                    valid_mask=mask,
                    n_valid=int(mask.sum()),
                    obb=obb,
                )
            )
    return patches

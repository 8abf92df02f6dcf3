"""Reconstruction quality metrics and the consolidated report.

D_CD is squared-distance based (m^2); D_perp projects each nearest-neighbor
residual onto the matched point's surface normal and is reported in meters;
IoU compares occupancy sets at a fixed 20 x 20 x 10 cm resolution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .bitstream import compression_rate, compute_bpp
from .geometry import LabeledPointCloud, estimate_normals, voxelize_occupancy
from .losses import chamfer

IOU_RESOLUTION = (0.2, 0.2, 0.1)
NORMAL_RADIUS = 0.5

REPORT_FIELDS = (
    "d_cd",
    "d_perp",
    "iou",
    "bpp",
    "compression_rate",
    "n_original",
    "n_reconstructed",
)


@dataclass
class MetricsReport:
    d_cd: float  # m^2
    d_perp: float  # m
    iou: float
    bpp: float
    compression_rate: float
    n_original: int
    n_reconstructed: int

    def to_csv_row(self) -> str:
        return ",".join(str(getattr(self, f)) for f in REPORT_FIELDS)

    @staticmethod
    def csv_header() -> str:
        return ",".join(REPORT_FIELDS)

    def to_json(self) -> str:
        return json.dumps({f: getattr(self, f) for f in REPORT_FIELDS})

    def to_text(self) -> str:
        return (
            f"chamfer distance   : {self.d_cd:.6f} m^2\n"
            f"plane distance     : {self.d_perp:.6f} m\n"
            f"occupancy IoU      : {self.iou:.4f}\n"
            f"bits per point     : {self.bpp:.4f}\n"
            f"compression rate   : {100.0 * self.compression_rate:.2f} %\n"
            f"points (orig/recon): {self.n_original}/{self.n_reconstructed}"
        )


def d_perp(src, trg, trg_normals, src_normals) -> float:
    """Symmetric point-to-plane distance.

    Matching is nearest-by-Euclidean; each direction projects the residual
    onto the normal of the matched point (the point in the set being
    matched against).
    """
    src = np.asarray(src, dtype=np.float64)
    trg = np.asarray(trg, dtype=np.float64)
    trg_normals = np.asarray(trg_normals, dtype=np.float64)
    src_normals = np.asarray(src_normals, dtype=np.float64)
    if len(trg_normals) != len(trg) or len(src_normals) != len(src):
        raise ValueError("each point set needs exactly one normal per point")
    if len(src) == 0 or len(trg) == 0:
        raise ValueError("d_perp requires non-empty point sets")

    def directed(a, b, b_normals):
        idx = cKDTree(b).query(a)[1]
        residual = a - b[idx]
        return float(np.mean(np.abs(np.einsum("ij,ij->i", b_normals[idx], residual))))

    return directed(trg, src, src_normals) / 2.0 + directed(src, trg, trg_normals) / 2.0


def occupancy_iou(src, trg, resolution=IOU_RESOLUTION) -> float:
    """Set IoU of occupancy grids on a shared floor-aligned origin."""
    src = np.asarray(src, dtype=np.float64)
    trg = np.asarray(trg, dtype=np.float64)
    if len(src) == 0 and len(trg) == 0:
        return 1.0
    if len(src) == 0 or len(trg) == 0:
        return 0.0
    res = np.asarray(resolution, dtype=np.float64)
    joint_min = np.minimum(src.min(axis=0), trg.min(axis=0))
    origin = np.floor(joint_min / res) * res
    cells_src = voxelize_occupancy(
        LabeledPointCloud(src, np.zeros(len(src), dtype=np.int64)), res, origin
    ).cells
    cells_trg = voxelize_occupancy(
        LabeledPointCloud(trg, np.zeros(len(trg), dtype=np.int64)), res, origin
    ).cells
    union = cells_src | cells_trg
    if not union:
        return 1.0
    return len(cells_src & cells_trg) / len(union)


def evaluate(
    original: LabeledPointCloud,
    reconstructed: LabeledPointCloud,
    stream: bytes,
) -> MetricsReport:
    """Full report for a reconstruction (confidence-pruned at 0.5) against
    its source cloud and the stream that produced it."""
    if len(reconstructed) == 0:
        raise ValueError("cannot evaluate an empty reconstruction")
    if len(original) == 0:
        raise ValueError("cannot evaluate against an empty original")
    src = original.points
    trg = reconstructed.points
    normals_src = estimate_normals(original, NORMAL_RADIUS)
    normals_trg = estimate_normals(reconstructed, NORMAL_RADIUS)
    bpp = compute_bpp(stream, len(original))
    return MetricsReport(
        d_cd=chamfer(src, trg),
        d_perp=d_perp(src, trg, normals_trg, normals_src),
        iou=occupancy_iou(src, trg),
        bpp=bpp,
        compression_rate=compression_rate(bpp),
        n_original=len(original),
        n_reconstructed=len(reconstructed),
    )

"""Point cloud containers and geometric kernels.

Everything here is pure and deterministic: same inputs, same bytes out.
Coordinates are meters in the world frame unless stated otherwise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ._validation import as_points, as_vector3

LPC_MAGIC = b"LPC1"

# Bits per point of the raw .lpc layout (3 x f32 + u16 label).
RAW_BITS_PER_POINT = 112


@dataclass
class LabeledPointCloud:
    """World-frame points with one class label per point."""

    points: np.ndarray  # (n, 3) float64
    labels: np.ndarray  # (n,) int64

    def __post_init__(self):
        self.points = as_points(self.points)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.labels) != len(self.points):
            raise ValueError(
                f"labels length {len(self.labels)} != points length {len(self.points)}"
            )
        if np.any(self.labels < 0):
            raise ValueError("labels must be non-negative")

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class ObbAttributes:
    """Oriented bounding box: center, full extents and rotation.

    Columns of ``rotation`` are the box axes in the world frame;
    det(rotation) = +1 and rotation.T @ rotation = I within 1e-6.
    """

    center: np.ndarray  # (3,)
    extent: np.ndarray  # (3,), all > 0
    rotation: np.ndarray  # (3, 3)

    def __post_init__(self):
        self.center = as_vector3(self.center, "center")
        self.extent = as_vector3(self.extent, "extent")
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        if self.rotation.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {self.rotation.shape}")
        if np.any(self.extent <= 0):
            raise ValueError(f"extent components must be > 0, got {self.extent}")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"rotation not orthonormal (max error {err:.2e})")
        det = np.linalg.det(self.rotation)
        if abs(det - 1.0) > 1e-6:
            raise ValueError(f"rotation must have det +1, got {det}")

    def to_local(self, points: np.ndarray) -> np.ndarray:
        """World -> box frame (no scaling)."""
        return (np.asarray(points, dtype=np.float64) - self.center) @ self.rotation

    def to_world(self, local: np.ndarray) -> np.ndarray:
        return np.asarray(local, dtype=np.float64) @ self.rotation.T + self.center

    def contains(self, points: np.ndarray, slack: float = 1e-6) -> np.ndarray:
        """Boolean membership mask, box inflated by ``slack`` meters per face."""
        local = self.to_local(points)
        return np.all(np.abs(local) <= self.extent / 2.0 + slack, axis=1)


@dataclass
class OccupancyGrid:
    """Sparse voxel occupancy anchored at ``origin``."""

    origin: np.ndarray  # (3,)
    resolution: np.ndarray  # (3,), meters per cell
    dims: tuple[int, int, int]
    cells: set = field(default_factory=set)  # set of (i, j, k) int triples

    def __post_init__(self):
        self.origin = as_vector3(self.origin, "origin")
        self.resolution = as_vector3(self.resolution, "resolution")
        for c in self.cells:
            if any(c[a] < 0 or c[a] >= self.dims[a] for a in range(3)):
                raise ValueError(f"cell {c} outside dims {self.dims}")


def crop_radius(cloud: LabeledPointCloud, radius: float) -> LabeledPointCloud:
    """Keep points within ``radius`` meters (3D Euclidean) of the origin."""
    if radius <= 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    dist = np.sqrt((cloud.points**2).sum(axis=1))
    mask = dist <= radius
    return LabeledPointCloud(cloud.points[mask], cloud.labels[mask])


def fit_obb(points: np.ndarray, min_extent: float = 0.01) -> ObbAttributes:
    """PCA box fit with a deterministic axis-sign convention.

    Axes are covariance eigenvectors sorted by descending eigenvalue. Each
    axis is flipped so its largest-magnitude component is positive, then the
    last axis is flipped if needed to force det = +1. Extents are floored at
    ``min_extent`` per axis so degenerate clusters still yield a usable box.
    """
    pts = as_points(points)
    if len(pts) < 1:
        raise ValueError("fit_obb requires at least 1 point")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(pts)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(-eigvals, kind="stable")  # stable: ties keep eigh's order
    rot = eigvecs[:, order]
    for a in range(3):
        k = int(np.argmax(np.abs(rot[:, a])))
        if rot[k, a] < 0:
            rot[:, a] = -rot[:, a]
    if np.linalg.det(rot) < 0:
        rot[:, 2] = -rot[:, 2]
    local = pts @ rot
    lo = local.min(axis=0)
    hi = local.max(axis=0)
    center = rot @ ((lo + hi) / 2.0)
    extent = np.maximum(hi - lo, min_extent)
    return ObbAttributes(center=center, extent=extent, rotation=rot)


def estimate_normals(cloud: LabeledPointCloud, radius: float) -> np.ndarray:
    """Per-point unit normals from neighborhood covariance.

    The normal is the smallest-eigenvalue eigenvector of the covariance of
    all points within ``radius`` (the point itself included), oriented so
    z >= 0 (ties: y >= 0, then x >= 0). Points with fewer than 3 neighbors
    fall back to (0, 0, 1).
    """
    if radius <= 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    pts = cloud.points
    n = len(pts)
    if n == 0:
        return np.zeros((0, 3))

    tree = cKDTree(pts)
    pairs = tree.query_pairs(r=radius, output_type="ndarray")
    # Accumulate first and second moments per neighborhood, self included.
    counts = np.ones(n)
    s1 = pts.copy()
    s2 = np.einsum("ni,nj->nij", pts, pts)
    if len(pairs):
        i, j = pairs[:, 0], pairs[:, 1]
        np.add.at(counts, i, 1.0)
        np.add.at(counts, j, 1.0)
        np.add.at(s1, i, pts[j])
        np.add.at(s1, j, pts[i])
        outer = np.einsum("ni,nj->nij", pts, pts)
        np.add.at(s2, i, outer[j])
        np.add.at(s2, j, outer[i])
    mean = s1 / counts[:, None]
    cov = s2 / counts[:, None, None] - np.einsum("ni,nj->nij", mean, mean)
    cov = (cov + cov.transpose(0, 2, 1)) / 2.0  # exact symmetry for eigh

    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]  # smallest eigenvalue
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)

    # Deterministic hemisphere: z >= 0, ties broken on y then x.
    flip = (normals[:, 2] < 0) | (
        (normals[:, 2] == 0) & ((normals[:, 1] < 0) | ((normals[:, 1] == 0) & (normals[:, 0] < 0)))
    )
    normals[flip] = -normals[flip]
    normals[counts < 3] = (0.0, 0.0, 1.0)
    return normals


def nearest_neighbor(query, cloud) -> tuple[int, float]:
    """Index and squared distance of the nearest cloud point.

    Matches an exhaustive scan exactly, ties broken by smallest index. A
    kd-tree accelerates large clouds; the brute-force result is the contract.
    """
    q = as_vector3(query, "query")
    pts = as_points(cloud)
    if len(pts) == 0:
        raise ValueError("nearest_neighbor requires a non-empty cloud")
    if len(pts) <= 512:
        d2 = ((pts - q) ** 2).sum(axis=1)
        idx = int(np.argmin(d2))
        return idx, float(d2[idx])
    tree = cKDTree(pts)
    dist, idx = tree.query(q)
    # Resolve ties to the smallest index among exact-minimum candidates.
    candidates = tree.query_ball_point(q, r=dist * (1.0 + 1e-9) + 1e-300)
    cand = np.asarray(sorted(candidates), dtype=np.int64)
    d2 = ((pts[cand] - q) ** 2).sum(axis=1)
    best = int(np.argmin(d2))
    return int(cand[best]), float(d2[best])


def voxelize_occupancy(cloud: LabeledPointCloud, resolution, origin) -> OccupancyGrid:
    """Occupied-cell set at the given resolution. Origin must not exceed any
    point coordinate (cell indices are non-negative)."""
    res = as_vector3(resolution, "resolution")
    orig = as_vector3(origin, "origin")
    if np.any(res <= 0):
        raise ValueError(f"resolution components must be > 0, got {res}")
    if len(cloud) == 0:
        return OccupancyGrid(orig, res, (0, 0, 0), set())
    idx = np.floor((cloud.points - orig) / res).astype(np.int64)
    if idx.min() < 0:
        raise ValueError("origin must be <= the minimum point coordinate per axis")
    dims = tuple(int(d) for d in idx.max(axis=0) + 1)
    cells = set(map(tuple, idx.tolist()))
    return OccupancyGrid(orig, res, dims, cells)


def rotation_to_quaternion(rot: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0 from a rotation matrix."""
    m = np.asarray(rot, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    else:
        a = int(np.argmax(np.diag(m)))
        if a == 0:
            s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            q = np.array(
                [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
            )
        elif a == 1:
            s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            q = np.array(
                [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            q = np.array(
                [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
            )
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    elif q[0] == 0:  # 180-degree rotations: disambiguate the double cover
        for k in (1, 2, 3):
            if q[k] != 0:
                if q[k] < 0:
                    q = -q
                break
    return q


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


_LPC_DTYPE = np.dtype([("xyz", "<f4", 3), ("label", "<u2")])


def save_lpc(cloud: LabeledPointCloud, path) -> None:
    """Write the binary .lpc format: magic, u64 count, then f32 xyz + u16 label."""
    rec = np.empty(len(cloud), dtype=_LPC_DTYPE)
    rec["xyz"] = cloud.points.astype(np.float32)
    labels = cloud.labels
    if np.any(labels > 0xFFFF):
        raise ValueError("labels exceed u16 range")
    rec["label"] = labels.astype(np.uint16)
    with open(path, "wb") as f:
        f.write(LPC_MAGIC)
        f.write(struct.pack("<Q", len(cloud)))
        f.write(rec.tobytes())


def load_lpc(path) -> LabeledPointCloud:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != LPC_MAGIC:
        raise ValueError(f"{path}: bad .lpc magic {data[:4]!r}")
    (count,) = struct.unpack_from("<Q", data, 4)
    body = data[12:]
    if len(body) != count * _LPC_DTYPE.itemsize:
        raise ValueError(f"{path}: truncated .lpc payload")
    rec = np.frombuffer(body, dtype=_LPC_DTYPE)
    return LabeledPointCloud(rec["xyz"].astype(np.float64), rec["label"].astype(np.int64))


def save_xyzl(cloud: LabeledPointCloud, path) -> None:
    """Plain ASCII fixture format: one "x y z label" line per point."""
    with open(path, "w") as f:
        for (x, y, z), lab in zip(cloud.points, cloud.labels):
            f.write(f"{x:.6f} {y:.6f} {z:.6f} {int(lab)}\n")


def load_xyzl(path) -> LabeledPointCloud:
    rows = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if rows.size == 0:
        return LabeledPointCloud(np.zeros((0, 3)), np.zeros(0, dtype=np.int64))
    if rows.shape[1] != 4:
        raise ValueError(f"{path}: expected 4 columns (x y z label), got {rows.shape[1]}")
    return LabeledPointCloud(rows[:, :3], rows[:, 3].astype(np.int64))


def load_cloud(path) -> LabeledPointCloud:
    """Load .lpc by magic sniffing, falling back to the ASCII fixture format."""
    with open(path, "rb") as f:
        head = f.read(4)
    if head == LPC_MAGIC:
        return load_lpc(path)
    return load_xyzl(path)

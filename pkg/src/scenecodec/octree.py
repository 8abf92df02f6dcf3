"""Lossy octree geometry codec used as the rate-distortion baseline.

The root cube sits on an absolute power-of-two lattice: its edge is the
next power of two covering the tight bounds and its origin is snapped to
the leaf grid, which keeps encode(decode(encode(P))) byte-stable. Child
masks are stored breadth-first, one u8 per occupied internal node, with
child bit b = (x_high) | (y_high << 1) | (z_high << 2). Labels are dropped:
this is a geometry-only baseline without entropy coding.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .geometry import LabeledPointCloud

OCT_MAGIC = b"OCT1"


class OctreeFormatError(Exception):
    pass


def _root_lattice(points: np.ndarray, depth: int) -> tuple[np.ndarray, float, float]:
    """(origin, edge, leaf) of the absolute power-of-two root cube."""
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    tight = float((hi - lo).max())
    if tight <= 0:
        tight = 1e-3
    edge = math.ldexp(1.0, math.frexp(tight)[1])  # next power of two >= tight
    if edge / 2.0 >= tight:  # frexp overshoots exact powers of two
        edge /= 2.0
    if edge < tight:
        edge *= 2.0
    # Round through f32 now so the stored header defines the lattice.
    edge = float(np.float32(edge))
    leaf = edge / (1 << depth)
    origin = np.floor(lo / leaf) * leaf
    origin = origin.astype(np.float32).astype(np.float64)
    return origin, edge, leaf


def octree_encode(cloud: LabeledPointCloud, depth: int) -> bytes:
    if not 1 <= depth <= 16:
        raise ValueError(f"depth must be in 1..16, got {depth}")
    if len(cloud) == 0:
        raise ValueError("cannot octree-encode an empty cloud")
    origin, edge, leaf = _root_lattice(cloud.points, depth)
    n_cells = 1 << depth
    idx = np.floor((cloud.points - origin) / leaf).astype(np.int64)
    idx = np.clip(idx, 0, n_cells - 1)

    # Occupied node sets per level (leaf-index prefixes).
    occupied = [set(map(tuple, (idx >> (depth - level)).tolist())) for level in range(depth + 1)]

    masks = bytearray()
    current = [(0, 0, 0)]  # occupied nodes at the current level, BFS order
    for level in range(depth):
        nxt = []
        for x, y, z in current:
            mask = 0
            for b in range(8):
                child = (2 * x + (b & 1), 2 * y + ((b >> 1) & 1), 2 * z + ((b >> 2) & 1))
                if child in occupied[level + 1]:
                    mask |= 1 << b
                    nxt.append(child)
            masks.append(mask)
        current = nxt

    out = bytearray()
    out += OCT_MAGIC
    out += struct.pack("<B", depth)
    out += np.asarray(origin, dtype="<f4").tobytes()
    out += struct.pack("<f", edge)
    out += bytes(masks)
    return bytes(out)


def octree_decode(stream: bytes) -> LabeledPointCloud:
    """Centers of occupied leaf cells, breadth-first order, label 0."""
    if len(stream) < 4 or stream[:4] != OCT_MAGIC:
        raise OctreeFormatError(f"bad magic {stream[:4]!r}")
    if len(stream) < 4 + 1 + 12 + 4 + 1:
        raise OctreeFormatError("stream too short")
    depth = stream[4]
    if not 1 <= depth <= 16:
        raise OctreeFormatError(f"depth {depth} out of range")
    origin = np.frombuffer(stream, dtype="<f4", count=3, offset=5).astype(np.float64)
    (edge,) = struct.unpack_from("<f", stream, 17)
    masks = stream[21:]
    leaf = float(edge) / (1 << depth)

    pos = 0
    current = np.zeros((1, 3), dtype=np.int64)
    for _ in range(depth):
        nxt = []
        for node in current:
            if pos >= len(masks):
                raise OctreeFormatError("truncated mask stream")
            mask = masks[pos]
            pos += 1
            if mask == 0:
                raise OctreeFormatError("empty child mask in an occupied node")
            for b in range(8):
                if mask & (1 << b):
                    child = (node << 1) + np.array([b & 1, (b >> 1) & 1, (b >> 2) & 1])
                    nxt.append(child)
        current = np.asarray(nxt, dtype=np.int64)
    if pos != len(masks):
        raise OctreeFormatError(f"{len(masks) - pos} trailing bytes after the last level")
    centers = origin + (current + 0.5) * leaf
    return LabeledPointCloud(centers, np.zeros(len(centers), dtype=np.int64))


def save_oct(stream: bytes, path) -> None:
    with open(path, "wb") as f:
        f.write(stream)


def load_oct(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()

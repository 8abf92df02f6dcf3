"""Bit-exact serialization of the encoded scene and bpp accounting.

The .sgpc stream is the transmitted payload: graph metadata (ids, layers,
classes, boxes as quaternions) plus per-patch latents, closed by a CRC-32.
All multi-byte fields are little-endian. Float fields live as float32 in
the in-memory EncodedScene so round-trips are exact by construction.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .geometry import RAW_BITS_PER_POINT

SGPC_MAGIC = b"SGPC"
SGPC_VERSION = 1
FLAG_F16 = 0x01
NO_PARENT = 0xFFFFFFFF  # terrain nodes hang off the frame, not a terrain node

HEADER_BYTES = 4 + 1 + 1 + 4 + 4 + 8 + 4
CRC_BYTES = 4
NODE_FIXED_BYTES = 4 + 1 + 2 + 4 + 40 + 2
CELL_OBB_BYTES = 40


class FormatError(Exception):
    """Malformed .sgpc stream."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


@dataclass
class EncodedCell:
    n_valid: int
    latent: np.ndarray  # (d_z,) float32
    obb: np.ndarray | None = None  # (10,) float32 c/e/quat; terrain cells only

    def __post_init__(self):
        self.latent = np.asarray(self.latent, dtype=np.float32).reshape(-1)
        if self.obb is not None:
            self.obb = np.asarray(self.obb, dtype=np.float32).reshape(-1)
            if self.obb.shape != (10,):
                raise ValueError(f"cell obb must have 10 floats, got {self.obb.shape}")


@dataclass
class EncodedNode:
    node_id: int
    layer: int
    class_id: int
    parent_id: int  # terrain node id, or NO_PARENT for terrain nodes
    obb: np.ndarray  # (10,) float32: center(3) extent(3) quaternion(4, w>=0)
    cells: list[EncodedCell] = field(default_factory=list)

    def __post_init__(self):
        self.obb = np.asarray(self.obb, dtype=np.float32).reshape(-1)
        if self.obb.shape != (10,):
            raise ValueError(f"node obb must have 10 floats, got {self.obb.shape}")


@dataclass
class EncodedScene:
    frame_id: int
    latent_dims: tuple[int, int, int, int]  # d_z per layer 1..4
    original_point_count: int
    nodes: list[EncodedNode] = field(default_factory=list)

    def validate(self) -> None:
        for node in self.nodes:
            d_z = self.latent_dims[node.layer - 1]
            is_terrain = node.layer == 1
            if not is_terrain and len(node.cells) != 1:
                raise ValueError(f"non-terrain node {node.node_id} must carry exactly one cell")
            for cell in node.cells:
                if len(cell.latent) != d_z:
                    raise ValueError(
                        f"node {node.node_id}: latent length {len(cell.latent)} != layer d_z {d_z}"
                    )
                if is_terrain != (cell.obb is not None):
                    raise ValueError(
                        f"node {node.node_id}: cell obb present iff the node is terrain"
                    )
            quat = node.obb[6:10].astype(np.float64)
            if abs(np.linalg.norm(quat) - 1.0) > 1e-4:
                raise ValueError(f"node {node.node_id}: quaternion not normalized")


def pack_obb_fields(center, extent, quaternion) -> np.ndarray:
    """Float32 wire representation of a box: center, extent, quaternion."""
    return np.concatenate(
        [
            np.asarray(center, dtype=np.float32),
            np.asarray(extent, dtype=np.float32),
            np.asarray(quaternion, dtype=np.float32),
        ]
    )


def serialize(scene: EncodedScene, precision: str = "f32") -> bytes:
    if precision not in ("f32", "f16"):
        raise ValueError(f"precision must be 'f32' or 'f16', got {precision!r}")
    scene.validate()
    latent_dtype = "<f2" if precision == "f16" else "<f4"
    out = bytearray()
    out += SGPC_MAGIC
    out += struct.pack("<BB", SGPC_VERSION, FLAG_F16 if precision == "f16" else 0)
    out += struct.pack("<II", scene.frame_id, scene.original_point_count)
    out += struct.pack("<4H", *scene.latent_dims)
    out += struct.pack("<I", len(scene.nodes))
    for node in scene.nodes:
        out += struct.pack("<IBHI", node.node_id, node.layer, node.class_id, node.parent_id)
        out += node.obb.astype("<f4").tobytes()
        out += struct.pack("<H", len(node.cells))
        for cell in node.cells:
            if cell.obb is not None:
                out += cell.obb.astype("<f4").tobytes()
            out += struct.pack("<H", cell.n_valid)
            out += cell.latent.astype(latent_dtype).tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise TruncatedError(f"stream truncated at byte {self.pos}")
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def take_floats(self, count: int, dtype: str) -> np.ndarray:
        size = count * np.dtype(dtype).itemsize
        if self.pos + size > len(self.data):
            raise TruncatedError(f"stream truncated at byte {self.pos}")
        arr = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.pos).copy()
        self.pos += size
        return arr


def deserialize(data: bytes) -> EncodedScene:
    if len(data) < HEADER_BYTES + CRC_BYTES:
        raise TruncatedError(f"stream too short: {len(data)} bytes")
    if data[:4] != SGPC_MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}")
    (declared,) = struct.unpack_from("<I", data, len(data) - 4)
    actual = zlib.crc32(data[:-4])
    if declared != actual:
        raise ChecksumError(f"checksum mismatch: stored {declared:#010x}, computed {actual:#010x}")

    r = _Reader(data[:-4])
    r.pos = 4
    version, flags = r.take("<BB")
    if version != SGPC_VERSION:
        raise VersionError(f"unsupported version {version}")
    f16 = bool(flags & FLAG_F16)
    frame_id, point_count = r.take("<II")
    latent_dims = r.take("<4H")
    (node_count,) = r.take("<I")
    nodes = []
    for _ in range(node_count):
        node_id, layer, class_id, parent_id = r.take("<IBHI")
        if not 1 <= layer <= 4:
            raise FormatError(f"node {node_id}: layer {layer} out of range")
        obb = r.take_floats(10, "<f4")
        (cell_count,) = r.take("<H")
        cells = []
        for _ in range(cell_count):
            cell_obb = r.take_floats(10, "<f4") if layer == 1 else None
            (n_valid,) = r.take("<H")
            if f16:
                latent = r.take_floats(latent_dims[layer - 1], "<f2").astype(np.float32)
            else:
                latent = r.take_floats(latent_dims[layer - 1], "<f4")
            cells.append(EncodedCell(n_valid=n_valid, latent=latent, obb=cell_obb))
        nodes.append(
            EncodedNode(
                node_id=node_id,
                layer=layer,
                class_id=class_id,
                parent_id=parent_id,
                obb=obb,
                cells=cells,
            )
        )
    if r.pos != len(data) - 4:
        raise FormatError(f"{len(data) - 4 - r.pos} unparsed bytes before checksum")
    return EncodedScene(
        frame_id=frame_id,
        latent_dims=tuple(latent_dims),
        original_point_count=point_count,
        nodes=nodes,
    )


def compute_bpp(stream: bytes, original_point_count: int) -> float:
    if original_point_count <= 0:
        raise ValueError(f"original point count must be > 0, got {original_point_count}")
    return 8.0 * len(stream) / original_point_count


def compression_rate(bpp: float) -> float:
    """Fraction saved versus the raw 112-bit-per-point .lpc baseline."""
    return 1.0 - bpp / RAW_BITS_PER_POINT

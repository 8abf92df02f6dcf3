"""Layered semantic scene graph construction.

Nodes are per-class Euclidean clusters with PCA boxes, organized into four
layers (terrain, infrastructure, objects, agents). Every layer >= 2 node is
attached to its horizontally nearest terrain node; points that survive no
cluster fall into a reserved "other" terrain node so the graph partitions
the whole cloud.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import (
    LabeledPointCloud,
    ObbAttributes,
    fit_obb,
    rotation_to_quaternion,
)

TERRAIN, INFRASTRUCTURE, OBJECTS, AGENTS = 1, 2, 3, 4


@dataclass
class SemanticClassTable:
    """Maps class ids to (name, layer). ``other_id`` is the reserved terrain
    class that absorbs unclustered and unknown points."""

    entries: dict[int, tuple[str, int]]
    other_id: int

    def __post_init__(self):
        if not self.entries:
            raise ValueError("class table must not be empty")
        for cid, (name, layer) in self.entries.items():
            if layer not in (1, 2, 3, 4):
                raise ValueError(f"class {cid} ({name}): layer must be 1..4, got {layer}")
        if self.other_id not in self.entries:
            raise ValueError(f"other_id {self.other_id} not in table")
        if self.entries[self.other_id][1] != TERRAIN:
            raise ValueError("the reserved 'other' class must be a terrain class")

    def layer_of(self, class_id: int) -> int:
        return self.entries[class_id][1]

    def class_ids(self) -> list[int]:
        return sorted(self.entries)

    def index_of(self, class_id: int) -> int:
        """Dense embedding index of a class id (sorted-id order)."""
        return self.class_ids().index(class_id)

    def save(self, path) -> None:
        with open(path, "w") as f:
            for cid in sorted(self.entries):
                name, layer = self.entries[cid]
                f.write(f"class {cid} {layer} {name}\n")
            f.write(f"other {self.other_id}\n")

    @classmethod
    def load(cls, path) -> "SemanticClassTable":
        entries: dict[int, tuple[str, int]] = {}
        other_id = None
        with open(path) as f:
            for line in f:
                parts = line.split()
                if not parts or parts[0].startswith("#"):
                    continue
                if parts[0] == "class":
                    entries[int(parts[1])] = (parts[3], int(parts[2]))
                elif parts[0] == "other":
                    other_id = int(parts[1])
                else:
                    raise ValueError(f"{path}: unknown directive {parts[0]!r}")
        if other_id is None:
            raise ValueError(f"{path}: missing 'other <id>' line")
        return cls(entries=entries, other_id=other_id)


def default_class_table() -> SemanticClassTable:
    """The bundled 8-class table used by the synthetic scenes."""
    return SemanticClassTable(
        entries={
            0: ("road", TERRAIN),
            1: ("sidewalk", TERRAIN),
            2: ("other-terrain", TERRAIN),
            3: ("building", INFRASTRUCTURE),
            4: ("fence", INFRASTRUCTURE),
            5: ("pole", OBJECTS),
            6: ("trunk", OBJECTS),
            7: ("vehicle", AGENTS),
        },
        other_id=2,
    )


@dataclass
class TerrainCell:
    """One tile of a terrain node's footprint."""

    obb: ObbAttributes
    point_indices: np.ndarray  # indices into the source cloud


@dataclass
class GraphNode:
    id: int
    layer: int
    class_id: int
    obb: ObbAttributes
    terrain_cells: list[TerrainCell] | None = None  # present iff layer == 1
    point_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        if (self.terrain_cells is not None) != (self.layer == TERRAIN):
            raise ValueError("terrain_cells present iff layer == 1")


@dataclass
class SceneGraph:
    frame_id: int
    nodes: list[GraphNode]
    edges: list[tuple[int, int]]  # (layer >= 2 node id, terrain node id)

    def node_by_id(self, node_id: int) -> GraphNode:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise KeyError(f"no node with id {node_id}")

    def terrain_parent(self, node_id: int) -> int | None:
        for a, b in self.edges:
            if a == node_id:
                return b
        return None


@dataclass
class GraphParams:
    """Clustering and tiling knobs. Cell sizes are the Euclidean linking
    distances per layer; terrain_cell is the footprint tile edge."""

    cell_by_layer: dict[int, float] = field(
        default_factory=lambda: {TERRAIN: 2.0, INFRASTRUCTURE: 1.0, OBJECTS: 0.5, AGENTS: 0.5}
    )
    min_points: int = 10
    terrain_cell: float = 8.0


def cluster_class(
    cloud: LabeledPointCloud, class_id: int, cell: float, min_points: int
) -> list[np.ndarray]:
    """Euclidean connected components of one class's points.

    Two points link if within ``cell`` meters. Clusters below ``min_points``
    are dropped. Returned as arrays of cloud indices, ordered by descending
    size then ascending minimal index; indices ascend within each cluster.
    """
    if cell <= 0:
        raise ValueError(f"cell must be > 0, got {cell}")
    if min_points < 1:
        raise ValueError(f"min_points must be >= 1, got {min_points}")
    idx = np.flatnonzero(cloud.labels == class_id)
    if len(idx) == 0:
        return []
    pts = cloud.points[idx]
    pairs = cKDTree(pts).query_pairs(r=cell, output_type="ndarray")
    n = len(idx)
    if len(pairs):
        adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    else:
        adj = coo_matrix((n, n))
    _, comp = connected_components(adj, directed=False)
    clusters = []
    for c in range(comp.max() + 1):
        members = idx[comp == c]
        if len(members) >= min_points:
            clusters.append(np.sort(members))
    clusters.sort(key=lambda m: (-len(m), int(m.min())))
    return clusters


def subdivide_terrain(
    points: np.ndarray, point_indices: np.ndarray, obb: ObbAttributes, cell_size: float
) -> list[TerrainCell]:
    """Tile a terrain box's footprint into cell_size x cell_size columns.

    Tiling happens in the box's own rotated frame over its first two axes
    (full height along the third). Each non-empty column becomes a cell with
    a tight box over its points; the cells partition ``point_indices``.
    """
    if cell_size <= 0:
        raise ValueError(f"cell_size must be > 0, got {cell_size}")
    point_indices = np.asarray(point_indices, dtype=np.int64)
    if len(point_indices) == 0:
        return []
    local = obb.to_local(points[point_indices])
    half = obb.extent[:2] / 2.0
    ncols = np.maximum(1, np.ceil(obb.extent[:2] / cell_size)).astype(np.int64)
    col = np.floor((local[:, :2] + half) / cell_size).astype(np.int64)
    col = np.clip(col, 0, ncols - 1)
    cells = []
    for cu, cv in sorted(set(map(tuple, col.tolist()))):
        mask = (col[:, 0] == cu) & (col[:, 1] == cv)
        members = point_indices[mask]
        cells.append(TerrainCell(obb=fit_obb(points[members]), point_indices=members))
    return cells


def connect_edges(nodes: list[GraphNode]) -> list[tuple[int, int]]:
    """Attach every layer >= 2 node to the terrain node with the nearest box
    center in the horizontal plane; ties go to the lower terrain id."""
    terrain = [n for n in nodes if n.layer == TERRAIN]
    if not terrain:
        raise ValueError("at least one terrain node is required")
    terrain.sort(key=lambda n: n.id)
    centers = np.array([n.obb.center[:2] for n in terrain])
    edges = []
    for node in nodes:
        if node.layer == TERRAIN:
            continue
        d2 = ((centers - node.obb.center[:2]) ** 2).sum(axis=1)
        edges.append((node.id, terrain[int(np.argmin(d2))].id))
    return edges


def build_scene_graph(
    cloud: LabeledPointCloud,
    table: SemanticClassTable,
    params: GraphParams | None = None,
    frame_id: int = 0,
) -> SceneGraph:
    """Full graph construction: per-class clustering, box fitting, terrain
    tiling, the catch-all "other" node, edges, and deterministic ids."""
    if len(cloud) == 0:
        raise ValueError("cannot build a scene graph from an empty cloud")
    params = params or GraphParams()

    assigned = np.zeros(len(cloud), dtype=bool)
    # (layer, class_id, cluster rank) -> member indices; fixed id order.
    keyed: list[tuple[tuple[int, int, int], np.ndarray]] = []
    for class_id in table.class_ids():
        if class_id == table.other_id:
            continue  # the "other" node is built from leftovers below
        layer = table.layer_of(class_id)
        cell = params.cell_by_layer[layer]
        for rank, members in enumerate(cluster_class(cloud, class_id, cell, params.min_points)):
            keyed.append(((layer, class_id, rank), members))
            assigned[members] = True
    keyed.sort(key=lambda kv: kv[0])

    nodes: list[GraphNode] = []
    next_id = 0

    def make_node(layer, class_id, members):
        nonlocal next_id
        obb = fit_obb(cloud.points[members]) if len(members) else _unit_obb()
        cells = None
        if layer == TERRAIN:
            cells = subdivide_terrain(cloud.points, members, obb, params.terrain_cell)
        nodes.append(
            GraphNode(
                id=next_id,
                layer=layer,
                class_id=class_id,
                obb=obb,
                terrain_cells=cells,
                point_indices=np.asarray(members, dtype=np.int64),
            )
        )
        next_id += 1

    # Terrain-layer clusters first, then the reserved "other" node, so the
    # "other" node id is deterministic: right after the true terrain nodes.
    n_terrain_clusters = 0
    for (layer, class_id, _), members in keyed:
        if layer == TERRAIN:
            make_node(layer, class_id, members)
            n_terrain_clusters += 1
    leftovers = np.flatnonzero(~assigned)
    if len(leftovers) or n_terrain_clusters == 0:
        # The catch-all exists when it holds points, or as the mandatory
        # terrain anchor when no terrain cluster survived.
        make_node(TERRAIN, table.other_id, leftovers)
    for (layer, class_id, _), members in keyed:
        if layer != TERRAIN:
            make_node(layer, class_id, members)

    return SceneGraph(frame_id=frame_id, nodes=nodes, edges=connect_edges(nodes))


def _unit_obb() -> ObbAttributes:
    return ObbAttributes(np.zeros(3), np.full(3, 0.01), np.eye(3))


def dump_graph(graph: SceneGraph) -> str:
    """Line-oriented debug dump: NODE and EDGE records sorted by id."""
    lines = []
    for node in sorted(graph.nodes, key=lambda n: n.id):
        c, e = node.obb.center, node.obb.extent
        q = rotation_to_quaternion(node.obb.rotation)
        lines.append(
            f"NODE {node.id} {node.layer} {node.class_id} "
            f"{c[0]:.6f} {c[1]:.6f} {c[2]:.6f} "
            f"{e[0]:.6f} {e[1]:.6f} {e[2]:.6f} "
            f"{q[0]:.6f} {q[1]:.6f} {q[2]:.6f} {q[3]:.6f}"
        )
    for a, b in sorted(graph.edges):
        lines.append(f"EDGE {a} {b}")
    return "\n".join(lines) + "\n"

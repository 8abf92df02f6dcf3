"""scenecodec: layered scene-graph point cloud codec with learned latents."""

from .bitstream import EncodedCell, EncodedNode, EncodedScene, compute_bpp, deserialize, serialize
from .codec import SceneGraphCodec, decode_scene, encode_scene
from .config import RunConfig, load_config
from .decoder import DecoderConfig, Reconstruction
from .encoder import EncoderConfig, Latent
from .geometry import (
    LabeledPointCloud,
    ObbAttributes,
    OccupancyGrid,
    crop_radius,
    estimate_normals,
    fit_obb,
    load_cloud,
    load_lpc,
    nearest_neighbor,
    save_lpc,
    voxelize_occupancy,
)
from .graph import (
    GraphNode,
    GraphParams,
    SceneGraph,
    SemanticClassTable,
    build_scene_graph,
    default_class_table,
)
from .losses import LossWeights, chamfer, density_loss, mask_bce, schedule_lambdas
from .metrics import MetricsReport, d_perp, evaluate, occupancy_iou
from .octree import octree_decode, octree_encode
from .patching import Patch, extract_patch, fix_size, normalize_patch, patches_from_graph
from .synth import generate_scene

__version__ = "0.1.0"

__all__ = [
    "EncodedCell",
    "EncodedNode",
    "EncodedScene",
    "compute_bpp",
    "deserialize",
    "serialize",
    "SceneGraphCodec",
    "decode_scene",
    "encode_scene",
    "RunConfig",
    "load_config",
    "DecoderConfig",
    "Reconstruction",
    "EncoderConfig",
    "Latent",
    "LabeledPointCloud",
    "ObbAttributes",
    "OccupancyGrid",
    "crop_radius",
    "estimate_normals",
    "fit_obb",
    "load_cloud",
    "load_lpc",
    "nearest_neighbor",
    "save_lpc",
    "voxelize_occupancy",
    "GraphNode",
    "GraphParams",
    "SceneGraph",
    "SemanticClassTable",
    "build_scene_graph",
    "default_class_table",
    "LossWeights",
    "chamfer",
    "density_loss",
    "mask_bce",
    "schedule_lambdas",
    "MetricsReport",
    "d_perp",
    "evaluate",
    "occupancy_iou",
    "octree_decode",
    "octree_encode",
    "Patch",
    "extract_patch",
    "fix_size",
    "normalize_patch",
    "patches_from_graph",
    "generate_scene",
]

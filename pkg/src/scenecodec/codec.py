"""End-to-end codec: per-layer autoencoders, training, scene encode/decode,
and the sklearn-style SceneGraphCodec estimator that ties it all together.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from ._validation import check_fitted
from .bitstream import (
    NO_PARENT,
    EncodedCell,
    EncodedNode,
    EncodedScene,
    deserialize,
    pack_obb_fields,
    serialize,
)
from .config import RunConfig
from .decoder import DecoderConfig, PatchDecoder, decode_patch, decode_seed, sample_coarse_init
from .encoder import EncoderConfig, Latent, PatchEncoder, encode_patch
from .geometry import (
    LabeledPointCloud,
    ObbAttributes,
    load_cloud,
    quaternion_to_rotation,
    rotation_to_quaternion,
)
from .graph import SceneGraph, SemanticClassTable, TERRAIN, build_scene_graph, default_class_table
from .losses import LossWeights, schedule_lambdas, total_loss
from .optim import (
    CheckpointMismatch,
    ParameterStore,
    adam_step,
    clip_gradients,
    restore_into,
    save_checkpoint,
)
from .patching import Patch, counter_rng, mix64, patches_from_graph


@dataclass
class LayerModel:
    encoder: PatchEncoder
    decoder: PatchDecoder
    store: ParameterStore


def build_layer_models(
    config: RunConfig, table: SemanticClassTable, dtype=np.float32
) -> dict[int, LayerModel]:
    """Four independent autoencoders, one per layer, deterministically
    initialized from the config seed."""
    models: dict[int, LayerModel] = {}
    n_classes = len(table.entries)
    for layer in (1, 2, 3, 4):
        rng = counter_rng(mix64(config.seed, 0x1817, layer))
        enc_cfg = EncoderConfig(
            d_z=config.latent_dims[layer],
            n_classes=n_classes,
            d_f=config.d_f,
            d_p=config.d_p,
            d_s=config.d_s,
            blocks=config.blocks,
            heads=config.heads,
            dropout=config.dropout,
        )
        dec_cfg = DecoderConfig(
            m=config.coarse_points(layer),
            d_z=config.latent_dims[layer],
            d_fc=config.d_fc,
        )
        encoder = PatchEncoder(enc_cfg, rng, dtype)
        decoder = PatchDecoder(dec_cfg, rng, dtype)
        store = ParameterStore()
        store.register(encoder.named_parameters(f"layer{layer}.enc"))
        store.register(decoder.named_parameters(f"layer{layer}.dec"))
        models[layer] = LayerModel(encoder=encoder, decoder=decoder, store=store)
    return models


def merged_store(models: dict[int, LayerModel]) -> ParameterStore:
    merged = ParameterStore()
    for layer in sorted(models):
        merged.register(models[layer].store.params)
        merged.m.update(models[layer].store.m)
        merged.v.update(models[layer].store.v)
        merged.step.update(models[layer].store.step)
    return merged


def _batch_arrays(patches: list[Patch], table: SemanticClassTable):
    pts = np.stack([p.points_local for p in patches])
    mask = np.stack([p.valid_mask for p in patches])
    cls = np.array([table.index_of(p.class_id) for p in patches], dtype=np.int64)
    return pts, mask, cls


def train_models(
    config: RunConfig,
    clouds: list[LabeledPointCloud],
    table: SemanticClassTable,
    models: dict[int, LayerModel] | None = None,
    on_epoch_end=None,
    log_rows: list | None = None,
) -> dict[int, LayerModel]:
    """Seeded training of the four layer models on the clouds' patches.

    Logs one row per step: (epoch, step, fine_cd, coarse_cd, density,
    mask_fine, mask_coarse, total). on_epoch_end(epoch, models) runs after
    every epoch (checkpointing hook).
    """
    if not clouds:
        raise ValueError("training requires at least one scene")
    models = models or build_layer_models(config, table)

    by_layer: dict[int, list[Patch]] = {1: [], 2: [], 3: [], 4: []}
    for frame_id, cloud in enumerate(clouds):
        graph = build_scene_graph(cloud, table, config.graph, frame_id=frame_id)
        for patch in patches_from_graph(cloud, graph, config.n_points):
            by_layer[patch.layer].append(patch)

    base = LossWeights(*config.lambdas, decay=config.lambda_decay)
    global_step = 0
    for epoch in range(config.epochs):
        weights = schedule_lambdas(epoch, base)
        for layer in (1, 2, 3, 4):
            patches = by_layer[layer]
            if not patches:
                continue
            order = counter_rng(mix64(config.seed, 0xE90C, epoch, layer)).permutation(len(patches))
            for start in range(0, len(patches), config.batch_size):
                batch = [patches[i] for i in order[start : start + config.batch_size]]
                parts = train_step(
                    models[layer], batch, table, config, weights, global_step
                )
                if log_rows is not None:
                    log_rows.append({"epoch": epoch, "step": global_step, **parts})
                global_step += 1
        if on_epoch_end is not None:
            on_epoch_end(epoch, models)
    return models


def train_step(
    model: LayerModel,
    batch: list[Patch],
    table: SemanticClassTable,
    config: RunConfig,
    weights: LossWeights,
    global_step: int,
) -> dict:
    """One Adam step on a minibatch; returns mean per-term losses."""
    pts, mask, cls = _batch_arrays(batch, table)
    dropout_rng = counter_rng(mix64(config.seed, 0xD0, global_step))
    z = model.encoder.forward(pts, mask, cls, rng=dropout_rng if config.dropout > 0 else None)
    # Train against the same seeded init the decoder will reproduce from ids,
    # so the learned offsets correspond to the base coordinates used at decode.
    init = np.stack(
        [
            sample_coarse_init(
                model.decoder.cfg.m,
                decode_seed(patch.node_id, patch.cell_index),
                dtype=model.decoder.dtype,
            )
            for patch in batch
        ]
    )
    decoded = model.decoder.forward(z, init)

    total = None
    sums: dict[str, float] = {}
    grid = (config.density_grid,) * 3
    for i, patch in enumerate(batch):
        gt = patch.points_local[: patch.n_valid]
        loss_i, parts = total_loss(gt, patch.valid_mask, decoded, weights, i, grid)
        total = loss_i if total is None else ad.add(total, loss_i)
        for k, v in parts.items():
            sums[k] = sums.get(k, 0.0) + v
    total = ad.mul(total, 1.0 / len(batch))
    ad.backward(total)
    if config.clip_norm > 0:
        clip_gradients(model.store, config.clip_norm)
    adam_step(model.store, lr=config.lr, weight_decay=config.weight_decay)
    model.store.zero_grads()
    return {k: v / len(batch) for k, v in sums.items()}


def encode_scene(
    cloud: LabeledPointCloud,
    models: dict[int, LayerModel],
    table: SemanticClassTable,
    config: RunConfig,
    frame_id: int = 0,
    precision: str = "f32",
    graph: SceneGraph | None = None,
) -> bytes:
    """cloud -> graph -> patches -> latents -> .sgpc bytes."""
    if graph is None:
        graph = build_scene_graph(cloud, table, config.graph, frame_id=frame_id)
    patches = patches_from_graph(cloud, graph, config.n_points)

    def encode_one(patch: Patch) -> Latent:
        return encode_patch(models[patch.layer].encoder, patch, table.index_of(patch.class_id))

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            latents = list(pool.map(encode_one, patches))
    else:
        latents = [encode_one(p) for p in patches]

    by_node: dict[int, list[tuple[Patch, Latent]]] = {}
    for patch, latent in zip(patches, latents):
        by_node.setdefault(patch.node_id, []).append((patch, latent))

    parent_of = dict(graph.edges)
    nodes = []
    for node in sorted(graph.nodes, key=lambda n: n.id):
        cells = []
        for patch, latent in by_node.get(node.id, []):
            cell_obb = None
            if node.layer == TERRAIN:
                cobb = node.terrain_cells[patch.cell_index].obb
                cell_obb = pack_obb_fields(
                    cobb.center, cobb.extent, rotation_to_quaternion(cobb.rotation)
                )
            cells.append(
                EncodedCell(
                    n_valid=patch.n_valid,
                    latent=latent.values.astype(np.float32),
                    obb=cell_obb,
                )
            )
        if node.layer != TERRAIN and not cells:
            continue  # non-terrain nodes always cluster >= min_points, but stay safe
        nodes.append(
            EncodedNode(
                node_id=node.id,
                layer=node.layer,
                class_id=node.class_id,
                parent_id=parent_of.get(node.id, NO_PARENT),
                obb=pack_obb_fields(
                    node.obb.center, node.obb.extent, rotation_to_quaternion(node.obb.rotation)
                ),
                cells=cells,
            )
        )
    scene = EncodedScene(
        frame_id=graph.frame_id,
        latent_dims=tuple(config.latent_dims[layer] for layer in (1, 2, 3, 4)),
        original_point_count=len(cloud),
        nodes=nodes,
    )
    return serialize(scene, precision=precision)


def _obb_from_fields(fields: np.ndarray) -> ObbAttributes:
    center = fields[0:3].astype(np.float64)
    extent = np.maximum(fields[3:6].astype(np.float64), 1e-4)
    rotation = quaternion_to_rotation(fields[6:10].astype(np.float64))
    return ObbAttributes(center=center, extent=extent, rotation=rotation)


def decode_scene(
    stream: bytes | EncodedScene,
    models: dict[int, LayerModel],
    config: RunConfig,
    confidence_threshold: float = 0.5,
) -> LabeledPointCloud:
    """.sgpc bytes -> per-patch decode -> confidence pruning -> cloud."""
    scene = deserialize(stream) if isinstance(stream, (bytes, bytearray)) else stream
    expected = tuple(config.latent_dims[layer] for layer in (1, 2, 3, 4))
    if tuple(scene.latent_dims) != expected:
        raise CheckpointMismatch(
            f"stream latent dims {tuple(scene.latent_dims)} != model dims {expected}"
        )

    jobs = []
    for node in scene.nodes:
        for cell_index, cell in enumerate(node.cells):
            obb = _obb_from_fields(cell.obb if cell.obb is not None else node.obb)
            jobs.append((node, cell_index, cell, obb))

    def decode_one(job):
        node, cell_index, cell, obb = job
        recon = decode_patch(
            models[node.layer].decoder, cell.latent, obb, node.node_id, cell_index
        )
        pts = recon.pruned_points(confidence_threshold)
        return pts, np.full(len(pts), node.class_id, dtype=np.int64)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(decode_one, jobs))
    else:
        results = [decode_one(j) for j in jobs]

    if results:
        points = np.concatenate([r[0] for r in results])
        labels = np.concatenate([r[1] for r in results])
    else:
        points = np.zeros((0, 3))
        labels = np.zeros(0, dtype=np.int64)
    return LabeledPointCloud(points, labels)


def _as_cloud(x) -> LabeledPointCloud:
    if isinstance(x, LabeledPointCloud):
        return x
    if isinstance(x, (str, bytes)) or hasattr(x, "__fspath__"):
        return load_cloud(x)
    try:
        arr = np.asarray(x, dtype=np.float64)
    except (TypeError, ValueError):
        arr = None
    if arr is not None and arr.ndim == 2 and arr.shape[1] == 4:
        return LabeledPointCloud(arr[:, :3], arr[:, 3].astype(np.int64))
    raise TypeError(
        "expected a LabeledPointCloud, a path, or an (n, 4) array of x y z label rows"
    )


class SceneGraphCodec(BaseEstimator):
    """Scene codec with the scikit-learn estimator protocol.

    fit() trains the four layer autoencoders on labeled clouds,
    transform() compresses clouds to .sgpc byte streams, and
    inverse_transform() reconstructs clouds from streams. All parameters
    default to the release configuration; see RunConfig for meanings.
    """

    def __init__(
        self,
        latent_dims=None,
        n_points=None,
        d_f=128,
        d_p=64,
        d_s=32,
        heads=4,
        blocks=4,
        dropout=0.1,
        coarse_dim=64,
        epochs=150,
        batch_size=8,
        lr=5e-4,
        weight_decay=1e-6,
        lambdas=(0.5, 10.0, 1.0, 0.5),
        lambda_decay=0.98,
        density_grid=8,
        seed=0,
        threads=1,
        class_table=None,
        precision="f32",
    ):
        self.latent_dims = latent_dims
        self.n_points = n_points
        self.d_f = d_f
        self.d_p = d_p
        self.d_s = d_s
        self.heads = heads
        self.blocks = blocks
        self.dropout = dropout
        self.coarse_dim = coarse_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.lambdas = lambdas
        self.lambda_decay = lambda_decay
        self.density_grid = density_grid
        self.seed = seed
        self.threads = threads
        self.class_table = class_table
        self.precision = precision

    def _make_config(self) -> RunConfig:
        cfg = RunConfig(
            seed=self.seed,
            threads=self.threads,
            d_f=self.d_f,
            d_p=self.d_p,
            d_s=self.d_s,
            heads=self.heads,
            blocks=self.blocks,
            dropout=self.dropout,
            d_fc=self.coarse_dim,
            lr=self.lr,
            weight_decay=self.weight_decay,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lambdas=tuple(self.lambdas),
            lambda_decay=self.lambda_decay,
            density_grid=self.density_grid,
        )
        if self.latent_dims is not None:
            cfg.latent_dims = dict(self.latent_dims)
        if self.n_points is not None:
            cfg.n_points = dict(self.n_points)
        cfg.validate(release=False)
        return cfg

    def _resolve_table(self) -> SemanticClassTable:
        if self.class_table is None:
            return default_class_table()
        if isinstance(self.class_table, SemanticClassTable):
            return self.class_table
        return SemanticClassTable.load(self.class_table)

    def fit(self, X, y=None):
        """Train on a sequence of labeled clouds (objects, paths, or (n, 4)
        arrays). Returns self."""
        clouds = [_as_cloud(x) for x in X]
        if not clouds:
            raise ValueError("fit requires at least one cloud")
        self.config_ = self._make_config()
        self.table_ = self._resolve_table()
        self.history_ = []
        self.models_ = train_models(
            self.config_, clouds, self.table_, log_rows=self.history_
        )
        return self

    def transform(self, X) -> list[bytes]:
        check_fitted(self, "models_")
        return [
            encode_scene(
                _as_cloud(x),
                self.models_,
                self.table_,
                self.config_,
                frame_id=i,
                precision=self.precision,
            )
            for i, x in enumerate(X)
        ]

    def inverse_transform(self, streams) -> list[LabeledPointCloud]:
        check_fitted(self, "models_")
        return [decode_scene(s, self.models_, self.config_) for s in streams]

    def save_checkpoint(self, path, include_adam: bool = False) -> None:
        check_fitted(self, "models_")
        save_checkpoint(merged_store(self.models_), path, include_adam=include_adam)

    def load_checkpoint(self, path):
        """Bind weights from an SGWT file; marks the codec as fitted."""
        self.config_ = self._make_config()
        self.table_ = self._resolve_table()
        self.models_ = build_layer_models(self.config_, self.table_)
        restore_into(merged_store(self.models_), path)
        self.history_ = []
        return self

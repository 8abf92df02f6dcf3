"""Run configuration: model dims, per-layer sizes, training and loss knobs.

Config files are line-oriented ``key=value`` with ``#`` comments; keys are
dotted (``train.lr``, ``layer3.d_z``, ``graph.min_points``). Anything not
set keeps the defaults below.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .encoder import RELEASE_LATENT_DIMS
from .graph import GraphParams
from .patching import N_LAYER

UPSAMPLING = 4  # folding grid 2x2

DEFAULT_LATENT_DIMS = {1: 16, 2: 32, 3: 16, 4: 32}


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    class_table: str | None = None  # path; None uses the bundled table
    # shared model dims
    d_f: int = 128
    d_p: int = 64
    d_s: int = 32
    heads: int = 4
    blocks: int = 4
    dropout: float = 0.1
    d_fc: int = 64
    # per-layer sizes
    n_points: dict[int, int] = field(default_factory=lambda: dict(N_LAYER))
    latent_dims: dict[int, int] = field(default_factory=lambda: dict(DEFAULT_LATENT_DIMS))
    # training
    lr: float = 5e-4
    weight_decay: float = 1e-6
    epochs: int = 150
    batch_size: int = 8
    clip_norm: float = 1.0  # global gradient-norm clip; 0 disables
    # loss schedule
    lambdas: tuple[float, float, float, float] = (0.5, 10.0, 1.0, 0.5)
    lambda_decay: float = 0.98
    density_grid: int = 8
    # graph construction
    graph: GraphParams = field(default_factory=GraphParams)

    def validate(self, release: bool = True) -> None:
        for layer in (1, 2, 3, 4):
            n = self.n_points[layer]
            if n % UPSAMPLING != 0:
                raise ValueError(f"layer {layer}: n_points {n} must be a multiple of {UPSAMPLING}")
            if release and self.latent_dims[layer] not in RELEASE_LATENT_DIMS:
                raise ValueError(
                    f"layer {layer}: d_z {self.latent_dims[layer]} not in release set "
                    f"{RELEASE_LATENT_DIMS}"
                )
        if self.d_f % self.heads != 0:
            raise ValueError(f"d_f {self.d_f} must be divisible by heads {self.heads}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def coarse_points(self, layer: int) -> int:
        return self.n_points[layer] // UPSAMPLING

    def with_latent_dims(self, d_z: int) -> "RunConfig":
        return replace(self, latent_dims={layer: d_z for layer in (1, 2, 3, 4)})


_INT_KEYS = {
    "seed",
    "threads",
    "model.d_f",
    "model.d_p",
    "model.d_s",
    "model.heads",
    "model.blocks",
    "model.d_fc",
    "train.epochs",
    "train.batch_size",
    "loss.grid",
    "graph.min_points",
}
_FLOAT_KEYS = {
    "model.dropout",
    "train.lr",
    "train.weight_decay",
    "train.clip_norm",
    "loss.lambda1",
    "loss.lambda2",
    "loss.lambda3",
    "loss.lambda4",
    "loss.decay",
    "graph.cell1",
    "graph.cell2",
    "graph.cell3",
    "graph.cell4",
    "graph.terrain_cell",
}


def parse_config_lines(lines) -> dict[str, str]:
    values: dict[str, str] = {}
    for i, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {i}: expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    with open(path) as f:
        values = parse_config_lines(f)
    return apply_config_values(cfg, values)


def apply_config_values(cfg: RunConfig, values: dict[str, str]) -> RunConfig:
    cfg = replace(cfg, n_points=dict(cfg.n_points), latent_dims=dict(cfg.latent_dims))
    cfg.graph = GraphParams(
        cell_by_layer=dict(cfg.graph.cell_by_layer),
        min_points=cfg.graph.min_points,
        terrain_cell=cfg.graph.terrain_cell,
    )
    simple = {
        "seed": "seed",
        "threads": "threads",
        "model.d_f": "d_f",
        "model.d_p": "d_p",
        "model.d_s": "d_s",
        "model.heads": "heads",
        "model.blocks": "blocks",
        "model.dropout": "dropout",
        "model.d_fc": "d_fc",
        "train.lr": "lr",
        "train.weight_decay": "weight_decay",
        "train.clip_norm": "clip_norm",
        "train.epochs": "epochs",
        "train.batch_size": "batch_size",
        "loss.decay": "lambda_decay",
        "loss.grid": "density_grid",
    }
    lambdas = list(cfg.lambdas)
    for key, value in values.items():
        if key in simple:
            typ = int if key in _INT_KEYS else float
            setattr(cfg, simple[key], typ(value))
        elif key == "table":
            cfg.class_table = value
        elif key.startswith("loss.lambda"):
            lambdas[int(key[-1]) - 1] = float(value)
        elif key.startswith("layer") and key.endswith(".n_points"):
            cfg.n_points[int(key[5])] = int(value)
        elif key.startswith("layer") and key.endswith(".d_z"):
            cfg.latent_dims[int(key[5])] = int(value)
        elif key.startswith("graph.cell"):
            cfg.graph.cell_by_layer[int(key[-1])] = float(value)
        elif key == "graph.min_points":
            cfg.graph.min_points = int(value)
        elif key == "graph.terrain_cell":
            cfg.graph.terrain_cell = float(value)
        else:
            raise ValueError(f"unknown config key {key!r}")
    cfg.lambdas = tuple(lambdas)
    return cfg

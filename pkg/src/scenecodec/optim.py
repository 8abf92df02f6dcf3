"""Named parameter store, Adam with decoupled weight decay, checkpoints."""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import Tensor

CKPT_MAGIC = b"SGWT"
CKPT_VERSION = 1


class CheckpointMismatch(Exception):
    """Checkpoint does not match the model being restored."""


class ParameterStore:
    """Ordered name -> Tensor map plus per-parameter Adam state."""

    def __init__(self, params: dict[str, Tensor] | None = None):
        self.params: dict[str, Tensor] = dict(params or {})
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step: dict[str, int] = {}

    def register(self, params: dict[str, Tensor]) -> None:
        for name, p in params.items():
            if name in self.params:
                raise ValueError(f"duplicate parameter name {name!r}")
            self.params[name] = p

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_bytes(self) -> int:
        return sum(p.data.nbytes for p in self.params.values())


def clip_gradients(store: ParameterStore, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm.
    Returns the pre-clip norm."""
    total = 0.0
    for name, p in store.params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
        total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in store.params.values():
            p.grad = p.grad * scale
    return norm


def adam_step(
    store: ParameterStore,
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update with bias correction; weight decay is decoupled and
    applied multiplicatively before the moment update."""
    for name, p in store.params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
        g = p.grad.astype(p.dtype, copy=False)
        if name not in store.m:
            store.m[name] = np.zeros_like(p.data)
            store.v[name] = np.zeros_like(p.data)
            store.step[name] = 0
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        t = store.step[name] + 1
        store.m[name] = beta1 * store.m[name] + (1.0 - beta1) * g
        store.v[name] = beta2 * store.v[name] + (1.0 - beta2) * (g * g)
        m_hat = store.m[name] / (1.0 - beta1**t)
        v_hat = store.v[name] / (1.0 - beta2**t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)
        store.step[name] = t


def save_checkpoint(store: ParameterStore, path, include_adam: bool = False) -> None:
    """SGWT layout: magic, version u8, count u32, then per parameter
    name (u16 + utf-8), rank u8, dims u32 each, f32 data. A trailing flag
    byte marks optional Adam state (u64 step + f32 m + f32 v per param)."""
    out = bytearray()
    out += CKPT_MAGIC
    out += struct.pack("<B", CKPT_VERSION)
    out += struct.pack("<I", len(store.params))
    for name, p in store.params.items():
        encoded = name.encode("utf-8")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<B", p.data.ndim)
        for d in p.data.shape:
            out += struct.pack("<I", d)
        out += np.ascontiguousarray(p.data, dtype="<f4").tobytes()
    have_adam = include_adam and all(name in store.m for name in store.params)
    out += struct.pack("<B", 1 if have_adam else 0)
    if have_adam:
        for name, p in store.params.items():
            out += struct.pack("<Q", store.step[name])
            out += np.ascontiguousarray(store.m[name], dtype="<f4").tobytes()
            out += np.ascontiguousarray(store.v[name], dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(bytes(out))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict | None]:
    """Read an SGWT file into (params, adam_state-or-None)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CKPT_MAGIC:
        raise CheckpointMismatch(f"{path}: bad checkpoint magic {data[:4]!r}")
    pos = 4
    (version,) = struct.unpack_from("<B", data, pos)
    pos += 1
    if version != CKPT_VERSION:
        raise CheckpointMismatch(f"{path}: unsupported checkpoint version {version}")
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<B", data, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", data, pos) if rank else ()
        pos += 4 * rank
        size = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(dims)
        pos += 4 * size
        params[name] = arr.copy()
    adam = None
    if pos < len(data):
        (flag,) = struct.unpack_from("<B", data, pos)
        pos += 1
        if flag == 1:
            adam = {"step": {}, "m": {}, "v": {}}
            for name, arr in params.items():
                (step,) = struct.unpack_from("<Q", data, pos)
                pos += 8
                adam["step"][name] = step
                for key in ("m", "v"):
                    vals = np.frombuffer(data, dtype="<f4", count=arr.size, offset=pos)
                    adam[key][name] = vals.reshape(arr.shape).copy()
                    pos += 4 * arr.size
    return params, adam


def restore_into(store: ParameterStore, path) -> None:
    """Load a checkpoint into an existing store, in place.

    Name or shape mismatches raise CheckpointMismatch (the model was built
    with a different configuration than the checkpoint).
    """
    params, adam = load_checkpoint(path)
    if set(params) != set(store.params):
        missing = sorted(set(store.params) - set(params))
        extra = sorted(set(params) - set(store.params))
        raise CheckpointMismatch(f"{path}: parameter names differ (missing {missing[:3]}, extra {extra[:3]})")
    for name, arr in params.items():
        p = store.params[name]
        if arr.shape != p.data.shape:
            raise CheckpointMismatch(
                f"{path}: shape mismatch for {name!r}: checkpoint {arr.shape}, model {p.data.shape}"
            )
        p.data = arr.astype(p.dtype, copy=True)
    if adam is not None:
        for name in store.params:
            store.step[name] = int(adam["step"][name])
            store.m[name] = adam["m"][name].astype(store.params[name].dtype)
            store.v[name] = adam["v"][name].astype(store.params[name].dtype)

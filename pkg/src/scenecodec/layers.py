"""Network building blocks on top of the autodiff engine.

Modules own their parameters as Tensor leaves and expose them through
named_parameters() for the optimizer and checkpointing. Weight init draws
from a caller-provided generator so construction order fixes the bytes.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class Module:
    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            key = f"{prefix}.{name}" if prefix else name
            if isinstance(value, Tensor) and value.requires_grad:
                params[key] = value
            elif isinstance(value, Module):
                params.update(value.named_parameters(key))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.update(item.named_parameters(f"{key}.{i}"))
        return params

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, in_features, out_features, rng, dtype=np.float32, bias=True):
        self.w = ad.parameter(glorot_uniform(in_features, out_features, rng, dtype))
        self.b = ad.parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = ad.matmul(x, self.w)
        if self.b is not None:
            out = ad.add(out, self.b)
        return out


class MLP(Module):
    """Two-layer feed-forward with a ReLU hidden layer."""

    def __init__(self, in_features, hidden, out_features, rng, dtype=np.float32):
        self.fc1 = Linear(in_features, hidden, rng, dtype)
        self.fc2 = Linear(hidden, out_features, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ad.relu(self.fc1(x)))


class LayerNorm(Module):
    """Normalization over the last axis with a learned affine."""

    def __init__(self, dim, dtype=np.float32):
        self.weight = ad.parameter(np.ones(dim, dtype=dtype))
        self.bias = ad.parameter(np.zeros(dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ad.add(ad.mul(ad.layer_norm(x, axis=-1), self.weight), self.bias)


class Embedding(Module):
    def __init__(self, n_embeddings, dim, rng, dtype=np.float32):
        self.table = ad.parameter((rng.normal(0.0, 0.02, size=(n_embeddings, dim))).astype(dtype))

    def forward(self, ids) -> Tensor:
        return ad.embedding_lookup(self.table, ids)


class MultiHeadSelfAttention(Module):
    def __init__(self, d_model, heads, rng, dtype=np.float32):
        if d_model % heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by heads {heads}")
        self.heads = heads
        self.d_head = d_model // heads
        self.q = Linear(d_model, d_model, rng, dtype)
        self.k = Linear(d_model, d_model, rng, dtype)
        self.v = Linear(d_model, d_model, rng, dtype)
        self.out = Linear(d_model, d_model, rng, dtype)

    def forward(self, x: Tensor, key_padding_mask: np.ndarray) -> Tensor:
        """key_padding_mask: (B, N) bool, True at valid slots."""
        b, n, d = x.shape

        def split(t):
            return ad.transpose(ad.reshape(t, (b, n, self.heads, self.d_head)), (0, 2, 1, 3))

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(self.d_head))
        pad = ~key_padding_mask[:, None, None, :]  # (B, 1, 1, N), True = masked key
        scores = ad.masked_fill(scores, pad, -np.inf)
        attn = ad.softmax(scores, axis=-1)
        ctx = ad.matmul(attn, v)
        merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, n, d))
        return self.out(merged)


class TransformerBlock(Module):
    """Post-norm block: Norm(x + Drop(Attn)) then Norm(x + Drop(FFN)).

    Padded rows are zeroed at the output so they cannot leak downstream.
    """

    def __init__(self, d_model, heads, rng, dtype=np.float32, dropout=0.1, ffn_mult=4):
        self.attn = MultiHeadSelfAttention(d_model, heads, rng, dtype)
        self.norm1 = LayerNorm(d_model, dtype)
        self.ffn = MLP(d_model, ffn_mult * d_model, d_model, rng, dtype)
        self.norm2 = LayerNorm(d_model, dtype)
        self.dropout = dropout

    def forward(self, x: Tensor, key_padding_mask: np.ndarray, rng=None) -> Tensor:
        attn_out = self.attn(x, key_padding_mask)
        if rng is not None and self.dropout > 0:
            attn_out = ad.dropout(attn_out, self.dropout, rng)
        h = self.norm1(ad.add(x, attn_out))
        ffn_out = self.ffn(h)
        if rng is not None and self.dropout > 0:
            ffn_out = ad.dropout(ffn_out, self.dropout, rng)
        out = self.norm2(ad.add(h, ffn_out))
        keep = key_padding_mask[:, :, None].astype(out.dtype)
        return ad.mul(out, Tensor(keep))


class FiLM(Module):
    """Class-conditioned per-feature affine: gamma(s) * h + beta(s).

    Both heads start as the identity map (gamma = 1, beta = 0): their output
    layers have zero weights with bias 1 and 0 respectively.
    """

    def __init__(self, d_cond, d_model, rng, dtype=np.float32):
        self.gamma = MLP(d_cond, d_cond, d_model, rng, dtype)
        self.beta = MLP(d_cond, d_cond, d_model, rng, dtype)
        self.gamma.fc2.w.data[:] = 0
        self.gamma.fc2.b.data[:] = 1
        self.beta.fc2.w.data[:] = 0
        self.beta.fc2.b.data[:] = 0

    def forward(self, h: Tensor, s: Tensor) -> Tensor:
        """h: (B, N, D) features; s: (B, D_cond) conditioning vectors."""
        b, d = s.shape[0], h.shape[-1]
        gamma = ad.reshape(self.gamma(s), (b, 1, d))
        beta = ad.reshape(self.beta(s), (b, 1, d))
        return ad.add(ad.mul(gamma, h), beta)

"""Forward operators used by the backbone and the action expert.

All functions are differentiable torch expressions; parameters are looked up
in a :class:`~vlaflow.nn.params.ParamView` so weights stay in one store.
"""
from __future__ import annotations

import math

import torch

from ..errors import ConfigError, ShapeError


def linear_forward(x: torch.Tensor, W: torch.Tensor, b: torch.Tensor | None = None) -> torch.Tensor:
    """``y = x @ W + b`` with ``W`` laid out as ``[d_in, d_out]``."""
    if W.dim() != 2 or x.shape[-1] != W.shape[0]:
        raise ShapeError(
            f"linear_forward: x shape {tuple(x.shape)} incompatible with W shape {tuple(W.shape)}"
        )
    y = x @ W
    if b is not None:
        if b.shape != (W.shape[1],):
            raise ShapeError(f"linear_forward: bias shape {tuple(b.shape)} != ({W.shape[1]},)")
        y = y + b
    return y


def layer_norm(x, gain=None, bias=None, eps: float = 1e-5):
    """Row-wise normalization with the biased (1/d) variance."""
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    d = x.shape[-1]
    for name, t in (("gain", gain), ("bias", bias)):
        if t is not None and t.shape[-1] != d:
            raise ShapeError(f"layer_norm: {name} width {t.shape[-1]} != {d}")
    return torch.nn.functional.layer_norm(x, (d,), gain, bias, eps)


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    """Max-subtracted softmax (torch's kernel subtracts the row max)."""
    return torch.softmax(x, dim=axis)


def gelu(x):
    return torch.nn.functional.gelu(x)


def silu(x):
    return torch.nn.functional.silu(x)


def mlp(x, p):
    """Two-layer GELU feed-forward: ``w1, b1, w2, b2``."""
    return linear_forward(gelu(linear_forward(x, p["w1"], p["b1"])), p["w2"], p["b2"])


def multi_head_attention(q_in, kv_in, p, n_heads: int, need_weights: bool = False):
    """Scaled dot-product attention with input/output projections.

    ``q_in`` is ``[..., Tq, d]`` and ``kv_in`` is ``[..., Tkv, d]``. Passing the
    same tensor for both gives self-attention. Returns ``(out, weights)`` where
    ``weights`` is ``[..., heads, Tq, Tkv]`` or ``None``.
    """
    d = q_in.shape[-1]
    if d % n_heads:
        raise ConfigError(f"width {d} not divisible by n_heads={n_heads}")
    if kv_in.shape[-1] != d:
        raise ShapeError(f"query width {d} != key/value width {kv_in.shape[-1]}")
    dh = d // n_heads
    q = linear_forward(q_in, p["wq"], p["bq"])
    k = linear_forward(kv_in, p["wk"])
    v = linear_forward(kv_in, p["wv"], p["bv"])

    def split(t):
        return t.unflatten(-1, (n_heads, dh)).transpose(-2, -3)

    q, k, v = split(q), split(k), split(v)
    if need_weights:
        weights = softmax((q @ k.transpose(-1, -2)) / math.sqrt(dh), axis=-1)
        ctx = weights @ v
    else:
        weights = None
        ctx = torch.nn.functional.scaled_dot_product_attention(q, k, v)
    ctx = ctx.transpose(-2, -3).flatten(-2)
    out = linear_forward(ctx, p["wo"], p["bo"])
    return out, weights


def sinusoidal_embedding(t, dim: int, max_freq: float = 1e4) -> torch.Tensor:
    """Interleaved ``[sin(f_0 t), cos(f_0 t), sin(f_1 t), ...]``.

    Frequencies are geometric from 1 to ``max_freq``. ``t`` may be a float or a
    tensor of any shape; output gains a trailing axis of size ``dim``.
    """
    if dim <= 0 or dim % 2:
        raise ConfigError(f"sinusoidal embedding dim must be a positive even integer, got {dim}")
    t = torch.as_tensor(t)
    if not t.is_floating_point():
        t = t.to(torch.float32)
    half = dim // 2
    if half == 1:
        freqs = torch.ones(1, dtype=torch.float64)
    else:
        freqs = max_freq ** (torch.arange(half, dtype=torch.float64) / (half - 1))
    args = t.to(torch.float64).unsqueeze(-1) * freqs
    emb = torch.stack([torch.sin(args), torch.cos(args)], dim=-1).flatten(-2)
    return emb.to(t.dtype)

"""Cross-modulated diffusion transformer predicting the flow velocity.

Queries are always the H embedded action tokens. Each block is conditioned on
flow time through adaptive layer-norm (scale/shift) and gated residuals, and
on perception through cross-attention into a conditioning bundle. The output
projection and every modulation head start at zero, so a fresh expert
predicts exactly zero velocity.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .config import DitConfig
from .errors import ConfigError, ShapeError
from .integration import ConditioningBundle
from .nn import init
from .nn.functional import layer_norm, linear_forward, mlp, multi_head_attention, silu, sinusoidal_embedding
from .nn.params import ParamStore, ParamView
from .nn.rng import Rng

MOD_KEYS = ("shift_attn", "scale_attn", "gate_attn", "shift_mlp", "scale_mlp", "gate_mlp")


def block_kinds(variant: str, depth: int) -> list[str]:
    """Attention type of each block: ``"cross"`` or ``"self"``."""
    if variant == "B":
        return ["cross" if i % 2 == 0 else "self" for i in range(depth)]
    return ["cross"] * depth


@dataclass
class AttentionCall:
    block: int
    kind: str
    query: str
    keys: tuple  # token groups making up the key/value sequence


def init_expert(store: ParamStore, cfg: DitConfig, horizon: int, d_action: int, rng: Rng, prefix="expert"):
    d = cfg.width
    init.linear(store, f"{prefix}.action_in", d_action, d, rng)
    init.normal(store, f"{prefix}.action_pos", (horizon, d), rng)
    init.linear(store, f"{prefix}.time", cfg.time_dim, d, rng, w="w1", b="b1")
    init.linear(store, f"{prefix}.time", d, d, rng, w="w2", b="b2")
    for i in range(cfg.depth):
        bp = f"{prefix}.blocks.{i}"
        init.linear(store, f"{bp}.mod", d, 6 * d, rng, zero=True)
        init.attention(store, f"{bp}.attn", d, rng)
        init.feed_forward(store, f"{bp}.mlp", d, cfg.mlp_ratio * d, rng)
    init.linear(store, f"{prefix}.final.mod", d, 2 * d, rng, zero=True)
    init.linear(store, f"{prefix}.final.out", d, d_action, rng, zero=True)


def expert_param_count(cfg: DitConfig, horizon: int, d_action: int) -> int:
    d, hid = cfg.width, cfg.mlp_ratio * cfg.width
    total = d_action * d + d + horizon * d
    total += cfg.time_dim * d + d + d * d + d
    per_block = (d * 6 * d + 6 * d) + 4 * d * d + 3 * d + (d * hid + hid) + (hid * d + d)
    total += cfg.depth * per_block
    total += d * 2 * d + 2 * d + d * d_action + d_action
    return total


def embed_actions(actions: torch.Tensor, p: ParamView) -> torch.Tensor:
    """``[B, H, d_a]`` -> ``[B, H, d]``: per-step linear map plus a position embedding."""
    pos = p["action_pos"]
    if actions.shape[-2] != pos.shape[0]:
        raise ShapeError(f"chunk length {actions.shape[-2]} != configured horizon {pos.shape[0]}")
    return linear_forward(actions, p["action_in.w"], p["action_in.b"]) + pos


def _as_tau(tau, batch: int, dtype) -> torch.Tensor:
    t = torch.as_tensor(tau, dtype=dtype)
    if t.dim() == 0:
        t = t.expand(batch)
    if bool(((t < 0) | (t > 1)).any()) or not bool(torch.isfinite(t).all()):
        raise ValueError(f"tau must lie in [0, 1], got {t.tolist()}")
    return t


def time_modulation(tau, p: ParamView, depth: int, time_dim: int):
    """Per-block modulation vectors for flow time ``tau`` (scalar or ``[B]``).

    Returns ``(blocks, final)`` where ``blocks[i]`` maps each name in
    ``MOD_KEYS`` to a ``[B, d]`` tensor and ``final`` has ``shift``/``scale``.
    """
    t = _as_tau(tau, 1, p.dtype)
    emb = sinusoidal_embedding(t, time_dim)
    c = linear_forward(silu(linear_forward(emb, p["time.w1"], p["time.b1"])), p["time.w2"], p["time.b2"])
    c = silu(c)
    blocks = []
    for i in range(depth):
        mod = linear_forward(c, p[f"blocks.{i}.mod.w"], p[f"blocks.{i}.mod.b"])
        blocks.append(dict(zip(MOD_KEYS, mod.chunk(6, dim=-1))))
    shift, scale = linear_forward(c, p["final.mod.w"], p["final.mod.b"]).chunk(2, dim=-1)
    return blocks, {"shift": shift, "scale": scale}


def modulate(x, shift, scale):
    return layer_norm(x) * (1 + scale.unsqueeze(-2)) + shift.unsqueeze(-2)


def dit_block(x, kv, p: ParamView, mod: dict, n_heads: int, need_weights=False):
    """One block: modulated LN -> attention -> gated residual -> modulated LN -> MLP -> gated residual.

    ``kv=None`` makes the attention a self-attention over ``x``.
    """
    h = modulate(x, mod["shift_attn"], mod["scale_attn"])
    a, w = multi_head_attention(h, h if kv is None else kv, p.view("attn"), n_heads, need_weights)
    x = x + (1 + mod["gate_attn"].unsqueeze(-2)) * a
    h = modulate(x, mod["shift_mlp"], mod["scale_mlp"])
    x = x + (1 + mod["gate_mlp"].unsqueeze(-2)) * mlp(h, p.view("mlp"))
    return x, w


def dit_forward(p: ParamView, cfg: DitConfig, a_noisy: torch.Tensor, bundle: ConditioningBundle, tau,
                variant: str, tokens: torch.Tensor | None = None, trace: list | None = None) -> torch.Tensor:
    """Velocity ``[B, H, d_a]`` for noisy actions ``[B, H, d_a]`` at flow time ``tau``.

    ``tokens`` may carry the already-embedded actions (variant D embeds them
    once to build its bundle). ``trace`` collects one :class:`AttentionCall`
    per attention op for structural inspection.
    """
    if bundle.variant != variant:
        raise ConfigError(f"bundle variant {bundle.variant} does not match expert variant {variant}")
    if variant == "C" and len(bundle.kv) != cfg.depth:
        raise ConfigError(f"variant C bundle has {len(bundle.kv)} sequences, expert depth is {cfg.depth}")
    x = embed_actions(a_noisy, p) if tokens is None else tokens
    batch = x.shape[0]
    tau_b = _as_tau(tau, batch, x.dtype)
    blocks, final = time_modulation(tau_b, p, cfg.depth, cfg.time_dim)
    keys = {"A": ("context", "state"), "B": ("context", "state"), "C": ("context", "state"),
            "D": ("context", "state", "actions")}[variant]
    for i, kind in enumerate(block_kinds(variant, cfg.depth)):
        kv = None if kind == "self" else bundle.kv_for_block(i)
        if trace is not None:
            trace.append(AttentionCall(i, kind, "actions", ("actions",) if kv is None else keys))
        x, _ = dit_block(x, kv, p.view(f"blocks.{i}"), blocks[i], cfg.heads)
    h = modulate(x, final["shift"], final["scale"])
    return linear_forward(h, p["final.out.w"], p["final.out.b"])

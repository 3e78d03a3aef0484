"""Toy vision-language backbone.

Images are cut into patches, embedded, and regrouped by pixel-unshuffle so
each view contributes a quarter as many tokens (at factor 2). Those tokens
replace the ``<img>`` placeholders in the embedded instruction, and the fused
sequence runs through a stack of pre-norm transformer layers. The fused
context handed to the action expert is the hidden state of one intermediate
layer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .config import BackboneConfig
from .errors import ConfigError, ShapeError
from .nn import init
from .nn.functional import layer_norm, linear_forward, mlp, multi_head_attention
from .nn.params import ParamStore, ParamView
from .nn.rng import Rng

PAD_ID = 0
IMG_ID = 1


@dataclass
class AttentionMap:
    """Head-averaged attention of one layer for one input.

    ``roles[j]`` is 0 for text tokens and ``v + 1`` for tokens of view ``v``.
    """

    layer: int
    weights: np.ndarray
    roles: np.ndarray

    def image_columns(self, view: int = 0) -> np.ndarray:
        return np.flatnonzero(self.roles == view + 1)


@dataclass
class BackboneOutput:
    states: list  # states[i] is the output of layer i + 1, shape [B, T, d_z]
    attn: list | None  # per layer [B, T, T], head-averaged
    roles: np.ndarray
    embeddings: torch.Tensor

    def attention_map(self, layer: int, index: int = 0) -> AttentionMap:
        if self.attn is None:
            raise ValueError("attention maps were not requested")
        return AttentionMap(layer, self.attn[layer - 1][index].detach().cpu().numpy(), self.roles)


def init_backbone(store: ParamStore, cfg: BackboneConfig, rng: Rng, n_layers: int | None = None,
                  prefix: str = "backbone", image_channels: int = 3) -> None:
    n_layers = cfg.layers if n_layers is None else n_layers
    d = cfg.d_z
    patch_in = cfg.patch_size * cfg.patch_size * image_channels
    init.linear(store, f"{prefix}.patch", patch_in, cfg.d_patch, rng)
    init.linear(store, f"{prefix}.proj", cfg.d_patch * cfg.unshuffle**2, d, rng)
    init.normal(store, f"{prefix}.tok_emb", (cfg.vocab, d), rng)
    init.normal(store, f"{prefix}.pos_emb", (cfg.max_len, d), rng)
    for i in range(n_layers):
        lp = f"{prefix}.layers.{i}"
        init.layer_norm_params(store, f"{lp}.ln1", d)
        init.attention(store, f"{lp}.attn", d, rng)
        init.layer_norm_params(store, f"{lp}.ln2", d)
        init.feed_forward(store, f"{lp}.mlp", d, cfg.mlp_ratio * d, rng)


def backbone_param_count(cfg: BackboneConfig, n_layers: int | None = None, image_channels: int = 3) -> int:
    n_layers = cfg.layers if n_layers is None else n_layers
    d, hid = cfg.d_z, cfg.mlp_ratio * cfg.d_z
    patch_in = cfg.patch_size**2 * image_channels
    total = patch_in * cfg.d_patch + cfg.d_patch
    total += cfg.d_patch * cfg.unshuffle**2 * d + d
    total += (cfg.vocab + cfg.max_len) * d
    per_layer = 4 * d + 4 * d * d + 3 * d + (d * hid + hid) + (hid * d + d)
    return total + n_layers * per_layer


def patch_embed(image: torch.Tensor, W: torch.Tensor, b: torch.Tensor, patch_size: int) -> torch.Tensor:
    """Embed non-overlapping ``patch_size`` squares of ``[..., H, W, C]`` images.

    Patches are ordered row-major; each is flattened in (row, column, channel)
    order before the linear projection. Returns ``[..., P, d_patch]``.
    """
    *lead, h, w, c = image.shape
    if h % patch_size or w % patch_size:
        raise ConfigError(f"image {h}x{w} not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    x = image.reshape(*lead, gh, patch_size, gw, patch_size, c)
    x = x.movedim(-4, -3)  # [..., gh, gw, p, p, c]
    x = x.reshape(*lead, gh * gw, patch_size * patch_size * c)
    return linear_forward(x, W, b)


def pixel_unshuffle(tokens: torch.Tensor, factor: int) -> torch.Tensor:
    """Space-to-depth on a square token grid ``[..., P, C]`` -> ``[..., P/f^2, f^2 C]``.

    Output token ``(I, J)`` concatenates the inputs at ``(fI+a, fJ+b)`` for
    ``a, b`` in row-major order.
    """
    *lead, n, c = tokens.shape
    side = int(round(n**0.5))
    if side * side != n:
        raise ShapeError(f"{n} tokens do not form a square grid")
    if side % factor:
        raise ShapeError(f"grid side {side} not divisible by unshuffle factor {factor}")
    if factor == 1:
        return tokens
    s = side // factor
    x = tokens.reshape(*lead, s, factor, s, factor, c)
    x = x.movedim(-4, -3)  # [..., s, s, f, f, c]
    return x.reshape(*lead, s * s, factor * factor * c)


def fuse_sequence(instr: torch.Tensor, image_tokens: list, tok_emb: torch.Tensor,
                  img_id: int = IMG_ID):
    """Embed ``instr`` ([B, L] ids) and splice view tokens in at the placeholders.

    The i-th placeholder (left to right) is replaced by ``image_tokens[i]``
    ([B, P_i, d]). All rows of the batch must share placeholder positions.
    Returns ``(sequence [B, T, d], roles [T])``.
    """
    instr = torch.as_tensor(instr)
    if instr.dim() == 1:
        instr = instr.unsqueeze(0)
    if int(instr.max()) >= tok_emb.shape[0] or int(instr.min()) < 0:
        raise ValueError("instruction token id outside the vocabulary")
    is_img = instr == img_id
    counts = is_img.sum(dim=1)
    if bool((counts != len(image_tokens)).any()):
        raise ValueError(
            f"instruction has {counts.tolist()} image placeholders but {len(image_tokens)} views were given")
    if bool((is_img != is_img[0]).any()):
        raise ValueError("placeholder positions differ across the batch")
    text = tok_emb[instr]
    positions = torch.nonzero(is_img[0]).flatten().tolist()
    pieces, roles, start = [], [], 0
    for view, pos in enumerate(positions):
        pieces.append(text[:, start:pos])
        roles += [0] * (pos - start)
        pieces.append(image_tokens[view])
        roles += [view + 1] * image_tokens[view].shape[1]
        start = pos + 1
    pieces.append(text[:, start:])
    roles += [0] * (instr.shape[1] - start)
    return torch.cat(pieces, dim=1), np.asarray(roles, dtype=np.int64)


def embed_inputs(p: ParamView, cfg: BackboneConfig, images: torch.Tensor, instr: torch.Tensor):
    """Images ``[B, N, H, W, 3]`` plus ids ``[B, L]`` -> fused, position-embedded sequence."""
    n_views = images.shape[1]
    views = []
    for v in range(n_views):
        tok = patch_embed(images[:, v], p["patch.w"], p["patch.b"], cfg.patch_size)
        tok = pixel_unshuffle(tok, cfg.unshuffle)
        views.append(linear_forward(tok, p["proj.w"], p["proj.b"]))
    seq, roles = fuse_sequence(instr, views, p["tok_emb"])
    if seq.shape[1] > cfg.max_len:
        raise ConfigError(f"fused sequence length {seq.shape[1]} exceeds backbone.max_len={cfg.max_len}")
    return seq + p["pos_emb"][: seq.shape[1]], roles


def transformer_layer(x, p: ParamView, n_heads: int, need_weights: bool = False):
    h = layer_norm(x, p["ln1.g"], p["ln1.b"])
    a, w = multi_head_attention(h, h, p.view("attn"), n_heads, need_weights)
    x = x + a
    x = x + mlp(layer_norm(x, p["ln2.g"], p["ln2.b"]), p.view("mlp"))
    return x, w


def backbone_forward(p: ParamView, cfg: BackboneConfig, seq: torch.Tensor, roles=None,
                     upto: int | None = None, need_attn: bool = False) -> BackboneOutput:
    """Run the layer stack on an embedded sequence ``[B, T, d_z]``.

    ``upto`` stops after that many layers (layers past the deepest consumer
    are never evaluated). Returns every computed layer output.
    """
    if seq.shape[1] == 0:
        raise ShapeError("empty input sequence")
    n_avail = 0
    while f"layers.{n_avail}.ln1.g" in p:
        n_avail += 1
    upto = n_avail if upto is None else upto
    if not 1 <= upto <= n_avail:
        raise ConfigError(f"cannot run {upto} layers; backbone holds {n_avail}")
    states, maps = [], [] if need_attn else None
    x = seq
    for i in range(upto):
        x, w = transformer_layer(x, p.view(f"layers.{i}"), cfg.n_heads, need_attn)
        states.append(x)
        if need_attn:
            maps.append(w.mean(dim=-3))
    if roles is None:
        roles = np.zeros(seq.shape[1], dtype=np.int64)
    return BackboneOutput(states, maps, roles, seq)


def extract_z(states: list, layer: int) -> torch.Tensor:
    """Hidden state of ``layer`` (1-based) from ``backbone_forward`` output."""
    if not 1 <= layer <= len(states):
        raise ConfigError(f"extraction layer {layer} outside [1, {len(states)}]")
    return states[layer - 1]


def encode(p: ParamView, cfg: BackboneConfig, images, instr, upto=None, need_attn=False) -> BackboneOutput:
    seq, roles = embed_inputs(p, cfg, images, instr)
    return backbone_forward(p, cfg, seq, roles, upto=upto, need_attn=need_attn)

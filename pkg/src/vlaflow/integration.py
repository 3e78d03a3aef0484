"""Conditioning bundles: the key/value sequences the action expert attends to.

Variant A concatenates the mid-layer context with one embedded state token and
feeds that same sequence to every expert block. Variant B shares A's bundle
(it differs only inside the expert). Variant C pairs consecutive backbone
layers with expert blocks. Variant D appends the embedded noisy actions to
A's sequence.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .errors import ConfigError, ShapeError
from .nn import init
from .nn.functional import linear_forward
from .nn.params import ParamStore, ParamView
from .nn.rng import Rng


@dataclass
class ConditioningBundle:
    variant: str
    kv: list  # one [B, T_kv, d] tensor, or one per expert block for variant C
    source_layers: list = field(default_factory=list)

    def kv_for_block(self, i: int) -> torch.Tensor:
        return self.kv[i] if self.variant == "C" else self.kv[0]


def init_integration(store: ParamStore, d_state: int, d_z: int, rng: Rng, prefix="integration"):
    init.linear(store, f"{prefix}.state", d_state, d_z, rng)


def integration_param_count(d_state: int, d_z: int) -> int:
    return d_state * d_z + d_z


def embed_state(state: torch.Tensor, p: ParamView) -> torch.Tensor:
    """Normalized state ``[B, d_s]`` -> one token ``[B, 1, d_z]``."""
    return linear_forward(state, p["state.w"], p["state.b"]).unsqueeze(-2)


def _concat(z, state_tok):
    if z.shape[-1] != state_tok.shape[-1]:
        raise ShapeError(f"context width {z.shape[-1]} != state token width {state_tok.shape[-1]}")
    return torch.cat([z, state_tok], dim=-2)


def build_condition_A(z, state_tok, layer: int | None = None) -> ConditioningBundle:
    return ConditioningBundle("A", [_concat(z, state_tok)], [layer])


def build_condition_B(z, state_tok, layer: int | None = None) -> ConditioningBundle:
    return ConditioningBundle("B", [_concat(z, state_tok)], [layer])


def layer_window(extract_layer: int, n_layers: int, dit_depth: int) -> list[int]:
    """Backbone layers (1-based) feeding each expert block under variant C.

    Starts at ``extract_layer``; when the window would run past the last layer
    it is shifted back so it still covers ``dit_depth`` distinct layers.
    """
    if dit_depth > n_layers:
        raise ConfigError(f"variant C needs {dit_depth} backbone layers, only {n_layers} exist")
    start = min(extract_layer, n_layers - dit_depth + 1)
    return list(range(start, start + dit_depth))


def build_condition_C(per_layer_features: list, state_tok, dit_depth: int,
                      extract_layer: int) -> ConditioningBundle:
    """``per_layer_features[i]`` is the output of backbone layer ``i + 1``."""
    layers = layer_window(extract_layer, len(per_layer_features), dit_depth)
    kv = [_concat(per_layer_features[l - 1], state_tok) for l in layers]
    return ConditioningBundle("C", kv, layers)


def build_condition_D(z, state_tok, action_tokens, layer: int | None = None) -> ConditioningBundle:
    """``action_tokens`` are the noisy actions already embedded by the expert."""
    return ConditioningBundle("D", [torch.cat([_concat(z, state_tok), action_tokens], dim=-2)], [layer])


def consumed_layers(variant: str, extract_layer: int, n_layers: int, dit_depth: int) -> list[int]:
    if variant == "C":
        return layer_window(extract_layer, n_layers, dit_depth)
    return [extract_layer]

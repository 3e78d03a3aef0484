"""The full policy network: backbone, integration module, and action expert."""
from __future__ import annotations

import numpy as np
import torch

from . import backbone as bb
from . import integration as integ
from .action_expert import dit_forward, embed_actions, expert_param_count, init_expert
from .config import RunConfig
from .flow import flow_target, fm_loss, interpolate, sample_actions
from .normalize import NormStats
from .nn.params import ParamStore
from .nn.rng import Rng

INIT_STREAM = 5
BACKBONE = "backbone."
TRAINABLE_HEADS = ("integration.", "expert.")


class VLAModel:
    """Parameters plus the forward computations that use them.

    The backbone retains only as many layers as the integration variant
    consumes; deeper layers would never influence the action expert.
    """

    def __init__(self, config: RunConfig, store: ParamStore, norm: NormStats | None = None):
        self.config = config
        self.store = store
        self.norm = norm or NormStats.identity(config.action.dim, config.state.dim)

    @classmethod
    def initialize(cls, config: RunConfig, seed: int, dtype=torch.float32) -> "VLAModel":
        config.validate()
        rng = Rng(seed, (INIT_STREAM,))
        store = ParamStore(dtype)
        bb.init_backbone(store, config.backbone, rng.child(0), n_layers=retained_layers(config))
        integ.init_integration(store, config.state.dim, config.backbone.d_z, rng.child(1))
        init_expert(store, config.dit, config.chunk.h, config.action.dim, rng.child(2))
        return cls(config, store)

    @property
    def variant(self) -> str:
        return self.config.integration.variant

    @property
    def dtype(self):
        return self.store.dtype

    def tensor(self, x, dtype=None):
        return torch.as_tensor(np.asarray(x), dtype=dtype or self.dtype)

    def encode(self, images, instr, need_attn: bool = False, upto: int | None = None) -> bb.BackboneOutput:
        images = self.tensor(images)
        instr = torch.as_tensor(np.asarray(instr), dtype=torch.long)
        if images.dim() == 4:
            images, instr = images.unsqueeze(0), instr.reshape(1, -1)
        upto = upto or retained_layers(self.config)
        return bb.encode(self.store.view("backbone"), self.config.backbone, images, instr,
                         upto=upto, need_attn=need_attn)

    def state_token(self, states_norm):
        return integ.embed_state(self.tensor(states_norm), self.store.view("integration"))

    def bundle(self, enc: bb.BackboneOutput, state_tok, action_tokens=None) -> integ.ConditioningBundle:
        k = self.config.backbone.extract_layer
        if self.variant == "C":
            return integ.build_condition_C(enc.states, state_tok, self.config.dit.depth, k)
        z = bb.extract_z(enc.states, k)
        if self.variant == "D":
            return integ.build_condition_D(z, state_tok, action_tokens, k)
        builder = integ.build_condition_A if self.variant == "A" else integ.build_condition_B
        return builder(z, state_tok, k)

    def velocity(self, a_noisy, tau, enc, state_tok, bundle=None, trace=None):
        """Velocity field for normalized noisy chunks ``[B, H, d_a]``."""
        p = self.store.view("expert")
        tokens = None
        if self.variant == "D":
            tokens = embed_actions(a_noisy, p)
            bundle = self.bundle(enc, state_tok, tokens)
        elif bundle is None:
            bundle = self.bundle(enc, state_tok)
        return dit_forward(p, self.config.dit, a_noisy, bundle, tau, self.variant, tokens=tokens, trace=trace)

    def loss(self, images, instr, states_norm, actions_norm, tau, eps):
        """Flow-matching loss on one batch (all inputs already normalized)."""
        frozen_bb = all(self.store.is_frozen(n) for n in self.store.names(BACKBONE))
        with torch.set_grad_enabled(torch.is_grad_enabled() and not frozen_bb):
            enc = self.encode(images, instr)
        actions = self.tensor(actions_norm)
        eps = self.tensor(eps)
        tau = self.tensor(tau)
        a_noisy = interpolate(actions, eps, tau)
        v = self.velocity(a_noisy, tau, enc, self.state_token(states_norm))
        return fm_loss(v, flow_target(actions, eps))

    @torch.no_grad()
    def predict(self, images, instr, states, rng: Rng, steps: int | None = None) -> np.ndarray:
        """Denormalized action chunks ``[B, H, d_a]`` for raw observations and states."""
        steps = steps or self.config.sampler.steps
        states = np.asarray(states, dtype=np.float64)
        single = states.ndim == 1
        enc = self.encode(images, instr)
        s_tok = self.state_token(self.norm.normalize_states(states.reshape(-1, states.shape[-1])))
        bundle = None if self.variant == "D" else self.bundle(enc, s_tok)
        batch = s_tok.shape[0]
        shape = (batch, self.config.chunk.h, self.config.action.dim)
        out = sample_actions(lambda a, tau: self.velocity(a, tau, enc, s_tok, bundle),
                             shape, steps, rng, self.dtype)
        chunk = self.norm.denormalize_actions(out.double().numpy())
        return chunk[0] if single else chunk

    @torch.no_grad()
    def attention_maps(self, images, instr, layer: int | None = None) -> list[bb.AttentionMap]:
        """Head-averaged backbone attention at ``layer`` (default: extraction layer)."""
        layer = layer or self.config.backbone.extract_layer
        enc = self.encode(images, instr, need_attn=True, upto=layer)
        return [enc.attention_map(layer, i) for i in range(enc.states[0].shape[0])]

    def backbone_digest(self) -> str:
        return self.store.digest(BACKBONE)


def retained_layers(config: RunConfig) -> int:
    used = integ.consumed_layers(config.integration.variant, config.backbone.extract_layer,
                                 config.backbone.layers, config.dit.depth)
    return max(used)


def count_params(config: RunConfig) -> int:
    """Closed-form parameter count matching :meth:`VLAModel.initialize`."""
    return (bb.backbone_param_count(config.backbone, retained_layers(config))
            + integ.integration_param_count(config.state.dim, config.backbone.d_z)
            + expert_param_count(config.dit, config.chunk.h, config.action.dim))

"""Scikit-learn style front end.

``FlowVLAPolicy`` exposes the hyperparameters that matter for experiments as
constructor arguments (so ``get_params``/``set_params``/``clone`` work) and
hides the config tree, trainer, and sampler behind ``fit``/``predict``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .config import RunConfig
from .env.render import IMAGE_SIZE
from .model import VLAModel
from .nn.rng import Rng
from .trainer import Trainer, prepare
from .validation import check_dataset, check_images, check_instructions, check_is_fitted, check_states

SCHEDULES = ("two-stage", "single", "stage1")
POLICY_STREAM = 6


class FlowVLAPolicy(BaseEstimator):
    """Vision-language-action policy with a flow-matching action expert.

    Parameters mirror the most-used :class:`RunConfig` keys; anything else can
    be passed through ``overrides`` as ``{"dotted.key": value}``.
    """

    def __init__(self, variant="A", schedule="two-stage", d_z=128, backbone_layers=6, extract_layer=4,
                 dit_depth=4, horizon=8, sampler_steps=10, stage1_steps=2000, stage2_steps=4000,
                 batch_size=32, lr_stage1=1e-3, lr_backbone=1e-4, lr_expert=3e-4,
                 beta_alpha=1.5, beta_beta=1.0, seed=0, overrides=None):
        self.variant = variant
        self.schedule = schedule
        self.d_z = d_z
        self.backbone_layers = backbone_layers
        self.extract_layer = extract_layer
        self.dit_depth = dit_depth
        self.horizon = horizon
        self.sampler_steps = sampler_steps
        self.stage1_steps = stage1_steps
        self.stage2_steps = stage2_steps
        self.batch_size = batch_size
        self.lr_stage1 = lr_stage1
        self.lr_backbone = lr_backbone
        self.lr_expert = lr_expert
        self.beta_alpha = beta_alpha
        self.beta_beta = beta_beta
        self.seed = seed
        self.overrides = overrides

    def to_config(self) -> RunConfig:
        cfg = RunConfig().with_overrides({
            "seed": self.seed,
            "integration.variant": self.variant,
            "backbone.d_z": self.d_z,
            "dit.width": self.d_z,
            "backbone.layers": self.backbone_layers,
            "backbone.extract_layer": self.extract_layer,
            "dit.depth": self.dit_depth,
            "chunk.h": self.horizon,
            "sampler.steps": self.sampler_steps,
            "train.stage1_steps": self.stage1_steps,
            "train.stage2_steps": self.stage2_steps,
            "train.batch_size": self.batch_size,
            "train.lr_stage1": self.lr_stage1,
            "train.lr_backbone": self.lr_backbone,
            "train.lr_expert": self.lr_expert,
            "flow.beta_alpha": self.beta_alpha,
            "flow.beta_beta": self.beta_beta,
            **(self.overrides or {}),
        })
        return cfg.validate()

    def fit(self, X, y=None, manifest=None):
        """Train on a :class:`~vlaflow.env.demos.DemoDataset`. ``y`` is ignored."""
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        check_dataset(X)
        cfg = self.to_config()
        cfg.action.dim, cfg.state.dim = X.actions.shape[-1], X.states.shape[-1]
        if X.actions.shape[1] != cfg.chunk.h:
            raise ValueError(f"dataset chunks have H={X.actions.shape[1]}, estimator horizon is {cfg.chunk.h}")
        model = prepare(VLAModel.initialize(cfg, self.seed), X)
        self.initial_backbone_digest_ = model.backbone_digest()
        if self.schedule == "single":
            trainer = Trainer(model, X, self.seed, manifest, stage="single").run("single")
        else:
            trainer = Trainer(model, X, self.seed, manifest).run("1")
            if self.schedule == "two-stage":
                trainer.run("2")
        self.model_ = model
        self.trainer_ = trainer
        self.loss_curve_ = [r.loss for r in trainer.history]
        self.n_params_ = model.store.count()
        return self

    @classmethod
    def from_model(cls, model: VLAModel) -> "FlowVLAPolicy":
        c = model.config
        est = cls(variant=c.integration.variant, d_z=c.backbone.d_z, backbone_layers=c.backbone.layers,
                  extract_layer=c.backbone.extract_layer, dit_depth=c.dit.depth, horizon=c.chunk.h,
                  sampler_steps=c.sampler.steps, seed=c.seed)
        est.model_ = model
        return est

    def predict(self, images, instructions, states, seed: int = 0, steps: int | None = None) -> np.ndarray:
        """Action chunks ``[B, H, d_a]`` for a batch of observations."""
        check_is_fitted(self)
        cfg = self.model_.config
        imgs = check_images(images, cfg.env.n_views, IMAGE_SIZE)
        batch = len(imgs)
        instr = check_instructions(instructions, batch, cfg.backbone.vocab)
        st = check_states(states, batch, cfg.state.dim)
        return self.model_.predict(imgs, instr, st, Rng(seed, (POLICY_STREAM,)), steps)

    def __call__(self, obs, instr, robot_state, rng: Rng) -> np.ndarray:
        """Chunk policy interface used by :func:`vlaflow.env.evaluate`."""
        check_is_fitted(self)
        return self.model_.predict(obs[None], np.asarray(instr)[None], np.asarray(robot_state)[None], rng)[0]

    def evaluate(self, task: str, trials: int = 50, seed: int = 0, replan_every: int | None = None):
        from .env.rollout import evaluate

        check_is_fitted(self)
        return evaluate(self, task, trials, seed, replan_every)

"""Two-stage training, the single-stage baseline, and attention drift.

Stage 1 freezes the backbone and trains the integration module and action
expert. Stage 2 unfreezes everything with a lower backbone learning rate. The
single-stage baseline runs the same schedule with nothing frozen.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .errors import ConfigError, TrainingDivergedError
from .flow import sample_tau
from .model import BACKBONE, VLAModel
from .nn.autograd import backward
from .nn.optim import adamw_step
from .nn.rng import Rng, sample_gaussian
from .normalize import compute_norm_stats

TRAIN_STREAM = 4
STAGES = ("1", "2", "single")


def warmup_factor(step: int, warmup: int) -> float:
    return 1.0 if warmup <= 0 else min(1.0, (step + 1) / warmup)


@dataclass
class StepRecord:
    step: int
    stage: str
    loss: float
    lr: float
    wall_ms: float

    def to_json(self) -> str:
        return json.dumps(vars(self), sort_keys=True)


class Trainer:
    """Owns a model during training: data sampling, schedule, and optimizer steps."""

    def __init__(self, model: VLAModel, dataset, seed: int | None = None, manifest=None,
                 rng: Rng | None = None, stage: str = "1", step: int = 0):
        self.model = model
        self.dataset = dataset
        self.cfg: RunConfig = model.config
        seed = self.cfg.seed if seed is None else seed
        self.rng = rng or Rng(seed, (TRAIN_STREAM,))
        self.stage = stage
        self.step = step
        self.manifest = Path(manifest) if manifest else None
        self.history: list[StepRecord] = []

    def stage_steps(self, stage: str) -> int:
        t = self.cfg.train
        return {"1": t.stage1_steps, "2": t.stage2_steps, "single": t.stage1_steps + t.stage2_steps}[stage]

    def learning_rates(self, stage: str, step: int) -> tuple[float | None, float]:
        """``(backbone_lr, head_lr)``; a backbone lr of ``None`` means frozen."""
        t = self.cfg.train
        if stage == "1":
            return None, t.lr_stage1 * warmup_factor(step, t.warmup)
        if stage == "2":
            w = warmup_factor(step, t.warmup)
            return t.lr_backbone * w, t.lr_expert * w
        if step < t.stage1_steps:
            w = warmup_factor(step, t.warmup)
            return t.lr_backbone * w, t.lr_stage1 * w
        w = warmup_factor(step - t.stage1_steps, t.warmup)
        return t.lr_backbone * w, t.lr_expert * w

    def _enter_stage(self, stage: str):
        if stage not in STAGES:
            raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")
        if stage != self.stage:
            self.stage, self.step = stage, 0
        if stage == "1":
            self.model.store.freeze(BACKBONE)
        else:
            self.model.store.unfreeze(BACKBONE)

    def sample_batch(self):
        ds, cfg = self.dataset, self.cfg
        norm = self.model.norm
        idx = self.rng.integers(0, len(ds), cfg.train.batch_size)
        images = ds.images[idx]
        if cfg.train.pixel_noise > 0:
            images = np.clip(images + cfg.train.pixel_noise * self.rng.normal(images.shape), 0.0, 1.0)
        states = norm.normalize_states(ds.states[idx].astype(np.float64))
        actions = norm.normalize_actions(ds.actions[idx].astype(np.float64))
        tau = sample_tau(self.rng, cfg.flow.beta_alpha, cfg.flow.beta_beta, len(idx), tuple(cfg.flow.clamp))
        eps = sample_gaussian(self.rng, actions.shape, torch.float64).numpy()
        return images, ds.instructions[idx], states, actions, tau, eps

    def train_step(self) -> float:
        t0 = time.perf_counter()
        batch = self.sample_batch()
        loss = self.model.loss(*batch)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDivergedError(self.step, self.stage, value)
        grads = backward(loss, self.model.store)
        lr_bb, lr_head = self.learning_rates(self.stage, self.step)
        t = self.cfg.train
        opt = dict(betas=tuple(t.betas), eps=t.eps, weight_decay=t.weight_decay)
        adamw_step(self.model.store, {n: g for n, g in grads.items() if not n.startswith(BACKBONE)},
                   lr_head, **opt)
        if lr_bb:
            adamw_step(self.model.store, {n: g for n, g in grads.items() if n.startswith(BACKBONE)},
                       lr_bb, **opt)
        rec = StepRecord(self.step, self.stage, value, lr_head, (time.perf_counter() - t0) * 1e3)
        self.history.append(rec)
        if self.manifest is not None:
            with open(self.manifest, "a") as f:
                f.write(rec.to_json() + "\n")
        self.step += 1
        return value

    def run(self, stage: str, steps: int | None = None) -> "Trainer":
        """Train ``stage`` until its budget is spent, or for ``steps`` more steps."""
        self._enter_stage(stage)
        end = self.stage_steps(stage)
        if steps is not None:
            end = min(end, self.step + steps)
        while self.step < end:
            self.train_step()
        return self

    def state(self) -> dict:
        return {"stage": self.stage, "step": self.step, "rng": self.rng.get_state()}

    @classmethod
    def resume(cls, model: VLAModel, dataset, state: dict, manifest=None) -> "Trainer":
        return cls(model, dataset, manifest=manifest, rng=Rng.from_state(state["rng"]),
                   stage=state["stage"], step=state["step"])


def prepare(model: VLAModel, dataset) -> VLAModel:
    model.norm = compute_norm_stats(dataset)
    return model


def train_stage1(model: VLAModel, dataset, seed=None, manifest=None) -> Trainer:
    return Trainer(prepare(model, dataset), dataset, seed, manifest).run("1")


def train_stage2(trainer: Trainer) -> Trainer:
    """Continue a Stage-1 trainer (optimizer state and data stream carry over)."""
    return trainer.run("2")


def train_two_stage(model: VLAModel, dataset, seed=None, manifest=None) -> Trainer:
    return train_stage2(train_stage1(model, dataset, seed, manifest))


def train_single_stage(model: VLAModel, dataset, seed=None, manifest=None) -> Trainer:
    return Trainer(prepare(model, dataset), dataset, seed, manifest, stage="single").run("single")


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = a.ravel().astype(np.float64)
    b = b.ravel().astype(np.float64)
    return float(a @ b / math.sqrt(float(a @ a) * float(b @ b)))


def attention_similarity(model_ref: VLAModel, model_new: VLAModel, images, instr) -> dict[int, float]:
    """Mean cosine similarity of attention maps per backbone layer over a probe batch."""
    ref_cfg, new_cfg = model_ref.config.backbone, model_new.config.backbone
    if ref_cfg != new_cfg or set(model_ref.store.names(BACKBONE)) != set(model_new.store.names(BACKBONE)):
        raise ConfigError("attention drift needs two models with identical backbone architectures")
    n_layers = len({n.split(".")[2] for n in model_ref.store.names("backbone.layers.")})
    with torch.no_grad():
        ref = model_ref.encode(images, instr, need_attn=True, upto=n_layers)
        new = model_new.encode(images, instr, need_attn=True, upto=n_layers)
    out = {}
    for layer in range(1, n_layers + 1):
        a = ref.attn[layer - 1].double().numpy()
        b = new.attn[layer - 1].double().numpy()
        out[layer] = float(np.mean([_cosine(a[i], b[i]) for i in range(len(a))]))
    return out


def attention_drift(model_ref: VLAModel, model_new: VLAModel, images, instr, layer: int | None = None) -> float:
    """Similarity of extraction-layer attention maps; 1.0 means perfectly preserved."""
    layer = layer or model_ref.config.backbone.extract_layer
    return attention_similarity(model_ref, model_new, images, instr)[layer]

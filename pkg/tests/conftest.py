import numpy as np
import pytest
import torch

from vlaflow.config import RunConfig
from vlaflow.env.vocab import TOKEN

TINY = {
    "backbone.d_z": 16, "backbone.layers": 2, "backbone.extract_layer": 2, "backbone.n_heads": 2,
    "backbone.patch_size": 4, "backbone.unshuffle": 1, "backbone.d_patch": 8, "backbone.max_len": 16,
    "backbone.vocab": 20, "dit.depth": 2, "dit.width": 16, "dit.heads": 2, "dit.time_dim": 8,
    "chunk.h": 2, "action.dim": 2, "env.image_size": 8, "env.n_views": 1,
}

# Small but structurally faithful: 32x32 images, two views, full token layout.
SMALL = {
    "backbone.d_z": 32, "backbone.layers": 4, "backbone.extract_layer": 3, "backbone.n_heads": 2,
    "backbone.d_patch": 16, "dit.depth": 2, "dit.width": 32, "dit.heads": 2, "dit.time_dim": 16,
    "train.batch_size": 8, "train.warmup": 5,
}


def tiny_config(variant="A", **extra) -> RunConfig:
    return RunConfig().with_overrides({**TINY, "integration.variant": variant, **extra}).validate()


def small_config(variant="A", **extra) -> RunConfig:
    return RunConfig().with_overrides({**SMALL, "integration.variant": variant, **extra}).validate()


def tiny_inputs(seed=0, batch=1):
    """One 8x8 single-view image per example plus a matching instruction."""
    g = np.random.default_rng(seed)
    images = g.uniform(0, 1, (batch, 1, 8, 8, 3))
    instr = np.tile([TOKEN["<img>"], TOKEN["<bos>"], TOKEN["reach"], TOKEN["the"], TOKEN["red"],
                     TOKEN["object"]], (batch, 1))
    states = g.normal(size=(batch, 4))
    actions = g.normal(size=(batch, 2, 2))
    eps = g.normal(size=(batch, 2, 2))
    tau = g.uniform(0.1, 0.9, batch)
    return images, instr, states, actions, eps, tau


def randomize(store, seed=0, std=0.3):
    g = np.random.default_rng(seed)
    with torch.no_grad():
        for _, p in store.items():
            p.copy_(torch.from_numpy(g.normal(0.0, std, tuple(p.shape))).to(p.dtype))


@pytest.fixture
def tiny():
    return tiny_config()


@pytest.fixture(scope="session")
def reach_demos():
    from vlaflow.env import generate_demos

    return generate_demos("reach", 6, 11)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)

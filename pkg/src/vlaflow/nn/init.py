"""Parameter initializers writing straight into a ParamStore."""
from __future__ import annotations

import numpy as np

from .params import ParamStore
from .rng import Rng

INIT_STD = 0.02


def normal(store: ParamStore, name: str, shape, rng: Rng, std: float = INIT_STD, frozen=False):
    return store.add(name, rng.normal(tuple(shape)) * std, frozen=frozen)


def zeros(store: ParamStore, name: str, shape, frozen=False):
    return store.add(name, np.zeros(tuple(shape)), frozen=frozen)


def ones(store: ParamStore, name: str, shape, frozen=False):
    return store.add(name, np.ones(tuple(shape)), frozen=frozen)


def linear(store, prefix, d_in, d_out, rng, std=INIT_STD, zero=False, w="w", b="b"):
    if zero:
        zeros(store, f"{prefix}.{w}", (d_in, d_out))
    else:
        normal(store, f"{prefix}.{w}", (d_in, d_out), rng, std)
    if b is not None:
        zeros(store, f"{prefix}.{b}", (d_out,))


def attention(store, prefix, d, rng, zero_out=False):
    # no key bias: it adds a per-query constant to the logits, which softmax cancels
    linear(store, prefix, d, d, rng, w="wq", b="bq")
    linear(store, prefix, d, d, rng, w="wk", b=None)
    linear(store, prefix, d, d, rng, w="wv", b="bv")
    linear(store, prefix, d, d, rng, zero=zero_out, w="wo", b="bo")


def feed_forward(store, prefix, d, hidden, rng, zero_out=False):
    linear(store, prefix, d, hidden, rng, w="w1", b="b1")
    linear(store, prefix, hidden, d, rng, zero=zero_out, w="w2", b="b2")


def layer_norm_params(store, prefix, d):
    ones(store, f"{prefix}.g", (d,))
    zeros(store, f"{prefix}.b", (d,))
